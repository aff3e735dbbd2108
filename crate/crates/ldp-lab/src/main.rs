use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoldp::dynamics::{simulate, SimConfig};
use geoldp::geometry::Manifold;
use geoldp::hamiltonian::{grad_p_hamiltonian, hamiltonian};
use geoldp::switching::SwitchState;
use geoldp::variational::{action, resolvent, Curve, ResolventConfig};
use ldp_lab::config::ModelSpec;
use ldp_lab::error::{LabError, Result, Stage};
use ldp_lab::family::{self, Family};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "ldp-lab", version, about = "Large-deviation experiments for slow-fast switching diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Hamiltonian queries.
    Hamiltonian {
        #[command(subcommand)]
        action: HamiltonianCmd,
    },
    /// Action of a JSONL curve.
    Rate {
        #[arg(long)]
        curve: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Resolvent value at a point.
    Resolvent {
        #[arg(long)]
        lambda: f64,
        /// Builtin test function: const{c}, gauss{amp,width}, neg_quadratic, cos{k}.
        #[arg(long)]
        h: String,
        /// Evaluation point (default: x0).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Option<Vec<f64>>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Simulate one trajectory.
    Simulate {
        #[arg(long)]
        n: u64,
        #[arg(long = "T")]
        horizon: f64,
        /// Requested step (default: 0.01 capped by the switching bound).
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Subcommand)]
enum HamiltonianCmd {
    /// H(x, p) with its eigenvectors and momentum gradient.
    Eval {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        p: Vec<f64>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Binary,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    /// euclidean:d, sphere2 or torus2.
    #[arg(long, default_value = "euclidean:1")]
    manifold: String,
    /// Shorthand for drift and rates: brownian or twostate{a,beta}.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, default_value = "zero")]
    drift: String,
    #[arg(long, default_value = "single")]
    rates: String,
    /// Initial point (default: origin, north pole on the sphere).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        let input = |e: family::FamilyError| LabError::Input(e.to_string());
        let manifold: Manifold = self.manifold.parse().map_err(|e: geoldp::Error| LabError::Input(e.to_string()))?;
        let (drift, rates) = match &self.family {
            Some(f) => {
                let fam = Family::parse(f).map_err(input)?;
                family::model_family(&fam).map_err(input)?;
                match fam.name.as_str() {
                    "brownian" => ("zero".to_string(), "single".to_string()),
                    _ => (
                        format!("twostate{{beta={}}}", fam.params["beta"]),
                        format!("twostate{{a={}}}", fam.params["a"]),
                    ),
                }
            }
            None => (self.drift.clone(), self.rates.clone()),
        };
        Ok(ModelSpec {
            manifold: manifold.id(),
            drift,
            rates,
            drift_vectors: None,
            rate_matrix: None,
            x0: self.x0.clone().unwrap_or_else(|| manifold.origin().coords().to_vec()),
        })
    }
}

/// `{inputs_hash, value, tolerance, diagnostics}`.
fn record(inputs: &serde_json::Value, value: f64, tolerance: f64, diagnostics: serde_json::Value) -> serde_json::Value {
    let hash = hex::encode(Sha256::digest(serde_json::to_vec(inputs).expect("inputs serialize")));
    json!({
        "inputs_hash": hash,
        "value": value,
        "tolerance": tolerance,
        "diagnostics": diagnostics,
    })
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, v).expect("json serializes");
    writeln!(out).map_err(|e| LabError::io("<stdout>", e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let start = Instant::now();
            let (json_path, csv_path) = ldp_lab::run(&config)?;
            eprintln!(
                "wrote {} and {} in {:.2} s",
                json_path.display(),
                csv_path.display(),
                start.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Hamiltonian {
            action: HamiltonianCmd::Eval { x, p, model },
        } => {
            let spec = model.spec()?;
            let (model_obj, _) = spec.build()?;
            let m = model_obj.manifold;
            let xp = m.point(&x).map_err(|e| LabError::Input(e.to_string()))?;
            if p.len() != m.dim() {
                return Err(LabError::Input(format!("--p needs {} components", m.dim())));
            }
            let cov = xp.covector(&p);
            let eig = hamiltonian(&model_obj, &xp, &cov).stage("hamiltonian")?;
            let grad = grad_p_hamiltonian(&model_obj, &xp, &cov).stage("hamiltonian")?;
            let inputs = json!({"model": spec, "x": x, "p": p});
            print_json(&record(
                &inputs,
                eig.eigenvalue,
                1e-12 * (1.0 + eig.eigenvalue.abs()),
                json!({
                    "right_vector": eig.right_vector,
                    "left_vector": eig.left_vector,
                    "grad_p": grad.components(),
                    "iterations": eig.iterations,
                }),
            ))
        }
        Command::Rate { curve, model } => {
            let spec = model.spec()?;
            let (model_obj, _) = spec.build()?;
            let file = File::open(&curve).map_err(|e| LabError::io(&curve, e))?;
            let c = Curve::read_jsonl(BufReader::new(file)).map_err(|e| LabError::Input(e.to_string()))?;
            if c.start().manifold() != model_obj.manifold {
                return Err(LabError::Input("curve and model live on different manifolds".into()));
            }
            let a = action(&c, &|_: &geoldp::geometry::Point| 0.0, &model_obj).stage("action")?;
            let inputs = json!({"model": spec, "curve": c.points.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>(), "times": c.times});
            print_json(&record(
                &inputs,
                a.total,
                1e-8 * (1.0 + a.total.abs()),
                json!({"per_segment": a.per_segment, "segments": c.len() - 1, "horizon": c.horizon()}),
            ))
        }
        Command::Resolvent { lambda, h, x, model } => {
            let spec = model.spec()?;
            let (model_obj, x0) = spec.build()?;
            let fam = Family::parse(&h).map_err(|e| LabError::Input(e.to_string()))?;
            let builtin = family::builtin_field(&fam).map_err(|e| LabError::Input(e.to_string()))?;
            let at = match &x {
                Some(c) => model_obj.manifold.point(c).map_err(|e| LabError::Input(e.to_string()))?,
                None => x0,
            };
            let field = builtin.field(x0);
            let cfg = ResolventConfig::new(lambda);
            cfg.validate().map_err(|e| LabError::Input(e.to_string()))?;
            let r = resolvent(&cfg, field.as_ref(), &at, &model_obj).stage("resolvent")?;
            let spread = r.restart_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - r.restart_values.iter().copied().fold(f64::INFINITY, f64::min);
            let inputs = json!({"model": spec, "lambda": lambda, "h": fam.to_string(), "x": at.coords()});
            print_json(&record(
                &inputs,
                r.value,
                spread,
                json!({
                    "restart_values": r.restart_values,
                    "iterations": r.iterations,
                    "evaluations": r.evaluations,
                    "grad_norm": r.grad_norm,
                }),
            ))
        }
        Command::Simulate {
            n,
            horizon,
            dt,
            seed,
            format,
            out,
            model,
        } => {
            let spec = model.spec()?;
            let (model_obj, x0) = spec.build()?;
            let cfg = SimConfig {
                n,
                horizon,
                dt: ldp_lab::experiments::step_for(n, dt, &model_obj),
                seed,
                stream: 0,
                model: model_obj,
                x0,
                initial_state: SwitchState::from_index(0),
            };
            cfg.validate().map_err(|e| LabError::Input(e.to_string()))?;
            let path = simulate(&cfg).stage("simulate")?;
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(File::create(p).map_err(|e| LabError::io(p, e))?),
                None => Box::new(io::stdout().lock()),
            };
            let mut w = BufWriter::new(sink);
            let target = out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
            match format {
                Format::Jsonl => path.write_jsonl(&mut w),
                Format::Binary => path.write_binary(&mut w),
            }
            .and_then(|_| w.flush())
            .map_err(|e| LabError::io(&target, e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
