//! Experiment configuration files.
//!
//! ```toml
//! experiment = "rare_event"   # rare_event | averaging | operator_convergence
//!                             # | resolvent_check | rate_curve
//! seed = 7
//! samples = 100000
//! n_list = [4, 8, 16, 32]
//! dt = 0.01                   # optional; capped by the switching bound
//! horizon = 1.0               # averaging horizon
//! output = "out/run"          # writes out/run.json and out/run.csv
//!
//! [model]
//! manifold = "euclidean:1"    # euclidean:d | sphere2 | torus2
//! family = "twostate{a=1, beta=1}"   # or the pair below
//! drift = "twostate{beta=1}"  # zero | twostate{beta} | relax{k} | states
//! rates = "twostate{a=1}"     # single | twostate{a,b} | twostate_spatial{a0,a1}
//!                             # | cycle3{rate} | matrix
//! drift_vectors = [[1.0], [-1.0]]    # for states and relax offsets
//! rate_matrix = [[-1.0, 1.0], [2.0, -2.0]]
//! x0 = [0.0]                  # default: origin / north pole
//!
//! [event]
//! center = "averaged"         # averaged | start | [coords]
//! radius = 0.68
//! horizon = 1.0
//! sense = "outside"           # outside | inside
//!
//! [resolvent]
//! lambda = 0.5
//! h = "gauss{amp=1, width=1}" # const{c} | gauss{amp,width} | neg_quadratic | cos{k}
//! alpha = 0.5
//! beta = 1.0
//! radius = 1.5
//! points = 31
//!
//! [operator]
//! radius = 0.8
//! points = 5
//!
//! [rate_curve]
//! radii = [0.25, 0.5, 1.0]
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use geoldp::geometry::{Manifold, Point};
use geoldp::switching::Model;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::error::{LabError, Result};
use crate::family::{self, Builtin, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RareEvent,
    Averaging,
    OperatorConvergence,
    ResolventCheck,
    RateCurve,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RareEvent => "rare_event",
            ExperimentKind::Averaging => "averaging",
            ExperimentKind::OperatorConvergence => "operator_convergence",
            ExperimentKind::ResolventCheck => "resolvent_check",
            ExperimentKind::RateCurve => "rate_curve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Outside,
    Inside,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    /// Endpoint of the averaged flow from `x0`.
    Averaged,
    Start,
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventSpec {
    pub center: Center,
    pub radius: f64,
    pub horizon: f64,
    pub sense: Sense,
}

/// Model description in canonical text form; [`ModelSpec::build`] turns it
/// into a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub manifold: String,
    pub drift: String,
    pub rates: String,
    pub drift_vectors: Option<Vec<Vec<f64>>>,
    pub rate_matrix: Option<Vec<Vec<f64>>>,
    pub x0: Vec<f64>,
}

impl ModelSpec {
    pub fn manifold(&self) -> Result<Manifold> {
        self.manifold.parse().map_err(|e: geoldp::Error| LabError::Input(e.to_string()))
    }

    pub fn build(&self) -> Result<(Model, Point)> {
        let m = self.manifold()?;
        let input = |e: family::FamilyError| LabError::Input(e.to_string());
        let drift = family::drift_family(&Family::parse(&self.drift).map_err(input)?, self.drift_vectors.as_deref())
            .map_err(input)?;
        let rates = family::rate_family(&Family::parse(&self.rates).map_err(input)?, self.rate_matrix.as_deref())
            .map_err(input)?;
        let model = family::build_model(m, drift, rates).map_err(|e| LabError::Input(e.to_string()))?;
        let x0 = m.point(&self.x0).map_err(|e| LabError::Input(e.to_string()))?;
        Ok((model, x0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventSpec {
    pub lambda: f64,
    pub h: String,
    #[serde(skip)]
    pub builtin: Builtin,
    pub alpha: f64,
    pub beta: f64,
    pub radius: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSpec {
    pub radius: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub samples: u64,
    pub n_list: Vec<u64>,
    pub dt: Option<f64>,
    pub horizon: f64,
    #[serde(skip)]
    pub output: Option<PathBuf>,
    pub model: ModelSpec,
    pub event: Option<EventSpec>,
    pub resolvent: Option<ResolventSpec>,
    pub operator: Option<OperatorSpec>,
    pub radii: Vec<f64>,
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form (output path excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn event(&self) -> Result<&EventSpec> {
        self.event
            .as_ref()
            .ok_or_else(|| LabError::Input(format!("{} needs an [event] table", self.experiment.name())))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Spanned<String>,
    #[serde(default)]
    seed: u64,
    samples: Option<Spanned<i64>>,
    n_list: Option<Spanned<Vec<i64>>>,
    dt: Option<Spanned<f64>>,
    horizon: Option<Spanned<f64>>,
    output: Option<String>,
    model: Spanned<RawModel>,
    event: Option<Spanned<RawEvent>>,
    resolvent: Option<Spanned<RawResolvent>>,
    operator: Option<RawOperator>,
    rate_curve: Option<RawRateCurve>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    manifold: Spanned<String>,
    family: Option<Spanned<String>>,
    drift: Option<Spanned<String>>,
    rates: Option<Spanned<String>>,
    drift_vectors: Option<Vec<Vec<f64>>>,
    rate_matrix: Option<Vec<Vec<f64>>>,
    x0: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    #[serde(default)]
    center: Option<Spanned<toml::Value>>,
    radius: Spanned<f64>,
    horizon: Spanned<f64>,
    #[serde(default)]
    sense: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResolvent {
    lambda: Spanned<f64>,
    h: Spanned<String>,
    alpha: Option<f64>,
    beta: Option<f64>,
    radius: Option<Spanned<f64>>,
    points: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOperator {
    radius: Option<f64>,
    points: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRateCurve {
    radii: Spanned<Vec<f64>>,
}

/// Source text with its path, for positioned diagnostics.
struct Source<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Source<'_> {
    fn error(&self, offset: usize, message: impl Into<String>) -> LabError {
        let offset = offset.min(self.text.len());
        let before = &self.text[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        LabError::Parse {
            path: self.path.to_path_buf(),
            line,
            column,
            message: message.into(),
        }
    }

    fn at<T>(&self, span: &Spanned<T>, message: impl Into<String>) -> LabError {
        self.error(span.span().start, message)
    }

    /// Error inside a quoted string value, at `offset` bytes into its
    /// contents.
    fn in_string(&self, span: Range<usize>, offset: usize, message: impl Into<String>) -> LabError {
        self.error(span.start + 1 + offset, message)
    }

    fn family(&self, s: &Spanned<String>) -> Result<Family> {
        Family::parse(s.get_ref()).map_err(|e| self.in_string(s.span(), e.offset, e.message))
    }
}

fn positive(src: &Source, v: &Spanned<f64>, what: &str) -> Result<f64> {
    let x = *v.get_ref();
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(src.at(v, format!("{what} must be positive and finite, got {x}")))
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Parse {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        message: format!("cannot read config: {e}"),
    })?;
    parse(path, &text)
}

pub fn parse(path: &Path, text: &str) -> Result<ExperimentConfig> {
    let src = Source { path, text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        src.error(offset, e.message().trim().to_string())
    })?;

    let experiment = match raw.experiment.get_ref().as_str() {
        "rare_event" => ExperimentKind::RareEvent,
        "averaging" => ExperimentKind::Averaging,
        "operator_convergence" => ExperimentKind::OperatorConvergence,
        "resolvent_check" => ExperimentKind::ResolventCheck,
        "rate_curve" => ExperimentKind::RateCurve,
        other => {
            return Err(src.at(
                &raw.experiment,
                format!(
                    "unknown experiment `{other}` (expected rare_event, averaging, operator_convergence, resolvent_check, rate_curve)"
                ),
            ))
        }
    };

    let samples = match &raw.samples {
        Some(s) if *s.get_ref() >= 1 => *s.get_ref() as u64,
        Some(s) => return Err(src.at(s, "samples must be at least 1")),
        None => 1000,
    };

    let n_list = match &raw.n_list {
        Some(list) => {
            let v = list.get_ref();
            if v.is_empty() {
                return Err(src.at(list, "n_list must be nonempty"));
            }
            if v.iter().any(|n| *n < 1) {
                return Err(src.at(list, "n_list entries must be positive"));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(src.at(list, "n_list must be strictly increasing"));
            }
            v.iter().map(|n| *n as u64).collect()
        }
        None => match experiment {
            ExperimentKind::OperatorConvergence => (4..=10).map(|e| 1u64 << e).collect(),
            ExperimentKind::RareEvent | ExperimentKind::Averaging => {
                return Err(src.error(0, format!("{} needs n_list", experiment.name())))
            }
            _ => Vec::new(),
        },
    };

    let dt = raw.dt.as_ref().map(|v| positive(&src, v, "dt")).transpose()?;
    let horizon = raw.horizon.as_ref().map(|v| positive(&src, v, "horizon")).transpose()?.unwrap_or(1.0);

    let model = parse_model(&src, &raw.model)?;
    let manifold = model.manifold()?;

    let event = raw
        .event
        .as_ref()
        .map(|e| parse_event(&src, e.get_ref(), manifold))
        .transpose()?;
    if matches!(experiment, ExperimentKind::RareEvent | ExperimentKind::RateCurve) && event.is_none() {
        return Err(src.error(text.len(), format!("{} needs an [event] table", experiment.name())));
    }

    let resolvent = match &raw.resolvent {
        Some(r) => Some(parse_resolvent(&src, r.get_ref(), manifold)?),
        None if experiment == ExperimentKind::ResolventCheck => {
            return Err(src.error(text.len(), "resolvent_check needs a [resolvent] table"))
        }
        None => None,
    };

    let operator = match (&raw.operator, experiment) {
        (Some(o), _) => Some(OperatorSpec {
            radius: o.radius.unwrap_or(0.8),
            points: o.points.unwrap_or(5),
        }),
        (None, ExperimentKind::OperatorConvergence) => Some(OperatorSpec { radius: 0.8, points: 5 }),
        _ => None,
    };
    if let Some(o) = &operator {
        if !(o.radius > 0.0) || o.points < 2 {
            return Err(src.error(0, "[operator] needs radius > 0 and points >= 2"));
        }
    }

    let radii = match &raw.rate_curve {
        Some(rc) => {
            let v = rc.radii.get_ref();
            if v.is_empty() || v.iter().any(|r| !(*r > 0.0)) {
                return Err(src.at(&rc.radii, "radii must be a nonempty list of positive numbers"));
            }
            v.clone()
        }
        None if experiment == ExperimentKind::RateCurve => {
            return Err(src.error(text.len(), "rate_curve needs a [rate_curve] table with radii"))
        }
        None => Vec::new(),
    };

    let cfg = ExperimentConfig {
        experiment,
        seed: raw.seed,
        samples,
        n_list,
        dt,
        horizon,
        output: raw.output.map(PathBuf::from),
        model,
        event,
        resolvent,
        operator,
        radii,
    };
    // surface family/state-count mismatches as config errors
    cfg.model
        .build()
        .map_err(|e| src.at(&raw.model, e.to_string()))?;
    Ok(cfg)
}

fn parse_model(src: &Source, raw: &Spanned<RawModel>) -> Result<ModelSpec> {
    let m = raw.get_ref();
    let manifold: Manifold = m
        .manifold
        .get_ref()
        .parse()
        .map_err(|e: geoldp::Error| src.at(&m.manifold, e.to_string()))?;

    let (drift, rates) = match (&m.family, &m.drift, &m.rates) {
        (Some(f), None, None) => {
            let fam = src.family(f)?;
            family::model_family(&fam).map_err(|e| src.in_string(f.span(), e.offset, e.message))?;
            match fam.name.as_str() {
                "brownian" => ("zero".to_string(), "single".to_string()),
                _ => (
                    format!("twostate{{beta={}}}", fam.params["beta"]),
                    format!("twostate{{a={}}}", fam.params["a"]),
                ),
            }
        }
        (Some(f), _, _) => return Err(src.at(f, "give either `family` or `drift`/`rates`, not both")),
        (None, drift, rates) => {
            let d = match drift {
                Some(d) => {
                    let fam = src.family(d)?;
                    family::drift_family(&fam, m.drift_vectors.as_deref())
                        .map_err(|e| src.in_string(d.span(), e.offset, e.message))?;
                    fam.to_string()
                }
                None => "zero".to_string(),
            };
            let r = match rates {
                Some(r) => {
                    let fam = src.family(r)?;
                    family::rate_family(&fam, m.rate_matrix.as_deref())
                        .map_err(|e| src.in_string(r.span(), e.offset, e.message))?;
                    fam.to_string()
                }
                None => "single".to_string(),
            };
            (d, r)
        }
    };

    let x0 = match &m.x0 {
        Some(x) => {
            manifold.point(x.get_ref()).map_err(|e| src.at(x, e.to_string()))?;
            x.get_ref().clone()
        }
        None => manifold.origin().coords().to_vec(),
    };
    Ok(ModelSpec {
        manifold: manifold.id(),
        drift,
        rates,
        drift_vectors: m.drift_vectors.clone(),
        rate_matrix: m.rate_matrix.clone(),
        x0,
    })
}

fn parse_event(src: &Source, e: &RawEvent, manifold: Manifold) -> Result<EventSpec> {
    let center = match &e.center {
        None => Center::Averaged,
        Some(c) => match c.get_ref() {
            toml::Value::String(s) if s == "averaged" => Center::Averaged,
            toml::Value::String(s) if s == "start" => Center::Start,
            toml::Value::Array(items) => {
                let coords: Option<Vec<f64>> = items
                    .iter()
                    .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                    .collect();
                let coords = coords.ok_or_else(|| src.at(c, "center coordinates must be numbers"))?;
                manifold.point(&coords).map_err(|err| src.at(c, err.to_string()))?;
                Center::Point(coords)
            }
            _ => return Err(src.at(c, "center must be \"averaged\", \"start\" or a coordinate array")),
        },
    };
    let sense = match &e.sense {
        None => Sense::Outside,
        Some(s) => match s.get_ref().as_str() {
            "outside" => Sense::Outside,
            "inside" => Sense::Inside,
            other => return Err(src.at(s, format!("unknown sense `{other}` (expected outside, inside)"))),
        },
    };
    Ok(EventSpec {
        center,
        radius: positive(src, &e.radius, "radius")?,
        horizon: positive(src, &e.horizon, "horizon")?,
        sense,
    })
}

fn parse_resolvent(src: &Source, r: &RawResolvent, manifold: Manifold) -> Result<ResolventSpec> {
    let fam = src.family(&r.h)?;
    let builtin = family::builtin_field(&fam).map_err(|e| src.in_string(r.h.span(), e.offset, e.message))?;
    let points = match &r.points {
        Some(p) if *p.get_ref() >= 3 && *p.get_ref() % 2 == 1 => *p.get_ref() as usize,
        Some(p) => return Err(src.at(p, "points must be odd and at least 3")),
        None => {
            if manifold.dim() == 1 {
                31
            } else {
                9
            }
        }
    };
    let alpha = r.alpha.unwrap_or(0.5);
    let beta = r.beta.unwrap_or(1.0);
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(src.at(&r.lambda, "alpha and beta must be positive"));
    }
    Ok(ResolventSpec {
        lambda: positive(src, &r.lambda, "lambda")?,
        h: fam.to_string(),
        builtin,
        alpha,
        beta,
        radius: r.radius.as_ref().map(|v| positive(src, v, "radius")).transpose()?.unwrap_or(1.5),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(s: &str) -> Result<ExperimentConfig> {
        parse(Path::new("t.toml"), s)
    }

    const BASE: &str = r#"
experiment = "rare_event"
seed = 3
samples = 100
n_list = [4, 8]

[model]
manifold = "euclidean:1"
family = "twostate{a=1, beta=2}"

[event]
radius = 0.5
horizon = 1.0
"#;

    #[test]
    fn parses_a_complete_config() {
        let cfg = parse_str(BASE).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::RareEvent);
        assert_eq!(cfg.n_list, vec![4, 8]);
        assert_eq!(cfg.model.drift, "twostate{beta=2}");
        assert_eq!(cfg.model.rates, "twostate{a=1}");
        let ev = cfg.event.as_ref().unwrap();
        assert_eq!(ev.center, Center::Averaged);
        assert_eq!(ev.sense, Sense::Outside);
        let (model, x0) = cfg.model.build().unwrap();
        assert_eq!(model.n_states(), 2);
        assert_eq!(x0.coords(), &[0.0]);
    }

    #[test]
    fn hash_ignores_output_path_only() {
        let a = parse_str(BASE).unwrap();
        let b = parse_str(&BASE.replace("seed = 3", "seed = 3\noutput = \"x\"")).unwrap();
        let c = parse_str(&BASE.replace("seed = 3", "seed = 4")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    fn position(r: Result<ExperimentConfig>) -> (usize, usize) {
        match r {
            Err(LabError::Parse { line, column, .. }) => (line, column),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_and_column() {
        // syntax
        assert_eq!(position(parse_str("experiment = \n")).0, 1);
        // bad family parameter, located inside the string
        let bad = BASE.replace("beta=2", "beta=x");
        assert_eq!(position(parse_str(&bad)), (9, 30));
        // non-increasing n_list
        let bad = BASE.replace("[4, 8]", "[8, 4]");
        assert_eq!(position(parse_str(&bad)), (5, 10));
        // unknown key
        let bad = BASE.replace("seed = 3", "seed = 3\ncolour = 1");
        assert_eq!(position(parse_str(&bad)).0, 4);
        // negative radius
        let bad = BASE.replace("radius = 0.5", "radius = -0.5");
        assert_eq!(position(parse_str(&bad)), (12, 10));
        // unknown manifold
        let bad = BASE.replace("euclidean:1", "klein");
        assert_eq!(position(parse_str(&bad)), (8, 12));
    }

    #[test]
    fn missing_file_is_a_parse_error() {
        let e = load(Path::new("/nonexistent/ldp.toml")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
