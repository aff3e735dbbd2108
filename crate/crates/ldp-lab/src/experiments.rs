use std::f64::consts::PI;

use geoldp::dynamics::{limit_generator, prelimit_generator, simulate_averaged, simulate_endpoint, simulate_with, SimConfig};
use geoldp::geometry::{differential, distance, exp_map, Chart, Manifold, Point, ScalarField};
use geoldp::hamiltonian::hamiltonian;
use geoldp::switching::{Model, SwitchState};
use geoldp::variational::{
    action, dirac_initial, optimal_curve, resolvent, resolvent_grid, viscosity_residual, Curve, GridFunction,
    Interpolation, ResolventConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Center, EventSpec, ExperimentConfig, ExperimentKind, Sense};
use crate::error::{LabError, Result, Stage};
use crate::stats::{extract_rate, least_squares, quantile, Estimate, RateFit};

/// Diffusion step used when the configuration does not set one.
pub const DEFAULT_DT: f64 = 0.01;

/// Environment variable capping the worker thread count.
pub const THREADS_VAR: &str = "GEOLDP_THREADS";

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| LabError::Input(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| LabError::Input(format!("cannot start worker threads: {e}")))
}

/// Deterministic work counters; wall-clock time is reported on stderr only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub trajectories: u64,
    pub diffusion_steps: u64,
}

/// An endpoint event `d(X(T), center) >= radius` (outside) or `<= radius`
/// (inside).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub center: Point,
    pub radius: f64,
    pub horizon: f64,
    pub sense: Sense,
}

impl Event {
    pub fn contains(&self, y: &Point) -> bool {
        let d = distance(&self.center, y);
        match self.sense {
            Sense::Outside => d >= self.radius,
            Sense::Inside => d <= self.radius,
        }
    }

    /// Signed distance into the event; nonnegative exactly on the event.
    fn margin(&self, y: &Point) -> f64 {
        let d = distance(&self.center, y);
        match self.sense {
            Sense::Outside => d - self.radius,
            Sense::Inside => self.radius - d,
        }
    }

    pub fn resolve(spec: &EventSpec, x0: &Point, model: &Model, dt: f64) -> Result<Event> {
        let center = match &spec.center {
            Center::Start => *x0,
            Center::Point(c) => model.manifold.point(c).map_err(|e| LabError::Input(e.to_string()))?,
            Center::Averaged => *simulate_averaged(x0, spec.horizon, dt, model)
                .stage("averaged_flow")?
                .endpoint(),
        };
        Ok(Event {
            center,
            radius: spec.radius,
            horizon: spec.horizon,
            sense: spec.sense,
        })
    }
}

/// Step for scale `n`: the requested step capped by the switching bound.
pub fn step_for(n: u64, requested: Option<f64>, model: &Model) -> f64 {
    requested.unwrap_or(DEFAULT_DT).min(SimConfig::max_dt(n, model))
}

fn sim_config(model: &Model, x0: Point, n: u64, horizon: f64, dt: f64, seed: u64, stream: u64) -> SimConfig {
    SimConfig {
        n,
        horizon,
        dt,
        seed,
        stream,
        model: model.clone(),
        x0,
        initial_state: SwitchState::from_index(0),
    }
}

/// Stream of sample `i` at the `k`-th scale.
pub fn stream(k: usize, i: u64) -> u64 {
    ((k as u64) << 40) | i
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareEventResult {
    pub event_center: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub theoretical_rate: f64,
    /// Absent when fewer than three scales have hits.
    pub fit: Option<RateFit>,
    pub runtime: RunStats,
}

/// Hit frequencies of the endpoint event for each `n`, with Wilson
/// intervals, the fitted rate and the action-based rate.
pub fn estimate_rare_event(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<RareEventResult> {
    let (model, x0) = cfg.model.build()?;
    let spec = cfg.event()?;
    let event = Event::resolve(spec, &x0, &model, step_for(1, cfg.dt, &model).min(DEFAULT_DT))?;
    let mut estimates = Vec::with_capacity(cfg.n_list.len());
    let mut runtime = RunStats::default();
    for (k, &n) in cfg.n_list.iter().enumerate() {
        let dt = step_for(n, cfg.dt, &model);
        let base = sim_config(&model, x0, n, spec.horizon, dt, cfg.seed, 0);
        base.validate().stage("simulate")?;
        let hits = pool.install(|| {
            (0..cfg.samples)
                .into_par_iter()
                .map(|i| {
                    let mut c = base.clone();
                    c.stream = stream(k, i);
                    simulate_endpoint(&c).map(|s| u64::from(event.contains(&s.position)))
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))
        });
        let hits = hits.stage("simulate")?;
        runtime.trajectories += cfg.samples;
        runtime.diffusion_steps += cfg.samples * base.steps() as u64;
        estimates.push(Estimate::new(n, hits, cfg.samples));
    }
    let theory = theoretical_rate(&event, &x0, &model)?;
    let fit = match extract_rate(&estimates, theory) {
        Ok(f) => Some(f),
        Err(LabError::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RareEventResult {
        event_center: event.center.coords().to_vec(),
        estimates,
        theoretical_rate: theory,
        fit,
        runtime,
    })
}

/// Whether the model is a single state with identically zero drift, probed
/// on points around `x0`.
fn is_driftless_single(model: &Model, x0: &Point) -> bool {
    if model.n_states() != 1 {
        return false;
    }
    let d = model.manifold.dim();
    let mut probes = vec![*x0, model.manifold.origin()];
    for k in 0..d {
        for r in [-1.0, -0.3, 0.3, 1.0] {
            let mut c = [0.0; 3];
            c[k] = r;
            c[(k + 1) % d] += 0.5 * r;
            if let Ok(y) = exp_map(x0, &x0.tangent(&c[..d])) {
                probes.push(y);
            }
        }
    }
    probes
        .iter()
        .all(|y| model.drift_at(y, SwitchState::from_index(0)).norm() == 0.0)
}

fn diameter(m: Manifold) -> f64 {
    match m {
        Manifold::Euclidean(_) => f64::INFINITY,
        Manifold::Sphere2 => PI,
        Manifold::Torus2 => PI * 2f64.sqrt(),
    }
}

/// RK4 steps of each shooting trajectory.
const SHOOT_STEPS: usize = 100;

/// Trajectory of the optimal-curve flow for `f(y) = s <u, z(y)>` with `z`
/// the normal coordinates at `x0`.
fn shoot(x0: &Point, model: &Model, horizon: f64, dir: &[f64], s: f64) -> Option<Curve> {
    let chart = Chart::Normal { center: *x0 };
    let u: Vec<f64> = dir.iter().map(|c| c * s).collect();
    let f = move |y: &Point| match chart.to_coords(y) {
        Ok(z) => u.iter().zip(&z).map(|(a, b)| a * b).sum(),
        Err(_) => f64::NAN,
    };
    optimal_curve(x0, &f, horizon, SHOOT_STEPS, model).ok()
}

/// Cheapest action along `dir` of a shooting curve whose endpoint enters the
/// event; `None` when no tested strength reaches it.
fn cost_along(dir: &[f64], event: &Event, x0: &Point, model: &Model) -> Result<Option<f64>> {
    let margin = |s: f64| shoot(x0, model, event.horizon, dir, s).map(|c| (event.margin(c.endpoint()), c));
    let mut lo = 0.0;
    let mut hi = 0.125;
    let mut found = None;
    for _ in 0..14 {
        match margin(hi) {
            Some((g, c)) if g >= 0.0 => {
                found = Some(c);
                break;
            }
            Some(_) => {
                lo = hi;
                hi *= 2.0;
            }
            None => return Ok(None),
        }
    }
    let mut curve = match found {
        Some(c) => c,
        None => return Ok(None),
    };
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        match margin(mid) {
            Some((g, c)) if g >= 0.0 => {
                hi = mid;
                curve = c;
            }
            _ => lo = mid,
        }
    }
    let a = action(&curve, &dirac_initial(*x0), model).stage("theoretical_rate")?;
    Ok(Some(a.total))
}

fn unit_direction(angles: &[f64], d: usize) -> Vec<f64> {
    match d {
        2 => vec![angles[0].cos(), angles[0].sin()],
        3 => {
            let (t, p) = (angles[0], angles[1]);
            vec![t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
        }
        _ => unreachable!("directions are parameterized for d = 2, 3"),
    }
}

/// `inf { I(gamma) : gamma(0) = x0, gamma(T) in event }`.
///
/// Zero when the averaged endpoint lies in the event; the squared-distance
/// closed form for a single driftless state; otherwise the cheapest
/// optimal-curve shooting trajectory over a multi-start set of directions,
/// each refined by bisection on the shooting strength and, in two or three
/// dimensions, by a compass search over directions.
pub fn theoretical_rate(event: &Event, x0: &Point, model: &Model) -> Result<f64> {
    let m = model.manifold;
    if is_driftless_single(model, x0) {
        let d0 = distance(x0, &event.center);
        let reach = match event.sense {
            Sense::Outside => {
                if event.radius > diameter(m) {
                    return Ok(f64::INFINITY);
                }
                (event.radius - d0).max(0.0)
            }
            Sense::Inside => (d0 - event.radius).max(0.0),
        };
        return Ok(reach * reach / (2.0 * event.horizon));
    }

    let avg = simulate_averaged(x0, event.horizon, event.horizon / 200.0, model).stage("averaged_flow")?;
    if event.contains(avg.endpoint()) {
        return Ok(0.0);
    }

    let d = m.dim();
    let cost = |angles: &[f64]| -> Result<f64> {
        let dir = if d == 1 { vec![angles[0]] } else { unit_direction(angles, d) };
        Ok(cost_along(&dir, event, x0, model)?.unwrap_or(f64::INFINITY))
    };
    let best = match d {
        1 => cost(&[1.0])?.min(cost(&[-1.0])?),
        _ => {
            let starts: Vec<Vec<f64>> = if d == 2 {
                (0..24).map(|k| vec![2.0 * PI * k as f64 / 24.0]).collect()
            } else {
                // Fibonacci lattice on the unit sphere
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..48)
                    .map(|k| {
                        let z = 1.0 - (k as f64 + 0.5) / 24.0;
                        vec![z.acos(), golden * k as f64]
                    })
                    .collect()
            };
            let mut best = (f64::INFINITY, starts[0].clone());
            for s in &starts {
                let c = cost(s)?;
                if c < best.0 {
                    best = (c, s.clone());
                }
            }
            let mut step = if d == 2 { PI / 24.0 } else { PI / 12.0 };
            while best.0.is_finite() && step > 1e-6 {
                let mut improved = false;
                for k in 0..d - 1 {
                    for sign in [-1.0, 1.0] {
                        let mut a = best.1.clone();
                        a[k] += sign * step;
                        let c = cost(&a)?;
                        if c < best.0 {
                            best = (c, a);
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            best.0
        }
    };
    if best.is_finite() {
        Ok(best)
    } else {
        Err(LabError::Numerical {
            stage: "theoretical_rate",
            source: geoldp::Error::NumericalFailure {
                stage: "shooting",
                detail: "no shooting direction reached the event".into(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingRow {
    pub n: u64,
    pub dt: f64,
    pub median: f64,
    pub p90: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingResult {
    pub horizon: f64,
    pub rows: Vec<AveragingRow>,
    pub runtime: RunStats,
}

/// Distribution of `sup_t d(X_n(t), Xbar(t))` over sample paths for each `n`.
pub fn averaging_study(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<AveragingResult> {
    let (model, x0) = cfg.model.build()?;
    let horizon = cfg.horizon;
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    let mut runtime = RunStats::default();
    for (k, &n) in cfg.n_list.iter().enumerate() {
        let dt = step_for(n, cfg.dt, &model);
        let base = sim_config(&model, x0, n, horizon, dt, cfg.seed, 0);
        base.validate().stage("simulate")?;
        let averaged = simulate_averaged(&x0, horizon, dt, &model).stage("averaged_flow")?;
        let deviations: geoldp::Result<Vec<f64>> = pool.install(|| {
            (0..cfg.samples)
                .into_par_iter()
                .map(|i| {
                    let mut c = base.clone();
                    c.stream = stream(k, i);
                    let mut idx = 0;
                    let mut sup: f64 = 0.0;
                    simulate_with(&c, |s| {
                        sup = sup.max(distance(&s.position, &averaged.points[idx]));
                        idx += 1;
                    })?;
                    Ok(sup)
                })
                .collect()
        });
        let mut dev = deviations.stage("simulate")?;
        dev.sort_by(f64::total_cmp);
        runtime.trajectories += cfg.samples;
        runtime.diffusion_steps += cfg.samples * base.steps() as u64;
        rows.push(AveragingRow {
            n,
            dt,
            median: quantile(&dev, 0.5),
            p90: quantile(&dev, 0.9),
            mean: dev.iter().sum::<f64>() / dev.len() as f64,
        });
    }
    Ok(AveragingResult { horizon, rows, runtime })
}

/// Smooth test function and per-state corrector drawn from the seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomTest {
    pub c: [f64; 2],
    pub k: f64,
    pub offsets: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl RandomTest {
    /// On the torus the frequency is rounded to an integer so that both
    /// functions are periodic in the angle coordinates.
    pub fn draw(seed: u64, n_states: usize, manifold: Manifold) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let c = [u(-1.0, 1.0), u(-1.0, 1.0)];
        let mut k = u(0.3, 1.5);
        if manifold == Manifold::Torus2 {
            k = k.round().max(1.0);
        }
        let offsets = (0..n_states).map(|_| u(-1.0, 1.0)).collect();
        let amplitudes = (0..n_states).map(|_| u(-1.0, 1.0)).collect();
        RandomTest { c, k, offsets, amplitudes }
    }

    /// `f(y) = c1 sin(k y_1) + c2 cos(y_last)` in stored coordinates.
    pub fn f(&self) -> impl Fn(&Point) -> f64 + Sync + Clone {
        let (c, k) = (self.c, self.k);
        move |y: &Point| {
            let z = y.coords();
            c[0] * (k * z[0]).sin() + c[1] * z[z.len() - 1].cos()
        }
    }

    /// `phi(y, i) = a_i + b_i sin(k sum y)`.
    pub fn phi(&self) -> impl Fn(&Point, SwitchState) -> f64 + Sync {
        let (a, b, k) = (self.offsets.clone(), self.amplitudes.clone(), self.k);
        move |y: &Point, i: SwitchState| a[i.index()] + b[i.index()] * (k * y.coords().iter().sum::<f64>()).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorRow {
    pub n: u64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorResult {
    pub test: RandomTest,
    pub grid_points: usize,
    pub rows: Vec<OperatorRow>,
    /// Log-log slope of the gap against `n`.
    pub slope: f64,
    pub slope_std_error: f64,
    /// `max_x (max_i - min_i) H_{f,phi}(x, i)` with `phi` the log Perron
    /// eigenvector.
    pub pf_spread: f64,
}

fn operator_grid(x0: &Point, radius: f64, points: usize) -> Result<Vec<Point>> {
    let g = GridFunction::normal_box(x0, radius, points).stage("grid")?;
    (0..g.len()).map(|i| g.point(i).stage("grid")).collect()
}

/// Sup-norm gap between the prelimit generator on `f + phi / n` and the
/// limit operator on a grid around `x0`, for each `n`.
pub fn operator_convergence(cfg: &ExperimentConfig) -> Result<OperatorResult> {
    let (model, x0) = cfg.model.build()?;
    let spec = cfg
        .operator
        .as_ref()
        .ok_or_else(|| LabError::Input("operator_convergence needs an [operator] table".into()))?;
    let grid = operator_grid(&x0, spec.radius, spec.points)?;
    let test = RandomTest::draw(cfg.seed, model.n_states(), model.manifold);
    let f = test.f();
    let phi = test.phi();
    let states: Vec<SwitchState> = (0..model.n_states()).map(SwitchState::from_index).collect();
    let rows: Vec<OperatorRow> = cfg
        .n_list
        .iter()
        .map(|&n| {
            let gap = grid
                .iter()
                .flat_map(|x| states.iter().map(move |&i| (x, i)))
                .map(|(x, i)| {
                    (prelimit_generator(&f, &phi, n as f64, x, i, &model) - limit_generator(&f, &phi, x, i, &model)).abs()
                })
                .fold(0.0, f64::max);
            OperatorRow { n, gap }
        })
        .collect();
    let (slope, slope_std_error) = if rows.len() >= 2 && rows.iter().all(|r| r.gap > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.gap.ln()).collect();
        let (s, _, se) = least_squares(&xs, &ys)?;
        (s, se)
    } else {
        (f64::NAN, f64::NAN)
    };
    let pf_spread = pf_spread(&f, &model, &grid)?;
    Ok(OperatorResult {
        test,
        grid_points: grid.len(),
        rows,
        slope,
        slope_std_error,
        pf_spread,
    })
}

/// Spread over states of `H_{f,phi}` for the log Perron eigenvector
/// corrector, maximized over `grid`.
pub fn pf_spread(f: &dyn ScalarField, model: &Model, grid: &[Point]) -> Result<f64> {
    for x in grid {
        hamiltonian(model, x, &differential(f, x)).stage("hamiltonian")?;
    }
    let phi = |y: &Point, i: SwitchState| match hamiltonian(model, y, &differential(f, y)) {
        Ok(r) => r.right_vector[i.index()].ln(),
        Err(_) => f64::NAN,
    };
    let mut spread: f64 = 0.0;
    for x in grid {
        let vals: Vec<f64> = (0..model.n_states())
            .map(|i| limit_generator(f, &phi, x, SwitchState::from_index(i), model))
            .collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        spread = spread.max(hi - lo);
    }
    Ok(spread)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoPoint {
    pub coords: Vec<f64>,
    /// `R(beta) h` at the point.
    pub direct: f64,
    /// `R(alpha)(R(beta) h - alpha (R(beta) h - h) / beta)` at the point.
    pub composed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventCheckResult {
    pub lambda: f64,
    pub h: String,
    pub value_at_x0: f64,
    /// `|R(lambda) 1 - 1|` at `x0`.
    pub constant_error: f64,
    pub h_sup: f64,
    pub residual_max_abs: f64,
    /// Residual relative to the grid sup norm of `h`.
    pub residual_relative: f64,
    pub residual_argmax: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub pseudo_points: Vec<PseudoPoint>,
    pub pseudo_max_relative: f64,
    #[serde(skip)]
    pub grid: GridFunction,
}

/// Constant-preservation, viscosity-residual and pseudo-resolvent checks of
/// the resolvent on a grid around `x0`.
pub fn resolvent_check(cfg: &ExperimentConfig) -> Result<ResolventCheckResult> {
    let (model, x0) = cfg.model.build()?;
    let spec = cfg
        .resolvent
        .as_ref()
        .ok_or_else(|| LabError::Input("resolvent_check needs a [resolvent] table".into()))?;
    let h = spec.builtin.field(x0);
    let rc = ResolventConfig::new(spec.lambda);

    let constant = resolvent(&rc, &|_: &Point| 1.0, &x0, &model).stage("resolvent")?;
    let template = GridFunction::normal_box(&x0, spec.radius, spec.points).stage("grid")?;
    let f = resolvent_grid(&rc, h.as_ref(), &template, &model).stage("resolvent_grid")?;
    let residual = viscosity_residual(&f, spec.lambda, h.as_ref(), &model).stage("viscosity_residual")?;
    let mut h_sup: f64 = 0.0;
    for i in 0..f.len() {
        h_sup = h_sup.max(h.value(&f.point(i).stage("grid")?).abs());
    }

    // pseudo-resolvent identity on a cubic grid twice as wide
    let mut outer_template = GridFunction::normal_box(&x0, 2.0 * spec.radius, 2 * spec.points - 1).stage("grid")?;
    outer_template.interpolation = Interpolation::Cubic;
    let outer = resolvent_grid(&ResolventConfig::new(spec.beta), h.as_ref(), &outer_template, &model)
        .stage("resolvent_grid")?;
    let mut inner = outer.clone();
    for i in 0..inner.len() {
        let y = inner.point(i).stage("grid")?;
        inner.values[i] = outer.values[i] - spec.alpha * (outer.values[i] - h.value(&y)) / spec.beta;
    }
    let ra = ResolventConfig::new(spec.alpha);
    let mut pseudo_points = Vec::new();
    let mut pseudo_max_relative: f64 = 0.0;
    let d = model.manifold.dim();
    let chart = Chart::Normal { center: x0 };
    for s in [-0.5, 0.0, 0.25, 0.5] {
        let z = vec![s * spec.radius; d];
        let y = chart.from_coords(model.manifold, &z).stage("grid")?;
        let direct = outer.value(&y);
        let composed = resolvent(&ra, &inner, &y, &model).stage("resolvent")?.value;
        let scale = direct.abs().max(h_sup * 1e-3).max(f64::MIN_POSITIVE);
        pseudo_max_relative = pseudo_max_relative.max((direct - composed).abs() / scale);
        pseudo_points.push(PseudoPoint { coords: z, direct, composed });
    }

    Ok(ResolventCheckResult {
        lambda: spec.lambda,
        h: spec.h.clone(),
        value_at_x0: f.values[f.center_index()],
        constant_error: (constant.value - 1.0).abs(),
        h_sup,
        residual_max_abs: residual.max_abs,
        residual_relative: residual.max_abs / h_sup.max(f64::MIN_POSITIVE),
        residual_argmax: residual.argmax.coords().to_vec(),
        alpha: spec.alpha,
        beta: spec.beta,
        pseudo_points,
        pseudo_max_relative,
        grid: f,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurveRow {
    pub radius: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurveResult {
    pub event_center: Vec<f64>,
    pub horizon: f64,
    pub rows: Vec<RateCurveRow>,
}

/// Action-based rate of the endpoint event as a function of its radius.
pub fn rate_curve(cfg: &ExperimentConfig) -> Result<RateCurveResult> {
    let (model, x0) = cfg.model.build()?;
    let spec = cfg.event()?;
    let event = Event::resolve(spec, &x0, &model, DEFAULT_DT)?;
    let rows = cfg
        .radii
        .iter()
        .map(|&radius| {
            let e = Event { radius, ..event };
            Ok(RateCurveRow {
                radius,
                rate: theoretical_rate(&e, &x0, &model)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateCurveResult {
        event_center: event.center.coords().to_vec(),
        horizon: spec.horizon,
        rows,
    })
}

/// Result of any experiment kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    RareEvent(RareEventResult),
    Averaging(AveragingResult),
    OperatorConvergence(OperatorResult),
    ResolventCheck(ResolventCheckResult),
    RateCurve(RateCurveResult),
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    Ok(match cfg.experiment {
        ExperimentKind::RareEvent => Outcome::RareEvent(estimate_rare_event(cfg, &thread_pool()?)?),
        ExperimentKind::Averaging => Outcome::Averaging(averaging_study(cfg, &thread_pool()?)?),
        ExperimentKind::OperatorConvergence => Outcome::OperatorConvergence(operator_convergence(cfg)?),
        ExperimentKind::ResolventCheck => Outcome::ResolventCheck(resolvent_check(cfg)?),
        ExperimentKind::RateCurve => Outcome::RateCurve(rate_curve(cfg)?),
    })
}
