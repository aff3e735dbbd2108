//! Monte Carlo simulation of the slow-fast system
//! `dX = n^{-1/2} dW + b(X, L) dt` with `L` switching at rates `n q_ij(X)`,
//! the averaged flow, and the prelimit and limit nonlinear generators.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    chart_transform, differential, laplace_beltrami, Chart, ChartVector, Point,
    ScalarField, TangentVector,
};
use crate::switching::{averaged_drift, Model, SwitchState};
use crate::variational::Curve;

/// Parameters of one simulated trajectory.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Scale parameter; noise has variance `1/n` per unit time and switching
    /// runs `n` times faster than the slow motion.
    pub n: u64,
    pub horizon: f64,
    /// Requested diffusion step. The step actually used is
    /// `horizon / ceil(horizon / dt)`.
    pub dt: f64,
    pub seed: u64,
    /// Trajectory index; selects an independent stream of the seeded
    /// generator.
    pub stream: u64,
    pub model: Model,
    pub x0: Point,
    pub initial_state: SwitchState,
}

impl SimConfig {
    /// Largest admissible step: `1 / (4 n max_rate)`.
    pub fn max_dt(n: u64, model: &Model) -> f64 {
        let rate = model.rates.max_exit_rate();
        if rate > 0.0 {
            1.0 / (4.0 * n as f64 * rate)
        } else {
            f64::INFINITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        let bound = Self::max_dt(self.n, &self.model);
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} exceeds the switching resolution bound {bound}",
                self.dt
            )));
        }
        if self.x0.manifold() != self.model.manifold {
            return Err(Error::InvalidConfig(
                "initial point is not on the model manifold".into(),
            ));
        }
        if self.initial_state.index() >= self.model.n_states() {
            return Err(Error::InvalidConfig("initial switch state out of range".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).ceil().max(1.0) as usize
    }

    /// Seeded generator for this trajectory.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowFastState {
    pub position: Point,
    pub switch: SwitchState,
    pub time: f64,
}

/// A jump of the fast process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// One simulated trajectory sampled on the diffusion grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    pub switches: Vec<SwitchState>,
    pub switch_events: Vec<SwitchEvent>,
    pub seed: u64,
}

#[derive(Serialize)]
struct PathRecord<'a> {
    t: f64,
    x: &'a [f64],
    state: usize,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn endpoint(&self) -> &Point {
        self.positions.last().expect("paths are never empty")
    }

    /// One JSON object per sample point: `{"t", "x", "state"}` with 1-based
    /// state labels.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ((t, x), s) in self.times.iter().zip(&self.positions).zip(&self.switches) {
            let rec = PathRecord {
                t: *t,
                x: x.coords(),
                state: s.label(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Little-endian records of `f64` time, `f64` coordinates and `u32`
    /// 1-based state label, with no header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ((t, x), s) in self.times.iter().zip(&self.positions).zip(&self.switches) {
            w.write_all(&t.to_le_bytes())?;
            for c in x.coords() {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&(s.label() as u32).to_le_bytes())?;
        }
        Ok(())
    }
}

/// Geodesic Euler step of the slow component with frozen switch state.
pub fn step_diffusion(state: &SlowFastState, dt: f64, gauss: &[f64], cfg: &SimConfig) -> SlowFastState {
    let x = &state.position;
    let d = x.manifold().dim();
    let b = cfg.model.drift_at(x, state.switch);
    let noise = (dt / cfg.n as f64).sqrt();
    let mut v = [0.0; 3];
    for k in 0..d {
        v[k] = noise * gauss[k] + dt * b.components()[k];
    }
    let step = TangentVector::from_components(*x, &v[..d]);
    SlowFastState {
        position: crate::geometry::exp_unchecked(x, &step),
        switch: state.switch,
        time: state.time + dt,
    }
}

/// Exact jump simulation on `[t, t + dt]` with rates `n q_ij` frozen at the
/// current position. Jumps are appended to `events`.
pub fn step_switch<R: Rng + ?Sized>(
    state: &SlowFastState,
    dt: f64,
    rng: &mut R,
    cfg: &SimConfig,
    events: &mut Vec<SwitchEvent>,
) -> SlowFastState {
    let q = cfg.model.rates.matrix(&state.position);
    switch_with(state, dt, rng, cfg.n as f64, &q, events)
}

fn switch_with<R: Rng + ?Sized>(
    state: &SlowFastState,
    dt: f64,
    rng: &mut R,
    n: f64,
    q: &DMatrix<f64>,
    events: &mut Vec<SwitchEvent>,
) -> SlowFastState {
    let mut current = state.switch.index();
    let mut elapsed = 0.0;
    loop {
        let exit = -q[(current, current)] * n;
        if exit <= 0.0 {
            break;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / exit;
        elapsed += wait;
        if elapsed >= dt {
            break;
        }
        let mut u = rng.random::<f64>() * (-q[(current, current)]);
        let mut next = current;
        for j in 0..q.ncols() {
            if j == current {
                continue;
            }
            next = j;
            u -= q[(current, j)];
            if u < 0.0 {
                break;
            }
        }
        events.push(SwitchEvent {
            time: state.time + elapsed,
            from: current + 1,
            to: next + 1,
        });
        current = next;
    }
    SlowFastState {
        position: state.position,
        switch: SwitchState::from_index(current),
        time: state.time,
    }
}

/// Runs the switch-then-diffuse scheme, calling `observe` on the initial
/// state and after every step.
pub fn simulate_with<F>(cfg: &SimConfig, mut observe: F) -> Result<Vec<SwitchEvent>>
where
    F: FnMut(&SlowFastState),
{
    cfg.validate()?;
    let steps = cfg.steps();
    let dt = cfg.horizon / steps as f64;
    let d = cfg.model.manifold.dim();
    let mut rng = cfg.rng();
    let constant_rates = cfg.model.rates.is_constant();
    let q0 = cfg.model.rates.matrix(&cfg.x0);
    let single = cfg.model.n_states() == 1;
    let mut events = Vec::new();
    let mut state = SlowFastState {
        position: cfg.x0,
        switch: cfg.initial_state,
        time: 0.0,
    };
    observe(&state);
    let mut gauss = [0.0; 3];
    for k in 0..steps {
        if !single {
            state = if constant_rates {
                switch_with(&state, dt, &mut rng, cfg.n as f64, &q0, &mut events)
            } else {
                step_switch(&state, dt, &mut rng, cfg, &mut events)
            };
        }
        for g in gauss.iter_mut().take(d) {
            *g = rng.sample(StandardNormal);
        }
        state = step_diffusion(&state, dt, &gauss[..d], cfg);
        // pin the clock to the grid so that times are exact multiples
        state.time = if k + 1 == steps {
            cfg.horizon
        } else {
            (k + 1) as f64 * dt
        };
        observe(&state);
    }
    Ok(events)
}

/// Full trajectory on the diffusion grid.
pub fn simulate(cfg: &SimConfig) -> Result<PathSample> {
    let cap = cfg.steps() + 1;
    let mut times = Vec::with_capacity(cap);
    let mut positions = Vec::with_capacity(cap);
    let mut switches = Vec::with_capacity(cap);
    let switch_events = simulate_with(cfg, |s| {
        times.push(s.time);
        positions.push(s.position);
        switches.push(s.switch);
    })?;
    Ok(PathSample {
        times,
        positions,
        switches,
        switch_events,
        seed: cfg.seed,
    })
}

/// Final state only; same random stream as [`simulate`].
pub fn simulate_endpoint(cfg: &SimConfig) -> Result<SlowFastState> {
    let mut last = None;
    simulate_with(cfg, |s| last = Some(*s))?;
    Ok(last.expect("at least the initial state is observed"))
}

/// RK4 for `y' = field(y)` in normal coordinates re-centered at the current
/// point before every step.
pub(crate) fn integrate_flow<F>(x0: &Point, horizon: f64, steps: usize, mut field: F) -> Result<Curve>
where
    F: FnMut(&Point) -> Result<TangentVector>,
{
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::ContractViolation(
            "flow integration needs a positive horizon and step count".into(),
        ));
    }
    let m = x0.manifold();
    let d = m.dim();
    let h = horizon / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    times.push(0.0);
    points.push(*x0);
    let mut y = *x0;
    for k in 0..steps {
        let chart = Chart::Normal { center: y };
        let mut eval = |z: &[f64]| -> Result<Vec<f64>> {
            let w = if z.iter().all(|c| *c == 0.0) {
                y
            } else {
                chart.from_coords(m, z)?
            };
            let v = field(&w)?;
            Ok(chart_transform(&w, &ChartVector::Tangent(v), &chart)?.components)
        };
        let z0 = vec![0.0; d];
        let k1 = eval(&z0)?;
        let z: Vec<f64> = (0..d).map(|i| 0.5 * h * k1[i]).collect();
        let k2 = eval(&z)?;
        let z: Vec<f64> = (0..d).map(|i| 0.5 * h * k2[i]).collect();
        let k3 = eval(&z)?;
        let z: Vec<f64> = (0..d).map(|i| h * k3[i]).collect();
        let k4 = eval(&z)?;
        let z: Vec<f64> = (0..d)
            .map(|i| h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        y = chart.from_coords(m, &z).map_err(|_| {
            Error::numerical("rk4", format!("step {k} left the normal chart; reduce the step"))
        })?;
        times.push(if k + 1 == steps { horizon } else { (k + 1) as f64 * h });
        points.push(y);
    }
    Curve::new(times, points)
}

/// Solution of the averaged ODE `x' = sum_i pi_i(x) b(x, i)` by RK4.
pub fn simulate_averaged(x0: &Point, horizon: f64, dt: f64, model: &Model) -> Result<Curve> {
    if !(dt > 0.0) {
        return Err(Error::ContractViolation("dt must be positive".into()));
    }
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    integrate_flow(x0, horizon, steps, |y| {
        averaged_drift(model.drift.as_ref(), model.rates.as_ref(), y)
    })
}

/// Per-state correction `phi(x, i)` of the test function.
pub trait Corrector: Sync {
    fn value(&self, x: &Point, i: SwitchState) -> f64;
}

impl<F> Corrector for F
where
    F: Fn(&Point, SwitchState) -> f64 + Sync,
{
    fn value(&self, x: &Point, i: SwitchState) -> f64 {
        self(x, i)
    }
}

fn switching_term(phi: &dyn Corrector, x: &Point, i: SwitchState, model: &Model) -> f64 {
    let q = model.rates.matrix(x);
    let own = phi.value(x, i);
    (0..q.ncols())
        .filter(|&j| j != i.index())
        .map(|j| q[(i.index(), j)] * ((phi.value(x, SwitchState::from_index(j)) - own).exp() - 1.0))
        .sum()
}

/// `H_n f_n (x, i)` for `f_n = f + phi(., i) / n`:
/// `b df_n + |df_n|^2 / 2 + Delta f_n / (2n) + sum_j q_ij (e^{phi_j - phi_i} - 1)`.
pub fn prelimit_generator(
    f: &dyn ScalarField,
    phi: &dyn Corrector,
    n: f64,
    x: &Point,
    i: SwitchState,
    model: &Model,
) -> f64 {
    let fn_field = |y: &Point| f.value(y) + phi.value(y, i) / n;
    let df = match f.closed_differential(x) {
        Some(df) => {
            let dphi = differential(&|y: &Point| phi.value(y, i), x);
            df.add(&dphi.scale(1.0 / n)).expect("same base point")
        }
        None => differential(&fn_field, x),
    };
    let b = model.drift_at(x, i);
    let lap = laplace_beltrami(&fn_field, x);
    df.pair(&b).expect("same base point")
        + 0.5 * df.norm().powi(2)
        + lap / (2.0 * n)
        + switching_term(phi, x, i, model)
}

/// `H_{f,phi}(x, i) = b df + |df|^2 / 2 + sum_j q_ij (e^{phi_j - phi_i} - 1)`.
pub fn limit_generator(
    f: &dyn ScalarField,
    phi: &dyn Corrector,
    x: &Point,
    i: SwitchState,
    model: &Model,
) -> f64 {
    let df = differential(f, x);
    let b = model.drift_at(x, i);
    df.pair(&b).expect("same base point") + 0.5 * df.norm().powi(2) + switching_term(phi, x, i, model)
}
