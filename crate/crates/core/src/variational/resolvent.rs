//! The variational resolvent
//! `R(lambda) h (x) = sup_gamma int_0^inf lambda^{-1} e^{-t/lambda} [h(gamma(t)) - int_0^t L] dt`
//! by direct transcription, and the semigroup as iterated resolvents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::grid::{GridFunction, Interpolation};
use super::optim::{maximize, LbfgsOptions};
use crate::error::{Error, Result};
use crate::geometry::{
    chart_transform, differential, Chart, ChartRep, ChartVector, Manifold, Point, ScalarField,
    TangentVector,
};
use crate::hamiltonian::{grad_p_hamiltonian, legendre};
use crate::switching::{averaged_drift, Model};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventConfig {
    pub lambda: f64,
    /// Truncation time of the exponential weight.
    pub horizon_cut: f64,
    /// Number of constant-velocity segments on `[0, horizon_cut]`.
    pub segments: usize,
    /// Starts of the local ascent: the averaged flow, the gradient guess,
    /// then random perturbations.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl ResolventConfig {
    pub fn new(lambda: f64) -> Self {
        ResolventConfig {
            lambda,
            horizon_cut: lambda * 1e4f64.ln(),
            segments: 32,
            restarts: 8,
            seed: 0,
            max_iter: 200,
            grad_tol: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if self.horizon_cut < self.lambda * 1e4f64.ln() * (1.0 - 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "horizon_cut {} leaves exponential tail mass above 1e-4 (need >= {})",
                self.horizon_cut,
                self.lambda * 1e4f64.ln()
            )));
        }
        if self.segments == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig(
                "segments and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventResult {
    /// Best objective found; a lower bound for the supremum.
    pub value: f64,
    /// Chart velocities of the best curve, segment-major.
    pub controls: Vec<f64>,
    pub restart_values: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
}

/// Value and chart gradient of the reward.
trait Reward {
    fn eval(&self, z: &[f64]) -> Option<(f64, [f64; 3])>;
}

struct FieldReward<'a> {
    f: &'a dyn ScalarField,
    chart: Chart,
    manifold: Manifold,
}

impl Reward for FieldReward<'_> {
    fn eval(&self, z: &[f64]) -> Option<(f64, [f64; 3])> {
        let x = self.chart.from_coords(self.manifold, z).ok()?;
        let df = differential(self.f, &x);
        let rep = chart_transform(&x, &ChartVector::Cotangent(df), &self.chart).ok()?;
        let mut g = [0.0; 3];
        g[..rep.components.len()].copy_from_slice(&rep.components);
        let v = self.f.value(&x);
        v.is_finite().then_some((v, g))
    }
}

impl Reward for GridFunction {
    fn eval(&self, z: &[f64]) -> Option<(f64, [f64; 3])> {
        Some(self.eval_coords(z))
    }
}

struct Problem<'a> {
    model: &'a Model,
    chart: Chart,
    manifold: Manifold,
    d: usize,
    z0: Vec<f64>,
    reward: &'a dyn Reward,
    lambda: f64,
    dt: f64,
    /// Exponential mass of each segment.
    weights: Vec<f64>,
    /// Offset of the weighted center of each segment from its start.
    centers: Vec<f64>,
    tail: f64,
    position_dependent: bool,
}

impl<'a> Problem<'a> {
    fn new(
        cfg: &ResolventConfig,
        model: &'a Model,
        chart: Chart,
        z0: Vec<f64>,
        reward: &'a dyn Reward,
    ) -> Self {
        let k = cfg.segments;
        let lambda = cfg.lambda;
        let dt = cfg.horizon_cut / k as f64;
        let mass = |t: f64| (-t / lambda).exp();
        let weights: Vec<f64> = (0..k)
            .map(|i| mass(i as f64 * dt) - mass((i + 1) as f64 * dt))
            .collect();
        // center of mass of e^{-s/lambda} on [0, dt]
        let r = dt / lambda;
        let center = lambda * (1.0 - r * (-r).exp() / (-(-r).exp_m1()));
        Problem {
            model,
            chart,
            manifold: model.manifold,
            d: model.manifold.dim(),
            z0,
            reward,
            lambda,
            dt,
            weights,
            centers: vec![center; k],
            tail: mass(cfg.horizon_cut),
            position_dependent: !model.is_homogeneous(),
        }
    }

    /// Lagrangian in chart coordinates and its velocity gradient.
    fn ell(&self, z: &[f64], u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let rep = ChartRep {
            coords: z.to_vec(),
            components: u.to_vec(),
        };
        let v = rep.to_tangent(self.manifold, &self.chart).ok()?;
        let x = *v.base();
        let res = legendre(self.model, &x, &v).ok()?;
        let du = chart_transform(&x, &ChartVector::Cotangent(res.argmax_p), &self.chart)
            .ok()?
            .components;
        Some((res.value, du))
    }

    fn objective(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (d, k) = (self.d, self.weights.len());
        let mut z = self.z0.clone();
        let mut value = 0.0;
        // per-segment position sensitivities g_k and direct velocity terms
        let mut gz = vec![0.0; k * d];
        let mut grad = vec![0.0; k * d];
        let mut e = vec![0.0; d];
        for s in 0..k {
            let us = &u[s * d..(s + 1) * d];
            for a in 0..d {
                e[a] = z[a] + self.centers[s] * us[a];
            }
            let (hv, hg) = self.reward.eval(&e)?;
            let (l, lu) = self.ell(&e, us)?;
            let w = self.weights[s];
            value += w * (hv - self.lambda * l);
            for a in 0..d {
                gz[s * d + a] = w * hg[a];
                grad[s * d + a] = -self.lambda * w * lu[a];
            }
            if self.position_dependent {
                // forward differences: the gradient only steers the ascent
                let step = 1e-7;
                for a in 0..d {
                    let mut up = e.clone();
                    up[a] += step;
                    let lz = (self.ell(&up, us)?.0 - l) / step;
                    gz[s * d + a] -= self.lambda * w * lz;
                }
            }
            for a in 0..d {
                z[a] += self.dt * us[a];
            }
        }
        let (hend, gend) = self.reward.eval(&z)?;
        value += self.tail * hend;
        // suffix sums of position sensitivities
        let mut suffix: Vec<f64> = (0..d).map(|a| self.tail * gend[a]).collect();
        for s in (0..k).rev() {
            for a in 0..d {
                grad[s * d + a] += self.centers[s] * gz[s * d + a] + self.dt * suffix[a];
                suffix[a] += gz[s * d + a];
            }
        }
        value.is_finite().then_some((value, grad))
    }

    fn chart_velocity(&self, v: &TangentVector) -> Option<Vec<f64>> {
        Some(chart_transform(v.base(), &ChartVector::Tangent(*v), &self.chart).ok()?.components)
    }

    /// Forward Euler along the averaged drift; zero running cost when the
    /// averaged drift is constant.
    fn averaged_start(&self) -> Vec<f64> {
        let (d, k) = (self.d, self.weights.len());
        let mut z = self.z0.clone();
        let mut u = vec![0.0; k * d];
        for s in 0..k {
            let Ok(x) = self.chart.from_coords(self.manifold, &z) else {
                break;
            };
            let Ok(b) = averaged_drift(self.model.drift.as_ref(), self.model.rates.as_ref(), &x)
            else {
                break;
            };
            let Some(c) = self.chart_velocity(&b) else {
                break;
            };
            for a in 0..d {
                u[s * d + a] = c[a];
                z[a] += self.dt * c[a];
            }
        }
        u
    }

    /// Constant velocity `grad_p H(x, dh(x))` at the start.
    fn gradient_start(&self) -> Option<Vec<f64>> {
        let (_, g) = self.reward.eval(&self.z0)?;
        let x = self.chart.from_coords(self.manifold, &self.z0).ok()?;
        let p = ChartRep {
            coords: self.z0.clone(),
            components: g[..self.d].to_vec(),
        }
        .to_covector(self.manifold, &self.chart)
        .ok()?;
        let v = grad_p_hamiltonian(self.model, &x, &p).ok()?;
        let c = self.chart_velocity(&v)?;
        Some(c.iter().cycle().take(self.weights.len() * self.d).copied().collect())
    }
}

/// Local ascent from the configured starts, or only from `extra_starts`
/// when `warm_only` is set and some are given.
fn solve(
    problem: &Problem,
    cfg: &ResolventConfig,
    extra_starts: &[Vec<f64>],
    warm_only: bool,
) -> Result<ResolventResult> {
    let opts = LbfgsOptions {
        max_iter: cfg.max_iter,
        grad_tol: cfg.grad_tol,
        memory: 10,
    };
    let n = problem.weights.len() * problem.d;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let warm: Vec<Vec<f64>> = extra_starts.iter().filter(|s| s.len() == n).cloned().collect();
    let defaults = !(warm_only && !warm.is_empty());
    if defaults {
        starts.push(problem.averaged_start());
    }
    let guess = if defaults { problem.gradient_start() } else { None };
    if defaults && cfg.restarts > 1 {
        starts.push(guess.clone().unwrap_or_else(|| vec![0.0; n]));
    }
    if defaults && cfg.restarts > 2 {
        let base = guess.unwrap_or_else(|| vec![0.0; n]);
        let scale = 0.5 * (1.0 + base.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 2..cfg.restarts {
            let shift: Vec<f64> = (0..problem.d)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            starts.push(
                (0..n)
                    .map(|i| {
                        base[i] + shift[i % problem.d] + 0.5 * scale * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect(),
            );
        }
    }
    starts.extend(warm);

    let mut best: Option<ResolventResult> = None;
    let mut restart_values = Vec::with_capacity(starts.len());
    let mut iterations = 0;
    let evaluations = std::cell::Cell::new(0usize);
    for start in starts {
        let objective = |u: &[f64]| {
            evaluations.set(evaluations.get() + 1);
            problem.objective(u)
        };
        let Some(m) = maximize(objective, start, &opts) else {
            restart_values.push(f64::NEG_INFINITY);
            continue;
        };
        iterations += m.iterations;
        restart_values.push(m.value);
        if best.as_ref().is_none_or(|b| m.value > b.value) {
            best = Some(ResolventResult {
                value: m.value,
                controls: m.x,
                restart_values: Vec::new(),
                iterations: 0,
                evaluations: 0,
                grad_norm: m.grad_norm,
            });
        }
    }
    let mut best = best.ok_or_else(|| {
        Error::numerical("resolvent", "objective undefined at every start (curve left the chart)")
    })?;
    best.restart_values = restart_values;
    best.iterations = iterations;
    best.evaluations = evaluations.get();
    Ok(best)
}

/// `R(lambda) h (x)` with curves parameterized in the normal chart at `x`.
pub fn resolvent(cfg: &ResolventConfig, h: &dyn ScalarField, x: &Point, model: &Model) -> Result<ResolventResult> {
    resolvent_with_starts(cfg, h, x, model, &[])
}

/// As [`resolvent`] with additional starting controls.
pub fn resolvent_with_starts(
    cfg: &ResolventConfig,
    h: &dyn ScalarField,
    x: &Point,
    model: &Model,
    starts: &[Vec<f64>],
) -> Result<ResolventResult> {
    cfg.validate()?;
    let chart = Chart::Normal { center: *x };
    let reward = FieldReward {
        f: h,
        chart,
        manifold: model.manifold,
    };
    let d = model.manifold.dim();
    let problem = Problem::new(cfg, model, chart, vec![0.0; d], &reward);
    solve(&problem, cfg, starts, false)
}

/// `R(lambda) h` at every node of `template`, with curves parameterized in
/// the template's chart.
pub fn resolvent_grid(
    cfg: &ResolventConfig,
    h: &dyn ScalarField,
    template: &GridFunction,
    model: &Model,
) -> Result<GridFunction> {
    cfg.validate()?;
    let reward = FieldReward {
        f: h,
        chart: template.chart,
        manifold: model.manifold,
    };
    let mut out = template.clone();
    let mut previous: Option<Vec<f64>> = None;
    for idx in 0..template.len() {
        let problem = Problem::new(cfg, model, template.chart, template.coords(idx), &reward);
        let starts: Vec<Vec<f64>> = previous.iter().cloned().collect();
        let res = solve(&problem, cfg, &starts, false)?;
        out.values[idx] = res.value;
        previous = Some(res.controls);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupOptions {
    /// Nodes per axis of the working grid; 0 picks 41 in one dimension
    /// and 15 otherwise.
    pub grid_points: usize,
    /// Half-width of the working box in normal coordinates; `None` sizes it
    /// from the speed of the optimal-curve flow of `f`.
    pub radius: Option<f64>,
    pub segments: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub interpolation: Interpolation,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        SemigroupOptions {
            grid_points: 0,
            radius: None,
            segments: 16,
            restarts: 2,
            max_iter: 100,
            grad_tol: 1e-7,
            interpolation: Interpolation::Cubic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemigroupResult {
    pub value: f64,
    /// The `(m-1)`-fold iterate on the working grid.
    pub grid: GridFunction,
    pub lambda: f64,
    /// Objective evaluations over all inner resolvent solves.
    pub evaluations: usize,
}

/// `R(t/m)^m f (x)` with default options.
pub fn semigroup(t: f64, f: &dyn ScalarField, x: &Point, m: usize, model: &Model) -> Result<f64> {
    Ok(semigroup_with(t, f, x, m, model, &SemigroupOptions::default())?.value)
}

fn working_radius(t: f64, f: &dyn ScalarField, x: &Point, model: &Model) -> Result<f64> {
    let m = x.manifold();
    let d = m.dim();
    let mut speed: f64 = 0.0;
    for idx in 0..3usize.pow(d as u32) {
        let mut comps = [0.0; 3];
        let mut r = idx;
        for c in comps.iter_mut().take(d) {
            *c = 0.5 * ((r % 3) as f64 - 1.0);
            r /= 3;
        }
        let y = crate::geometry::exp_map(x, &x.tangent(&comps[..d]))?;
        speed = speed.max(grad_p_hamiltonian(model, &y, &differential(f, &y))?.norm());
    }
    let r = 1.5 * t * speed + 0.3;
    Ok(match m {
        Manifold::Sphere2 => r.min(1.6),
        Manifold::Torus2 => r.min(3.0),
        Manifold::Euclidean(_) => r,
    })
}

/// `R(t/m)^m f (x)`, iterating on a grid of the normal chart at `x` with
/// interpolation between iterations.
pub fn semigroup_with(
    t: f64,
    f: &dyn ScalarField,
    x: &Point,
    m: usize,
    model: &Model,
    opts: &SemigroupOptions,
) -> Result<SemigroupResult> {
    if m == 0 || !(t > 0.0) {
        return Err(Error::ContractViolation(
            "semigroup needs t > 0 and at least one iteration".into(),
        ));
    }
    let d = x.manifold().dim();
    let points = match opts.grid_points {
        0 if d == 1 => 41,
        0 => 15,
        n => n,
    };
    let radius = match opts.radius {
        Some(r) => r,
        None => working_radius(t, f, x, model)?,
    };
    let lambda = t / m as f64;
    let mut cfg = ResolventConfig::new(lambda);
    cfg.segments = opts.segments;
    cfg.restarts = opts.restarts;
    cfg.max_iter = opts.max_iter;
    cfg.grad_tol = opts.grad_tol;

    let mut grid = GridFunction::normal_box(x, radius, points)?;
    grid.interpolation = opts.interpolation;
    grid.sample(f)?;
    let center = grid.center_index();
    let mut controls: Vec<Option<Vec<f64>>> = vec![None; grid.len()];
    let mut value = f64::NAN;
    let mut evaluations = 0;
    for iter in 1..=m {
        let last = iter == m;
        let mut next = grid.values.clone();
        for idx in 0..grid.len() {
            if last && idx != center {
                continue;
            }
            let problem = Problem::new(&cfg, model, grid.chart, grid.coords(idx), &grid);
            let starts: Vec<Vec<f64>> = controls[idx].iter().cloned().collect();
            let res = solve(&problem, &cfg, &starts, true).map_err(|e| match e {
                Error::NumericalFailure { detail, .. } => {
                    Error::numerical("semigroup", format!("iteration {iter}: {detail}"))
                }
                other => other,
            })?;
            next[idx] = res.value;
            evaluations += res.evaluations;
            controls[idx] = Some(res.controls);
        }
        if last {
            value = next[center];
        } else {
            grid.values = next;
        }
    }
    Ok(SemigroupResult {
        value,
        grid,
        lambda,
        evaluations,
    })
}
