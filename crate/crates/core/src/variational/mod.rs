//! Action integrals, optimal curves, the Hopf-Lax formula, the variational
//! resolvent and semigroup, and viscosity diagnostics.

mod grid;
mod optim;
mod resolvent;

pub use grid::{
    comparison_gap, viscosity_residual, ComparisonDiagnostic, GridFunction, Interpolation,
    PenaltyStep, ViscosityResidual,
};
pub use resolvent::{
    resolvent, resolvent_grid, resolvent_with_starts, semigroup, semigroup_with, ResolventConfig,
    ResolventResult, SemigroupOptions, SemigroupResult,
};

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::integrate_flow;
use crate::error::{Error, Result};
use crate::geometry::{
    differential, distance, exp_map, log_map, parallel_transport, Manifold, Point, ScalarField,
    TangentVector, CUT_LOCUS_GUARD,
};
use crate::hamiltonian::{grad_p_hamiltonian, hamiltonian, legendre};
use crate::switching::Model;

/// A curve sampled at increasing times starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct CurveRecord {
    t: f64,
    manifold: Manifold,
    x: Vec<f64>,
}

impl Curve {
    pub fn new(times: Vec<f64>, points: Vec<Point>) -> Result<Self> {
        if times.len() != points.len() || times.is_empty() {
            return Err(Error::ContractViolation(
                "curve needs equally many times and points".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::ContractViolation("curve times must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ContractViolation(
                "curve times must be strictly increasing".into(),
            ));
        }
        let m = points[0].manifold();
        if points.iter().any(|p| p.manifold() != m) {
            return Err(Error::ContractViolation("curve points on different manifolds".into()));
        }
        let radius = m.injectivity_radius();
        for w in points.windows(2) {
            let d = distance(&w[0], &w[1]);
            if d >= radius - CUT_LOCUS_GUARD {
                return Err(Error::CutLocus { distance: d, radius });
            }
        }
        Ok(Curve { times, points })
    }

    /// Constant-speed geodesic from `x` to `y` over `[0, horizon]`.
    pub fn geodesic(x: &Point, y: &Point, horizon: f64, segments: usize) -> Result<Self> {
        let v = log_map(x, y)?;
        let times: Vec<f64> = (0..=segments)
            .map(|k| horizon * k as f64 / segments as f64)
            .collect();
        let points = (0..=segments)
            .map(|k| exp_map(x, &v.scale(k as f64 / segments as f64)))
            .collect::<Result<_>>()?;
        Curve::new(times, points)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("curves are nonempty")
    }

    pub fn start(&self) -> &Point {
        &self.points[0]
    }

    pub fn endpoint(&self) -> &Point {
        self.points.last().expect("curves are nonempty")
    }

    /// Sub-curve on knots `from..=to`, shifted to start at time zero.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        let t0 = self.times[from];
        Curve::new(
            self.times[from..=to].iter().map(|t| t - t0).collect(),
            self.points[from..=to].to_vec(),
        )
    }

    /// One `{"t", "manifold", "x"}` object per knot.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (t, p) in self.times.iter().zip(&self.points) {
            let rec = CurveRecord {
                t: *t,
                manifold: p.manifold(),
                x: p.coords().to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut times = Vec::new();
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidConfig(format!("curve line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CurveRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidConfig(format!("curve line {}: {e}", i + 1)))?;
            times.push(rec.t);
            points.push(rec.manifold.point(&rec.x)?);
        }
        Curve::new(times, points)
    }
}

/// Action of a curve split into the initial cost and one entry per segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionValue {
    pub total: f64,
    pub initial: f64,
    pub per_segment: Vec<f64>,
}

/// Initial cost of a deterministic start: zero at `x0`, infinite elsewhere.
pub fn dirac_initial(x0: Point) -> impl Fn(&Point) -> f64 + Sync {
    move |x: &Point| {
        if distance(&x0, x) <= 1e-9 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Midpoint and transported log-map velocity of the segment `x -> y` of
/// duration `dt`.
fn segment_velocity(x: &Point, y: &Point, dt: f64) -> Result<(Point, TangentVector)> {
    let step = log_map(x, y)?;
    let mid = exp_map(x, &step.scale(0.5))?;
    let v = parallel_transport(x, &mid, &step.scale(1.0 / dt))?;
    Ok((mid, v))
}

/// `I0(curve(0)) + sum_k L(mid_k, v_k) dt_k`.
pub fn action(curve: &Curve, initial: &dyn Fn(&Point) -> f64, model: &Model) -> Result<ActionValue> {
    let mut per_segment = Vec::with_capacity(curve.len() - 1);
    for k in 0..curve.len() - 1 {
        let dt = curve.times[k + 1] - curve.times[k];
        let (mid, v) = segment_velocity(&curve.points[k], &curve.points[k + 1], dt)?;
        per_segment.push(legendre(model, &mid, &v)?.value * dt);
    }
    let initial = initial(curve.start());
    let total = initial + per_segment.iter().sum::<f64>();
    Ok(ActionValue {
        total,
        initial,
        per_segment,
    })
}

/// Solution of `y' = grad_p H(y, df(y))` from `x0` on `[0, horizon]` by RK4
/// with `steps` steps.
pub fn optimal_curve(
    x0: &Point,
    f: &dyn ScalarField,
    horizon: f64,
    steps: usize,
    model: &Model,
) -> Result<Curve> {
    integrate_flow(x0, horizon, steps, |y| grad_p_hamiltonian(model, y, &differential(f, y)))
        .map_err(|e| match e {
            Error::NumericalFailure { .. } => e,
            other => Error::numerical("optimal_curve", other.to_string()),
        })
}

/// Signed residual `int H(x, df) + int L(x, x') - int df(x')` along a
/// curve, by midpoint quadrature.
pub fn young_residual(curve: &Curve, f: &dyn ScalarField, model: &Model) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..curve.len() - 1 {
        let dt = curve.times[k + 1] - curve.times[k];
        let (mid, v) = segment_velocity(&curve.points[k], &curve.points[k + 1], dt)?;
        let df = differential(f, &mid);
        let h = hamiltonian(model, &mid, &df)?.eigenvalue;
        let l = legendre(model, &mid, &v)?.value;
        total += (h + l - df.pair(&v)?) * dt;
    }
    Ok(total)
}

/// `max_y h(y) - d(x0, y)^2 / (2t)` over `y_grid`, refined by a compass
/// search in normal coordinates around the best grid point.
pub fn hopf_lax(h: &dyn ScalarField, t: f64, x0: &Point, y_grid: &[Point]) -> Result<f64> {
    if y_grid.is_empty() {
        return Err(Error::ContractViolation("Hopf-Lax grid is empty".into()));
    }
    if !(t > 0.0) {
        return Err(Error::ContractViolation("Hopf-Lax time must be positive".into()));
    }
    let score = |y: &Point| h.value(y) - distance(x0, y).powi(2) / (2.0 * t);
    let mut best = *y_grid
        .iter()
        .max_by(|a, b| score(a).total_cmp(&score(b)))
        .expect("nonempty");
    let mut value = score(&best);
    let mut step = y_grid
        .iter()
        .map(|y| distance(&best, y))
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !step.is_finite() {
        step = 0.1;
    }
    let d = x0.manifold().dim();
    while step > 1e-10 {
        let mut improved = false;
        for k in 0..d {
            for sign in [-1.0, 1.0] {
                let mut comps = [0.0; 3];
                comps[k] = sign * step;
                let y = exp_map(&best, &best.tangent(&comps[..d]))?;
                let s = score(&y);
                if s > value {
                    value = s;
                    best = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(value)
}

/// Growth constants of the optimal-curve flow for `f` over a sample of a
/// region: `cost_rate = sup L(x, grad_p H(x, df))` and
/// `speed = sup |grad_p H(x, df)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub cost_rate: f64,
    pub speed: f64,
}

pub fn growth_constants(f: &dyn ScalarField, region: &[Point], model: &Model) -> Result<GrowthConstants> {
    let mut cost_rate: f64 = 0.0;
    let mut speed: f64 = 0.0;
    for x in region {
        let p = differential(f, x);
        let eig = hamiltonian(model, x, &p)?;
        let v = grad_p_hamiltonian(model, x, &p)?;
        // Young equality at the optimizer: L(x, grad H) = p grad H - H
        cost_rate = cost_rate.max(p.pair(&v)? - eig.eigenvalue);
        speed = speed.max(v.norm());
    }
    Ok(GrowthConstants { cost_rate, speed })
}

/// Violations of `int_0^t L <= C_L t` and `d(x(t), x0)^2 / 2 <= C_d t` with
/// `C_d = speed^2 T / 2` along a curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub cost_constant: f64,
    pub distance_constant: f64,
    pub max_cost_ratio: f64,
    pub max_distance_ratio: f64,
    pub violations: usize,
}

pub fn check_growth(curve: &Curve, constants: &GrowthConstants, model: &Model) -> Result<GrowthReport> {
    let act = action(curve, &|_: &Point| 0.0, model)?;
    let horizon = curve.horizon();
    // quadrature slack for the cumulative cost
    let c_l = constants.cost_rate * (1.0 + 1e-6) + 1e-12;
    let c_d = 0.5 * constants.speed.powi(2) * horizon * (1.0 + 1e-6) + 1e-12;
    let mut cumulative = 0.0;
    let mut report = GrowthReport {
        cost_constant: c_l,
        distance_constant: c_d,
        max_cost_ratio: 0.0,
        max_distance_ratio: 0.0,
        violations: 0,
    };
    for k in 1..curve.len() {
        cumulative += act.per_segment[k - 1];
        let t = curve.times[k];
        let half_d2 = 0.5 * distance(curve.start(), &curve.points[k]).powi(2);
        let rc = cumulative / (c_l * t);
        let rd = half_d2 / (c_d * t);
        report.max_cost_ratio = report.max_cost_ratio.max(rc);
        report.max_distance_ratio = report.max_distance_ratio.max(rd);
        if rc > 1.0 || rd > 1.0 {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_averaged;
    use crate::switching::{DriftFamily, RateFamily};
    use std::f64::consts::PI;

    fn brownian(m: Manifold) -> Model {
        Model::from_families(m, DriftFamily::Zero, RateFamily::Single).unwrap()
    }

    #[test]
    fn constant_curve_has_zero_action() {
        let model = Model::from_families(
            Manifold::Euclidean(1),
            DriftFamily::TwoState { beta: 1.0 },
            RateFamily::TwoState { a: 1.0, b: 1.0 },
        )
        .unwrap();
        let x = Manifold::Euclidean(1).point(&[0.2]).unwrap();
        let c = Curve::new(vec![0.0, 0.5, 1.0], vec![x, x, x]).unwrap();
        let a = action(&c, &dirac_initial(x), &model).unwrap();
        assert!(a.total.abs() < 1e-12);
    }

    #[test]
    fn geodesic_to_equator() {
        let m = Manifold::Sphere2;
        let north = m.origin();
        let eq = m.point(&[1.0, 0.0, 0.0]).unwrap();
        let c = Curve::geodesic(&north, &eq, 1.0, 16).unwrap();
        let a = action(&c, &dirac_initial(north), &brownian(m)).unwrap();
        assert!((a.total - PI * PI / 8.0).abs() < 1e-10);
        let sum: f64 = a.per_segment.iter().sum();
        assert!((a.total - a.initial - sum).abs() < 1e-12);
    }

    #[test]
    fn averaged_flow_is_free() {
        let model = Model::from_families(
            Manifold::Sphere2,
            DriftFamily::States(vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.0]]),
            RateFamily::TwoState { a: 1.0, b: 3.0 },
        )
        .unwrap();
        let x0 = Manifold::Sphere2.point(&[0.6, 0.0, 0.8]).unwrap();
        let curve = simulate_averaged(&x0, 1.0, 0.01, &model).unwrap();
        let a = action(&curve, &dirac_initial(x0), &model).unwrap();
        assert!(a.total <= 1e-4, "{}", a.total);
    }

    #[test]
    fn straight_line_optimal_curve() {
        let m = Manifold::Euclidean(2);
        let f = |y: &Point| 0.5 * y.coords()[0] - y.coords()[1];
        let x0 = m.point(&[1.0, 1.0]).unwrap();
        let c = optimal_curve(&x0, &f, 2.0, 20, &brownian(m)).unwrap();
        for (t, p) in c.times.iter().zip(&c.points) {
            assert!((p.coords()[0] - (1.0 + 0.5 * t)).abs() < 1e-8);
            assert!((p.coords()[1] - (1.0 - t)).abs() < 1e-8);
        }
        assert!(young_residual(&c, &f, &brownian(m)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn hopf_lax_linear_completes_the_square() {
        let m = Manifold::Euclidean(1);
        let h = |y: &Point| 0.7 * y.coords()[0];
        let grid: Vec<Point> = (-40..=40).map(|k| m.point(&[k as f64 * 0.1]).unwrap()).collect();
        let x0 = m.point(&[0.3]).unwrap();
        let t = 0.8;
        let v = hopf_lax(&h, t, &x0, &grid).unwrap();
        assert!((v - (0.7 * 0.3 + t * 0.49 / 2.0)).abs() < 1e-9);
        let c = hopf_lax(&|_: &Point| 2.5, t, &x0, &grid).unwrap();
        assert!((c - 2.5).abs() < 1e-15);
    }

    #[test]
    fn curve_jsonl_round_trip() {
        let m = Manifold::Torus2;
        let c = Curve::geodesic(&m.point(&[0.1, 0.2]).unwrap(), &m.point(&[1.0, 0.5]).unwrap(), 1.0, 4)
            .unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = Curve::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.times, c.times);
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!(distance(a, b) < 1e-12);
        }
    }
}
