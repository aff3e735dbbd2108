//! Functions sampled on a box grid in one chart, and the diagnostics that
//! operate on them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    containment, smooth_dist_cutoff, Chart, ChartRep, Covector, Manifold, Point, ScalarField,
};
use crate::hamiltonian::hamiltonian;
use crate::switching::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
    Cubic,
}

/// Values on a uniform tensor grid of chart coordinates with multilinear
/// or cubic interpolation. Outside the box the coordinates are clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub manifold: Manifold,
    pub chart: Chart,
    pub interpolation: Interpolation,
    pub lower: Vec<f64>,
    pub step: Vec<f64>,
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridFunction {
    /// Grid on the box `[-radius, radius]^d` of the normal chart at
    /// `center`, with `points` nodes per axis.
    pub fn normal_box(center: &Point, radius: f64, points: usize) -> Result<Self> {
        if points < 2 || !(radius > 0.0) {
            return Err(Error::ContractViolation(
                "grid needs at least two points per axis and a positive radius".into(),
            ));
        }
        let d = center.manifold().dim();
        Ok(GridFunction {
            manifold: center.manifold(),
            chart: Chart::Normal { center: *center },
            interpolation: Interpolation::Linear,
            lower: vec![-radius; d],
            step: vec![2.0 * radius / (points - 1) as f64; d],
            counts: vec![points; d],
            values: vec![0.0; points.pow(d as u32)],
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multi-index of flat index `idx` (first axis slowest).
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = idx % self.counts[a];
            idx /= self.counts[a];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, i)| self.lower[a] + *i as f64 * self.step[a])
            .collect()
    }

    pub fn point(&self, idx: usize) -> Result<Point> {
        self.chart.from_coords(self.manifold, &self.coords(idx))
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .zip(&self.counts)
            .all(|(i, n)| *i > 0 && *i + 1 < *n)
    }

    /// Index of the node nearest to the chart origin.
    pub fn center_index(&self) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|a| {
                ((-self.lower[a] / self.step[a]).round() as usize).min(self.counts[a] - 1)
            })
            .collect();
        self.flat_index(&multi)
    }

    /// Fills the values with `f` at the nodes.
    pub fn sample(&mut self, f: &dyn ScalarField) -> Result<()> {
        for idx in 0..self.len() {
            let x = self.point(idx)?;
            self.values[idx] = f.value(&x);
        }
        Ok(())
    }

    /// Interpolated value and chart gradient at chart coordinates `z`.
    pub fn eval_coords(&self, z: &[f64]) -> (f64, [f64; 3]) {
        match self.interpolation {
            Interpolation::Linear => self.eval_linear(z),
            Interpolation::Cubic => self.eval_cubic(z),
        }
    }

    fn locate(&self, a: usize, z: f64) -> (usize, f64) {
        let n = self.counts[a];
        let s = ((z - self.lower[a]) / self.step[a]).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    }

    fn eval_linear(&self, z: &[f64]) -> (f64, [f64; 3]) {
        let d = self.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..d {
            (base[a], frac[a]) = self.locate(a, z[a]);
        }
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for corner in 0..(1usize << d) {
            let mut multi = [0usize; 3];
            let mut w = 1.0;
            let mut dw = [1.0; 3];
            for a in 0..d {
                let bit = (corner >> a) & 1;
                multi[a] = base[a] + bit;
                let (wa, da) = if bit == 1 {
                    (frac[a], 1.0 / self.step[a])
                } else {
                    (1.0 - frac[a], -1.0 / self.step[a])
                };
                for (b, g) in dw.iter_mut().enumerate().take(d) {
                    *g *= if b == a { da } else { wa };
                }
                w *= wa;
            }
            let v = self.values[self.flat_index(&multi[..d])];
            value += w * v;
            for a in 0..d {
                grad[a] += dw[a] * v;
            }
        }
        (value, grad)
    }

    /// Tensor-product Catmull-Rom interpolation; stencils are clamped at
    /// the edges of the box.
    fn eval_cubic(&self, z: &[f64]) -> (f64, [f64; 3]) {
        let d = self.dim();
        let mut idx = [[0usize; 4]; 3];
        let mut w = [[0.0; 4]; 3];
        let mut dw = [[0.0; 4]; 3];
        for a in 0..d {
            let (i, t) = self.locate(a, z[a]);
            let n = self.counts[a] as isize;
            for (k, slot) in idx[a].iter_mut().enumerate() {
                *slot = (i as isize + k as isize - 1).clamp(0, n - 1) as usize;
            }
            let (t2, t3) = (t * t, t * t * t);
            w[a] = [
                0.5 * (-t3 + 2.0 * t2 - t),
                0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                0.5 * (t3 - t2),
            ];
            let h = self.step[a];
            dw[a] = [
                0.5 * (-3.0 * t2 + 4.0 * t - 1.0) / h,
                0.5 * (9.0 * t2 - 10.0 * t) / h,
                0.5 * (-9.0 * t2 + 8.0 * t + 1.0) / h,
                0.5 * (3.0 * t2 - 2.0 * t) / h,
            ];
        }
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for corner in 0..4usize.pow(d as u32) {
            let mut multi = [0usize; 3];
            let mut weight = 1.0;
            let mut dweight = [1.0; 3];
            let mut c = corner;
            for a in 0..d {
                let k = c % 4;
                c /= 4;
                multi[a] = idx[a][k];
                for (b, g) in dweight.iter_mut().enumerate().take(d) {
                    *g *= if b == a { dw[a][k] } else { w[a][k] };
                }
                weight *= w[a][k];
            }
            let v = self.values[self.flat_index(&multi[..d])];
            value += weight * v;
            for a in 0..d {
                grad[a] += dweight[a] * v;
            }
        }
        (value, grad)
    }
}

impl ScalarField for GridFunction {
    fn value(&self, x: &Point) -> f64 {
        match self.chart.to_coords(x) {
            Ok(z) => self.eval_coords(&z[..self.dim()]).0,
            Err(_) => f64::NAN,
        }
    }

    fn closed_differential(&self, x: &Point) -> Option<Covector> {
        let z = self.chart.to_coords(x).ok()?;
        let d = self.dim();
        let (_, g) = self.eval_coords(&z[..d]);
        ChartRep {
            coords: z[..d].to_vec(),
            components: g[..d].to_vec(),
        }
        .to_covector(self.manifold, &self.chart)
        .ok()
    }
}

/// Largest `|f - lambda H(x, df) - h|` over interior nodes, with `df` from
/// central differences on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityResidual {
    pub max_abs: f64,
    pub argmax: Point,
}

pub fn viscosity_residual(
    f: &GridFunction,
    lambda: f64,
    h: &dyn ScalarField,
    model: &Model,
) -> Result<ViscosityResidual> {
    let d = f.dim();
    let mut best: Option<ViscosityResidual> = None;
    for idx in 0..f.len() {
        if !f.is_interior(idx) {
            continue;
        }
        let multi = f.multi_index(idx);
        let mut grad = vec![0.0; d];
        for a in 0..d {
            let mut up = multi.clone();
            up[a] += 1;
            let mut dn = multi.clone();
            dn[a] -= 1;
            grad[a] = (f.values[f.flat_index(&up)] - f.values[f.flat_index(&dn)]) / (2.0 * f.step[a]);
        }
        let df = ChartRep {
            coords: f.coords(idx),
            components: grad,
        }
        .to_covector(f.manifold, &f.chart)?;
        let x = *df.base();
        let r = (f.values[idx] - lambda * hamiltonian(model, &x, &df)?.eigenvalue - h.value(&x)).abs();
        if best.is_none_or(|b| r > b.max_abs) {
            best = Some(ViscosityResidual { max_abs: r, argmax: x });
        }
    }
    best.ok_or_else(|| Error::ContractViolation("grid has no interior nodes".into()))
}

/// Maximizer of the doubled-variable functional for one penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyStep {
    pub m: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `m Psi(x_m, y_m)`.
    pub penalty: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonDiagnostic {
    pub steps: Vec<PenaltyStep>,
    pub sup_u_minus_v: f64,
    pub sup_h1_minus_h2: f64,
    /// `sup(u - v) - sup(h1 - h2)`; nonpositive when the comparison
    /// conclusion holds on the grid.
    pub gap: f64,
}

/// Grid maximization of
/// `u(x)/(1-delta) - v(y)/(1+delta) - m Psi(x, y) - delta Ups(x)/(1-delta) - delta Ups(y)/(1+delta)`
/// for each `m`, with `Psi` equal to `d^2 / 2` smoothly capped beyond half
/// the injectivity radius and `Ups` the containment function at the chart
/// center.
pub fn comparison_gap(
    u: &GridFunction,
    v: &GridFunction,
    h1: &dyn ScalarField,
    h2: &dyn ScalarField,
    delta: f64,
    m_list: &[f64],
) -> Result<ComparisonDiagnostic> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::ContractViolation("delta must lie in [0, 1)".into()));
    }
    let xs: Vec<Point> = (0..u.len()).map(|i| u.point(i)).collect::<Result<_>>()?;
    let ys: Vec<Point> = (0..v.len()).map(|i| v.point(i)).collect::<Result<_>>()?;
    let center = match u.chart {
        Chart::Normal { center } => center,
        _ => xs[u.center_index()],
    };
    let ups_x: Vec<f64> = xs.iter().map(|x| containment(&center, x).value).collect();
    let ups_y: Vec<f64> = ys.iter().map(|y| containment(&center, y).value).collect();
    // the cutoff acts on d^2 / 2 and is the identity below half its radius
    let inj = u.manifold.injectivity_radius();
    let cutoff = if inj.is_finite() { 0.25 * inj * inj } else { 1e12 };
    let mut steps = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let mut best: Option<PenaltyStep> = None;
        for (i, x) in xs.iter().enumerate() {
            let ax = u.values[i] / (1.0 - delta) - delta * ups_x[i] / (1.0 - delta);
            for (j, y) in ys.iter().enumerate() {
                let psi = smooth_dist_cutoff(cutoff, x, y);
                let val = ax - v.values[j] / (1.0 + delta) - m * psi - delta * ups_y[j] / (1.0 + delta);
                if best.as_ref().is_none_or(|b| val > b.value) {
                    best = Some(PenaltyStep {
                        m,
                        x: x.coords().to_vec(),
                        y: y.coords().to_vec(),
                        penalty: m * psi,
                        value: val,
                    });
                }
            }
        }
        steps.extend(best);
    }
    let sup_u_minus_v = if u.counts == v.counts && u.chart == v.chart {
        u.values
            .iter()
            .zip(&v.values)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        xs.iter()
            .enumerate()
            .map(|(i, x)| u.values[i] - v.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let sup_h1_minus_h2 = xs
        .iter()
        .map(|x| h1.value(x) - h2.value(x))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ComparisonDiagnostic {
        steps,
        sup_u_minus_v,
        sup_h1_minus_h2,
        gap: sup_u_minus_v - sup_h1_minus_h2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::switching::{DriftFamily, RateFamily};

    #[test]
    fn interpolation_is_exact_for_bilinear_functions() {
        let c = Manifold::Euclidean(2).point(&[1.0, -1.0]).unwrap();
        let mut g = GridFunction::normal_box(&c, 1.0, 5).unwrap();
        let f = |x: &Point| {
            let (a, b) = (x.coords()[0] - 1.0, x.coords()[1] + 1.0);
            2.0 + a - 3.0 * b + 0.5 * a * b
        };
        g.sample(&f).unwrap();
        let (v, grad) = g.eval_coords(&[0.3, -0.2]);
        assert!((v - (2.0 + 0.3 + 0.6 - 0.03)).abs() < 1e-12);
        assert!((grad[0] - (1.0 - 0.1)).abs() < 1e-12);
        assert!((grad[1] - (-3.0 + 0.15)).abs() < 1e-12);
        assert_eq!(g.point(g.center_index()).unwrap(), c);
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics_inside() {
        let o = Manifold::Euclidean(2).origin();
        let mut g = GridFunction::normal_box(&o, 1.0, 11).unwrap();
        g.interpolation = Interpolation::Cubic;
        let f = |x: &Point| {
            let (a, b) = (x.coords()[0], x.coords()[1]);
            a * a * b - 0.5 * b * b + a
        };
        g.sample(&f).unwrap();
        let z = [0.13, -0.37];
        let (v, grad) = g.eval_coords(&z);
        // Catmull-Rom is exact for quadratics; the a^2 b term is also exact
        // as a tensor product of exact factors
        assert!((v - f(&Manifold::Euclidean(2).point(&z).unwrap())).abs() < 1e-12);
        assert!((grad[0] - (2.0 * z[0] * z[1] + 1.0)).abs() < 1e-10);
        assert!((grad[1] - (z[0] * z[0] - z[1])).abs() < 1e-10);
    }

    #[test]
    fn residual_of_exact_quadratic_resolvent() {
        // f = -c x^2/2 solves f - lambda |f'|^2/2 = -x^2/2 with c + lambda c^2 = 1
        let lambda = 0.5;
        let c = (-1.0 + (1.0f64 + 4.0 * lambda).sqrt()) / (2.0 * lambda);
        let model = Model::from_families(Manifold::Euclidean(1), DriftFamily::Zero, RateFamily::Single)
            .unwrap();
        let o = Manifold::Euclidean(1).origin();
        let mut g = GridFunction::normal_box(&o, 2.0, 401).unwrap();
        g.sample(&|x: &Point| -c * x.coords()[0].powi(2) / 2.0).unwrap();
        let h = |x: &Point| -x.coords()[0].powi(2) / 2.0;
        let r = viscosity_residual(&g, lambda, &h, &model).unwrap();
        assert!(r.max_abs < 1e-10, "{}", r.max_abs);
    }

    #[test]
    fn identical_functions_have_diagonal_maximizers() {
        let o = Manifold::Euclidean(1).origin();
        let mut g = GridFunction::normal_box(&o, 1.0, 21).unwrap();
        g.sample(&|x: &Point| x.coords()[0].sin()).unwrap();
        let h = |x: &Point| x.coords()[0];
        let diag = comparison_gap(&g, &g, &h, &h, 0.0, &[100.0, 1000.0]).unwrap();
        assert!(diag.gap.abs() < 1e-12);
        for s in &diag.steps {
            assert_eq!(s.x, s.y);
        }
    }
}
