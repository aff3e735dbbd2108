//! Scalar fields and the calculus built on them: differentials, the
//! Laplace-Beltrami operator, the containment function and the smooth
//! distance cutoff.

use super::vec3::dot;
use super::{distance, exp_unchecked, Chart, Covector, Manifold, Point, TangentVector};
use crate::error::Result;

/// Central-difference step in chart units.
pub const FD_STEP: f64 = 1e-4;

/// A real function on a manifold, optionally with a closed-form
/// differential.
pub trait ScalarField: Sync {
    fn value(&self, x: &Point) -> f64;

    fn closed_differential(&self, _x: &Point) -> Option<Covector> {
        None
    }
}

impl<F> ScalarField for F
where
    F: Fn(&Point) -> f64 + Sync,
{
    fn value(&self, x: &Point) -> f64 {
        self(x)
    }
}

/// A field with both value and differential given in closed form.
pub struct WithDifferential<F, G> {
    pub value: F,
    pub differential: G,
}

impl<F, G> ScalarField for WithDifferential<F, G>
where
    F: Fn(&Point) -> f64 + Sync,
    G: Fn(&Point) -> Covector + Sync,
{
    fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }

    fn closed_differential(&self, x: &Point) -> Option<Covector> {
        Some((self.differential)(x))
    }
}

/// Differential of `f` at `x`: closed form when available, central
/// differences otherwise.
pub fn differential(f: &dyn ScalarField, x: &Point) -> Covector {
    f.closed_differential(x)
        .unwrap_or_else(|| fd_differential(f, x))
}

/// Central differences along the geodesics `t -> exp_x(t E_k)`; these are
/// the coordinate lines of the normal chart at `x`, so the result is the
/// differential in the dual frame.
pub fn fd_differential(f: &dyn ScalarField, x: &Point) -> Covector {
    let d = x.manifold().dim();
    let mut comps = [0.0; 3];
    for (k, c) in comps.iter_mut().enumerate().take(d) {
        let mut e = [0.0; 3];
        e[k] = FD_STEP;
        let fwd = exp_unchecked(x, &TangentVector::from_components(*x, &e));
        e[k] = -FD_STEP;
        let bwd = exp_unchecked(x, &TangentVector::from_components(*x, &e));
        *c = (f.value(&fwd) - f.value(&bwd)) / (2.0 * FD_STEP);
    }
    Covector::from_components(*x, &comps[..d])
}

/// Laplace-Beltrami operator at `x`, evaluated in the normal chart centered
/// at `x`.
pub fn laplace_beltrami(f: &dyn ScalarField, x: &Point) -> f64 {
    laplace_beltrami_in_chart(f, x, &Chart::Normal { center: *x })
        .expect("a normal chart always contains its center")
}

/// Laplace-Beltrami operator at `x` through the chart formula
/// `(1/sqrt G) d_i (sqrt G g^ij d_j f)` with nested central differences of
/// step [`FD_STEP`].
pub fn laplace_beltrami_in_chart(f: &dyn ScalarField, x: &Point, chart: &Chart) -> Result<f64> {
    let m = x.manifold();
    let d = m.dim();
    let u0 = chart.to_coords(x)?;
    let h = FD_STEP;
    let eval = |u: &[f64; 3]| -> Result<f64> { Ok(f.value(&chart.from_coords(m, u)?)) };

    // flux_i(u) = sqrt(G) g^{ij} d_j f at u
    let flux = |u: &[f64; 3], i: usize| -> Result<f64> {
        let g = chart.metric(m, u)?;
        let (inv, det) = invert_small(&g, d);
        let mut s = 0.0;
        for j in 0..d {
            let mut up = *u;
            let mut dn = *u;
            up[j] += h;
            dn[j] -= h;
            let dj = (eval(&up)? - eval(&dn)?) / (2.0 * h);
            s += inv[i][j] * dj;
        }
        Ok(det.sqrt() * s)
    };

    let (_, det0) = invert_small(&chart.metric(m, &u0)?, d);
    let mut div = 0.0;
    for i in 0..d {
        let mut up = u0;
        let mut dn = u0;
        up[i] += h;
        dn[i] -= h;
        div += (flux(&up, i)? - flux(&dn, i)?) / (2.0 * h);
    }
    Ok(div / det0.sqrt())
}

/// Inverse and determinant of a small symmetric matrix.
fn invert_small(g: &[[f64; 3]; 3], d: usize) -> ([[f64; 3]; 3], f64) {
    let mut inv = [[0.0; 3]; 3];
    match d {
        1 => {
            inv[0][0] = 1.0 / g[0][0];
            (inv, g[0][0])
        }
        2 => {
            let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            inv[0][0] = g[1][1] / det;
            inv[1][1] = g[0][0] / det;
            inv[0][1] = -g[0][1] / det;
            inv[1][0] = -g[1][0] / det;
            (inv, det)
        }
        _ => {
            let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
                - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
                + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
            for i in 0..3 {
                for j in 0..3 {
                    let (a0, a1) = ((j + 1) % 3, (j + 2) % 3);
                    let (b0, b1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (g[a0][b0] * g[a1][b1] - g[a0][b1] * g[a1][b0]) / det;
                }
            }
            (inv, det)
        }
    }
}

/// Value and differential of the containment function
/// `Upsilon(x) = log(1 + f(x)^2) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Containment {
    pub value: f64,
    pub differential: Covector,
}

/// The smooth proxy `f` for the distance from `x0` together with its
/// differential at `x`.
///
/// * Euclidean: `sqrt(1 + r^2) - 1`, which satisfies `|f - r| <= 1` and
///   `|df| <= 1`.
/// * Sphere: `1 - <x, x0>`.
/// * Torus: `2 sum_k (1 - cos(x_k - x0_k))`.
pub fn containment_profile(x0: &Point, x: &Point) -> (f64, Covector) {
    match x.manifold() {
        Manifold::Euclidean(d) => {
            let diff: Vec<f64> = (0..d).map(|k| x.raw()[k] - x0.raw()[k]).collect();
            let r2: f64 = diff.iter().map(|c| c * c).sum();
            let s = (1.0 + r2).sqrt();
            let df: Vec<f64> = diff.iter().map(|c| c / s).collect();
            (s - 1.0, Covector::from_components(*x, &df))
        }
        Manifold::Sphere2 => {
            let f = 1.0 - dot(x.raw(), x0.raw());
            let [e1, e2, _] = x.frame();
            let df = [-dot(&e1, x0.raw()), -dot(&e2, x0.raw())];
            (f, Covector::from_components(*x, &df))
        }
        Manifold::Torus2 => {
            let mut f = 0.0;
            let mut df = [0.0; 2];
            for k in 0..2 {
                let delta = x.raw()[k] - x0.raw()[k];
                f += 2.0 * (1.0 - delta.cos());
                df[k] = 2.0 * delta.sin();
            }
            (f, Covector::from_components(*x, &df))
        }
    }
}

/// Containment function centered at `x0`, evaluated at `x`.
pub fn containment(x0: &Point, x: &Point) -> Containment {
    let (f, df) = containment_profile(x0, x);
    let value = 0.5 * (1.0 + f * f).ln();
    Containment {
        value,
        differential: df.scale(f / (1.0 + f * f)),
    }
}

/// The containment function as a [`ScalarField`].
#[derive(Debug, Clone, Copy)]
pub struct ContainmentField {
    pub center: Point,
}

impl ScalarField for ContainmentField {
    fn value(&self, x: &Point) -> f64 {
        containment(&self.center, x).value
    }

    fn closed_differential(&self, x: &Point) -> Option<Covector> {
        Some(containment(&self.center, x).differential)
    }
}

/// Smooth cutoff of the half squared distance: equals `d^2/2` while
/// `d^2/2 <= R/2`, is constant (`5R/8`) once `d^2/2 >= 3R/4`, and blends in
/// between with slope `1 - s(u)` where `s` is the quintic smoothstep.
pub fn smooth_dist_cutoff(radius: f64, x: &Point, y: &Point) -> f64 {
    let d = distance(x, y);
    cutoff_profile(radius, 0.5 * d * d)
}

pub(crate) fn cutoff_profile(radius: f64, s: f64) -> f64 {
    let start = 0.5 * radius;
    let width = 0.25 * radius;
    if s <= start {
        return s;
    }
    let u = ((s - start) / width).min(1.0);
    // integral of the smoothstep 6u^5 - 15u^4 + 10u^3 from 0 to u
    let smooth_int = u.powi(6) - 3.0 * u.powi(5) + 2.5 * u.powi(4);
    start + width * (u - smooth_int)
}
