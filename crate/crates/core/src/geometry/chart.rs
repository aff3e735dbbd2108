//! Coordinate charts and the push-forward / pull-back of vectors and
//! covectors into chart coordinates.

use super::vec3::{dot, Vec3};
use super::{log_map, Covector, Manifold, Point, TangentVector};
use crate::error::{Error, Result};

/// Minimum angular distance between a point and the projection pole for the
/// stereographic charts.
const STEREO_POLE_MARGIN: f64 = std::f64::consts::PI / 6.0;
/// Maximum geodesic radius of a normal chart on the sphere.
const SPHERE_NORMAL_RADIUS: f64 = 2.5;

/// A coordinate chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chart {
    /// Stored coordinates themselves (flat spaces only; on the torus this is
    /// the periodic square).
    Identity,
    /// Stereographic projection of the sphere from the north pole
    /// (`from_north = true`) or from the south pole.
    Stereographic { from_north: bool },
    /// Riemannian normal coordinates `u -> exp_c(u_k E_k(c))` centered at `c`.
    Normal { center: Point },
}

impl Chart {
    pub fn name(&self) -> String {
        match self {
            Chart::Identity => "identity".into(),
            Chart::Stereographic { from_north: true } => "stereographic-north".into(),
            Chart::Stereographic { from_north: false } => "stereographic-south".into(),
            Chart::Normal { center } => format!("normal@{:?}", center.coords()),
        }
    }

    fn domain_error(&self) -> Error {
        Error::ChartDomain { chart: self.name() }
    }

    fn check_manifold(&self, m: Manifold) -> Result<()> {
        let ok = match self {
            Chart::Identity => !matches!(m, Manifold::Sphere2),
            Chart::Stereographic { .. } => matches!(m, Manifold::Sphere2),
            Chart::Normal { center } => center.manifold() == m,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ContractViolation(format!(
                "chart {} does not apply to {}",
                self.name(),
                m
            )))
        }
    }

    /// Chart coordinates of `x` (first `dim` entries are meaningful).
    pub fn to_coords(&self, x: &Point) -> Result<Vec3> {
        let m = x.manifold();
        self.check_manifold(m)?;
        let c = x.raw();
        match self {
            Chart::Identity => Ok(*c),
            Chart::Stereographic { from_north } => {
                let pole = if *from_north { 1.0 } else { -1.0 };
                if pole * c[2] > STEREO_POLE_MARGIN.cos() {
                    return Err(self.domain_error());
                }
                let denom = 1.0 - pole * c[2];
                Ok([c[0] / denom, c[1] / denom, 0.0])
            }
            Chart::Normal { center } => {
                match m {
                    Manifold::Sphere2 => {
                        if super::distance(center, x) > SPHERE_NORMAL_RADIUS {
                            return Err(self.domain_error());
                        }
                    }
                    Manifold::Torus2 => {
                        // open square of side 2pi around the center
                        let d = super::torus_delta(center, x);
                        if d[0].abs() >= std::f64::consts::PI - super::CUT_LOCUS_GUARD
                            || d[1].abs() >= std::f64::consts::PI - super::CUT_LOCUS_GUARD
                        {
                            return Err(self.domain_error());
                        }
                        return Ok(d);
                    }
                    Manifold::Euclidean(_) => {}
                }
                let v = log_map(center, x).map_err(|_| self.domain_error())?;
                let mut u = [0.0; 3];
                u[..m.dim()].copy_from_slice(v.components());
                Ok(u)
            }
        }
    }

    /// Point with chart coordinates `u`.
    pub fn from_coords(&self, m: Manifold, u: &[f64]) -> Result<Point> {
        self.check_manifold(m)?;
        let mut uu = [0.0; 3];
        for (dst, src) in uu.iter_mut().zip(u.iter()).take(m.dim()) {
            *dst = *src;
        }
        match self {
            Chart::Identity => Ok(Point::from_raw(m, uu)),
            Chart::Stereographic { from_north } => {
                let pole = if *from_north { 1.0 } else { -1.0 };
                let s = uu[0] * uu[0] + uu[1] * uu[1] + 1.0;
                Ok(Point::from_raw(
                    m,
                    [2.0 * uu[0] / s, 2.0 * uu[1] / s, pole * (s - 2.0) / s],
                ))
            }
            Chart::Normal { center } => {
                let v = TangentVector::from_components(*center, &uu);
                Ok(super::exp_unchecked(center, &v))
            }
        }
    }

    /// Columns `d psi / d u_i` of the parametrization at chart coordinates
    /// `u`, expressed in the ambient representation of tangent vectors.
    pub fn jacobian(&self, m: Manifold, u: &[f64]) -> Result<[Vec3; 3]> {
        self.check_manifold(m)?;
        let mut uu = [0.0; 3];
        for (dst, src) in uu.iter_mut().zip(u.iter()).take(m.dim()) {
            *dst = *src;
        }
        let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        match (self, m) {
            (_, Manifold::Euclidean(_)) | (_, Manifold::Torus2) => Ok(identity),
            (Chart::Stereographic { from_north }, Manifold::Sphere2) => {
                let pole = if *from_north { 1.0 } else { -1.0 };
                let s = uu[0] * uu[0] + uu[1] * uu[1] + 1.0;
                let s2 = s * s;
                let mut cols = [[0.0; 3]; 3];
                for i in 0..2 {
                    for k in 0..2 {
                        let delta = if i == k { 2.0 / s } else { 0.0 };
                        cols[i][k] = delta - 4.0 * uu[k] * uu[i] / s2;
                    }
                    cols[i][2] = pole * 4.0 * uu[i] / s2;
                }
                Ok(cols)
            }
            (Chart::Normal { center }, Manifold::Sphere2) => {
                let [e1, e2, _] = center.frame();
                let c = center.raw();
                let r = (uu[0] * uu[0] + uu[1] * uu[1]).sqrt();
                let w: Vec3 = std::array::from_fn(|k| uu[0] * e1[k] + uu[1] * e2[k]);
                let (sin_r, cos_r) = r.sin_cos();
                // sinc(r) and (cos r - sinc r) / r^2 with series near zero
                let (sinc, g) = if r < 1e-4 {
                    let r2 = r * r;
                    (1.0 - r2 / 6.0, -1.0 / 3.0 + r2 / 30.0)
                } else {
                    (sin_r / r, (cos_r - sin_r / r) / (r * r))
                };
                let mut cols = [[0.0; 3]; 3];
                for (i, e) in [e1, e2].iter().enumerate() {
                    for k in 0..3 {
                        cols[i][k] = -sinc * uu[i] * c[k] + g * uu[i] * w[k] + sinc * e[k];
                    }
                }
                Ok(cols)
            }
            (Chart::Identity, Manifold::Sphere2) => unreachable!("rejected by check_manifold"),
        }
    }

    /// Metric tensor `g_ij = <d_i psi, d_j psi>` at chart coordinates `u`.
    pub fn metric(&self, m: Manifold, u: &[f64]) -> Result<[[f64; 3]; 3]> {
        let j = self.jacobian(m, u)?;
        let d = m.dim();
        let mut g = [[0.0; 3]; 3];
        for a in 0..d {
            for b in 0..d {
                g[a][b] = dot(&j[a], &j[b]);
            }
        }
        Ok(g)
    }
}

/// A tangent or cotangent vector to be expressed in a chart.
#[derive(Debug, Clone, Copy)]
pub enum ChartVector {
    Tangent(TangentVector),
    Cotangent(Covector),
}

/// Coordinate representation of a point together with a vector or covector
/// in the coordinate (dual) basis of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartRep {
    pub coords: Vec<f64>,
    pub components: Vec<f64>,
}

/// Push-forward of a tangent vector or pull-back-inverse of a covector into
/// the coordinate basis of `chart` at `x`.
pub fn chart_transform(x: &Point, v: &ChartVector, chart: &Chart) -> Result<ChartRep> {
    let m = x.manifold();
    let base = match v {
        ChartVector::Tangent(t) => t.base(),
        ChartVector::Cotangent(p) => p.base(),
    };
    if base != x {
        return Err(Error::ContractViolation(
            "vector is not based at the chart point".into(),
        ));
    }
    let u = chart.to_coords(x)?;
    let d = m.dim();
    let jac = chart.jacobian(m, &u)?;
    let components = match v {
        ChartVector::Tangent(t) => {
            // J a = v  <=>  G a = J^T v for tangent v
            let amb = ambient3(t);
            let g = chart.metric(m, &u)?;
            let rhs: Vec<f64> = (0..d).map(|i| dot(&jac[i], &amb)).collect();
            solve_small(&g, &rhs, d)
        }
        ChartVector::Cotangent(p) => {
            let amb = ambient3(&p.raise());
            (0..d).map(|i| dot(&jac[i], &amb)).collect()
        }
    };
    Ok(ChartRep {
        coords: u[..d].to_vec(),
        components,
    })
}

impl ChartRep {
    /// Inverse of [`chart_transform`] for tangent vectors.
    pub fn to_tangent(&self, m: Manifold, chart: &Chart) -> Result<TangentVector> {
        let x = chart.from_coords(m, &self.coords)?;
        let jac = chart.jacobian(m, &self.coords)?;
        let mut amb = [0.0; 3];
        for (i, a) in self.components.iter().enumerate() {
            for k in 0..3 {
                amb[k] += a * jac[i][k];
            }
        }
        Ok(TangentVector::from_ambient(x, &amb[..m.coord_dim()]))
    }

    /// Inverse of [`chart_transform`] for covectors.
    pub fn to_covector(&self, m: Manifold, chart: &Chart) -> Result<Covector> {
        let d = m.dim();
        let x = chart.from_coords(m, &self.coords)?;
        let jac = chart.jacobian(m, &self.coords)?;
        let g = chart.metric(m, &self.coords)?;
        let raised = solve_small(&g, &self.components, d);
        let mut amb = [0.0; 3];
        for (i, a) in raised.iter().enumerate() {
            for k in 0..3 {
                amb[k] += a * jac[i][k];
            }
        }
        Ok(TangentVector::from_ambient(x, &amb[..m.coord_dim()]).lower())
    }
}

fn ambient3(t: &TangentVector) -> Vec3 {
    let mut a = [0.0; 3];
    a[..t.ambient().len()].copy_from_slice(t.ambient());
    a
}

/// Solves the symmetric positive definite system `g x = b` of size `d <= 3`
/// by Cholesky factorization.
pub(crate) fn solve_small(g: &[[f64; 3]; 3], b: &[f64], d: usize) -> Vec<f64> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..=i {
            let mut s = g[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}
