//! Closed-form differential geometry on a small catalog of manifolds.
//!
//! Three spaces are supported: flat Euclidean space of dimension one to
//! three, the round unit sphere embedded in R^3, and the flat torus
//! `[0, 2pi)^2`. Every primitive (exponential and logarithmic maps,
//! distance, parallel transport) has an analytic formula; finite differences
//! appear only in [`field`] for differentials and the Laplace-Beltrami
//! operator of user-supplied scalar fields.
//!
//! Tangent and cotangent vectors are stored by their components in a
//! deterministic orthonormal frame at the base point. On the sphere the
//! frame is obtained by Gram-Schmidt of `e1` (or `e2` when the base point is
//! nearly parallel to `e1`) against the base point, completed by a cross
//! product.

mod chart;
mod field;
mod vec3;

pub use chart::{chart_transform, Chart, ChartRep, ChartVector};
pub use field::{
    containment, containment_profile, differential, fd_differential, laplace_beltrami,
    laplace_beltrami_in_chart, smooth_dist_cutoff, Containment, ContainmentField,
    ScalarField, WithDifferential, FD_STEP,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use vec3::{cross, dot, norm, scale, sub, Vec3};

/// Width of the band below the injectivity radius inside which geodesic
/// uniqueness is not trusted.
pub const CUT_LOCUS_GUARD: f64 = 1e-9;

const TWO_PI: f64 = 2.0 * PI;

/// One of the supported manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Manifold {
    /// R^d with d in {1, 2, 3}.
    Euclidean(usize),
    /// Unit sphere in R^3.
    Sphere2,
    /// Flat torus with period 2pi in both coordinates.
    Torus2,
}

impl Manifold {
    pub fn euclidean(d: usize) -> Result<Self> {
        if (1..=3).contains(&d) {
            Ok(Manifold::Euclidean(d))
        } else {
            Err(Error::UnknownManifold(format!("euclidean:{d}")))
        }
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Euclidean(d) => *d,
            Manifold::Sphere2 | Manifold::Torus2 => 2,
        }
    }

    /// Number of stored coordinates of a point.
    pub fn coord_dim(&self) -> usize {
        match self {
            Manifold::Euclidean(d) => *d,
            Manifold::Sphere2 => 3,
            Manifold::Torus2 => 2,
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match self {
            Manifold::Euclidean(_) => f64::INFINITY,
            Manifold::Sphere2 | Manifold::Torus2 => PI,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, Manifold::Euclidean(_))
    }

    /// Config-file identifier, e.g. `euclidean:2`, `sphere2`, `torus2`.
    pub fn id(&self) -> String {
        match self {
            Manifold::Euclidean(d) => format!("euclidean:{d}"),
            Manifold::Sphere2 => "sphere2".to_string(),
            Manifold::Torus2 => "torus2".to_string(),
        }
    }

    /// Builds a point from stored coordinates. Sphere coordinates must have
    /// unit norm to within 1e-6 and are renormalized; torus coordinates are
    /// reduced mod 2pi.
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.coord_dim() {
            return Err(Error::InvalidPoint(format!(
                "{} expects {} coordinates, got {}",
                self.id(),
                self.coord_dim(),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        match self {
            Manifold::Sphere2 => {
                let r = norm(&c);
                if (r - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidPoint(format!(
                        "sphere point has norm {r}, expected 1"
                    )));
                }
                Ok(Point::from_raw(*self, c))
            }
            _ => Ok(Point::from_raw(*self, c)),
        }
    }

    /// The distinguished origin: zero for flat spaces, the north pole on the
    /// sphere.
    pub fn origin(&self) -> Point {
        match self {
            Manifold::Sphere2 => Point::from_raw(*self, [0.0, 0.0, 1.0]),
            _ => Point::from_raw(*self, [0.0; 3]),
        }
    }

    /// Orthonormal frame at `x`, as ambient vectors (flat spaces use the
    /// coordinate basis). Only the first `dim()` entries are meaningful.
    pub fn frame(&self, x: &Point) -> [Vec3; 3] {
        match self {
            Manifold::Sphere2 => {
                let [e1, e2] = sphere_frame(&x.coords);
                [e1, e2, [0.0; 3]]
            }
            _ => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Manifold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sphere2" => Ok(Manifold::Sphere2),
            "torus2" => Ok(Manifold::Torus2),
            _ => {
                let d = s
                    .strip_prefix("euclidean:")
                    .and_then(|d| d.trim().parse::<usize>().ok())
                    .ok_or_else(|| Error::UnknownManifold(s.to_string()))?;
                Manifold::euclidean(d).map_err(|_| Error::UnknownManifold(s.to_string()))
            }
        }
    }
}

impl TryFrom<String> for Manifold {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Manifold> for String {
    fn from(m: Manifold) -> String {
        m.id()
    }
}

fn sphere_frame(x: &Vec3) -> [Vec3; 2] {
    let seed: Vec3 = if x[0].abs() > 0.9 {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let e1 = sub(&seed, &scale(x, dot(&seed, x)));
    let e1 = scale(&e1, 1.0 / norm(&e1));
    let e2 = cross(x, &e1);
    [e1, e2]
}

/// A point of one of the catalog manifolds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    manifold: Manifold,
    coords: Vec3,
}

impl Point {
    /// Normalizes onto the manifold without validation beyond finiteness.
    pub(crate) fn from_raw(manifold: Manifold, mut coords: Vec3) -> Self {
        match manifold {
            Manifold::Sphere2 => {
                let r = norm(&coords);
                coords = scale(&coords, 1.0 / r);
            }
            Manifold::Torus2 => {
                for c in coords.iter_mut().take(2) {
                    *c = c.rem_euclid(TWO_PI);
                    if *c >= TWO_PI {
                        *c = 0.0;
                    }
                }
                coords[2] = 0.0;
            }
            Manifold::Euclidean(d) => {
                for c in coords.iter_mut().skip(d) {
                    *c = 0.0;
                }
            }
        }
        Point { manifold, coords }
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    /// Stored coordinates (ambient R^3 for the sphere).
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.manifold.coord_dim()]
    }

    pub(crate) fn raw(&self) -> &Vec3 {
        &self.coords
    }

    pub fn frame(&self) -> [Vec3; 3] {
        self.manifold.frame(self)
    }

    /// Tangent vector at this point from frame components.
    pub fn tangent(&self, components: &[f64]) -> TangentVector {
        TangentVector::from_components(*self, components)
    }

    pub fn zero_tangent(&self) -> TangentVector {
        TangentVector::from_components(*self, &[0.0; 3][..self.manifold.dim()])
    }

    pub fn covector(&self, components: &[f64]) -> Covector {
        Covector::from_components(*self, components)
    }

    pub fn zero_covector(&self) -> Covector {
        Covector::from_components(*self, &[0.0; 3][..self.manifold.dim()])
    }

    fn same_as(&self, other: &Point) -> bool {
        self.manifold == other.manifold && self.coords == other.coords
    }
}

/// A tangent vector, stored by its components in the base point's
/// orthonormal frame together with its ambient representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    base: Point,
    components: Vec3,
    ambient: Vec3,
}

impl TangentVector {
    /// Builds a vector from frame components (missing trailing components
    /// are zero, extra ones are ignored).
    pub fn from_components(base: Point, components: &[f64]) -> Self {
        let d = base.manifold.dim();
        let mut c = [0.0; 3];
        for (dst, src) in c.iter_mut().zip(components.iter()).take(d) {
            *dst = *src;
        }
        let ambient = match base.manifold {
            Manifold::Sphere2 => {
                let [e1, e2, _] = base.frame();
                let mut a = [0.0; 3];
                for k in 0..3 {
                    a[k] = c[0] * e1[k] + c[1] * e2[k];
                }
                a
            }
            _ => c,
        };
        TangentVector {
            base,
            components: c,
            ambient,
        }
    }

    /// Builds a vector from an ambient representation; on the sphere the
    /// normal part is projected away.
    pub fn from_ambient(base: Point, ambient: &[f64]) -> Self {
        match base.manifold {
            Manifold::Sphere2 => {
                let mut a = [0.0; 3];
                a.copy_from_slice(&ambient[..3]);
                let [e1, e2, _] = base.frame();
                Self::from_components(base, &[dot(&a, &e1), dot(&a, &e2)])
            }
            _ => Self::from_components(base, ambient),
        }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn components(&self) -> &[f64] {
        &self.components[..self.base.manifold.dim()]
    }

    /// Ambient representation (R^3 on the sphere, coordinates otherwise).
    pub fn ambient(&self) -> &[f64] {
        &self.ambient[..self.base.manifold.coord_dim()]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.components)
    }

    pub fn dot(&self, other: &TangentVector) -> f64 {
        dot(&self.components, &other.components)
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        Self::from_components(self.base, &scale(&self.components, s))
    }

    /// Sum of two vectors at the same base point.
    pub fn add(&self, other: &TangentVector) -> Result<TangentVector> {
        check_base(&self.base, &other.base)?;
        let c = vec3::add(&self.components, &other.components);
        Ok(Self::from_components(self.base, &c))
    }

    /// Index lowering with the metric.
    pub fn lower(&self) -> Covector {
        Covector::from_components(self.base, self.components())
    }
}

/// A cotangent vector, stored by its components in the dual frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covector {
    base: Point,
    components: Vec3,
}

impl Covector {
    pub fn from_components(base: Point, components: &[f64]) -> Self {
        let d = base.manifold.dim();
        let mut c = [0.0; 3];
        for (dst, src) in c.iter_mut().zip(components.iter()).take(d) {
            *dst = *src;
        }
        Covector {
            base,
            components: c,
        }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn components(&self) -> &[f64] {
        &self.components[..self.base.manifold.dim()]
    }

    /// Dual norm with the metric.
    pub fn norm(&self) -> f64 {
        norm(&self.components)
    }

    /// Pairing `p(v)`.
    pub fn pair(&self, v: &TangentVector) -> Result<f64> {
        check_base(&self.base, &v.base)?;
        Ok(dot(&self.components, &v.components))
    }

    /// Index raising with the metric.
    pub fn raise(&self) -> TangentVector {
        TangentVector::from_components(self.base, self.components())
    }

    pub fn scale(&self, s: f64) -> Covector {
        Covector::from_components(self.base, &scale(&self.components, s))
    }

    pub fn add(&self, other: &Covector) -> Result<Covector> {
        check_base(&self.base, &other.base)?;
        Ok(Covector::from_components(
            self.base,
            &vec3::add(&self.components, &other.components),
        ))
    }
}

fn check_base(a: &Point, b: &Point) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::ContractViolation(format!(
            "base point mismatch: {:?} vs {:?}",
            a.coords(),
            b.coords()
        )))
    }
}

fn check_manifold(a: &Point, b: &Point) -> Result<()> {
    if a.manifold == b.manifold {
        Ok(())
    } else {
        Err(Error::ContractViolation(format!(
            "points on different manifolds: {} vs {}",
            a.manifold, b.manifold
        )))
    }
}

/// Wrapped coordinate difference `y - x` on the torus, in `[-pi, pi)`.
fn torus_delta(x: &Point, y: &Point) -> Vec3 {
    let mut d = [0.0; 3];
    for k in 0..2 {
        d[k] = (y.coords[k] - x.coords[k] + PI).rem_euclid(TWO_PI) - PI;
    }
    d
}

/// Geodesic distance.
pub fn distance(x: &Point, y: &Point) -> f64 {
    debug_assert_eq!(x.manifold, y.manifold);
    match x.manifold {
        Manifold::Euclidean(_) => norm(&sub(&y.coords, &x.coords)),
        Manifold::Torus2 => norm(&torus_delta(x, y)),
        Manifold::Sphere2 => sphere_angle(&x.coords, &y.coords),
    }
}

fn sphere_angle(x: &Vec3, y: &Vec3) -> f64 {
    norm(&cross(x, y)).atan2(dot(x, y))
}

/// `exp_x(v)`: endpoint at time one of the geodesic with initial velocity
/// `v`.
pub fn exp_map(x: &Point, v: &TangentVector) -> Result<Point> {
    check_base(x, &v.base)?;
    Ok(exp_unchecked(x, v))
}

pub(crate) fn exp_unchecked(x: &Point, v: &TangentVector) -> Point {
    match x.manifold {
        Manifold::Euclidean(_) | Manifold::Torus2 => {
            Point::from_raw(x.manifold, vec3::add(&x.coords, &v.components))
        }
        Manifold::Sphere2 => {
            let t = norm(&v.ambient);
            if t == 0.0 {
                return *x;
            }
            let (s, c) = t.sin_cos();
            let mut y = [0.0; 3];
            for k in 0..3 {
                y[k] = c * x.coords[k] + s * v.ambient[k] / t;
            }
            Point::from_raw(Manifold::Sphere2, y)
        }
    }
}

/// `log_x(y)`: initial velocity of the minimal geodesic from `x` reaching
/// `y` at time one. Fails inside the cut-locus guard band.
pub fn log_map(x: &Point, y: &Point) -> Result<TangentVector> {
    check_manifold(x, y)?;
    let d = distance(x, y);
    let radius = x.manifold.injectivity_radius();
    if d >= radius - CUT_LOCUS_GUARD {
        return Err(Error::CutLocus { distance: d, radius });
    }
    Ok(match x.manifold {
        Manifold::Euclidean(_) => {
            TangentVector::from_components(*x, &sub(&y.coords, &x.coords))
        }
        Manifold::Torus2 => TangentVector::from_components(*x, &torus_delta(x, y)),
        Manifold::Sphere2 => {
            let w = sub(&y.coords, &scale(&x.coords, dot(&x.coords, &y.coords)));
            let wn = norm(&w);
            if wn == 0.0 || d == 0.0 {
                x.zero_tangent()
            } else {
                TangentVector::from_ambient(*x, &scale(&w, d / wn))
            }
        }
    })
}

/// Parallel transport of `v` from `x` to `y` along the minimal geodesic.
pub fn parallel_transport(x: &Point, y: &Point, v: &TangentVector) -> Result<TangentVector> {
    check_base(x, &v.base)?;
    let dir = log_map(x, y)?;
    Ok(match x.manifold {
        Manifold::Euclidean(_) | Manifold::Torus2 => {
            TangentVector::from_components(*y, v.components())
        }
        Manifold::Sphere2 => {
            let theta = dir.norm();
            if theta == 0.0 {
                return Ok(TangentVector::from_components(*y, v.components()));
            }
            let u = scale(&dir.ambient, 1.0 / theta);
            let along = dot(&v.ambient, &u);
            let (s, c) = theta.sin_cos();
            let mut out = [0.0; 3];
            for k in 0..3 {
                let u_new = c * u[k] - s * x.coords[k];
                out[k] = v.ambient[k] - along * u[k] + along * u_new;
            }
            let t = TangentVector::from_ambient(*y, &out);
            // rotation is an isometry; remove rounding drift in the norm
            let target = v.norm();
            let got = t.norm();
            if got > 0.0 {
                t.scale(target / got)
            } else {
                t
            }
        }
    })
}

/// Differential at `x` of `z -> d^2(z, y) / 2`, i.e. `-log_x(y)` lowered.
pub fn grad_half_dist_sq(x: &Point, y: &Point) -> Result<Covector> {
    Ok(log_map(x, y)?.lower().scale(-1.0))
}

/// Tangent vector at `x` built from an ambient direction expressed in
/// stored coordinates; convenience for tests and configs.
pub fn tangent_from_ambient(x: &Point, ambient: &[f64]) -> TangentVector {
    TangentVector::from_ambient(*x, ambient)
}
