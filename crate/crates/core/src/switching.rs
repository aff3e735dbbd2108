//! The finite fast component: rate matrices, invariant measures, the
//! Donsker-Varadhan functional and the averaged drift.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Manifold, Point, TangentVector};

/// Tolerance on generator row sums, relative to `1 + max |q_ij|`.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A state of the fast process. Stored 0-based; [`SwitchState::label`] is the
/// 1-based label used in serialized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SwitchState(usize);

impl SwitchState {
    pub fn from_index(index: usize) -> Self {
        SwitchState(index)
    }

    /// From a 1-based label, checked against the state count.
    pub fn from_label(label: usize, n_states: usize) -> Result<Self> {
        if label == 0 || label > n_states {
            return Err(Error::InvalidConfig(format!(
                "switch state {label} outside 1..={n_states}"
            )));
        }
        Ok(SwitchState(label - 1))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn label(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for SwitchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A probability vector on the finite state set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::ContractViolation("empty probability vector".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::ContractViolation(format!(
                "probability weights must be nonnegative: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::ContractViolation(format!(
                "probability weights sum to {total}"
            )));
        }
        Ok(ProbVector(weights))
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ContractViolation("weights have no mass".into()));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A state-dependent generator `x -> (q_ij(x))` of the fast process.
pub trait RateField: Send + Sync {
    fn n_states(&self) -> usize;

    fn matrix(&self, x: &Point) -> DMatrix<f64>;

    /// Upper bound on the exit rate `-q_ii(x)` over the manifold.
    fn max_exit_rate(&self) -> f64;

    /// Whether the matrix is independent of `x`.
    fn is_constant(&self) -> bool {
        false
    }
}

/// Per-state drift `b(x, i)`.
pub trait DriftField: Send + Sync {
    fn drift(&self, x: &Point, state: SwitchState) -> TangentVector;

    /// Whether the frame components of the drift are independent of `x`
    /// (only meaningful on flat manifolds).
    fn is_constant(&self) -> bool {
        false
    }
}

/// Builtin rate families selectable from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFamily {
    /// A single state, no switching.
    Single,
    /// Two states with `q_12 = a`, `q_21 = b`.
    TwoState { a: f64, b: f64 },
    /// Three states on a directed cycle `1 -> 2 -> 3 -> 1`.
    Cycle3 { rate: f64 },
    /// Two states with `q_12(x) = a0 + a1 s(x)` and `q_21 = a0`, where
    /// `s` is a smooth function with values in `[-1, 1]`.
    TwoStateSpatial { a0: f64, a1: f64 },
    /// A constant matrix.
    Matrix(DMatrix<f64>),
}

/// The bounded modulation used by [`RateFamily::TwoStateSpatial`]:
/// `tanh(x_1)` on Euclidean space, the first ambient coordinate on the
/// sphere, `sin(x_1)` on the torus.
pub fn spatial_modulation(x: &Point) -> f64 {
    let c = x.coords()[0];
    match x.manifold() {
        Manifold::Euclidean(_) => c.tanh(),
        Manifold::Sphere2 => c,
        Manifold::Torus2 => c.sin(),
    }
}

impl RateFamily {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidGenerator(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            RateFamily::Single => Ok(()),
            RateFamily::TwoState { a, b } => positive("a", *a).and(positive("b", *b)),
            RateFamily::Cycle3 { rate } => positive("rate", *rate),
            RateFamily::TwoStateSpatial { a0, a1 } => positive("a0 - |a1|", a0 - a1.abs()),
            RateFamily::Matrix(q) => validate_generator(q),
        }
    }
}

impl RateField for RateFamily {
    fn n_states(&self) -> usize {
        match self {
            RateFamily::Single => 1,
            RateFamily::TwoState { .. } | RateFamily::TwoStateSpatial { .. } => 2,
            RateFamily::Cycle3 { .. } => 3,
            RateFamily::Matrix(q) => q.nrows(),
        }
    }

    fn matrix(&self, x: &Point) -> DMatrix<f64> {
        match self {
            RateFamily::Single => DMatrix::zeros(1, 1),
            RateFamily::TwoState { a, b } => DMatrix::from_row_slice(2, 2, &[-a, *a, *b, -b]),
            RateFamily::Cycle3 { rate } => {
                let r = *rate;
                DMatrix::from_row_slice(3, 3, &[-r, r, 0.0, 0.0, -r, r, r, 0.0, -r])
            }
            RateFamily::TwoStateSpatial { a0, a1 } => {
                let q12 = a0 + a1 * spatial_modulation(x);
                DMatrix::from_row_slice(2, 2, &[-q12, q12, *a0, -a0])
            }
            RateFamily::Matrix(q) => q.clone(),
        }
    }

    fn max_exit_rate(&self) -> f64 {
        match self {
            RateFamily::Single => 0.0,
            RateFamily::TwoState { a, b } => a.max(*b),
            RateFamily::Cycle3 { rate } => *rate,
            RateFamily::TwoStateSpatial { a0, a1 } => a0 + a1.abs(),
            RateFamily::Matrix(q) => (0..q.nrows()).map(|i| -q[(i, i)]).fold(0.0, f64::max),
        }
    }

    fn is_constant(&self) -> bool {
        !matches!(self, RateFamily::TwoStateSpatial { .. })
    }
}

/// Builtin drift families selectable from configuration.
///
/// Constant vectors are given in stored coordinates: on flat spaces they are
/// frame components, on the sphere they are ambient vectors projected onto
/// the tangent plane.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftFamily {
    /// `b = 0` for every state.
    Zero,
    /// One constant vector per state.
    States(Vec<Vec<f64>>),
    /// Two states with drifts `+beta e_1` and `-beta e_1`.
    TwoState { beta: f64 },
    /// `b(x, i) = offset_i - k grad V(x)` where `V` is `|x|^2/2` on
    /// Euclidean space, `sum (1 - cos x_k)` on the torus and `1 - x_3` on
    /// the sphere.
    Relax { k: f64, offsets: Vec<Vec<f64>> },
}

impl DriftFamily {
    /// Number of states the family describes, `None` when it adapts to any
    /// state count.
    pub fn n_states(&self) -> Option<usize> {
        match self {
            DriftFamily::Zero => None,
            DriftFamily::States(v) => Some(v.len()),
            DriftFamily::TwoState { .. } => Some(2),
            DriftFamily::Relax { offsets, .. } => {
                if offsets.is_empty() {
                    None
                } else {
                    Some(offsets.len())
                }
            }
        }
    }
}

fn constant_vector(x: &Point, v: &[f64]) -> TangentVector {
    let mut amb = [0.0; 3];
    for (dst, src) in amb.iter_mut().zip(v) {
        *dst = *src;
    }
    TangentVector::from_ambient(*x, &amb[..x.manifold().coord_dim()])
}

fn relax_gradient(x: &Point) -> TangentVector {
    let c = x.coords();
    match x.manifold() {
        Manifold::Euclidean(_) => TangentVector::from_components(*x, c),
        Manifold::Torus2 => TangentVector::from_components(*x, &[c[0].sin(), c[1].sin()]),
        Manifold::Sphere2 => TangentVector::from_ambient(*x, &[0.0, 0.0, -1.0]),
    }
}

impl DriftField for DriftFamily {
    fn drift(&self, x: &Point, state: SwitchState) -> TangentVector {
        match self {
            DriftFamily::Zero => x.zero_tangent(),
            DriftFamily::States(v) => constant_vector(x, &v[state.index()]),
            DriftFamily::TwoState { beta } => {
                let sign = if state.index() == 0 { 1.0 } else { -1.0 };
                constant_vector(x, &[sign * beta])
            }
            DriftFamily::Relax { k, offsets } => {
                let g = relax_gradient(x).scale(-k);
                match offsets.get(state.index()) {
                    Some(o) => g.add(&constant_vector(x, o)).expect("same base point"),
                    None => g,
                }
            }
        }
    }

    fn is_constant(&self) -> bool {
        !matches!(self, DriftFamily::Relax { .. })
    }
}

/// Drift given by a closure.
pub struct FnDrift<F>(pub F);

impl<F> DriftField for FnDrift<F>
where
    F: Fn(&Point, SwitchState) -> TangentVector + Send + Sync,
{
    fn drift(&self, x: &Point, state: SwitchState) -> TangentVector {
        (self.0)(x, state)
    }
}

/// Rate field given by a closure together with its state count and exit
/// rate bound.
pub struct FnRates<F> {
    pub n_states: usize,
    pub max_exit_rate: f64,
    pub matrix: F,
}

impl<F> RateField for FnRates<F>
where
    F: Fn(&Point) -> DMatrix<f64> + Send + Sync,
{
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn matrix(&self, x: &Point) -> DMatrix<f64> {
        (self.matrix)(x)
    }

    fn max_exit_rate(&self) -> f64 {
        self.max_exit_rate
    }
}

/// A slow-fast model: manifold, per-state drift and switching rates.
#[derive(Clone)]
pub struct Model {
    pub manifold: Manifold,
    pub drift: Arc<dyn DriftField>,
    pub rates: Arc<dyn RateField>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("manifold", &self.manifold)
            .field("n_states", &self.n_states())
            .finish()
    }
}

impl Model {
    pub fn new(
        manifold: Manifold,
        drift: Arc<dyn DriftField>,
        rates: Arc<dyn RateField>,
    ) -> Self {
        Model {
            manifold,
            drift,
            rates,
        }
    }

    /// Builds a model from builtin families, checking that they agree on
    /// the state count.
    pub fn from_families(manifold: Manifold, drift: DriftFamily, rates: RateFamily) -> Result<Self> {
        rates.validate()?;
        if let Some(n) = drift.n_states() {
            if n != rates.n_states() {
                return Err(Error::InvalidConfig(format!(
                    "drift family describes {n} states, rate family {}",
                    rates.n_states()
                )));
            }
        }
        Ok(Model::new(manifold, Arc::new(drift), Arc::new(rates)))
    }

    pub fn n_states(&self) -> usize {
        self.rates.n_states()
    }

    /// True when neither drift components nor rates depend on position on a
    /// flat manifold, so that the Hamiltonian is position independent.
    pub fn is_homogeneous(&self) -> bool {
        !matches!(self.manifold, Manifold::Sphere2)
            && self.drift.is_constant()
            && self.rates.is_constant()
    }

    pub fn drift_at(&self, x: &Point, state: SwitchState) -> TangentVector {
        self.drift.drift(x, state)
    }
}

/// Checks that `q` is a conservative irreducible generator.
pub fn validate_generator(q: &DMatrix<f64>) -> Result<()> {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return Err(Error::InvalidGenerator(format!(
            "generator must be square and nonempty, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let scale = 1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let v = q[(i, j)];
            if !v.is_finite() {
                return Err(Error::InvalidGenerator(format!("entry ({i},{j}) is not finite")));
            }
            if i != j && v < 0.0 {
                return Err(Error::InvalidGenerator(format!(
                    "negative off-diagonal rate q[{i},{j}] = {v}"
                )));
            }
            sum += v;
        }
        if sum.abs() > ROW_SUM_TOL * scale {
            return Err(Error::InvalidGenerator(format!("row {i} sums to {sum}")));
        }
    }
    if !is_irreducible(q) {
        return Err(Error::InvalidGenerator("generator is reducible".into()));
    }
    Ok(())
}

/// Strong connectivity of the transition graph `i -> j` for `q_ij > 0`.
pub fn is_irreducible(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let reach_all = |transpose: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let rate = if transpose { q[(j, i)] } else { q[(i, j)] };
                if j != i && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach_all(false) && reach_all(true)
}

/// The generator at `x`, optionally validated.
pub fn rate_matrix(field: &dyn RateField, x: &Point, validate: bool) -> Result<DMatrix<f64>> {
    let q = field.matrix(x);
    if validate {
        validate_generator(&q)?;
    }
    Ok(q)
}

/// Unique invariant probability vector `pi Q = 0` of a conservative
/// irreducible generator, from the augmented least-squares system
/// `[Q^T; 1^T] pi = (0, ..., 0, 1)`.
pub fn invariant_measure(q: &DMatrix<f64>) -> Result<ProbVector> {
    let n = q.nrows();
    if n == 1 {
        return Ok(ProbVector(vec![1.0]));
    }
    if !is_irreducible(q) {
        return Err(Error::NoUniqueInvariant("generator is reducible".into()));
    }
    let mut a = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = q[(j, i)];
        }
        a[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let svd = a.svd(true, true);
    let pi = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::NoUniqueInvariant(e.to_string()))?;
    if pi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::NoUniqueInvariant(format!(
            "solution is not strictly positive: {:?}",
            pi.as_slice()
        )));
    }
    ProbVector::normalized(pi.iter().copied().collect())
}

/// Averaged drift `sum_i pi_i(x) b(x, i)`.
pub fn averaged_drift(b: &dyn DriftField, field: &dyn RateField, x: &Point) -> Result<TangentVector> {
    let q = field.matrix(x);
    let pi = invariant_measure(&q)?;
    let mut acc = [0.0; 3];
    let d = x.manifold().dim();
    for (i, w) in pi.weights().iter().enumerate() {
        let v = b.drift(x, SwitchState(i));
        for k in 0..d {
            acc[k] += w * v.components()[k];
        }
    }
    Ok(TangentVector::from_components(*x, &acc[..d]))
}

/// Objective `sum_z pi_z (R g)(z) / g(z)` with `g = exp(u)`, restricted to
/// the support of `pi` (states outside it are sent to `g = 0`, which is
/// where the infimum over those coordinates lies).
struct DvObjective<'a> {
    q: &'a DMatrix<f64>,
    pi: &'a [f64],
    support: Vec<usize>,
}

impl DvObjective<'_> {
    fn expand(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![f64::NEG_INFINITY; self.q.nrows()];
        for (a, &z) in self.support.iter().enumerate() {
            full[z] = u[a];
        }
        full
    }

    fn value(&self, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for (a, &z) in self.support.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..self.q.nrows() {
                if j == z {
                    continue;
                }
                let rate = self.q[(z, j)];
                match self.support.iter().position(|&k| k == j) {
                    Some(b) => s += rate * ((u[b] - u[a]).exp() - 1.0),
                    None => s -= rate,
                }
            }
            total += self.pi[z] * s;
        }
        total
    }

    /// Gradient and Hessian in the free coordinates `u[1..]`.
    fn derivatives(&self, u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.support.len();
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for (a, &z) in self.support.iter().enumerate() {
            for (b, &j) in self.support.iter().enumerate() {
                if a == b {
                    continue;
                }
                // term pi_z q_zj exp(u_b - u_a)
                let t = self.pi[z] * self.q[(z, j)] * (u[b] - u[a]).exp();
                grad[b] += t;
                grad[a] -= t;
                hess[(b, b)] += t;
                hess[(a, a)] += t;
                hess[(a, b)] -= t;
                hess[(b, a)] -= t;
            }
        }
        let free = m - 1;
        let g = DVector::from_iterator(free, grad.iter().skip(1).copied());
        let h = hess.view((1, 1), (free, free)).into_owned();
        (g, h)
    }
}

/// Donsker-Varadhan functional `-inf_{g > 0} sum_z pi_z (R g)(z) / g(z)`.
///
/// Minimizes over `g = exp(u)` with the gauge `u_1 = 0` by damped Newton with
/// backtracking; the start `g = 1` has objective zero, so the result is
/// nonnegative.
pub fn donsker_varadhan(q: &DMatrix<f64>, pi: &ProbVector) -> Result<f64> {
    donsker_varadhan_with_minimizer(q, pi).map(|(v, _)| v)
}

/// As [`donsker_varadhan`], also returning the minimizing `u = log g` over
/// all states (`-inf` outside the support of `pi`, `u = 0` at the first
/// supported state).
pub fn donsker_varadhan_with_minimizer(q: &DMatrix<f64>, pi: &ProbVector) -> Result<(f64, Vec<f64>)> {
    let n = q.nrows();
    if pi.len() != n {
        return Err(Error::ContractViolation(format!(
            "probability vector has {} entries for {n} states",
            pi.len()
        )));
    }
    let support: Vec<usize> = (0..n).filter(|&i| pi.weights()[i] > 0.0).collect();
    let obj = DvObjective {
        q,
        pi: pi.weights(),
        support,
    };
    let m = obj.support.len();
    if m == 1 {
        return Ok(((-obj.value(&[0.0])).max(0.0), obj.expand(&[0.0])));
    }
    let mut u = vec![0.0; m];
    let mut f = obj.value(&u);
    let mut damping = 0.0;
    const MAX_ITER: usize = 500;
    const MAX_STEP: f64 = 4.0;
    for _ in 0..MAX_ITER {
        let (g, h) = obj.derivatives(&u);
        let gnorm = g.norm();
        if gnorm < 1e-10 {
            return Ok(((-f).max(0.0), obj.expand(&u)));
        }
        let free = m - 1;
        let mut step = None;
        for _ in 0..40 {
            let mut hd = h.clone();
            let shift = damping * (1.0 + h.diagonal().amax());
            for k in 0..free {
                hd[(k, k)] += shift;
            }
            if let Some(chol) = hd.cholesky() {
                step = Some(-chol.solve(&g));
                break;
            }
            damping = if damping == 0.0 { 1e-10 } else { damping * 10.0 };
        }
        let mut dir = step.unwrap_or_else(|| -g.clone());
        let len = dir.norm();
        if len > MAX_STEP {
            dir *= MAX_STEP / len;
        }
        let slope = g.dot(&dir);
        // squared Newton decrement at rounding level: converged
        if -slope <= 1e-17 * (1.0 + f.abs()) {
            return Ok(((-f).max(0.0), obj.expand(&u)));
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain((0..free).map(|k| u[k + 1] + t * dir[k]))
                .collect();
            let ft = obj.value(&trial);
            if ft <= f + 1e-4 * t * slope && trial[1..] != u[1..] {
                u = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no further decrease representable in floating point
            if gnorm < 1e-7 {
                return Ok(((-f).max(0.0), obj.expand(&u)));
            }
            damping = if damping == 0.0 { 1e-6 } else { damping * 10.0 };
            if damping > 1e12 {
                break;
            }
        } else {
            damping *= 0.1;
        }
    }
    let (g, _) = obj.derivatives(&u);
    Err(Error::numerical(
        "donsker_varadhan",
        format!("Newton did not converge: gradient norm {:.3e}, objective {f}", g.norm()),
    ))
}
