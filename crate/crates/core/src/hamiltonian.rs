//! The Hamiltonian as the principal eigenvalue of the tilted generator,
//! its momentum gradient and its Legendre transform.
//!
//! For a cotangent vector `p` at `x` the tilted generator is
//! `Q_{x,p} = diag(b(x,i) p + |p|^2 / 2) + Q(x)`. It is an irreducible
//! Metzler matrix whenever `Q(x)` is irreducible, so it has a simple real
//! eigenvalue of largest real part with strictly positive left and right
//! eigenvectors. That eigenvalue is `H(x, p)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{Covector, Point, TangentVector};
use crate::switching::{is_irreducible, DriftField, Model, ProbVector, SwitchState};

/// Stopping tolerance of the power iteration on the Collatz-Wielandt
/// bracket, relative to `1 + shift`.
pub const POWER_TOL: f64 = 1e-13;
pub const POWER_MAX_ITER: usize = 100_000;
/// Residual bound `|Q phi - lambda phi|_inf` accepted for eigenpairs.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

/// `b(x, i) p + |p|^2 / 2`.
pub fn tilt_value(b: &dyn DriftField, x: &Point, p: &Covector, i: SwitchState) -> Result<f64> {
    let drift = b.drift(x, i);
    Ok(p.pair(&drift)? + 0.5 * p.norm().powi(2))
}

/// The tilted generator at `(x, p)`.
#[derive(Debug, Clone)]
pub struct TiltedGenerator {
    pub matrix: DMatrix<f64>,
    pub x: Point,
    pub p: Covector,
}

impl TiltedGenerator {
    pub fn new(model: &Model, x: &Point, p: &Covector) -> Result<Self> {
        if p.base() != x {
            return Err(Error::ContractViolation(
                "momentum is not based at the evaluation point".into(),
            ));
        }
        let mut matrix = model.rates.matrix(x);
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += tilt_value(model.drift.as_ref(), x, p, SwitchState::from_index(i))?;
        }
        Ok(TiltedGenerator {
            matrix,
            x: *x,
            p: *p,
        })
    }
}

/// Principal eigenpair of an irreducible Metzler matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalue: f64,
    /// Right eigenvector, strictly positive, largest entry 1.
    pub right_vector: Vec<f64>,
    /// Left eigenvector, strictly positive, largest entry 1.
    pub left_vector: Vec<f64>,
    pub iterations: usize,
}

/// Power iteration on `A + cI` with `c = 1 + max_i |A_ii|`, normalized by
/// the largest entry. Stops when the Collatz-Wielandt bracket
/// `[min_i (A phi)_i / phi_i, max_i (A phi)_i / phi_i]`, which always
/// contains the principal eigenvalue, is narrower than the tolerance.
fn power_iteration(a: &DMatrix<f64>, shift: f64) -> Result<(f64, Vec<f64>, usize)> {
    let n = a.nrows();
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    let mut phi = DVector::from_element(n, 1.0);
    let mut next = DVector::zeros(n);
    let tol = POWER_TOL * (1.0 + shift);
    for it in 1..=POWER_MAX_ITER {
        next.gemv(1.0, &shifted, &phi, 0.0);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let ratio = next[i] / phi[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        let top = next.amax();
        if !(top > 0.0 && top.is_finite()) {
            return Err(Error::numerical(
                "power_iteration",
                "iterate lost positivity or overflowed",
            ));
        }
        next /= top;
        std::mem::swap(&mut phi, &mut next);
        if hi - lo <= tol {
            return Ok((0.5 * (lo + hi) - shift, phi.iter().copied().collect(), it));
        }
    }
    Err(Error::numerical(
        "power_iteration",
        format!("no convergence after {POWER_MAX_ITER} iterations (eigenvalue gap too small)"),
    ))
}

/// Principal eigenvalue with left and right Perron vectors.
pub fn principal_eigen(a: &DMatrix<f64>) -> Result<EigenResult> {
    let n = a.nrows();
    if n == 1 {
        return Ok(EigenResult {
            eigenvalue: a[(0, 0)],
            right_vector: vec![1.0],
            left_vector: vec![1.0],
            iterations: 0,
        });
    }
    if !is_irreducible(a) {
        return Err(Error::numerical(
            "principal_eigen",
            "matrix is reducible; the principal eigenvalue need not be simple",
        ));
    }
    let shift = 1.0 + (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let (lambda, right, it_r) = power_iteration(a, shift)?;
    let (lambda_left, left, it_l) = power_iteration(&a.transpose(), shift)?;
    let residual = {
        let phi = DVector::from_column_slice(&right);
        let r = a * &phi - &phi * lambda;
        r.amax()
    };
    if residual > EIGEN_RESIDUAL_TOL * (1.0 + lambda.abs()) {
        return Err(Error::numerical(
            "principal_eigen",
            format!("eigen residual {residual:.3e} above tolerance"),
        ));
    }
    if (lambda - lambda_left).abs() > 1e-9 * (1.0 + lambda.abs()) {
        return Err(Error::numerical(
            "principal_eigen",
            format!("left and right iterations disagree: {lambda} vs {lambda_left}"),
        ));
    }
    Ok(EigenResult {
        eigenvalue: lambda,
        right_vector: right,
        left_vector: left,
        iterations: it_r.max(it_l),
    })
}

/// `H(x, p)`: principal eigenvalue of the tilted generator.
pub fn hamiltonian(model: &Model, x: &Point, p: &Covector) -> Result<EigenResult> {
    let tilted = TiltedGenerator::new(model, x, p)?;
    principal_eigen(&tilted.matrix)
}

/// Momentum gradient of `H` from the Hellmann-Feynman formula
/// `sum_i l_i r_i (b(x,i) + p) / sum_i l_i r_i`.
pub fn grad_p_hamiltonian(model: &Model, x: &Point, p: &Covector) -> Result<TangentVector> {
    let eig = hamiltonian(model, x, p)?;
    Ok(gradient_from_eigen(model, x, p, &eig))
}

fn gradient_from_eigen(model: &Model, x: &Point, p: &Covector, eig: &EigenResult) -> TangentVector {
    let d = x.manifold().dim();
    let mut acc = [0.0; 3];
    let mut norm = 0.0;
    for (i, (l, r)) in eig.left_vector.iter().zip(&eig.right_vector).enumerate() {
        let w = l * r;
        let b = model.drift_at(x, SwitchState::from_index(i));
        for k in 0..d {
            acc[k] += w * b.components()[k];
        }
        norm += w;
    }
    let mut out = [0.0; 3];
    for k in 0..d {
        out[k] = acc[k] / norm + p.components()[k];
    }
    TangentVector::from_components(*x, &out[..d])
}

/// `H(x, p)` from the variational formula
/// `sup_pi { sum_i pi_i B_i - I(x, pi) }`, maximized by exponentiated
/// gradient ascent on the simplex. Concavity gives the certificate
/// `max_i g_i - <pi, g>` on the optimality gap, which is driven below
/// [`VARIATIONAL_GAP_TOL`].
pub fn hamiltonian_variational(model: &Model, x: &Point, p: &Covector) -> Result<f64> {
    let q = model.rates.matrix(x);
    let n = q.nrows();
    let tilts: Vec<f64> = (0..n)
        .map(|i| tilt_value(model.drift.as_ref(), x, p, SwitchState::from_index(i)))
        .collect::<Result<_>>()?;
    if n == 1 {
        return Ok(tilts[0]);
    }
    let eval = |pi: &[f64]| -> Result<(f64, Vec<f64>)> {
        let pv = ProbVector::normalized(pi.to_vec())?;
        let (dv, u) = crate::switching::donsker_varadhan_with_minimizer(&q, &pv)?;
        let value = pi.iter().zip(&tilts).map(|(a, b)| a * b).sum::<f64>() - dv;
        // envelope gradient: B_z + sum_j q_zj (exp(u_j - u_z) - 1)
        let grad = (0..n)
            .map(|z| {
                let mut s = tilts[z];
                for j in 0..n {
                    if j != z {
                        s += q[(z, j)] * ((u[j] - u[z]).exp() - 1.0);
                    }
                }
                s
            })
            .collect();
        Ok((value, grad))
    };
    let gap_of = |pi: &[f64], grad: &[f64]| {
        let mean: f64 = pi.iter().zip(grad).map(|(a, g)| a * g).sum();
        grad.iter().fold(f64::NEG_INFINITY, |m, g| m.max(*g)) - mean
    };

    // exponentiated gradient ascent to get close to the maximizer
    let mut pi = vec![1.0 / n as f64; n];
    let (mut value, mut grad) = eval(&pi)?;
    let mut eta = 1.0 / (1.0 + tilts.iter().fold(0.0f64, |m, t| m.max(t.abs())));
    for _ in 0..2_000 {
        let gap = gap_of(&pi, &grad);
        if gap <= VARIATIONAL_GAP_TOL {
            return Ok(value);
        }
        if gap <= 1e-3 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let top = grad.iter().fold(f64::NEG_INFINITY, |m, g| m.max(*g));
            let trial: Vec<f64> = pi
                .iter()
                .zip(&grad)
                .map(|(a, g)| a * (eta * (g - top)).exp())
                .collect();
            let total: f64 = trial.iter().sum();
            let trial: Vec<f64> = trial.iter().map(|t| (t / total).max(1e-300)).collect();
            let (v, g) = eval(&trial)?;
            if v >= value - 1e-15 {
                pi = trial;
                value = v;
                grad = g;
                eta *= 1.5;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    // Newton on the stationarity conditions g_z = g_1 in the coordinates
    // theta_z = log(pi_z / pi_1)
    let to_pi = |theta: &[f64]| -> Vec<f64> {
        let top = theta.iter().fold(0.0f64, |m, t| m.max(*t));
        let w: Vec<f64> = std::iter::once(0.0)
            .chain(theta.iter().copied())
            .map(|t| (t - top).exp())
            .collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    };
    let residual = |grad: &[f64]| -> DVector<f64> {
        DVector::from_iterator(n - 1, (1..n).map(|z| grad[z] - grad[0]))
    };
    let mut theta: Vec<f64> = (1..n).map(|z| (pi[z] / pi[0]).ln()).collect();
    let mut res = residual(&grad);
    for _ in 0..100 {
        let gap = gap_of(&pi, &grad);
        if gap <= VARIATIONAL_GAP_TOL {
            return Ok(value);
        }
        let h = 1e-6;
        let mut jac = DMatrix::zeros(n - 1, n - 1);
        for k in 0..n - 1 {
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let ru = residual(&eval(&to_pi(&up))?.1);
            let rd = residual(&eval(&to_pi(&dn))?.1);
            jac.set_column(k, &((ru - rd) / (2.0 * h)));
        }
        let step = match jac.lu().solve(&(-&res)) {
            Some(s) => s,
            None => break,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let tp = to_pi(&trial);
            let (v, g) = eval(&tp)?;
            let r = residual(&g);
            if r.norm() < res.norm() {
                theta = trial;
                pi = tp;
                value = v;
                grad = g;
                res = r;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(Error::numerical(
        "hamiltonian_variational",
        format!(
            "simplex ascent stopped with optimality gap {:.3e}",
            gap_of(&pi, &grad)
        ),
    ))
}

/// Certified bound on `H - value` returned by [`hamiltonian_variational`].
pub const VARIATIONAL_GAP_TOL: f64 = 1e-7;

/// Result of the Legendre transform `L(x, v) = sup_p { p v - H(x, p) }`.
#[derive(Debug, Clone, Copy)]
pub struct LagrangianResult {
    pub value: f64,
    pub argmax_p: Covector,
    pub converged: bool,
    pub iterations: usize,
}

/// Gradient norm at which the Legendre maximization stops. `H` is at least
/// 1-strongly convex in `p`, so this also bounds `|p - p*|`.
pub const LEGENDRE_TOL: f64 = 1e-10;

/// Legendre transform of `H(x, .)` at `v`.
///
/// Newton's method on the concave map `p -> p v - H(x, p)` with the
/// Hellmann-Feynman gradient and a finite-difference Hessian, started from
/// `p = v`, with backtracking on the objective.
pub fn legendre(model: &Model, x: &Point, v: &TangentVector) -> Result<LagrangianResult> {
    legendre_from(model, x, v, None)
}

/// As [`legendre`], with an optional warm start for the momentum.
pub fn legendre_from(
    model: &Model,
    x: &Point,
    v: &TangentVector,
    start: Option<&Covector>,
) -> Result<LagrangianResult> {
    if v.base() != x {
        return Err(Error::ContractViolation(
            "velocity is not based at the evaluation point".into(),
        ));
    }
    let d = x.manifold().dim();
    if model.n_states() == 1 {
        // H = b p + |p|^2 / 2, so p* = v - b and L = |v - b|^2 / 2
        let b = model.drift_at(x, SwitchState::from_index(0));
        let diff: Vec<f64> = (0..d).map(|k| v.components()[k] - b.components()[k]).collect();
        let p = Covector::from_components(*x, &diff);
        return Ok(LagrangianResult {
            value: 0.5 * p.norm().powi(2),
            argmax_p: p,
            converged: true,
            iterations: 0,
        });
    }

    let objective = |p: &Covector| -> Result<(f64, EigenResult)> {
        let eig = hamiltonian(model, x, p)?;
        Ok((p.pair(v)? - eig.eigenvalue, eig))
    };
    let mut p = start.copied().unwrap_or_else(|| v.lower());
    let (mut value, mut eig) = objective(&p)?;
    for it in 0..100 {
        let grad_h = gradient_from_eigen(model, x, &p, &eig);
        let resid: Vec<f64> = (0..d)
            .map(|k| v.components()[k] - grad_h.components()[k])
            .collect();
        let rnorm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        if rnorm < LEGENDRE_TOL {
            return Ok(LagrangianResult {
                value: value.max(0.0),
                argmax_p: p,
                converged: true,
                iterations: it,
            });
        }
        let hess = fd_hessian(model, x, &p)?;
        let step = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&DVector::from_column_slice(&resid)),
            None => DVector::from_column_slice(&resid),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let comps: Vec<f64> = (0..d).map(|k| p.components()[k] + t * step[k]).collect();
            let trial = Covector::from_components(*x, &comps);
            let (tv, te) = objective(&trial)?;
            if tv >= value - 1e-14 * (1.0 + value.abs()) {
                p = trial;
                value = tv;
                eig = te;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // the objective is flat to rounding: accept if the gradient is
            // already small
            if rnorm < 1e-7 {
                return Ok(LagrangianResult {
                    value: value.max(0.0),
                    argmax_p: p,
                    converged: true,
                    iterations: it,
                });
            }
            break;
        }
    }
    Err(Error::numerical(
        "legendre",
        format!("Newton iteration did not converge at v = {:?}", v.components()),
    ))
}

/// Central-difference Hessian of `H(x, .)` from Hellmann-Feynman gradients.
fn fd_hessian(model: &Model, x: &Point, p: &Covector) -> Result<DMatrix<f64>> {
    let d = x.manifold().dim();
    let h = 1e-5 * (1.0 + p.norm());
    let mut hess = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut up = p.components().to_vec();
        let mut dn = up.clone();
        up[j] += h;
        dn[j] -= h;
        let gu = grad_p_hamiltonian(model, x, &Covector::from_components(*x, &up))?;
        let gd = grad_p_hamiltonian(model, x, &Covector::from_components(*x, &dn))?;
        for i in 0..d {
            hess[(i, j)] = (gu.components()[i] - gd.components()[i]) / (2.0 * h);
        }
    }
    Ok(0.5 * (&hess + hess.transpose()))
}

/// Lagrangian growth profile `theta(s) = s inf_{x in K} inf_{|v| >= s} L(x, v) / |v|`
/// on a grid of speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthTable {
    pub speeds: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Unit directions used to sample velocities in dimension `d`.
pub(crate) fn sample_directions(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..16)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 8.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut dirs = Vec::new();
            for i in -1i32..=1 {
                for j in -1i32..=1 {
                    for k in -1i32..=1 {
                        if (i, j, k) == (0, 0, 0) {
                            continue;
                        }
                        let n = ((i * i + j * j + k * k) as f64).sqrt();
                        dirs.push(vec![i as f64 / n, j as f64 / n, k as f64 / n]);
                    }
                }
            }
            dirs
        }
    }
}

/// Samples `theta` on `speeds`. The inner infimum over `|v| >= s` is taken
/// over sampled directions and over the speeds `t >= s` of a refined
/// radial grid, so the table is non-decreasing by construction.
pub fn lagrangian_growth(model: &Model, k_sample: &[Point], speeds: &[f64]) -> Result<GrowthTable> {
    if k_sample.is_empty() || speeds.is_empty() {
        return Err(Error::ContractViolation(
            "growth profile needs sample points and speeds".into(),
        ));
    }
    if speeds.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::ContractViolation("speeds must be positive".into()));
    }
    let mut radial: Vec<f64> = Vec::new();
    for &s in speeds {
        for k in 0..8 {
            radial.push(s * (1.0 + k as f64 / 8.0));
        }
    }
    radial.sort_by(|a, b| a.partial_cmp(b).unwrap());
    radial.dedup();

    let d = model.manifold.dim();
    let dirs = sample_directions(d);
    let mut ratio = vec![f64::INFINITY; radial.len()];
    for x in k_sample {
        for dir in &dirs {
            for (r, &t) in ratio.iter_mut().zip(&radial) {
                let comps: Vec<f64> = dir.iter().map(|c| c * t).collect();
                let v = TangentVector::from_components(*x, &comps);
                let l = legendre(model, x, &v)?.value;
                *r = r.min(l / t);
            }
        }
    }
    // suffix minimum: inf over speeds >= t
    for i in (0..ratio.len().saturating_sub(1)).rev() {
        ratio[i] = ratio[i].min(ratio[i + 1]);
    }
    let theta = speeds
        .iter()
        .map(|&s| {
            let idx = radial.iter().position(|&t| t >= s).unwrap_or(radial.len() - 1);
            s * ratio[idx]
        })
        .collect();
    Ok(GrowthTable {
        speeds: speeds.to_vec(),
        theta,
    })
}
