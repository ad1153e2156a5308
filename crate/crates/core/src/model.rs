//! Algebraic objects of the cross-diffusion model: the diffusion matrix and
//! its signed / transformed variants, the entropy density `h_s` with its
//! gradient and Hessian, and the entropy-variable transport matrix.
//!
//! Everything here is a pure function of a pointwise state vector.

use nalgebra::DMatrix;

use crate::assumptions;
use crate::error::{domain, Error, Result};

/// Relative tolerance used for the detailed-balance residual check.
pub const DETAILED_BALANCE_RTOL: f64 = 1e-12;

/// Which self-diffusion dominance condition a parameter set is expected to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dominance {
    /// `(s+1) a_ii > (s^2/4) sum_{k != i} a_ik`
    #[default]
    Strong,
    /// `(s+1) a_ii > (s-1) sum_{k != i} a_ik`
    Weak,
}

/// Coefficients of the population model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Transition-rate exponent.
    pub s: f64,
    /// Constant diffusion rates `a_{i0}`.
    pub a0: Vec<f64>,
    /// Self (diagonal) and cross (off-diagonal) rates `a_{ij}`.
    pub a: DMatrix<f64>,
    /// Detailed-balance weights.
    pub pi: Vec<f64>,
    /// Dominance condition this parameter set is flagged with.
    pub dominance: Dominance,
}

impl ModelParams {
    /// Builds and validates a parameter set with explicitly given weights.
    pub fn new(s: f64, a0: Vec<f64>, a: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let params = Self {
            s,
            a0,
            a,
            pi,
            dominance: Dominance::Strong,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds a parameter set, solving for the detailed-balance weights.
    pub fn with_balanced_weights(s: f64, a0: Vec<f64>, a: DMatrix<f64>) -> Result<Self> {
        let pi = assumptions::solve_detailed_balance(&a, DETAILED_BALANCE_RTOL)?;
        Self::new(s, a0, a, pi)
    }

    pub fn with_dominance(mut self, dominance: Dominance) -> Self {
        self.dominance = dominance;
        self
    }

    /// Number of species.
    pub fn n(&self) -> usize {
        self.a0.len()
    }

    /// Exponents in `[1, 2)` are accepted for exploration but fall outside
    /// the range where the existence theory applies.
    pub fn low_exponent_warning(&self) -> bool {
        self.s < 2.0
    }

    /// `max |pi_i a_ij - pi_j a_ji|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let r = (self.pi[i] * self.a[(i, j)] - self.pi[j] * self.a[(j, i)]).abs();
                worst = worst.max(r);
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidParams("species count must be positive".into()));
        }
        if !(self.s.is_finite() && self.s >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "exponent s = {} must be finite and at least 1",
                self.s
            )));
        }
        if self.a.nrows() != n || self.a.ncols() != n || self.pi.len() != n {
            return Err(Error::InvalidParams(format!(
                "shape mismatch: a0 has {n} entries, a is {}x{}, pi has {}",
                self.a.nrows(),
                self.a.ncols(),
                self.pi.len()
            )));
        }
        for i in 0..n {
            if !(self.a0[i] > 0.0 && self.a0[i].is_finite()) {
                return Err(Error::InvalidParams(format!("a0[{i}] = {} must be positive", self.a0[i])));
            }
            if !(self.pi[i] > 0.0 && self.pi[i].is_finite()) {
                return Err(Error::InvalidParams(format!("pi[{i}] = {} must be positive", self.pi[i])));
            }
            for j in 0..n {
                let v = self.a[(i, j)];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParams(format!("a[{i}][{j}] = {v} must be nonnegative")));
                }
            }
        }
        let scale = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.pi[i] * self.a[(i, j)]).abs())
            .fold(0.0f64, f64::max);
        let residual = self.detailed_balance_residual();
        if residual > DETAILED_BALANCE_RTOL * scale {
            return Err(Error::InvalidParams(format!(
                "detailed balance violated: residual {residual:e} exceeds {DETAILED_BALANCE_RTOL:e} x {scale:e}"
            )));
        }
        Ok(())
    }

    /// Checks the dominance margins required by the `dominance` flag.
    pub fn dominance_check(&self) -> Result<()> {
        let report = assumptions::check_dominance(self);
        let (margins, label) = match self.dominance {
            Dominance::Strong => (&report.strong_margins, "strong"),
            Dominance::Weak => (&report.weak_margins, "weak"),
        };
        match margins.iter().position(|&m| !(m > 0.0)) {
            Some(i) => Err(Error::InvalidParams(format!(
                "{label} self-diffusion dominance condition fails for species {}: margin {:e} must be positive",
                i + 1,
                margins[i]
            ))),
            None => Ok(()),
        }
    }
}

fn check_nonnegative(op: &'static str, u: &[f64]) -> Result<()> {
    match u.iter().position(|&x| !(x >= 0.0)) {
        Some(i) => Err(domain(op, format!("entry {i} = {} is negative", u[i]))),
        None => Ok(()),
    }
}

fn check_positive(op: &'static str, u: &[f64]) -> Result<()> {
    match u.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(domain(op, format!("entry {i} = {} is not strictly positive", u[i]))),
        None => Ok(()),
    }
}

/// Shared kernel: `A_ii = a_i0 + (s+1) a_ii p_i + sum_{k != i} a_ik p_k`,
/// `A_ij = s a_ij x_i q_j` where `p = x^s`-like and `q = x^{s-1}`-like powers.
fn assemble(params: &ModelParams, x: &[f64], p: &[f64], q: &[f64]) -> DMatrix<f64> {
    let n = params.n();
    let s = params.s;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let cross: f64 = (0..n).filter(|&k| k != i).map(|k| params.a[(i, k)] * p[k]).sum();
            params.a0[i] + (s + 1.0) * params.a[(i, i)] * p[i] + cross
        } else {
            s * params.a[(i, j)] * x[i] * q[j]
        }
    })
}

/// Diffusion matrix `A(u)` for a nonnegative state.
pub fn diffusion_matrix(u: &[f64], params: &ModelParams) -> Result<DMatrix<f64>> {
    check_nonnegative("diffusion_matrix", u)?;
    let s = params.s;
    let p: Vec<f64> = u.iter().map(|x| x.powf(s)).collect();
    let q: Vec<f64> = u.iter().map(|x| x.powf(s - 1.0)).collect();
    Ok(assemble(params, u, &p, &q))
}

/// Diffusion matrix `M(u)` of the absolute-value system, defined for signed states.
pub fn abs_diffusion_matrix(u: &[f64], params: &ModelParams) -> DMatrix<f64> {
    let s = params.s;
    let x: Vec<f64> = u.iter().map(|x| x.abs()).collect();
    let p: Vec<f64> = x.iter().map(|x| x.powf(s)).collect();
    let q: Vec<f64> = x.iter().map(|x| x.powf(s - 1.0)).collect();
    assemble(params, &x, &p, &q)
}

/// Matrix `A^H(v)` of the system written in `v = u^{s/2}`.
pub fn transformed_matrix(v: &[f64], params: &ModelParams) -> Result<DMatrix<f64>> {
    check_nonnegative("transformed_matrix", v)?;
    let p: Vec<f64> = v.iter().map(|x| x * x).collect();
    Ok(assemble(params, v, &p, v))
}

/// Diagonal of the change-of-variables matrix `H(v)`, `H_ii = (2/s) v_i^{2/s - 1}`,
/// so that `du = H(v) dv` for `v = u^{s/2}`.
pub fn transform_diagonal(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|&x| 2.0 / s * x.powf(2.0 / s - 1.0)).collect()
}

/// Per-species entropy integrand, extended continuously to `u = 0`.
/// Negative inputs are evaluated at `|u|`.
#[inline]
pub fn entropy_component(u: f64, pi: f64, s: f64) -> f64 {
    let u = u.abs();
    let ulogu = if u > 0.0 { u * (u.ln() - 1.0) } else { 0.0 };
    pi * (u.powf(s) / s + ulogu + 1.0)
}

/// Entropy density `h_s(u) = sum_i pi_i (u_i^s/s + u_i (log u_i - 1) + 1)`.
pub fn entropy_density(u: &[f64], params: &ModelParams) -> f64 {
    u.iter()
        .zip(&params.pi)
        .map(|(&x, &pi)| entropy_component(x, pi, params.s))
        .sum()
}

#[inline]
pub fn gradient_component(u: f64, pi: f64, s: f64) -> f64 {
    pi * (u.powf(s - 1.0) + u.ln())
}

#[inline]
pub fn hessian_component(u: f64, pi: f64, s: f64) -> f64 {
    pi * (1.0 / u + (s - 1.0) * u.powf(s - 2.0))
}

/// `du/dw` for a single component, i.e. `1 / h''`, written in a form that
/// stays finite as `u -> 0`.
#[inline]
pub fn inverse_hessian_component(u: f64, pi: f64, s: f64) -> f64 {
    u / (pi * (1.0 + (s - 1.0) * u.powf(s - 1.0)))
}

/// Entropy variables `w = h_s'(u)`.
pub fn entropy_gradient(u: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    check_positive("entropy_gradient", u)?;
    Ok(u.iter()
        .zip(&params.pi)
        .map(|(&x, &pi)| gradient_component(x, pi, params.s))
        .collect())
}

/// Diagonal Hessian `h_s''(u)`.
pub fn entropy_hessian(u: &[f64], params: &ModelParams) -> Result<DMatrix<f64>> {
    check_positive("entropy_hessian", u)?;
    let d: Vec<f64> = u
        .iter()
        .zip(&params.pi)
        .map(|(&x, &pi)| hessian_component(x, pi, params.s))
        .collect();
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)))
}

const INVERSE_MAX_ITER: usize = 200;

/// Solves `pi (e^{(s-1) t} + t) = w` for `t = log u`.
///
/// The map is increasing and convex in `t`, so Newton started from the
/// right end of the bracket decreases monotonically onto the root; the
/// bracket is kept anyway and bisection takes over if a step leaves it.
pub fn invert_gradient_log(w: f64, pi: f64, s: f64, tol: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(domain("entropy_gradient_inverse", format!("non-finite w = {w}")));
    }
    let y = w / pi;
    let p = s - 1.0;
    if p <= 0.0 {
        // s = 1: pi (1 + log u) = w
        return Ok(y - 1.0);
    }
    let scale = y.abs().max(1.0);
    let f = |t: f64| (p * t).exp() + t - y;
    let mut lo = y.min(0.0) - 1.0;
    // f(y) = e^{p y} > 0 for y > 0 and f(ln y / p) = ln y / p >= 0 for y >= 1.
    let mut hi = y.max(0.0).min(y.max(1.0).ln() / p);
    let mut t = hi;
    let mut ft = f(t);
    for _ in 0..INVERSE_MAX_ITER {
        if ft.abs() <= tol * scale {
            return Ok(t);
        }
        if ft > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = p * (p * t).exp() + 1.0;
        let mut next = t - ft / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 4.0 * f64::EPSILON * (1.0 + t.abs()) {
            // Machine precision reached; accept if the residual is at roundoff level.
            let fnext = f(next);
            if fnext.abs() <= (tol.max(64.0 * f64::EPSILON)) * scale {
                return Ok(next);
            }
        }
        t = next;
        ft = f(t);
    }
    Err(Error::Convergence {
        op: "entropy_gradient_inverse",
        iterations: INVERSE_MAX_ITER,
        residual: ft.abs() * pi,
    })
}

/// Single-component inverse of `h_s'`. The result is clamped to the smallest
/// positive normal float when `w` is so negative that `u` underflows.
pub fn invert_gradient_component(w: f64, pi: f64, s: f64, tol: f64) -> Result<f64> {
    let t = invert_gradient_log(w, pi, s, tol)?;
    let u = t.exp();
    if !u.is_finite() {
        return Err(domain("entropy_gradient_inverse", format!("u = exp({t}) overflows for w = {w}")));
    }
    Ok(u.max(f64::MIN_POSITIVE))
}

/// Primal state `u = (h_s')^{-1}(w)`.
///
/// `tol` bounds the residual `|h_s'(u) - w|` relative to `max(1, |w|)`.
pub fn entropy_gradient_inverse(w: &[f64], params: &ModelParams, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(domain("entropy_gradient_inverse", "tolerance must be positive"));
    }
    w.iter()
        .zip(&params.pi)
        .map(|(&wi, &pi)| invert_gradient_component(wi, pi, params.s, tol))
        .collect()
}

/// `B(u) = A(u) h_s''(u)^{-1}` evaluated at a positive primal state.
pub fn transport_matrix_at(u: &[f64], params: &ModelParams) -> Result<DMatrix<f64>> {
    let mut b = diffusion_matrix(u, params)?;
    for j in 0..params.n() {
        let d = inverse_hessian_component(u[j], params.pi[j], params.s);
        b.column_mut(j).scale_mut(d);
    }
    Ok(b)
}

/// Transport matrix in entropy variables, `B(w) = A(u(w)) h_s''(u(w))^{-1}`.
pub fn entropy_transport_matrix(w: &[f64], params: &ModelParams) -> Result<DMatrix<f64>> {
    let u = entropy_gradient_inverse(w, params, 1e-14)?;
    transport_matrix_at(&u, params)
}
