//! Slow reference computations used to validate the solver kernels.
//!
//! Each routine avoids the code path it checks: quadrature uses 32-node
//! Gauss–Legendre panels instead of the solver grid, basis functions are
//! evaluated directly, and diffusion matrices are rebuilt from the rate
//! formulas term by term.

use nalgebra::DMatrix;

use crate::galerkin::{composite_gauss_legendre, cosine_mode, BasisSet, SpeciesField};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub samples: usize,
}

impl OracleReport {
    /// Compares `got` with `reference`; relative error is measured against
    /// `max |reference|` over the whole sample.
    pub fn compare(name: &str, got: &[f64], reference: &[f64]) -> Self {
        let max_abs_err = got
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = reference.iter().map(|x| x.abs()).fold(0.0, f64::max);
        Self {
            name: name.to_string(),
            max_abs_err,
            max_rel_err: if scale > 0.0 { max_abs_err / scale } else { max_abs_err },
            samples: got.len(),
        }
    }

    /// Merges another report into this one.
    pub fn absorb(&mut self, other: &OracleReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.samples += other.samples;
    }
}

/// Diffusion matrix written out from the rate formulas with `|u|` in place of `u`.
pub fn reference_diffusion_matrix(u: &[f64], params: &ModelParams) -> DMatrix<f64> {
    let n = u.len();
    let s = params.s;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = params.a0[i] + (s + 1.0) * params.a[(i, i)] * u[i].abs().powf(s);
        for k in 0..n {
            if k != i {
                diag += params.a[(i, k)] * u[k].abs().powf(s);
            }
        }
        m[(i, i)] = diag;
        for j in 0..n {
            if j != i {
                m[(i, j)] = s * params.a[(i, j)] * u[i].abs() * u[j].abs().powf(s - 1.0);
            }
        }
    }
    m
}

/// Evaluates the Galerkin coefficients of `u` and their derivatives at `x`.
fn evaluate(coeffs: &DMatrix<f64>, x: f64, length: f64) -> (Vec<f64>, Vec<f64>) {
    let n = coeffs.nrows();
    let mut val = vec![0.0; n];
    let mut der = vec![0.0; n];
    for k in 0..coeffs.ncols() {
        let (e, de) = cosine_mode(k, x, length);
        for i in 0..n {
            val[i] += coeffs[(i, k)] * e;
            der[i] += coeffs[(i, k)] * de;
        }
    }
    (val, der)
}

/// Weak divergence term of species `i` for `u = sum_k coeffs_k e_k`, with
/// `nodes` Gauss–Legendre points.
pub fn dense_weak_form_nodes(u: &SpeciesField, i: usize, basis: &BasisSet, params: &ModelParams, nodes: usize) -> Vec<f64> {
    let length = basis.length();
    let n_modes = basis.modes();
    let (xs, ws) = composite_gauss_legendre(nodes, length);
    let mut out = vec![0.0; n_modes];
    for (&x, &w) in xs.iter().zip(&ws) {
        let (val, der) = evaluate(&u.coeffs, x, length);
        let m = reference_diffusion_matrix(&val, params);
        let flux: f64 = (0..val.len()).map(|j| m[(i, j)] * der[j]).sum();
        for (k, o) in out.iter_mut().enumerate() {
            *o -= w * flux * cosine_mode(k, x, length).1;
        }
    }
    out
}

/// Reference weak divergence term at `4Q` nodes.
pub fn dense_weak_form(u: &SpeciesField, i: usize, basis: &BasisSet, params: &ModelParams) -> Vec<f64> {
    dense_weak_form_nodes(u, i, basis, params, 4 * basis.quad_points())
}

/// `sum_i int (d/dx |u_i|^p)^2` for `u = sum_k coeffs_k e_k` with `nodes` Gauss–Legendre points.
pub fn dense_power_gradient_sq(coeffs: &DMatrix<f64>, p: f64, length: f64, nodes: usize) -> f64 {
    let (xs, ws) = composite_gauss_legendre(nodes, length);
    let mut total = 0.0;
    for (&x, &w) in xs.iter().zip(&ws) {
        let (val, der) = evaluate(coeffs, x, length);
        for (v, d) in val.iter().zip(&der) {
            let g = p * v.abs().powf(p - 1.0) * v.signum() * d;
            total += w * g * g;
        }
    }
    total
}

/// `sum_{i,j} pi_i X_ij z_i z_j` by explicit double loop, `X` from
/// `reference_diffusion_matrix` scaled by the row weight of the chosen form.
pub fn dense_quadratic_form(u: &[f64], z: &[f64], params: &ModelParams, row_weight: impl Fn(usize, f64) -> f64) -> f64 {
    let m = reference_diffusion_matrix(u, params);
    let mut total = 0.0;
    for i in 0..u.len() {
        for j in 0..u.len() {
            total += params.pi[i] * row_weight(i, u[i]) * m[(i, j)] * z[i] * z[j];
        }
    }
    total
}

/// Root `t = log u` of `pi (e^{(s-1) t} + t) = w` by plain bisection.
pub fn bisect_entropy_inverse_log(w: f64, pi: f64, s: f64) -> f64 {
    let f = |t: f64| pi * (((s - 1.0) * t).exp() + t) - w;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while f(lo) > 0.0 {
        lo *= 2.0;
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root `u` of `pi (u^{s-1} + log u) = w` by bisection in `log u`.
pub fn bisect_entropy_inverse(w: f64, pi: f64, s: f64) -> f64 {
    bisect_entropy_inverse_log(w, pi, s).exp()
}

/// Semi-implicit heat update of mode `k`: `coeff / (1 + dt a10 (k pi / L)^2)`.
pub fn heat_decay_reference(coeff: f64, dt: f64, a10: f64, k: usize, length: f64) -> f64 {
    let kappa = k as f64 * std::f64::consts::PI / length;
    coeff / (1.0 + dt * a10 * kappa * kappa)
}
