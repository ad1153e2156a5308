//! Time steppers and the single-path runner.
//!
//! * `entropy_implicit_step`: implicit Euler in entropy variables. The unknowns
//!   are the Galerkin coefficients of `w`; the primal state `u(w)` is positive
//!   by construction. Solved by damped Newton with an analytic Jacobian and a
//!   finite-difference drift derivative, falling back to continuation in a
//!   load parameter that scales the diffusion, regularization and drift.
//! * `euler_maruyama_step`: semi-implicit Euler–Maruyama on the absolute-value
//!   Galerkin system.
//! * `transformed_step`: semi-implicit Euler in `v = u^{s/2}`.
//!
//! Both semi-implicit schemes treat `kappa_i Laplacian` implicitly, where
//! `kappa_i = a_i0` plus the largest absolute row sum of the state-dependent
//! part of the diffusion matrix over the grid, and subtract the same term
//! explicitly. For pure heat flow this is the plain implicit Laplacian.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::galerkin::{assemble_divergence_all, build_basis, BasisSet, MatrixKind, SpeciesField};
use crate::model::{
    abs_diffusion_matrix, gradient_component, inverse_hessian_component, invert_gradient_component,
    transformed_matrix, ModelParams,
};
use crate::monitors::{compute_monitors, MonitorRow};
use crate::noise::{empty_path, ito_correction_nodal, sample_path, BrownianPath, NoiseModel};
use crate::run::{RunConfig, Scheme, StepConfig};

/// Floor applied to the projected initial data before taking `h_s'`.
pub const INITIAL_FLOOR: f64 = 1e-12;
/// Tolerance of the pointwise `h_s'` inversion inside the nonlinear solve.
const INVERSE_TOL: f64 = 1e-14;
/// Interval halvings tried before a path is truncated.
const MAX_RETRY_DEPTH: usize = 4;
/// States larger than this are treated as blown up.
const BLOW_UP: f64 = 1e12;

/// Drift `f(u)` of the implicit scheme at frozen time.
pub trait Drift: Sync {
    /// Pointwise drift at the nodes, `n x Q`, before projection.
    fn nodal(&self, u: &DMatrix<f64>) -> DMatrix<f64>;
    /// Galerkin coefficients of a nodal drift field.
    fn coefficients(&self, nodal: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64>;
    fn is_zero(&self) -> bool;
    /// Whether the projected drift has no constant-mode component.
    fn excludes_mean(&self) -> bool {
        false
    }
}

pub struct ZeroDrift;

impl Drift for ZeroDrift {
    fn nodal(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::zeros(u.nrows(), u.ncols())
    }

    fn coefficients(&self, nodal: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
        DMatrix::zeros(nodal.nrows(), basis.modes())
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Wong–Zakai drift with the path slope frozen over one step, plus the Itô correction.
pub struct FrozenDrift<'a> {
    pub model: &'a NoiseModel,
    /// `n x K` slopes of the interpolated path.
    pub slopes: DMatrix<f64>,
    pub basis: &'a BasisSet,
}

impl<'a> FrozenDrift<'a> {
    /// Slope `(W(t1) - W(t0)) / (t1 - t0)` of the interpolated path.
    pub fn from_path(model: &'a NoiseModel, path: &BrownianPath, t0: f64, t1: f64, basis: &'a BasisSet) -> Result<Self> {
        let slopes = if model.is_zero() || path.steps == 0 {
            DMatrix::zeros(path.species, model.modes)
        } else {
            path.increment_between(t0, t1)? / (t1 - t0)
        };
        Ok(Self { model, slopes, basis })
    }
}

impl Drift for FrozenDrift<'_> {
    fn nodal(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        if self.model.is_zero() {
            return DMatrix::zeros(u.nrows(), u.ncols());
        }
        self.model.forcing_nodal(u, &self.slopes, self.basis) + ito_correction_nodal(self.model, u, self.basis)
    }

    fn coefficients(&self, nodal: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
        self.model.project(nodal, basis)
    }

    fn is_zero(&self) -> bool {
        self.model.is_zero()
    }

    fn excludes_mean(&self) -> bool {
        self.model.exclude_mean
    }
}

/// Entropy variables `w` on the grid, their coefficients, and the primal state `u(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    /// `n x Q` nodal `w`.
    pub w: DMatrix<f64>,
    /// `n x N`
    pub coeffs: DMatrix<f64>,
    /// `n x Q` nodal `u(w)`, strictly positive.
    pub u: DMatrix<f64>,
}

fn synthesize_rows(coeffs: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
    coeffs * &basis.values
}

fn project_rows(nodal: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
    let weighted = DMatrix::from_fn(nodal.nrows(), nodal.ncols(), |i, q| nodal[(i, q)] * basis.quad_weights[q]);
    weighted * basis.values.transpose()
}

fn project_derivative_rows(nodal: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
    let weighted = DMatrix::from_fn(nodal.nrows(), nodal.ncols(), |i, q| nodal[(i, q)] * basis.quad_weights[q]);
    weighted * basis.derivs.transpose()
}

impl EntropyField {
    pub fn from_coeffs(coeffs: DMatrix<f64>, basis: &BasisSet, params: &ModelParams) -> Result<Self> {
        let w = synthesize_rows(&coeffs, basis);
        let mut u = DMatrix::zeros(w.nrows(), w.ncols());
        for i in 0..w.nrows() {
            for q in 0..w.ncols() {
                u[(i, q)] = invert_gradient_component(w[(i, q)], params.pi[i], params.s, INVERSE_TOL)?;
            }
        }
        Ok(Self { w, coeffs, u })
    }

    /// Entropy field whose coefficients are the projection of `h_s'(max(u, floor))`.
    pub fn from_primal(u: &DMatrix<f64>, basis: &BasisSet, params: &ModelParams) -> Result<Self> {
        let w = DMatrix::from_fn(u.nrows(), u.ncols(), |i, q| {
            gradient_component(u[(i, q)].max(INITIAL_FLOOR), params.pi[i], params.s)
        });
        Self::from_coeffs(project_rows(&w, basis), basis, params)
    }

    pub fn primal(&self, basis: &BasisSet) -> SpeciesField {
        SpeciesField::from_values(self.u.clone(), basis)
    }
}

/// `sum_q c_q a[:, q] b[:, q]^T`.
fn weighted_outer(a: &DMatrix<f64>, c: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (q, &cq) in c.iter().enumerate() {
        scaled.column_mut(q).scale_mut(cq);
    }
    scaled * b.transpose()
}

/// `dA(u)/du_l` for a positive state, one matrix per `l`.
fn diffusion_matrix_derivatives(u: &[f64], params: &ModelParams) -> Vec<DMatrix<f64>> {
    let n = u.len();
    let s = params.s;
    let a = &params.a;
    let mut out = vec![DMatrix::zeros(n, n); n];
    for i in 0..n {
        out[i][(i, i)] = s * (s + 1.0) * a[(i, i)] * u[i].powf(s - 1.0);
        for k in 0..n {
            if k == i {
                continue;
            }
            out[k][(i, i)] = s * a[(i, k)] * u[k].powf(s - 1.0);
            // A_ik = s a_ik u_i u_k^{s-1}
            out[i][(i, k)] = s * a[(i, k)] * u[k].powf(s - 1.0);
            out[k][(i, k)] = s * (s - 1.0) * a[(i, k)] * u[i] * u[k].powf(s - 2.0);
        }
    }
    out
}

/// Derivative of `1/h''` with respect to `u`.
fn inverse_hessian_derivative(u: f64, pi: f64, s: f64) -> f64 {
    let p = (s - 1.0) * u.powf(s - 1.0);
    (1.0 + (2.0 - s) * p) / (pi * (1.0 + p).powi(2))
}

struct EntropySystem<'a> {
    basis: &'a BasisSet,
    params: &'a ModelParams,
    drift: &'a dyn Drift,
    tau: f64,
    epsilon: f64,
    /// Coefficients of the previous primal state.
    prev_proj: DMatrix<f64>,
}

impl EntropySystem<'_> {
    /// Residual scaled by `tau`:
    /// `P(u(w) - u_prev) + tau theta (D(w) + eps w - F(u(w)))`.
    fn residual(&self, coeffs: &DMatrix<f64>, theta: f64) -> Result<(DMatrix<f64>, EntropyField)> {
        let field = EntropyField::from_coeffs(coeffs.clone(), self.basis, self.params)?;
        let mut r = project_rows(&field.u, self.basis) - &self.prev_proj;
        if theta == 0.0 {
            return Ok((r, field));
        }
        let n = coeffs.nrows();
        let dw = coeffs * &self.basis.derivs;
        let mut flux = DMatrix::zeros(n, self.basis.quad_points());
        for q in 0..self.basis.quad_points() {
            let u: Vec<f64> = field.u.column(q).iter().copied().collect();
            let b = crate::model::transport_matrix_at(&u, self.params)?;
            for i in 0..n {
                flux[(i, q)] = (0..n).map(|j| b[(i, j)] * dw[(j, q)]).sum();
            }
        }
        let scale = self.tau * theta;
        r += project_derivative_rows(&flux, self.basis) * scale;
        r += coeffs * (scale * self.epsilon);
        if !self.drift.is_zero() {
            let f = self.drift.coefficients(&self.drift.nodal(&field.u), self.basis);
            r -= f * scale;
        }
        Ok((r, field))
    }

    fn jacobian(&self, field: &EntropyField, theta: f64) -> DMatrix<f64> {
        let n = field.u.nrows();
        let nm = self.basis.modes();
        let nq = self.basis.quad_points();
        let s = self.params.s;
        let pi = &self.params.pi;
        let wq = &self.basis.quad_weights;
        let scale = self.tau * theta;
        let dw = &field.coeffs * &self.basis.derivs;

        // Coefficient tables per (i, l) block.
        let mut c_mass = vec![vec![0.0; nq]; n * n];
        let mut c_drift = vec![vec![0.0; nq]; n * n];
        let mut c_dd = vec![vec![0.0; nq]; n * n];
        let mut c_de = vec![vec![0.0; nq]; n * n];

        let drift_jac = (scale > 0.0 && !self.drift.is_zero()).then(|| self.drift_jacobian(&field.u));

        for q in 0..nq {
            let u: Vec<f64> = field.u.column(q).iter().copied().collect();
            let g: Vec<f64> = (0..n).map(|j| inverse_hessian_component(u[j], pi[j], s)).collect();
            for i in 0..n {
                c_mass[i * n + i][q] = wq[q] * g[i];
            }
            if scale == 0.0 {
                continue;
            }
            let gp: Vec<f64> = (0..n).map(|j| inverse_hessian_derivative(u[j], pi[j], s)).collect();
            let a = abs_diffusion_matrix(&u, self.params);
            let da = diffusion_matrix_derivatives(&u, self.params);
            for i in 0..n {
                for l in 0..n {
                    c_dd[i * n + l][q] = wq[q] * scale * a[(i, l)] * g[l];
                    let mut sum = 0.0;
                    for j in 0..n {
                        let mut db = da[l][(i, j)] * g[j];
                        if j == l {
                            db += a[(i, j)] * gp[j];
                        }
                        sum += db * dw[(j, q)];
                    }
                    c_de[i * n + l][q] = wq[q] * scale * sum * g[l];
                    if let Some(jf) = &drift_jac {
                        c_drift[i * n + l][q] = -wq[q] * scale * jf[q][(i, l)] * g[l];
                    }
                }
            }
        }

        let e = &self.basis.values;
        let d = &self.basis.derivs;
        let mut jac = DMatrix::zeros(n * nm, n * nm);
        for i in 0..n {
            for l in 0..n {
                let k = i * n + l;
                let mut block = weighted_outer(e, &c_mass[k], e);
                if scale > 0.0 {
                    if drift_jac.is_some() {
                        let mut drift = weighted_outer(e, &c_drift[k], e);
                        if self.drift.excludes_mean() {
                            drift.row_mut(0).fill(0.0);
                        }
                        block += drift;
                    }
                    block += weighted_outer(d, &c_dd[k], d);
                    block += weighted_outer(d, &c_de[k], e);
                    if i == l {
                        for m in 0..nm {
                            block[(m, m)] += scale * self.epsilon;
                        }
                    }
                }
                jac.view_mut((i * nm, l * nm), (nm, nm)).copy_from(&block);
            }
        }
        jac
    }

    /// Pointwise `df_i/du_l` at every node by forward differences.
    fn drift_jacobian(&self, u: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let n = u.nrows();
        let nq = u.ncols();
        let base = self.drift.nodal(u);
        let mut out = vec![DMatrix::zeros(n, n); nq];
        for l in 0..n {
            let mut up = u.clone();
            let h: Vec<f64> = (0..nq).map(|q| 1e-7 * u[(l, q)].abs().max(1.0)).collect();
            for q in 0..nq {
                up[(l, q)] += h[q];
            }
            let f = self.drift.nodal(&up);
            for q in 0..nq {
                for i in 0..n {
                    out[q][(i, l)] = (f[(i, q)] - base[(i, q)]) / h[q];
                }
            }
        }
        out
    }

    fn newton(&self, start: DMatrix<f64>, theta: f64, tol: f64, max_iter: usize) -> Result<(EntropyField, usize, f64)> {
        let n = start.nrows();
        let nm = start.ncols();
        let mut coeffs = start;
        let (mut r, mut field) = self.residual(&coeffs, theta)?;
        let mut norm = r.amax();
        for it in 0..max_iter {
            if norm <= tol {
                return Ok((field, it, norm));
            }
            let jac = self.jacobian(&field, theta);
            let rhs = DVector::from_iterator(n * nm, (0..n).flat_map(|i| (0..nm).map(move |m| (i, m))).map(|(i, m)| -r[(i, m)]));
            let delta = jac.lu().solve(&rhs).ok_or(Error::Convergence {
                op: "entropy_implicit_step",
                iterations: it,
                residual: norm,
            })?;
            let step = DMatrix::from_fn(n, nm, |i, m| delta[i * nm + m]);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= 1.0 / 1024.0 {
                let trial = &coeffs + &step * alpha;
                if let Ok((rt, ft)) = self.residual(&trial, theta) {
                    let nt = rt.amax();
                    if nt.is_finite() && nt < (1.0 - 1e-4 * alpha) * norm {
                        coeffs = trial;
                        r = rt;
                        field = ft;
                        norm = nt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::Convergence {
                    op: "entropy_implicit_step",
                    iterations: it + 1,
                    residual: norm,
                });
            }
        }
        if norm <= tol {
            return Ok((field, max_iter, norm));
        }
        Err(Error::Convergence {
            op: "entropy_implicit_step",
            iterations: max_iter,
            residual: norm,
        })
    }
}

/// Result of one implicit step.
#[derive(Debug, Clone)]
pub struct EntropyStep {
    pub field: EntropyField,
    pub iterations: usize,
    pub residual: f64,
}

/// One implicit Euler step in entropy variables.
///
/// `u_prev` is the nodal primal state at the start of the step (usually
/// `w_prev.u`; the floored projected data on the first step). The returned
/// field satisfies the weak system with `tau`-scaled residual at most
/// `cfg.newton_tol` in the max norm over coefficients.
pub fn entropy_implicit_step(
    w_prev: &EntropyField,
    u_prev: &DMatrix<f64>,
    drift: &dyn Drift,
    t_k: f64,
    cfg: &StepConfig,
    basis: &BasisSet,
    params: &ModelParams,
) -> Result<EntropyStep> {
    if w_prev.coeffs.iter().any(|x| !x.is_finite()) {
        return Err(domain("entropy_implicit_step", "non-finite previous state"));
    }
    let sys = EntropySystem {
        basis,
        params,
        drift,
        tau: cfg.tau,
        epsilon: cfg.epsilon,
        prev_proj: project_rows(u_prev, basis),
    };
    let tol = cfg.newton_tol;
    let direct = sys.newton(w_prev.coeffs.clone(), 1.0, tol, cfg.newton_max_iter);
    let mut last_residual = match direct {
        Ok((field, iterations, residual)) => {
            return Ok(EntropyStep {
                field,
                iterations,
                residual,
            })
        }
        Err(Error::Convergence { residual, .. }) => residual,
        Err(_) => f64::INFINITY,
    };
    let steps = cfg.continuation_steps.max(1);
    let mut coeffs = w_prev.coeffs.clone();
    let mut total = 0;
    for j in 0..=steps {
        let theta = j as f64 / steps as f64;
        match sys.newton(coeffs.clone(), theta, tol, cfg.newton_max_iter) {
            Ok((field, it, res)) => {
                total += it;
                coeffs = field.coeffs.clone();
                if j == steps {
                    return Ok(EntropyStep {
                        field,
                        iterations: total,
                        residual: res,
                    });
                }
            }
            Err(e) => {
                if let Error::Convergence { residual, .. } = e {
                    last_residual = residual;
                }
                break;
            }
        }
    }
    Err(Error::StepFailure {
        t: t_k,
        residual: last_residual,
    })
}

/// Implicit coefficients `kappa_i` of the semi-implicit schemes.
fn stabilization(u: &DMatrix<f64>, params: &ModelParams, matrix: impl Fn(&[f64]) -> DMatrix<f64>) -> Vec<f64> {
    let n = u.nrows();
    let mut extra = vec![0.0f64; n];
    for q in 0..u.ncols() {
        let state: Vec<f64> = u.column(q).iter().copied().collect();
        let m = matrix(&state);
        for i in 0..n {
            let row: f64 = (0..n)
                .map(|j| (m[(i, j)] - if i == j { params.a0[i] } else { 0.0 }).abs())
                .sum();
            extra[i] = extra[i].max(row);
        }
    }
    (0..n).map(|i| params.a0[i] + extra[i]).collect()
}

fn semi_implicit_update(
    coeffs: &DMatrix<f64>,
    explicit: &DMatrix<f64>,
    kappa: &[f64],
    dt: f64,
    basis: &BasisSet,
) -> DMatrix<f64> {
    DMatrix::from_fn(coeffs.nrows(), coeffs.ncols(), |i, k| {
        let kl = kappa[i] * basis.eigenvalue(k);
        (coeffs[(i, k)] * (1.0 + dt * kl) + explicit[(i, k)]) / (1.0 + dt * kl)
    })
}

fn check_finite(field: &SpeciesField, t: f64) -> Result<()> {
    if !field.is_finite() || field.values.amax() > BLOW_UP {
        return Err(Error::BlowUp { t });
    }
    Ok(())
}

/// One semi-implicit Euler–Maruyama step with increments `dw` (`n x K`).
pub fn euler_maruyama_step(
    u_prev: &SpeciesField,
    dw: &DMatrix<f64>,
    dt: f64,
    basis: &BasisSet,
    params: &ModelParams,
    model: &NoiseModel,
) -> Result<SpeciesField> {
    if !(dt > 0.0) {
        return Err(domain("euler_maruyama_step", format!("dt must be positive (got {dt})")));
    }
    let div = assemble_divergence_all(u_prev, basis, params, MatrixKind::M)?;
    let kappa = stabilization(&u_prev.values, params, |x| abs_diffusion_matrix(x, params));
    let mut explicit = div * dt;
    if !model.is_zero() {
        explicit += model.project(&model.forcing_nodal(&u_prev.values, dw, basis), basis);
    }
    let next = SpeciesField::from_coeffs(semi_implicit_update(&u_prev.coeffs, &explicit, &kappa, dt, basis), basis);
    check_finite(&next, f64::NAN)?;
    Ok(next)
}

/// One semi-implicit step of the system in `v = u^{s/2}` with increments `dw` (`n x K`).
///
/// Explicit part: `Pi_N(div(A^H(v) v') - (1 - 2/s)(v_i'/v_i) (A^H(v) v')_i)`,
/// the noise `Pi_N(H^{-1}(v) Pi_N(sigma(u) dW))` and the Itô term
/// `1/2 (d^2 v/du^2) sum_{j,k} (sigma_ij e_k)^2 dt`.
pub fn transformed_step(
    v_prev: &SpeciesField,
    dw: &DMatrix<f64>,
    dt: f64,
    basis: &BasisSet,
    params: &ModelParams,
    model: &NoiseModel,
) -> Result<SpeciesField> {
    if !(dt > 0.0) {
        return Err(domain("transformed_step", format!("dt must be positive (got {dt})")));
    }
    let v = &v_prev.values;
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(domain("transformed_step", format!("nonpositive v (min {})", v_prev.min_value())));
    }
    let n = v.nrows();
    let nq = v.ncols();
    let s = params.s;
    let dv = v_prev.derivative(basis);
    let mut flux = DMatrix::zeros(n, nq);
    for q in 0..nq {
        let state: Vec<f64> = v.column(q).iter().copied().collect();
        let ah = transformed_matrix(&state, params)?;
        for i in 0..n {
            flux[(i, q)] = (0..n).map(|j| ah[(i, j)] * dv[(j, q)]).sum();
        }
    }
    let kappa = stabilization(v, params, |x| transformed_matrix(x, params).unwrap_or_else(|_| DMatrix::zeros(n, n)));
    let g = 1.0 - 2.0 / s;
    let mut nodal = DMatrix::from_fn(n, nq, |i, q| -g * dv[(i, q)] / v[(i, q)] * flux[(i, q)] * dt);
    if !model.is_zero() {
        let u = v.map(|x| x.powf(2.0 / s));
        let forcing = synthesize_rows(&model.project(&model.forcing_nodal(&u, dw, basis), basis), basis);
        let sq = model.mode_square_sum(basis);
        for i in 0..n {
            for q in 0..nq {
                let hinv = 0.5 * s * v[(i, q)].powf(1.0 - 2.0 / s);
                let mut val = hinv * forcing[(i, q)];
                if s != 2.0 {
                    let curvature = 0.5 * s * (0.5 * s - 1.0) * u[(i, q)].powf(0.5 * s - 2.0);
                    let var: f64 = (0..n).map(|j| model.amplitude(i, j, u[(i, q)]).powi(2)).sum::<f64>() * sq[q];
                    val += 0.5 * curvature * var * dt;
                }
                nodal[(i, q)] += val;
            }
        }
    }
    let explicit = project_derivative_rows(&flux, basis) * (-dt) + project_rows(&nodal, basis);
    let next = SpeciesField::from_coeffs(semi_implicit_update(&v_prev.coeffs, &explicit, &kappa, dt, basis), basis);
    check_finite(&next, f64::NAN)?;
    Ok(next)
}

/// One stored trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub scheme: Scheme,
    pub seed: u64,
    /// Times of the stored snapshots.
    pub times: Vec<f64>,
    pub states: Vec<SpeciesField>,
    /// One row per completed step, starting at `t = 0`.
    pub monitors: Vec<MonitorRow>,
    /// Newton iterations per step (zeros for the semi-implicit schemes).
    pub newton_iters: Vec<usize>,
    pub truncated: bool,
    pub failure: Option<Error>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &SpeciesField {
        self.states.last().expect("record holds the initial state")
    }

    pub fn monitor_csv(&self, n: usize) -> String {
        let mut out = MonitorRow::csv_header(n);
        out.push('\n');
        for row in &self.monitors {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Nodal values of the configured initial profile.
pub fn initial_nodal(cfg: &RunConfig, basis: &BasisSet) -> DMatrix<f64> {
    let n = cfg.params.n();
    DMatrix::from_fn(n, basis.quad_points(), |i, q| {
        cfg.initial.value(i, basis.quad_nodes[q], basis.length())
    })
}

enum PathState {
    Entropy { field: EntropyField, u_prev: DMatrix<f64> },
    Galerkin(SpeciesField),
    Transformed(SpeciesField),
}

impl PathState {
    fn primal(&self, basis: &BasisSet, s: f64) -> SpeciesField {
        match self {
            PathState::Entropy { field, .. } => field.primal(basis),
            PathState::Galerkin(u) => u.clone(),
            PathState::Transformed(v) => SpeciesField::from_values(v.values.map(|x| x.abs().powf(2.0 / s)), basis),
        }
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    basis: &'a BasisSet,
    path: &'a BrownianPath,
}

impl Runner<'_> {
    fn step_once(&self, state: &PathState, t0: f64, t1: f64) -> Result<(PathState, usize)> {
        let dt = t1 - t0;
        let params = &self.cfg.params;
        let model = &self.cfg.noise;
        let dw = || -> Result<DMatrix<f64>> {
            if model.is_zero() || self.path.steps == 0 {
                Ok(DMatrix::zeros(params.n(), model.modes))
            } else {
                self.path.increment_between(t0, t1)
            }
        };
        match state {
            PathState::Entropy { field, u_prev } => {
                let drift = FrozenDrift::from_path(model, self.path, t0, t1, self.basis)?;
                let mut step = self.cfg.step.clone();
                step.tau = dt;
                let out = entropy_implicit_step(field, u_prev, &drift, t1, &step, self.basis, params)?;
                let u = out.field.u.clone();
                Ok((PathState::Entropy { field: out.field, u_prev: u }, out.iterations))
            }
            PathState::Galerkin(u) => {
                let next = euler_maruyama_step(u, &dw()?, dt, self.basis, params, model)
                    .map_err(|e| with_time(e, t1))?;
                Ok((PathState::Galerkin(next), 0))
            }
            PathState::Transformed(v) => {
                let next = transformed_step(v, &dw()?, dt, self.basis, params, model).map_err(|e| with_time(e, t1))?;
                Ok((PathState::Transformed(next), 0))
            }
        }
    }

    /// Advances over `[t0, t1]`, halving the interval on failure.
    fn advance(&self, state: &PathState, t0: f64, t1: f64, depth: usize) -> Result<(PathState, usize)> {
        match self.step_once(state, t0, t1) {
            Ok(out) => Ok(out),
            Err(e) if depth >= MAX_RETRY_DEPTH => Err(e),
            Err(_) => {
                let mid = 0.5 * (t0 + t1);
                let (s1, i1) = self.advance(state, t0, mid, depth + 1)?;
                let (s2, i2) = self.advance(&s1, mid, t1, depth + 1)?;
                Ok((s2, i1 + i2))
            }
        }
    }
}

fn with_time(e: Error, t: f64) -> Error {
    match e {
        Error::BlowUp { .. } => Error::BlowUp { t },
        other => other,
    }
}

/// Runs one path, sampling the Brownian path from `seed`.
pub fn run_path(cfg: &RunConfig, seed: u64) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let basis = build_basis(cfg.grid)?;
    let n = cfg.params.n();
    let path = if cfg.noise.is_zero() || cfg.horizon == 0.0 {
        empty_path(cfg.horizon, n, cfg.noise.modes)
    } else {
        sample_path(cfg.horizon, cfg.noise_steps(), n, cfg.noise.modes, seed)?
    };
    let mut rec = run_path_with(cfg, &path, &basis)?;
    rec.seed = seed;
    Ok(rec)
}

/// Runs one path driven by a given Brownian path on a prebuilt basis.
///
/// Step failures do not return an error: the record is marked truncated
/// and keeps every step completed before the failure.
pub fn run_path_with(cfg: &RunConfig, path: &BrownianPath, basis: &BasisSet) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if basis.grid != cfg.grid {
        return Err(Error::Config("basis does not match the configured grid".into()));
    }
    let params = &cfg.params;
    let s = params.s;
    let u0 = initial_nodal(cfg, basis);
    let projected = SpeciesField::from_values(u0.clone(), basis);
    let projected = SpeciesField::from_coeffs(projected.coeffs, basis);

    let mut state = match cfg.scheme {
        Scheme::Entropy => PathState::Entropy {
            field: EntropyField::from_primal(&projected.values, basis, params)?,
            u_prev: projected.values.map(|x| x.max(INITIAL_FLOOR)),
        },
        Scheme::EulerMaruyama => PathState::Galerkin(projected.clone()),
        Scheme::Transformed => {
            let v0 = SpeciesField::from_values(u0.map(|x| x.max(0.0).powf(0.5 * s)), basis);
            PathState::Transformed(SpeciesField::from_coeffs(v0.coeffs, basis))
        }
    };

    let mut rec = TrajectoryRecord {
        scheme: cfg.scheme,
        seed: path.seed,
        times: vec![0.0],
        states: vec![projected.clone()],
        monitors: vec![compute_monitors(&projected, basis, params)],
        newton_iters: Vec::new(),
        truncated: false,
        failure: None,
    };
    let steps = cfg.steps();
    let tau = cfg.step.tau;
    let runner = Runner { cfg, basis, path };
    let mut current = projected;
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * tau;
        let t1 = if k == steps { cfg.horizon } else { k as f64 * tau };
        match runner.advance(&state, t0, t1, 0) {
            Ok((next, iters)) => {
                state = next;
                current = state.primal(basis, s);
                if !current.is_finite() {
                    rec.truncated = true;
                    rec.failure = Some(Error::BlowUp { t: t1 });
                    break;
                }
                let mut row = compute_monitors(&current, basis, params);
                row.t = t1;
                rec.monitors.push(row);
                rec.newton_iters.push(iters);
                let stride = cfg.snapshot_stride;
                if k == steps || (stride > 0 && k % stride == 0) {
                    rec.times.push(t1);
                    rec.states.push(current.clone());
                }
            }
            Err(e) => {
                rec.truncated = true;
                rec.failure = Some(e);
                break;
            }
        }
    }
    if rec.truncated && rec.times.last() != rec.monitors.last().map(|r| r.t).as_ref() {
        let t = rec.monitors.last().map(|r| r.t).unwrap_or(0.0);
        rec.times.push(t);
        rec.states.push(current);
    }
    Ok(rec)
}
