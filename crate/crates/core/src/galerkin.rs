//! One-dimensional Neumann cosine Galerkin space on `[0, L]`.
//!
//! Nonlinear terms are evaluated pseudo-spectrally: fields are synthesized
//! at the quadrature nodes, multiplied pointwise, and projected back with the
//! quadrature inner product. The solver grid uses single-node Gauss–Legendre
//! panels (the midpoint rule), which is exact for products of basis functions
//! whenever `Q >= N` and spectrally accurate for smooth even-periodic data.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};

/// Largest number of Gauss–Legendre nodes in a single panel.
const PANEL_NODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Domain length `L`.
    pub length: f64,
    /// Galerkin dimension `N` (modes `e_0 .. e_{N-1}`).
    pub modes: usize,
    /// Total quadrature nodes `Q`.
    pub quad_points: usize,
}

impl GridSpec {
    pub fn new(length: f64, modes: usize, quad_points: usize) -> Result<Self> {
        let g = Self {
            length,
            modes,
            quad_points,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Config(format!("domain length {} must be positive", self.length)));
        }
        if self.modes == 0 {
            return Err(Error::Config("Galerkin dimension must be positive".into()));
        }
        if self.quad_points < 2 * self.modes + 1 {
            return Err(Error::Config(format!(
                "quadrature points Q = {} must be at least 2N+1 = {}",
                self.quad_points,
                2 * self.modes + 1
            )));
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if m == 1 {
            x = 0.0;
            dp = 1.0;
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule with `q` nodes on `[0, length]`, split into
/// panels of at most `PANEL_NODES` nodes whose widths are proportional to
/// their node counts.
pub fn composite_gauss_legendre(q: usize, length: f64) -> (Vec<f64>, Vec<f64>) {
    composite_gauss_legendre_panels(q, length, PANEL_NODES)
}

/// Composite Gauss–Legendre rule with at most `panel_nodes` nodes per panel.
///
/// With `panel_nodes = 1` this is the midpoint rule on `q` equal cells, which
/// integrates `cos(m pi x / L)` exactly for `0 <= m < 2q`.
pub fn composite_gauss_legendre_panels(q: usize, length: f64, panel_nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = q.div_ceil(panel_nodes.max(1));
    let mut nodes = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    let mut start = 0.0;
    for p in 0..panels {
        let m = q / panels + usize::from(p < q % panels);
        let width = length * m as f64 / q as f64;
        let (x, w) = gauss_legendre(m);
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(start + 0.5 * width * (xi + 1.0));
            weights.push(0.5 * width * wi);
        }
        start += width;
    }
    (nodes, weights)
}

/// Cosine mode `e_k` and its derivative at `x`.
#[inline]
pub fn cosine_mode(k: usize, x: f64, length: f64) -> (f64, f64) {
    if k == 0 {
        return (1.0 / length.sqrt(), 0.0);
    }
    let c = (2.0 / length).sqrt();
    let kappa = k as f64 * PI / length;
    (c * (kappa * x).cos(), -c * kappa * (kappa * x).sin())
}

/// Basis tables at the quadrature nodes.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub grid: GridSpec,
    /// `values[(k, q)] = e_k(x_q)`
    pub values: DMatrix<f64>,
    /// `derivs[(k, q)] = e_k'(x_q)`
    pub derivs: DMatrix<f64>,
    pub quad_weights: Vec<f64>,
    pub quad_nodes: Vec<f64>,
}

pub fn build_basis(grid: GridSpec) -> Result<BasisSet> {
    grid.validate()?;
    let (nodes, weights) = composite_gauss_legendre_panels(grid.quad_points, grid.length, 1);
    let n = grid.modes;
    let q = grid.quad_points;
    let mut values = DMatrix::zeros(n, q);
    let mut derivs = DMatrix::zeros(n, q);
    for (j, &x) in nodes.iter().enumerate() {
        for k in 0..n {
            let (v, d) = cosine_mode(k, x, grid.length);
            values[(k, j)] = v;
            derivs[(k, j)] = d;
        }
    }
    Ok(BasisSet {
        grid,
        values,
        derivs,
        quad_weights: weights,
        quad_nodes: nodes,
    })
}

impl BasisSet {
    pub fn modes(&self) -> usize {
        self.grid.modes
    }

    pub fn quad_points(&self) -> usize {
        self.grid.quad_points
    }

    pub fn length(&self) -> f64 {
        self.grid.length
    }

    /// Neumann Laplacian eigenvalue `(k pi / L)^2` of mode `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let kappa = k as f64 * PI / self.grid.length;
        kappa * kappa
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.quad_weights).map(|(a, w)| a * w).sum()
    }

    /// Coefficients `(f, e_k)` for `k < n_keep`.
    pub fn project(&self, f: &[f64], n_keep: usize) -> Vec<f64> {
        assert!(n_keep <= self.modes(), "n_keep exceeds Galerkin dimension");
        let mut out = vec![0.0; n_keep];
        for (q, (&fq, &w)) in f.iter().zip(&self.quad_weights).enumerate() {
            let fw = fq * w;
            let col = self.values.column(q);
            for (o, e) in out.iter_mut().zip(col.iter()) {
                *o += fw * e;
            }
        }
        out
    }

    /// `(f, e_k')` for all modes.
    pub fn project_derivative(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.modes()];
        for (q, (&fq, &w)) in f.iter().zip(&self.quad_weights).enumerate() {
            let fw = fq * w;
            let col = self.derivs.column(q);
            for (o, e) in out.iter_mut().zip(col.iter()) {
                *o += fw * e;
            }
        }
        out
    }

    fn combine(table: &DMatrix<f64>, coeffs: &[f64]) -> Vec<f64> {
        (0..table.ncols())
            .map(|q| table.column(q).iter().zip(coeffs).map(|(e, c)| e * c).sum())
            .collect()
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        Self::combine(&self.values, coeffs)
    }

    pub fn synthesize_derivative(&self, coeffs: &[f64]) -> Vec<f64> {
        Self::combine(&self.derivs, coeffs)
    }
}

/// Nodal values and Galerkin coefficients of `u = (u_1, .., u_n)`.
///
/// `coeffs` is always the quadrature projection of `values`; when the field
/// lies in the Galerkin space (as for the Euler–Maruyama and transformed
/// schemes) `values` is also the synthesis of `coeffs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesField {
    /// `n x Q`
    pub values: DMatrix<f64>,
    /// `n x N`
    pub coeffs: DMatrix<f64>,
}

impl SpeciesField {
    pub fn from_coeffs(coeffs: DMatrix<f64>, basis: &BasisSet) -> Self {
        let n = coeffs.nrows();
        let mut values = DMatrix::zeros(n, basis.quad_points());
        for i in 0..n {
            let row: Vec<f64> = coeffs.row(i).iter().copied().collect();
            for (q, v) in basis.synthesize(&row).into_iter().enumerate() {
                values[(i, q)] = v;
            }
        }
        Self { values, coeffs }
    }

    pub fn from_values(values: DMatrix<f64>, basis: &BasisSet) -> Self {
        let n = values.nrows();
        let mut coeffs = DMatrix::zeros(n, basis.modes());
        for i in 0..n {
            let row: Vec<f64> = values.row(i).iter().copied().collect();
            for (k, c) in basis.project(&row, basis.modes()).into_iter().enumerate() {
                coeffs[(i, k)] = c;
            }
        }
        Self { values, coeffs }
    }

    pub fn species(&self) -> usize {
        self.values.nrows()
    }

    pub fn node(&self, q: usize) -> Vec<f64> {
        self.values.column(q).iter().copied().collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Spectral derivative `(Pi_N u_i)'` at the nodes, `n x Q`.
    pub fn derivative(&self, basis: &BasisSet) -> DMatrix<f64> {
        let n = self.species();
        let mut d = DMatrix::zeros(n, basis.quad_points());
        for i in 0..n {
            let row: Vec<f64> = self.coeffs.row(i).iter().copied().collect();
            for (q, v) in basis.synthesize_derivative(&row).into_iter().enumerate() {
                d[(i, q)] = v;
            }
        }
        d
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite()) && self.coeffs.iter().all(|x| x.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Which diffusion matrix the weak-form flux uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    /// `A(u)`, nonnegative states only.
    A,
    /// `M(u)`, the absolute-value matrix.
    M,
}

/// Weak-form divergence terms for every species, `n x N`:
/// entry `(i, k) = - sum_j int X_ij(u) u_j' e_k' dx`.
pub fn assemble_divergence_all(
    u: &SpeciesField,
    basis: &BasisSet,
    params: &ModelParams,
    kind: MatrixKind,
) -> Result<DMatrix<f64>> {
    let n = u.species();
    let du = u.derivative(basis);
    let mut flux = DMatrix::zeros(n, basis.quad_points());
    for q in 0..basis.quad_points() {
        let state = u.node(q);
        let m = match kind {
            MatrixKind::A => model::diffusion_matrix(&state, params)?,
            MatrixKind::M => model::abs_diffusion_matrix(&state, params),
        };
        for i in 0..n {
            flux[(i, q)] = (0..n).map(|j| m[(i, j)] * du[(j, q)]).sum();
        }
    }
    let mut out = DMatrix::zeros(n, basis.modes());
    for i in 0..n {
        let row: Vec<f64> = flux.row(i).iter().copied().collect();
        for (k, v) in basis.project_derivative(&row).into_iter().enumerate() {
            out[(i, k)] = -v;
        }
    }
    Ok(out)
}

/// Weak-form divergence term for species `i`.
pub fn assemble_divergence_term(
    u: &SpeciesField,
    i: usize,
    basis: &BasisSet,
    params: &ModelParams,
    kind: MatrixKind,
) -> Result<Vec<f64>> {
    let all = assemble_divergence_all(u, basis, params, kind)?;
    Ok(all.row(i).iter().copied().collect())
}

/// `int u_i dx` per species.
pub fn mass(u: &SpeciesField, basis: &BasisSet) -> Vec<f64> {
    (0..u.species())
        .map(|i| basis.integrate(&u.row(i)))
        .collect()
}
