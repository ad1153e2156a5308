//! Truncated cylindrical Brownian motion, its Wong–Zakai interpolant, the
//! built-in noise amplitude families, and the Itô correction drift.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Error, Result};
use crate::galerkin::{BasisSet, SpeciesField};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Zero,
    /// `sigma_ij(u) = c_ij`
    Additive,
    /// `sigma_ij(u) = c_ij |u_i| / (1 + |u_i|)`
    BoundedMultiplicative,
}

/// Noise amplitudes and the spatial modes that carry the Brownian drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// `n x n` amplitudes `c_ij`.
    pub c: DMatrix<f64>,
    /// Number of retained spatial noise modes `K`.
    pub modes: usize,
    /// Drop the constant mode: drivers use `e_1 .. e_K` and the projected
    /// noise has no `e_0` component, so species mass is conserved pathwise.
    pub exclude_mean: bool,
}

#[inline]
fn phi(u: f64) -> f64 {
    let a = u.abs();
    a / (1.0 + a)
}

#[inline]
fn phi_prime(u: f64) -> f64 {
    let d = 1.0 + u.abs();
    u.signum() / (d * d)
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, c: DMatrix<f64>, modes: usize) -> Self {
        Self {
            kind,
            c,
            modes,
            exclude_mean: false,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(NoiseKind::Zero, DMatrix::zeros(n, n), 1)
    }

    pub fn with_mean_excluded(mut self, exclude: bool) -> Self {
        self.exclude_mean = exclude;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.kind == NoiseKind::Zero || self.c.iter().all(|&x| x == 0.0)
    }

    /// Indices of the basis functions that carry the drivers.
    pub fn mode_indices(&self) -> Vec<usize> {
        if self.exclude_mean {
            (1..=self.modes).collect()
        } else {
            (0..self.modes).collect()
        }
    }

    pub fn validate(&self, n: usize, galerkin_modes: usize) -> Result<()> {
        if self.c.nrows() != n || self.c.ncols() != n {
            return Err(Error::Config(format!("noise amplitude matrix must be {n}x{n}")));
        }
        if self.modes == 0 {
            return Err(Error::Config("noise needs at least one mode".into()));
        }
        let top = self.mode_indices().last().copied().unwrap_or(0);
        if top >= galerkin_modes {
            return Err(Error::Config(format!(
                "noise mode {top} is outside the Galerkin space of dimension {galerkin_modes}"
            )));
        }
        if self.c.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("noise amplitudes must be finite".into()));
        }
        Ok(())
    }

    /// Pointwise amplitude `sigma_ij` as a function of `u_i`.
    #[inline]
    pub fn amplitude(&self, i: usize, j: usize, ui: f64) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Additive => self.c[(i, j)],
            NoiseKind::BoundedMultiplicative => self.c[(i, j)] * phi(ui),
        }
    }

    /// `d sigma_ij / d u_i`; derivatives with respect to other species vanish.
    #[inline]
    pub fn amplitude_derivative(&self, i: usize, j: usize, ui: f64) -> f64 {
        match self.kind {
            NoiseKind::Zero | NoiseKind::Additive => 0.0,
            NoiseKind::BoundedMultiplicative => self.c[(i, j)] * phi_prime(ui),
        }
    }

    /// `sum_{j,l} (d sigma_ij / d u_l) sigma_lj` at a pointwise state.
    pub fn correction_product(&self, i: usize, u: &[f64]) -> f64 {
        (0..u.len())
            .map(|j| self.amplitude_derivative(i, j, u[i]) * self.amplitude(i, j, u[i]))
            .sum()
    }

    /// `sum_k e_k(x)^2` over the retained modes, at the nodes.
    pub fn mode_square_sum(&self, basis: &BasisSet) -> Vec<f64> {
        let idx = self.mode_indices();
        (0..basis.quad_points())
            .map(|q| idx.iter().map(|&k| basis.values[(k, q)].powi(2)).sum())
            .collect()
    }

    /// Nodal field `sum_j sigma_ij(u) sum_k e_k(x) weights[(j, k)]`, `n x Q`.
    pub fn forcing_nodal(&self, u: &DMatrix<f64>, weights: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
        let n = u.nrows();
        let qn = u.ncols();
        let idx = self.mode_indices();
        let mut driver = DMatrix::<f64>::zeros(n, qn);
        for j in 0..n {
            for q in 0..qn {
                driver[(j, q)] = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &m)| basis.values[(m, q)] * weights[(j, k)])
                    .sum();
            }
        }
        DMatrix::from_fn(n, qn, |i, q| {
            (0..n).map(|j| self.amplitude(i, j, u[(i, q)]) * driver[(j, q)]).sum()
        })
    }

    /// Projects a nodal noise field onto the Galerkin space, removing the
    /// constant mode when the mean is excluded.
    pub fn project(&self, nodal: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
        let n = nodal.nrows();
        let mut out = DMatrix::zeros(n, basis.modes());
        for i in 0..n {
            let row: Vec<f64> = nodal.row(i).iter().copied().collect();
            for (k, c) in basis.project(&row, basis.modes()).into_iter().enumerate() {
                out[(i, k)] = c;
            }
            if self.exclude_mean {
                out[(i, 0)] = 0.0;
            }
        }
        out
    }
}

/// Independent Gaussian increments of `n x K` Brownian motions on a uniform mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub horizon: f64,
    /// Mesh width `eta = T / M`.
    pub eta: f64,
    pub steps: usize,
    pub species: usize,
    pub modes: usize,
    pub seed: u64,
    /// `increments[(m * n + j) * K + k]`
    pub increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BrownianPath {
    fn from_increments(horizon: f64, steps: usize, species: usize, modes: usize, seed: u64, increments: Vec<f64>) -> Self {
        let width = species * modes;
        let mut cumulative = vec![0.0; (steps + 1) * width];
        for m in 0..steps {
            for r in 0..width {
                cumulative[(m + 1) * width + r] = cumulative[m * width + r] + increments[m * width + r];
            }
        }
        Self {
            horizon,
            eta: if steps > 0 { horizon / steps as f64 } else { 0.0 },
            steps,
            species,
            modes,
            seed,
            increments,
            cumulative,
        }
    }

    #[inline]
    pub fn increment(&self, m: usize, j: usize, k: usize) -> f64 {
        self.increments[(m * self.species + j) * self.modes + k]
    }

    /// `W_jk(t_m)`.
    #[inline]
    pub fn cumulative(&self, m: usize, j: usize, k: usize) -> f64 {
        self.cumulative[(m * self.species + j) * self.modes + k]
    }

    /// Path with `factor` times coarser mesh, formed by summing consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(domain("coarsen", format!("factor {factor} does not divide {} steps", self.steps)));
        }
        let width = self.species * self.modes;
        let steps = self.steps / factor;
        let mut inc = vec![0.0; steps * width];
        for m in 0..steps {
            for f in 0..factor {
                let src = (m * factor + f) * width;
                for r in 0..width {
                    inc[m * width + r] += self.increments[src + r];
                }
            }
        }
        Ok(Self::from_increments(self.horizon, steps, self.species, self.modes, self.seed, inc))
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let tol = 1e-12 * self.horizon.max(1.0);
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(domain("wong_zakai_value", format!("t = {t} outside [0, {}]", self.horizon)));
        }
        if self.steps == 0 {
            return Ok((0, 0.0));
        }
        let x = (t / self.eta).clamp(0.0, self.steps as f64);
        let mut m = x.floor() as usize;
        // Snap to grid points within roundoff.
        if (x - x.round()).abs() < 1e-9 {
            m = x.round() as usize;
            return Ok((m.min(self.steps), 0.0));
        }
        m = m.min(self.steps - 1);
        Ok((m, x - m as f64))
    }

    /// Derivative of the interpolant on the mesh interval that starts at or contains `t`.
    pub fn slope_at(&self, j: usize, k: usize, t: f64) -> Result<f64> {
        if self.steps == 0 {
            return Ok(0.0);
        }
        let (m, _) = self.locate(t)?;
        Ok(self.increment(m.min(self.steps - 1), j, k) / self.eta)
    }

    /// `W^eta(t1) - W^eta(t0)` for every `(j, k)`, `n x K`.
    pub fn increment_between(&self, t0: f64, t1: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.species, self.modes);
        for j in 0..self.species {
            for k in 0..self.modes {
                out[(j, k)] = wong_zakai_value(self, j, k, t1)? - wong_zakai_value(self, j, k, t0)?;
            }
        }
        Ok(out)
    }
}

/// Samples `M x n x K` independent `N(0, eta)` increments, deterministically in `seed`.
pub fn sample_path(horizon: f64, steps: usize, species: usize, modes: usize, seed: u64) -> Result<BrownianPath> {
    if !(horizon > 0.0) || steps == 0 {
        return Err(domain("sample_path", format!("need T > 0 and M >= 1 (got T={horizon}, M={steps})")));
    }
    let eta = horizon / steps as f64;
    let normal = Normal::new(0.0, eta.sqrt()).map_err(|e| domain("sample_path", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let increments = (0..steps * species * modes).map(|_| normal.sample(&mut rng)).collect();
    Ok(BrownianPath::from_increments(horizon, steps, species, modes, seed, increments))
}

/// A path with no increments, for noise-free runs and `T = 0`.
pub fn empty_path(horizon: f64, species: usize, modes: usize) -> BrownianPath {
    BrownianPath::from_increments(horizon, 0, species, modes, 0, Vec::new())
}

/// Piecewise-linear interpolant of the cumulative sums at time `t`.
pub fn wong_zakai_value(path: &BrownianPath, j: usize, k: usize, t: f64) -> Result<f64> {
    let (m, frac) = path.locate(t)?;
    if path.steps == 0 {
        return Ok(0.0);
    }
    let base = path.cumulative(m, j, k);
    if frac == 0.0 {
        return Ok(base);
    }
    Ok(base + frac * path.increment(m, j, k))
}

/// Nodal fields `sigma_ij(u) e_k`, indexed `[(i * n + j) * K + k]`, each of length `Q`.
pub fn sigma_apply(model: &NoiseModel, u: &SpeciesField, basis: &BasisSet) -> Vec<Vec<f64>> {
    let n = u.species();
    let idx = model.mode_indices();
    let mut out = Vec::with_capacity(n * n * idx.len());
    for i in 0..n {
        for j in 0..n {
            for &m in &idx {
                out.push(
                    (0..basis.quad_points())
                        .map(|q| model.amplitude(i, j, u.values[(i, q)]) * basis.values[(m, q)])
                        .collect(),
                );
            }
        }
    }
    out
}

/// Pointwise Itô correction `-1/2 sum_{j,l} (d sigma_ij/d u_l) sigma_lj sum_k e_k^2`, `n x Q`, before projection.
pub fn ito_correction_nodal(model: &NoiseModel, u: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
    let n = u.nrows();
    if model.is_zero() || model.kind == NoiseKind::Additive {
        return DMatrix::zeros(n, u.ncols());
    }
    let sq = model.mode_square_sum(basis);
    DMatrix::from_fn(n, u.ncols(), |i, q| {
        let state: Vec<f64> = u.column(q).iter().copied().collect();
        -0.5 * model.correction_product(i, &state) * sq[q]
    })
}

/// Itô correction projected onto the Galerkin space, returned as nodal values `n x Q`.
pub fn ito_correction(model: &NoiseModel, u: &SpeciesField, basis: &BasisSet, _params: &ModelParams) -> DMatrix<f64> {
    let nodal = ito_correction_nodal(model, &u.values, basis);
    SpeciesField::from_coeffs(model.project(&nodal, basis), basis).values
}

/// Full Wong–Zakai drift `f(u, t)`: projected noise against the path slope
/// at `t`, plus the projected Itô correction. Nodal values `n x Q`.
pub fn wong_zakai_drift(
    model: &NoiseModel,
    u: &SpeciesField,
    path: &BrownianPath,
    t: f64,
    basis: &BasisSet,
    _params: &ModelParams,
) -> Result<DMatrix<f64>> {
    let n = u.species();
    let mut slopes = DMatrix::zeros(n, model.modes);
    for j in 0..n {
        for k in 0..model.modes {
            slopes[(j, k)] = path.slope_at(j, k, t)?;
        }
    }
    let nodal = model.forcing_nodal(&u.values, &slopes, basis) + ito_correction_nodal(model, &u.values, basis);
    Ok(SpeciesField::from_coeffs(model.project(&nodal, basis), basis).values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::{build_basis, GridSpec};

    fn basis() -> BasisSet {
        build_basis(GridSpec::new(1.0, 8, 32).unwrap()).unwrap()
    }

    fn params1() -> ModelParams {
        ModelParams::new(2.0, vec![1.0], DMatrix::from_element(1, 1, 1.0), vec![1.0]).unwrap()
    }

    #[test]
    fn path_is_deterministic() {
        let a = sample_path(1.0, 50, 2, 3, 7).unwrap();
        let b = sample_path(1.0, 50, 2, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_path(1.0, 50, 2, 3, 8).unwrap();
        assert_ne!(a.increments, c.increments);
        assert!((a.eta * a.steps as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn increment_variance_matches_eta() {
        let p = sample_path(2.0, 20_000, 1, 5, 3).unwrap();
        let count = p.increments.len() as f64;
        let var = p.increments.iter().map(|x| x * x).sum::<f64>() / count;
        // Standard error of the sample variance of N(0, eta) is eta sqrt(2/count).
        let se = p.eta * (2.0 / count).sqrt();
        assert!((var - p.eta).abs() < 3.0 * se, "var {var} eta {}", p.eta);
    }

    #[test]
    fn interpolant_examples() {
        let p = sample_path(1.0, 10, 1, 2, 1).unwrap();
        assert_eq!(wong_zakai_value(&p, 0, 1, 0.0).unwrap(), 0.0);
        for m in 0..=10 {
            let t = m as f64 * p.eta;
            let sum: f64 = (0..m).map(|r| p.increment(r, 0, 1)).sum();
            assert!((wong_zakai_value(&p, 0, 1, t).unwrap() - sum).abs() < 1e-12 * 10.0);
        }
        let (a, b) = (0.3, 0.4);
        let mid = wong_zakai_value(&p, 0, 0, 0.35).unwrap();
        let avg = 0.5 * (wong_zakai_value(&p, 0, 0, a).unwrap() + wong_zakai_value(&p, 0, 0, b).unwrap());
        assert!((mid - avg).abs() < 1e-12);
        let q = (wong_zakai_value(&p, 0, 0, 0.33).unwrap() - wong_zakai_value(&p, 0, 0, 0.31).unwrap()) / 0.02;
        assert!((q - p.increment(3, 0, 0) / p.eta).abs() < 1e-9);
        assert!(wong_zakai_value(&p, 0, 0, 1.5).is_err());
        assert!(wong_zakai_value(&p, 0, 0, -0.1).is_err());
    }

    #[test]
    fn coarsened_path_sums_increments() {
        let fine = sample_path(1.0, 40, 2, 2, 5).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.steps, 10);
        for m in 0..=10 {
            let t = m as f64 * coarse.eta;
            let a = wong_zakai_value(&coarse, 1, 1, t).unwrap();
            let b = wong_zakai_value(&fine, 1, 1, t).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn sigma_zero_cases() {
        let b = basis();
        let u = SpeciesField::from_values(DMatrix::from_element(1, 32, 2.0), &b);
        let zero = NoiseModel::zero(1);
        assert!(sigma_apply(&zero, &u, &b).iter().flatten().all(|&x| x == 0.0));
        let m = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_element(1, 1, 0.3), 3);
        let u0 = SpeciesField::from_values(DMatrix::zeros(1, 32), &b);
        assert!(sigma_apply(&m, &u0, &b).iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn bounded_family_is_uniformly_bounded() {
        use rand::{Rng, SeedableRng};
        let b = basis();
        let c = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.05, 0.3]);
        let m = NoiseModel::new(NoiseKind::BoundedMultiplicative, c.clone(), 4);
        let sup = b.values.abs().max();
        let bound = c.abs().max() * (4f64).sqrt() * sup;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let values = DMatrix::from_fn(2, 32, |_, _| 10f64.powf(rng.random_range(-4.0..4.0)));
            let u = SpeciesField::from_values(values, &b);
            let f = sigma_apply(&m, &u, &b);
            for i in 0..2 {
                for j in 0..2 {
                    for q in 0..32 {
                        let norm: f64 = (0..4).map(|k| f[(i * 2 + j) * 4 + k][q].powi(2)).sum::<f64>().sqrt();
                        assert!(norm <= bound + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ito_correction_cases() {
        let b = basis();
        let p = params1();
        let u = SpeciesField::from_values(DMatrix::from_fn(1, 32, |_, q| 0.5 + 0.01 * q as f64), &b);
        let add = NoiseModel::new(NoiseKind::Additive, DMatrix::from_element(1, 1, 0.4), 3);
        assert!(ito_correction(&add, &u, &b, &p).iter().all(|&x| x == 0.0));
        assert!(ito_correction(&NoiseModel::zero(1), &u, &b, &p).iter().all(|&x| x == 0.0));

        // Closed form against finite-difference derivative of sigma.
        let c = 0.4;
        let m = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_element(1, 1, c), 3);
        let nodal = ito_correction_nodal(&m, &u.values, &b);
        let sq = m.mode_square_sum(&b);
        let h = 1e-6;
        for q in 0..32 {
            let x = u.values[(0, q)];
            let fd = (m.amplitude(0, 0, x + h) - m.amplitude(0, 0, x - h)) / (2.0 * h);
            let expect = -0.5 * fd * m.amplitude(0, 0, x) * sq[q];
            let closed = -0.5 * c * c * (1.0 / (1.0 + x).powi(2)) * (x / (1.0 + x)) * sq[q];
            assert!((nodal[(0, q)] - expect).abs() < 1e-6);
            assert!((nodal[(0, q)] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_cases() {
        let b = basis();
        let p = params1();
        let u = SpeciesField::from_values(DMatrix::from_fn(1, 32, |_, q| 1.0 + 0.02 * q as f64), &b);
        let path = sample_path(1.0, 10, 1, 1, 4).unwrap();
        let zero = wong_zakai_drift(&NoiseModel::zero(1), &u, &path, 0.25, &b, &p).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));

        // Additive, single mode e_2: drift = c e_2 dW/eta on the subinterval.
        let c = 0.7;
        let m = NoiseModel::new(NoiseKind::Additive, DMatrix::from_element(1, 1, c), 1).with_mean_excluded(true);
        let mut m2 = m.clone();
        m2.modes = 2;
        let d = wong_zakai_drift(&m2, &u, &sample_path(1.0, 10, 1, 2, 4).unwrap(), 0.25, &b, &p).unwrap();
        let p2 = sample_path(1.0, 10, 1, 2, 4).unwrap();
        for q in 0..32 {
            let expect = c * (b.values[(1, q)] * p2.increment(2, 0, 0) + b.values[(2, q)] * p2.increment(2, 0, 1)) / p2.eta;
            assert!((d[(0, q)] - expect).abs() < 1e-10);
        }

        // Linearity in the path.
        let mm = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_element(1, 1, 0.3), 2);
        let mut doubled = path.clone();
        doubled.increments.iter_mut().for_each(|x| *x *= 2.0);
        let doubled = BrownianPath::from_increments(1.0, 10, 1, 1, 4, doubled.increments);
        let ito = ito_correction(&NoiseModel { modes: 1, ..mm.clone() }, &u, &b, &p);
        let mm1 = NoiseModel { modes: 1, ..mm };
        let d1 = wong_zakai_drift(&mm1, &u, &path, 0.55, &b, &p).unwrap() - &ito;
        let d2 = wong_zakai_drift(&mm1, &u, &doubled, 0.55, &b, &p).unwrap() - &ito;
        assert!((d2 - d1 * 2.0).abs().max() < 1e-12);
    }

    #[test]
    fn validation_limits_modes() {
        let m = NoiseModel::new(NoiseKind::Additive, DMatrix::from_element(1, 1, 1.0), 8).with_mean_excluded(true);
        assert!(m.validate(1, 8).is_err());
        assert!(m.validate(1, 9).is_ok());
    }
}
