//! Shared fixtures for the kernel benchmarks.

use crossdiff_core::galerkin::{build_basis, BasisSet, GridSpec, SpeciesField};
use crossdiff_core::model::ModelParams;
use crossdiff_core::noise::{NoiseKind, NoiseModel};
use crossdiff_core::run::{InitialProfile, RunConfig, StepConfig};
use nalgebra::DMatrix;

/// Two species, `s = 3`, unit self-diffusion and cross rates 0.5.
pub fn reference_params() -> ModelParams {
    ModelParams::with_balanced_weights(3.0, vec![1.0, 1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]))
        .expect("reference parameters are valid")
}

/// Basis with `modes` cosine modes and `4 * modes` quadrature nodes.
pub fn basis(modes: usize) -> BasisSet {
    build_basis(GridSpec::new(1.0, modes, 4 * modes).expect("valid grid")).expect("valid basis")
}

/// Smooth positive state with decaying coefficients.
pub fn positive_state(basis: &BasisSet) -> SpeciesField {
    let modes = basis.grid.modes;
    SpeciesField::from_coeffs(
        DMatrix::from_fn(2, modes, |i, k| {
            if k == 0 {
                1.5 + i as f64
            } else {
                0.2 * (-1.0f64).powi((i + k) as i32) / (k * k) as f64
            }
        }),
        basis,
    )
}

pub fn reference_noise() -> NoiseModel {
    NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_diagonal_element(2, 2, 0.1), 4).with_mean_excluded(true)
}

/// Bump data with bounded multiplicative noise over `horizon`.
pub fn reference_run(modes: usize, horizon: f64) -> RunConfig {
    let mut cfg = RunConfig::new(
        reference_params(),
        GridSpec::new(1.0, modes, 4 * modes).expect("valid grid"),
        InitialProfile::bump(vec![0.5, 0.8], vec![1.0, 0.6], 0.4, 0.15),
    );
    cfg.step = StepConfig::new(1e-3);
    cfg.horizon = horizon;
    cfg.eta = 1e-2;
    cfg.noise = reference_noise();
    cfg
}
