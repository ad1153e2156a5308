//! Run configuration shared by the path runner, the ensemble drivers and the CLI.

use crate::error::{Error, Result};
use crate::galerkin::GridSpec;
use crate::model::ModelParams;
use crate::noise::NoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Implicit Euler in entropy variables.
    Entropy,
    /// Semi-implicit Euler–Maruyama on the absolute-value Galerkin system.
    EulerMaruyama,
    /// Semi-implicit Euler in `v = u^{s/2}`.
    Transformed,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Entropy => "entropy",
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::Transformed => "transformed",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "entropy" => Some(Scheme::Entropy),
            "euler_maruyama" | "em" => Some(Scheme::EulerMaruyama),
            "transformed" => Some(Scheme::Transformed),
            _ => None,
        }
    }
}

/// Time-stepping controls.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub tau: f64,
    /// Weight of the `eps int w phi` regularization.
    pub epsilon: f64,
    /// Newton stops when the max-norm of the residual (scaled by `tau`) is below this.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Load-parameter substeps used when plain Newton fails.
    pub continuation_steps: usize,
}

impl StepConfig {
    /// Defaults with `epsilon = 1e-8 tau`.
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            epsilon: 1e-8 * tau,
            newton_tol: 1e-10,
            newton_max_iter: 40,
            continuation_steps: 8,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive (got {})", self.tau)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be nonnegative (got {})", self.epsilon)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Config(format!("newton_tol must be positive (got {})", self.newton_tol)));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::Config("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    /// `u_i = base_i`
    Constant,
    /// `u_i = base_i + amplitude_i exp(-((x - center) / width)^2)`
    Bump,
    /// `u_i = base_i + amplitude_i cos(mode pi x / L)`
    Cosine,
}

impl ProfileKind {
    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Constant => "constant",
            ProfileKind::Bump => "bump",
            ProfileKind::Cosine => "cosine",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "constant" => Some(ProfileKind::Constant),
            "bump" => Some(ProfileKind::Bump),
            "cosine" => Some(ProfileKind::Cosine),
            _ => None,
        }
    }
}

/// Closed-form nonnegative initial data, one base/amplitude pair per species.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialProfile {
    pub kind: ProfileKind,
    pub base: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub center: f64,
    pub width: f64,
    pub mode: usize,
}

impl InitialProfile {
    pub fn constant(base: Vec<f64>) -> Self {
        let n = base.len();
        Self {
            kind: ProfileKind::Constant,
            base,
            amplitude: vec![0.0; n],
            center: 0.5,
            width: 0.1,
            mode: 1,
        }
    }

    pub fn bump(base: Vec<f64>, amplitude: Vec<f64>, center: f64, width: f64) -> Self {
        Self {
            kind: ProfileKind::Bump,
            base,
            amplitude,
            center,
            width,
            mode: 1,
        }
    }

    pub fn cosine(base: Vec<f64>, amplitude: Vec<f64>, mode: usize) -> Self {
        Self {
            kind: ProfileKind::Cosine,
            base,
            amplitude,
            center: 0.5,
            width: 0.1,
            mode,
        }
    }

    pub fn value(&self, i: usize, x: f64, length: f64) -> f64 {
        let b = self.base[i];
        let a = self.amplitude[i];
        match self.kind {
            ProfileKind::Constant => b,
            ProfileKind::Bump => b + a * (-((x - self.center) / self.width).powi(2)).exp(),
            ProfileKind::Cosine => b + a * (self.mode as f64 * std::f64::consts::PI * x / length).cos(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.base.len() != n || self.amplitude.len() != n {
            return Err(Error::Config(format!("initial base and amplitude need {n} entries")));
        }
        if self.base.iter().chain(&self.amplitude).any(|x| !x.is_finite()) {
            return Err(Error::Config("initial profile parameters must be finite".into()));
        }
        for i in 0..n {
            let lowest = match self.kind {
                ProfileKind::Constant => self.base[i],
                ProfileKind::Bump => self.base[i] + self.amplitude[i].min(0.0),
                ProfileKind::Cosine => self.base[i] - self.amplitude[i].abs(),
            };
            if lowest < 0.0 {
                return Err(Error::Config(format!(
                    "initial profile for species {} is negative somewhere (minimum {lowest})",
                    i + 1
                )));
            }
        }
        if self.kind == ProfileKind::Bump && !(self.width > 0.0) {
            return Err(Error::Config("bump width must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to run one path or an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub step: StepConfig,
    pub noise: NoiseModel,
    /// Final time `T`.
    pub horizon: f64,
    /// Wong–Zakai mesh width.
    pub eta: f64,
    pub scheme: Scheme,
    pub initial: InitialProfile,
    pub seed: u64,
    pub n_paths: usize,
    /// Store a state snapshot every this many steps; 0 keeps only the endpoints.
    pub snapshot_stride: usize,
}

/// `a / b` when it is an integer to relative accuracy `1e-9`.
pub fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    ((r - k).abs() <= 1e-9 * r.max(1.0)).then_some(k as usize)
}

impl RunConfig {
    pub fn new(params: ModelParams, grid: GridSpec, initial: InitialProfile) -> Self {
        let n = params.n();
        Self {
            params,
            grid,
            step: StepConfig::new(1e-3),
            noise: NoiseModel::zero(n),
            horizon: 0.1,
            eta: 1e-2,
            scheme: Scheme::Entropy,
            initial,
            seed: 42,
            n_paths: 1,
            snapshot_stride: 0,
        }
    }

    pub fn steps(&self) -> usize {
        integer_ratio(self.horizon, self.step.tau).unwrap_or(0)
    }

    pub fn noise_steps(&self) -> usize {
        integer_ratio(self.horizon, self.eta).unwrap_or(0)
    }

    /// Checks every constraint and reports all failures at once.
    pub fn validation_errors(&self) -> Vec<Error> {
        let n = self.params.n();
        let mut errs = Vec::new();
        if let Err(e) = self.params.validate() {
            errs.push(e);
        }
        if let Err(e) = self.grid.validate() {
            errs.push(e);
        }
        if let Err(e) = self.step.validate() {
            errs.push(e);
        }
        if let Err(e) = self.noise.validate(n, self.grid.modes) {
            errs.push(e);
        }
        if let Err(e) = self.initial.validate(n) {
            errs.push(e);
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            errs.push(Error::Config(format!("T must be nonnegative (got {})", self.horizon)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            errs.push(Error::Config(format!("eta must be positive (got {})", self.eta)));
        }
        if self.n_paths == 0 {
            errs.push(Error::Config("paths must be at least 1".into()));
        }
        if self.horizon > 0.0 && self.step.tau > 0.0 && self.eta > 0.0 {
            if integer_ratio(self.horizon, self.step.tau).is_none() {
                errs.push(Error::Config(format!("T = {} is not a multiple of tau = {}", self.horizon, self.step.tau)));
            }
            if integer_ratio(self.horizon, self.eta).is_none() {
                errs.push(Error::Config(format!("T = {} is not a multiple of eta = {}", self.horizon, self.eta)));
            }
            let aligned = if self.eta >= self.step.tau {
                integer_ratio(self.eta, self.step.tau).is_some()
            } else {
                integer_ratio(self.step.tau, self.eta).is_some()
            };
            if !aligned {
                errs.push(Error::Config(format!(
                    "tau = {} and eta = {} must divide one another",
                    self.step.tau, self.eta
                )));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cfg() -> RunConfig {
        let p = ModelParams::new(2.0, vec![1.0], DMatrix::from_element(1, 1, 1.0), vec![1.0]).unwrap();
        RunConfig::new(p, GridSpec::new(1.0, 16, 64).unwrap(), InitialProfile::constant(vec![1.0]))
    }

    #[test]
    fn defaults_are_valid() {
        let c = cfg();
        assert!(c.validate().is_ok());
        assert_eq!(c.steps(), 100);
        assert_eq!(c.noise_steps(), 10);
        assert!((c.step.epsilon - 1e-11).abs() < 1e-24);
    }

    #[test]
    fn misaligned_meshes_rejected() {
        let mut c = cfg();
        c.eta = 1.5e-3;
        assert!(c.validation_errors().iter().any(|e| e.to_string().contains("divide")));
        c.eta = 5e-4;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn negative_profiles_rejected() {
        let mut c = cfg();
        c.initial = InitialProfile::cosine(vec![0.5], vec![0.6], 1);
        assert!(c.validate().is_err());
        c.initial = InitialProfile::bump(vec![0.1], vec![2.0], 0.5, 0.1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn all_errors_collected() {
        let mut c = cfg();
        c.horizon = -1.0;
        c.eta = 0.0;
        c.n_paths = 0;
        assert!(c.validation_errors().len() >= 3);
    }
}
