//! Per-state monitors, ensemble moment estimates and refinement studies.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::galerkin::{build_basis, BasisSet, GridSpec, SpeciesField};
use crate::model::{entropy_component, ModelParams};
use crate::noise::sample_path;
use crate::run::{integer_ratio, RunConfig};
use crate::stepper::{run_path, run_path_with, TrajectoryRecord};

/// Scalar functionals of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRow {
    pub t: f64,
    /// `||u||^2`
    pub l2_sq: f64,
    /// `||u'||^2`
    pub grad_sq: f64,
    /// `||(u^s)'||^2`
    pub grad_us_sq: f64,
    /// `||(u^{s/2})'||^2`
    pub grad_us2_sq: f64,
    /// `int h_s(u)`
    pub entropy: f64,
    pub mass: Vec<f64>,
    pub min_nodal: f64,
    /// `||u^s||`
    pub us_l2: f64,
    /// `||u^{s/2}||^2`, not part of the CSV columns.
    pub v_l2_sq: f64,
}

impl MonitorRow {
    pub fn csv_header(n: usize) -> String {
        let mut cols = vec!["t", "l2_sq", "grad_sq", "grad_us_sq", "grad_us2_sq", "entropy"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((1..=n).map(|i| format!("mass_{i}")));
        cols.push("min_nodal".into());
        cols.push("us_l2".into());
        cols.join(",")
    }

    pub fn csv_line(&self) -> String {
        let mut cols = vec![
            self.t,
            self.l2_sq,
            self.grad_sq,
            self.grad_us_sq,
            self.grad_us2_sq,
            self.entropy,
        ];
        cols.extend(&self.mass);
        cols.push(self.min_nodal);
        cols.push(self.us_l2);
        cols.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(",")
    }
}

/// `sum_i int (d/dx |u_i|^p)^2` with `u'` from spectral differentiation.
fn power_gradient_sq(values: &nalgebra::DMatrix<f64>, du: &nalgebra::DMatrix<f64>, p: f64, basis: &BasisSet) -> f64 {
    let mut total = 0.0;
    for i in 0..values.nrows() {
        let f: Vec<f64> = (0..basis.quad_points())
            .map(|q| {
                let u = values[(i, q)];
                let g = if p == 1.0 {
                    du[(i, q)]
                } else if u == 0.0 {
                    0.0
                } else {
                    p * u.abs().powf(p - 1.0) * u.signum() * du[(i, q)]
                };
                g * g
            })
            .collect();
        total += basis.integrate(&f);
    }
    total
}

fn power_integral(values: &nalgebra::DMatrix<f64>, p: f64, basis: &BasisSet) -> f64 {
    (0..values.nrows())
        .map(|i| {
            let f: Vec<f64> = values.row(i).iter().map(|u| u.abs().powf(p)).collect();
            basis.integrate(&f)
        })
        .sum()
}

/// Monitor row of `state` at `t = 0`; callers set `t`.
pub fn compute_monitors(state: &SpeciesField, basis: &BasisSet, params: &ModelParams) -> MonitorRow {
    let s = params.s;
    let n = state.species();
    let du = state.derivative(basis);
    let values = &state.values;
    let entropy = (0..n)
        .map(|i| {
            let f: Vec<f64> = values.row(i).iter().map(|&u| entropy_component(u, params.pi[i], s)).collect();
            basis.integrate(&f)
        })
        .sum();
    let mass = (0..n).map(|i| basis.integrate(&state.row(i))).collect();
    MonitorRow {
        t: 0.0,
        l2_sq: power_integral(values, 2.0, basis),
        grad_sq: power_gradient_sq(values, &du, 1.0, basis),
        grad_us_sq: power_gradient_sq(values, &du, s, basis),
        grad_us2_sq: power_gradient_sq(values, &du, s / 2.0, basis),
        entropy,
        mass,
        min_nodal: state.min_value(),
        us_l2: power_integral(values, 2.0 * s, basis).sqrt(),
        v_l2_sq: power_integral(values, s, basis),
    }
}

/// `L^2` distance between two states on the same grid.
pub fn state_distance(a: &SpeciesField, b: &SpeciesField, basis: &BasisSet) -> f64 {
    let diff = &a.values - &b.values;
    power_integral(&diff, 2.0, basis).sqrt()
}

/// `L^2` distance between `|a|^p` and `|b|^p`.
pub fn power_distance(a: &SpeciesField, b: &SpeciesField, p: f64, basis: &BasisSet) -> f64 {
    let diff = a.values.map(|x| x.abs().powf(p)) - b.values.map(|x| x.abs().powf(p));
    power_integral(&diff, 2.0, basis).sqrt()
}

/// Path functionals whose ensemble means are estimated.
pub const MOMENT_NAMES: [&str; 5] = [
    "sup_l2_sq",
    "int_grad_sq",
    "int_grad_us_sq",
    "int_us_l2_cubed",
    "sup_v_l2_pow8",
];

/// Evaluates every functional in `MOMENT_NAMES` on one trajectory.
/// Time integrals use the right-endpoint rule on the stored rows.
pub fn path_functionals(record: &TrajectoryRecord) -> [f64; 5] {
    let rows = &record.monitors;
    let sup_l2 = rows.iter().map(|r| r.l2_sq).fold(0.0, f64::max);
    let sup_v8 = rows.iter().map(|r| r.v_l2_sq.powi(4)).fold(0.0, f64::max);
    let mut ints = [0.0; 3];
    for w in rows.windows(2) {
        let dt = w[1].t - w[0].t;
        ints[0] += dt * w[1].grad_sq;
        ints[1] += dt * w[1].grad_us_sq;
        ints[2] += dt * w[1].us_l2.powi(3);
    }
    [sup_l2, ints[0], ints[1], ints[2], sup_v8]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEstimate {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    /// Paths entering the mean.
    pub paths: usize,
    pub truncated_paths: usize,
}

impl EnsembleEstimate {
    pub const CSV_HEADER: &'static str = "name,mean,std_error,paths,truncated";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{},{}",
            self.name, self.mean, self.std_error, self.paths, self.truncated_paths
        )
    }
}

/// Sample mean and standard error, summed in index order about the first
/// sample so identical samples give exactly zero spread.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let x0 = xs[0];
    let shift = xs.iter().map(|x| x - x0).sum::<f64>() / m as f64;
    let mean = x0 + shift;
    if m < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - x0 - shift).powi(2)).sum();
    (mean, (ss / (m - 1) as f64 / m as f64).sqrt())
}

/// Runs `f` over path indices on a pool of `threads` workers (all cores when
/// `None`) and returns results in index order.
pub fn parallel_paths<T, F>(n_paths: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..n_paths).into_par_iter().map(&f).collect::<Vec<T>>();
    match threads {
        None => Ok(run()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

/// Reduces per-path functionals to estimates, skipping truncated paths.
pub fn summarize(records: &[TrajectoryRecord]) -> Result<Vec<EnsembleEstimate>> {
    let kept: Vec<[f64; 5]> = records.iter().filter(|r| !r.truncated).map(path_functionals).collect();
    let truncated = records.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::EnsembleFailed { paths: records.len() });
    }
    Ok(MOMENT_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let xs: Vec<f64> = kept.iter().map(|f| f[k]).collect();
            let (mean, std_error) = mean_and_std_error(&xs);
            EnsembleEstimate {
                name: (*name).to_string(),
                mean,
                std_error,
                paths: kept.len(),
                truncated_paths: truncated,
            }
        })
        .collect())
}

/// Runs `n_paths` trajectories seeded `base_seed + index`.
pub fn ensemble_records(cfg: &RunConfig, n_paths: usize, base_seed: u64, threads: Option<usize>) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    parallel_paths(n_paths, threads, |p| run_path(cfg, base_seed.wrapping_add(p as u64)))?
        .into_iter()
        .collect()
}

/// Ensemble means and standard errors of the path functionals.
pub fn ensemble_moments(cfg: &RunConfig, n_paths: usize, base_seed: u64) -> Result<Vec<EnsembleEstimate>> {
    ensemble_moments_threads(cfg, n_paths, base_seed, None)
}

pub fn ensemble_moments_threads(
    cfg: &RunConfig,
    n_paths: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<EnsembleEstimate>> {
    if n_paths < 2 {
        return Err(Error::Config("an ensemble needs at least 2 paths".into()));
    }
    summarize(&ensemble_records(cfg, n_paths, base_seed, threads)?)
}

/// Estimates at each Galerkin dimension, with the noise seeds shared across rows.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityTable {
    pub modes: Vec<usize>,
    pub estimates: Vec<Vec<EnsembleEstimate>>,
    /// Mean at the largest `N` over mean at the smallest, per functional.
    pub ratios: Vec<f64>,
}

/// Grid at `N` modes keeping the domain, with `Q = max(Q, 4N)` nodes.
pub fn grid_for_modes(grid: &GridSpec, modes: usize) -> Result<GridSpec> {
    GridSpec::new(grid.length, modes, grid.quad_points.max(4 * modes))
}

pub fn n_uniformity_study(
    cfg: &RunConfig,
    modes: &[usize],
    n_paths: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<UniformityTable> {
    if modes.is_empty() {
        return Err(Error::Config("N list is empty".into()));
    }
    let mut estimates = Vec::with_capacity(modes.len());
    for &n_modes in modes {
        let mut c = cfg.clone();
        c.grid = grid_for_modes(&cfg.grid, n_modes)?;
        estimates.push(ensemble_moments_threads(&c, n_paths, base_seed, threads)?);
    }
    let (lo, hi) = {
        let i_min = (0..modes.len()).min_by_key(|&i| modes[i]).unwrap_or(0);
        let i_max = (0..modes.len()).max_by_key(|&i| modes[i]).unwrap_or(0);
        (i_min, i_max)
    };
    let ratios = (0..MOMENT_NAMES.len())
        .map(|k| estimates[hi][k].mean / estimates[lo][k].mean)
        .collect();
    Ok(UniformityTable {
        modes: modes.to_vec(),
        estimates,
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementKind {
    Tau,
    Eta,
    Epsilon,
}

impl RefinementKind {
    pub fn name(self) -> &'static str {
        match self {
            RefinementKind::Tau => "tau",
            RefinementKind::Eta => "eta",
            RefinementKind::Epsilon => "epsilon",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "tau" => Some(RefinementKind::Tau),
            "eta" => Some(RefinementKind::Eta),
            "epsilon" => Some(RefinementKind::Epsilon),
            _ => None,
        }
    }
}

/// Final-time distances to the finest level under coupled noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTable {
    pub kind: RefinementKind,
    pub levels: Vec<f64>,
    /// `distances[l][p]`: path `p` at level `l` against the finest level (last entry is zero).
    pub distances: Vec<Vec<f64>>,
    pub mean_distance: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Orders from consecutive-level differences `||u_l - u_{l+1}||`;
    /// one entry per consecutive pair of differences.
    pub orders: Vec<f64>,
    pub truncated_paths: usize,
}

impl RefinementTable {
    pub const CSV_HEADER: &'static str = "level,value,mean_distance,std_error,order";

    pub fn csv_lines(&self) -> Vec<String> {
        (0..self.levels.len())
            .map(|l| {
                let order = self.orders.get(l).copied().unwrap_or(f64::NAN);
                format!(
                    "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                    l, self.levels[l], self.mean_distance[l], self.std_error[l], order
                )
            })
            .collect()
    }
}

fn level_config(cfg: &RunConfig, kind: RefinementKind, value: f64) -> RunConfig {
    let mut c = cfg.clone();
    match kind {
        RefinementKind::Tau => c.step.tau = value,
        RefinementKind::Eta => c.eta = value,
        RefinementKind::Epsilon => c.step.epsilon = value,
    }
    c
}

/// Refinement in `tau`, `eta` or `epsilon`, coupling the levels through one
/// Brownian path per seed sampled on the finest noise mesh.
pub fn refinement_study(
    kind: RefinementKind,
    cfg: &RunConfig,
    levels: &[f64],
    n_paths: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<RefinementTable> {
    if levels.len() < 2 {
        return Err(Error::Config("a refinement study needs at least 2 levels".into()));
    }
    if levels.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("refinement levels must be decreasing".into()));
    }
    let configs: Vec<RunConfig> = levels.iter().map(|&v| level_config(cfg, kind, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let fine_eta = configs.iter().map(|c| c.eta).fold(f64::INFINITY, f64::min);
    let factors: Vec<usize> = configs
        .iter()
        .map(|c| {
            integer_ratio(c.eta, fine_eta)
                .ok_or_else(|| Error::Config(format!("eta {} is not a multiple of {fine_eta}", c.eta)))
        })
        .collect::<Result<_>>()?;
    let basis = build_basis(cfg.grid)?;
    let n = cfg.params.n();
    let fine_steps = integer_ratio(cfg.horizon, fine_eta).unwrap_or(0);

    let per_path: Vec<Result<Option<Vec<SpeciesField>>>> = parallel_paths(n_paths, threads, |p| {
        let seed = base_seed.wrapping_add(p as u64);
        let fine = if cfg.noise.is_zero() || cfg.horizon == 0.0 {
            None
        } else {
            Some(sample_path(cfg.horizon, fine_steps, n, cfg.noise.modes, seed)?)
        };
        let mut finals = Vec::with_capacity(configs.len());
        for (c, &f) in configs.iter().zip(&factors) {
            let rec = match &fine {
                Some(path) => run_path_with(c, &path.coarsen(f)?, &basis)?,
                None => run_path(c, seed)?,
            };
            if rec.truncated {
                return Ok(None);
            }
            finals.push(rec.final_state().clone());
        }
        Ok(Some(finals))
    })?;

    let mut truncated = 0;
    let mut kept = Vec::new();
    for r in per_path {
        match r? {
            Some(f) => kept.push(f),
            None => truncated += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::EnsembleFailed { paths: n_paths });
    }
    let last = levels.len() - 1;
    let distances: Vec<Vec<f64>> = (0..levels.len())
        .map(|l| kept.iter().map(|f| state_distance(&f[l], &f[last], &basis)).collect())
        .collect();
    let (mean_distance, std_error): (Vec<f64>, Vec<f64>) = distances.iter().map(|d| mean_and_std_error(d)).unzip();
    let successive: Vec<f64> = (0..last)
        .map(|l| {
            let d: Vec<f64> = kept.iter().map(|f| state_distance(&f[l], &f[l + 1], &basis)).collect();
            mean_and_std_error(&d).0
        })
        .collect();
    let orders = (0..successive.len().saturating_sub(1))
        .map(|l| (successive[l] / successive[l + 1]).ln() / (levels[l] / levels[l + 1]).ln())
        .collect();
    Ok(RefinementTable {
        kind,
        levels: levels.to_vec(),
        distances,
        mean_distance,
        std_error,
        orders,
        truncated_paths: truncated,
    })
}
