//! Standing-assumption checks: detailed-balance weights, self-diffusion
//! dominance margins, randomized certificates for the four weighted
//! quadratic-form bounds, and empirical constants for the noise model.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::model::{self, ModelParams};
use crate::noise::NoiseModel;

/// Relative slack allowed before a sampled quadratic-form bound counts as violated.
pub const FALSIFICATION_RTOL: f64 = 1e-9;

/// Samples per deterministic RNG stream in the randomized scans.
const SHARD: usize = 4096;

/// Solves `pi_i a_ij = pi_j a_ji` with `pi_0 = 1` by spanning-tree propagation
/// over the graph of nonzero coefficient pairs. Non-tree edges are verified
/// and an inconsistent one is reported together with the cycle it closes.
///
/// Disconnected components are normalized independently (their first index gets weight 1).
pub fn solve_detailed_balance(a: &DMatrix<f64>, tol: f64) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidParams("coefficient matrix must be square".into()));
    }
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (aij, aji) = (a[(i, j)], a[(j, i)]);
            match (aij > 0.0, aji > 0.0) {
                (true, true) => {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
                (false, false) => {}
                // One-sided coupling forces a zero weight.
                _ => {
                    return Err(Error::Infeasible {
                        cycle: vec![i, j],
                        mismatch: 1.0,
                    })
                }
            }
        }
    }

    let mut pi = vec![0.0; n];
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![0usize; n];
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        pi[root] = 1.0;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = i;
                    depth[j] = depth[i] + 1;
                    pi[j] = pi[i] * a[(i, j)] / a[(j, i)];
                    queue.push_back(j);
                }
            }
        }
    }

    for i in 0..n {
        for &j in &adjacency[i] {
            if j < i || parent[j] == i || parent[i] == j {
                continue;
            }
            let lhs = pi[i] * a[(i, j)];
            let rhs = pi[j] * a[(j, i)];
            let mismatch = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
            if mismatch > tol {
                return Err(Error::Infeasible {
                    cycle: tree_cycle(&parent, &depth, i, j),
                    mismatch,
                });
            }
        }
    }
    Ok(pi)
}

/// Cycle closed by the non-tree edge `(i, j)`: tree path `i -> lca -> j`.
fn tree_cycle(parent: &[usize], depth: &[usize], i: usize, j: usize) -> Vec<usize> {
    let (mut x, mut y) = (i, j);
    let mut left = vec![x];
    let mut right = vec![y];
    while depth[x] > depth[y] {
        x = parent[x];
        left.push(x);
    }
    while depth[y] > depth[x] {
        y = parent[y];
        right.push(y);
    }
    while x != y {
        x = parent[x];
        y = parent[y];
        left.push(x);
        right.push(y);
    }
    right.pop();
    right.reverse();
    left.extend(right);
    left
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub strong_margins: Vec<f64>,
    pub weak_margins: Vec<f64>,
    pub strong_ok: bool,
    pub weak_ok: bool,
}

fn cross_sum(params: &ModelParams, i: usize) -> f64 {
    (0..params.n()).filter(|&k| k != i).map(|k| params.a[(i, k)]).sum()
}

pub fn check_dominance(params: &ModelParams) -> DominanceReport {
    let s = params.s;
    let margins = |c: f64| -> Vec<f64> {
        (0..params.n())
            .map(|i| (s + 1.0) * params.a[(i, i)] - c * cross_sum(params, i))
            .collect()
    };
    let strong_margins = margins(s * s / 4.0);
    let weak_margins = margins(s - 1.0);
    DominanceReport {
        strong_ok: strong_margins.iter().all(|&m| m > 0.0),
        weak_ok: weak_margins.iter().all(|&m| m > 0.0),
        strong_margins,
        weak_margins,
    }
}

/// The four weighted quadratic-form lower bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LemmaKind {
    /// `sum pi_i A_ij z_i z_j >= a1 |z|^2 + a2 sum u_i^s z_i^2`, `u >= 0`.
    L1,
    /// Weights `pi_i / u_i`; bound in `z_i^2/u_i` and `u_i^{s-1} z_i^2`, `u > 0`.
    L2,
    /// Weights `pi_i u_i^{s-2}`; bound in `u_i^{s-2} z_i^2` and `u_i^{2s-2} z_i^2`, `u > 0`.
    L3,
    /// Matrix `A^H(v)`; bound in `z_i^2` and `v_i^2 z_i^2`, `v >= 0`.
    L4,
}

impl LemmaKind {
    pub const ALL: [LemmaKind; 4] = [LemmaKind::L1, LemmaKind::L2, LemmaKind::L3, LemmaKind::L4];

    pub fn name(self) -> &'static str {
        match self {
            LemmaKind::L1 => "L1",
            LemmaKind::L2 => "L2",
            LemmaKind::L3 => "L3",
            LemmaKind::L4 => "L4",
        }
    }

    /// Cross-diffusion factor in the dominance margin used by this bound.
    pub fn margin_factor(self, s: f64) -> f64 {
        match self {
            LemmaKind::L1 | LemmaKind::L2 => s * s / 4.0,
            LemmaKind::L3 | LemmaKind::L4 => s - 1.0,
        }
    }

    fn allows_zero(self) -> bool {
        matches!(self, LemmaKind::L1 | LemmaKind::L4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCertificate {
    pub kind: LemmaKind,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: Vec<f64>,
    pub samples_tested: usize,
    /// Minimum of `lhs - rhs` over the scan.
    pub worst_slack: f64,
    /// Minimum of `(lhs - rhs) / |lhs|` over the scan.
    pub worst_relative_slack: f64,
}

/// `(alpha1, alpha2, beta)` from the dominance-margin construction.
pub fn certificate_constants(kind: LemmaKind, params: &ModelParams) -> Result<(f64, f64, Vec<f64>)> {
    let s = params.s;
    let c = kind.margin_factor(s);
    let beta: Vec<f64> = (0..params.n())
        .map(|i| params.pi[i] * ((s + 1.0) * params.a[(i, i)] - c * cross_sum(params, i)))
        .collect();
    if let Some((index, &margin)) = beta.iter().enumerate().find(|(_, &b)| !(b > 0.0)) {
        return Err(Error::Certificate { index, margin });
    }
    let alpha1 = params
        .a0
        .iter()
        .zip(&params.pi)
        .map(|(a, p)| a * p)
        .fold(f64::INFINITY, f64::min);
    let alpha2 = beta.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((alpha1, alpha2, beta))
}

fn check_kind_domain(kind: LemmaKind, u: &[f64]) -> Result<()> {
    let ok = if kind.allows_zero() {
        u.iter().all(|&x| x >= 0.0)
    } else {
        u.iter().all(|&x| x > 0.0)
    };
    if ok {
        Ok(())
    } else {
        Err(domain(
            "quadratic_form",
            format!("state {u:?} outside the domain of {}", kind.name()),
        ))
    }
}

/// Left side: the weighted double sum `sum_{ij} w_i X_ij z_i z_j`.
pub fn quadratic_form_lhs(kind: LemmaKind, u: &[f64], z: &[f64], params: &ModelParams) -> Result<f64> {
    check_kind_domain(kind, u)?;
    let s = params.s;
    let matrix = match kind {
        LemmaKind::L4 => model::transformed_matrix(u, params)?,
        _ => model::diffusion_matrix(u, params)?,
    };
    let n = params.n();
    let mut total = 0.0;
    for i in 0..n {
        let weight = match kind {
            LemmaKind::L1 | LemmaKind::L4 => params.pi[i],
            LemmaKind::L2 => params.pi[i] / u[i],
            LemmaKind::L3 => params.pi[i] * u[i].powf(s - 2.0),
        };
        let row: f64 = (0..n).map(|j| matrix[(i, j)] * z[j]).sum();
        total += weight * z[i] * row;
    }
    Ok(total)
}

/// Right side `alpha1 * first + alpha2 * second` with the weights of `kind`.
pub fn quadratic_form_rhs(kind: LemmaKind, u: &[f64], z: &[f64], params: &ModelParams) -> Result<f64> {
    check_kind_domain(kind, u)?;
    let (alpha1, alpha2, _) = certificate_constants(kind, params)?;
    Ok(rhs_with(kind, alpha1, alpha2, u, z, params.s))
}

fn rhs_with(kind: LemmaKind, alpha1: f64, alpha2: f64, u: &[f64], z: &[f64], s: f64) -> f64 {
    let mut first = 0.0;
    let mut second = 0.0;
    for (&x, &zi) in u.iter().zip(z) {
        let z2 = zi * zi;
        let (w1, w2) = match kind {
            LemmaKind::L1 => (1.0, x.powf(s)),
            LemmaKind::L2 => (1.0 / x, x.powf(s - 1.0)),
            LemmaKind::L3 => (x.powf(s - 2.0), x.powf(2.0 * s - 2.0)),
            LemmaKind::L4 => (1.0, x * x),
        };
        first += w1 * z2;
        second += w2 * z2;
    }
    alpha1 * first + alpha2 * second
}

struct ShardOutcome {
    worst_slack: f64,
    worst_relative: f64,
    violation: Option<Error>,
}

fn scan_shard(
    kind: LemmaKind,
    params: &ModelParams,
    alpha1: f64,
    alpha2: f64,
    seed: u64,
    shard: usize,
    count: usize,
) -> Result<ShardOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    let n = params.n();
    let mut out = ShardOutcome {
        worst_slack: f64::INFINITY,
        worst_relative: f64::INFINITY,
        violation: None,
    };
    let mut u = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..count {
        for i in 0..n {
            let exponent: f64 = rng.random_range(-6.0..3.0);
            let zero: f64 = rng.random();
            u[i] = if kind.allows_zero() && zero < 0.1 {
                0.0
            } else {
                10f64.powf(exponent)
            };
            z[i] = rng.sample(StandardNormal);
        }
        let lhs = quadratic_form_lhs(kind, &u, &z, params)?;
        let rhs = rhs_with(kind, alpha1, alpha2, &u, &z, params.s);
        let slack = lhs - rhs;
        out.worst_slack = out.worst_slack.min(slack);
        if lhs != 0.0 {
            out.worst_relative = out.worst_relative.min(slack / lhs.abs());
        }
        if slack < -FALSIFICATION_RTOL * lhs.abs() && out.violation.is_none() {
            out.violation = Some(Error::Falsified {
                lhs,
                rhs,
                u: u.clone(),
                z: z.clone(),
            });
        }
    }
    Ok(out)
}

/// Randomized certificate for one quadratic-form bound. Samples are drawn
/// log-uniformly in `[1e-6, 1e3]^n` (with exact zeros mixed in where the
/// bound allows them) and `z ~ N(0, I)`; shards use independent ChaCha
/// streams so the result does not depend on the thread count.
pub fn certify_lemma(kind: LemmaKind, params: &ModelParams, n_samples: usize, seed: u64) -> Result<LemmaCertificate> {
    let (alpha1, alpha2, beta) = certificate_constants(kind, params)?;
    let shards = n_samples.div_ceil(SHARD);
    let outcomes: Vec<Result<ShardOutcome>> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let count = SHARD.min(n_samples - k * SHARD);
            scan_shard(kind, params, alpha1, alpha2, seed, k, count)
        })
        .collect();
    let mut worst_slack = f64::INFINITY;
    let mut worst_relative_slack = f64::INFINITY;
    for outcome in outcomes {
        let outcome = outcome?;
        if let Some(v) = outcome.violation {
            return Err(v);
        }
        worst_slack = worst_slack.min(outcome.worst_slack);
        worst_relative_slack = worst_relative_slack.min(outcome.worst_relative);
    }
    Ok(LemmaCertificate {
        kind,
        alpha1,
        alpha2,
        beta,
        samples_tested: n_samples,
        worst_slack,
        worst_relative_slack,
    })
}

/// Caps against which the empirical noise constants are compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCaps {
    pub lipschitz: f64,
    pub growth: f64,
    pub derivative: f64,
    pub entropy_coupling: f64,
}

impl Default for NoiseCaps {
    fn default() -> Self {
        Self {
            lipschitz: 10.0,
            growth: 10.0,
            derivative: 10.0,
            entropy_coupling: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoisePass {
    pub lipschitz: bool,
    pub growth: bool,
    pub derivative: bool,
    pub entropy_coupling: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseComplianceReport {
    pub lipschitz_estimate: f64,
    pub growth_estimate: f64,
    pub derivative_estimate: f64,
    pub entropy_coupling_estimate: f64,
    pub sample_count: usize,
    pub pass: NoisePass,
}

pub fn check_noise_assumptions(
    noise: &NoiseModel,
    params: &ModelParams,
    n_samples: usize,
    seed: u64,
) -> Result<NoiseComplianceReport> {
    check_noise_assumptions_with_caps(noise, params, n_samples, seed, NoiseCaps::default())
}

/// Empirical constants for the pointwise noise amplitudes `sigma_ij(u)`:
/// Lipschitz quotient, growth ratio (including the `u_i^{(s-2)/s}` weighted
/// term), derivative bound, and the ratio of the entropy-coupling left side
/// to `sum_i h_i(u)`.
pub fn check_noise_assumptions_with_caps(
    noise: &NoiseModel,
    params: &ModelParams,
    n_samples: usize,
    seed: u64,
    caps: NoiseCaps,
) -> Result<NoiseComplianceReport> {
    let n = params.n();
    let s = params.s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| 10f64.powf(rng.random_range(-6.0..3.0))).collect()
    };
    let amplitudes = |u: &[f64]| -> Result<DMatrix<f64>> {
        let m = DMatrix::from_fn(n, n, |i, j| noise.amplitude(i, j, u[i]));
        if m.iter().all(|x| x.is_finite()) {
            Ok(m)
        } else {
            Err(Error::NoiseModel(u.to_vec()))
        }
    };

    let mut lipschitz = 0.0f64;
    let mut growth = 0.0f64;
    let mut derivative = 0.0f64;
    let mut coupling = 0.0f64;
    for k in 0..n_samples {
        let u = draw(&mut rng);
        let v: Vec<f64> = if k % 2 == 0 {
            draw(&mut rng)
        } else {
            u.iter().map(|x| x * (1.0 + rng.random_range(-0.5..0.5))).collect()
        };
        let su = amplitudes(&u)?;
        let sv = amplitudes(&v)?;
        let du: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if du > 0.0 {
            lipschitz = lipschitz.max((&su - &sv).norm() / du);
        }

        let unorm2: f64 = u.iter().map(|x| x * x).sum();
        let mut weighted = 0.0;
        for i in 0..n {
            let w = u[i].powf((s - 2.0) / s);
            for j in 0..n {
                weighted += (w * su[(i, j)]).powi(2);
            }
        }
        growth = growth.max((su.norm_squared() + weighted) / (1.0 + unorm2));

        // Built-in families depend on u_i only, so dsigma_ij/du_l vanishes for l != i.
        let mut first = 0.0f64;
        for j in 0..n {
            let col: f64 = (0..n)
                .map(|i| params.pi[i] * su[(i, j)] * (u[i].powf(s - 1.0) + u[i].ln()))
                .sum();
            first = first.max(col.abs());
        }
        let mut second = 0.0;
        for i in 0..n {
            let g = u[i].powf(s - 1.0) + u[i].ln();
            for j in 0..n {
                let d = noise.amplitude_derivative(i, j, u[i]);
                derivative = derivative.max(d.abs());
                second += params.pi[i] * d * su[(i, j)] * g;
            }
        }
        let lhs = first + 0.5 * second.abs();
        let rhs: f64 = u.iter().map(|&x| model::entropy_component(x, 1.0, s)).sum();
        coupling = coupling.max(lhs / rhs);
    }
    for x in [lipschitz, growth, derivative, coupling] {
        if !x.is_finite() {
            return Err(Error::NoiseModel(vec![]));
        }
    }
    Ok(NoiseComplianceReport {
        lipschitz_estimate: lipschitz,
        growth_estimate: growth,
        derivative_estimate: derivative,
        entropy_coupling_estimate: coupling,
        sample_count: n_samples,
        pass: NoisePass {
            lipschitz: lipschitz <= caps.lipschitz,
            growth: growth <= caps.growth,
            derivative: derivative <= caps.derivative,
            entropy_coupling: coupling <= caps.entropy_coupling,
        },
    })
}
