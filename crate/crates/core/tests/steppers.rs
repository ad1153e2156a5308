use crossdiff_core::galerkin::{build_basis, mass, BasisSet, GridSpec, SpeciesField};
use crossdiff_core::model::ModelParams;
use crossdiff_core::monitors::{compute_monitors, power_distance};
use crossdiff_core::noise::{sample_path, NoiseKind, NoiseModel};
use crossdiff_core::oracle::heat_decay_reference;
use crossdiff_core::run::{InitialProfile, RunConfig, Scheme, StepConfig};
use crossdiff_core::stepper::{
    entropy_implicit_step, euler_maruyama_step, run_path, transformed_step, EntropyField, FrozenDrift, ZeroDrift,
};
use nalgebra::DMatrix;

fn reference_params() -> ModelParams {
    ModelParams::with_balanced_weights(3.0, vec![1.0, 1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap()
}

fn basis(n: usize, q: usize) -> BasisSet {
    build_basis(GridSpec::new(1.0, n, q).unwrap()).unwrap()
}

fn bump_config() -> RunConfig {
    let mut cfg = RunConfig::new(
        reference_params(),
        GridSpec::new(1.0, 16, 64).unwrap(),
        InitialProfile::bump(vec![0.5, 0.8], vec![1.0, 0.6], 0.4, 0.15),
    );
    cfg.step = StepConfig::new(1e-3).with_epsilon(0.0);
    cfg
}

#[test]
fn constant_state_is_a_fixed_point_of_the_implicit_step() {
    let b = basis(16, 64);
    let p = reference_params();
    let u = DMatrix::from_fn(2, 64, |i, _| 0.7 + i as f64);
    let w = EntropyField::from_primal(&u, &b, &p).unwrap();
    let cfg = StepConfig::new(1e-2).with_epsilon(0.0);
    let out = entropy_implicit_step(&w, &w.u, &ZeroDrift, 0.01, &cfg, &b, &p).unwrap();
    assert!((&out.field.coeffs - &w.coeffs).amax() < 1e-10);
}

#[test]
fn implicit_step_conserves_mass_and_dissipates_entropy() {
    let cfg = bump_config();
    let rec = run_path(&cfg, 1).unwrap();
    assert!(!rec.truncated, "{:?}", rec.failure);
    let m0 = &rec.monitors[0].mass;
    for w in rec.monitors.windows(2) {
        assert!(w[1].entropy <= w[0].entropy + 1e-9, "entropy rose at t = {}", w[1].t);
        assert!(w[1].min_nodal > 0.0);
    }
    for row in &rec.monitors {
        for i in 0..2 {
            assert!((row.mass[i] - m0[i]).abs() <= 1e-8 * m0[i]);
        }
    }
    assert!(rec.monitors.last().unwrap().entropy < rec.monitors[0].entropy);
}

#[test]
fn implicit_step_residual_meets_tolerance_with_noise() {
    let b = basis(16, 64);
    let p = reference_params();
    let model = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_diagonal_element(2, 2, 0.1), 8);
    let path = sample_path(0.1, 10, 2, 8, 3).unwrap();
    let u = DMatrix::from_fn(2, 64, |i, q| 1.0 + 0.4 * (1.0 + i as f64) * (3.0 * b.quad_nodes[q]).cos().powi(2));
    let w = EntropyField::from_primal(&u, &b, &p).unwrap();
    let drift = FrozenDrift::from_path(&model, &path, 0.0, 1e-3, &b).unwrap();
    let cfg = StepConfig::new(1e-3);
    let out = entropy_implicit_step(&w, &w.u, &drift, 1e-3, &cfg, &b, &p).unwrap();
    assert!(out.residual <= cfg.newton_tol);
    assert!(out.field.u.iter().all(|&x| x > 1e-300));
}

#[test]
fn euler_maruyama_examples() {
    let b = basis(16, 64);
    let p = reference_params();
    let zero = NoiseModel::zero(2);
    let dw = DMatrix::zeros(2, 1);
    let c = SpeciesField::from_values(DMatrix::from_fn(2, 64, |i, _| 1.0 + i as f64), &b);
    let c = SpeciesField::from_coeffs(c.coeffs, &b);
    let next = euler_maruyama_step(&c, &dw, 1e-2, &b, &p, &zero).unwrap();
    assert!((&next.coeffs - &c.coeffs).amax() < 1e-12);

    let heat = ModelParams::new(2.0, vec![0.7], DMatrix::zeros(1, 1), vec![1.0]).unwrap();
    let coeffs = DMatrix::from_fn(1, 16, |_, k| 1.0 / (1.0 + k as f64));
    let u = SpeciesField::from_coeffs(coeffs.clone(), &b);
    let next = euler_maruyama_step(&u, &DMatrix::zeros(1, 1), 0.01, &b, &heat, &NoiseModel::zero(1)).unwrap();
    for k in 0..16 {
        let expect = heat_decay_reference(coeffs[(0, k)], 0.01, 0.7, k, 1.0);
        assert!((next.coeffs[(0, k)] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
    }

    let signed = SpeciesField::from_coeffs(DMatrix::from_fn(2, 16, |i, k| ((i + 2 * k) as f64).sin() / (1.0 + k as f64)), &b);
    let neg = SpeciesField::from_coeffs(-&signed.coeffs, &b);
    let a = euler_maruyama_step(&signed, &dw, 1e-3, &b, &p, &zero).unwrap();
    let bb = euler_maruyama_step(&neg, &dw, 1e-3, &b, &p, &zero).unwrap();
    assert!((&a.coeffs + &bb.coeffs).amax() < 1e-12);
}

#[test]
fn transformed_step_matches_euler_maruyama_at_s_two() {
    let b = basis(16, 64);
    let p = ModelParams::with_balanced_weights(2.0, vec![1.0, 1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0])).unwrap();
    let model = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_diagonal_element(2, 2, 0.2), 4).with_mean_excluded(true);
    let mut u = SpeciesField::from_coeffs(
        DMatrix::from_fn(2, 16, |i, k| if k == 0 { 1.5 + i as f64 } else { 0.1 / (k * k) as f64 }),
        &b,
    );
    let path = sample_path(0.05, 50, 2, 4, 11).unwrap();
    let mut v = u.clone();
    for m in 0..50 {
        let dw = path.increment_between(m as f64 * 1e-3, (m + 1) as f64 * 1e-3).unwrap();
        let a = euler_maruyama_step(&u, &dw, 1e-3, &b, &p, &model).unwrap();
        let t = transformed_step(&v, &dw, 1e-3, &b, &p, &model).unwrap();
        assert!((&a.coeffs - &t.coeffs).amax() < 1e-10, "step {m}");
        u = a;
        v = t;
    }
}

#[test]
fn transformed_step_keeps_constants() {
    let b = basis(16, 64);
    let p = reference_params();
    let v = SpeciesField::from_coeffs(DMatrix::from_fn(2, 16, |i, k| if k == 0 { 1.0 + i as f64 } else { 0.0 }), &b);
    let next = transformed_step(&v, &DMatrix::zeros(2, 1), 1e-2, &b, &p, &NoiseModel::zero(2)).unwrap();
    assert!((&next.coeffs - &v.coeffs).amax() < 1e-12);
    let bad = SpeciesField::from_coeffs(DMatrix::from_fn(2, 16, |_, k| if k == 1 { 1.0 } else { 0.0 }), &b);
    assert!(transformed_step(&bad, &DMatrix::zeros(2, 1), 1e-2, &b, &p, &NoiseModel::zero(2)).is_err());
}

#[test]
fn run_path_basics() {
    let mut cfg = bump_config();
    cfg.horizon = 0.0;
    let rec = run_path(&cfg, 3).unwrap();
    assert_eq!(rec.monitors.len(), 1);
    assert_eq!(rec.states.len(), 1);
    let b = basis(16, 64);
    let projected = SpeciesField::from_values(
        DMatrix::from_fn(2, 64, |i, q| cfg.initial.value(i, b.quad_nodes[q], 1.0)),
        &b,
    );
    assert!((&rec.states[0].coeffs - &projected.coeffs).amax() < 1e-14);

    let mut cfg = bump_config();
    cfg.horizon = 0.02;
    let a = run_path(&cfg, 1).unwrap();
    let c = run_path(&cfg, 99).unwrap();
    assert_eq!(a.monitor_csv(2), c.monitor_csv(2));
}

#[test]
fn run_path_is_deterministic_with_noise() {
    let mut cfg = bump_config();
    cfg.horizon = 0.02;
    cfg.noise = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_diagonal_element(2, 2, 0.1), 8);
    let a = run_path(&cfg, 5).unwrap();
    let b = run_path(&cfg, 5).unwrap();
    let c = run_path(&cfg, 6).unwrap();
    assert_eq!(a.monitor_csv(2), b.monitor_csv(2));
    assert_ne!(a.monitor_csv(2), c.monitor_csv(2));
    assert!(a.monitors.iter().all(|r| r.min_nodal > 0.0));
}

#[test]
fn mass_is_conserved_pathwise_without_the_mean_mode() {
    let mut cfg = bump_config();
    cfg.horizon = 0.03;
    cfg.noise = NoiseModel::new(NoiseKind::BoundedMultiplicative, DMatrix::from_diagonal_element(2, 2, 0.3), 8).with_mean_excluded(true);
    let rec = run_path(&cfg, 8).unwrap();
    assert!(!rec.truncated);
    let m0 = &rec.monitors[0].mass;
    for row in &rec.monitors {
        for i in 0..2 {
            assert!((row.mass[i] - m0[i]).abs() <= 1e-8 * m0[i]);
        }
    }
}

#[test]
fn semi_implicit_schemes_converge_to_the_implicit_scheme_at_first_order() {
    let b = basis(16, 64);
    let mut base = bump_config();
    base.initial = InitialProfile::cosine(vec![1.0, 1.2], vec![0.3, -0.2], 1);
    base.horizon = 0.02;
    let distances = |tau: f64| {
        let mut c = base.clone();
        c.step = StepConfig::new(tau).with_epsilon(0.0);
        let e = run_path(&c, 0).unwrap();
        c.scheme = Scheme::EulerMaruyama;
        let m = run_path(&c, 0).unwrap();
        c.scheme = Scheme::Transformed;
        let t = run_path(&c, 0).unwrap();
        (
            power_distance(e.final_state(), m.final_state(), 1.0, &b),
            power_distance(e.final_state(), t.final_state(), 1.5, &b),
        )
    };
    let (em1, tr1) = distances(1e-3);
    let (em2, tr2) = distances(5e-4);
    for ratio in [em1 / em2, tr1 / tr2] {
        assert!((1.5..=3.0).contains(&ratio), "ratio {ratio}");
    }
    let e = run_path(&base, 0).unwrap();
    let u = e.final_state();
    assert!(mass(u, &b).iter().all(|x| *x > 0.0));
    let last = e.monitors.last().unwrap();
    let again = compute_monitors(u, &b, &base.params);
    assert_eq!(again.entropy.to_bits(), last.entropy.to_bits());
}
