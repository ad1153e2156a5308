use crossdiff_cli::config::{parse_config, write_config, ConvergeKind};
use crossdiff_core::monitors::RefinementKind;
use crossdiff_core::{NoiseKind, ProfileKind, Scheme};

const REFERENCE: &str = include_str!("../../../configs/reference.cfg");

#[test]
fn minimal_config_takes_documented_defaults() {
    let c = parse_config("[model]\nn = 1\n").unwrap();
    assert_eq!(c.run.params.n(), 1);
    assert_eq!(c.run.params.s, 2.0);
    assert_eq!(c.run.grid.modes, 16);
    assert_eq!(c.run.grid.quad_points, 64);
    assert_eq!(c.run.grid.length, 1.0);
    assert_eq!(c.run.step.tau, 1e-3);
    assert!((c.run.step.epsilon - 1e-11).abs() < 1e-24);
    assert_eq!(c.run.eta, 1e-2);
    assert_eq!(c.run.horizon, 0.1);
    assert_eq!(c.run.seed, 42);
    assert_eq!(c.run.n_paths, 1);
    assert_eq!(c.run.scheme, Scheme::Entropy);
    assert_eq!(c.run.noise.kind, NoiseKind::Zero);
    assert_eq!(c.run.initial.kind, ProfileKind::Constant);
    assert_eq!(c.output_dir.to_str(), Some("out"));
    assert!(!c.low_exponent_warning);
    assert!(c.warnings.is_empty());
}

#[test]
fn low_exponent_sets_warning() {
    let c = parse_config("[model]\nn = 1\ns = 1.5\n").unwrap();
    assert!(c.low_exponent_warning);
    assert_eq!(c.warnings.len(), 1);
}

#[test]
fn negative_cross_rate_names_key_and_rule() {
    let errs = parse_config("[model]\nn = 2\na = 1, -0.5; 0.5, 1\n").unwrap_err();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].line, Some(3));
    assert_eq!(errs[0].key, "model.a");
    assert!(errs[0].message.contains("a_12"), "{}", errs[0]);
    assert!(errs[0].message.contains("nonnegativity"), "{}", errs[0]);
}

#[test]
fn every_error_is_reported_with_its_line() {
    let text = "\
[model]
n = 2
s = three
colour = red
[grid]
N = 16
Q = 8
[run]
T = 0.1
scheme = leapfrog
[unknown]
x = 1
[step]
tau = 1e-3
tau = 2e-3
";
    let errs = parse_config(text).unwrap_err();
    let lines: Vec<Option<usize>> = errs.iter().map(|e| e.line).collect();
    for expected in [3, 4, 7, 10, 11, 15] {
        assert!(lines.contains(&Some(expected)), "line {expected} missing from {errs:#?}");
    }
    assert!(!lines.contains(&Some(12)));
    let shown: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
    assert!(shown.iter().any(|s| s.starts_with("line 3: model.s: expected a real number")));
    assert!(shown.iter().any(|s| s.contains("unknown key")));
    assert!(shown.iter().any(|s| s.contains("duplicate key")));
}

#[test]
fn missing_species_count_is_an_error() {
    let errs = parse_config("[grid]\nN = 8\n").unwrap_err();
    assert_eq!(errs[0].key, "model.n");
    assert!(parse_config("[model]\nn = 0\n").is_err());
    assert!(parse_config("n = 1\n").is_err());
}

#[test]
fn cross_field_rules_are_attributed() {
    let errs = parse_config("[model]\nn = 1\n[run]\neta = 3e-2\n").unwrap_err();
    assert!(errs.iter().all(|e| e.key == "run.eta" && e.line == Some(4)), "{errs:#?}");
    let errs = parse_config("[model]\nn = 1\n[initial]\nprofile = cosine\nbase = 0.5\namplitude = 0.7\n").unwrap_err();
    assert!(errs[0].message.contains("negative"), "{errs:#?}");
}

#[test]
fn dominance_violation_is_rejected() {
    let errs = parse_config("[model]\nn = 2\ns = 3\na = 0.5, 2; 2, 0.5\n").unwrap_err();
    assert_eq!(errs.len(), 1);
    assert!(errs[0].to_string().contains("strong self-diffusion dominance condition"));
    assert_eq!(errs[0].line, Some(4));
    assert!(parse_config("[model]\nn = 2\ns = 3\na = 0.5, 0.9; 0.9, 0.5\ndominance = weak\n").is_ok());
}

#[test]
fn unbalanced_rates_report_the_cycle() {
    let text = "[model]\nn = 3\na = 1, 1, 0; 0, 1, 1; 1, 0, 1\n";
    let errs = parse_config(text).unwrap_err();
    assert_eq!(errs[0].key, "model.a");
}

#[test]
fn noise_amplitudes_accept_scalar_diagonal_and_matrix() {
    let base = "[model]\nn = 2\n[noise]\nkind = additive\nmodes = 4\n";
    let c = parse_config(&format!("{base}c = 0.2\n")).unwrap();
    assert_eq!(c.run.noise.c[(1, 1)], 0.2);
    assert_eq!(c.run.noise.c[(0, 1)], 0.0);
    let c = parse_config(&format!("{base}c = 0.2, 0.3\n")).unwrap();
    assert_eq!(c.run.noise.c[(1, 1)], 0.3);
    let c = parse_config(&format!("{base}c = 0.2, 0.1; 0.1, 0.3\n")).unwrap();
    assert_eq!(c.run.noise.c[(0, 1)], 0.1);
    assert!(parse_config(&format!("{base}c = 0.2, 0.1, 0.1\n")).is_err());
    assert!(parse_config("[model]\nn = 1\n[noise]\nkind = additive\nc = 1\nmodes = 17\n").is_err());
}

#[test]
fn reference_config_parses_and_round_trips() {
    let c = parse_config(REFERENCE).unwrap();
    assert_eq!(c.run.params.pi, vec![1.0, 1.0]);
    assert_eq!(c.run.noise.kind, NoiseKind::BoundedMultiplicative);
    assert!(c.run.noise.exclude_mean);
    assert_eq!(c.converge.kind, ConvergeKind::Refinement(RefinementKind::Eta));
    let text = write_config(&c);
    let study = parse_config(include_str!("../../../configs/eta_study.cfg")).unwrap();
    assert_eq!(study.converge.levels, vec![1e-2, 5e-3, 2.5e-3]);
    assert_eq!(study.run.step.tau, 5e-4);
    let again = parse_config(&text).unwrap();
    assert_eq!(again, c);
    assert_eq!(write_config(&again), text);
}

#[test]
fn converge_levels_are_checked() {
    let ok = parse_config("[model]\nn = 1\n[converge]\nkind = N\nlevels = 8, 16, 32\n").unwrap();
    assert_eq!(ok.converge.kind, ConvergeKind::Modes);
    assert!(parse_config("[model]\nn = 1\n[converge]\nkind = N\nlevels = 8.5\n").is_err());
    assert!(parse_config("[model]\nn = 1\n[converge]\nlevels = 1e-3, 2e-3\n").is_err());
    assert!(parse_config("[model]\nn = 1\n[converge]\nkind = sigma\n").is_err());
}
