//! Line-oriented configuration format.
//!
//! ```text
//! # comment
//! [model]
//! n = 2
//! s = 3
//! a0 = 1, 1
//! a = 1, 0.5; 0.5, 1
//! ```
//!
//! Sections are `[model]`, `[grid]`, `[step]`, `[noise]`, `[run]`,
//! `[initial]`, `[check]` and `[converge]`. Vectors are comma separated and
//! matrix rows are separated by `;`. Every key is optional except
//! `model.n`; omitted keys take the values in [`DEFAULTS`]. Parsing reports
//! every error it finds, each with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crossdiff_core::assumptions::solve_detailed_balance;
use crossdiff_core::model::DETAILED_BALANCE_RTOL;
use crossdiff_core::monitors::RefinementKind;
use crossdiff_core::{
    Dominance, GridSpec, InitialProfile, ModelParams, NoiseKind, NoiseModel, ProfileKind, RunConfig, Scheme, StepConfig,
};
use nalgebra::DMatrix;

/// Default values of the optional keys, as `(section, key, value)`.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("model", "s", "2"),
    ("model", "a0", "1 per species"),
    ("model", "a", "identity"),
    ("model", "pi", "solved from detailed balance"),
    ("model", "dominance", "strong"),
    ("grid", "L", "1"),
    ("grid", "N", "16"),
    ("grid", "Q", "64"),
    ("step", "tau", "1e-3"),
    ("step", "epsilon", "1e-8 * tau"),
    ("step", "newton_tol", "1e-10"),
    ("step", "newton_max_iter", "40"),
    ("step", "continuation_steps", "8"),
    ("noise", "kind", "zero"),
    ("noise", "c", "0"),
    ("noise", "modes", "8 (1 for zero noise)"),
    ("noise", "exclude_mean", "false"),
    ("run", "T", "0.1"),
    ("run", "eta", "1e-2"),
    ("run", "scheme", "entropy"),
    ("run", "seed", "42"),
    ("run", "paths", "1"),
    ("run", "snapshot_stride", "0"),
    ("run", "output_dir", "out"),
    ("initial", "profile", "constant"),
    ("initial", "base", "1 per species"),
    ("initial", "amplitude", "0 per species"),
    ("initial", "center", "0.5"),
    ("initial", "width", "0.1"),
    ("initial", "mode", "1"),
    ("check", "samples", "100000"),
    ("check", "seed", "run.seed"),
    ("converge", "kind", "tau"),
    ("converge", "levels", "4e-3, 2e-3, 1e-3"),
];

const KNOWN: &[(&str, &[&str])] = &[
    ("model", &["n", "s", "a0", "a", "pi", "dominance"]),
    ("grid", &["L", "N", "Q"]),
    ("step", &["tau", "epsilon", "newton_tol", "newton_max_iter", "continuation_steps"]),
    ("noise", &["kind", "c", "modes", "exclude_mean"]),
    ("run", &["T", "eta", "scheme", "seed", "paths", "snapshot_stride", "output_dir"]),
    ("initial", &["profile", "base", "amplitude", "center", "width", "mode"]),
    ("check", &["samples", "seed"]),
    ("converge", &["kind", "levels"]),
];

/// One problem found while reading a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line, absent when the problem involves defaults only.
    pub line: Option<usize>,
    /// `section.key`, or empty for syntax errors.
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.key.is_empty()) {
            (Some(l), false) => write!(f, "line {l}: {}: {}", self.key, self.message),
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (None, false) => write!(f, "{}: {}", self.key, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

/// What `converge` sweeps over.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvergeKind {
    Refinement(RefinementKind),
    /// Galerkin dimension.
    Modes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeSpec {
    pub kind: ConvergeKind,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    pub samples: usize,
    pub seed: u64,
}

/// A fully validated configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub run: RunConfig,
    pub output_dir: PathBuf,
    pub check: CheckSpec,
    pub converge: ConvergeSpec,
    /// Set when `s < 2`.
    pub low_exponent_warning: bool,
    pub warnings: Vec<String>,
}

struct Entry {
    line: usize,
    value: String,
}

struct Reader {
    entries: BTreeMap<(String, String), Entry>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn err(&mut self, line: Option<usize>, key: &str, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|e| e.line)
    }

    fn raw(&self, section: &str, key: &str) -> Option<(usize, String)> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|e| (e.line, e.value.clone()))
    }

    fn typed<T>(&mut self, section: &str, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        let (line, value) = self.raw(section, key)?;
        let parsed = parse(&value);
        if parsed.is_none() {
            self.err(Some(line), &format!("{section}.{key}"), format!("expected {what}, found `{value}`"));
        }
        parsed
    }

    fn real(&mut self, section: &str, key: &str) -> Option<f64> {
        self.typed(section, key, "a real number", parse_real)
    }

    fn integer(&mut self, section: &str, key: &str) -> Option<u64> {
        self.typed(section, key, "a nonnegative integer", |v| v.parse::<u64>().ok())
    }

    fn vector(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        self.typed(section, key, "a comma-separated list of reals", parse_vector)
    }

    fn matrix(&mut self, section: &str, key: &str) -> Option<Vec<Vec<f64>>> {
        self.typed(section, key, "matrix rows separated by `;`", |v| {
            v.split(';').map(parse_vector).collect::<Option<Vec<_>>>()
        })
    }

    fn boolean(&mut self, section: &str, key: &str) -> Option<bool> {
        self.typed(section, key, "true or false", |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn word(&mut self, section: &str, key: &str) -> Option<String> {
        self.raw(section, key).map(|(_, v)| v)
    }

    /// Records `message` against `section.key` when `ok` is false.
    fn require(&mut self, ok: bool, section: &str, key: &str, message: impl Into<String>) -> bool {
        if !ok {
            let line = self.line_of(section, key);
            self.err(line, &format!("{section}.{key}"), message);
        }
        ok
    }
}

fn parse_real(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_vector(v: &str) -> Option<Vec<f64>> {
    v.split(',').map(|x| parse_real(x.trim())).collect()
}

fn lex(text: &str, r: &mut Reader) {
    let mut section: Option<String> = None;
    let mut skipping = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            if KNOWN.iter().any(|(s, _)| *s == name) {
                section = Some(name.to_string());
                skipping = false;
            } else {
                r.err(Some(line), "", format!("unknown section [{name}]"));
                section = None;
                skipping = true;
            }
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            r.err(Some(line), "", format!("expected `key = value`, found `{body}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section.clone() else {
            if !skipping {
                r.err(Some(line), key, "key appears outside any section");
            }
            continue;
        };
        let allowed = KNOWN.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            r.err(Some(line), &format!("{sec}.{key}"), format!("unknown key in [{sec}]"));
            continue;
        }
        let slot = (sec.clone(), key.to_string());
        if let Some(prev) = r.entries.get(&slot) {
            let prev = prev.line;
            r.err(Some(line), &format!("{sec}.{key}"), format!("duplicate key (first set on line {prev})"));
            continue;
        }
        r.entries.insert(
            slot,
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }
}

fn species_vector(r: &mut Reader, section: &str, key: &str, n: usize, default: f64) -> Vec<f64> {
    match r.vector(section, key) {
        Some(v) if v.len() == n => v,
        Some(v) => {
            r.require(false, section, key, format!("expected {n} entries, found {}", v.len()));
            vec![default; n]
        }
        None => vec![default; n],
    }
}

fn model_params(r: &mut Reader, n: usize) -> Option<ModelParams> {
    let s = r.real("model", "s").unwrap_or(2.0);
    let s_ok = r.require(s >= 1.0, "model", "s", format!("s = {s} must be at least 1"));
    let a0 = species_vector(r, "model", "a0", n, 1.0);
    let mut ok = s_ok;
    for (i, &v) in a0.iter().enumerate() {
        ok &= r.require(v > 0.0, "model", "a0", format!("entry {} = {v} must be positive", i + 1));
    }
    let a = match r.matrix("model", "a") {
        Some(rows) if rows.len() == n && rows.iter().all(|row| row.len() == n) => {
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        Some(_) => {
            r.require(false, "model", "a", format!("expected an {n}x{n} matrix"));
            return None;
        }
        None => DMatrix::identity(n, n),
    };
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            ok &= r.require(
                v >= 0.0,
                "model",
                "a",
                format!("a_{}{} = {v} violates the nonnegativity rule a_ij >= 0", i + 1, j + 1),
            );
        }
    }
    let dominance = match r.word("model", "dominance").as_deref() {
        None | Some("strong") => Dominance::Strong,
        Some("weak") => Dominance::Weak,
        Some(other) => {
            r.require(false, "model", "dominance", format!("expected strong or weak, found `{other}`"));
            Dominance::Strong
        }
    };
    let explicit_pi = r.line_of("model", "pi").is_some();
    let pi = if explicit_pi {
        let pi = species_vector(r, "model", "pi", n, 1.0);
        for (i, &v) in pi.iter().enumerate() {
            ok &= r.require(v > 0.0, "model", "pi", format!("entry {} = {v} must be positive", i + 1));
        }
        pi
    } else if ok {
        match solve_detailed_balance(&a, DETAILED_BALANCE_RTOL) {
            Ok(pi) => pi,
            Err(e) => {
                r.require(false, "model", "a", e.to_string());
                return None;
            }
        }
    } else {
        vec![1.0; n]
    };
    if !ok {
        return None;
    }
    let key = if explicit_pi { "pi" } else { "a" };
    let params = match ModelParams::new(s, a0, a, pi) {
        Ok(p) => p.with_dominance(dominance),
        Err(e) => {
            r.require(false, "model", key, e.to_string());
            return None;
        }
    };
    let key = if r.line_of("model", "a").is_some() { "a" } else { "dominance" };
    if let Err(e) = params.dominance_check() {
        r.require(false, "model", key, e.to_string());
        return None;
    }
    Some(params)
}

fn noise_model(r: &mut Reader, n: usize) -> NoiseModel {
    let kind = match r.word("noise", "kind").as_deref() {
        None | Some("zero") => NoiseKind::Zero,
        Some("additive") => NoiseKind::Additive,
        Some("bounded_multiplicative") => NoiseKind::BoundedMultiplicative,
        Some(other) => {
            r.require(
                false,
                "noise",
                "kind",
                format!("expected zero, additive or bounded_multiplicative, found `{other}`"),
            );
            NoiseKind::Zero
        }
    };
    let c = match r.matrix("noise", "c") {
        None => DMatrix::zeros(n, n),
        Some(rows) if rows.len() == 1 && rows[0].len() == 1 => DMatrix::from_diagonal_element(n, n, rows[0][0]),
        Some(rows) if rows.len() == 1 && rows[0].len() == n => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rows[0].clone())),
        Some(rows) if rows.len() == n && rows.iter().all(|row| row.len() == n) => {
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        Some(_) => {
            r.require(false, "noise", "c", format!("expected a scalar, {n} diagonal entries or an {n}x{n} matrix"));
            DMatrix::zeros(n, n)
        }
    };
    let modes = r.integer("noise", "modes").map(|k| k as usize);
    let exclude = r.boolean("noise", "exclude_mean").unwrap_or(false);
    if kind == NoiseKind::Zero {
        let mut z = NoiseModel::zero(n);
        z.modes = modes.unwrap_or(1);
        return z.with_mean_excluded(exclude);
    }
    NoiseModel::new(kind, c, modes.unwrap_or(8)).with_mean_excluded(exclude)
}

fn initial_profile(r: &mut Reader, n: usize) -> InitialProfile {
    let kind = match r.word("initial", "profile") {
        None => ProfileKind::Constant,
        Some(w) => ProfileKind::parse(&w).unwrap_or_else(|| {
            r.require(false, "initial", "profile", format!("expected constant, bump or cosine, found `{w}`"));
            ProfileKind::Constant
        }),
    };
    let base = species_vector(r, "initial", "base", n, 1.0);
    let amplitude = species_vector(r, "initial", "amplitude", n, 0.0);
    let center = r.real("initial", "center").unwrap_or(0.5);
    let width = r.real("initial", "width").unwrap_or(0.1);
    let mode = r.integer("initial", "mode").unwrap_or(1) as usize;
    InitialProfile {
        kind,
        base,
        amplitude,
        center,
        width,
        mode,
    }
}

fn converge_spec(r: &mut Reader) -> ConvergeSpec {
    let kind = match r.word("converge", "kind").as_deref() {
        None => ConvergeKind::Refinement(RefinementKind::Tau),
        Some("N") | Some("n") | Some("modes") => ConvergeKind::Modes,
        Some(w) => match RefinementKind::parse(w) {
            Some(k) => ConvergeKind::Refinement(k),
            None => {
                r.require(false, "converge", "kind", format!("expected tau, eta, epsilon or N, found `{w}`"));
                ConvergeKind::Refinement(RefinementKind::Tau)
            }
        },
    };
    let levels = r.vector("converge", "levels").unwrap_or_else(|| vec![4e-3, 2e-3, 1e-3]);
    let ok = match kind {
        ConvergeKind::Modes => levels.iter().all(|&v| v >= 1.0 && v.fract() == 0.0) && !levels.is_empty(),
        ConvergeKind::Refinement(_) => levels.len() >= 2 && levels.windows(2).all(|w| w[1] < w[0]),
    };
    let rule = match kind {
        ConvergeKind::Modes => "levels must be positive integers",
        ConvergeKind::Refinement(_) => "levels must be at least two strictly decreasing values",
    };
    r.require(ok, "converge", "levels", rule);
    ConvergeSpec { kind, levels }
}

/// Attaches a cross-field validation message to the most relevant key.
fn blame(message: &str) -> (&'static str, &'static str) {
    const RULES: &[(&str, (&str, &str))] = &[
        ("multiple of eta", ("run", "eta")),
        ("divide one another", ("run", "eta")),
        ("multiple of tau", ("step", "tau")),
        ("tau", ("step", "tau")),
        ("epsilon", ("step", "epsilon")),
        ("newton", ("step", "newton_tol")),
        ("noise", ("noise", "modes")),
        ("mode", ("noise", "modes")),
        ("initial", ("initial", "base")),
        ("bump", ("initial", "width")),
        ("quadrature", ("grid", "Q")),
        ("length", ("grid", "L")),
        ("T ", ("run", "T")),
        ("eta", ("run", "eta")),
        ("paths", ("run", "paths")),
    ];
    RULES
        .iter()
        .find(|(needle, _)| message.contains(needle))
        .map(|(_, slot)| *slot)
        .unwrap_or(("run", "T"))
}

/// Parses and validates a config file, returning every error found.
pub fn parse_config(text: &str) -> Result<ParsedConfig, Vec<ConfigError>> {
    let mut r = Reader {
        entries: BTreeMap::new(),
        errors: Vec::new(),
    };
    lex(text, &mut r);

    let n = match r.integer("model", "n") {
        Some(n) if n >= 1 => Some(n as usize),
        Some(_) => {
            r.require(false, "model", "n", "species count must be at least 1");
            None
        }
        None => {
            if r.line_of("model", "n").is_none() {
                r.err(None, "model.n", "required key is missing");
            }
            None
        }
    };
    let Some(n) = n else {
        return Err(r.errors);
    };

    let params = model_params(&mut r, n);
    let length = r.real("grid", "L").unwrap_or(1.0);
    let modes = r.integer("grid", "N").unwrap_or(16) as usize;
    let quad = r.integer("grid", "Q").unwrap_or(64) as usize;
    let grid = match GridSpec::new(length, modes, quad) {
        Ok(g) => Some(g),
        Err(e) => {
            let key = if !(length > 0.0) {
                "L"
            } else if modes == 0 {
                "N"
            } else {
                "Q"
            };
            r.require(false, "grid", key, e.to_string());
            None
        }
    };

    let tau = r.real("step", "tau").unwrap_or(1e-3);
    let mut step = StepConfig::new(tau);
    if let Some(eps) = r.real("step", "epsilon") {
        step.epsilon = eps;
    }
    if let Some(tol) = r.real("step", "newton_tol") {
        step.newton_tol = tol;
    }
    if let Some(k) = r.integer("step", "newton_max_iter") {
        step.newton_max_iter = k as usize;
    }
    if let Some(k) = r.integer("step", "continuation_steps") {
        step.continuation_steps = k as usize;
    }

    let noise = noise_model(&mut r, n);
    let initial = initial_profile(&mut r, n);
    let horizon = r.real("run", "T").unwrap_or(0.1);
    let eta = r.real("run", "eta").unwrap_or(1e-2);
    let scheme = match r.word("run", "scheme") {
        None => Scheme::Entropy,
        Some(w) => Scheme::parse(&w).unwrap_or_else(|| {
            r.require(false, "run", "scheme", format!("expected entropy, euler_maruyama or transformed, found `{w}`"));
            Scheme::Entropy
        }),
    };
    let seed = r.integer("run", "seed").unwrap_or(42);
    let n_paths = r.integer("run", "paths").unwrap_or(1) as usize;
    let snapshot_stride = r.integer("run", "snapshot_stride").unwrap_or(0) as usize;
    let output_dir = PathBuf::from(r.word("run", "output_dir").unwrap_or_else(|| "out".into()));
    let check = CheckSpec {
        samples: r.integer("check", "samples").unwrap_or(100_000) as usize,
        seed: r.integer("check", "seed").unwrap_or(seed),
    };
    r.require(check.samples >= 1, "check", "samples", "at least one sample is needed");
    let converge = converge_spec(&mut r);

    let (Some(params), Some(grid)) = (params, grid) else {
        return Err(r.errors);
    };
    let low_exponent_warning = params.low_exponent_warning();
    let mut warnings = Vec::new();
    if low_exponent_warning {
        warnings.push(format!(
            "s = {} is below 2; the existence theory does not cover this exponent",
            params.s
        ));
    }
    let run = RunConfig {
        params,
        grid,
        step,
        noise,
        horizon,
        eta,
        scheme,
        initial,
        seed,
        n_paths,
        snapshot_stride,
    };
    for e in run.validation_errors() {
        let text = e.to_string();
        let (section, key) = blame(&text);
        r.require(false, section, key, text);
    }
    if !r.errors.is_empty() {
        return Err(r.errors);
    }
    Ok(ParsedConfig {
        run,
        output_dir,
        check,
        converge,
        low_exponent_warning,
        warnings,
    })
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn matrix_text(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| join(&m.row(i).iter().copied().collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Canonical config text; `parse_config(&write_config(c))` reproduces `c`.
pub fn write_config(c: &ParsedConfig) -> String {
    render(c, true)
}

/// Canonical config text without `run.output_dir`, as echoed in manifests.
pub fn config_echo(c: &ParsedConfig) -> String {
    render(c, false)
}

fn render(c: &ParsedConfig, with_output: bool) -> String {
    let r = &c.run;
    let p = &r.params;
    let noise_kind = match r.noise.kind {
        NoiseKind::Zero => "zero",
        NoiseKind::Additive => "additive",
        NoiseKind::BoundedMultiplicative => "bounded_multiplicative",
    };
    let converge_kind = match &c.converge.kind {
        ConvergeKind::Modes => "N",
        ConvergeKind::Refinement(k) => k.name(),
    };
    let dominance = match p.dominance {
        Dominance::Strong => "strong",
        Dominance::Weak => "weak",
    };
    let mut out = String::new();
    let mut push = |line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    push("[model]".into());
    push(format!("n = {}", p.n()));
    push(format!("s = {:?}", p.s));
    push(format!("a0 = {}", join(&p.a0)));
    push(format!("a = {}", matrix_text(&p.a)));
    push(format!("pi = {}", join(&p.pi)));
    push(format!("dominance = {dominance}"));
    push("[grid]".into());
    push(format!("L = {:?}", r.grid.length));
    push(format!("N = {}", r.grid.modes));
    push(format!("Q = {}", r.grid.quad_points));
    push("[step]".into());
    push(format!("tau = {:?}", r.step.tau));
    push(format!("epsilon = {:?}", r.step.epsilon));
    push(format!("newton_tol = {:?}", r.step.newton_tol));
    push(format!("newton_max_iter = {}", r.step.newton_max_iter));
    push(format!("continuation_steps = {}", r.step.continuation_steps));
    push("[noise]".into());
    push(format!("kind = {noise_kind}"));
    push(format!("c = {}", matrix_text(&r.noise.c)));
    push(format!("modes = {}", r.noise.modes));
    push(format!("exclude_mean = {}", r.noise.exclude_mean));
    push("[run]".into());
    push(format!("T = {:?}", r.horizon));
    push(format!("eta = {:?}", r.eta));
    push(format!("scheme = {}", r.scheme.name()));
    push(format!("seed = {}", r.seed));
    push(format!("paths = {}", r.n_paths));
    push(format!("snapshot_stride = {}", r.snapshot_stride));
    if with_output {
        push(format!("output_dir = {}", c.output_dir.display()));
    }
    push("[initial]".into());
    push(format!("profile = {}", r.initial.kind.name()));
    push(format!("base = {}", join(&r.initial.base)));
    push(format!("amplitude = {}", join(&r.initial.amplitude)));
    push(format!("center = {:?}", r.initial.center));
    push(format!("width = {:?}", r.initial.width));
    push(format!("mode = {}", r.initial.mode));
    push("[check]".into());
    push(format!("samples = {}", c.check.samples));
    push(format!("seed = {}", c.check.seed));
    push("[converge]".into());
    push(format!("kind = {converge_kind}"));
    push(format!("levels = {}", join(&c.converge.levels)));
    out
}
