//! CSV files, run manifests and plot scripts.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `text` to `dir/name`, creating `dir` if needed.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Joins a header and rows into CSV text with a trailing newline.
pub fn csv_text(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Reproducibility record of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: String,
    pub seeds: Vec<u64>,
    /// `(file name, sha256)` of every emitted file.
    pub files: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config: String, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds,
            files: Vec::new(),
        }
    }

    /// Records the checksum of a file that has been written.
    pub fn record(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.files.push((name, sha256_hex(&bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = format!("crossdiff {}\ncommand = {}\n", self.version, self.command);
        let seeds = match self.seeds.as_slice() {
            [] => String::new(),
            [one] => one.to_string(),
            [first, .., last] if (*last - *first) as usize + 1 == self.seeds.len() => format!("{first}..={last}"),
            all => all.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        };
        out.push_str(&format!("seeds = {seeds}\n"));
        out.push_str("\n# config\n");
        out.push_str(&self.config);
        out.push_str("\n# files\n");
        for (name, hash) in &self.files {
            out.push_str(&format!("{hash}  {name}\n"));
        }
        out
    }

    /// Parses the `# files` block of a rendered manifest.
    pub fn parse_files(text: &str) -> Vec<(String, String)> {
        text.split("\n# files\n")
            .nth(1)
            .unwrap_or("")
            .lines()
            .filter_map(|l| l.split_once("  "))
            .map(|(h, n)| (n.to_string(), h.to_string()))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        write_text(dir, "manifest.txt", &self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Monitor time series against `t`.
    Monitors,
    /// Log-log distance against the refined parameter.
    Refinement,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Monitors => "plot_monitors.py",
            PlotKind::Refinement => "plot_refinement.py",
        }
    }
}

fn header_of(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let header = text.lines().next().unwrap_or("");
    if header.is_empty() {
        return Err(CliError::Plot(format!("{} has no header line", path.display())));
    }
    Ok(header.split(',').map(str::to_string).collect())
}

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

/// Writes a standalone matplotlib script next to the first CSV.
pub fn emit_plot_script(csv_paths: &[PathBuf], kind: PlotKind) -> Result<PathBuf, CliError> {
    let first = csv_paths
        .first()
        .ok_or_else(|| CliError::Plot("no CSV files given".into()))?;
    let mut headers = Vec::new();
    for p in csv_paths {
        if !p.is_file() {
            return Err(CliError::Plot(format!("missing CSV {}", p.display())));
        }
        headers.push(header_of(p)?);
    }
    let dir = first.parent().unwrap_or_else(|| Path::new("."));
    let files: Vec<String> = csv_paths
        .iter()
        .map(|p| {
            if p.parent() == Some(dir) {
                p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            } else {
                p.canonicalize().unwrap_or_else(|_| p.clone()).display().to_string()
            }
        })
        .collect();
    let script = match kind {
        PlotKind::Monitors => {
            let columns: Vec<String> = headers[0].iter().filter(|c| *c != "t").cloned().collect();
            format!(
                r#"import csv
import os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = {files}
COLUMNS = {columns}

fig, axes = plt.subplots(len(COLUMNS), 1, figsize=(7, 2.2 * len(COLUMNS)), sharex=True)
for name in FILES:
    with open(os.path.join(HERE, name)) as f:
        rows = list(csv.DictReader(f))
    t = [float(r["t"]) for r in rows]
    for ax, col in zip(axes, COLUMNS):
        ax.plot(t, [float(r[col]) for r in rows], label=name)
        ax.set_ylabel(col)
axes[-1].set_xlabel("t")
axes[0].legend(fontsize="small")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "monitors.png"), dpi=120)
"#,
                files = py_list(&files),
                columns = py_list(&columns),
            )
        }
        PlotKind::Refinement => {
            for (h, f) in headers.iter().zip(&files) {
                for col in ["value", "mean_distance", "order"] {
                    if !h.iter().any(|c| c == col) {
                        return Err(CliError::Plot(format!("{f} lacks the `{col}` column")));
                    }
                }
            }
            format!(
                r#"import csv
import math
import os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = {files}

fig, ax = plt.subplots(figsize=(6, 4.5))
for name in FILES:
    with open(os.path.join(HERE, name)) as f:
        rows = list(csv.DictReader(f))
    pts = [(float(r["value"]), float(r["mean_distance"])) for r in rows if float(r["mean_distance"]) > 0]
    if not pts:
        continue
    ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=name)
    orders = [float(r["order"]) for r in rows if not math.isnan(float(r["order"]))]
    if orders:
        ax.annotate("slope %.2f" % orders[-1], xy=pts[-1], textcoords="offset points", xytext=(8, -12))
ax.set_xlabel("value")
ax.set_ylabel("mean_distance")
ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "refinement.png"), dpi=120)
"#,
                files = py_list(&files),
            )
        }
    };
    write_text(dir, kind.file_name(), &script)
}
