use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub program: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Settings,
}

impl Meta {
    pub fn new(command: String, config: &Settings) -> Self {
        Meta {
            program: "parament",
            version: VERSION,
            command,
            config: config.clone(),
        }
    }

    /// `#`-prefixed header lines for CSV files.
    pub fn csv_header(&self) -> String {
        let config = serde_json::to_string(&self.config).unwrap_or_default();
        format!(
            "# {} {}\n# command: {}\n# config: {}\n",
            self.program, self.version, self.command, config
        )
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

fn create(path: &Path) -> CliResult<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(&Document { meta, body })
        .map_err(|e| CliError::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::io(path, e))
}

/// Writes the metadata header, then `rows` (first row is the header row).
pub fn write_csv(path: &Path, meta: &Meta, rows: &[Vec<String>]) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(meta.csv_header().as_bytes())
        .map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::io(path, e))
}

/// `results/run.csv` -> `results/run.plot.py`
pub fn plot_script_path(csv: &Path) -> PathBuf {
    csv.with_extension("plot.py")
}

pub fn float(x: f64) -> String {
    format!("{x:e}")
}

const PLOT_PRELUDE: &str = r##"#!/usr/bin/env python3
"""Plots a parament CSV file. Needs numpy and matplotlib."""
import csv
import math
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
CSV = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, __CSV__)
OUT = sys.argv[2] if len(sys.argv) > 2 else CSV.rsplit(".", 1)[0] + ".png"


def number(s):
    if s == "unbounded":
        return math.inf
    return float(s) if s else math.nan


with open(CSV, newline="") as f:
    reader = csv.DictReader(line for line in f if not line.startswith("#"))
    rows = list(reader)
cols = reader.fieldnames
"##;

pub fn simulate_plot_script(csv: &Path) -> String {
    let body = r#"
t = np.array([number(r["t_omega"]) for r in rows])
en = np.array([number(r["E_N"]) for r in rows])
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(t, en)
ax.set_xlabel(r"$\omega t$")
ax.set_ylabel(r"$E_N$")
fig.tight_layout()
fig.savefig(OUT, dpi=150)
"#;
    script(csv, body)
}

/// `log_axes` lists the axis columns that were log-spaced.
pub fn sweep_plot_script(csv: &Path, axes: &[String], log_axes: &[String]) -> String {
    let axes_py = format!("{axes:?}");
    let log_py = format!("{log_axes:?}");
    let body = format!(
        r#"
AXES = {axes_py}
LOG = {log_py}
outputs = [c for c in cols if c not in AXES and c not in ("steps", "flags")]


def axis(name):
    v = np.array([number(r[name]) for r in rows])
    return np.log10(v) if name in LOG else v


def label(name):
    return "log10(" + name + ")" if name in LOG else name


fig, axs = plt.subplots(1, len(outputs), figsize=(5 * len(outputs), 4), squeeze=False)
for ax, out in zip(axs[0], outputs):
    z = np.array([number(r[out]) for r in rows])
    z[np.isinf(z)] = np.nan
    if len(AXES) == 1:
        ax.plot(axis(AXES[0]), z, marker="o")
        ax.set_xlabel(label(AXES[0]))
        ax.set_ylabel(out)
    else:
        x, y = axis(AXES[0]), axis(AXES[1])
        nx, ny = len(np.unique(x)), len(np.unique(y))
        mesh = ax.pcolormesh(
            x.reshape(nx, ny), y.reshape(nx, ny), z.reshape(nx, ny), shading="nearest"
        )
        fig.colorbar(mesh, ax=ax, label=out)
        ax.set_xlabel(label(AXES[0]))
        ax.set_ylabel(label(AXES[1]))
fig.tight_layout()
fig.savefig(OUT, dpi=150)
"#
    );
    script(csv, &body)
}

fn script(csv: &Path, body: &str) -> String {
    let name = csv
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s = PLOT_PRELUDE.replace("__CSV__", &format!("{name:?}"));
    s.push_str(body);
    s
}
