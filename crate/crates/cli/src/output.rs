//! Tables, atomic file writes, the run manifest and the plotting script.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// 17 significant digits, so values round-trip bit for bit.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| num(v)).collect());
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().context("flushing csv buffer")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so a reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<"`, `"<="` or `">="`, relating `value` to `tolerance`.
    pub relation: String,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, "<", tolerance, value < tolerance)
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, ">=", tolerance, value >= tolerance)
    }

    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, "<=", tolerance, value <= tolerance)
    }

    fn new(name: &str, value: f64, relation: &str, tolerance: f64, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            relation: relation.to_string(),
            tolerance,
            passed,
        }
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        self.name = format!("{prefix}/{}", self.name);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub config: String,
    pub tolerances: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// Plotting script for the CSV files of one run. Density tables (`t, x, rho`) are drawn
/// as one curve per output time; any other table as its columns against the first.
pub fn plot_script(csvs: &[String]) -> String {
    let list = csvs.iter().map(|c| format!("    \"{c}\",")).collect::<Vec<_>>().join("\n");
    format!(
        r#"#!/usr/bin/env python3
"""Plots the CSV outputs of this run; figures are written next to the data."""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = [
{list}
]


def load(name):
    with open(os.path.join(HERE, name), newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def numeric(column):
    try:
        return [float(v) for v in column]
    except ValueError:
        return None


def main():
    for name in FILES:
        header, rows = load(name)
        if not rows:
            continue
        columns = list(zip(*rows))
        fig, ax = plt.subplots(figsize=(7, 4.5))
        if header[:2] == ["t", "x"]:
            times = sorted({{float(r[0]) for r in rows}})
            for t in times:
                sel = [r for r in rows if float(r[0]) == t]
                xs = [float(r[1]) for r in sel]
                for k in range(2, len(header)):
                    ax.plot(xs, [float(r[k]) for r in sel], label=f"{{header[k]}} t={{t:g}}")
            ax.set_xlabel("x")
        else:
            x = numeric(columns[0])
            if x is None:
                x = list(range(len(rows)))
            for k in range(1, len(header)):
                y = numeric(columns[k])
                if y is not None:
                    ax.plot(x, y, marker=".", label=header[k])
            ax.set_xlabel(header[0])
        ax.legend(fontsize="small")
        ax.set_title(name)
        fig.tight_layout()
        out = os.path.join(HERE, os.path.splitext(name)[0] + ".png")
        fig.savefig(out, dpi=120)
        plt.close(fig)
        print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
"#
    )
}
