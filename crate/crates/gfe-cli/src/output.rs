//! Output handling: tracked artifact writing, the run manifest, and a
//! minimal SVG line chart for profile series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes artifacts into the output directory and records them, so a failed
/// run can remove its partial outputs and a successful one can emit a
/// manifest with content hashes.
pub struct OutputTracker {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputTracker {
    pub fn create(dir: &Path) -> anyhow::Result<OutputTracker> {
        fs::create_dir_all(dir)?;
        Ok(OutputTracker {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_text(&mut self, name: &str, content: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, content)?;
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Record a file written by other means (for example the panel writer).
    pub fn note_external(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    /// Write `manifest.json` with the command, full configuration echo, and
    /// a sha256 per emitted artifact. Everything a rerun needs.
    pub fn finalize<C: Serialize>(mut self, command: &str, config: &C) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct ArtifactEntry {
            file: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest<'a, C: Serialize> {
            command: &'a str,
            version: &'a str,
            config: &'a C,
            outputs: Vec<ArtifactEntry>,
        }
        let mut outputs = Vec::new();
        for path in &self.files {
            let bytes = fs::read(path)?;
            let digest = Sha256::digest(&bytes);
            outputs.push(ArtifactEntry {
                file: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: hex_string(&digest),
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        self.files.clear();
        Ok(())
    }

    /// Remove everything written so far; used on failure.
    pub fn discard(self) {
        for path in &self.files {
            let _ = fs::remove_file(path);
        }
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(out, "{:02x}", b).expect("write to string");
    }
    out
}

/// A CSV builder that prints floats with round-trip precision.
pub struct CsvBuilder {
    buffer: String,
}

impl CsvBuilder {
    pub fn new(header: &str) -> CsvBuilder {
        let mut buffer = String::new();
        buffer.push_str(header);
        buffer.push('\n');
        CsvBuilder { buffer }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buffer.push_str(&fields.join(","));
        self.buffer.push('\n');
    }

    pub fn finish(self) -> String {
        self.buffer
    }
}

const SVG_COLORS: &[&str] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
]
.as_slice();

/// Static line chart of one series per group over the period axis. Data
/// emission is CSV-first; this is a convenience view only.
pub fn profile_svg(periods: &[i64], series: &[Vec<f64>]) -> String {
    let width = 720.0;
    let height = 440.0;
    let margin = 50.0;
    let t = periods.len();
    let ymin = series
        .iter()
        .flatten()
        .fold(f64::INFINITY, |a, &b| a.min(b))
        .min(0.0);
    let ymax = series
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        .max(0.0);
    let yspan = if (ymax - ymin).abs() < 1e-12 { 1.0 } else { ymax - ymin };
    let x = |ti: usize| -> f64 {
        if t <= 1 {
            margin
        } else {
            margin + (width - 2.0 * margin) * ti as f64 / (t - 1) as f64
        }
    };
    let y = |v: f64| -> f64 { height - margin - (height - 2.0 * margin) * (v - ymin) / yspan };

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">",
        w = width,
        h = height
    )
    .unwrap();
    // Axes and the zero line.
    writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{y0}\" x2=\"{xr}\" y2=\"{y0}\" stroke=\"#999\"/>",
        m = margin,
        xr = width - margin,
        y0 = y(0.0)
    )
    .unwrap();
    writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{yb}\" stroke=\"#333\"/>",
        m = margin,
        yb = height - margin
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
        margin - 4.0,
        y(ymax) + 4.0,
        ymax
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
        margin - 4.0,
        y(ymin) + 4.0,
        ymin
    )
    .unwrap();
    for (ti, period) in periods.iter().enumerate() {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x(ti),
            height - margin + 16.0,
            period
        )
        .unwrap();
    }
    for (g, row) in series.iter().enumerate() {
        let color = SVG_COLORS[g % SVG_COLORS.len()];
        let points: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(ti, &v)| format!("{:.2},{:.2}", x(ti), y(v)))
            .collect();
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\" points=\"{}\"/>",
            color,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">g{}</text>",
            width - margin + 6.0,
            y(*row.last().unwrap_or(&0.0)) + 4.0,
            color,
            g + 1
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
