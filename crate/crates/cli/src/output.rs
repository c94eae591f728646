//! File writers: matrix and curve CSV, SVG heatmaps and the output manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One produced file and the shape of the numeric table it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub header: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<OutputFile>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes files under one directory and records them in the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn matrix_csv(&mut self, name: &str, m: &DMatrix<f64>) -> Result<(), CliError> {
        self.write(name, &matrix_to_csv(m))?;
        self.manifest.files.push(OutputFile {
            path: name.into(),
            kind: "matrix_csv".into(),
            rows: m.nrows(),
            cols: m.ncols(),
            header: false,
        });
        Ok(())
    }

    pub fn curves_csv(
        &mut self,
        name: &str,
        header: &[String],
        columns: &[Vec<f64>],
    ) -> Result<(), CliError> {
        let rows = columns.first().map_or(0, Vec::len);
        self.write(name, &curves_to_csv(header, columns))?;
        self.manifest.files.push(OutputFile {
            path: name.into(),
            kind: "curves_csv".into(),
            rows,
            cols: columns.len(),
            header: true,
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("serializing {name}: {e}")))?;
        self.write(name, &(text + "\n"))?;
        self.manifest.files.push(OutputFile {
            path: name.into(),
            kind: "json".into(),
            rows: 0,
            cols: 0,
            header: false,
        });
        Ok(())
    }

    pub fn svg(&mut self, name: &str, svg: &str) -> Result<(), CliError> {
        self.write(name, svg)?;
        self.manifest.files.push(OutputFile {
            path: name.into(),
            kind: "svg".into(),
            rows: 0,
            cols: 0,
            header: false,
        });
        Ok(())
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(self) -> Result<Manifest, CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Config(format!("serializing manifest: {e}")))?;
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// Row-major, comma separated, shortest round-trip scientific notation.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn curves_to_csv(header: &[String], columns: &[Vec<f64>]) -> String {
    let rows = columns.first().map_or(0, Vec::len);
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..rows {
        for (j, c) in columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:e}", c[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a headerless numeric CSV back into a matrix.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err("ragged rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Heatmap with a symmetric diverging scale `[-scale, scale]`: red for
/// positive, blue for negative entries.
pub fn heatmap_svg(m: &DMatrix<f64>, scale: f64, title: &str) -> String {
    let cell = 4usize;
    let (rows, cols) = m.shape();
    let width = cols * cell;
    let height = rows * cell + 20;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" shape-rendering="crispEdges">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="4" y="14" font-family="sans-serif" font-size="12">{title}</text>"#
    )
    .unwrap();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for i in 0..rows {
        for j in 0..cols {
            let t = (m[(i, j)] / scale).clamp(-1.0, 1.0);
            let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
            let (r, g, b) = if t >= 0.0 {
                (255, fade(t), fade(t))
            } else {
                (fade(t), fade(t), 255)
            };
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({r},{g},{b})"/>"#,
                j * cell,
                20 + i * cell
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}
