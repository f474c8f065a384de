//! Named presets, tabular outputs, and the figure dataset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::{convergence_from, fmt, relative_secular};
use crate::charpoly::{scaled_residual, ModeIndex};
use crate::error::{Error, Result};
use crate::model::PronyModel;
use crate::rootfinder::{clusters, limit_roots, ExtraPair, LimitSpectrum, SpectralCluster};

/// Largest scaled residual `|P(l)| / scale(l)` accepted in any output.
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const DEFAULT_K_MAX: u32 = 100;

pub const PRESET_N: [usize; 4] = [1, 2, 5, 9];
pub const PRESET_D: [f64; 3] = [0.5, 1.0, 5.0];
pub const FIGURE_N: [usize; 2] = [5, 9];
pub const CONVERGENCE_N: usize = 5;

/// `h = 1`, `r_i = 5 i`, equal contributions `b_i = 5 i / N`.
pub fn ladder_model(n: usize, d: f64) -> Result<PronyModel> {
    let rates = (1..=n).map(|i| 5.0 * i as f64).collect();
    PronyModel::equal_contribution(rates, 1.0, d)
}

pub fn preset_name(n: usize, d: f64) -> String {
    format!("n{n}-d{d}")
}

/// Every preset name: the ladder grid plus `toy` (`N=1, D=2, r=1, b=1`).
pub fn preset_names() -> Vec<String> {
    let mut names: Vec<String> = PRESET_N
        .iter()
        .flat_map(|&n| PRESET_D.iter().map(move |&d| preset_name(n, d)))
        .collect();
    names.push("toy".into());
    names
}

pub fn preset(name: &str) -> Result<PronyModel> {
    if name == "toy" {
        return PronyModel::new(vec![1.0], vec![1.0], 2.0);
    }
    for &n in &PRESET_N {
        for &d in &PRESET_D {
            if preset_name(n, d) == name {
                return ladder_model(n, d);
            }
        }
    }
    Err(Error::Config(format!(
        "unknown preset {name:?}; expected one of {}",
        preset_names().join(", ")
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RootKind {
    Real,
    Complex,
}

impl RootKind {
    fn as_str(self) -> &'static str {
        match self {
            RootKind::Real => "real",
            RootKind::Complex => "complex",
        }
    }
}

/// One root of one cluster. A complex pair is one row with `im = q > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub k: ModeIndex,
    pub kind: RootKind,
    /// `1..=N` for the interlaced roots, `N+1` (and `N+2`) for the extra pair.
    pub index: usize,
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

pub fn spectrum_rows(model: &PronyModel, clusters: &[SpectralCluster]) -> Vec<SpectrumRow> {
    let n = model.n();
    let mut rows = Vec::with_capacity(clusters.len() * (n + 2));
    for c in clusters {
        let res = |re: f64, im: f64| scaled_residual(model, Some(c.k), num_complex::Complex64::new(re, im));
        for (j, &a) in c.real_roots.iter().enumerate() {
            rows.push(SpectrumRow {
                k: c.k,
                kind: RootKind::Real,
                index: j + 1,
                re: a,
                im: 0.0,
                residual: res(a, 0.0),
            });
        }
        match c.extra {
            ExtraPair::Complex { p, q, .. } => rows.push(SpectrumRow {
                k: c.k,
                kind: RootKind::Complex,
                index: n + 1,
                re: p,
                im: q,
                residual: res(p, q),
            }),
            ExtraPair::Real { upper, lower } => {
                for (offset, x) in [upper, lower].into_iter().enumerate() {
                    rows.push(SpectrumRow {
                        k: c.k,
                        kind: RootKind::Real,
                        index: n + 1 + offset,
                        re: x,
                        im: 0.0,
                        residual: res(x, 0.0),
                    });
                }
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub index: usize,
    pub value: f64,
    /// `|f_P(a_j)|` relative to the magnitude of its terms.
    pub secular_residual: f64,
    /// `|P_N(a_j)| / scale(a_j)`.
    pub residual: f64,
}

pub fn limit_rows(model: &PronyModel, limit: &LimitSpectrum) -> Result<Vec<LimitRow>> {
    limit
        .roots
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            Ok(LimitRow {
                index: j + 1,
                value: a,
                secular_residual: relative_secular(model, a, None)?,
                residual: scaled_residual(model, None, num_complex::Complex64::new(a, 0.0)),
            })
        })
        .collect()
}

/// Fails with the worst residual when it exceeds `tol`.
pub fn check_residuals(what: &str, residuals: impl IntoIterator<Item = f64>, tol: f64) -> Result<()> {
    let worst = residuals.into_iter().fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    if worst <= tol {
        Ok(())
    } else {
        Err(Error::Tolerance {
            what: what.into(),
            residual: worst,
            tolerance: tol,
        })
    }
}

pub fn write_spectrum_csv<W: Write>(rows: &[SpectrumRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "kind", "index", "re", "im", "residual"])?;
    for r in rows {
        w.write_record([
            r.k.get().to_string(),
            r.kind.as_str().to_string(),
            r.index.to_string(),
            fmt(r.re),
            fmt(r.im),
            fmt(r.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_limit_csv<W: Write>(rows: &[LimitRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "value", "secular_residual", "residual"])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            fmt(r.value),
            fmt(r.secular_residual),
            fmt(r.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Spectrum,
    Limit,
    Convergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: DatasetKind,
    pub preset: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub k_min: u32,
    pub k_max: u32,
    pub files: Vec<ManifestEntry>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the spectrum, limit, and convergence datasets for the figure
/// presets into `dir`, plus `manifest.json`.
pub fn reproduce_figures(dir: &Path, k_max: u32) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let ks = ModeIndex::range(1, k_max)?;
    if ks.is_empty() {
        return Err(Error::InvalidModeIndex);
    }
    let mut files = Vec::new();
    for &n in &FIGURE_N {
        for &d in &PRESET_D {
            let model = ladder_model(n, d)?;
            let preset = preset_name(n, d);
            let limit = limit_roots(&model)?;
            let cl = clusters(&model, &ks)?;
            let entry = |file: String, kind, rows| ManifestEntry {
                file,
                kind,
                preset: preset.clone(),
                n,
                d,
                rows,
            };

            let rows = spectrum_rows(&model, &cl);
            check_residuals(&preset, rows.iter().map(|r| r.residual), RESIDUAL_TOL)?;
            let file = format!("spectrum_N{n}_D{d}.csv");
            write_spectrum_csv(&rows, create(dir, &file)?)?;
            files.push(entry(file, DatasetKind::Spectrum, rows.len()));

            let rows = limit_rows(&model, &limit)?;
            check_residuals(&preset, rows.iter().map(|r| r.residual), RESIDUAL_TOL)?;
            let file = format!("limit_N{n}_D{d}.csv");
            write_limit_csv(&rows, create(dir, &file)?)?;
            files.push(entry(file, DatasetKind::Limit, rows.len()));

            if n == CONVERGENCE_N {
                let report = convergence_from(&model, &limit, &cl);
                let file = format!("convergence_N{n}_D{d}.csv");
                report.write_csv(create(dir, &file)?)?;
                let rows = report.real.len()
                    + report.pair.len()
                    + report.pair.iter().filter(|p| p.q.is_some()).count();
                files.push(entry(file, DatasetKind::Convergence, rows));
            }
        }
    }
    let manifest = Manifest {
        k_min: 1,
        k_max,
        files,
    };
    write_json(&manifest, create(dir, "manifest.json")?)?;
    Ok(manifest)
}
