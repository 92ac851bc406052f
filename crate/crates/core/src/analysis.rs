//! Empirical Fisher information and its eigenvalue spectrum.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::Backend;
use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, Target};

/// Default number of density bins.
pub const DEFAULT_BINS: usize = 50;

/// Eigenvalues in `[-PSD_TOL, 0)` are reported as zero; anything lower
/// fails the PSD check.
pub const PSD_TOL: f64 = 1e-9;

/// Histogram of positive eigenvalues over `bins` equal-width bins spanning
/// `(0, max]`. Bin `k` covers `(k w, (k + 1) w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub width: f64,
    pub weights: Vec<f64>,
}

impl Density {
    /// Upper edge of each bin.
    pub fn upper_edges(&self) -> Vec<f64> {
        (1..=self.weights.len()).map(|k| k as f64 * self.width).collect()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimSpectrum {
    pub n_params: usize,
    /// Row-major `n_params x n_params`.
    pub matrix: Vec<f64>,
    /// Ascending, after clipping tiny negatives to zero.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue before clipping.
    pub raw_min_eigenvalue: f64,
    /// `None` when no eigenvalue is positive.
    pub density: Option<Density>,
}

fn positive_threshold(max: f64) -> f64 {
    1e-12f64.max(1e-10 * max)
}

/// Fraction of positive eigenvalues in each bin. Values at or below the
/// positivity threshold are ignored.
pub fn eigen_density(eigenvalues: &[f64], bins: usize) -> Option<Density> {
    let max = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if bins == 0 || !(max > 0.0) {
        return None;
    }
    let cut = positive_threshold(max);
    let positive: Vec<f64> = eigenvalues.iter().cloned().filter(|&l| l > cut).collect();
    if positive.is_empty() {
        return None;
    }
    let width = max / bins as f64;
    let mut counts = vec![0usize; bins];
    for l in &positive {
        let k = ((l / width).ceil() as usize).clamp(1, bins) - 1;
        counts[k] += 1;
    }
    let total = positive.len() as f64;
    Some(Density { width, weights: counts.into_iter().map(|c| c as f64 / total).collect() })
}

/// Spectrum of a symmetric PSD matrix given row-major.
pub fn spectrum_of(n: usize, matrix: Vec<f64>, bins: usize) -> Result<FimSpectrum> {
    if matrix.len() != n * n {
        return Err(Error::Dimension { what: "FIM entries", expected: n * n, got: matrix.len() });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("FIM entry".into()));
    }
    if n == 0 {
        return Ok(FimSpectrum { n_params: 0, matrix, eigenvalues: vec![], raw_min_eigenvalue: 0.0, density: None });
    }
    let m = DMatrix::from_row_slice(n, n, &matrix);
    let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let raw_min = eig[0];
    if raw_min < -PSD_TOL {
        return Err(Error::InvalidArgument(format!("FIM is not PSD: eigenvalue {raw_min:e}")));
    }
    for l in &mut eig {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let density = eigen_density(&eig, bins);
    Ok(FimSpectrum { n_params: n, matrix, eigenvalues: eig, raw_min_eigenvalue: raw_min, density })
}

/// `F = (1/N) sum g g^T` over the given score vectors.
pub fn fim_from_scores(scores: &[Vec<f64>], bins: usize) -> Result<FimSpectrum> {
    let n = scores.first().map_or(0, Vec::len);
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no score vectors".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != n) {
        return Err(Error::Dimension { what: "score vector", expected: n, got: s.len() });
    }
    let mut f = vec![0.0; n * n];
    for g in scores {
        for i in 0..n {
            let gi = g[i];
            for j in i..n {
                f[i * n + j] += gi * g[j];
            }
        }
    }
    let inv = 1.0 / scores.len() as f64;
    for i in 0..n {
        for j in i..n {
            let v = f[i * n + j] * inv;
            f[i * n + j] = v;
            f[j * n + i] = v;
        }
    }
    spectrum_of(n, f, bins)
}

/// Per-sample score vectors `grad ln p(label | x)`, truncated to the first
/// `max_params` flat parameters when given.
pub fn score_vectors(
    model: &HybridModel,
    ds: &Dataset,
    backend: &Backend,
    max_params: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let keep = max_params.unwrap_or(usize::MAX).min(model.n_params());
    ds.features()
        .par_iter()
        .zip(ds.labels())
        .map(|(x, &label)| {
            let (_, g) = model.sample_gradient(x, Target::Class(label), backend)?;
            Ok(g[..keep].iter().map(|v| -v).collect())
        })
        .collect()
}

/// Empirical Fisher information of `model` on `ds`.
pub fn empirical_fim(
    model: &HybridModel,
    ds: &Dataset,
    backend: &Backend,
    max_params: Option<usize>,
    bins: usize,
) -> Result<FimSpectrum> {
    fim_from_scores(&score_vectors(model, ds, backend, max_params)?, bins)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub label: String,
    pub n_params: usize,
    pub max_eigenvalue: f64,
    pub positive_count: usize,
    pub density: Option<Density>,
}

impl SpectrumSummary {
    pub fn of(label: &str, s: &FimSpectrum) -> Self {
        let max = s.eigenvalues.last().copied().unwrap_or(0.0);
        let cut = positive_threshold(max);
        Self {
            label: label.into(),
            n_params: s.n_params,
            max_eigenvalue: max,
            positive_count: s.eigenvalues.iter().filter(|&&l| l > cut).count(),
            density: s.density.clone(),
        }
    }
}

/// Side-by-side summary of two spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub classical: SpectrumSummary,
    pub hybrid: SpectrumSummary,
}

pub fn spectrum_compare(classical: &FimSpectrum, hybrid: &FimSpectrum) -> SpectrumReport {
    SpectrumReport {
        classical: SpectrumSummary::of("classical", classical),
        hybrid: SpectrumSummary::of("hybrid", hybrid),
    }
}

impl SpectrumReport {
    /// Two-row table: model, parameters, max eigenvalue, positive count,
    /// and whether a density was available.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "n_params", "max_eigenvalue", "positive_count", "density"])?;
        for s in [&self.classical, &self.hybrid] {
            w.write_record([
                s.label.clone(),
                s.n_params.to_string(),
                format!("{:?}", s.max_eigenvalue),
                s.positive_count.to_string(),
                if s.density.is_some() { "yes".into() } else { "omitted".into() },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes the matrix as `n` comma-separated rows.
pub fn write_heatmap<W: Write>(s: &FimSpectrum, out: W, comment: Option<&str>) -> Result<()> {
    let mut out = out;
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in s.matrix.chunks(s.n_params.max(1)) {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a heatmap written by [`write_heatmap`] back into row-major form.
pub fn read_heatmap<R: Read>(input: R) -> Result<(usize, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_reader(input);
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        rows += 1;
        for field in rec.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{field:?}: {e}")))?);
        }
    }
    if values.len() != rows * rows {
        return Err(Error::Parse(format!("heatmap with {rows} rows has {} entries", values.len())));
    }
    Ok((rows, values))
}

/// Two-column `(lambda, density)` table at each bin's upper edge.
pub fn write_spectrum<W: Write>(s: &FimSpectrum, out: W, comment: Option<&str>) -> Result<()> {
    let mut out = out;
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "density"])?;
    if let Some(d) = &s.density {
        for (edge, weight) in d.upper_edges().iter().zip(&d.weights) {
            w.write_record([format!("{edge:?}"), format!("{weight:?}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
