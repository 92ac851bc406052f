//! Synthetic datasets, the NARMA benchmark series and feature scaling.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    pub tags: Vec<String>,
}

/// Labelled points for classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize, meta: DatasetMeta) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dimension { what: "labels", expected: features.len(), got: labels.len() });
        }
        let dims = features.first().map_or(0, Vec::len);
        if let Some(row) = features.iter().find(|r| r.len() != dims) {
            return Err(Error::Dimension { what: "feature row", expected: dims, got: row.len() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {l} >= n_classes {n_classes}")));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset feature".into()));
        }
        Ok(Self { features, labels, n_classes, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_dims(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes `x0,x1,...,label` rows, preceded by `comment` as a `#` line.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.n_dims()).map(|d| format!("x{d}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, label) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`Dataset::write_csv`]. `n_classes` is the
    /// largest label plus one.
    pub fn read_csv<R: Read>(input: R, name: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let (label, xs) = rec
                .iter()
                .collect::<Vec<_>>()
                .split_last()
                .map(|(l, xs)| (l.to_string(), xs.iter().map(|s| s.to_string()).collect::<Vec<_>>()))
                .ok_or_else(|| Error::Parse("empty record".into()))?;
            labels.push(label.trim().parse::<usize>().map_err(|e| Error::Parse(format!("label {label:?}: {e}")))?);
            features.push(
                xs.iter()
                    .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("value {s:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(features, labels, n_classes, DatasetMeta { name: name.into(), ..Default::default() })
    }
}

fn check_even(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("point count {n} must be even and positive")));
    }
    Ok(())
}

fn check_noise(noise_sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, noise_sd).map_err(|_| Error::InvalidArgument(format!("noise sd {noise_sd}")))
}

/// Shuffles rows, then adds isotropic Gaussian noise.
fn finish(
    mut points: Vec<(Vec<f64>, usize)>,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
    n_classes: usize,
    meta: DatasetMeta,
) -> Result<Dataset> {
    let noise = check_noise(noise_sd)?;
    points.shuffle(rng);
    if noise_sd > 0.0 {
        for (x, _) in &mut points {
            for v in x.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
    let (features, labels) = points.into_iter().unzip();
    Dataset::new(features, labels, n_classes, meta)
}

/// Two interleaving half circles: class 0 on the upper unit arc, class 1 on
/// the lower arc centred at `(1, 0.5)`.
pub fn gen_moon(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    check_even(n)?;
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = if half > 1 { PI / (half - 1) as f64 } else { 0.0 };
    let mut points = Vec::with_capacity(n);
    for i in 0..half {
        let t = i as f64 * step;
        points.push((vec![t.cos(), t.sin()], 0));
    }
    for i in 0..half {
        let t = i as f64 * step;
        points.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let meta = DatasetMeta { name: "moon".into(), seed, tags: vec!["shuffle".into(), format!("noise={noise_sd}")] };
    finish(points, noise_sd, &mut rng, 2, meta)
}

/// Adds `k` mislabelled points at the arc midpoints of a moon dataset,
/// alternating between the two arcs.
pub fn add_moon_outliers(ds: &Dataset, k: usize) -> Result<Dataset> {
    let mut features = ds.features.clone();
    let mut labels = ds.labels.clone();
    for i in 0..k {
        if i % 2 == 0 {
            features.push(vec![0.0, 1.0]);
            labels.push(1);
        } else {
            features.push(vec![1.0, -0.5]);
            labels.push(0);
        }
    }
    let mut meta = ds.meta.clone();
    meta.tags.push(format!("outliers={k}"));
    Dataset::new(features, labels, ds.n_classes, meta)
}

/// Two interleaved Archimedean spiral arms. Arm `k` follows
/// `r = t`, `angle = 2 pi turns t + k pi` for `t` in `(0, 1]`.
pub fn gen_spiral(n: usize, turns: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    check_even(n)?;
    if !(turns > 0.0 && turns.is_finite()) {
        return Err(Error::InvalidArgument(format!("turns {turns} must be positive")));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for arm in 0..2 {
        for i in 0..half {
            let t = (i + 1) as f64 / half as f64;
            let angle = 2.0 * PI * turns * t + arm as f64 * PI;
            points.push((vec![t * angle.cos(), t * angle.sin()], arm));
        }
    }
    let meta = DatasetMeta { name: "spiral".into(), seed, tags: vec![format!("turns={turns}"), format!("noise={noise_sd}")] };
    finish(points, noise_sd, &mut rng, 2, meta)
}

/// Concentric circles: class 0 on radius 1, class 1 on radius `factor`.
pub fn gen_circles(n: usize, factor: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    check_even(n)?;
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidArgument(format!("circle factor {factor} outside (0, 1)")));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for (label, r) in [(0, 1.0), (1, factor)] {
        for i in 0..half {
            let t = 2.0 * PI * i as f64 / half as f64;
            points.push((vec![r * t.cos(), r * t.sin()], label));
        }
    }
    let meta = DatasetMeta { name: "circles".into(), seed, tags: vec![format!("noise={noise_sd}")] };
    finish(points, noise_sd, &mut rng, 2, meta)
}

/// Input series `u` and target `y` of a NARMA benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarmaSeries {
    pub order: usize,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub alpha: f64,
    pub seed: u64,
}

/// Noise scale `alpha` used for each NARMA order.
pub fn default_alpha(order: usize) -> f64 {
    if order >= 10 {
        0.2
    } else {
        0.1
    }
}

const NARMA_DIVERGENCE: f64 = 10.0;

/// Runs the NARMA recurrence over a given input series.
///
/// `y(t+1) = 0.3 y(t) + 0.05 y(t) sum_{i<order} y(t-i) + 1.5 u(t-order+1) u(t) + 0.1`
/// with zero history before `t = 0` and `y(0) = 0`.
pub fn narma_from_inputs(order: usize, u: Vec<f64>, seed: u64) -> Result<NarmaSeries> {
    if order != 5 && order != 10 {
        return Err(Error::InvalidArgument(format!("NARMA order must be 5 or 10, got {order}")));
    }
    let len = u.len();
    if len <= order {
        return Err(Error::InvalidArgument(format!("series length {len} must exceed order {order}")));
    }
    let mut y = vec![0.0; len];
    for t in 0..len - 1 {
        let window: f64 = (0..order).filter(|&i| i <= t).map(|i| y[t - i]).sum();
        let lagged = if t + 1 >= order { u[t + 1 - order] } else { 0.0 };
        let next = 0.3 * y[t] + 0.05 * y[t] * window + 1.5 * lagged * u[t] + 0.1;
        if !next.is_finite() || next.abs() > NARMA_DIVERGENCE {
            return Err(Error::Divergence { step: t + 1, value: next.abs(), seed });
        }
        y[t + 1] = next;
    }
    Ok(NarmaSeries { order, u, y, alpha: default_alpha(order), seed })
}

/// NARMA series driven by `u ~ Uniform[0, 0.5]`.
pub fn gen_narma(order: usize, length: usize, seed: u64) -> Result<NarmaSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..length).map(|_| rng.random_range(0.0..=0.5)).collect();
    narma_from_inputs(order, u, seed)
}

impl NarmaSeries {
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "y"])?;
        for (u, y) in self.u.iter().zip(&self.y) {
            w.write_record([format!("{u:?}"), format!("{y:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decaying noise amplitude `alpha * exp(-epoch / 50)`.
pub fn noise_scale(alpha: f64, epoch: usize) -> f64 {
    alpha * (-(epoch as f64) / 50.0).exp()
}

/// A noisy copy of a NARMA target.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyTarget {
    pub values: Vec<f64>,
    pub eta: f64,
    /// Sample standard deviation of the injected noise.
    pub sigma: f64,
}

/// `y(t) + eta * eps(t)` with `eps ~ N(0, 1)` drawn from `seed` and `epoch`.
pub fn noisy_target(series: &NarmaSeries, epoch: usize, seed: u64) -> NoisyTarget {
    let eta = noise_scale(series.alpha, epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let noise: Vec<f64> = series
        .y
        .iter()
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            eta * e
        })
        .collect();
    let n = noise.len() as f64;
    let mean = noise.iter().sum::<f64>() / n;
    let sigma = if noise.len() > 1 {
        (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let values = series.y.iter().zip(&noise).map(|(y, e)| y + e).collect();
    NoisyTarget { values, eta, sigma }
}

/// Min-max maps `x` onto `target`. A constant input maps to the midpoint.
pub fn normalize_features(x: &[f64], target: (f64, f64)) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalize_features input".into()));
    }
    let (lo, hi) = target;
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Ok(vec![(lo + hi) / 2.0; x.len()]);
    }
    let span = max - min;
    Ok(x
        .iter()
        .map(|v| {
            let t = (v - min) / span;
            (lo + t * (hi - lo)).clamp(lo.min(hi), lo.max(hi))
        })
        .collect())
}

/// Rescales every column of a dataset onto `target` with statistics taken
/// over the whole dataset.
pub fn normalize_columns(ds: &Dataset, target: (f64, f64)) -> Result<Dataset> {
    let dims = ds.n_dims();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(ds.len()); dims];
    for row in ds.features() {
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(*v);
        }
    }
    let cols = cols.iter().map(|c| normalize_features(c, target)).collect::<Result<Vec<_>>>()?;
    let features = (0..ds.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Dataset::new(features, ds.labels.clone(), ds.n_classes, ds.meta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moon_geometry_and_balance() {
        let ds = gen_moon(600, 0.0, 3).unwrap();
        assert_eq!((ds.len(), ds.n_dims()), (600, 2));
        assert_eq!(ds.class_counts(), vec![300, 300]);
        for (x, &l) in ds.features().iter().zip(ds.labels()) {
            let (cx, cy) = if l == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            assert!(if l == 0 { x[1] >= -1e-12 } else { x[1] <= 0.5 + 1e-12 });
        }
        assert_eq!(ds, gen_moon(600, 0.0, 3).unwrap());
    }

    #[test]
    fn spiral_radius_grows_along_each_arm() {
        let ds = gen_spiral(600, 1.5, 0.0, 1).unwrap();
        assert_eq!(ds.class_counts(), vec![300, 300]);
        // Undo the shuffle by sorting each arm on radius; radii are distinct.
        for arm in 0..2 {
            let mut r: Vec<f64> = ds
                .features()
                .iter()
                .zip(ds.labels())
                .filter(|(_, &l)| l == arm)
                .map(|(x, _)| x[0].hypot(x[1]))
                .collect();
            r.sort_by(f64::total_cmp);
            assert!(r.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn narma_first_step_with_zero_input() {
        let s = narma_from_inputs(5, vec![0.0; 10], 0).unwrap();
        assert_eq!(s.y[0], 0.0);
        assert!((s.y[1] - 0.1).abs() < 1e-15);
        assert!(narma_from_inputs(10, vec![0.1; 10], 0).is_err());
        assert!(narma_from_inputs(7, vec![0.1; 20], 0).is_err());
        assert_eq!(gen_narma(10, 200, 4).unwrap(), gen_narma(10, 200, 4).unwrap());
    }

    #[test]
    fn narma_divergence_is_reported() {
        let err = narma_from_inputs(5, vec![50.0; 20], 7).unwrap_err();
        assert!(matches!(err, Error::Divergence { seed: 7, .. }));
    }

    #[test]
    fn noise_scale_values() {
        assert_eq!(noise_scale(0.1, 0), 0.1);
        assert!((noise_scale(0.1, 50) - 0.1 / std::f64::consts::E).abs() < 1e-15);
        assert!(noise_scale(0.1, 5000) < 1e-40);
        assert_eq!(default_alpha(5), 0.1);
        assert_eq!(default_alpha(10), 0.2);
    }

    #[test]
    fn normalize_examples() {
        let v = normalize_features(&[0.0, 5.0, 10.0], (0.0, PI)).unwrap();
        assert_eq!(v, vec![0.0, PI / 2.0, PI]);
        assert_eq!(normalize_features(&[3.0; 3], (0.0, 2.0 * PI)).unwrap(), vec![PI; 3]);
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_moon(20, 0.1, 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, Some("moon test")).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), "moon").unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }
}
