//! One-dimensional Gaussian kernel density estimation with Scott's-rule
//! bandwidth, grid evaluation and local-minimum extraction.
//!
//! Both thresholding steps of the pipeline rely on the same primitive: a
//! KDE over a 1-D sample set whose valleys separate two populations
//! (background vs spike power in step one, noise vs device cluster in
//! step two).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which valley to use when a density has several interior minima.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValleyStrategy {
    /// The valley with the smallest density value.
    #[default]
    LowestDensity,
    /// The leftmost valley (smallest abscissa).
    FirstFromLeft,
}

/// A Gaussian KDE evaluated on an even grid padded four bandwidths past
/// the sample range.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    samples: Vec<f64>,
    bandwidth: f64,
    grid: Vec<f64>,
    density: Vec<f64>,
}

impl DensityEstimate {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.grid.len() {
            acc +=
                0.5 * (self.density[i] + self.density[i - 1]) * (self.grid[i] - self.grid[i - 1]);
        }
        acc
    }

    /// Abscissa of the highest density value within `[lo, hi]`; the first
    /// grid point wins ties. `None` when the band contains no grid point.
    pub fn argmax_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (x, d) in self.grid.iter().zip(&self.density) {
            if *x < lo || *x > hi {
                continue;
            }
            match best {
                Some((_, bd)) if *d <= bd => {}
                _ => best = Some((*x, *d)),
            }
        }
        best.map(|(x, _)| x)
    }
}

/// Scott's rule for one dimension: sample standard deviation times
/// `n^(-1/5)`.
pub fn scott_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateSamples(
            "need at least 2 samples for bandwidth selection",
        ));
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        // All-equal samples can leave a tiny nonzero float variance; the
        // range check makes the degenerate case exact.
        return Err(Error::DegenerateSamples("zero variance"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd <= 0.0 || !sd.is_finite() {
        return Err(Error::DegenerateSamples("zero variance"));
    }
    Ok(sd * nf.powf(-0.2))
}

/// Evaluate the Gaussian-kernel density of `samples` on an even grid of
/// `grid_points` spanning `[min - 4h, max + 4h]`.
pub fn evaluate_density(
    samples: &[f64],
    bandwidth: f64,
    grid_points: usize,
) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples for density evaluation"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if grid_points < 64 {
        return Err(Error::InvalidConfig(format!(
            "grid must have at least 64 points, got {grid_points}"
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite sample {bad}")));
    }

    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min - 4.0 * bandwidth;
    let hi = max + 4.0 * bandwidth;
    let span = hi - lo;
    let g = grid_points;

    let grid: Vec<f64> = (0..g)
        .map(|i| lo + span * i as f64 / (g - 1) as f64)
        .collect();
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = grid
        .iter()
        .map(|x| {
            samples
                .iter()
                .map(|s| {
                    let z = (x - s) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();

    Ok(DensityEstimate {
        samples: samples.to_vec(),
        bandwidth,
        grid,
        density,
    })
}

/// Interior local minima of the grid density as `(abscissa, density)`
/// pairs ordered by abscissa. A flat valley collapses to its midpoint.
pub fn local_minima(est: &DensityEstimate) -> Vec<(f64, f64)> {
    let d = est.density();
    let g = est.grid();
    let n = d.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1] == d[i] {
            j += 1;
        }
        // The run i..=j is a plateau (possibly a single point).
        if i > 0 && j + 1 < n && d[i - 1] > d[i] && d[j + 1] > d[i] {
            out.push(((g[i] + g[j]) / 2.0, d[i]));
        }
        i = j + 1;
    }
    out
}

/// Abscissa of the first interior local minimum scanning the grid from
/// the lowest value upward; `None` for a unimodal density.
pub fn first_local_minimum(est: &DensityEstimate) -> Option<f64> {
    local_minima(est).first().map(|(x, _)| *x)
}

/// Abscissa of the interior local minimum with the smallest density
/// value; `None` for a unimodal density.
pub fn lowest_local_minimum(est: &DensityEstimate) -> Option<f64> {
    let minima = local_minima(est);
    let mut best: Option<(f64, f64)> = None;
    for (x, d) in minima {
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((x, d)),
        }
    }
    best.map(|(x, _)| x)
}

/// Valley selection used by the spike-power clustering step.
pub fn cluster_valley(est: &DensityEstimate, strategy: ValleyStrategy) -> Option<f64> {
    match strategy {
        ValleyStrategy::LowestDensity => lowest_local_minimum(est),
        ValleyStrategy::FirstFromLeft => first_local_minimum(est),
    }
}
