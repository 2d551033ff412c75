//! Robustness checks: density test, placebo estimates, bandwidth sweeps and
//! binned means for plotting.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{Period, ScenarioUnit};
use crate::design::OutcomeKind;
use crate::error::{Error, Result};
use crate::estimate::{EstimateResult, KernelSpec, Observation, estimate_observations, observations, triangular_weight};
use crate::linalg::wls;

pub const MIN_SCORES: usize = 500;
pub const SMOOTHING_CONSTANT: f64 = 3.348;
pub const DEFAULT_SWEEP: [f64; 7] = [0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5];

/// Two-sided normal p-value of `z`.
pub fn two_sided_p(z: f64) -> f64 {
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCraryResult {
    pub theta: f64,
    pub se: f64,
    pub p_value: f64,
    pub bin_size: f64,
    pub smoothing_bandwidth: f64,
    pub density_above: f64,
    pub density_below: f64,
}

/// Log-density discontinuity at `threshold`.
pub fn mccrary_test(scores: &[f64], threshold: f64) -> Result<McCraryResult> {
    let n = scores.len();
    if n < MIN_SCORES {
        return Err(Error::TooFewScores { found: n, required: MIN_SCORES });
    }
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    if lo >= threshold {
        return Err(Error::EmptySide("below"));
    }
    if hi < threshold {
        return Err(Error::EmptySide("above"));
    }
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let b = 2.0 * sd / nf.sqrt();
    let kappa = SMOOTHING_CONSTANT * sd * nf.powf(-0.2);

    // Bin j covers [t + j b, t + (j + 1) b).
    let first = ((lo - threshold) / b).floor() as i64;
    let last = ((hi - threshold) / b).floor() as i64;
    let mut counts = vec![0u64; (last - first + 1) as usize];
    for &s in scores {
        let j = ((s - threshold) / b).floor() as i64;
        counts[(j - first) as usize] += 1;
    }

    let side = |above: bool| -> Result<f64> {
        let mut rows = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            let j = first + k as i64;
            if (j >= 0) != above {
                continue;
            }
            let r = (j as f64 + 0.5) * b;
            let w = 1.0 - r.abs() / kappa;
            if w > 0.0 {
                rows.push((r, c as f64 / (nf * b), w));
            }
        }
        let label = if above { "above" } else { "below" };
        if rows.len() < 2 {
            return Err(Error::EmptySide(label));
        }
        let x = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { rows[i].0 });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let w: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let f = wls(&x, &y, &w)?.coef[0];
        if !(f > 0.0) {
            return Err(Error::DegenerateDensity(f));
        }
        Ok(f)
    };
    let density_below = side(false)?;
    let density_above = side(true)?;
    let theta = density_above.ln() - density_below.ln();
    let se = (24.0 / 5.0 / (nf * kappa) * (1.0 / density_above + 1.0 / density_below)).sqrt();
    Ok(McCraryResult {
        theta,
        se,
        p_value: two_sided_p(theta / se),
        bin_size: b,
        smoothing_bandwidth: kappa,
        density_above,
        density_below,
    })
}

/// The main estimator applied to pre-assignment outcomes.
pub fn placebo_frd(units: &[ScenarioUnit], kernel: &KernelSpec, outcome: OutcomeKind) -> Result<EstimateResult> {
    estimate_observations(&observations(units, outcome, Period::Pre), kernel)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub multiplier: f64,
    pub bandwidth_h: f64,
    /// Error kind and message when this point could not be estimated.
    pub estimate: std::result::Result<EstimateResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub reference_h: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn multipliers(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.multiplier).collect()
    }
}

pub fn validate_multipliers(multipliers: &[f64]) -> Result<()> {
    if multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidConfig("sweep multipliers must be positive and finite".into()));
    }
    if multipliers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("sweep multipliers must be strictly ascending".into()));
    }
    Ok(())
}

/// Re-estimates at `m * kernel.bandwidth_h` for each multiplier.
pub fn bandwidth_sweep(
    units: &[ScenarioUnit],
    kernel: &KernelSpec,
    outcome: OutcomeKind,
    multipliers: &[f64],
) -> Result<SweepResult> {
    sweep_observations(&observations(units, outcome, Period::FollowUp), kernel, multipliers)
}

pub fn sweep_observations(obs: &[Observation], kernel: &KernelSpec, multipliers: &[f64]) -> Result<SweepResult> {
    validate_multipliers(multipliers)?;
    let points = multipliers
        .iter()
        .map(|&m| {
            let h = m * kernel.bandwidth_h;
            let estimate = kernel
                .with_bandwidth(h)
                .and_then(|k| estimate_observations(obs, &k))
                .map_err(|e| format!("{}: {e}", e.kind()));
            SweepPoint { multiplier: m, bandwidth_h: h, estimate }
        })
        .collect();
    Ok(SweepResult { reference_h: kernel.bandwidth_h, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BinVariable {
    Treatment,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub midpoint: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean: Option<f64>,
    /// `None` when fewer than two units fall in the bin.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitPoint {
    pub s: f64,
    pub above: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedTable {
    pub bins: Vec<Bin>,
    pub fit: Vec<FitPoint>,
}

/// Points per side on which the fitted lines are evaluated.
pub const FIT_GRID: usize = 21;

/// Bin index of `s` among `n_bins` equal bins spanning `[t - h, t + h)`,
/// with `t` on the edge between bins `n_bins/2 - 1` and `n_bins/2`.
fn bin_index(s: f64, t: f64, width: f64, n_bins: usize) -> Option<usize> {
    let half = (n_bins / 2) as i64;
    let j = if s >= t {
        half + ((s - t) / width).floor() as i64
    } else {
        half - ((t - s) / width).ceil() as i64
    };
    (0..n_bins as i64).contains(&j).then_some(j as usize)
}

/// Per-bin means of treatment or outcome within one bandwidth of the
/// threshold, plus the local-linear fit on each side.
pub fn binned_means(obs: &[Observation], kernel: &KernelSpec, n_bins: usize, variable: BinVariable) -> Result<BinnedTable> {
    if n_bins < 4 || !n_bins.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("n_bins must be even and at least 4, got {n_bins}")));
    }
    let t = kernel.threshold_t;
    let h = kernel.bandwidth_h;
    let width = 2.0 * h / n_bins as f64;
    let value = |o: &Observation| match variable {
        BinVariable::Treatment => o.x,
        BinVariable::Outcome => o.y,
    };
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for o in obs {
        if (o.s - t).abs() < h {
            if let Some(j) = bin_index(o.s, t, width, n_bins) {
                groups[j].push(value(o));
            }
        }
    }
    let half = n_bins / 2;
    let bins = groups
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let lo = if j < half { t - (half - j) as f64 * width } else { t + (j - half) as f64 * width };
            let hi = lo + width;
            let count = g.len();
            let mean = (count > 0).then(|| g.iter().sum::<f64>() / count as f64);
            let se = mean.filter(|_| count > 1).map(|m| {
                let var = g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            });
            Bin { lo, hi, midpoint: 0.5 * (lo + hi), count, mean, se }
        })
        .collect();

    let mut fit = Vec::new();
    for above in [false, true] {
        let rows: Vec<(f64, f64, f64)> = obs
            .iter()
            .filter(|o| (o.s >= t) == above)
            .map(|o| (o.s - t, value(o), triangular_weight(o.s, kernel)))
            .filter(|r| r.2 > 0.0)
            .collect();
        if rows.len() < 2 {
            continue;
        }
        let x = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { rows[i].0 });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let w: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let Ok(line) = wls(&x, &y, &w) else { continue };
        for g in 0..FIT_GRID {
            let frac = g as f64 / (FIT_GRID - 1) as f64;
            let r = if above { frac * h } else { -h + frac * h };
            fit.push(FitPoint { s: t + r, above, value: line.coef[0] + line.coef[1] * r });
        }
    }
    Ok(BinnedTable { bins, fit })
}
