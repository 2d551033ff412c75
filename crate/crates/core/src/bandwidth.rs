//! Imbens-Kalyanaraman plug-in bandwidth for local-linear RD with a
//! triangular kernel.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cohort::{Period, ScenarioUnit};
use crate::design::OutcomeKind;
use crate::error::{Error, Result};
use crate::linalg::wls;

pub const MIN_SIDE_UNITS: usize = 100;
/// Silverman-style pilot constant.
pub const PILOT_CONSTANT: f64 = 1.84;
/// Pilot constant for the second-derivative bandwidths.
pub const CURVATURE_CONSTANT: f64 = 3.56;
/// Optimal-bandwidth constant of the triangular kernel.
pub const C_K: f64 = 3.4375;
/// Fewest units a one-sided curvature fit may use.
pub const MIN_CURVATURE_UNITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub h_star: f64,
    pub pilot_h: f64,
    pub density_at_cutoff: f64,
    /// Sum of the one-sided conditional variances at the cutoff.
    pub cond_variance: f64,
    pub curvature_above: f64,
    pub curvature_below: f64,
    /// `r+ + r-`.
    pub regularization: f64,
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn polyfit(rows: &[(f64, f64)], degree: usize) -> Result<DVector<f64>> {
    let x = DMatrix::from_fn(rows.len(), degree + 1, |i, j| rows[i].0.powi(j as i32));
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    Ok(wls(&x, &y, &vec![1.0; rows.len()])?.coef)
}

/// Plug-in bandwidth for the pairs `(s, y)` around `threshold`.
pub fn ik_points(points: &[(f64, f64)], threshold: f64) -> Result<BandwidthReport> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let split = pts.partition_point(|p| p.0 < threshold);
    let (below, above) = pts.split_at(split);
    if below.len() < MIN_SIDE_UNITS || above.len() < MIN_SIDE_UNITS {
        return Err(Error::TooFewUnits { below: below.len(), above: above.len(), required: MIN_SIDE_UNITS });
    }
    let n = pts.len() as f64;
    let s: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let sd_s = variance(&s).sqrt();
    let h1 = PILOT_CONSTANT * sd_s * n.powf(-0.2);

    let near_below: Vec<f64> = below.iter().filter(|p| p.0 >= threshold - h1).map(|p| p.1).collect();
    let near_above: Vec<f64> = above.iter().filter(|p| p.0 <= threshold + h1).map(|p| p.1).collect();
    let density = (near_below.len() + near_above.len()) as f64 / (2.0 * n * h1);
    if !(density >= 1e-12) || !h1.is_finite() {
        return Err(Error::DegenerateDensity(density));
    }
    let var_below = variance(&near_below);
    let var_above = variance(&near_above);
    let cond_variance = var_below + var_above;
    if !(cond_variance > 0.0) {
        return Err(Error::DegenerateVariance);
    }

    // Global cubic with an intercept shift at the threshold.
    let x = DMatrix::from_fn(pts.len(), 5, |i, j| {
        let r = pts[i].0 - threshold;
        match j {
            0 => 1.0,
            1 => f64::from(u8::from(r >= 0.0)),
            k => r.powi(k as i32 - 1),
        }
    });
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let cubic = wls(&x, &y, &vec![1.0; pts.len()])?;
    let m3 = 6.0 * cubic.coef[4];

    let side = |rows: &[(f64, f64)], var: f64, reach: f64| -> Result<(f64, f64)> {
        let raw = CURVATURE_CONSTANT * (var / (density * m3 * m3)).powf(1.0 / 7.0) * (rows.len() as f64).powf(-1.0 / 7.0);
        let h2 = if raw.is_finite() { raw.min(reach) } else { reach };
        // Widen until the fit has enough units; rows are sorted by score.
        let k = MIN_CURVATURE_UNITS.min(rows.len());
        let nearest = if rows[0].0 >= threshold { rows[k - 1].0 - threshold } else { threshold - rows[rows.len() - k].0 };
        let h2 = h2.max(nearest);
        let local: Vec<(f64, f64)> = rows
            .iter()
            .filter(|p| (p.0 - threshold).abs() <= h2)
            .map(|p| (p.0 - threshold, p.1))
            .collect();
        let coef = polyfit(&local, 2)?;
        let reg = 720.0 * var / (local.len() as f64 * h2.powi(4));
        Ok((2.0 * coef[2], reg))
    };
    let (curvature_below, r_below) = side(below, var_below, threshold - s[0])?;
    let (curvature_above, r_above) = side(above, var_above, s[s.len() - 1] - threshold)?;
    let regularization = r_below + r_above;
    let gap = (curvature_above - curvature_below).powi(2) + regularization;
    let h_star = C_K * (cond_variance / (density * gap)).powf(0.2) * n.powf(-0.2);
    if !(h_star > 0.0 && h_star.is_finite()) {
        return Err(Error::DegenerateVariance);
    }
    Ok(BandwidthReport {
        h_star,
        pilot_h: h1,
        density_at_cutoff: density,
        cond_variance,
        curvature_above,
        curvature_below,
        regularization,
    })
}

fn pairs(units: &[ScenarioUnit], value: impl Fn(&ScenarioUnit) -> f64) -> Vec<(f64, f64)> {
    units.iter().map(|u| (u.running_s, value(u))).collect()
}

/// Bandwidth for the follow-up outcome of a cohort.
pub fn ik_bandwidth(units: &[ScenarioUnit], threshold: f64, outcome: OutcomeKind) -> Result<BandwidthReport> {
    ik_points(&pairs(units, |u| u.outcome(outcome, Period::FollowUp)), threshold)
}

/// Both constituent bandwidths of a fuzzy cell and the one used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellBandwidth {
    pub h: f64,
    pub outcome: BandwidthReport,
    /// `None` when the treatment has no spread on either side (sharp design).
    pub treatment: Option<BandwidthReport>,
}

pub fn cell_bandwidth(units: &[ScenarioUnit], threshold: f64, outcome: OutcomeKind) -> Result<CellBandwidth> {
    let y = ik_bandwidth(units, threshold, outcome)?;
    let x = match ik_points(&pairs(units, ScenarioUnit::treatment), threshold) {
        Ok(r) => Some(r),
        Err(Error::DegenerateVariance) => None,
        Err(e) => return Err(e),
    };
    let h = x.as_ref().map_or(y.h_star, |x| x.h_star.min(y.h_star));
    Ok(CellBandwidth { h, outcome: y, treatment: x })
}

/// Smaller of the outcome and first-stage bandwidths.
pub fn bandwidth_for_cell(units: &[ScenarioUnit], threshold: f64, outcome: OutcomeKind) -> Result<f64> {
    cell_bandwidth(units, threshold, outcome).map(|c| c.h)
}
