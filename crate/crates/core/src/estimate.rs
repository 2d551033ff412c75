//! Local-linear fuzzy RD estimation by kernel-weighted two-stage least squares.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cohort::{Period, ScenarioUnit};
use crate::design::OutcomeKind;
use crate::error::{Error, Result};
use crate::linalg::{hc1, wls};

/// Positive-weight units required on each side of the threshold.
pub const MIN_SIDE_UNITS: usize = 50;
/// Smallest first-stage jump accepted.
pub const MIN_ITT_D: f64 = 0.01;
/// Normal quantile for 95% intervals.
pub const Z95: f64 = 1.96;

/// Triangular kernel centred on the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub bandwidth_h: f64,
    pub threshold_t: f64,
}

impl KernelSpec {
    pub fn new(threshold_t: f64, bandwidth_h: f64) -> Result<Self> {
        if !(bandwidth_h > 0.0 && bandwidth_h.is_finite()) {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth_h}")));
        }
        Ok(KernelSpec { bandwidth_h, threshold_t })
    }

    pub fn with_bandwidth(self, bandwidth_h: f64) -> Result<Self> {
        KernelSpec::new(self.threshold_t, bandwidth_h)
    }
}

pub fn triangular_weight(s: f64, kernel: &KernelSpec) -> f64 {
    let d = (s - kernel.threshold_t).abs();
    if d < kernel.bandwidth_h { 1.0 - d / kernel.bandwidth_h } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub latec: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub standardized: f64,
    pub standardized_ci95: (f64, f64),
    pub itt: f64,
    pub itt_d: f64,
    pub n_effective: usize,
    pub bandwidth_h: f64,
    pub first_stage_f: f64,
    /// Weighted standard deviation of the outcome over the effective sample.
    pub outcome_sd: f64,
    /// Zero standard error or zero outcome spread; intervals collapse.
    pub degenerate: bool,
}

/// One unit as seen by the estimator: score, treatment, outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub s: f64,
    pub x: f64,
    pub y: f64,
}

pub fn observations(units: &[ScenarioUnit], outcome: OutcomeKind, period: Period) -> Vec<Observation> {
    units
        .iter()
        .map(|u| Observation { s: u.running_s, x: u.treatment(), y: u.outcome(outcome, period) })
        .collect()
}

struct Weighted {
    obs: Vec<Observation>,
    w: Vec<f64>,
    below: usize,
    above: usize,
}

fn effective(obs: &[Observation], kernel: &KernelSpec) -> Weighted {
    let mut kept = Vec::new();
    let mut w = Vec::new();
    let (mut below, mut above) = (0, 0);
    for o in obs {
        let wi = triangular_weight(o.s, kernel);
        if wi > 0.0 {
            if o.s >= kernel.threshold_t { above += 1 } else { below += 1 }
            kept.push(*o);
            w.push(wi);
        }
    }
    Weighted { obs: kept, w, below, above }
}

fn instruments(obs: &[Observation], t: f64) -> DMatrix<f64> {
    DMatrix::from_fn(obs.len(), 4, |i, j| {
        let r = obs[i].s - t;
        let d = if obs[i].s >= t { 1.0 } else { 0.0 };
        match j {
            0 => 1.0,
            1 => d,
            2 => r,
            _ => d * r,
        }
    })
}

/// Fuzzy RD point estimate for follow-up outcomes of a cohort.
pub fn estimate_latec(units: &[ScenarioUnit], kernel: &KernelSpec, outcome: OutcomeKind) -> Result<EstimateResult> {
    estimate_observations(&observations(units, outcome, Period::FollowUp), kernel)
}

pub fn estimate_observations(obs: &[Observation], kernel: &KernelSpec) -> Result<EstimateResult> {
    let t = kernel.threshold_t;
    let eff = effective(obs, kernel);
    if eff.below < MIN_SIDE_UNITS || eff.above < MIN_SIDE_UNITS {
        return Err(Error::TooFewUnits { below: eff.below, above: eff.above, required: MIN_SIDE_UNITS });
    }
    let n = eff.obs.len();
    let w = &eff.w;
    let z = instruments(&eff.obs, t);
    let x = DVector::from_iterator(n, eff.obs.iter().map(|o| o.x));
    let y = DVector::from_iterator(n, eff.obs.iter().map(|o| o.y));

    let first = wls(&z, &x, w)?;
    let itt_d = first.coef[1];
    if !(itt_d.abs() >= MIN_ITT_D) {
        return Err(Error::WeakInstrument { itt_d });
    }
    let first_resid = &x - &z * &first.coef;
    let first_var = hc1(&z, w, &first_resid, &first.bread);
    let first_stage_f = if first_var[(1, 1)] > 0.0 {
        itt_d * itt_d / first_var[(1, 1)]
    } else {
        f64::INFINITY
    };
    let reduced = wls(&z, &y, w)?;
    let itt = reduced.coef[1];

    let x_hat = &z * &first.coef;
    let mut second_design = z.clone();
    second_design.set_column(1, &x_hat);
    let second = wls(&second_design, &y, w)?;
    let latec = second.coef[1];
    let mut structural = z;
    structural.set_column(1, &x);
    let resid = &y - &structural * &second.coef;
    let var = hc1(&second_design, w, &resid, &second.bread);
    let se = var[(1, 1)].max(0.0).sqrt();

    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(y.iter()).map(|(wi, yi)| wi * yi).sum::<f64>() / sw;
    let sd = (w.iter().zip(y.iter()).map(|(wi, yi)| wi * (yi - mean).powi(2)).sum::<f64>() / sw).sqrt();
    let ci95 = (latec - Z95 * se, latec + Z95 * se);
    let degenerate = se == 0.0 || sd == 0.0;
    let (standardized, standardized_ci95) = if sd > 0.0 {
        (latec / sd, (ci95.0 / sd, ci95.1 / sd))
    } else {
        (0.0, (0.0, 0.0))
    };
    Ok(EstimateResult {
        latec,
        se,
        ci95,
        standardized,
        standardized_ci95,
        itt,
        itt_d,
        n_effective: n,
        bandwidth_h: kernel.bandwidth_h,
        first_stage_f,
        outcome_sd: sd,
        degenerate,
    })
}

/// Ratio of kernel-weighted side-mean differences of outcome and treatment.
pub fn wald_ratio(units: &[ScenarioUnit], kernel: &KernelSpec, outcome: OutcomeKind) -> Result<f64> {
    wald_ratio_observations(&observations(units, outcome, Period::FollowUp), kernel)
}

pub fn wald_ratio_observations(obs: &[Observation], kernel: &KernelSpec) -> Result<f64> {
    let mut acc = [[0.0f64; 3]; 2];
    for o in obs {
        let w = triangular_weight(o.s, kernel);
        if w > 0.0 {
            let side = &mut acc[usize::from(o.s >= kernel.threshold_t)];
            side[0] += w;
            side[1] += w * o.x;
            side[2] += w * o.y;
        }
    }
    let [below, above] = acc;
    if below[0] == 0.0 {
        return Err(Error::EmptySide("below"));
    }
    if above[0] == 0.0 {
        return Err(Error::EmptySide("above"));
    }
    let dx = above[1] / above[0] - below[1] / below[0];
    let dy = above[2] / above[0] - below[2] / below[0];
    if dx.abs() < 1e-12 {
        return Err(Error::DegenerateDenominator(dx));
    }
    Ok(dy / dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn kernel() -> KernelSpec {
        KernelSpec::new(0.5, 0.3).unwrap()
    }

    #[test]
    fn kernel_shape() {
        let k = KernelSpec::new(0.5, 0.25).unwrap();
        assert_eq!(triangular_weight(0.5, &k), 1.0);
        assert_eq!(triangular_weight(0.75, &k), 0.0);
        assert_eq!(triangular_weight(0.25, &k), 0.0);
        assert_eq!(triangular_weight(0.375, &k), 0.5);
        assert_eq!(triangular_weight(0.625, &k), 0.5);
        assert!(KernelSpec::new(0.5, 0.0).is_err());
    }

    /// Fuzzy data: treatment probability jumps by `jump`, outcome slope `slope` in S.
    fn fuzzy(seed: u64, n: usize, jump: f64, effect: f64, slope: f64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                let p = if s >= 0.5 { 0.2 + jump } else { 0.2 };
                let x = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                let y = 1.0 + effect * x + slope * (s - 0.5) + noise.sample(&mut rng);
                Observation { s, x, y }
            })
            .collect()
    }

    #[test]
    fn sharp_effect_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let obs: Vec<_> = (0..4000)
            .map(|_| {
                let s: f64 = rng.random();
                let x = if s >= 0.5 { 1.0 } else { 0.0 };
                Observation { s, x, y: 3.0 - 2.0 * x + noise.sample(&mut rng) }
            })
            .collect();
        let r = estimate_observations(&obs, &kernel()).unwrap();
        assert!((r.latec + 2.0).abs() < 3.0 * r.se, "{r:?}");
        assert!((r.itt_d - 1.0).abs() < 1e-12);
        assert!((r.latec - r.itt).abs() < 1e-9);
        assert_eq!(r.ci95, (r.latec - 1.96 * r.se, r.latec + 1.96 * r.se));
    }

    #[test]
    fn null_effect_is_exactly_zero() {
        let obs: Vec<_> = (0..400)
            .map(|i| {
                let s = i as f64 / 400.0;
                Observation { s, x: if s >= 0.5 { 1.0 } else { 0.0 }, y: 4.0 }
            })
            .collect();
        let r = estimate_observations(&obs, &kernel()).unwrap();
        assert!(r.latec.abs() < 1e-9);
        assert!(r.degenerate);
        assert_eq!(r.standardized, 0.0);
    }

    #[test]
    fn wald_arithmetic() {
        let mut obs = Vec::new();
        for i in 0..10 {
            let off = 0.01 * f64::from(i);
            obs.push(Observation { s: 0.5 + off, x: 1.0, y: 4.0 });
            obs.push(Observation { s: 0.49 - off, x: 0.0, y: 6.0 });
        }
        assert!((wald_ratio_observations(&obs, &kernel()).unwrap() + 2.0).abs() < 1e-12);
        let same: Vec<_> = obs.iter().map(|o| Observation { y: 1.0, ..*o }).collect();
        assert_eq!(wald_ratio_observations(&same, &kernel()).unwrap(), 0.0);
        let flat: Vec<_> = obs.iter().map(|o| Observation { x: 1.0, ..*o }).collect();
        assert!(matches!(wald_ratio_observations(&flat, &kernel()), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn zero_slope_design_matches_wald_ratio() {
        // Identical (x, y) multisets at every score on a side give zero slopes.
        let base = fuzzy(9, 60, 0.5, -1.5, 0.0);
        let mut obs = Vec::new();
        for g in 0..12 {
            let off = 0.02 * f64::from(g) + 0.005;
            for (i, o) in base.iter().enumerate() {
                let s = if i % 2 == 0 { 0.5 + off } else { 0.5 - off };
                obs.push(Observation { s, ..*o });
            }
        }
        let shifted: Vec<_> = obs
            .iter()
            .map(|o| {
                let above = o.s >= 0.5;
                let x = if above { o.x } else { (o.x - 0.4).abs() };
                Observation { x, ..*o }
            })
            .collect();
        for data in [&obs, &shifted] {
            let r = estimate_observations(data, &kernel()).unwrap();
            let wald = wald_ratio_observations(data, &kernel()).unwrap();
            assert!((r.latec - wald).abs() < 1e-8, "{} vs {wald}", r.latec);
        }
    }

    #[test]
    fn errors_for_sparse_or_weak_designs() {
        let obs = fuzzy(1, 120, 0.5, 1.0, 0.0);
        assert!(matches!(estimate_observations(&obs, &kernel()), Err(Error::TooFewUnits { .. })));
        let weak = fuzzy(2, 3000, 0.0, 1.0, 0.0);
        let none: Vec<_> = weak.iter().map(|o| Observation { x: 0.0, ..*o }).collect();
        assert!(matches!(estimate_observations(&none, &kernel()), Err(Error::WeakInstrument { .. })));
        let atom: Vec<_> = weak
            .iter()
            .map(|o| Observation { s: if o.s >= 0.5 { 0.6 } else { 0.4 }, ..*o })
            .collect();
        assert!(matches!(estimate_observations(&atom, &kernel()), Err(Error::SingularDesign { .. })));
    }

    fn strategy() -> impl Strategy<Value = (u64, f64, f64)> {
        (any::<u64>(), -3.0..3.0f64, -5.0..5.0f64)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reduced_form_identity((seed, effect, slope) in strategy()) {
            let obs = fuzzy(seed, 1500, 0.6, effect, slope);
            let r = estimate_observations(&obs, &kernel()).unwrap();
            prop_assert!((r.latec * r.itt_d - r.itt).abs() <= 1e-9);
            prop_assert!(r.se >= 0.0 && r.first_stage_f >= 0.0);
        }

        #[test]
        fn scale_equivariance((seed, effect, slope) in strategy(), c in 0.1..20.0f64) {
            let obs = fuzzy(seed, 1500, 0.6, effect, slope);
            let scaled: Vec<_> = obs.iter().map(|o| Observation { y: o.y * c, ..*o }).collect();
            let a = estimate_observations(&obs, &kernel()).unwrap();
            let b = estimate_observations(&scaled, &kernel()).unwrap();
            let tol = 1e-9 * (1.0 + a.latec.abs() * c);
            prop_assert!((b.latec - c * a.latec).abs() <= tol);
            prop_assert!((b.se - c * a.se).abs() <= tol);
            prop_assert!((b.ci95.0 - c * a.ci95.0).abs() <= tol);
            prop_assert!((b.ci95.1 - c * a.ci95.1).abs() <= tol);
            prop_assert!((b.standardized - a.standardized).abs() <= 1e-9);
        }

        #[test]
        fn translation_invariance((seed, effect, slope) in strategy(), shift in -100.0..100.0f64) {
            let obs = fuzzy(seed, 1500, 0.6, effect, slope);
            let moved: Vec<_> = obs.iter().map(|o| Observation { y: o.y + shift, ..*o }).collect();
            let a = estimate_observations(&obs, &kernel()).unwrap();
            let b = estimate_observations(&moved, &kernel()).unwrap();
            prop_assert!((a.latec - b.latec).abs() <= 1e-9);
        }

        #[test]
        fn zero_weight_units_have_no_influence((seed, effect, slope) in strategy()) {
            let obs = fuzzy(seed, 1500, 0.6, effect, slope);
            let k = kernel();
            let inside: Vec<_> = obs.iter().copied().filter(|o| triangular_weight(o.s, &k) > 0.0).collect();
            let a = estimate_observations(&obs, &k).unwrap();
            let b = estimate_observations(&inside, &k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sharp_design_equals_itt((seed, effect, slope) in strategy()) {
            let obs: Vec<_> = fuzzy(seed, 1500, 0.6, effect, slope)
                .into_iter()
                .map(|o| Observation { x: if o.s >= 0.5 { 1.0 } else { 0.0 }, ..o })
                .collect();
            let r = estimate_observations(&obs, &kernel()).unwrap();
            prop_assert!((r.itt_d - 1.0).abs() <= 1e-9);
            prop_assert!((r.latec - r.itt).abs() <= 1e-9);
        }

        #[test]
        fn reflection_negates_itt((seed, effect, slope) in strategy()) {
            let obs = fuzzy(seed, 1500, 0.6, effect, slope);
            // Mirror scores about the threshold and relabel treatment as 1 - x so
            // the first-stage jump keeps its sign under the reversed side order.
            let mirrored: Vec<_> = obs
                .iter()
                .filter(|o| o.s != 0.5)
                .map(|o| Observation { s: 1.0 - o.s, x: 1.0 - o.x, y: o.y })
                .collect();
            let kept: Vec<_> = obs.iter().copied().filter(|o| o.s != 0.5).collect();
            let a = estimate_observations(&kept, &kernel()).unwrap();
            let b = estimate_observations(&mirrored, &kernel()).unwrap();
            prop_assert!((a.itt + b.itt).abs() <= 1e-9 * (1.0 + a.itt.abs()));
            prop_assert!((a.latec.abs() - b.latec.abs()).abs() <= 1e-9 * (1.0 + a.latec.abs()));
        }
    }
}
