use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::design::Thresholds;
use crate::error::{Error, Result};

/// Probability of intervention below (`f0`) and at or above (`f1`) a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compliance {
    pub f0: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceLevels {
    pub hide: Compliance,
    pub delete: Compliance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaComponent {
    pub weight: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Generative specification of a synthetic moderation log.
///
/// Beyond the moderation mechanism itself, the behavioral knobs are:
/// `base_activity` sets average comment volume (about `base_activity`
/// comments per user per day across the posting period), `thread_shape` the
/// Gamma shape of per-thread activity, `min_followup` a floor on the number of
/// replies after a thread's focal comment, `score_slope` a log-linear tilt of
/// follow-up volume in the focal score, and `contagion` the increment to the
/// chance that a reply is rule-breaking per visible rule-breaking comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_users: u32,
    pub n_posts: u32,
    pub t_hide: f64,
    pub t_delete: f64,
    pub compliance: ComplianceLevels,
    pub score_dist: Vec<BetaComponent>,
    pub tau_delete_comments: f64,
    pub tau_delete_interventions: f64,
    pub tau_hide_comments: f64,
    pub tau_hide_interventions: f64,
    /// Standard deviation of per-unit Normal heterogeneity around each tau.
    pub tau_sd: f64,
    pub base_activity: f64,
    pub contagion: f64,
    /// Days of activity after the posting period closes.
    pub followup_days: u32,
    pub suspension_hours: u32,
    /// Days during which root posts are created.
    pub study_days: u32,
    pub start_timestamp: u64,
    pub min_followup: u32,
    pub mean_gap_minutes: f64,
    pub self_reply_prob: f64,
    pub thread_shape: f64,
    pub score_slope: f64,
    /// Gamma shape of per-user activity weights.
    pub activity_shape: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            n_users: 20_000,
            n_posts: 20_000,
            t_hide: 0.70,
            t_delete: 0.90,
            compliance: ComplianceLevels {
                hide: Compliance { f0: 0.05, f1: 0.80 },
                delete: Compliance { f0: 0.02, f1: 0.75 },
            },
            score_dist: vec![
                BetaComponent {
                    weight: 0.8,
                    alpha: 1.5,
                    beta: 8.0,
                },
                BetaComponent {
                    weight: 0.2,
                    alpha: 6.0,
                    beta: 2.0,
                },
            ],
            tau_delete_comments: -3.0,
            tau_delete_interventions: -1.0,
            tau_hide_comments: 0.0,
            tau_hide_interventions: 0.0,
            tau_sd: 0.0,
            base_activity: 0.4,
            contagion: 0.02,
            followup_days: 28,
            suspension_hours: 24,
            study_days: 60,
            start_timestamp: 1_654_041_600,
            min_followup: 5,
            mean_gap_minutes: 20.0,
            self_reply_prob: 0.1,
            thread_shape: 1.0,
            score_slope: 0.0,
            activity_shape: 2.0,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SimConfig serializes")
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            hide: self.t_hide,
            delete: self.t_delete,
        }
    }

    /// Mean activity (comments) of an untruncated thread.
    pub fn thread_volume(&self) -> f64 {
        self.base_activity * f64::from(self.n_users) * f64::from(self.study_days)
            / f64::from(self.n_posts)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_users == 0 || self.n_posts == 0 {
            return bad("n_users and n_posts must be positive".into());
        }
        if !(0.0 < self.t_hide && self.t_hide < self.t_delete && self.t_delete < 1.0) {
            return bad(format!(
                "thresholds must satisfy 0 < t_hide < t_delete < 1 (got {}, {})",
                self.t_hide, self.t_delete
            ));
        }
        for (name, c) in [("hide", self.compliance.hide), ("delete", self.compliance.delete)] {
            let unit = 0.0..=1.0;
            if !unit.contains(&c.f0) || !unit.contains(&c.f1) || c.f1 < c.f0 {
                return bad(format!(
                    "compliance.{name} needs 0 <= f0 <= f1 <= 1 (got f0={}, f1={})",
                    c.f0, c.f1
                ));
            }
        }
        if self.score_dist.is_empty() {
            return bad("score_dist needs at least one component".into());
        }
        let total: f64 = self.score_dist.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("score_dist weights sum to {total}, expected 1"));
        }
        if self
            .score_dist
            .iter()
            .any(|c| !(c.weight >= 0.0 && c.alpha > 0.0 && c.beta > 0.0))
        {
            return bad("score_dist components need weight >= 0 and alpha, beta > 0".into());
        }
        let taus = [
            self.tau_delete_comments,
            self.tau_delete_interventions,
            self.tau_hide_comments,
            self.tau_hide_interventions,
        ];
        if taus.iter().any(|t| !t.is_finite()) || !(self.tau_sd >= 0.0) {
            return bad("tau values must be finite and tau_sd non-negative".into());
        }
        let rates = [
            self.base_activity,
            self.contagion,
            self.mean_gap_minutes,
        ];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("rate parameters must be non-negative".into());
        }
        if self.followup_days == 0 || self.study_days == 0 {
            return bad("followup_days and study_days must be positive".into());
        }
        if self.suspension_hours != 24 {
            return bad(format!(
                "suspension_hours is fixed at 24 (got {})",
                self.suspension_hours
            ));
        }
        if !(0.0..=1.0).contains(&self.self_reply_prob) {
            return bad("self_reply_prob must lie in [0, 1]".into());
        }
        if !(self.thread_shape > 0.0 && self.activity_shape > 0.0) {
            return bad("thread_shape and activity_shape must be positive".into());
        }
        if !self.score_slope.is_finite() {
            return bad("score_slope must be finite".into());
        }
        Ok(())
    }
}

/// Sampler for the Beta-mixture score distribution.
#[derive(Debug, Clone)]
pub struct ScoreSampler {
    cumulative: Vec<f64>,
    components: Vec<Beta<f64>>,
}

impl ScoreSampler {
    pub fn new(components: &[BetaComponent]) -> Result<Self> {
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(components.len());
        let mut betas = Vec::with_capacity(components.len());
        for c in components {
            acc += c.weight;
            cumulative.push(acc);
            betas.push(
                Beta::new(c.alpha, c.beta).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            );
        }
        Ok(ScoreSampler {
            cumulative,
            components: betas,
        })
    }

    /// Draws one score. Consumes exactly one uniform for the component choice
    /// plus whatever the Beta sampler needs.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1);
        self.components[k].sample(rng).clamp(0.0, 1.0)
    }
}
