//! Shared vocabulary of the quasi-experiment: cutoffs, outcome kinds and the
//! score window that selects the focal comment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Intervention;

/// Half-width of the score window around each cutoff, inclusive on both ends.
pub const WINDOW: f64 = 0.05;

/// Slack absorbing float round-off at the window edges (`0.55 - 0.5 > 0.05`).
const EDGE_SLACK: f64 = 1e-12;

/// Whether `score` lies in `[threshold - half_width, threshold + half_width]`.
pub fn in_window(score: f64, threshold: f64, half_width: f64) -> bool {
    (score - threshold).abs() <= half_width + EDGE_SLACK
}

/// Which moderation threshold a cohort is built around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    Hide,
    Delete,
}

impl Cutoff {
    /// The intervention that counts as exposure for this cutoff.
    pub fn focal(self) -> Intervention {
        match self {
            Cutoff::Hide => Intervention::Hide,
            Cutoff::Delete => Intervention::Delete,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cutoff::Hide => "hide",
            Cutoff::Delete => "delete",
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cutoff {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hide" => Ok(Cutoff::Hide),
            "delete" => Ok(Cutoff::Delete),
            other => Err(format!("unknown cutoff `{other}` (expected hide|delete)")),
        }
    }
}

/// Numeric thresholds of the two interventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hide: f64,
    pub delete: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            hide: 0.70,
            delete: 0.90,
        }
    }
}

impl Thresholds {
    pub fn value(&self, cutoff: Cutoff) -> f64 {
        match cutoff {
            Cutoff::Hide => self.hide,
            Cutoff::Delete => self.delete,
        }
    }

    /// Cutoff whose window contains `score`. When both windows do, the nearer
    /// threshold wins; exact ties go to delete.
    pub fn window_of(&self, score: f64) -> Option<Cutoff> {
        let dh = (score - self.hide).abs();
        let dd = (score - self.delete).abs();
        match (
            in_window(score, self.hide, WINDOW),
            in_window(score, self.delete, WINDOW),
        ) {
            (true, true) if dh < dd => Some(Cutoff::Hide),
            (true, true) => Some(Cutoff::Delete),
            (true, false) => Some(Cutoff::Hide),
            (false, true) => Some(Cutoff::Delete),
            (false, false) => None,
        }
    }
}

/// Outcome measured over a follow-up or pre-assignment window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Comments,
    Interventions,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Comments => "comments",
            OutcomeKind::Interventions => "interventions",
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "comments" => Ok(OutcomeKind::Comments),
            "interventions" => Ok(OutcomeKind::Interventions),
            other => Err(format!("unknown outcome `{other}` (expected comments|interventions)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_membership_is_inclusive() {
        let t = Thresholds { hide: 0.5, delete: 0.75 };
        assert_eq!(t.window_of(0.45), Some(Cutoff::Hide));
        assert_eq!(t.window_of(0.55), Some(Cutoff::Hide));
        assert_eq!(t.window_of(0.8), Some(Cutoff::Delete));
        assert_eq!(t.window_of(0.6), None);
    }

    #[test]
    fn overlapping_windows_pick_nearer_threshold() {
        let t = Thresholds { hide: 0.80, delete: 0.88 };
        assert_eq!(t.window_of(0.83), Some(Cutoff::Hide));
        assert_eq!(t.window_of(0.85), Some(Cutoff::Delete));
    }
}
