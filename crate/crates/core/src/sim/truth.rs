use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{Cutoff, OutcomeKind, in_window};
use crate::error::{Error, Result};

/// Follow-up outcomes of a thread (all authors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outcomes {
    pub comments: u64,
    pub interventions: u64,
}

impl Outcomes {
    pub fn get(&self, kind: OutcomeKind) -> u64 {
        match kind {
            OutcomeKind::Comments => self.comments,
            OutcomeKind::Interventions => self.interventions,
        }
    }
}

/// Potential outcomes of one thread-level unit.
///
/// `y_treated` is the world where the focal comment sits just at or above its
/// threshold, `y_untreated` just below, with every other random number held
/// fixed. For non-compliers both worlds coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthUnit {
    pub post_id: u64,
    pub c0_comment_id: u64,
    pub running_s: f64,
    pub cutoff: Cutoff,
    pub threshold: f64,
    pub complier: bool,
    /// Whether the realized focal intervention is the cutoff's action.
    pub treated: bool,
    pub y_treated: Outcomes,
    pub y_untreated: Outcomes,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub units: Vec<TruthUnit>,
}

/// Minimum number of compliers the oracle averages over.
pub const ORACLE_MIN_UNITS: usize = 100;

/// Mean potential-outcome difference over compliers within `window` of
/// `threshold`, with its standard error.
pub fn oracle_latec(
    truth: &GroundTruth,
    threshold: f64,
    window: f64,
    outcome: OutcomeKind,
) -> Result<(f64, f64)> {
    if !(window > 0.0) {
        return Err(Error::InvalidConfig(format!("oracle window must be positive, got {window}")));
    }
    let diffs: Vec<f64> = truth
        .units
        .iter()
        .filter(|u| {
            u.complier
                && (u.threshold - threshold).abs() < 1e-12
                && in_window(u.running_s, threshold, window)
        })
        .map(|u| u.y_treated.get(outcome) as f64 - u.y_untreated.get(outcome) as f64)
        .collect();
    if diffs.len() < ORACLE_MIN_UNITS {
        return Err(Error::InsufficientUnits {
            found: diffs.len(),
            required: ORACLE_MIN_UNITS,
        });
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    unit_id: u64,
    c0_comment_id: u64,
    running_s: f64,
    cutoff: Cutoff,
    threshold: f64,
    complier: bool,
    treated: bool,
    y_treated_comments: u64,
    y_untreated_comments: u64,
    y_treated_interventions: u64,
    y_untreated_interventions: u64,
}

/// Writes the ground-truth sidecar file, one row per thread unit.
pub fn write_truth<W: Write>(truth: &GroundTruth, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for u in &truth.units {
        w.serialize(TruthRow {
            unit_id: u.post_id,
            c0_comment_id: u.c0_comment_id,
            running_s: u.running_s,
            cutoff: u.cutoff,
            threshold: u.threshold,
            complier: u.complier,
            treated: u.treated,
            y_treated_comments: u.y_treated.comments,
            y_untreated_comments: u.y_untreated.comments,
            y_treated_interventions: u.y_treated.interventions,
            y_untreated_interventions: u.y_untreated.interventions,
        })?;
    }
    w.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}

pub fn write_truth_file(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_truth(truth, BufWriter::new(f))
}

pub fn read_truth<R: Read>(reader: R) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_reader(reader);
    let mut units = Vec::new();
    for row in r.deserialize::<TruthRow>() {
        let row = row?;
        units.push(TruthUnit {
            post_id: row.unit_id,
            c0_comment_id: row.c0_comment_id,
            running_s: row.running_s,
            cutoff: row.cutoff,
            threshold: row.threshold,
            complier: row.complier,
            treated: row.treated,
            y_treated: Outcomes {
                comments: row.y_treated_comments,
                interventions: row.y_treated_interventions,
            },
            y_untreated: Outcomes {
                comments: row.y_untreated_comments,
                interventions: row.y_untreated_interventions,
            },
        });
    }
    Ok(GroundTruth { units })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(s: f64, complier: bool, treated: u64, untreated: u64) -> TruthUnit {
        TruthUnit {
            post_id: 1,
            c0_comment_id: 2,
            running_s: s,
            cutoff: Cutoff::Delete,
            threshold: 0.9,
            complier,
            treated: complier && s >= 0.9,
            y_treated: Outcomes { comments: treated, interventions: 0 },
            y_untreated: Outcomes { comments: untreated, interventions: 0 },
        }
    }

    #[test]
    fn constant_effect_is_exact_with_zero_se() {
        let truth = GroundTruth {
            units: (0..200).map(|i| unit(0.86 + 0.0004 * i as f64, true, 10, 15)).collect(),
        };
        let (est, se) = oracle_latec(&truth, 0.9, 0.05, OutcomeKind::Comments).unwrap();
        assert_eq!(est, -5.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn ignores_non_compliers_and_out_of_window_units() {
        let mut units: Vec<_> = (0..150).map(|_| unit(0.9, true, 3, 3)).collect();
        units.extend((0..50).map(|_| unit(0.9, false, 100, 0)));
        units.extend((0..50).map(|_| unit(0.5, true, 100, 0)));
        let (est, _) = oracle_latec(&GroundTruth { units }, 0.9, 0.05, OutcomeKind::Comments).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn too_few_compliers() {
        let truth = GroundTruth { units: (0..99).map(|_| unit(0.9, true, 1, 0)).collect() };
        assert!(matches!(
            oracle_latec(&truth, 0.9, 0.05, OutcomeKind::Comments),
            Err(Error::InsufficientUnits { found: 99, .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let truth = GroundTruth { units: vec![unit(0.91, true, 4, 9), unit(0.88, false, 2, 2)] };
        let mut buf = Vec::new();
        write_truth(&truth, &mut buf).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), truth);
    }
}
