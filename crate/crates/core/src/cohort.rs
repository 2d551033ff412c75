//! Thread-level and user-level analysis units.
//!
//! In both scenarios the focal comment `c0` is the earliest comment whose score
//! falls inside either cutoff window; a cohort keeps the units whose `c0`
//! belongs to its own cutoff. Outcomes count comments *posted* in a window.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CommentRecord, Dataset, Intervention};
use crate::design::{Cutoff, OutcomeKind, Thresholds};
use crate::error::{Error, Result};

/// Follow-up windows considered at the user level.
pub const USER_K_DAYS: [u32; 4] = [7, 14, 21, 28];
/// Thread size split between the small and large setups.
pub const THREAD_SIZE_SPLIT: u64 = 20;
/// Hours excluded after `c0` for repeat offenders.
pub const SUSPENSION_HOURS: u64 = 24;

const DAY: u64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffenderClass {
    #[serde(rename = "first")]
    FirstTime,
    Repeat,
}

impl OffenderClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OffenderClass::FirstTime => "first",
            OffenderClass::Repeat => "repeat",
        }
    }
}

impl FromStr for OffenderClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "first" => Ok(OffenderClass::FirstTime),
            "repeat" => Ok(OffenderClass::Repeat),
            other => Err(format!("unknown offender class `{other}` (expected first|repeat)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ThreadSize {
    /// At most 20 comments before `c0`.
    AtMost20,
    /// More than 20 comments before `c0`.
    Over20,
    Any,
}

/// Whether the author of `c0` counts toward thread outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuthorScope {
    All,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Thread {
        size: ThreadSize,
        authors: AuthorScope,
    },
    User {
        k_days: u32,
        /// `None` keeps both classes.
        offender: Option<OffenderClass>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub cutoff: Cutoff,
    pub thresholds: Thresholds,
    pub scenario: Scenario,
}

/// One thread or user in a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioUnit {
    pub unit_id: u64,
    pub c0_comment_id: u64,
    pub running_s: f64,
    pub treated: bool,
    #[serde(rename = "y_fu_comments")]
    pub y_followup_comments: u64,
    #[serde(rename = "y_fu_interventions")]
    pub y_followup_interventions: u64,
    pub y_pre_comments: u64,
    pub y_pre_interventions: u64,
    pub pre_thread_size: Option<u64>,
    pub offender_class: Option<OffenderClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Period {
    FollowUp,
    Pre,
}

impl ScenarioUnit {
    pub fn outcome(&self, kind: OutcomeKind, period: Period) -> f64 {
        let v = match (kind, period) {
            (OutcomeKind::Comments, Period::FollowUp) => self.y_followup_comments,
            (OutcomeKind::Interventions, Period::FollowUp) => self.y_followup_interventions,
            (OutcomeKind::Comments, Period::Pre) => self.y_pre_comments,
            (OutcomeKind::Interventions, Period::Pre) => self.y_pre_interventions,
        };
        v as f64
    }

    pub fn treatment(&self) -> f64 {
        if self.treated { 1.0 } else { 0.0 }
    }
}

/// Counts over one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowCounts {
    pub comments: u64,
    pub interventions: u64,
}

/// Counts every record and those that were hidden or deleted.
pub fn compute_outcomes<'a>(records: impl IntoIterator<Item = &'a CommentRecord>) -> WindowCounts {
    records.into_iter().fold(WindowCounts::default(), |mut acc, r| {
        acc.comments += 1;
        if matches!(r.intervention, Intervention::Hide | Intervention::Delete) {
            acc.interventions += 1;
        }
        acc
    })
}

fn in_any_window(thresholds: &Thresholds, r: &CommentRecord) -> Option<Cutoff> {
    if r.is_root_post {
        return None;
    }
    r.score.and_then(|s| thresholds.window_of(s))
}

/// Builds one unit per thread whose focal comment lies in `spec.cutoff`'s window.
pub fn build_thread_cohort(dataset: &Dataset, spec: &CohortSpec) -> Result<Vec<ScenarioUnit>> {
    let Scenario::Thread { size, authors } = spec.scenario else {
        return Err(Error::InvalidConfig("thread cohort needs a thread scenario".into()));
    };
    let mut units = Vec::new();
    for (post_id, _) in dataset.roots() {
        let comments = dataset.thread(post_id);
        let Some((pos, cutoff)) = comments
            .iter()
            .enumerate()
            .find_map(|(k, &i)| in_any_window(&spec.thresholds, dataset.record(i)).map(|c| (k, c)))
        else {
            continue;
        };
        if cutoff != spec.cutoff {
            continue;
        }
        let pre_size = pos as u64;
        let keep = match size {
            ThreadSize::AtMost20 => pre_size <= THREAD_SIZE_SPLIT,
            ThreadSize::Over20 => pre_size > THREAD_SIZE_SPLIT,
            ThreadSize::Any => true,
        };
        if !keep {
            continue;
        }
        let c0 = dataset.record(comments[pos]);
        let counted = |i: &&usize| {
            authors == AuthorScope::All || dataset.record(**i).author_id != c0.author_id
        };
        let pre = compute_outcomes(comments[..pos].iter().filter(counted).map(|&i| dataset.record(i)));
        let fu = compute_outcomes(comments[pos + 1..].iter().filter(counted).map(|&i| dataset.record(i)));
        units.push(ScenarioUnit {
            unit_id: post_id,
            c0_comment_id: c0.comment_id,
            running_s: c0.score.unwrap_or(f64::NAN),
            treated: c0.intervention == spec.cutoff.focal(),
            y_followup_comments: fu.comments,
            y_followup_interventions: fu.interventions,
            y_pre_comments: pre.comments,
            y_pre_interventions: pre.interventions,
            pre_thread_size: Some(pre_size),
            offender_class: None,
        });
    }
    if units.is_empty() {
        return Err(Error::EmptyCohort(format!("no threads qualify for the {} cutoff", spec.cutoff)));
    }
    Ok(units)
}

/// Builds one unit per user whose first in-window comment lies in
/// `spec.cutoff`'s window and whose follow-up fits inside the dataset.
pub fn build_user_cohort(dataset: &Dataset, spec: &CohortSpec) -> Result<Vec<ScenarioUnit>> {
    let Scenario::User { k_days, offender } = spec.scenario else {
        return Err(Error::InvalidConfig("user cohort needs a user scenario".into()));
    };
    if !USER_K_DAYS.contains(&k_days) {
        return Err(Error::InvalidConfig(format!(
            "k_days must be one of {USER_K_DAYS:?}, got {k_days}"
        )));
    }
    let Some(study_end) = dataset.max_timestamp() else {
        return Err(Error::EmptyCohort("dataset is empty".into()));
    };
    let horizon = u64::from(k_days) * DAY;
    let mut units = Vec::new();
    for (author_id, items) in dataset.users() {
        let Some((pos, cutoff)) = items
            .iter()
            .enumerate()
            .find_map(|(k, &i)| in_any_window(&spec.thresholds, dataset.record(i)).map(|c| (k, c)))
        else {
            continue;
        };
        if cutoff != spec.cutoff {
            continue;
        }
        let c0 = dataset.record(items[pos]);
        let t0 = c0.timestamp;
        if t0 + horizon > study_end {
            continue;
        }
        let class = if c0.author_prior_offense {
            OffenderClass::Repeat
        } else {
            OffenderClass::FirstTime
        };
        if offender.is_some_and(|o| o != class) {
            continue;
        }
        let pre_start = t0.saturating_sub(horizon);
        let excluded_until = match class {
            OffenderClass::Repeat => t0 + SUSPENSION_HOURS * 3600,
            OffenderClass::FirstTime => t0,
        };
        let pre = compute_outcomes(
            items[..pos]
                .iter()
                .map(|&i| dataset.record(i))
                .filter(|r| r.timestamp >= pre_start),
        );
        let fu = compute_outcomes(
            items[pos + 1..]
                .iter()
                .map(|&i| dataset.record(i))
                .take_while(|r| r.timestamp <= t0 + horizon)
                .filter(|r| class == OffenderClass::FirstTime || r.timestamp > excluded_until),
        );
        units.push(ScenarioUnit {
            unit_id: author_id,
            c0_comment_id: c0.comment_id,
            running_s: c0.score.unwrap_or(f64::NAN),
            treated: c0.intervention == spec.cutoff.focal(),
            y_followup_comments: fu.comments,
            y_followup_interventions: fu.interventions,
            y_pre_comments: pre.comments,
            y_pre_interventions: pre.interventions,
            pre_thread_size: None,
            offender_class: Some(class),
        });
    }
    if units.is_empty() {
        return Err(Error::EmptyCohort(format!("no users qualify for the {} cutoff", spec.cutoff)));
    }
    Ok(units)
}

/// Dispatches on the scenario.
pub fn build_cohort(dataset: &Dataset, spec: &CohortSpec) -> Result<Vec<ScenarioUnit>> {
    match spec.scenario {
        Scenario::Thread { .. } => build_thread_cohort(dataset, spec),
        Scenario::User { .. } => build_user_cohort(dataset, spec),
    }
}

impl fmt::Display for ThreadSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThreadSize::AtMost20 => "le20",
            ThreadSize::Over20 => "gt20",
            ThreadSize::Any => "any",
        })
    }
}

impl fmt::Display for AuthorScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuthorScope::All => "all",
            AuthorScope::Other => "other",
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortRow {
    unit_id: u64,
    c0_comment_id: u64,
    running_s: f64,
    treated: bool,
    y_fu_comments: u64,
    y_fu_interventions: u64,
    y_pre_comments: u64,
    y_pre_interventions: u64,
    pre_thread_size: Option<u64>,
    offender_class: Option<OffenderClass>,
}

/// Writes units with the cohort export header.
pub fn write_cohort<W: Write>(units: &[ScenarioUnit], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for u in units {
        w.serialize(CohortRow {
            unit_id: u.unit_id,
            c0_comment_id: u.c0_comment_id,
            running_s: u.running_s,
            treated: u.treated,
            y_fu_comments: u.y_followup_comments,
            y_fu_interventions: u.y_followup_interventions,
            y_pre_comments: u.y_pre_comments,
            y_pre_interventions: u.y_pre_interventions,
            pre_thread_size: u.pre_thread_size,
            offender_class: u.offender_class,
        })?;
    }
    if units.is_empty() {
        w.write_record([
            "unit_id",
            "c0_comment_id",
            "running_s",
            "treated",
            "y_fu_comments",
            "y_fu_interventions",
            "y_pre_comments",
            "y_pre_interventions",
            "pre_thread_size",
            "offender_class",
        ])?;
    }
    w.flush().map_err(|e| Error::io("<cohort>", e))?;
    Ok(())
}

pub fn read_cohort<R: Read>(reader: R) -> Result<Vec<ScenarioUnit>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize::<CohortRow>() {
        let row = row?;
        out.push(ScenarioUnit {
            unit_id: row.unit_id,
            c0_comment_id: row.c0_comment_id,
            running_s: row.running_s,
            treated: row.treated,
            y_followup_comments: row.y_fu_comments,
            y_followup_interventions: row.y_fu_interventions,
            y_pre_comments: row.y_pre_comments,
            y_pre_interventions: row.y_pre_interventions,
            pre_thread_size: row.pre_thread_size,
            offender_class: row.offender_class,
        });
    }
    Ok(out)
}
