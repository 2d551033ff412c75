//! Report cells, effect formatting and the result tables.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{AuthorScope, CohortSpec, OffenderClass, Scenario, ThreadSize, USER_K_DAYS};
use crate::design::{Cutoff, OutcomeKind, Thresholds};
use crate::error::{Error, Result};
use crate::estimate::EstimateResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Thread,
    UserFirst,
    UserRepeat,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Thread => "thread",
            ScenarioKind::UserFirst => "user-first",
            ScenarioKind::UserRepeat => "user-repeat",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Thread => "Thread-level",
            ScenarioKind::UserFirst => "User-level (first offender)",
            ScenarioKind::UserRepeat => "User-level (repeat offender)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setup {
    Thread(ThreadSize, AuthorScope),
    Days(u32),
}

impl Setup {
    pub fn label(self) -> String {
        match self {
            Setup::Thread(size, authors) => {
                let size = match size {
                    ThreadSize::AtMost20 => "<=20",
                    ThreadSize::Over20 => ">20",
                    ThreadSize::Any => "any",
                };
                let authors = match authors {
                    AuthorScope::All => "All",
                    AuthorScope::Other => "Other",
                };
                format!("{size} / {authors}")
            }
            Setup::Days(k) => k.to_string(),
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setup::Thread(size, authors) => write!(f, "{size}-{authors}"),
            Setup::Days(k) => write!(f, "k{k}"),
        }
    }
}

/// One row of the report: intervention x scenario x outcome x setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub cutoff: Cutoff,
    pub scenario: ScenarioKind,
    pub outcome: OutcomeKind,
    pub setup: Setup,
}

const THREAD_SETUPS: [Setup; 4] = [
    Setup::Thread(ThreadSize::AtMost20, AuthorScope::All),
    Setup::Thread(ThreadSize::AtMost20, AuthorScope::Other),
    Setup::Thread(ThreadSize::Over20, AuthorScope::All),
    Setup::Thread(ThreadSize::Over20, AuthorScope::Other),
];

impl CellKey {
    pub fn cohort_spec(&self, thresholds: Thresholds) -> CohortSpec {
        let scenario = match (self.scenario, self.setup) {
            (ScenarioKind::Thread, Setup::Thread(size, authors)) => Scenario::Thread { size, authors },
            (ScenarioKind::UserFirst, Setup::Days(k)) => {
                Scenario::User { k_days: k, offender: Some(OffenderClass::FirstTime) }
            }
            (ScenarioKind::UserRepeat, Setup::Days(k)) => {
                Scenario::User { k_days: k, offender: Some(OffenderClass::Repeat) }
            }
            _ => unreachable!("cell keys are built with matching setups"),
        };
        CohortSpec { cutoff: self.cutoff, thresholds, scenario }
    }

    /// File-name friendly form of the key.
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "_").replace("<=", "le").replace('>', "gt")
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.cutoff, self.scenario.as_str(), self.outcome, self.setup)
    }
}

impl FromStr for CellKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        all_cells()
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown cell `{s}`")))
    }
}

/// The full 48-cell layout in table order: delete before hide, then thread,
/// first-offender and repeat-offender blocks, comments before interventions.
pub fn all_cells() -> Vec<CellKey> {
    let mut cells = Vec::with_capacity(48);
    for cutoff in [Cutoff::Delete, Cutoff::Hide] {
        for scenario in [ScenarioKind::Thread, ScenarioKind::UserFirst, ScenarioKind::UserRepeat] {
            for outcome in [OutcomeKind::Comments, OutcomeKind::Interventions] {
                let setups: Vec<Setup> = match scenario {
                    ScenarioKind::Thread => THREAD_SETUPS.to_vec(),
                    _ => USER_K_DAYS.iter().map(|&k| Setup::Days(k)).collect(),
                };
                for setup in setups {
                    cells.push(CellKey { cutoff, scenario, outcome, setup });
                }
            }
        }
    }
    cells
}

/// Cells matching any pattern. Patterns are cell keys whose `:`-separated
/// segments may be `*`; a shorter pattern matches any remaining segments.
pub fn select_cells(patterns: &[String]) -> Result<Vec<CellKey>> {
    let cells: Vec<CellKey> = all_cells()
        .into_iter()
        .filter(|c| {
            let key = c.to_string();
            let parts: Vec<&str> = key.split(':').collect();
            patterns.iter().any(|p| {
                let pat: Vec<&str> = p.split(':').collect();
                pat.len() <= parts.len() && pat.iter().zip(&parts).all(|(a, b)| *a == "*" || a == b)
            })
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::InvalidConfig(format!("cell selection {patterns:?} matches no cells")));
    }
    Ok(cells)
}

/// Number with three decimals below one in magnitude, two otherwise.
pub fn format_number(x: f64) -> String {
    let s = if x.abs() < 1.0 { format!("{x:.3}") } else { format!("{x:.2}") };
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

/// Interval at level `alpha`; the stored 95% interval when `alpha` is 0.05.
pub fn interval(center: f64, ci95: (f64, f64), se: f64, alpha: f64) -> (f64, f64) {
    if (alpha - 0.05).abs() < 1e-12 {
        ci95
    } else {
        let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
        (center - z * se, center + z * se)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormattedEffect {
    pub text: String,
    pub significant: bool,
    /// Interval collapsed to a point.
    pub degenerate: bool,
}

impl fmt::Display for FormattedEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn render(center: f64, (lo, hi): (f64, f64)) -> FormattedEffect {
    let degenerate = lo == hi;
    let significant = !degenerate && (lo > 0.0 || hi < 0.0);
    let star = if significant { "*" } else { "" };
    FormattedEffect {
        text: format!("{} ({}, {}){star}", format_number(center), format_number(lo), format_number(hi)),
        significant,
        degenerate,
    }
}

/// `e (lo, hi)` with a star when the interval at `alpha` excludes zero.
pub fn format_effect(estimate: &EstimateResult, alpha: f64) -> FormattedEffect {
    render(estimate.latec, interval(estimate.latec, estimate.ci95, estimate.se, alpha))
}

pub fn format_standardized(estimate: &EstimateResult, alpha: f64) -> FormattedEffect {
    render(estimate.standardized, standardized_interval(estimate, alpha))
}

pub fn standardized_interval(estimate: &EstimateResult, alpha: f64) -> (f64, f64) {
    if estimate.outcome_sd > 0.0 {
        let (lo, hi) = interval(estimate.latec, estimate.ci95, estimate.se, alpha);
        (lo / estimate.outcome_sd, hi / estimate.outcome_sd)
    } else {
        estimate.standardized_ci95
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Main,
    Placebo,
}

impl TableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::Main => "main",
            TableKind::Placebo => "placebo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub cell: CellKey,
    /// Cohort size before kernel weighting.
    pub n: Option<usize>,
    pub bandwidth_h: Option<f64>,
    pub result: std::result::Result<EstimateResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub kind: TableKind,
    pub alpha: f64,
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: [&str; 23] = [
    "table",
    "intervention",
    "scenario",
    "outcome",
    "setup",
    "n",
    "n_effective",
    "bandwidth_h",
    "effect",
    "effect_lo",
    "effect_hi",
    "se",
    "standardized",
    "standardized_lo",
    "standardized_hi",
    "itt",
    "itt_d",
    "first_stage_f",
    "significant",
    "degenerate",
    "effect_text",
    "standardized_text",
    "error",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ReportTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REPORT_COLUMNS)?;
        for row in &self.rows {
            let c = row.cell;
            let mut rec = vec![
                self.kind.as_str().to_string(),
                c.cutoff.to_string(),
                c.scenario.as_str().to_string(),
                c.outcome.to_string(),
                c.setup.to_string(),
                opt(row.n),
                String::new(),
                opt(row.bandwidth_h),
            ];
            match &row.result {
                Ok(e) => {
                    let (lo, hi) = interval(e.latec, e.ci95, e.se, self.alpha);
                    let (slo, shi) = standardized_interval(e, self.alpha);
                    let fe = format_effect(e, self.alpha);
                    let fs = format_standardized(e, self.alpha);
                    rec[6] = e.n_effective.to_string();
                    rec.extend([
                        e.latec.to_string(),
                        lo.to_string(),
                        hi.to_string(),
                        e.se.to_string(),
                        e.standardized.to_string(),
                        slo.to_string(),
                        shi.to_string(),
                        e.itt.to_string(),
                        e.itt_d.to_string(),
                        e.first_stage_f.to_string(),
                        fe.significant.to_string(),
                        (fe.degenerate || e.degenerate).to_string(),
                        fe.text,
                        fs.text,
                        String::new(),
                    ]);
                }
                Err(msg) => {
                    rec.extend(std::iter::repeat_n(String::new(), 14));
                    rec.push(msg.clone());
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    /// Fixed-width text rendering, one block per intervention.
    pub fn render_text(&self) -> String {
        let title = match self.kind {
            TableKind::Main => "Effects on follow-up outcomes",
            TableKind::Placebo => "Placebo effects on pre-assignment outcomes",
        };
        let mut lines = vec![
            title.to_string(),
            format!(
                "{:<12} {:<29} {:<14} {:<12} {:>28} {:>28} {:>9}",
                "Intervention", "Scenario", "Outcome", "Setup", "Effect", "Effect (Standardized)", "n"
            ),
        ];
        let mut prev: Option<CellKey> = None;
        for row in &self.rows {
            let c = row.cell;
            let show_cut = prev.is_none_or(|p| p.cutoff != c.cutoff);
            let show_scen = show_cut || prev.is_none_or(|p| p.scenario != c.scenario);
            let show_out = show_scen || prev.is_none_or(|p| p.outcome != c.outcome);
            if show_cut && prev.is_some() {
                lines.push(String::new());
            }
            let cut = if show_cut { capitalize(c.cutoff.as_str()) } else { String::new() };
            let scen = if show_scen { c.scenario.label() } else { "" };
            let out = if show_out { capitalize(c.outcome.as_str()) } else { String::new() };
            let (effect, std) = match &row.result {
                Ok(e) => {
                    let f = format_effect(e, self.alpha);
                    let flag = if f.degenerate || e.degenerate { " [degenerate]" } else { "" };
                    (format!("{f}{flag}"), format_standardized(e, self.alpha).text)
                }
                Err(msg) => (format!("[{}]", msg.split(':').next().unwrap_or(msg)), String::new()),
            };
            lines.push(format!(
                "{:<12} {:<29} {:<14} {:<12} {:>28} {:>28} {:>9}",
                cut,
                scen,
                out,
                c.setup.label(),
                effect,
                std,
                opt(row.n)
            ));
            prev = Some(c);
        }
        lines.push(String::new());
        lines.join("\n")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}
