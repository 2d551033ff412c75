//! End-to-end runs: dataset, cohorts, bandwidths, estimates, diagnostics and
//! the artifact files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{CellBandwidth, cell_bandwidth};
use crate::cohort::{Period, ScenarioUnit, build_cohort};
use crate::data::{Dataset, ingest, write_events_file};
use crate::design::{Cutoff, Thresholds};
use crate::diagnostics::{
    BinVariable, BinnedTable, DEFAULT_SWEEP, McCraryResult, SweepResult, binned_means, mccrary_test,
    sweep_observations, validate_multipliers,
};
use crate::error::{Error, Result};
use crate::estimate::{EstimateResult, KernelSpec, estimate_observations, observations};
use crate::report::{CellKey, ReportRow, ReportTable, ScenarioKind, Setup, TableKind, interval, select_cells};
use crate::sim::{GroundTruth, SimConfig, generate, oracle_latec, write_truth_file};

/// Batch run settings, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Event log to analyze.
    pub events: Option<PathBuf>,
    /// Simulator settings used when no event log is given.
    pub sim_config: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Cell patterns, see [`select_cells`].
    pub cells: Vec<String>,
    /// Fixed bandwidth for every cell instead of the plug-in choice.
    pub bandwidth: Option<f64>,
    pub sweep: Vec<f64>,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub bins: usize,
    /// Thresholds of an event-log input; simulated inputs use their own.
    pub t_hide: f64,
    pub t_delete: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        RunConfig {
            events: None,
            sim_config: None,
            output_dir: PathBuf::from("out"),
            cells: vec!["*".into()],
            bandwidth: None,
            sweep: DEFAULT_SWEEP.to_vec(),
            seeds: Vec::new(),
            alpha: 0.05,
            bins: 20,
            t_hide: t.hide,
            t_delete: t.delete,
        }
    }
}

/// Environment variable that replaces the configured seed list.
pub const SEEDS_ENV: &str = "MODERD_SEEDS";

pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            let (a, b) = (parse_seed(a)?, parse_seed(b)?);
            seeds.extend(a..=b);
        } else {
            seeds.push(parse_seed(part)?);
        }
    }
    Ok(seeds)
}

fn parse_seed(s: &str) -> Result<u64> {
    s.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad seed `{s}`")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        // Input paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.events, &mut config.sim_config].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match (&self.events, &self.sim_config) {
            (Some(_), Some(_)) => return bad("give either events or sim_config, not both".into()),
            (None, None) => return bad("one of events or sim_config is required".into()),
            (Some(p), None) | (None, Some(p)) if !p.exists() => {
                return bad(format!("input file {} does not exist", p.display()));
            }
            _ => {}
        }
        select_cells(&self.cells)?;
        validate_multipliers(&self.sweep)?;
        if let Some(h) = self.bandwidth {
            KernelSpec::new(0.5, h)?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.bins < 4 || !self.bins.is_multiple_of(2) {
            return bad(format!("bins must be even and at least 4, got {}", self.bins));
        }
        if !(0.0 < self.t_hide && self.t_hide < self.t_delete && self.t_delete < 1.0) {
            return bad("thresholds must satisfy 0 < t_hide < t_delete < 1".into());
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { hide: self.t_hide, delete: self.t_delete }
    }

    /// Simulator settings with the seed replaced when one is given.
    pub fn sim(&self, seed: Option<u64>) -> Result<Option<SimConfig>> {
        let Some(path) = &self.sim_config else { return Ok(None) };
        let mut cfg = SimConfig::from_file(path)?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(Some(cfg))
    }
}

/// What to compute per cell besides the main and placebo estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub cells: Vec<CellKey>,
    pub bandwidth: Option<f64>,
    pub sweep: Vec<f64>,
    pub bins: usize,
    pub alpha: f64,
    /// Sweeps and binned tables are skipped when false.
    pub diagnostics: bool,
}

impl AnalysisOptions {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(AnalysisOptions {
            cells: select_cells(&config.cells)?,
            bandwidth: config.bandwidth,
            sweep: config.sweep.clone(),
            bins: config.bins,
            alpha: config.alpha,
            diagnostics: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthChoice {
    Override(f64),
    PlugIn(CellBandwidth),
}

impl BandwidthChoice {
    pub fn h(&self) -> f64 {
        match self {
            BandwidthChoice::Override(h) => *h,
            BandwidthChoice::PlugIn(c) => c.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: CellKey,
    pub n: Option<usize>,
    pub bandwidth: std::result::Result<BandwidthChoice, String>,
    pub main: std::result::Result<EstimateResult, String>,
    pub placebo: std::result::Result<EstimateResult, String>,
    pub sweep: Option<SweepResult>,
    pub binned: Vec<(BinVariable, BinnedTable)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCheck {
    pub cutoff: Cutoff,
    pub threshold: f64,
    pub result: std::result::Result<McCraryResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub cells: Vec<CellOutcome>,
    pub mccrary: Vec<DensityCheck>,
    pub alpha: f64,
}

fn describe(e: Error) -> String {
    format!("{}: {e}", e.kind())
}

type CohortKey = (Cutoff, ScenarioKind, Setup);

fn analyze_cell(
    cell: CellKey,
    units: &std::result::Result<Vec<ScenarioUnit>, String>,
    thresholds: Thresholds,
    opts: &AnalysisOptions,
) -> CellOutcome {
    let fail = |n: Option<usize>, msg: String| CellOutcome {
        cell,
        n,
        bandwidth: Err(msg.clone()),
        main: Err(msg.clone()),
        placebo: Err(msg),
        sweep: None,
        binned: Vec::new(),
    };
    let units = match units {
        Ok(u) => u,
        Err(msg) => return fail(None, msg.clone()),
    };
    let n = Some(units.len());
    let t = thresholds.value(cell.cutoff);
    let choice = match opts.bandwidth {
        Some(h) => Ok(BandwidthChoice::Override(h)),
        None => cell_bandwidth(units, t, cell.outcome).map(BandwidthChoice::PlugIn),
    };
    let choice = match choice {
        Ok(c) => c,
        Err(e) => return fail(n, describe(e)),
    };
    let kernel = match KernelSpec::new(t, choice.h()) {
        Ok(k) => k,
        Err(e) => return fail(n, describe(e)),
    };
    let follow = observations(units, cell.outcome, Period::FollowUp);
    let pre = observations(units, cell.outcome, Period::Pre);
    let main = estimate_observations(&follow, &kernel).map_err(describe);
    let placebo = estimate_observations(&pre, &kernel).map_err(describe);
    let (sweep, binned) = if opts.diagnostics {
        let sweep = sweep_observations(&follow, &kernel, &opts.sweep).ok();
        let binned = [BinVariable::Treatment, BinVariable::Outcome]
            .into_iter()
            .filter_map(|v| binned_means(&follow, &kernel, opts.bins, v).ok().map(|b| (v, b)))
            .collect();
        (sweep, binned)
    } else {
        (None, Vec::new())
    };
    CellOutcome { cell, n, bandwidth: Ok(choice), main, placebo, sweep, binned }
}

/// Density tests at both thresholds over every scored comment.
pub fn density_checks(dataset: &Dataset, thresholds: Thresholds) -> Vec<DensityCheck> {
    let scores: Vec<f64> = dataset.records().iter().filter(|r| !r.is_root_post).filter_map(|r| r.score).collect();
    [Cutoff::Delete, Cutoff::Hide]
        .into_iter()
        .map(|cutoff| {
            let threshold = thresholds.value(cutoff);
            DensityCheck { cutoff, threshold, result: mccrary_test(&scores, threshold).map_err(describe) }
        })
        .collect()
}

/// Runs every selected cell. Pure in its inputs; cells run in parallel and
/// results keep the cell order.
pub fn analyze(dataset: &Dataset, thresholds: Thresholds, opts: &AnalysisOptions) -> PipelineOutput {
    let mut keys: Vec<CohortKey> = opts.cells.iter().map(|c| (c.cutoff, c.scenario, c.setup)).collect();
    keys.sort();
    keys.dedup();
    let representative: BTreeMap<CohortKey, CellKey> =
        opts.cells.iter().map(|c| ((c.cutoff, c.scenario, c.setup), *c)).collect();
    let cohorts: BTreeMap<CohortKey, std::result::Result<Vec<ScenarioUnit>, String>> = keys
        .par_iter()
        .map(|k| {
            let spec = representative[k].cohort_spec(thresholds);
            (*k, build_cohort(dataset, &spec).map_err(describe))
        })
        .collect();
    let cells = opts
        .cells
        .par_iter()
        .map(|c| analyze_cell(*c, &cohorts[&(c.cutoff, c.scenario, c.setup)], thresholds, opts))
        .collect();
    PipelineOutput { cells, mccrary: density_checks(dataset, thresholds), alpha: opts.alpha }
}

impl PipelineOutput {
    pub fn table(&self, kind: TableKind) -> ReportTable {
        let rows = self
            .cells
            .iter()
            .map(|c| ReportRow {
                cell: c.cell,
                n: c.n,
                bandwidth_h: c.bandwidth.as_ref().ok().map(BandwidthChoice::h),
                result: match kind {
                    TableKind::Main => c.main.clone(),
                    TableKind::Placebo => c.placebo.clone(),
                },
            })
            .collect();
        ReportTable { kind, alpha: self.alpha, rows }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(dir, name)?))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes every artifact file of a run into `dir`.
pub fn write_artifacts(output: &PipelineOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    output.table(TableKind::Main).write_csv(create(dir, "report.csv")?)?;
    output.table(TableKind::Placebo).write_csv(create(dir, "placebo.csv")?)?;

    let mut w = csv_writer(dir, "mccrary.csv")?;
    w.write_record([
        "intervention",
        "threshold",
        "theta",
        "se",
        "p_value",
        "bin_size",
        "smoothing_bandwidth",
        "density_above",
        "density_below",
        "error",
    ])?;
    for d in &output.mccrary {
        let mut rec = vec![d.cutoff.to_string(), num(d.threshold)];
        match &d.result {
            Ok(m) => {
                rec.extend(
                    [m.theta, m.se, m.p_value, m.bin_size, m.smoothing_bandwidth, m.density_above, m.density_below]
                        .map(num),
                );
                rec.push(String::new());
            }
            Err(msg) => {
                rec.extend(std::iter::repeat_n(String::new(), 7));
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("mccrary.csv"), e))?;

    let mut w = csv_writer(dir, "bandwidths.csv")?;
    w.write_record([
        "cell",
        "bandwidth_h",
        "source",
        "outcome_h_star",
        "outcome_pilot_h",
        "density_at_cutoff",
        "cond_variance",
        "curvature_above",
        "curvature_below",
        "regularization",
        "treatment_h_star",
        "error",
    ])?;
    for c in &output.cells {
        let mut rec = vec![c.cell.to_string()];
        match &c.bandwidth {
            Ok(BandwidthChoice::Override(h)) => {
                rec.extend([num(*h), "override".into()]);
                rec.extend(std::iter::repeat_n(String::new(), 9));
            }
            Ok(BandwidthChoice::PlugIn(b)) => {
                let o = &b.outcome;
                rec.extend([num(b.h), "plug-in".into()]);
                rec.extend(
                    [o.h_star, o.pilot_h, o.density_at_cutoff, o.cond_variance, o.curvature_above, o.curvature_below, o.regularization]
                        .map(num),
                );
                rec.push(opt_num(b.treatment.as_ref().map(|t| t.h_star)));
                rec.push(String::new());
            }
            Err(msg) => {
                rec.extend(std::iter::repeat_n(String::new(), 10));
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("bandwidths.csv"), e))?;

    let mut w = csv_writer(dir, "sweep.csv")?;
    w.write_record([
        "cell",
        "multiplier",
        "bandwidth_h",
        "reference_h",
        "effect",
        "effect_lo",
        "effect_hi",
        "se",
        "standardized",
        "n_effective",
        "error",
    ])?;
    for c in &output.cells {
        let Some(sweep) = &c.sweep else { continue };
        for p in &sweep.points {
            let mut rec = vec![c.cell.to_string(), num(p.multiplier), num(p.bandwidth_h), num(sweep.reference_h)];
            match &p.estimate {
                Ok(e) => {
                    let (lo, hi) = interval(e.latec, e.ci95, e.se, output.alpha);
                    rec.extend([num(e.latec), num(lo), num(hi), num(e.se), num(e.standardized)]);
                    rec.extend([e.n_effective.to_string(), String::new()]);
                }
                Err(msg) => {
                    rec.extend(std::iter::repeat_n(String::new(), 6));
                    rec.push(msg.clone());
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join("sweep.csv"), e))?;

    for c in &output.cells {
        if c.binned.is_empty() {
            continue;
        }
        let name = format!("binned_{}.csv", c.cell.slug());
        let mut w = csv_writer(dir, &name)?;
        w.write_record(["row_type", "variable", "lo", "hi", "midpoint", "count", "mean", "se", "s", "side", "value"])?;
        for (variable, table) in &c.binned {
            let var = match variable {
                BinVariable::Treatment => "treatment",
                BinVariable::Outcome => "outcome",
            };
            for b in &table.bins {
                w.write_record([
                    "bin".into(),
                    var.into(),
                    num(b.lo),
                    num(b.hi),
                    num(b.midpoint),
                    b.count.to_string(),
                    opt_num(b.mean),
                    opt_num(b.se),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
            for f in &table.fit {
                let side = if f.above { "above" } else { "below" };
                w.write_record([
                    "fit", var, "", "", "", "", "", "", &num(f.s), side, &num(f.value),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join(&name), e))?;
    }
    Ok(())
}

/// Loaded input of a run.
pub struct Input {
    pub dataset: Dataset,
    pub thresholds: Thresholds,
    pub truth: Option<GroundTruth>,
}

pub fn load_input(config: &RunConfig, seed: Option<u64>) -> Result<Input> {
    if let Some(path) = &config.events {
        return Ok(Input { dataset: ingest(path)?, thresholds: config.thresholds(), truth: None });
    }
    let sim = config.sim(seed)?.ok_or_else(|| Error::InvalidConfig("no input configured".into()))?;
    let (dataset, truth) = generate(&sim)?;
    Ok(Input { dataset, thresholds: sim.thresholds(), truth: Some(truth) })
}

/// Full run: load or simulate, analyze, write artifacts.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let opts = AnalysisOptions::from_config(config)?;
    let input = load_input(config, config.seeds.first().copied())?;
    let output = analyze(&input.dataset, input.thresholds, &opts);
    write_artifacts(&output, &config.output_dir)?;
    if let Some(truth) = &input.truth {
        write_events_file(input.dataset.records(), config.output_dir.join("events.csv"))?;
        write_truth_file(truth, config.output_dir.join("truth.csv"))?;
    }
    Ok(output)
}

/// One row of a multi-seed calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub seed: u64,
    pub cell: CellKey,
    pub n: Option<usize>,
    pub main: std::result::Result<EstimateResult, String>,
    pub placebo: std::result::Result<EstimateResult, String>,
    /// Complier-average effect within the cell bandwidth, thread cells only.
    pub oracle: Option<f64>,
}

/// Simulates and analyzes once per seed; writes `replicate.csv`.
pub fn replicate(config: &RunConfig) -> Result<Vec<ReplicateRow>> {
    config.validate()?;
    if config.sim_config.is_none() {
        return Err(Error::InvalidConfig("replicate needs sim_config".into()));
    }
    if config.seeds.is_empty() {
        return Err(Error::InvalidConfig(format!("replicate needs a seed list (config `seeds` or {SEEDS_ENV})")));
    }
    let mut opts = AnalysisOptions::from_config(config)?;
    opts.diagnostics = false;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let input = load_input(config, Some(seed))?;
        let out = analyze(&input.dataset, input.thresholds, &opts);
        for c in out.cells {
            let oracle = match (&input.truth, &c.bandwidth, c.cell.scenario) {
                (Some(truth), Ok(b), ScenarioKind::Thread) => {
                    oracle_latec(truth, input.thresholds.value(c.cell.cutoff), b.h(), c.cell.outcome)
                        .ok()
                        .map(|o| o.0)
                }
                _ => None,
            };
            rows.push(ReplicateRow { seed, cell: c.cell, n: c.n, main: c.main, placebo: c.placebo, oracle });
        }
    }
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let mut w = csv_writer(&config.output_dir, "replicate.csv")?;
    w.write_record([
        "seed",
        "cell",
        "n",
        "effect",
        "effect_lo",
        "effect_hi",
        "itt",
        "itt_d",
        "first_stage_f",
        "placebo_effect",
        "placebo_lo",
        "placebo_hi",
        "oracle",
        "error",
    ])?;
    for r in &rows {
        let mut rec = vec![r.seed.to_string(), r.cell.to_string(), r.n.map(|n| n.to_string()).unwrap_or_default()];
        let mut errors = Vec::new();
        match &r.main {
            Ok(e) => rec.extend([e.latec, e.ci95.0, e.ci95.1, e.itt, e.itt_d, e.first_stage_f].map(num)),
            Err(m) => {
                rec.extend(std::iter::repeat_n(String::new(), 6));
                errors.push(m.clone());
            }
        }
        match &r.placebo {
            Ok(e) => rec.extend([e.latec, e.ci95.0, e.ci95.1].map(num)),
            Err(m) => {
                rec.extend(std::iter::repeat_n(String::new(), 3));
                errors.push(format!("placebo {m}"));
            }
        }
        rec.push(opt_num(r.oracle));
        rec.push(errors.join("; "));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(config.output_dir.join("replicate.csv"), e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::OutcomeKind;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1, 2,5..=7").unwrap(), vec![1, 2, 5, 6, 7]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_err());
        c.sim_config = Some(PathBuf::from("/definitely/missing.toml"));
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml_str("cells = [\"delete\"]\nalpha = 0.1\n").unwrap();
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.sweep, DEFAULT_SWEEP.to_vec());
        assert!(RunConfig::from_toml_str("unknown = 1").is_err());
    }

    #[test]
    fn outcome_kind_follows_cell() {
        let cell: CellKey = "hide:thread:interventions:gt20-other".parse().unwrap();
        assert_eq!(cell.outcome, OutcomeKind::Interventions);
    }
}
