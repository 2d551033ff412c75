use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand};

use moderd::bandwidth::bandwidth_for_cell;
use moderd::cohort::{Period, build_cohort, read_cohort, write_cohort};
use moderd::design::{Cutoff, OutcomeKind};
use moderd::estimate::{KernelSpec, estimate_observations, observations};
use moderd::pipeline::{
    AnalysisOptions, PipelineOutput, RunConfig, SEEDS_ENV, analyze, load_input, parse_seeds, replicate,
    run_pipeline, write_artifacts,
};
use moderd::report::{TableKind, format_effect, format_standardized, select_cells};
use moderd::sim::{SimConfig, generate, write_truth_file};

/// Simulate score-threshold moderation logs and estimate intervention effects
/// with fuzzy regression discontinuity.
#[derive(Parser)]
#[command(name = "moderd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an event log and its ground truth.
    Simulate(SimulateArgs),
    /// Export the analysis units of the selected cells.
    Cohorts(RunArgs),
    /// Estimate one effect from an exported cohort.
    Estimate(EstimateArgs),
    /// Density tests, placebo estimates, bandwidth sweeps and binned means.
    Diagnose(RunArgs),
    /// Full run with the main and placebo tables.
    Report(RunArgs),
    /// Simulate and analyze once per seed.
    Replicate(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulator settings (TOML); defaults when omitted.
    #[arg(long)]
    sim_config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_posts: Option<u32>,
    #[arg(long)]
    n_users: Option<u32>,
}

/// Run settings. Each flag overrides the same-named key of `--config`.
#[derive(Args)]
struct RunArgs {
    /// Run settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    sim_config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Cell patterns such as `delete:thread:*:le20-all`.
    #[arg(long, value_delimiter = ',')]
    cells: Option<Vec<String>>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    /// Seed list such as `1,2,10..=20`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    t_hide: Option<f64>,
    #[arg(long)]
    t_delete: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if self.events.is_some() || self.sim_config.is_some() {
            c.events = self.events.clone();
            c.sim_config = self.sim_config.clone();
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = &self.cells {
            c.cells = v.clone();
        }
        if self.bandwidth.is_some() {
            c.bandwidth = self.bandwidth;
        }
        if let Some(v) = &self.sweep {
            c.sweep = v.clone();
        }
        if let Ok(v) = std::env::var(SEEDS_ENV) {
            c.seeds = parse_seeds(&v).with_context(|| format!("reading {SEEDS_ENV}"))?;
        }
        if let Some(v) = &self.seeds {
            c.seeds = parse_seeds(v)?;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.bins {
            c.bins = v;
        }
        if let Some(v) = self.t_hide {
            c.t_hide = v;
        }
        if let Some(v) = self.t_delete {
            c.t_delete = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Cohort file written by `cohorts`.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    cutoff: Cutoff,
    #[arg(long)]
    outcome: OutcomeKind,
    /// Threshold value; defaults to the standard one of `--cutoff`.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Estimate on pre-assignment outcomes.
    #[arg(long)]
    placebo: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = match &args.sim_config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_posts {
        cfg.n_posts = v;
    }
    if let Some(v) = args.n_users {
        cfg.n_users = v;
    }
    cfg.validate()?;
    let (dataset, truth) = generate(&cfg)?;
    let dir = &args.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    moderd::data::write_events_file(dataset.records(), dir.join("events.csv"))?;
    write_truth_file(&truth, dir.join("truth.csv"))?;
    fs::write(dir.join("sim.toml"), cfg.to_toml_string())?;
    println!(
        "wrote {} records over {} threads and {} truth units to {}",
        dataset.len(),
        dataset.thread_count(),
        truth.units.len(),
        dir.display()
    );
    Ok(())
}

fn cohorts(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    let input = load_input(&config, config.seeds.first().copied())?;
    fs::create_dir_all(&config.output_dir)?;
    let mut seen = BTreeSet::new();
    for cell in select_cells(&config.cells)? {
        let name = format!("cohort_{}_{}_{}.csv", cell.cutoff, cell.scenario.as_str(), cell.setup);
        if !seen.insert(name.clone()) {
            continue;
        }
        match build_cohort(&input.dataset, &cell.cohort_spec(input.thresholds)) {
            Ok(units) => {
                let path = config.output_dir.join(&name);
                write_cohort(&units, BufWriter::new(File::create(&path)?))?;
                println!("{name}: {} units", units.len());
            }
            Err(e) => println!("{name}: skipped ({}: {e})", e.kind()),
        }
    }
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let units = read_cohort(File::open(&args.cohort).with_context(|| args.cohort.display().to_string())?)?;
    let threshold = args.threshold.unwrap_or_else(|| moderd::design::Thresholds::default().value(args.cutoff));
    let h = match args.bandwidth {
        Some(h) => h,
        None => bandwidth_for_cell(&units, threshold, args.outcome)?,
    };
    let kernel = KernelSpec::new(threshold, h)?;
    let period = if args.placebo { Period::Pre } else { Period::FollowUp };
    let mut out = io::stdout().lock();
    writeln!(out, "n,n_effective,bandwidth_h,effect,effect_lo,effect_hi,se,standardized,itt,itt_d,first_stage_f,effect_text,standardized_text")?;
    match estimate_observations(&observations(&units, args.outcome, period), &kernel) {
        Ok(e) => writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},\"{}\",\"{}\"",
            units.len(),
            e.n_effective,
            e.bandwidth_h,
            e.latec,
            e.ci95.0,
            e.ci95.1,
            e.se,
            e.standardized,
            e.itt,
            e.itt_d,
            e.first_stage_f,
            format_effect(&e, args.alpha),
            format_standardized(&e, args.alpha)
        )?,
        Err(e) => eprintln!("estimation failed: {}: {e}", e.kind()),
    }
    Ok(())
}

fn print_density(output: &PipelineOutput) {
    for d in &output.mccrary {
        match &d.result {
            Ok(m) => println!(
                "density test at {} ({}): theta {:.4}, se {:.4}, p {:.4}",
                d.cutoff, d.threshold, m.theta, m.se, m.p_value
            ),
            Err(msg) => println!("density test at {} ({}): {msg}", d.cutoff, d.threshold),
        }
    }
}

fn diagnose(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    let opts = AnalysisOptions::from_config(&config)?;
    let input = load_input(&config, config.seeds.first().copied())?;
    let output = analyze(&input.dataset, input.thresholds, &opts);
    write_artifacts(&output, &config.output_dir)?;
    print_density(&output);
    println!();
    print!("{}", output.table(TableKind::Placebo).render_text());
    Ok(())
}

fn report(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    let output = run_pipeline(&config)?;
    print!("{}", output.table(TableKind::Main).render_text());
    println!();
    print!("{}", output.table(TableKind::Placebo).render_text());
    println!();
    print_density(&output);
    Ok(())
}

fn replicate_cmd(args: &RunArgs) -> Result<()> {
    let config = args.resolve()?;
    if config.seeds.is_empty() {
        bail!("replicate needs a seed list (--seeds, config `seeds` or {SEEDS_ENV})");
    }
    let rows = replicate(&config)?;
    println!("{:<42} {:>6} {:>12} {:>10} {:>10}", "cell", "runs", "mean effect", "covers", "placebo*");
    for cell in select_cells(&config.cells)? {
        let mine: Vec<_> = rows.iter().filter(|r| r.cell == cell).collect();
        let ok: Vec<_> = mine.iter().filter_map(|r| r.main.as_ref().ok().map(|e| (e, r.oracle))).collect();
        let mean = if ok.is_empty() {
            "-".to_string()
        } else {
            format!("{:.4}", ok.iter().map(|(e, _)| e.latec).sum::<f64>() / ok.len() as f64)
        };
        let with_oracle: Vec<_> = ok.iter().filter_map(|(e, o)| o.map(|o| (e, o))).collect();
        let covers = if with_oracle.is_empty() {
            "-".to_string()
        } else {
            let hits = with_oracle.iter().filter(|(e, o)| e.ci95.0 <= *o && *o <= e.ci95.1).count();
            format!("{hits}/{}", with_oracle.len())
        };
        let placebo: Vec<_> = mine.iter().filter_map(|r| r.placebo.as_ref().ok()).collect();
        let rejects = placebo.iter().filter(|e| format_effect(e, config.alpha).significant).count();
        println!(
            "{:<42} {:>6} {:>12} {:>10} {:>10}",
            cell.to_string(),
            ok.len(),
            mean,
            covers,
            format!("{rejects}/{}", placebo.len())
        );
    }
    println!("wrote {}", config.output_dir.join("replicate.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Cohorts(a) => cohorts(a),
        Command::Estimate(a) => estimate(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Report(a) => report(a),
        Command::Replicate(a) => replicate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
