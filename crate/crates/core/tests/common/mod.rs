#![allow(dead_code)]

use std::path::PathBuf;

use moderd::cohort::{AuthorScope, CohortSpec, Scenario, ScenarioUnit, ThreadSize, build_cohort};
use moderd::data::Dataset;
use moderd::design::{Cutoff, Thresholds};
use moderd::sim::{Compliance, GroundTruth, SimConfig, generate};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_moderd"))
}

/// Delete-threshold world with the given compliance and comment effect.
pub fn delete_world(seed: u64, n_posts: u32, f0: f64, f1: f64, tau: f64) -> SimConfig {
    let mut c = SimConfig { seed, n_posts, tau_delete_comments: tau, tau_hide_comments: 0.0, ..SimConfig::default() };
    c.compliance.delete = Compliance { f0, f1 };
    c
}

pub fn simulate(config: &SimConfig) -> (Dataset, GroundTruth) {
    generate(config).expect("simulation runs")
}

/// Every thread whose first in-window comment belongs to `cutoff`.
pub fn thread_units(dataset: &Dataset, thresholds: Thresholds, cutoff: Cutoff) -> Vec<ScenarioUnit> {
    let spec = CohortSpec {
        cutoff,
        thresholds,
        scenario: Scenario::Thread { size: ThreadSize::Any, authors: AuthorScope::All },
    };
    build_cohort(dataset, &spec).expect("cohort builds")
}

pub fn covers(ci: (f64, f64), value: f64) -> bool {
    ci.0 <= value && value <= ci.1
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
