mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{bin, configs_dir};

fn moderd(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).env_remove("MODERD_SEEDS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn small_sim() -> String {
    configs_dir().join("sim_small.toml").display().to_string()
}

fn seeds_in(path: &Path) -> Vec<u64> {
    let mut seeds: Vec<u64> = csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    seeds.dedup();
    seeds
}

#[test]
fn simulate_writes_events_truth_and_settings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = moderd(&["simulate", "--sim-config", &small_sim(), "--seed", "3", "--n-posts", "500", "--output-dir", out], &[]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["events.csv", "truth.csv", "sim.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let settings = fs::read_to_string(dir.path().join("sim.toml")).unwrap();
    assert!(settings.contains("seed = 3") && settings.contains("n_posts = 500"));
}

#[test]
fn cohorts_then_estimate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = moderd(&["cohorts", "--sim-config", &small_sim(), "--cells", "delete:thread:comments:le20-all", "--output-dir", out], &[]);
    assert!(o.status.success(), "{}", text(&o));
    let cohort = dir.path().join("cohort_delete_thread_le20-all.csv");
    assert!(cohort.exists(), "{}", text(&o));
    let o = moderd(
        &["estimate", "--cohort", cohort.to_str().unwrap(), "--cutoff", "delete", "--outcome", "comments", "--bandwidth", "0.05"],
        &[],
    );
    assert!(o.status.success(), "{}", text(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let mut lines = stdout.lines();
    assert!(lines.next().unwrap().starts_with("n,n_effective,bandwidth_h,effect"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn bad_input_exits_with_two() {
    let o = moderd(&["report", "--sim-config", "/definitely/missing.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("does not exist"));
    let o = moderd(&["report"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = moderd(&["report", "--sim-config", &small_sim(), "--alpha", "1.5"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = moderd(&["report", "--sim-config", &small_sim(), "--cells", "nonsense:cell"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = moderd(&["report", "-x"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_before_validation() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, format!("sim_config = {:?}\nbins = 3\ncells = [\"hide:thread:comments\"]\n", small_sim())).unwrap();
    let out = dir.path().join("out");
    let args = ["diagnose", "--config", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    assert_eq!(moderd(&args, &[]).status.code(), Some(2));
    let mut fixed = args.to_vec();
    fixed.extend(["--bins", "10"]);
    let o = moderd(&fixed, &[]);
    assert!(o.status.success(), "{}", text(&o));
    let binned = fs::read_to_string(out.join("binned_hide_thread_comments_le20-all.csv")).unwrap();
    assert!(binned.lines().count() > 10);
}

#[test]
fn seed_flag_beats_environment_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!("sim_config = {:?}\nseeds = [1]\ncells = [\"delete:thread:comments:le20-all\"]\n", small_sim()),
    )
    .unwrap();
    let out = dir.path().join("out");
    let base = ["replicate", "--config", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    let csv = out.join("replicate.csv");

    assert!(moderd(&base, &[]).status.success());
    assert_eq!(seeds_in(&csv), vec![1]);

    assert!(moderd(&base, &[("MODERD_SEEDS", "4..=5")]).status.success());
    assert_eq!(seeds_in(&csv), vec![4, 5]);

    let mut with_flag = base.to_vec();
    with_flag.extend(["--seeds", "2"]);
    assert!(moderd(&with_flag, &[("MODERD_SEEDS", "4..=5")]).status.success());
    assert_eq!(seeds_in(&csv), vec![2]);
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(configs_dir().join("sim_small.toml"), dir.path().join("world.toml")).unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "sim_config = \"world.toml\"\ncells = [\"delete:user-first:comments:k7\"]\n").unwrap();
    let out = dir.path().join("out");
    let o = moderd(&["report", "--config", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("report.csv").exists());
}
