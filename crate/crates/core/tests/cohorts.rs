mod common;

use std::collections::HashMap;

use moderd::cohort::{CohortSpec, OffenderClass, Scenario, build_cohort};
use moderd::data::{CommentRecord, Dataset, Intervention};
use moderd::design::{Cutoff, Thresholds};
use moderd::report::{ScenarioKind, all_cells};
use moderd::sim::SimConfig;

use common::*;

fn small_world(seed: u64) -> SimConfig {
    SimConfig { seed, n_posts: 3_000, n_users: 1_500, ..SimConfig::default() }
}

fn window(t: &Thresholds, r: &CommentRecord) -> Option<Cutoff> {
    if r.is_root_post { None } else { r.score.and_then(|s| t.window_of(s)) }
}

fn by_time(data: &Dataset) -> Vec<CommentRecord> {
    let mut v = data.records().to_vec();
    v.sort_by_key(|r| (r.timestamp, r.comment_id));
    v
}

fn moderated(r: &CommentRecord) -> u64 {
    u64::from(r.intervention != Intervention::None)
}

/// (unit, c0, pre comments, pre interventions, follow-up comments, follow-up interventions)
type Row = (u64, u64, u64, u64, u64, u64);

fn naive_threads(data: &Dataset, t: &Thresholds, cutoff: Cutoff, over20: bool, other: bool) -> Vec<Row> {
    let mut by_post: HashMap<u64, Vec<CommentRecord>> = HashMap::new();
    for r in by_time(data) {
        if !r.is_root_post {
            by_post.entry(r.post_id).or_default().push(r);
        }
    }
    let mut rows = Vec::new();
    for (post, comments) in by_post {
        let Some(pos) = comments.iter().position(|r| window(t, r).is_some()) else { continue };
        if window(t, &comments[pos]) != Some(cutoff) || (pos > 20) != over20 {
            continue;
        }
        let c0 = &comments[pos];
        let keep = |r: &&CommentRecord| !other || r.author_id != c0.author_id;
        let pre: Vec<_> = comments[..pos].iter().filter(keep).collect();
        let fu: Vec<_> = comments[pos + 1..].iter().filter(keep).collect();
        rows.push((
            post,
            c0.comment_id,
            pre.len() as u64,
            pre.iter().map(|r| moderated(r)).sum(),
            fu.len() as u64,
            fu.iter().map(|r| moderated(r)).sum(),
        ));
    }
    rows.sort();
    rows
}

fn built(data: &Dataset, spec: &CohortSpec) -> Vec<Row> {
    let mut rows: Vec<Row> = build_cohort(data, spec)
        .map(|units| {
            units
                .iter()
                .map(|u| {
                    (
                        u.unit_id,
                        u.c0_comment_id,
                        u.y_pre_comments,
                        u.y_pre_interventions,
                        u.y_followup_comments,
                        u.y_followup_interventions,
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    rows.sort();
    rows
}

#[test]
fn thread_cohorts_match_a_direct_scan() {
    let cfg = small_world(3);
    let (data, _) = simulate(&cfg);
    let t = cfg.thresholds();
    for cell in all_cells().into_iter().filter(|c| c.scenario == ScenarioKind::Thread) {
        let spec = cell.cohort_spec(t);
        let Scenario::Thread { size, authors } = spec.scenario else { unreachable!() };
        let over20 = size == moderd::cohort::ThreadSize::Over20;
        let other = authors == moderd::cohort::AuthorScope::Other;
        assert_eq!(built(&data, &spec), naive_threads(&data, &t, cell.cutoff, over20, other), "{cell}");
    }
}

#[test]
fn user_cohort_matches_a_direct_recount() {
    let cfg = small_world(4);
    let (data, _) = simulate(&cfg);
    let t = cfg.thresholds();
    let end = data.max_timestamp().unwrap();
    let day = 86_400;
    let mut by_user: HashMap<u64, Vec<CommentRecord>> = HashMap::new();
    for r in by_time(&data) {
        by_user.entry(r.author_id).or_default().push(r);
    }
    for class in [OffenderClass::FirstTime, OffenderClass::Repeat] {
        let mut expected = Vec::new();
        for (user, items) in &by_user {
            let Some(pos) = items.iter().position(|r| window(&t, r).is_some()) else { continue };
            let c0 = &items[pos];
            if window(&t, c0) != Some(Cutoff::Delete) || c0.timestamp + 7 * day > end {
                continue;
            }
            let repeat = c0.author_prior_offense;
            if repeat != (class == OffenderClass::Repeat) {
                continue;
            }
            let suspended = |ts: u64| repeat && ts <= c0.timestamp + 24 * 3600;
            let fu: Vec<_> = items[pos + 1..]
                .iter()
                .filter(|r| r.timestamp <= c0.timestamp + 7 * day && !suspended(r.timestamp))
                .collect();
            let pre: Vec<_> = items[..pos].iter().filter(|r| r.timestamp + 7 * day >= c0.timestamp).collect();
            expected.push((
                *user,
                c0.comment_id,
                pre.len() as u64,
                pre.iter().map(|r| moderated(r)).sum(),
                fu.len() as u64,
                fu.iter().map(|r| moderated(r)).sum(),
            ));
        }
        expected.sort();
        let spec = CohortSpec { cutoff: Cutoff::Delete, thresholds: t, scenario: Scenario::User { k_days: 7, offender: Some(class) } };
        assert!(!expected.is_empty());
        assert_eq!(built(&data, &spec), expected, "{class:?}");
    }
}

#[test]
fn treated_threads_realize_their_treated_outcome() {
    let cfg = small_world(5);
    let (data, truth) = simulate(&cfg);
    let units = thread_units(&data, cfg.thresholds(), Cutoff::Delete);
    let by_c0: HashMap<u64, _> = truth.units.iter().map(|u| (u.c0_comment_id, u)).collect();
    let mut checked = 0;
    for u in &units {
        let tu = by_c0[&u.c0_comment_id];
        assert_eq!(tu.cutoff, Cutoff::Delete);
        assert_eq!(tu.running_s, u.running_s);
        assert_eq!(tu.treated, u.treated);
        if u.treated {
            assert_eq!(tu.y_treated.comments, u.y_followup_comments);
            assert_eq!(tu.y_treated.interventions, u.y_followup_interventions);
            checked += 1;
        }
    }
    assert!(checked > 50);
}
