//! Synthetic moderation logs with known treatment effects.
//!
//! Each thread is generated from its own random stream. Comments arrive until
//! the first one scoring inside a cutoff window (the focal comment); its
//! intervention is drawn from the step compliance model, and the replies that
//! follow are simulated under every intervention the focal comment could have
//! received with the same random numbers, which yields its potential outcomes.
//! Authors are assigned afterwards in one time-ordered pass that tracks prior
//! deletions and 24-hour suspensions.

mod config;
mod truth;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, Normal, Poisson, weighted::WeightedAliasIndex};
use rayon::prelude::*;

pub use config::{BetaComponent, Compliance, ComplianceLevels, ScoreSampler, SimConfig};
pub use truth::{
    GroundTruth, ORACLE_MIN_UNITS, Outcomes, TruthUnit, oracle_latec, read_truth, write_truth,
    write_truth_file,
};

use crate::data::{CommentRecord, Dataset, Intervention};
use crate::design::{Cutoff, Thresholds};
use crate::error::Result;
use crate::rng::{Domain, stream};

/// Draws an intervention for a comment with `score` from two uniforms.
///
/// Deletion is decided first by `draws.0` against the delete compliance level
/// on the comment's side of `t_delete`; otherwise `draws.1` decides hiding
/// against the hide level on its side of `t_hide`.
pub fn intervene(score: f64, config: &SimConfig, draws: (f64, f64)) -> Intervention {
    let c = &config.compliance;
    let p_delete = if score >= config.t_delete { c.delete.f1 } else { c.delete.f0 };
    if draws.0 < p_delete {
        return Intervention::Delete;
    }
    let p_hide = if score >= config.t_hide { c.hide.f1 } else { c.hide.f0 };
    if draws.1 < p_hide {
        Intervention::Hide
    } else {
        Intervention::None
    }
}

/// Generates a dataset and its ground truth. Pure in `config`.
pub fn generate(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let sampler = ScoreSampler::new(&config.score_dist)?;
    let model = ThreadModel::new(config, &sampler)?;

    let drafts: Vec<ThreadDraft> = (0..u64::from(config.n_posts))
        .into_par_iter()
        .map(|p| model.thread(p))
        .collect();

    let mut records = Vec::with_capacity(drafts.iter().map(|d| d.comments.len() + 1).sum());
    let mut thread_of = Vec::with_capacity(records.capacity());
    let mut truth = Vec::new();
    let mut next_id: u64 = 1;
    let start = config.start_timestamp;
    for (p, draft) in drafts.iter().enumerate() {
        let post_id = next_id;
        next_id += 1;
        let t_root = start + draft.root_offset;
        records.push(CommentRecord {
            comment_id: post_id,
            post_id,
            author_id: 0,
            timestamp: t_root,
            is_root_post: true,
            score: None,
            intervention: Intervention::None,
            author_prior_offense: false,
        });
        thread_of.push((p, Role::Root));
        let mut c0_id = None;
        for (j, c) in draft.comments.iter().enumerate() {
            let id = next_id;
            next_id += 1;
            let role = match draft.focal.as_ref() {
                Some(f) if j == f.index => {
                    c0_id = Some(id);
                    Role::Focal
                }
                _ if c.self_reply => Role::SelfReply,
                _ => Role::Other,
            };
            records.push(CommentRecord {
                comment_id: id,
                post_id,
                author_id: 0,
                timestamp: t_root + c.offset,
                is_root_post: false,
                score: Some(c.score),
                intervention: c.intervention,
                author_prior_offense: false,
            });
            thread_of.push((p, role));
        }
        if let (Some(f), Some(c0)) = (draft.focal.as_ref(), c0_id) {
            truth.push(TruthUnit {
                post_id,
                c0_comment_id: c0,
                running_s: draft.comments[f.index].score,
                cutoff: f.cutoff,
                threshold: config.thresholds().value(f.cutoff),
                complier: f.complier,
                treated: draft.comments[f.index].intervention == f.cutoff.focal(),
                y_treated: f.y_treated,
                y_untreated: f.y_untreated,
            });
        }
    }

    assign_authors(config, &mut records, &thread_of, drafts.len())?;
    let dataset = Dataset::from_records(records, format!("simulated (seed {})", config.seed));
    Ok((dataset, GroundTruth { units: truth }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Root,
    Focal,
    SelfReply,
    Other,
}

/// Time-ordered pass assigning authors, repeat-offender flags and suspensions.
fn assign_authors(
    config: &SimConfig,
    records: &mut [CommentRecord],
    roles: &[(usize, Role)],
    n_threads: usize,
) -> Result<()> {
    let n_users = config.n_users as usize;
    let activity = Gamma::new(config.activity_shape, 1.0 / config.activity_shape)
        .map_err(|e| crate::Error::InvalidConfig(e.to_string()))?;
    let weights: Vec<f64> = (0..n_users as u64)
        .map(|u| activity.sample(&mut stream(config.seed, Domain::Users, u)).max(1e-9))
        .collect();
    let picker =
        WeightedAliasIndex::new(weights).map_err(|e| crate::Error::InvalidConfig(e.to_string()))?;
    let mut rng = stream(config.seed, Domain::Authors, 0);

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].order_key());

    let suspension = u64::from(config.suspension_hours) * 3600;
    let mut deletions = vec![0u32; n_users];
    let mut suspended_until = vec![0u64; n_users];
    let mut focal_author: Vec<Option<usize>> = vec![None; n_threads];

    for i in order {
        let ts = records[i].timestamp;
        let (thread, role) = roles[i];
        let preferred = match role {
            Role::SelfReply => focal_author[thread],
            _ => None,
        };
        let mut user = preferred.unwrap_or_else(|| picker.sample(&mut rng));
        let mut attempts = 0;
        while suspended_until[user] > ts && attempts < 1000 {
            user = picker.sample(&mut rng);
            attempts += 1;
        }
        if role == Role::Focal {
            focal_author[thread] = Some(user);
        }
        let r = &mut records[i];
        r.author_id = user as u64 + 1;
        r.author_prior_offense = deletions[user] > 0;
        if r.intervention == Intervention::Delete {
            if r.author_prior_offense {
                suspended_until[user] = ts + suspension;
            }
            deletions[user] += 1;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct DraftComment {
    offset: u64,
    score: f64,
    intervention: Intervention,
    self_reply: bool,
}

#[derive(Debug, Clone)]
struct FocalDraft {
    index: usize,
    cutoff: Cutoff,
    complier: bool,
    y_treated: Outcomes,
    y_untreated: Outcomes,
}

#[derive(Debug, Clone)]
struct ThreadDraft {
    root_offset: u64,
    comments: Vec<DraftComment>,
    focal: Option<FocalDraft>,
}

/// Random numbers of one reply slot, shared by every counterfactual world.
#[derive(Debug, Clone, Copy)]
struct Slot {
    u_rule_breaking: f64,
    rule_breaking_score: f64,
    base_score: f64,
    u_delete: f64,
    u_hide: f64,
    u_replace: f64,
    gap: u64,
    self_reply: bool,
}

/// Per-unit integer shifts applied when the focal comment receives an action.
#[derive(Debug, Clone, Copy, Default)]
struct Shift {
    comments: i64,
    interventions: i64,
}

struct ThreadModel<'a> {
    config: &'a SimConfig,
    sampler: &'a ScoreSampler,
    thresholds: Thresholds,
    activity: Gamma<f64>,
    gap: Exp<f64>,
    tau_noise: Normal<f64>,
    rule_breaking: Beta<f64>,
    posting_secs: f64,
    /// Offset after which no comment is written.
    horizon_secs: u64,
}

impl<'a> ThreadModel<'a> {
    fn new(config: &'a SimConfig, sampler: &'a ScoreSampler) -> Result<Self> {
        let err = |e: String| crate::Error::InvalidConfig(e);
        let volume = config.thread_volume().max(1e-9);
        Ok(ThreadModel {
            config,
            sampler,
            thresholds: config.thresholds(),
            activity: Gamma::new(config.thread_shape, volume / config.thread_shape)
                .map_err(|e| err(e.to_string()))?,
            gap: Exp::new(1.0 / (config.mean_gap_minutes * 60.0).max(1e-9))
                .map_err(|e| err(e.to_string()))?,
            tau_noise: Normal::new(0.0, config.tau_sd).map_err(|e| err(e.to_string()))?,
            rule_breaking: Beta::new(6.0, 2.0).map_err(|e| err(e.to_string()))?,
            posting_secs: f64::from(config.study_days) * 86_400.0,
            horizon_secs: u64::from(config.study_days + config.followup_days) * 86_400,
        })
    }

    fn slot(&self, rng: &mut ChaCha8Rng) -> Slot {
        Slot {
            u_rule_breaking: rng.random(),
            rule_breaking_score: self.rule_breaking.sample(rng),
            base_score: self.sampler.sample(rng),
            u_delete: rng.random(),
            u_hide: rng.random(),
            u_replace: rng.random(),
            gap: self.gap.sample(rng) as u64,
            self_reply: rng.random::<f64>() < self.config.self_reply_prob,
        }
    }

    /// Rule-breaking probability given the visible rule-breaking mass so far.
    fn rule_breaking_rate(&self, visible: f64) -> f64 {
        (self.config.contagion * visible).min(0.9)
    }

    fn visibility(score: f64, t_hide: f64, action: Intervention) -> f64 {
        if score < t_hide {
            return 0.0;
        }
        match action {
            Intervention::None => 1.0,
            Intervention::Hide => 0.5,
            Intervention::Delete => 0.0,
        }
    }

    fn thread(&self, post: u64) -> ThreadDraft {
        let cfg = self.config;
        let mut rng = stream(cfg.seed, Domain::Thread, post);
        let root_offset = (rng.random::<f64>() * self.posting_secs) as u64;
        let lambda = self.activity.sample(&mut rng);
        let pre_cap = poisson(lambda, &mut rng);
        let delete_shift = Shift {
            comments: self.unit_shift(cfg.tau_delete_comments, &mut rng),
            interventions: self.unit_shift(cfg.tau_delete_interventions, &mut rng),
        };
        let hide_shift = Shift {
            comments: self.unit_shift(cfg.tau_hide_comments, &mut rng),
            interventions: self.unit_shift(cfg.tau_hide_interventions, &mut rng),
        };

        let mut comments = Vec::new();
        let mut offset = 0u64;
        let mut visible = 0.0;
        let mut focal = None;
        for _ in 0..pre_cap {
            let slot = self.slot(&mut rng);
            offset += slot.gap;
            if root_offset + offset > self.horizon_secs {
                break;
            }
            let score = self.slot_score(&slot, visible);
            let action = intervene(score, cfg, (slot.u_delete, slot.u_hide));
            visible += Self::visibility(score, cfg.t_hide, action);
            comments.push(DraftComment {
                offset,
                score,
                intervention: action,
                self_reply: false,
            });
            if let Some(cutoff) = self.thresholds.window_of(score) {
                focal = Some((comments.len() - 1, cutoff, (slot.u_delete, slot.u_hide)));
                break;
            }
        }
        let Some((index, cutoff, u0)) = focal else {
            return ThreadDraft {
                root_offset,
                comments,
                focal: None,
            };
        };

        let c0 = comments[index].clone();
        let t = self.thresholds.value(cutoff);
        let above = intervene(t, cfg, u0);
        let below = intervene(t.next_down(), cfg, u0);
        let focal_action = cutoff.focal();
        let complier = above == focal_action && below != focal_action;
        let visible_before = visible - Self::visibility(c0.score, cfg.t_hide, c0.intervention);

        let mean = lambda * (cfg.score_slope * (c0.score - t)).exp();
        let base = u64::from(cfg.min_followup) + poisson(mean, &mut rng);
        let shift_for = |a: Intervention| match a {
            Intervention::Delete => delete_shift,
            Intervention::Hide => hide_shift,
            Intervention::None => Shift::default(),
        };
        let wanted = |a: Intervention| (base as i64 + shift_for(a).comments).max(0) as usize;
        let n_slots = [c0.intervention, above, below]
            .into_iter()
            .map(wanted)
            .max()
            .unwrap_or(0);
        let slots: Vec<Slot> = (0..n_slots).map(|_| self.slot(&mut rng)).collect();
        let mut clock = root_offset + c0.offset;
        let in_time = slots
            .iter()
            .take_while(|s| {
                clock += s.gap;
                clock <= self.horizon_secs
            })
            .count();
        let len_for = |a: Intervention| wanted(a).min(in_time);

        let world = |a: Intervention| {
            let v = visible_before + Self::visibility(c0.score, cfg.t_hide, a);
            self.replies(&slots[..len_for(a)], v, shift_for(a).interventions)
        };
        let realized = world(c0.intervention);
        let y_treated = if above == c0.intervention {
            outcomes_of(&realized)
        } else {
            outcomes_of(&world(above))
        };
        let y_untreated = if below == c0.intervention {
            outcomes_of(&realized)
        } else {
            outcomes_of(&world(below))
        };

        let mut offset = c0.offset;
        for (slot, (score, action)) in slots.iter().zip(realized) {
            offset += slot.gap;
            comments.push(DraftComment {
                offset,
                score,
                intervention: action,
                self_reply: slot.self_reply,
            });
        }
        ThreadDraft {
            root_offset,
            comments,
            focal: Some(FocalDraft {
                index,
                cutoff,
                complier,
                y_treated,
                y_untreated,
            }),
        }
    }

    fn slot_score(&self, slot: &Slot, visible: f64) -> f64 {
        if slot.u_rule_breaking < self.rule_breaking_rate(visible) {
            slot.rule_breaking_score
        } else {
            slot.base_score
        }
    }

    /// Integer effect of one unit: Normal draw around `tau`, stochastically
    /// rounded so the expected shift equals the draw.
    fn unit_shift(&self, tau: f64, rng: &mut ChaCha8Rng) -> i64 {
        let z = self.tau_noise.sample(rng);
        let u: f64 = rng.random();
        let value = tau + z;
        let floor = value.floor();
        floor as i64 + i64::from(u < value - floor)
    }

    /// Simulates replies in one world. `intervention_shift` converts that many
    /// replies into (positive) or out of (negative) moderated comments, in order.
    fn replies(&self, slots: &[Slot], mut visible: f64, intervention_shift: i64) -> Vec<(f64, Intervention)> {
        let cfg = self.config;
        let mut to_add = intervention_shift.max(0);
        let mut to_remove = (-intervention_shift).max(0);
        let clean_top = (cfg.t_hide - 0.05).max(0.0);
        let (mod_lo, mod_hi) = (cfg.t_hide + 0.05, cfg.t_delete - 0.05);
        slots
            .iter()
            .map(|slot| {
                let mut score = self.slot_score(slot, visible);
                let mut action = intervene(score, cfg, (slot.u_delete, slot.u_hide));
                if to_remove > 0 && action.is_intervened() {
                    score = smooth_between(0.0, clean_top, slot.u_replace);
                    action = Intervention::None;
                    to_remove -= 1;
                } else if to_add > 0 && !action.is_intervened() {
                    if mod_hi > mod_lo {
                        score = smooth_between(mod_lo, mod_hi, slot.u_replace);
                        action = Intervention::Hide;
                    } else {
                        let lo = (cfg.t_delete + 0.05).min(1.0);
                        score = smooth_between(lo, 1.0, slot.u_replace);
                        action = Intervention::Delete;
                    }
                    to_add -= 1;
                }
                visible += Self::visibility(score, cfg.t_hide, action);
                (score, action)
            })
            .collect()
    }
}

/// Maps a uniform onto `[lo, hi]` with density `6x(1 - x)`, which vanishes at
/// both ends so replaced scores add no density jump.
fn smooth_between(lo: f64, hi: f64, u: f64) -> f64 {
    let x = 0.5 - ((1.0 - 2.0 * u).asin() / 3.0).sin();
    lo + (hi - lo) * x
}

fn outcomes_of(replies: &[(f64, Intervention)]) -> Outcomes {
    Outcomes {
        comments: replies.len() as u64,
        interventions: replies.iter().filter(|(_, a)| a.is_intervened()).count() as u64,
    }
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64)
}
