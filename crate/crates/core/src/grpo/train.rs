use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    advantages, grpo_objective, Adam, ConfigError, GrpoConfig, LogProbModel, RewardTensor, ShapeError, StepState,
    ToyStrokePolicy, Trajectory, TrajectoryGroup, TurnRecord, Variant, VariantError,
};
use crate::partdata::{AnnotatedSketch, PartDecomposition, PartLabel, PathAssignment};
use crate::rewards::{assign_invalid_reward, Embedder, RewardContext, RewardError, ScoredTrajectory};
use crate::stroke::{CanvasConfig, CubicStroke, Sketch, SketchRng};

pub const SYNTHETIC_TASK_ID: &str = "synthetic-3x2";

/// A record drawn part by part in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub record: AnnotatedSketch,
    pub order: Vec<PartLabel>,
}

impl Task {
    pub fn in_label_order(record: AnnotatedSketch) -> Self {
        let order = record.parts.labels();
        Self { record, order }
    }

    /// Reward targets for this task under `cfg.variant`.
    pub fn context(&self, cfg: &GrpoConfig, e: &dyn Embedder) -> Result<RewardContext, RewardError> {
        let ctx = match cfg.variant {
            Variant::SingleTurn => RewardContext::single_turn(&self.record, e)?,
            _ => RewardContext::new(&self.record, &self.order, e)?,
        };
        Ok(ctx.with_placement(cfg.path_count))
    }
}

/// Three parts of two strokes each, every coordinate on a bucket center of
/// the default toy vocabulary.
pub fn synthetic_task() -> Task {
    let spec = super::PolicySpec::default();
    let mut rng = SketchRng::new(0x5eed);
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for part in 0..3 {
        for _ in 0..2 {
            let mut c = [0i32; 8];
            for v in &mut c {
                *v = spec.decode(rng.below_inclusive(spec.buckets as u64 - 1) as usize);
            }
            paths.push(CubicStroke::from_coords(c));
            labels.push(PartLabel::from_index(part));
        }
    }
    Task::in_label_order(AnnotatedSketch {
        id: SYNTHETIC_TASK_ID.into(),
        sketch: Sketch::new(paths, CanvasConfig::default()),
        caption: "three crossing loops".into(),
        parts: PartDecomposition::from_descriptions(["first loop", "second loop", "third loop"]),
        assignment: PathAssignment::from_labels(labels),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Variant(#[from] VariantError),
    #[error("the task corpus is empty")]
    EmptyCorpus,
    #[error("task {0} has no parts")]
    EmptyTask(String),
    #[error("task {0} has {1} parts but the policy only distinguishes {2} turns")]
    TooManyTurns(String, usize, usize),
}

/// One sampled group with its rewards after the invalid-response rule.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub group: TrajectoryGroup,
    pub rewards: RewardTensor,
    pub scored: Vec<ScoredTrajectory>,
}

impl Rollout {
    pub fn mean_reward(&self) -> f64 {
        let v: Vec<f64> = self.rewards.present_values().collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn mean_final_score(&self) -> f64 {
        self.scored.iter().map(|s| s.final_score.score).sum::<f64>() / self.scored.len().max(1) as f64
    }
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 finalizer folded over the inputs
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// Samples `group_size` trajectories of up to `ctx.steps()` turns from
/// `policy` and scores them. Trajectory `g` draws from an RNG seeded by
/// `(seed, g)`, so the result is independent of thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    policy: &ToyStrokePolicy,
    reference: &ToyStrokePolicy,
    ctx: &RewardContext,
    group_size: usize,
    lambda: f64,
    invalid_floor: f64,
    e: &dyn Embedder,
    seed: u64,
) -> Result<Rollout, RewardError> {
    let steps = ctx.steps();
    let sampled: Vec<Result<(Trajectory, ScoredTrajectory), RewardError>> = (0..group_size)
        .into_par_iter()
        .map(|g| {
            let mut rng = SketchRng::new(mix(&[seed, g as u64]));
            let mut traj = Trajectory::default();
            for t in 0..steps {
                let s = policy.sample_turn(t, &mut rng);
                let logp_ref = s.tokens.iter().map(|&tok| reference.log_prob(tok)).collect();
                let empty = s.strokes.is_empty();
                traj.turns.push(TurnRecord { text: s.text, tokens: s.tokens, logp_old: s.logp, logp_ref });
                if empty {
                    break;
                }
            }
            let scored = ctx.score(&traj.texts(), e, lambda)?;
            Ok((traj, scored))
        })
        .collect();
    let mut trajectories = Vec::with_capacity(group_size);
    let mut scored = Vec::with_capacity(group_size);
    for r in sampled {
        let (t, s) = r?;
        trajectories.push(t);
        scored.push(s);
    }
    let mut rewards = RewardTensor::new(group_size, steps);
    for t in 0..steps {
        let members: Vec<usize> = (0..group_size).filter(|&g| scored[g].steps.len() > t).collect();
        let raw: Vec<f64> = members.iter().map(|&g| scored[g].steps[t].combined).collect();
        let bad: Vec<bool> = members.iter().map(|&g| !scored[g].steps[t].valid).collect();
        let fixed = assign_invalid_reward(&raw, &bad, invalid_floor);
        for (i, &g) in members.iter().enumerate() {
            let state = if bad[i] { StepState::Invalid } else { StepState::Valid };
            rewards.set(g, t, fixed[i], state);
        }
    }
    Ok(Rollout { group: TrajectoryGroup { steps, trajectories }, rewards, scored })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean combined reward over present turns.
    pub mean_reward: f64,
    /// Mean of `r_sim_full + lambda * r_pc` over trajectories.
    pub final_score: f64,
    /// Share of trajectories with no malformed turn.
    pub valid_fraction: f64,
}

/// Rolls out `cfg.eval_groups` groups per task with a fixed seed.
pub fn evaluate(
    policy: &ToyStrokePolicy,
    tasks: &[Task],
    cfg: &GrpoConfig,
    e: &dyn Embedder,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    let mut reward = 0.0;
    let mut score = 0.0;
    let mut valid = 0.0;
    let mut n = 0.0;
    for (ti, task) in tasks.iter().enumerate() {
        let ctx = task.context(cfg, e)?;
        for k in 0..cfg.eval_groups {
            let r = rollout_group(
                policy,
                policy,
                &ctx,
                cfg.group_size,
                cfg.lambda,
                cfg.invalid_floor,
                e,
                mix(&[seed, 0xe7a1, ti as u64, k as u64]),
            )?;
            reward += r.mean_reward();
            score += r.mean_final_score();
            valid += r.scored.iter().filter(|s| s.steps.iter().all(|x| x.valid)).count() as f64 / r.scored.len() as f64;
            n += 1.0;
        }
    }
    let n = f64::max(n, 1.0);
    Ok(EvalSummary { mean_reward: reward / n, final_score: score / n, valid_fraction: valid / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Train,
    Eval,
}

/// One line of the JSON-Lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub variant: Variant,
    pub kind: LogKind,
    pub mean_reward: f64,
    pub objective: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub mean_kl: Option<f64>,
    pub seed: u64,
    pub final_score: f64,
}

/// Rollouts for a sampled batch, then `inner_updates` ascent steps on the
/// objective averaged over the batch. Returns the training log record.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    policy: &mut ToyStrokePolicy,
    reference: &ToyStrokePolicy,
    opt: &mut Adam,
    tasks: &[Task],
    contexts: &[RewardContext],
    cfg: &GrpoConfig,
    e: &dyn Embedder,
    step: usize,
) -> Result<LogRecord, TrainError> {
    let mut pick = SketchRng::new(mix(&[cfg.seed, 0xba7c, step as u64]));
    let batch: Vec<usize> =
        (0..cfg.batch_size).map(|_| pick.below_inclusive(tasks.len() as u64 - 1) as usize).collect();
    let old = policy.clone();
    let mut rollouts = Vec::with_capacity(batch.len());
    for (b, &ti) in batch.iter().enumerate() {
        let seed = mix(&[cfg.seed, step as u64, ti as u64, b as u64]);
        let r = rollout_group(&old, reference, &contexts[ti], cfg.group_size, cfg.lambda, cfg.invalid_floor, e, seed)?;
        let adv = advantages(&r.rewards, cfg.variant, cfg.std_floor)?;
        rollouts.push((r, adv));
    }
    let scale = 1.0 / batch.len() as f64;
    let (mut obj, mut clip, mut kl) = (0.0, 0.0, 0.0);
    let mut grad = vec![0.0; policy.num_params()];
    for _ in 0..cfg.inner_updates {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut part = vec![0.0; grad.len()];
        for (r, adv) in &rollouts {
            part.iter_mut().for_each(|g| *g = 0.0);
            let o = grpo_objective(&r.group, adv, policy, cfg.clip_eps, cfg.beta, Some(&mut part))?;
            obj += scale * o.value;
            clip += scale * o.clip_fraction;
            kl += scale * o.mean_kl;
            grad.iter_mut().zip(&part).for_each(|(g, p)| *g += scale * p);
        }
        opt.ascend(&mut policy.theta, &grad);
    }
    let mu = cfg.inner_updates as f64;
    let n = rollouts.len() as f64;
    Ok(LogRecord {
        step,
        variant: cfg.variant,
        kind: LogKind::Train,
        mean_reward: rollouts.iter().map(|(r, _)| r.mean_reward()).sum::<f64>() / n,
        objective: Some(obj / mu),
        clip_fraction: Some(clip / mu),
        mean_kl: Some(kl / mu),
        seed: cfg.seed,
        final_score: rollouts.iter().map(|(r, _)| r.mean_final_score()).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyStrokePolicy,
    pub log: Vec<LogRecord>,
    pub initial: EvalSummary,
    pub last: EvalSummary,
}

fn eval_record(step: usize, cfg: &GrpoConfig, s: &EvalSummary) -> LogRecord {
    LogRecord {
        step,
        variant: cfg.variant,
        kind: LogKind::Eval,
        mean_reward: s.mean_reward,
        objective: None,
        clip_fraction: None,
        mean_kl: None,
        seed: cfg.seed,
        final_score: s.final_score,
    }
}

/// Trains `policy` on `corpus`. An evaluation record opens the log at step
/// 0 and, when any step ran, closes it at the last step; every training
/// step adds one record. `on_record` sees each record as it is produced.
pub fn train_loop(
    mut policy: ToyStrokePolicy,
    corpus: &[Task],
    cfg: &GrpoConfig,
    e: &dyn Embedder,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for t in corpus {
        if t.order.is_empty() {
            return Err(TrainError::EmptyTask(t.record.id.clone()));
        }
        if cfg.variant != Variant::SingleTurn && t.order.len() > policy.spec.max_turns {
            return Err(TrainError::TooManyTurns(t.record.id.clone(), t.order.len(), policy.spec.max_turns));
        }
    }
    let contexts = corpus.iter().map(|t| t.context(cfg, e)).collect::<Result<Vec<_>, _>>()?;
    let eval_seed = mix(&[cfg.seed, 0xe7a1]);
    let mut log = Vec::new();
    let initial = evaluate(&policy, corpus, cfg, e, eval_seed)?;
    let rec = eval_record(0, cfg, &initial);
    on_record(&rec);
    log.push(rec);
    let mut opt = Adam::new(policy.num_params(), cfg.learning_rate, cfg.adam);
    let mut step = 0;
    for _ in 0..cfg.iterations {
        let reference = policy.clone();
        for _ in 0..cfg.steps_per_iteration {
            step += 1;
            let rec = train_step(&mut policy, &reference, &mut opt, corpus, &contexts, cfg, e, step)?;
            on_record(&rec);
            log.push(rec);
        }
    }
    let last = if step == 0 {
        initial
    } else {
        let s = evaluate(&policy, corpus, cfg, e, eval_seed)?;
        let rec = eval_record(step, cfg, &s);
        on_record(&rec);
        log.push(rec);
        s
    };
    Ok(TrainOutcome { policy, log, initial, last })
}
