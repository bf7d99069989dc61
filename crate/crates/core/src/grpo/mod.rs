//! Multi-turn group-relative policy optimization with per-step rewards.
//!
//! A group is `G` rollouts of one task, each up to `T` turns. A rollout ends
//! early at its first malformed turn; that turn stays in the objective with
//! the group-minimum reward and the turns after it are absent.

mod objective;
mod policy;
mod train;

pub use objective::{
    advantages, kl_estimate, normalize_global, normalize_per_step, token_term, AdvantageTensor, DomainError,
    RewardTensor, StepState, TokenTerm, Variant, VariantError,
};
pub use policy::{Adam, AdamConfig, Checkpoint, LogProbModel, PolicySpec, SampledTurn, Token, ToyStrokePolicy, SLOTS};
pub use train::{
    evaluate, rollout_group, synthetic_task, train_loop, train_step, EvalSummary, LogKind, LogRecord, Rollout, Task,
    TrainError, TrainOutcome, SYNTHETIC_TASK_ID,
};

use serde::{Deserialize, Serialize};

use crate::rewards::PathCountPlacement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub beta: f64,
    /// Ascent steps per sampled batch.
    pub inner_updates: usize,
    pub lambda: f64,
    pub path_count: PathCountPlacement,
    pub variant: Variant,
    /// Reference-policy refreshes.
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub learning_rate: f64,
    pub std_floor: f64,
    pub seed: u64,
    /// Tasks sampled from the corpus per step.
    pub batch_size: usize,
    pub invalid_floor: f64,
    /// Groups rolled out for each evaluation.
    pub eval_groups: usize,
    pub adam: AdamConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            beta: 0.0,
            inner_updates: 2,
            lambda: 1.0,
            path_count: PathCountPlacement::default(),
            variant: Variant::Process,
            iterations: 1,
            steps_per_iteration: 500,
            learning_rate: 0.005,
            std_floor: 1e-8,
            seed: 0,
            batch_size: 1,
            invalid_floor: crate::rewards::DEFAULT_INVALID_FLOOR,
            eval_groups: 8,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid GRPO config: {0}")]
pub struct ConfigError(pub String);

impl GrpoConfig {
    pub fn total_steps(&self) -> usize {
        self.iterations * self.steps_per_iteration
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.group_size < 2 {
            return fail("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0) {
            return fail("clip_eps must be positive");
        }
        if self.inner_updates < 1 {
            return fail("inner_updates must be at least 1");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail("beta must be finite and non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(self.std_floor > 0.0) {
            return fail("std_floor must be positive");
        }
        if !self.lambda.is_finite() {
            return fail("lambda must be finite");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// One sampled turn with its log-probabilities under the sampling and
/// reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub text: String,
    pub tokens: Vec<Token>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

/// Present turns only; absent turns are simply missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<TurnRecord>,
}

impl Trajectory {
    pub fn texts(&self) -> Vec<String> {
        self.turns.iter().map(|t| t.text.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub steps: usize,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("advantages are {0}x{1} but the group is {2}x{3}")]
    Advantages(usize, usize, usize, usize),
    #[error("trajectory {0} has {1} turns, more than {2}")]
    TooManyTurns(usize, usize, usize),
    #[error("trajectory {0} turn {1}: {2} tokens but {3} old and {4} reference log-probabilities")]
    LogProbs(usize, usize, usize, usize, usize),
    #[error("trajectory {0} turn {1} has no tokens")]
    EmptyTurn(usize, usize),
    #[error("gradient buffer has {0} entries, the model has {1}")]
    Gradient(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Share of tokens whose clipped branch was selected.
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub tokens: usize,
    pub turns: usize,
}

/// Clipped token-level objective averaged per turn and then over the
/// present turns of the group. When `grad` is given, the gradient with
/// respect to the model parameters is added into it.
pub fn grpo_objective<M: LogProbModel + ?Sized>(
    group: &TrajectoryGroup,
    adv: &AdvantageTensor,
    model: &M,
    clip_eps: f64,
    beta: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<ObjectiveValue, ShapeError> {
    let g_n = group.trajectories.len();
    if adv.groups != g_n || adv.steps != group.steps {
        return Err(ShapeError::Advantages(adv.groups, adv.steps, g_n, group.steps));
    }
    if let Some(g) = grad.as_deref() {
        if g.len() != model.num_params() {
            return Err(ShapeError::Gradient(g.len(), model.num_params()));
        }
    }
    let mut turns = 0usize;
    for (gi, traj) in group.trajectories.iter().enumerate() {
        if traj.turns.len() > group.steps {
            return Err(ShapeError::TooManyTurns(gi, traj.turns.len(), group.steps));
        }
        for (t, turn) in traj.turns.iter().enumerate() {
            let n = turn.tokens.len();
            if n == 0 {
                return Err(ShapeError::EmptyTurn(gi, t));
            }
            if turn.logp_old.len() != n || turn.logp_ref.len() != n {
                return Err(ShapeError::LogProbs(gi, t, n, turn.logp_old.len(), turn.logp_ref.len()));
            }
        }
        turns += traj.turns.len();
    }
    if turns == 0 {
        return Ok(ObjectiveValue { value: 0.0, clip_fraction: 0.0, mean_kl: 0.0, tokens: 0, turns: 0 });
    }
    let (mut value, mut clipped, mut kl, mut tokens) = (0.0, 0usize, 0.0, 0usize);
    for (gi, traj) in group.trajectories.iter().enumerate() {
        for (t, turn) in traj.turns.iter().enumerate() {
            let a = adv.get(gi, t);
            let w = 1.0 / (turns as f64 * turn.tokens.len() as f64);
            for (k, &tok) in turn.tokens.iter().enumerate() {
                let lp = model.log_prob(tok);
                let term = token_term(lp, turn.logp_old[k], turn.logp_ref[k], a, clip_eps, beta);
                value += w * term.value;
                clipped += usize::from(term.clipped);
                kl += term.kl;
                tokens += 1;
                if let Some(g) = grad.as_deref_mut() {
                    if term.d_logp != 0.0 {
                        model.add_log_prob_grad(tok, w * term.d_logp, g);
                    }
                }
            }
        }
    }
    Ok(ObjectiveValue {
        value,
        clip_fraction: clipped as f64 / tokens as f64,
        mean_kl: kl / tokens as f64,
        tokens,
        turns,
    })
}
