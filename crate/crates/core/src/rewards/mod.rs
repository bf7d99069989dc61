//! Per-turn rewards: embedding similarity of the growing canvas to the
//! ground-truth partial sketch, a path-count reward on the final turn, and
//! the group-minimum rule for malformed responses.

mod embed;

pub use embed::{
    cosine, from_name as embedder_from_name, BaselineEmbedder, EmbedError, Embedder, ExternalEmbedder, BASELINE_SIDE,
};

use serde::{Deserialize, Serialize};

use crate::partdata::{assemble_partial_gt, AnnotatedSketch, OrderError, PartLabel};
use crate::raster::{draw_strokes, rasterize, Bitmap, DEFAULT_TOLERANCE, INK};
use crate::stroke::{parse_strokes, CanvasConfig, CubicStroke};

/// Reward given to every member of a group step in which no member is valid.
pub const DEFAULT_INVALID_FLOOR: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("bitmap sizes differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("embedding lengths differ: {0} vs {1}")]
    EmbeddingMismatch(usize, usize),
    #[error("N_gt must be at least 1")]
    Domain,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Order(#[from] OrderError),
}

/// Cosine similarity of the two images' embeddings.
pub fn similarity_reward(gen: &Bitmap, gt: &Bitmap, e: &dyn Embedder) -> Result<f64, RewardError> {
    if (gen.width(), gen.height()) != (gt.width(), gt.height()) {
        return Err(RewardError::DimensionMismatch((gen.width(), gen.height()), (gt.width(), gt.height())));
    }
    let (a, b) = (e.embed(gen)?, e.embed(gt)?);
    if a.len() != b.len() {
        return Err(RewardError::EmbeddingMismatch(a.len(), b.len()));
    }
    Ok(cosine(&a, &b))
}

/// `max(0, 1 - |n_gt - n| / n_gt)`.
pub fn path_count_reward(n: usize, n_gt: usize) -> Result<f64, RewardError> {
    if n_gt < 1 {
        return Err(RewardError::Domain);
    }
    let diff = (n_gt as f64 - n as f64).abs();
    Ok((1.0 - diff / n_gt as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReward {
    pub r_sim: f64,
    /// Nonzero only on the last scored step.
    pub r_pc: f64,
    /// `r_sim + lambda * r_pc` for valid steps. For an invalid step this is a
    /// placeholder that [`assign_invalid_reward`] replaces.
    pub combined: f64,
    pub valid: bool,
}

/// Replaces each invalid entry with the minimum valid entry of the same
/// group step, or `floor` when there is none.
pub fn assign_invalid_reward(rewards: &[f64], invalid: &[bool], floor: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), invalid.len());
    let min = rewards.iter().zip(invalid).filter(|(_, &bad)| !bad).map(|(&r, _)| r).fold(f64::INFINITY, f64::min);
    let fill = if min.is_finite() { min } else { floor };
    rewards.iter().zip(invalid).map(|(&r, &bad)| if bad { fill } else { r }).collect()
}

/// Which steps carry the path-count term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathCountPlacement {
    /// Only the last scored step.
    #[default]
    FinalStep,
    /// The trajectory's path-count reward is added to every scored step.
    EveryStep,
}

impl PathCountPlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FinalStep => "final-step",
            Self::EveryStep => "every-step",
        }
    }
}

impl std::str::FromStr for PathCountPlacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "final-step" => Ok(Self::FinalStep),
            "every-step" => Ok(Self::EveryStep),
            _ => Err(format!("unknown path-count placement {s:?} (expected final-step or every-step)")),
        }
    }
}

/// Ground-truth targets for scoring trajectories of one task, with the
/// per-step embeddings cached.
#[derive(Debug, Clone)]
pub struct RewardContext {
    pub canvas: CanvasConfig,
    /// Embedding of the ground-truth canvas after each step.
    pub gt_embeddings: Vec<Vec<f64>>,
    /// Ground-truth path count after each step.
    pub gt_counts: Vec<usize>,
    /// Embedding of the complete ground-truth sketch.
    pub full_embedding: Vec<f64>,
    pub n_gt: usize,
    pub placement: PathCountPlacement,
}

/// Per-trajectory summary that is comparable across turn layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalScore {
    /// Similarity of the last valid canvas to the complete sketch.
    pub r_sim_full: f64,
    /// Path-count reward of the last valid canvas against the complete sketch.
    pub r_pc: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTrajectory {
    pub steps: Vec<StepReward>,
    pub final_score: FinalScore,
}

impl RewardContext {
    /// One step per part of `order`.
    pub fn new(gt: &AnnotatedSketch, order: &[PartLabel], e: &dyn Embedder) -> Result<Self, RewardError> {
        let k = order.len();
        let mut gt_embeddings = Vec::with_capacity(k);
        let mut gt_counts = Vec::with_capacity(k);
        for t in 1..=k {
            let partial = assemble_partial_gt(gt, order, t)?;
            gt_counts.push(partial.len());
            gt_embeddings.push(e.embed(&rasterize(&partial))?);
        }
        let full_embedding = e.embed(&rasterize(&gt.sketch))?;
        Ok(Self {
            canvas: gt.sketch.canvas,
            gt_embeddings,
            gt_counts,
            full_embedding,
            n_gt: gt.sketch.len(),
            placement: PathCountPlacement::default(),
        })
    }

    /// A single step whose target is the complete sketch.
    pub fn single_turn(gt: &AnnotatedSketch, e: &dyn Embedder) -> Result<Self, RewardError> {
        let full_embedding = e.embed(&rasterize(&gt.sketch))?;
        Ok(Self {
            canvas: gt.sketch.canvas,
            gt_embeddings: vec![full_embedding.clone()],
            gt_counts: vec![gt.sketch.len()],
            full_embedding,
            n_gt: gt.sketch.len(),
            placement: PathCountPlacement::default(),
        })
    }

    pub fn with_placement(mut self, placement: PathCountPlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn steps(&self) -> usize {
        self.gt_embeddings.len()
    }

    /// Scores turn texts in order. Scoring stops at the first text that is
    /// empty or malformed; that step is returned as invalid and nothing after
    /// it is scored. The path-count reward compares the paths drawn by the
    /// successful steps with the ground truth of the same steps, and is 0
    /// when no step succeeded.
    pub fn score(&self, texts: &[String], e: &dyn Embedder, lambda: f64) -> Result<ScoredTrajectory, RewardError> {
        assert!(texts.len() <= self.steps(), "more turns than steps");
        let c = self.canvas;
        let mut canvas = Bitmap::gray(c.width, c.height, c.background);
        let mut n = 0usize;
        let mut sims = Vec::with_capacity(texts.len());
        let mut truncated = false;
        let mut last_sim_full = None;
        for (t, text) in texts.iter().enumerate() {
            let strokes: Option<Vec<CubicStroke>> = parse_strokes(text).ok().filter(|s| !s.is_empty()).map(|s| s.0);
            let Some(strokes) = strokes else {
                truncated = true;
                break;
            };
            draw_strokes(&mut canvas, &strokes, c.stroke_width, DEFAULT_TOLERANCE, &[INK]);
            n += strokes.len();
            let emb = e.embed(&canvas)?;
            sims.push(cosine(&emb, &self.gt_embeddings[t]));
            last_sim_full = Some(if t + 1 == self.steps() { sims[t] } else { cosine(&emb, &self.full_embedding) });
        }
        let done = sims.len();
        let r_pc = match done {
            0 => 0.0,
            k => path_count_reward(n, self.gt_counts[k - 1])?,
        };
        let scored = done + usize::from(truncated);
        let steps = (0..scored)
            .map(|t| {
                let carries = match self.placement {
                    PathCountPlacement::EveryStep => true,
                    PathCountPlacement::FinalStep => t + 1 == scored,
                };
                let pc = if carries { r_pc } else { 0.0 };
                match sims.get(t) {
                    Some(&r_sim) => StepReward { r_sim, r_pc: pc, combined: r_sim + lambda * pc, valid: true },
                    None => StepReward { r_sim: 0.0, r_pc: pc, combined: lambda * pc, valid: false },
                }
            })
            .collect();
        let r_sim_full = match last_sim_full {
            Some(s) => s,
            None => cosine(&e.embed(&canvas)?, &self.full_embedding),
        };
        let r_pc_full = path_count_reward(n, self.n_gt)?;
        Ok(ScoredTrajectory {
            steps,
            final_score: FinalScore { r_sim_full, r_pc: r_pc_full, score: r_sim_full + lambda * r_pc_full },
        })
    }
}

/// Scores a trajectory of turn texts against `gt` drawn in `order`.
pub fn score_trajectory(
    traj: &[String],
    gt: &AnnotatedSketch,
    order: &[PartLabel],
    e: &dyn Embedder,
    lambda: f64,
) -> Result<Vec<StepReward>, RewardError> {
    Ok(RewardContext::new(gt, order, e)?.score(traj, e, lambda)?.steps)
}
