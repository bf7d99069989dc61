//! A tabular softmax policy over discretized stroke tokens.
//!
//! Each stroke is eight tokens, one coordinate bucket per slot. At slot 0
//! the policy may instead emit end-of-part, which closes the turn; a turn
//! that closes before any stroke is an empty, malformed response. Once a
//! turn holds `max_strokes_per_turn` strokes, end-of-part is forced and is
//! not counted as a token.
//!
//! The context of a token is `(turn, strokes so far, slot)` with the turn
//! and stroke count clamped to the table size, so strokes beyond
//! `stroke_states - 1` share one row per slot.

use serde::{Deserialize, Serialize};

use crate::stroke::{emit_strokes, CubicStroke, Rounding, SketchRng, StrokeSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub max_turns: usize,
    pub stroke_states: usize,
    pub buckets: usize,
    pub bucket_width: i32,
    pub max_strokes_per_turn: usize,
}

pub const SLOTS: usize = 8;

impl Default for PolicySpec {
    fn default() -> Self {
        Self { max_turns: 5, stroke_states: 4, buckets: 16, bucket_width: 32, max_strokes_per_turn: 12 }
    }
}

impl PolicySpec {
    pub fn vocab(&self) -> usize {
        self.buckets + 1
    }

    pub fn eop(&self) -> usize {
        self.buckets
    }

    pub fn states(&self) -> usize {
        self.max_turns * self.stroke_states * SLOTS
    }

    pub fn state(&self, turn: usize, strokes: usize, slot: usize) -> usize {
        let t = turn.min(self.max_turns - 1);
        let s = strokes.min(self.stroke_states - 1);
        (t * self.stroke_states + s) * SLOTS + slot
    }

    pub fn allowed(&self, state: usize, action: usize) -> bool {
        action < self.buckets || (action == self.eop() && state.is_multiple_of(SLOTS))
    }

    /// Center coordinate of a bucket.
    pub fn decode(&self, bucket: usize) -> i32 {
        bucket as i32 * self.bucket_width + self.bucket_width / 2
    }

    /// Bucket containing a coordinate, clamped to the table.
    pub fn encode(&self, coord: i32) -> usize {
        (coord.div_euclid(self.bucket_width)).clamp(0, self.buckets as i32 - 1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub state: u32,
    pub action: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTurn {
    pub tokens: Vec<Token>,
    /// Log-probability of each token under the sampling policy.
    pub logp: Vec<f64>,
    pub strokes: Vec<CubicStroke>,
    pub text: String,
}

/// Per-token log-probabilities and their parameter gradients.
pub trait LogProbModel {
    fn num_params(&self) -> usize;
    fn log_prob(&self, token: Token) -> f64;
    /// Adds `weight * d log p(token) / d theta` into `grad`.
    fn add_log_prob_grad(&self, token: Token, weight: f64, grad: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyStrokePolicy {
    pub spec: PolicySpec,
    /// Row-major `states x vocab` logits.
    pub theta: Vec<f64>,
}

impl ToyStrokePolicy {
    /// Uniform over allowed actions.
    pub fn new(spec: PolicySpec) -> Self {
        Self { theta: vec![0.0; spec.states() * spec.vocab()], spec }
    }

    /// Logits that pick `turns[t]` verbatim with near certainty (after
    /// bucketing), then end the turn. Strokes past the stroke-state limit
    /// reuse the last row and so are not reproducible.
    pub fn peaked(spec: PolicySpec, turns: &[Vec<CubicStroke>], margin: f64) -> Self {
        let mut p = Self::new(spec);
        let v = spec.vocab();
        for (t, strokes) in turns.iter().enumerate() {
            for (s, stroke) in strokes.iter().enumerate() {
                for (slot, c) in stroke.coords().iter().enumerate() {
                    let st = spec.state(t, s, slot);
                    p.theta[st * v + spec.encode(*c)] = margin;
                }
            }
            let st = spec.state(t, strokes.len(), 0);
            p.theta[st * v + spec.eop()] = margin;
        }
        p
    }

    fn row(&self, state: usize) -> &[f64] {
        let v = self.spec.vocab();
        &self.theta[state * v..(state + 1) * v]
    }

    /// Masked softmax of one context row.
    pub fn probs(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row
            .iter()
            .enumerate()
            .filter(|(a, _)| self.spec.allowed(state, *a))
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(a, &x)| if self.spec.allowed(state, a) { (x - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    fn log_prob_at(&self, state: usize, action: usize) -> f64 {
        let row = self.row(state);
        let allowed = |a: usize| self.spec.allowed(state, a);
        let max = (0..row.len()).filter(|&a| allowed(a)).map(|a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..row.len()).filter(|&a| allowed(a)).map(|a| (row[a] - max).exp()).sum::<f64>().ln();
        row[action] - lse
    }

    fn sample_action(&self, state: usize, rng: &mut SketchRng) -> usize {
        let p = self.probs(state);
        let u = rng.unit_f64();
        let mut acc = 0.0;
        let mut last_allowed = 0;
        for (a, &pa) in p.iter().enumerate() {
            if pa > 0.0 {
                last_allowed = a;
                acc += pa;
                if u < acc {
                    return a;
                }
            }
        }
        last_allowed
    }

    /// Samples one turn's strokes.
    pub fn sample_turn(&self, turn: usize, rng: &mut SketchRng) -> SampledTurn {
        let spec = self.spec;
        let mut tokens = Vec::new();
        let mut logp = Vec::new();
        let mut strokes = Vec::new();
        while strokes.len() < spec.max_strokes_per_turn {
            let mut coords = [0i32; SLOTS];
            let mut ended = false;
            for (slot, c) in coords.iter_mut().enumerate() {
                let state = spec.state(turn, strokes.len(), slot);
                let a = self.sample_action(state, rng);
                tokens.push(Token { state: state as u32, action: a as u32 });
                logp.push(self.log_prob_at(state, a));
                if a == spec.eop() {
                    ended = true;
                    break;
                }
                *c = spec.decode(a);
            }
            if ended {
                break;
            }
            strokes.push(CubicStroke::from_coords(coords));
        }
        let text = emit_strokes(&StrokeSequence(strokes.clone()), Rounding::None);
        SampledTurn { tokens, logp, strokes, text }
    }
}

impl LogProbModel for ToyStrokePolicy {
    fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn log_prob(&self, token: Token) -> f64 {
        self.log_prob_at(token.state as usize, token.action as usize)
    }

    fn add_log_prob_grad(&self, token: Token, weight: f64, grad: &mut [f64]) {
        let (s, a) = (token.state as usize, token.action as usize);
        let v = self.spec.vocab();
        let p = self.probs(s);
        for (b, pb) in p.iter().enumerate() {
            if self.spec.allowed(s, b) {
                let ind = if b == a { 1.0 } else { 0.0 };
                grad[s * v + b] += weight * (ind - pb);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8 }
    }
}

/// Bias-corrected adaptive-moment optimizer taking ascent steps.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Self { cfg, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Serialized policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// `[rows, cols]` of the logit table.
    pub shape: [usize; 2],
    pub spec: PolicySpec,
    pub eop_index: usize,
    pub slots: usize,
    pub seed: u64,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    pub fn from_policy(p: &ToyStrokePolicy, seed: u64) -> Self {
        Self {
            shape: [p.spec.states(), p.spec.vocab()],
            spec: p.spec,
            eop_index: p.spec.eop(),
            slots: SLOTS,
            seed,
            theta: p.theta.clone(),
        }
    }

    pub fn into_policy(self) -> Result<ToyStrokePolicy, String> {
        let expect = [self.spec.states(), self.spec.vocab()];
        if self.shape != expect || self.theta.len() != expect[0] * expect[1] {
            return Err(format!("checkpoint shape {:?} does not match its spec {expect:?}", self.shape));
        }
        Ok(ToyStrokePolicy { spec: self.spec, theta: self.theta })
    }
}
