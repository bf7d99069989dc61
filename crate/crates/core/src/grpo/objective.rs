use serde::{Deserialize, Serialize};

/// Which reward signal drives each turn's advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Per-step normalized rewards, one advantage per turn.
    Process,
    /// Normalized final reward broadcast to every turn.
    Outcome,
    /// Globally normalized rewards summed from each turn to the end.
    TailSum,
    /// Whole sketch in one turn with a terminal reward.
    SingleTurn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Process, Variant::Outcome, Variant::TailSum, Variant::SingleTurn];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Process => "process",
            Variant::Outcome => "outcome",
            Variant::TailSum => "tail-sum",
            Variant::SingleTurn => "single-turn",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected process, outcome, tail-sum or single-turn)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepState {
    Valid,
    /// Present but malformed; carries the group-minimum reward.
    Invalid,
    /// Padding after a truncated trajectory; excluded everywhere.
    Absent,
}

/// `G x T` rewards with the state of every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTensor {
    groups: usize,
    steps: usize,
    values: Vec<f64>,
    states: Vec<StepState>,
}

impl RewardTensor {
    /// All entries absent.
    pub fn new(groups: usize, steps: usize) -> Self {
        Self { groups, steps, values: vec![0.0; groups * steps], states: vec![StepState::Absent; groups * steps] }
    }

    /// Fully valid tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let steps = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == steps), "ragged rows");
        Self { groups: rows.len(), steps, values: rows.concat(), states: vec![StepState::Valid; rows.len() * steps] }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn set(&mut self, g: usize, t: usize, value: f64, state: StepState) {
        let i = g * self.steps + t;
        self.values[i] = value;
        self.states[i] = state;
    }

    pub fn value(&self, g: usize, t: usize) -> f64 {
        self.values[g * self.steps + t]
    }

    pub fn state(&self, g: usize, t: usize) -> StepState {
        self.states[g * self.steps + t]
    }

    pub fn present(&self, g: usize, t: usize) -> bool {
        self.state(g, t) != StepState::Absent
    }

    /// Number of present turns of trajectory `g`.
    pub fn len_of(&self, g: usize) -> usize {
        (0..self.steps).filter(|&t| self.present(g, t)).count()
    }

    pub fn present_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.states).filter(|(_, s)| **s != StepState::Absent).map(|(v, _)| *v)
    }
}

/// Advantages per `(trajectory, turn)`; every token of the turn shares it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTensor {
    pub groups: usize,
    pub steps: usize,
    pub values: Vec<f64>,
}

impl AdvantageTensor {
    pub fn get(&self, g: usize, t: usize) -> f64 {
        self.values[g * self.steps + t]
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.steps..(g + 1) * self.steps]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VariantError {
    #[error("single-turn advantages need exactly one step, got {0}")]
    SingleTurnShape(usize),
}

/// Mean and population standard deviation.
fn moments(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes all present entries together; absent entries map to 0.
pub fn normalize_global(r: &RewardTensor, std_floor: f64) -> Vec<f64> {
    let present: Vec<f64> = r.present_values().collect();
    let (mean, std) = moments(&present);
    let denom = std.max(std_floor);
    (0..r.groups * r.steps)
        .map(|i| if r.states[i] == StepState::Absent { 0.0 } else { (r.values[i] - mean) / denom })
        .collect()
}

/// Standardizes each step's column over the trajectories present at that
/// step; absent entries map to 0.
pub fn normalize_per_step(r: &RewardTensor, std_floor: f64) -> Vec<f64> {
    let mut out = vec![0.0; r.groups * r.steps];
    for t in 0..r.steps {
        let col: Vec<f64> = (0..r.groups).filter(|&g| r.present(g, t)).map(|g| r.value(g, t)).collect();
        let (mean, std) = moments(&col);
        let denom = std.max(std_floor);
        for g in (0..r.groups).filter(|&g| r.present(g, t)) {
            out[g * r.steps + t] = (r.value(g, t) - mean) / denom;
        }
    }
    out
}

pub fn advantages(r: &RewardTensor, variant: Variant, std_floor: f64) -> Result<AdvantageTensor, VariantError> {
    let (gn, tn) = (r.groups, r.steps);
    if tn == 0 {
        return Ok(AdvantageTensor { groups: gn, steps: 0, values: Vec::new() });
    }
    let values = match variant {
        Variant::Process => normalize_per_step(r, std_floor),
        Variant::SingleTurn => {
            if tn != 1 {
                return Err(VariantError::SingleTurnShape(tn));
            }
            normalize_per_step(r, std_floor)
        }
        Variant::TailSum => {
            let mut v = normalize_global(r, std_floor);
            for g in 0..gn {
                let mut acc = 0.0;
                for t in (0..tn).rev() {
                    if r.present(g, t) {
                        acc += v[g * tn + t];
                        v[g * tn + t] = acc;
                    }
                }
            }
            v
        }
        Variant::Outcome => {
            // A trajectory cut short never reached the final column; like an
            // invalid turn it takes the column minimum.
            let fin: Vec<Option<f64>> = (0..gn).map(|g| r.present(g, tn - 1).then(|| r.value(g, tn - 1))).collect();
            let min = fin.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let last: Vec<Option<f64>> = (0..gn)
                .map(|g| match fin[g] {
                    Some(x) => Some(x),
                    None if min.is_finite() && r.len_of(g) > 0 => Some(min),
                    None => (0..tn).rev().find(|&t| r.present(g, t)).map(|t| r.value(g, t)),
                })
                .collect();
            let finals: Vec<f64> = last.iter().flatten().copied().collect();
            let (mean, std) = moments(&finals);
            let denom = std.max(std_floor);
            let mut v = vec![0.0; gn * tn];
            for g in 0..gn {
                if let Some(x) = last[g] {
                    let a = (x - mean) / denom;
                    for t in (0..tn).filter(|&t| r.present(g, t)) {
                        v[g * tn + t] = a;
                    }
                }
            }
            v
        }
    };
    Ok(AdvantageTensor { groups: gn, steps: tn, values })
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("KL estimate needs a positive ratio, got {0}")]
pub struct DomainError(pub f64);

/// `nu - ln(nu) - 1`, non-negative with its minimum 0 at `nu = 1`.
pub fn kl_estimate(nu: f64) -> Result<f64, DomainError> {
    if nu.is_nan() || nu <= 0.0 {
        return Err(DomainError(nu));
    }
    Ok(nu - nu.ln() - 1.0)
}

/// One token's term of the objective and its derivative with respect to the
/// current log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenTerm {
    pub value: f64,
    pub d_logp: f64,
    /// The clipped branch was selected and is flat.
    pub clipped: bool,
    pub kl: f64,
}

/// `min(rho A, clip(rho, 1-eps, 1+eps) A) - beta * kl(nu)` with
/// `rho = exp(lp - lp_old)` and `nu = exp(lp_ref - lp)`.
pub fn token_term(lp: f64, lp_old: f64, lp_ref: f64, adv: f64, eps: f64, beta: f64) -> TokenTerm {
    let rho = (lp - lp_old).exp();
    let unclipped = rho * adv;
    let clipped_val = rho.clamp(1.0 - eps, 1.0 + eps) * adv;
    let clipped = clipped_val < unclipped;
    let (surrogate, d_sur) = if clipped { (clipped_val, 0.0) } else { (unclipped, unclipped) };
    let nu = (lp_ref - lp).exp();
    let kl = nu - (lp_ref - lp) - 1.0;
    TokenTerm { value: surrogate - beta * kl, d_logp: d_sur - beta * (1.0 - nu), clipped, kl }
}
