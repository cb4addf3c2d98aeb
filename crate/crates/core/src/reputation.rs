//! Trainer reputation: objective per-task reputation from utility,
//! completeness and model distance; subjective trust opinions built from the
//! publisher/trainer interaction history; their convex mix (local
//! reputation); and the tenure-weighted overall update.
//!
//! Everything here is a pure function of its arguments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::AccountId;
use crate::codec::{Canonical, CodecError, Reader};
use crate::{canonical_struct};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReputationError {
    #[error("weight vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("interaction history is empty")]
    EmptyHistory,
    #[error("parameter {name} = {value} outside {range}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// Distance threshold below which no distance penalty applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau {
    /// Mean normalized distance of the trainers in the current task.
    MeanOfTask,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReputationParams {
    pub tau: Tau,
    /// Weight of a good interaction; `1 - theta` weighs a poor one.
    pub theta: f64,
    /// Uncertainty weight in the subjective score.
    pub sigma: f64,
    /// Objective vs. subjective mix.
    pub gamma: f64,
    /// Tenure rate of the update weight.
    pub lambda: f64,
    /// Trust threshold selecting the update branch.
    pub r_min: f64,
    pub r_init: f64,
    /// Recency decay: the task `k` places before the latest weighs `rho^k`.
    pub rho: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self {
            tau: Tau::MeanOfTask,
            theta: 0.4,
            sigma: 0.25,
            gamma: 0.7,
            lambda: 0.2,
            r_min: 0.4,
            r_init: 0.5,
            rho: 0.9,
        }
    }
}

impl ReputationParams {
    pub fn validate(&self) -> Result<(), ReputationError> {
        fn check(
            name: &'static str,
            value: f64,
            ok: bool,
            range: &'static str,
        ) -> Result<(), ReputationError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ReputationError::ParamOutOfRange { name, value, range })
            }
        }
        if let Tau::Fixed(t) = self.tau {
            check("tau", t, (0.0..1.0).contains(&t), "[0,1)")?;
        }
        check("theta", self.theta, self.theta > 0.0 && self.theta < 1.0, "(0,1)")?;
        check("sigma", self.sigma, (0.0..=1.0).contains(&self.sigma), "[0,1]")?;
        check("gamma", self.gamma, (0.0..=1.0).contains(&self.gamma), "[0,1]")?;
        check("lambda", self.lambda, self.lambda > 0.0, "(0,inf)")?;
        check("r_min", self.r_min, (0.0..=1.0).contains(&self.r_min), "[0,1]")?;
        check("r_init", self.r_init, (0.0..=1.0).contains(&self.r_init), "[0,1]")?;
        check("rho", self.rho, self.rho > 0.0 && self.rho <= 1.0, "(0,1]")?;
        Ok(())
    }

    /// Resolves the distance threshold for a task given its normalized distances.
    pub fn tau_for(&self, normalized: &[f64]) -> f64 {
        match self.tau {
            Tau::Fixed(t) => t,
            Tau::MeanOfTask if normalized.is_empty() => 0.0,
            Tau::MeanOfTask => normalized.iter().sum::<f64>() / normalized.len() as f64,
        }
    }
}

impl Canonical for ReputationParams {
    fn encode(&self, out: &mut Vec<u8>) {
        match self.tau {
            Tau::MeanOfTask => out.push(0),
            Tau::Fixed(t) => {
                out.push(1);
                t.encode(out);
            }
        }
        for v in [
            self.theta,
            self.sigma,
            self.gamma,
            self.lambda,
            self.r_min,
            self.r_init,
            self.rho,
        ] {
            v.encode(out);
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tau = match u8::decode(r)? {
            0 => Tau::MeanOfTask,
            1 => Tau::Fixed(f64::decode(r)?),
            tag => return Err(CodecError::InvalidTag { ty: "Tau", tag }),
        };
        Ok(Self {
            tau,
            theta: f64::decode(r)?,
            sigma: f64::decode(r)?,
            gamma: f64::decode(r)?,
            lambda: f64::decode(r)?,
            r_min: f64::decode(r)?,
            r_init: f64::decode(r)?,
            rho: f64::decode(r)?,
        })
    }
}

/// Per-task inputs to the objective reputation of one trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub score_auto: f64,
    pub completed_rounds: u32,
    pub total_rounds: u32,
    pub distance: f64,
    pub normalized_distance: f64,
}

canonical_struct!(TaskOutcome {
    score_auto,
    completed_rounds,
    total_rounds,
    distance,
    normalized_distance
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub task_index: u64,
    pub judged_good: bool,
}

canonical_struct!(InteractionRecord {
    task_index,
    judged_good
});

/// One trainer's history with one publisher, plus the publisher's total
/// interaction count across all trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionHistory {
    /// Oldest first.
    pub records: Vec<InteractionRecord>,
    pub x_ta_tp: u64,
    pub x_tp: u64,
}

impl InteractionHistory {
    pub fn new(records: Vec<InteractionRecord>, x_tp: u64) -> Self {
        let x_ta_tp = records.len() as u64;
        Self {
            records,
            x_ta_tp,
            x_tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    pub belief: f64,
    pub disbelief: f64,
    pub uncertainty: f64,
}

impl Opinion {
    pub const VACUOUS: Opinion = Opinion {
        belief: 0.0,
        disbelief: 0.0,
        uncertainty: 1.0,
    };

    /// Builds an opinion from weighted good/poor evidence and the interaction
    /// frequency `x_ta_tp / x_tp`.
    pub fn from_evidence(alpha: f64, beta: f64, x_ta_tp: u64, x_tp: u64) -> Opinion {
        let evidence = alpha + beta;
        if evidence <= 0.0 || x_tp == 0 || x_ta_tp == 0 {
            return Opinion::VACUOUS;
        }
        let frequency = (x_ta_tp.min(x_tp) as f64) / x_tp as f64;
        let uncertainty = 1.0 - frequency;
        let belief = frequency * alpha / evidence;
        // derive disbelief from the other two so the triple sums to one
        let disbelief = (1.0 - uncertainty - belief).max(0.0);
        Opinion {
            belief,
            disbelief,
            uncertainty,
        }
    }

    pub fn sum(&self) -> f64 {
        self.belief + self.disbelief + self.uncertainty
    }
}

/// Overall reputation state of one trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub reputation: f64,
    /// Tasks participated in since joining.
    pub tasks: u64,
    /// Interaction history per publisher, oldest first.
    pub histories: BTreeMap<AccountId, Vec<InteractionRecord>>,
}

canonical_struct!(ReputationRecord {
    reputation,
    tasks,
    histories
});

impl ReputationRecord {
    pub fn new(r_init: f64) -> Self {
        Self {
            reputation: r_init.clamp(0.0, 1.0),
            tasks: 0,
            histories: BTreeMap::new(),
        }
    }
}

/// Euclidean distance between a local model and the global model.
pub fn euclidean_distance(local: &[f64], global: &[f64]) -> Result<f64, ReputationError> {
    if local.len() != global.len() {
        return Err(ReputationError::LengthMismatch(local.len(), global.len()));
    }
    Ok(local
        .iter()
        .zip(global)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Scales distances by their maximum. All-zero input stays all-zero.
pub fn normalize_distances(distances: &[f64]) -> Vec<f64> {
    let max = distances.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return vec![0.0; distances.len()];
    }
    distances.iter().map(|d| (d / max).clamp(0.0, 1.0)).collect()
}

/// Objective reputation of one trainer for a finished task.
pub fn objective_rep(outcome: &TaskOutcome, tau: f64) -> f64 {
    if outcome.total_rounds == 0 {
        return 0.0;
    }
    let completeness =
        f64::from(outcome.completed_rounds.min(outcome.total_rounds)) / f64::from(outcome.total_rounds);
    let penalty = if tau >= 1.0 {
        0.0
    } else {
        ((outcome.normalized_distance - tau) / (1.0 - tau)).clamp(0.0, 1.0)
    };
    (outcome.score_auto.clamp(0.0, 1.0) * completeness * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// Recency-weighted good (`alpha`) and poor (`beta`) evidence. The latest
/// record has weight 1, the one before `rho`, then `rho^2`, and so on.
pub fn alpha_beta(
    records: &[InteractionRecord],
    theta: f64,
    rho: f64,
) -> Result<(f64, f64), ReputationError> {
    if records.is_empty() {
        return Err(ReputationError::EmptyHistory);
    }
    let n = records.len();
    let (mut alpha, mut beta) = (0.0, 0.0);
    for (j, rec) in records.iter().enumerate() {
        let recency = rho.powi((n - 1 - j) as i32);
        if rec.judged_good {
            alpha += theta * recency;
        } else {
            beta += (1.0 - theta) * recency;
        }
    }
    Ok((alpha, beta))
}

/// Publisher's opinion of a trainer from their shared history.
pub fn opinion(history: &InteractionHistory, theta: f64, rho: f64) -> Opinion {
    match alpha_beta(&history.records, theta, rho) {
        Ok((alpha, beta)) => Opinion::from_evidence(alpha, beta, history.x_ta_tp, history.x_tp),
        Err(ReputationError::EmptyHistory) => Opinion::VACUOUS,
        Err(_) => unreachable!("alpha_beta only fails on empty history"),
    }
}

pub fn subjective_rep(op: &Opinion, sigma: f64) -> f64 {
    (op.belief + sigma * op.uncertainty).clamp(0.0, 1.0)
}

pub fn local_rep(objective: f64, subjective: f64, gamma: f64) -> f64 {
    (objective * gamma + subjective * (1.0 - gamma)).clamp(0.0, 1.0)
}

/// Tenure weight `(1 - e^{-lambda n}) / (1 + e^{-lambda n})`, i.e. `tanh(lambda n / 2)`.
pub fn omega(tasks: u64, lambda: f64) -> f64 {
    let e = (-lambda * tasks as f64).exp();
    (1.0 - e) / (1.0 + e)
}

/// Overall reputation after a task. Above the trust threshold the previous
/// value dominates as tenure grows; below it the new local value does.
pub fn update_rep(r_prev: f64, l_rep: f64, tasks: u64, params: &ReputationParams) -> f64 {
    let w = omega(tasks, params.lambda);
    let r = if l_rep >= params.r_min {
        w * r_prev + (1.0 - w) * l_rep
    } else {
        (1.0 - w) * r_prev + w * l_rep
    };
    r.clamp(0.0, 1.0)
}

/// Whether a task counts as a good interaction in the trainer's history.
pub fn judged_good(objective: f64, params: &ReputationParams) -> bool {
    objective >= params.r_min
}

/// One trainer's task, scored in isolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    #[serde(default)]
    pub params: ReputationParams,
    pub outcome: TaskOutcome,
    /// Normalized distances of every trainer in the task; feeds a
    /// mean-of-task threshold. Empty means the trainer was alone.
    #[serde(default)]
    pub task_normalized: Vec<f64>,
    /// History with the publisher before this task.
    #[serde(default)]
    pub history: Option<InteractionHistory>,
    /// Defaults to `params.r_init`.
    #[serde(default)]
    pub r_prev: Option<f64>,
    /// Tasks participated in, this one included.
    #[serde(default = "one")]
    pub tasks: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tau: f64,
    pub objective: f64,
    pub judged_good: bool,
    pub opinion: Opinion,
    pub subjective: f64,
    pub local: f64,
    pub omega: f64,
    pub reputation: f64,
}

pub fn evaluate(rec: &EvalRecord) -> Result<EvalResult, ReputationError> {
    let p = &rec.params;
    p.validate()?;
    let tau = if rec.task_normalized.is_empty() {
        p.tau_for(&[rec.outcome.normalized_distance])
    } else {
        p.tau_for(&rec.task_normalized)
    };
    let objective = objective_rep(&rec.outcome, tau);
    let opinion = rec
        .history
        .as_ref()
        .map_or(Opinion::VACUOUS, |h| opinion(h, p.theta, p.rho));
    let subjective = subjective_rep(&opinion, p.sigma);
    let local = local_rep(objective, subjective, p.gamma);
    let r_prev = rec.r_prev.unwrap_or(p.r_init);
    Ok(EvalResult {
        tau,
        objective,
        judged_good: judged_good(objective, p),
        opinion,
        subjective,
        local,
        omega: omega(rec.tasks, p.lambda),
        reputation: update_rep(r_prev, local, rec.tasks, p),
    })
}
