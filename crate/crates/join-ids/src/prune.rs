//! Pruning predicates and exact join-probability computation.
//!
//! A candidate pair first faces object-level pruning: if the minimum possible
//! distance between the two bounding boxes exceeds the distance threshold, no
//! instance pair can join and the pair is discarded with probability exactly
//! zero. Pairs that survive face sample-level pruning: when high-mass sub
//! boxes of both objects are farther apart than the threshold and the mass
//! product exceeds `1 - alpha`, the join probability is provably below
//! `alpha`. Survivors are refined by the instance-pair sum, which equals the
//! full possible-worlds enumeration.

use crate::error::{Error, Result};
use crate::model::{
    enumerate_possible_worlds, ImputationState, ImputedObject, Mbr, SlidingWindow,
};

/// Guard band on the strict pruning inequalities: floating-point noise in
/// distance or mass computation must never discard a borderline pair, so a
/// prune only fires with at least this much margin.
pub const PRUNE_GUARD: f64 = 1e-9;

/// True when `distance` clearly exceeds `epsilon` (beyond the guard band).
pub fn exceeds_epsilon(distance: f64, epsilon: f64) -> bool {
    distance > epsilon + PRUNE_GUARD
}

/// Distance threshold and probabilistic threshold of the join.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinParams {
    pub epsilon: f64,
    pub alpha: f64,
}

impl JoinParams {
    pub fn new(epsilon: f64, alpha: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(JoinParams { epsilon, alpha })
    }
}

/// Minimum possible Euclidean distance between two boxes: per-axis gaps,
/// squared-summed, rooted. Zero when the boxes overlap.
pub fn mindist(a: &Mbr, b: &Mbr) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Schema(format!(
            "mindist dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut sum = 0.0;
    for j in 0..a.dim() {
        let gap = (a.lo(j) - b.hi(j)).max(b.lo(j) - a.hi(j)).max(0.0);
        sum += gap * gap;
    }
    Ok(sum.sqrt())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Join indicator on a pair of instances: distance within epsilon, compared
/// in squared form so both sides round identically everywhere it is used.
pub fn within_epsilon(a: &[f64], b: &[f64], epsilon: f64) -> bool {
    squared_distance(a, b) <= epsilon * epsilon
}

/// Object-level pruning: true means the pair is safely discarded because its
/// join probability is exactly zero. Strict inequality: a pair at distance
/// exactly epsilon is kept.
pub fn object_level_prune(o_x: &ImputedObject, o_y: &ImputedObject, params: &JoinParams) -> bool {
    mindist(o_x.mbr(), o_y.mbr())
        .map(|d| exceeds_epsilon(d, params.epsilon))
        .unwrap_or(false)
}

/// Sample-level pruning over sub-box/mass pairs: true means the join
/// probability is provably below alpha. `beta_x`/`beta_y` are the instance
/// masses inside `s_x`/`s_y`. Both inequalities are strict.
pub fn sample_level_prune(
    s_x: &Mbr,
    beta_x: f64,
    s_y: &Mbr,
    beta_y: f64,
    params: &JoinParams,
) -> bool {
    debug_assert!(beta_x > 0.0 && beta_x <= 1.0 + PRUNE_GUARD);
    debug_assert!(beta_y > 0.0 && beta_y <= 1.0 + PRUNE_GUARD);
    beta_x * beta_y > 1.0 - params.alpha + PRUNE_GUARD
        && mindist(s_x, s_y)
            .map(|d| exceeds_epsilon(d, params.epsilon))
            .unwrap_or(false)
}

/// Exact join probability of two fully imputed objects: the sum over instance
/// pairs of the confidence product where the pair distance is within epsilon.
pub fn join_probability(
    o_x: &ImputedObject,
    o_y: &ImputedObject,
    params: &JoinParams,
) -> Result<f64> {
    if o_x.state() != ImputationState::Instance || o_y.state() != ImputationState::Instance {
        return Err(Error::State("join probability requires instance-level objects".into()));
    }
    let (xs, ys) = (o_x.instances(), o_y.instances());
    if let ([xi], [yi]) = (xs, ys) {
        // Certain pair: the probability is the bare indicator.
        let joined = within_epsilon(&xi.values, &yi.values, params.epsilon);
        return Ok(if joined { xi.confidence * yi.confidence } else { 0.0 });
    }
    let mut prob = 0.0;
    for xi in xs {
        for yi in ys {
            if within_epsilon(&xi.values, &yi.values, params.epsilon) {
                prob += xi.confidence * yi.confidence;
            }
        }
    }
    Ok(prob.min(1.0))
}

/// Reference computation of the join probability by full possible-world
/// enumeration over both windows. Test oracle only: the pair probability is
/// accumulated over every world combination in which the chosen instances of
/// `o_x` and `o_y` are within epsilon.
pub fn join_probability_oracle(
    o_x: &ImputedObject,
    o_y: &ImputedObject,
    left_window: &SlidingWindow,
    right_window: &SlidingWindow,
    params: &JoinParams,
    world_cap: u128,
) -> Result<f64> {
    let left_pos = left_window
        .iter()
        .position(|o| o.id() == o_x.id())
        .ok_or_else(|| Error::State("o_x not found in the left window".into()))?;
    let right_pos = right_window
        .iter()
        .position(|o| o.id() == o_y.id())
        .ok_or_else(|| Error::State("o_y not found in the right window".into()))?;

    let left_worlds = enumerate_possible_worlds(left_window, world_cap)?;
    let right_worlds = enumerate_possible_worlds(right_window, world_cap)?;
    if left_worlds.len().saturating_mul(right_worlds.len()) as u128 > world_cap {
        return Err(Error::WorldCap {
            worlds: left_worlds.len() as u128 * right_worlds.len() as u128,
            cap: world_cap,
        });
    }

    let mut prob = 0.0;
    for lw in &left_worlds {
        let xi = &o_x.instances()[lw.choice[left_pos]];
        for rw in &right_worlds {
            let yi = &o_y.instances()[rw.choice[right_pos]];
            if within_epsilon(&xi.values, &yi.values, params.epsilon) {
                prob += lw.probability * rw.probability;
            }
        }
    }
    Ok(prob)
}
