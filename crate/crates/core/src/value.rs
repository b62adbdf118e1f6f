//! Monte Carlo estimate of a policy's discounted value from a particle belief.
//! Used as an oracle when checking search quality.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::despot::SearchModel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

pub const DEFAULT_HORIZON: usize = 200;

/// Equally weighted sampled states, tagged so estimates can be traced back to it.
#[derive(Debug, Clone)]
pub struct ParticleBelief<S> {
    pub id: u64,
    pub particles: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueEstimate {
    pub belief_id: u64,
    pub value: f64,
    /// Standard error of `value`.
    pub sem: f64,
    pub horizon: usize,
    pub rollouts: usize,
}

/// Mean discounted return of `policy` over `rollouts` episodes, each starting from a
/// particle drawn from `belief` and truncated after `horizon` steps. The policy sees
/// the current state and step index.
pub fn monte_carlo_policy_value<M, P>(
    model: &M,
    mut policy: P,
    belief: &ParticleBelief<M::State>,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<PolicyValueEstimate>
where
    M: SearchModel,
    P: FnMut(&M::State, usize) -> M::Action,
{
    if rollouts == 0 {
        return Err(Error::Config("need at least one rollout".into()));
    }
    if belief.particles.is_empty() {
        return Err(Error::Config("belief has no particles".into()));
    }
    let gamma = model.discount();
    let mut returns = Vec::with_capacity(rollouts);
    for i in 0..rollouts {
        let episode_seed = derive_seed(seed, i as u64, 4);
        let pick = stream(episode_seed, u64::MAX).random_range(0..belief.particles.len());
        let mut state = belief.particles[pick].clone();
        let (mut total, mut weight) = (0.0, 1.0);
        for t in 0..horizon {
            let step = model.step(&state, policy(&state, t), episode_seed, t)?;
            total += weight * step.reward;
            weight *= gamma;
            if step.terminal {
                break;
            }
            state = step.next;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let sem = if returns.len() > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(PolicyValueEstimate { belief_id: belief.id, value: mean, sem, horizon, rollouts })
}
