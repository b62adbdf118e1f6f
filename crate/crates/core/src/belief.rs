//! Per-pedestrian discrete belief over candidate goals, and scenario sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::pomdp::PomdpState;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefParams {
    /// Concentration of the heading likelihood `exp(kappa * cos(angle))`.
    pub kappa: f64,
    /// Minimum posterior probability kept for every goal.
    pub floor: f64,
}

impl Default for BeliefParams {
    fn default() -> Self {
        Self { kappa: 2.0, floor: 1e-3 }
    }
}

/// One row per pedestrian; each row is a distribution over `goals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionBelief {
    pub goals: Vec<Vec2>,
    pub rows: Vec<Vec<f64>>,
}

/// Likelihood of the observed step `prev -> next` for a pedestrian heading to `goal`.
pub fn step_likelihood(prev: Vec2, next: Vec2, goal: Vec2, kappa: f64) -> f64 {
    let step = next - prev;
    let to_goal = goal - prev;
    let (ls, lg) = (step.norm(), to_goal.norm());
    if ls < 1e-9 || lg < 1e-9 {
        return 1.0;
    }
    (kappa * step.dot(to_goal) / (ls * lg)).exp()
}

/// Posterior `eta * likelihood * prior`, floored and renormalized. Falls back to the
/// uniform distribution when the product vanishes.
pub fn bayes_update(prior: &[f64], likelihood: &[f64], floor: f64) -> Vec<f64> {
    let mut post: Vec<f64> = prior.iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return uniform(prior.len());
    }
    post.iter_mut().for_each(|p| *p /= total);
    if floor > 0.0 {
        post.iter_mut().for_each(|p| *p = p.max(floor));
        let total: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= total);
    }
    post
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Shannon entropy of a row divided by `ln(n)`, in `[0, 1]`.
pub fn normalized_entropy(row: &[f64]) -> f64 {
    if row.len() < 2 {
        return 0.0;
    }
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / (row.len() as f64).ln()).clamp(0.0, 1.0)
}

impl IntentionBelief {
    pub fn uniform(goals: Vec<Vec2>, pedestrians: usize) -> Self {
        let row = uniform(goals.len());
        Self { rows: vec![row; pedestrians], goals }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Bayes update from consecutive positions, aligned by pedestrian index.
    pub fn update(&mut self, prev: &[Vec2], next: &[Vec2], params: &BeliefParams) {
        debug_assert_eq!(prev.len(), self.rows.len());
        debug_assert_eq!(next.len(), self.rows.len());
        for ((row, &p), &n) in self.rows.iter_mut().zip(prev).zip(next) {
            let lik: Vec<f64> = self.goals.iter().map(|&g| step_likelihood(p, n, g, params.kappa)).collect();
            *row = bayes_update(row, &lik, params.floor);
        }
    }

    /// Drops the rows of departed pedestrians and appends uniform rows for new ones.
    pub fn handle_population_change(&mut self, departed: &[usize], spawned: usize) {
        let mut keep = vec![true; self.rows.len()];
        for &i in departed {
            keep[i] = false;
        }
        let mut flags = keep.into_iter();
        self.rows.retain(|_| flags.next().unwrap_or(true));
        let row = uniform(self.goals.len());
        self.rows.extend(std::iter::repeat_n(row, spawned));
    }

    /// Belief restricted to the given pedestrians, in the given order.
    pub fn subset(&self, indices: &[usize]) -> IntentionBelief {
        IntentionBelief { goals: self.goals.clone(), rows: indices.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    pub fn most_likely(&self, ped: usize) -> usize {
        let row = &self.rows[ped];
        (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParticle {
    pub state: PomdpState,
    pub seed: u64,
}

fn draw<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Draws `k` scenarios: each tracked pedestrian gets a goal sampled from its row, and
/// each scenario carries its own seed for the random outcomes along the search.
pub fn sample_scenarios(belief: &IntentionBelief, state: &PomdpState, k: usize, seed: u64) -> Vec<ScenarioParticle> {
    debug_assert_eq!(belief.len(), state.pedestrians.len());
    let mut rng = stream(seed, u64::MAX);
    (0..k)
        .map(|i| {
            let mut s = state.clone();
            for (ped, row) in s.pedestrians.iter_mut().zip(&belief.rows) {
                ped.goal = belief.goals[draw(row, &mut rng)];
            }
            ScenarioParticle { state: s, seed: derive_seed(seed, i as u64, 1) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{PedestrianState, VehicleState};
    use proptest::prelude::*;

    fn corners() -> Vec<Vec2> {
        vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0), Vec2::new(100.0, 100.0), Vec2::new(0.0, 100.0)]
    }

    fn state_with(n: usize) -> PomdpState {
        PomdpState {
            vehicle: VehicleState { pos: Vec2::new(10.0, 10.0), heading: 0.0, speed: 0.0, goal: Vec2::new(90.0, 90.0) },
            pedestrians: (0..n)
                .map(|i| PedestrianState {
                    pos: Vec2::new(40.0 + i as f64, 50.0),
                    speed: 1.0,
                    goal: Vec2::new(0.0, 0.0),
                })
                .collect(),
        }
    }

    #[test]
    fn step_toward_goal_raises_its_probability() {
        let mut b = IntentionBelief::uniform(corners(), 1);
        let p = Vec2::new(40.0, 60.0);
        let dir = (corners()[2] - p) * (1.0 / corners()[2].dist(p));
        b.update(&[p], &[p + dir * 0.5], &BeliefParams::default());
        let row = &b.rows[0];
        assert!(row[2] > 0.25);
        assert!((0..4).filter(|&i| i != 2).all(|i| row[i] < row[2]));
        // Hand-computed: likelihoods exp(2 cos) with cos of the angles to each corner.
        let cos: Vec<f64> = corners()
            .iter()
            .map(|g| {
                let v = *g - p;
                v.dot(dir) / v.norm()
            })
            .collect();
        let w: Vec<f64> = cos.iter().map(|c| (2.0 * c).exp()).collect();
        let z: f64 = w.iter().sum();
        for i in 0..4 {
            assert!((row[i] - w[i] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_motion_keeps_equal_weights() {
        let goals = vec![Vec2::new(10.0, 10.0), Vec2::new(10.0, -10.0)];
        let mut b = IntentionBelief { goals, rows: vec![vec![0.5, 0.5]] };
        b.update(&[Vec2::new(0.0, 0.0)], &[Vec2::new(0.5, 0.0)], &BeliefParams::default());
        assert!((b.rows[0][0] - b.rows[0][1]).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_are_monotone() {
        let mut b = IntentionBelief::uniform(corners(), 1);
        let goal = corners()[0];
        let mut p = Vec2::new(60.0, 30.0);
        let mut last = 0.25;
        for _ in 0..5 {
            let next = p + (goal - p) * (0.5 / goal.dist(p));
            b.update(&[p], &[next], &BeliefParams::default());
            assert!(b.rows[0][0] >= last);
            last = b.rows[0][0];
            p = next;
        }
    }

    #[test]
    fn underflow_resets_to_uniform() {
        assert_eq!(bayes_update(&[0.0, 0.0, 1.0], &[1.0, 1.0, 0.0], 0.0), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn population_changes() {
        let mut b = IntentionBelief::uniform(corners(), 3);
        b.rows[1] = vec![0.7, 0.1, 0.1, 0.1];
        let before = b.clone();
        b.handle_population_change(&[], 0);
        assert_eq!(b, before);

        b.handle_population_change(&[0], 1);
        assert_eq!(b.len(), 3);
        assert_eq!(b.rows[0], vec![0.7, 0.1, 0.1, 0.1]);
        assert_eq!(b.rows[2], vec![0.25; 4]);

        b.handle_population_change(&[0, 1, 2], 3);
        assert_eq!(b.rows, vec![vec![0.25; 4]; 3]);
    }

    #[test]
    fn degenerate_belief_samples_one_goal() {
        let mut b = IntentionBelief::uniform(corners(), 2);
        b.rows[0] = vec![1.0, 0.0, 0.0, 0.0];
        let particles = sample_scenarios(&b, &state_with(2), 50, 3);
        assert_eq!(particles.len(), 50);
        assert!(particles.iter().all(|p| p.state.pedestrians[0].goal == corners()[0]));
    }

    #[test]
    fn uniform_belief_frequencies() {
        let b = IntentionBelief::uniform(corners(), 1);
        let particles = sample_scenarios(&b, &state_with(1), 10_000, 11);
        for g in corners() {
            let freq = particles.iter().filter(|p| p.state.pedestrians[0].goal == g).count() as f64 / 10_000.0;
            assert!((freq - 0.25).abs() <= 0.02, "{freq}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = IntentionBelief::uniform(corners(), 3);
        let a = sample_scenarios(&b, &state_with(3), 20, 99);
        assert_eq!(a, sample_scenarios(&b, &state_with(3), 20, 99));
        assert_ne!(a, sample_scenarios(&b, &state_with(3), 20, 100));
    }

    #[test]
    fn entropy_bounds() {
        assert!((normalized_entropy(&[0.25; 4]) - 1.0).abs() < 1e-12);
        assert_eq!(normalized_entropy(&[1.0, 0.0, 0.0, 0.0]), 0.0);
    }

    proptest! {
        #[test]
        fn rows_stay_normalized(
            prior in proptest::collection::vec(0.01..1.0f64, 4),
            x in 1.0..99.0f64, y in 1.0..99.0f64, dx in -1.0..1.0f64, dy in -1.0..1.0f64,
        ) {
            let total: f64 = prior.iter().sum();
            let mut b = IntentionBelief { goals: corners(), rows: vec![prior.iter().map(|p| p / total).collect()] };
            let p = Vec2::new(x, y);
            b.update(&[p], &[p + Vec2::new(dx, dy)], &BeliefParams::default());
            prop_assert!((b.rows[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(b.rows[0].iter().all(|&v| v > 0.0));
        }

        #[test]
        fn ranking_invariant_to_likelihood_scale(
            prior in proptest::collection::vec(0.01..1.0f64, 4),
            lik in proptest::collection::vec(0.01..10.0f64, 4),
            scale in 0.001..1000.0f64,
        ) {
            let a = bayes_update(&prior, &lik, 0.0);
            let scaled: Vec<f64> = lik.iter().map(|l| l * scale).collect();
            let b = bayes_update(&prior, &scaled, 0.0);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
