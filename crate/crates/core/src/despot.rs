//! Anytime belief-tree search over a fixed set of sampled scenarios.
//!
//! Every node keeps the scenarios that reach it. Bounds are stored root-scaled: a
//! node's values are discounted to the root and weighted by the fraction of scenarios
//! it holds, so an action's value is its immediate reward plus the sum over children.

use std::collections::BTreeMap;
use std::fmt::{Debug, Display};

use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::error::{Error, Result};

/// Result of simulating one scenario through one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S, O> {
    pub next: S,
    pub observation: O,
    pub reward: f64,
    pub terminal: bool,
}

/// A determinized generative model. `step` must be a pure function of
/// `(state, action, seed, depth)`.
pub trait SearchModel {
    type State: Clone;
    type Action: Copy + Ord + Debug + Display;
    type Observation: Ord + Clone;

    /// Actions available at a node; every scenario at a node shares the vehicle state,
    /// so any of them can be passed.
    fn actions(&self, state: &Self::State) -> Vec<Self::Action>;
    fn step(
        &self,
        state: &Self::State,
        action: Self::Action,
        seed: u64,
        depth: usize,
    ) -> Result<Step<Self::State, Self::Observation>>;
    /// Default-policy return from `state` at `depth`, undiscounted to the root.
    fn rollout(&self, state: &Self::State, seed: u64, depth: usize) -> f64;
    /// Optimistic value of `state`, undiscounted to the root.
    fn upper(&self, state: &Self::State) -> f64;
    fn discount(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of sampled scenarios.
    pub scenarios: usize,
    pub budget_s: f64,
    /// Iteration cap; when set it replaces the wall-clock budget.
    pub max_iterations: Option<usize>,
    pub max_depth: usize,
    /// Penalty per policy-tree node.
    pub regularization: f64,
    /// Target fraction of the root gap left unexplored.
    pub gap_ratio: f64,
    /// Share of the wall-clock budget kept in reserve.
    pub safety_margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scenarios: 100,
            budget_s: 0.5,
            max_iterations: None,
            max_depth: 90,
            regularization: 0.0,
            gap_ratio: 0.95,
            safety_margin: 0.05,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios == 0 {
            return Err(Error::Config("scenario count must be positive".into()));
        }
        if self.max_iterations.is_none() && self.budget_s <= 0.0 {
            return Err(Error::Config("planning budget must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.safety_margin) || self.gap_ratio < 0.0 || self.regularization < 0.0 {
            return Err(Error::Config("solver margins out of range".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> Budget {
        match self.max_iterations {
            Some(n) => Budget::iterations(n),
            None => Budget::seconds(self.budget_s * (1.0 - self.safety_margin)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Particle<S> {
    pub state: S,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ActionEdge<A, O> {
    pub action: A,
    /// Root-scaled expected immediate reward.
    pub reward: f64,
    pub children: BTreeMap<O, usize>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct BeliefNode<S, A, O> {
    pub particles: Vec<Particle<S>>,
    pub depth: usize,
    pub lower: f64,
    pub upper: f64,
    /// Bounds from the default policy and the heuristic, before expansion.
    pub default_lower: f64,
    pub default_upper: f64,
    pub edges: Vec<ActionEdge<A, O>>,
    pub expanded: bool,
}

impl<S, A, O> BeliefNode<S, A, O> {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub nodes: usize,
    pub root_lower: f64,
    pub root_upper: f64,
    pub max_depth: usize,
    /// Root lower bound after each iteration (only when history is recorded).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lower_history: Vec<f64>,
}

pub struct Tree<'m, M: SearchModel> {
    model: &'m M,
    cfg: SolverConfig,
    k: f64,
    pub nodes: Vec<BeliefNode<M::State, M::Action, M::Observation>>,
}

/// Mean default-policy value of `particles`, discounted to `depth`.
pub fn lower_bound<M: SearchModel>(model: &M, particles: &[Particle<M::State>], depth: usize) -> f64 {
    let sum: f64 = particles.iter().map(|p| model.rollout(&p.state, p.seed, depth)).sum();
    model.discount().powi(depth as i32) * sum / particles.len() as f64
}

/// Mean optimistic value of `particles`, discounted to `depth`.
pub fn upper_bound<M: SearchModel>(model: &M, particles: &[Particle<M::State>], depth: usize) -> f64 {
    let sum: f64 = particles.iter().map(|p| model.upper(&p.state)).sum();
    model.discount().powi(depth as i32) * sum / particles.len() as f64
}

impl<'m, M: SearchModel> Tree<'m, M> {
    pub fn new(model: &'m M, particles: Vec<Particle<M::State>>, cfg: SolverConfig) -> Self {
        let k = particles.len() as f64;
        let mut tree = Self { model, cfg, k, nodes: Vec::new() };
        tree.add_node(particles, 0);
        tree
    }

    fn add_node(&mut self, particles: Vec<Particle<M::State>>, depth: usize) -> usize {
        let weight = particles.len() as f64 / self.k;
        let lower = weight * lower_bound(self.model, &particles, depth) - self.cfg.regularization;
        let mut upper = weight * upper_bound(self.model, &particles, depth);
        upper = upper.max(lower);
        let leaf = depth >= self.cfg.max_depth;
        self.nodes.push(BeliefNode {
            particles,
            depth,
            lower,
            upper: if leaf { lower } else { upper },
            default_lower: lower,
            default_upper: upper,
            edges: Vec::new(),
            expanded: false,
        });
        self.nodes.len() - 1
    }

    pub fn root(&self) -> &BeliefNode<M::State, M::Action, M::Observation> {
        &self.nodes[0]
    }

    fn excess(&self, id: usize) -> f64 {
        let node = &self.nodes[id];
        let weight = node.particles.len() as f64 / self.k;
        node.gap() - weight * self.cfg.gap_ratio * self.root().gap()
    }

    fn expand(&mut self, id: usize) -> Result<()> {
        let depth = self.nodes[id].depth;
        let mut actions = self.model.actions(&self.nodes[id].particles[0].state);
        actions.sort();
        actions.dedup();
        if actions.is_empty() {
            return Err(Error::NoActions);
        }
        let discount = self.model.discount().powi(depth as i32);
        let mut edges = Vec::with_capacity(actions.len());
        for action in actions {
            let mut reward = 0.0;
            let mut groups: BTreeMap<M::Observation, Vec<Particle<M::State>>> = BTreeMap::new();
            for p in &self.nodes[id].particles {
                let step = self.model.step(&p.state, action, p.seed, depth)?;
                reward += discount * step.reward / self.k;
                if !step.terminal {
                    groups.entry(step.observation).or_default().push(Particle { state: step.next, seed: p.seed });
                }
            }
            let mut children = BTreeMap::new();
            let (mut lower, mut upper) = (reward, reward);
            for (obs, particles) in groups {
                let child = self.add_node(particles, depth + 1);
                lower += self.nodes[child].lower;
                upper += self.nodes[child].upper;
                children.insert(obs, child);
            }
            edges.push(ActionEdge { action, reward, children, lower, upper });
        }
        let node = &mut self.nodes[id];
        node.edges = edges;
        node.expanded = true;
        Ok(())
    }

    fn backup(&mut self, id: usize) {
        let reg = self.cfg.regularization;
        let mut edges = std::mem::take(&mut self.nodes[id].edges);
        for e in &mut edges {
            e.lower = e.reward + e.children.values().map(|&c| self.nodes[c].lower).sum::<f64>();
            e.upper = e.reward + e.children.values().map(|&c| self.nodes[c].upper).sum::<f64>();
        }
        let node = &mut self.nodes[id];
        node.edges = edges;
        let best_lower = node.edges.iter().map(|e| e.lower - reg).fold(f64::NEG_INFINITY, f64::max);
        let best_upper = node.edges.iter().map(|e| e.upper - reg).fold(f64::NEG_INFINITY, f64::max);
        node.lower = node.default_lower.max(best_lower);
        node.upper = best_upper.max(node.lower);
    }

    /// One trial from the root; returns the deepest depth reached.
    pub fn trial(&mut self) -> Result<usize> {
        let mut path = vec![0usize];
        let mut id = 0usize;
        loop {
            let node = &self.nodes[id];
            if node.depth >= self.cfg.max_depth || (id != 0 && self.excess(id) <= 0.0) {
                break;
            }
            if !node.expanded {
                self.expand(id)?;
            }
            let node = &self.nodes[id];
            let mut best: Option<&ActionEdge<M::Action, M::Observation>> = None;
            for e in &node.edges {
                if best.is_none_or(|b| e.upper > b.upper) {
                    best = Some(e);
                }
            }
            let Some(edge) = best else { break };
            let mut next: Option<(f64, usize)> = None;
            for &c in edge.children.values() {
                let x = self.excess(c);
                if next.is_none_or(|(bx, _)| x > bx) {
                    next = Some((x, c));
                }
            }
            match next {
                Some((x, c)) if x > 0.0 => {
                    id = c;
                    path.push(c);
                }
                _ => break,
            }
        }
        let depth = self.nodes[id].depth;
        for &n in path.iter().rev() {
            if self.nodes[n].expanded {
                self.backup(n);
            }
        }
        Ok(depth)
    }

    /// Root action with the best lower bound; ties go to the smallest action.
    pub fn best_action(&self) -> Option<M::Action> {
        let mut best: Option<&ActionEdge<M::Action, M::Observation>> = None;
        for e in &self.root().edges {
            if best.is_none_or(|b| e.lower > b.lower) {
                best = Some(e);
            }
        }
        best.map(|e| e.action)
    }

    /// Largest violation of `lower <= upper` over all nodes and edges.
    pub fn max_bound_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for n in &self.nodes {
            worst = worst.max(n.lower - n.upper);
            for e in &n.edges {
                worst = worst.max(e.lower - e.upper);
            }
        }
        worst
    }

    pub fn stats(&self, iterations: usize, max_depth: usize) -> SearchStats {
        SearchStats {
            iterations,
            nodes: self.nodes.len(),
            root_lower: self.root().lower,
            root_upper: self.root().upper,
            max_depth,
            lower_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult<A> {
    pub action: A,
    pub stats: SearchStats,
}

/// Runs trials until the budget is spent or the root gap closes. At least one trial
/// always runs.
pub fn plan<M: SearchModel>(
    model: &M,
    particles: Vec<Particle<M::State>>,
    cfg: &SolverConfig,
    record_history: bool,
) -> Result<PlanResult<M::Action>> {
    let (result, _) = plan_with_tree(model, particles, cfg, record_history)?;
    Ok(result)
}

/// As [`plan`], also returning the final tree for inspection.
pub fn plan_with_tree<'m, M: SearchModel>(
    model: &'m M,
    particles: Vec<Particle<M::State>>,
    cfg: &SolverConfig,
    record_history: bool,
) -> Result<(PlanResult<M::Action>, Tree<'m, M>)> {
    if particles.is_empty() {
        return Err(Error::Config("no scenarios to plan over".into()));
    }
    let mut tree = Tree::new(model, particles, *cfg);
    let clock = cfg.budget().start();
    let mut iterations = 0;
    let mut deepest = 0;
    let mut history = Vec::new();
    loop {
        deepest = deepest.max(tree.trial()?);
        iterations += 1;
        if record_history {
            history.push(tree.root().lower);
        }
        if tree.root().gap() <= 1e-9 || clock.expired(iterations) {
            break;
        }
    }
    let action = tree.best_action().ok_or(Error::NoActions)?;
    let mut stats = tree.stats(iterations, deepest);
    stats.lower_history = history;
    Ok((PlanResult { action, stats }, tree))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A walk on the integers: move left or right; reaching +2 pays 10 and ends, every
    /// other step costs 1. The default policy is worse than anything. Scenario seeds flip the direction of the move with
    /// probability one half at depth 0.
    struct Walk;

    impl SearchModel for Walk {
        type State = i32;
        type Action = i8;
        type Observation = i32;

        fn actions(&self, _: &i32) -> Vec<i8> {
            vec![1, -1]
        }

        fn step(&self, s: &i32, a: i8, seed: u64, depth: usize) -> Result<Step<i32, i32>> {
            let flip = depth == 0 && seed % 2 == 1;
            let next = s + if flip { -i32::from(a) } else { i32::from(a) };
            let terminal = next == 2;
            Ok(Step { next, observation: next, reward: if terminal { 10.0 } else { -1.0 }, terminal })
        }

        fn rollout(&self, _: &i32, _: u64, _: usize) -> f64 {
            -100.0
        }

        fn upper(&self, _: &i32) -> f64 {
            10.0
        }

        fn discount(&self) -> f64 {
            0.9
        }
    }

    fn particles(seeds: &[u64]) -> Vec<Particle<i32>> {
        seeds.iter().map(|&seed| Particle { state: 0, seed }).collect()
    }

    fn cfg(depth: usize) -> SolverConfig {
        SolverConfig { max_iterations: Some(10_000), max_depth: depth, gap_ratio: 0.0, ..SolverConfig::default() }
    }

    #[test]
    fn bounds_of_single_scenario() {
        let ps = particles(&[0]);
        assert_eq!(lower_bound(&Walk, &ps, 0), -100.0);
        assert!((upper_bound(&Walk, &ps, 2) - 8.1).abs() < 1e-12);
    }

    #[test]
    fn deterministic_walk_finds_goal() {
        let (res, tree) = plan_with_tree(&Walk, particles(&[0, 2]), &cfg(3), true).unwrap();
        assert_eq!(res.action, 1);
        // -1, then +10 discounted once.
        assert!((tree.root().lower - (-1.0 + 0.9 * 10.0)).abs() < 1e-9);
        assert!(tree.max_bound_violation() <= 1e-6);
        assert!(res.stats.lower_history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn matches_expectimax_over_scenarios() {
        // Half the scenarios flip the first move: action +1 reaches 1 or -1.
        let (res, tree) = plan_with_tree(&Walk, particles(&[0, 1]), &cfg(2), false).unwrap();
        let plus: f64 = -1.0 + 0.5 * 0.9 * 10.0 + 0.5 * 0.9 * (-1.0 + 0.9 * -100.0);
        let minus = plus;
        assert!((tree.root().lower - plus.max(minus)).abs() < 1e-9, "{}", tree.root().lower);
        // Tie between +1 and -1 resolves to the smaller action.
        assert_eq!(res.action, -1);
    }

    #[test]
    fn same_inputs_same_result() {
        let a = plan(&Walk, particles(&[0, 1, 2, 3]), &cfg(4), false).unwrap();
        let b = plan(&Walk, particles(&[0, 1, 2, 3]), &cfg(4), false).unwrap();
        assert_eq!(a.action, b.action);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { scenarios: 0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { budget_s: 0.0, ..SolverConfig::default() }.validate().is_err());
        SolverConfig::default().validate().unwrap();
    }
}
