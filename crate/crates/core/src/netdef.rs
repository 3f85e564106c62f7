//! Two-player network-defense environment.
//!
//! A heuristic red agent spreads through a randomly generated network while
//! the blue agent restores and hardens hosts. Nodes carry two features: a
//! vulnerability in (0, 1] (the probability a red attempt on the host
//! succeeds) and a compromised flag. Blue and red move within the same step,
//! blue resolving first; the reward is the safe-host ratio plus terminal
//! bonuses.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::graph::AttributedGraph;
use crate::policy::{ActionInstance, ActionLayout, ActionSpace};
use crate::tensor::Tensor2;

/// Blue node actions, in slot order.
pub const RESTORE: usize = 0;
pub const UPGRADE: usize = 1;

/// Vulnerability decrease per Upgrade.
pub const UPGRADE_DELTA: f64 = 0.2;
/// Reward bonus for surviving to the horizon.
pub const SURVIVAL_BONUS: f64 = 100.0;
/// Reward penalty when every host is compromised.
pub const TOTAL_COMPROMISE_PENALTY: f64 = -100.0;

const GENERATION_ATTEMPTS: usize = 100;

/// Heuristic attacker families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedVariant {
    /// Attacks a uniformly random uncompromised neighbor of its territory.
    Spread,
    /// Pushes along a shortest path from its entry toward a target host,
    /// recomputing when the path is broken.
    BLine,
    /// Breadth-first: always attacks the shallowest reachable host (by BFS
    /// depth from the entry), ties broken by index.
    Meander,
}

impl RedVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            RedVariant::Spread => "spread",
            RedVariant::BLine => "b_line",
            RedVariant::Meander => "meander",
        }
    }
}

/// Attacker configuration. `sleepy` wraps the variant with a 50% chance of
/// no-op each turn. B-Line requires a target; `None` resolves to the node
/// farthest from the entry at environment construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedSpec {
    pub variant: RedVariant,
    #[serde(default)]
    pub sleepy: bool,
    #[serde(default)]
    pub target: Option<usize>,
}

impl RedSpec {
    pub fn new(variant: RedVariant) -> Self {
        Self { variant, sleepy: false, target: None }
    }

    pub fn sleepy(variant: RedVariant) -> Self {
        Self { variant, sleepy: true, target: None }
    }

    pub fn label(&self) -> String {
        if self.sleepy {
            format!("sleepy_{}", self.variant.as_str())
        } else {
            self.variant.as_str().to_string()
        }
    }
}

/// Scenario parameters. Seeds are supplied separately so one scenario can
/// fan out into many episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: f64,
    pub horizon: usize,
    pub vuln_range: (f64, f64),
    pub vuln_floor: f64,
    /// `None` runs without an attacker (debug/test mode: no entry compromise).
    pub red: Option<RedSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 10,
            p: 0.4,
            horizon: 500,
            vuln_range: (0.2, 0.8),
            vuln_floor: 0.01,
            red: Some(RedSpec::new(RedVariant::Spread)),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n < 2 {
            return Err(EnvError::InvalidScenario(format!("n must be >= 2, got {}", self.n)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(EnvError::InvalidScenario(format!("p must be in (0, 1], got {}", self.p)));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidScenario("horizon must be positive".into()));
        }
        let (lo, hi) = self.vuln_range;
        if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
            return Err(EnvError::InvalidScenario(format!(
                "vuln_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if !(self.vuln_floor > 0.0 && self.vuln_floor <= lo) {
            return Err(EnvError::InvalidScenario(format!(
                "vuln_floor must be in (0, {lo}], got {}",
                self.vuln_floor
            )));
        }
        if let Some(red) = &self.red {
            if let Some(t) = red.target {
                if t >= self.n {
                    return Err(EnvError::InvalidScenario(format!(
                        "red target {t} out of range for n={}",
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full simulator state. The observation graph's feature columns
/// [vulnerability, compromised] mirror the vectors here after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub graph: AttributedGraph,
    pub vulnerability: Vec<f64>,
    pub compromised: Vec<bool>,
    pub initial_vulnerability: Vec<f64>,
    pub red_entry: usize,
    pub step: usize,
    pub horizon: usize,
}

impl EnvState {
    pub fn compromised_count(&self) -> usize {
        self.compromised.iter().filter(|&&c| c).count()
    }

    fn sync_features(&mut self) {
        let n = self.graph.num_nodes();
        let feats = Tensor2::from_fn(n, 2, |r, c| {
            if c == 0 {
                self.vulnerability[r]
            } else if self.compromised[r] {
                1.0
            } else {
                0.0
            }
        });
        self.graph = self.graph.with_features(feats).expect("row count unchanged");
    }
}

/// The red move taken inside one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RedMove {
    NoOp,
    Attempt { target: usize },
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub compromised: usize,
    pub red_move: Option<RedMove>,
    pub red_succeeded: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: AttributedGraph,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Samples a connected Erdos-Renyi graph, draws vulnerabilities uniformly
/// from the configured range, and marks one uniformly random entry node as
/// compromised. All nodes are actionable; there are no actionable edges.
pub fn generate_network(cfg: &ScenarioConfig, graph_seed: u64) -> Result<EnvState, EnvError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(graph_seed);
    let mut topology = None;
    for _ in 0..GENERATION_ATTEMPTS {
        let mut edges = Vec::new();
        for u in 0..cfg.n {
            for v in (u + 1)..cfg.n {
                if rng.gen::<f64>() < cfg.p {
                    edges.push((u, v));
                }
            }
        }
        let g = AttributedGraph::new(cfg.n, edges, Tensor2::zeros(cfg.n, 2), 0..cfg.n, [])
            .expect("generated indices are in range");
        if g.is_connected() {
            topology = Some(g);
            break;
        }
    }
    let graph =
        topology.ok_or(EnvError::Generation { n: cfg.n, p: cfg.p, attempts: GENERATION_ATTEMPTS })?;

    let (lo, hi) = cfg.vuln_range;
    let vulnerability: Vec<f64> = (0..cfg.n).map(|_| rng.gen_range(lo..=hi)).collect();
    let red_entry = rng.gen_range(0..cfg.n);
    let mut compromised = vec![false; cfg.n];
    compromised[red_entry] = true;

    let mut state = EnvState {
        graph,
        initial_vulnerability: vulnerability.clone(),
        vulnerability,
        compromised,
        red_entry,
        step: 0,
        horizon: cfg.horizon,
    };
    state.sync_features();
    Ok(state)
}

/// Safe-host ratio for the per-step reward.
pub fn compute_reward(num_nodes: usize, compromised: usize) -> f64 {
    (num_nodes - compromised) as f64 / num_nodes as f64
}

/// Episode return scaled so a perfect episode scores exactly 1.0.
pub fn normalize_score(total_reward: f64, horizon: usize) -> f64 {
    total_reward / (horizon as f64 + SURVIVAL_BONUS)
}

/// The blue action space of this environment.
pub fn action_space() -> ActionSpace {
    ActionSpace::nodes_only(&["restore", "upgrade"])
}

pub(crate) struct RedRuntime {
    spec: RedSpec,
    target: usize,
    adj: Vec<Vec<usize>>,
    depth_from_entry: Vec<usize>,
    bline_path: Option<Vec<usize>>,
}

impl RedRuntime {
    fn new(spec: RedSpec, state: &EnvState) -> Self {
        let adj = state.graph.adjacency_lists();
        let depth_from_entry = bfs_depths(&adj, state.red_entry);
        let target = spec.target.unwrap_or_else(|| {
            // farthest node from the entry, ties toward the lowest index
            depth_from_entry
                .iter()
                .enumerate()
                .max_by_key(|&(i, &d)| (d, std::cmp::Reverse(i)))
                .map(|(i, _)| i)
                .unwrap_or(0)
        });
        Self { spec, target, adj, depth_from_entry, bline_path: None }
    }

    /// Picks a move for this turn. The sleepy gate draws first; with no
    /// compromised territory the move is a re-entry attempt at the original
    /// entry node.
    fn choose(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> RedMove {
        if self.spec.sleepy {
            let u: f64 = rng.gen();
            if u < 0.5 {
                return RedMove::NoOp;
            }
        }
        if state.compromised_count() == 0 {
            return RedMove::Attempt { target: state.red_entry };
        }
        match self.spec.variant {
            RedVariant::Spread => self.spread(state, rng),
            RedVariant::BLine => self.bline(state),
            RedVariant::Meander => self.meander(state),
        }
    }

    fn frontier(&self, state: &EnvState) -> Vec<usize> {
        (0..state.graph.num_nodes())
            .filter(|&v| {
                !state.compromised[v] && self.adj[v].iter().any(|&u| state.compromised[u])
            })
            .collect()
    }

    fn spread(&self, state: &EnvState, rng: &mut dyn RngCore) -> RedMove {
        let candidates = self.frontier(state);
        if candidates.is_empty() {
            return RedMove::NoOp;
        }
        let pick = (rng.next_u64() % candidates.len() as u64) as usize;
        RedMove::Attempt { target: candidates[pick] }
    }

    fn meander(&self, state: &EnvState) -> RedMove {
        self.frontier(state)
            .into_iter()
            .min_by_key(|&v| (self.depth_from_entry[v], v))
            .map(|v| RedMove::Attempt { target: v })
            .unwrap_or(RedMove::NoOp)
    }

    fn bline(&mut self, state: &EnvState) -> RedMove {
        if state.compromised[self.target] {
            return RedMove::NoOp;
        }
        if let Some(path) = &self.bline_path {
            if let Some(next) = next_on_path(path, &state.compromised) {
                return RedMove::Attempt { target: next };
            }
        }
        // path broken (or never computed): shortest route from current
        // territory to the target
        let sources: Vec<usize> =
            (0..state.compromised.len()).filter(|&v| state.compromised[v]).collect();
        match bfs_path_from_set(&self.adj, &sources, self.target) {
            Some(path) => {
                let next = path[1];
                self.bline_path = Some(path);
                RedMove::Attempt { target: next }
            }
            None => RedMove::NoOp,
        }
    }
}

/// First uncompromised node along the cached path, provided the prefix up to
/// it is still compromised territory.
fn next_on_path(path: &[usize], compromised: &[bool]) -> Option<usize> {
    for (i, &v) in path.iter().enumerate() {
        if !compromised[v] {
            return if i == 0 { None } else { Some(v) };
        }
    }
    None
}

fn bfs_depths(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut depth = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::from([start]);
    depth[start] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    depth
}

/// Multi-source BFS shortest path; returns [source, ..., target]. Sorted
/// adjacency and FIFO order make ties deterministic (lowest index wins).
fn bfs_path_from_set(adj: &[Vec<usize>], sources: &[usize], target: usize) -> Option<Vec<usize>> {
    let mut parent = vec![usize::MAX; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    for &s in sources {
        seen[s] = true;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        if u == target {
            let mut path = vec![u];
            let mut cur = u;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}

/// A live episode.
pub struct NetDefEnv {
    cfg: ScenarioConfig,
    state: EnvState,
    red: Option<RedRuntime>,
    red_rng: ChaCha20Rng,
    done: bool,
    total_reward: f64,
}

impl NetDefEnv {
    /// Generates a fresh episode. The trajectory of a deterministic blue
    /// policy is fully determined by (graph_seed, red_seed).
    pub fn new(cfg: ScenarioConfig, graph_seed: u64, red_seed: u64) -> Result<Self, EnvError> {
        let state = generate_network(&cfg, graph_seed)?;
        Self::from_parts(cfg, state, red_seed)
    }

    /// Builds an episode around an explicit state (scenario replay, tests).
    pub fn from_parts(cfg: ScenarioConfig, mut state: EnvState, red_seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let red = cfg.red.map(|spec| RedRuntime::new(spec, &state));
        if red.is_none() {
            // attacker-free mode: nothing is compromised at t=0
            state.compromised = vec![false; state.graph.num_nodes()];
            state.sync_features();
        }
        Ok(Self {
            cfg,
            state,
            red,
            red_rng: ChaCha20Rng::seed_from_u64(red_seed),
            done: false,
            total_reward: 0.0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observation(&self) -> AttributedGraph {
        self.state.graph.clone()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn horizon(&self) -> usize {
        self.state.horizon
    }

    /// Resolved target of the B-Line attacker, if one is running.
    pub fn red_target(&self) -> Option<usize> {
        self.red.as_ref().map(|r| r.target)
    }

    /// Valid blue actions and the full slot mask. Restore is always valid;
    /// Upgrade only while the vulnerability sits above the floor.
    pub fn blue_actions(&self) -> (Vec<ActionInstance>, Vec<bool>) {
        let layout = ActionLayout::of(&self.state.graph, &action_space());
        let mut mask = vec![false; layout.slot_count()];
        let mut valid = Vec::new();
        for slot in 0..layout.slot_count() {
            let inst = layout.instance(slot).expect("slot in range");
            let ok = match inst {
                ActionInstance::Node { action: RESTORE, .. } => true,
                ActionInstance::Node { action: UPGRADE, node } => {
                    self.state.vulnerability[node] > self.cfg.vuln_floor
                }
                _ => false,
            };
            mask[slot] = ok;
            if ok {
                valid.push(inst);
            }
        }
        (valid, mask)
    }

    pub fn action_mask(&self) -> Vec<bool> {
        self.blue_actions().1
    }

    /// Advances one step: blue resolves first, then red, then the reward is
    /// computed on the post-resolution state.
    pub fn step(&mut self, blue: &ActionInstance) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        let layout = ActionLayout::of(&self.state.graph, &action_space());
        let slot = layout
            .slot(blue)
            .ok_or_else(|| EnvError::MaskedAction(format!("{blue:?}")))?;
        let (_, mask) = self.blue_actions();
        if !mask[slot] {
            return Err(EnvError::MaskedAction(format!("{blue:?}")));
        }

        match *blue {
            ActionInstance::Node { action: RESTORE, node } => {
                self.state.compromised[node] = false;
                self.state.vulnerability[node] = self.state.initial_vulnerability[node];
            }
            ActionInstance::Node { action: UPGRADE, node } => {
                self.state.vulnerability[node] =
                    (self.state.vulnerability[node] - UPGRADE_DELTA).max(self.cfg.vuln_floor);
            }
            _ => unreachable!("masked slots rejected above"),
        }

        let mut red_move = None;
        let mut red_succeeded = false;
        if let Some(red) = &mut self.red {
            let mv = red.choose(&self.state, &mut self.red_rng);
            if let RedMove::Attempt { target } = mv {
                let roll: f64 = self.red_rng.gen();
                if roll < self.state.vulnerability[target] {
                    self.state.compromised[target] = true;
                    red_succeeded = true;
                }
            }
            red_move = Some(mv);
        }

        self.state.step += 1;
        let n = self.state.graph.num_nodes();
        let c = self.state.compromised_count();
        let mut reward = compute_reward(n, c);
        if c == n {
            reward += TOTAL_COMPROMISE_PENALTY;
            self.done = true;
        } else if self.state.step >= self.state.horizon {
            reward += SURVIVAL_BONUS;
            self.done = true;
        }
        self.state.sync_features();
        self.total_reward += reward;

        Ok(StepOutcome {
            observation: self.state.graph.clone(),
            reward,
            done: self.done,
            info: StepInfo {
                step: self.state.step,
                compromised: c,
                red_move,
                red_succeeded,
            },
        })
    }
}

impl crate::ppo::Environment for NetDefEnv {
    fn action_space(&self) -> ActionSpace {
        action_space()
    }

    fn observation(&self) -> AttributedGraph {
        self.state.graph.clone()
    }

    fn action_mask(&self) -> Vec<bool> {
        self.blue_actions().1
    }

    fn step(&mut self, action: &ActionInstance) -> Result<crate::ppo::EnvStep, EnvError> {
        let out = NetDefEnv::step(self, action)?;
        Ok(crate::ppo::EnvStep { observation: out.observation, reward: out.reward, done: out.done })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn restore(node: usize) -> ActionInstance {
        ActionInstance::Node { action: RESTORE, node }
    }

    fn upgrade(node: usize) -> ActionInstance {
        ActionInstance::Node { action: UPGRADE, node }
    }

    /// Hand-built state: given topology, uniform vulnerability, entry 0.
    fn hand_state(
        n: usize,
        edges: &[(usize, usize)],
        vuln: f64,
        horizon: usize,
    ) -> (ScenarioConfig, EnvState) {
        let cfg = ScenarioConfig {
            n,
            horizon,
            ..ScenarioConfig::default()
        };
        let graph = AttributedGraph::new(
            n,
            edges.iter().copied(),
            Tensor2::zeros(n, 2),
            0..n,
            [],
        )
        .unwrap();
        let mut compromised = vec![false; n];
        compromised[0] = true;
        let mut state = EnvState {
            graph,
            vulnerability: vec![vuln; n],
            initial_vulnerability: vec![vuln; n],
            compromised,
            red_entry: 0,
            step: 0,
            horizon,
        };
        state.sync_features();
        (cfg, state)
    }

    #[test]
    fn complete_graph_has_all_edges() {
        let cfg = ScenarioConfig { n: 10, p: 1.0, ..Default::default() };
        let state = generate_network(&cfg, 7).unwrap();
        assert_eq!(state.graph.num_edges(), 45);
        assert!(state.graph.is_connected());
        assert_eq!(state.compromised_count(), 1);
        assert!(state.compromised[state.red_entry]);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = generate_network(&cfg, 33).unwrap();
        let b = generate_network(&cfg, 33).unwrap();
        assert_eq!(a, b);
        let c = generate_network(&cfg, 34).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vulnerabilities_within_range_and_features_synced() {
        let cfg = ScenarioConfig::default();
        let state = generate_network(&cfg, 5).unwrap();
        for (i, &v) in state.vulnerability.iter().enumerate() {
            assert!((0.2..=0.8).contains(&v));
            assert_eq!(state.graph.features().get(i, 0), v);
            let cf = state.graph.features().get(i, 1);
            assert_eq!(cf, if state.compromised[i] { 1.0 } else { 0.0 });
        }
    }

    /// Independent conditional sampler for the edge-count oracle: fresh rng
    /// stream, union-find connectivity instead of the graph's BFS.
    fn oracle_connected_er_edges(n: usize, p: f64, seed: u64) -> usize {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        loop {
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.gen::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(parent: &mut Vec<usize>, x: usize) -> usize {
                if parent[x] != x {
                    let root = find(parent, parent[x]);
                    parent[x] = root;
                }
                parent[x]
            }
            for &(u, v) in &edges {
                let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                parent[ru] = rv;
            }
            let root = find(&mut parent, 0);
            if (0..n).all(|x| find(&mut parent, x) == root) {
                return edges.len();
            }
        }
    }

    #[test]
    fn monte_carlo_edge_count_near_expected() {
        // n=40, p=0.1: unconditional mean p * C(40,2) = 78; conditioning on
        // connectivity shifts it up. Compare against an independent
        // conditional sampler rather than the unconditional formula.
        let cfg = ScenarioConfig { n: 40, p: 0.1, ..Default::default() };
        let samples = 1000u64;
        let mean = (0..samples)
            .map(|s| generate_network(&cfg, 10_000 + s).unwrap().graph.num_edges() as f64)
            .sum::<f64>()
            / samples as f64;
        let oracle_mean = (0..samples)
            .map(|s| oracle_connected_er_edges(40, 0.1, 77_000 + s) as f64)
            .sum::<f64>()
            / samples as f64;
        // both estimators have sigma_mean ~ sqrt(78 * 0.9 / 1000)
        let sigma_mean = (78.0 * 0.9 / samples as f64).sqrt();
        let sigma_combined = (2.0_f64).sqrt() * sigma_mean;
        assert!(
            (mean - oracle_mean).abs() < 3.0 * sigma_combined,
            "env mean {mean} vs oracle mean {oracle_mean} (sigma {sigma_combined})"
        );
        // the conditional mean sits above the unconditional 78
        assert!(mean > 78.0, "connectivity conditioning should raise the mean: {mean}");
        assert!((mean - 78.0).abs() < 5.0, "mean {mean} implausibly far from 78");
    }

    #[test]
    fn blue_mask_shape_and_floor_rule() {
        let (cfg, mut state) = hand_state(4, &[(0, 1), (1, 2), (2, 3)], 0.5, 100);
        state.vulnerability[2] = cfg.vuln_floor;
        state.sync_features();
        let env = NetDefEnv::from_parts(cfg, state, 0).unwrap();
        let (valid, mask) = env.blue_actions();
        assert_eq!(mask.len(), 8);
        // every restore valid, every upgrade valid except node 2
        assert_eq!(valid.len(), 7);
        let layout = ActionLayout::of(&env.state.graph, &action_space());
        let blocked = layout.slot(&upgrade(2)).unwrap();
        assert!(!mask[blocked]);
        assert!(mask.iter().filter(|&&m| m).count() >= 4); // restores at minimum
    }

    #[test]
    fn upgrade_and_restore_semantics() {
        let (cfg, mut state) = hand_state(3, &[(0, 1), (1, 2)], 0.7, 100);
        state.vulnerability[1] = 0.7;
        state.compromised[1] = true;
        state.sync_features();
        let mut env = NetDefEnv::from_parts(cfg, state, 1).unwrap();
        env.red = None; // isolate blue dynamics

        // Upgrade decreases vulnerability by exactly 0.2
        env.step(&upgrade(1)).unwrap();
        assert!((env.state.vulnerability[1] - 0.5).abs() < 1e-12);
        env.step(&upgrade(1)).unwrap();
        env.step(&upgrade(1)).unwrap();
        assert!((env.state.vulnerability[1] - 0.1).abs() < 1e-12);
        // next upgrade clamps at the floor
        env.step(&upgrade(1)).unwrap();
        assert_eq!(env.state.vulnerability[1], env.cfg.vuln_floor);

        // Restore clears the flag and resets vulnerability to its initial value
        assert!(env.state.compromised[1]);
        env.step(&restore(1)).unwrap();
        assert!(!env.state.compromised[1]);
        assert_eq!(env.state.vulnerability[1], 0.7);
    }

    #[test]
    fn masked_action_is_rejected() {
        let (cfg, mut state) = hand_state(3, &[(0, 1), (1, 2)], 0.5, 100);
        state.vulnerability[0] = cfg.vuln_floor;
        state.sync_features();
        let mut env = NetDefEnv::from_parts(cfg, state, 0).unwrap();
        assert!(matches!(env.step(&upgrade(0)), Err(EnvError::MaskedAction(_))));
        assert!(matches!(
            env.step(&ActionInstance::Node { action: RESTORE, node: 99 }),
            Err(EnvError::MaskedAction(_))
        ));
    }

    #[test]
    fn certain_attack_always_succeeds() {
        let (cfg, state) = hand_state(3, &[(0, 1), (1, 2)], 1.0, 100);
        let mut env = NetDefEnv::from_parts(cfg, state, 123).unwrap();
        let out = env.step(&restore(2)).unwrap(); // harmless blue move
        assert!(out.info.red_succeeded);
        assert_eq!(env.state.compromised_count(), 2);
    }

    #[test]
    fn bline_walks_the_unique_path() {
        let (mut cfg, state) = hand_state(3, &[(0, 1), (1, 2)], 1.0, 100);
        cfg.red = Some(RedSpec { variant: RedVariant::BLine, sleepy: false, target: Some(2) });
        let mut env = NetDefEnv::from_parts(cfg, state, 9).unwrap();
        let o1 = env.step(&upgrade(0)).unwrap();
        assert_eq!(o1.info.red_move, Some(RedMove::Attempt { target: 1 }));
        let o2 = env.step(&upgrade(0)).unwrap();
        assert_eq!(o2.info.red_move, Some(RedMove::Attempt { target: 2 }));
        assert!(o2.done); // all three hosts compromised
    }

    #[test]
    fn bline_pushes_again_after_midpath_restore() {
        // restoring the next hop does not break the path prefix, so red
        // simply re-attempts the same hop
        let (mut cfg, state) = hand_state(4, &[(0, 1), (0, 2), (1, 3), (2, 3)], 1.0, 100);
        cfg.red = Some(RedSpec { variant: RedVariant::BLine, sleepy: false, target: Some(3) });
        let mut env = NetDefEnv::from_parts(cfg, state, 9).unwrap();
        let o1 = env.step(&upgrade(0)).unwrap();
        assert_eq!(o1.info.red_move, Some(RedMove::Attempt { target: 1 }));
        let o2 = env.step(&restore(1)).unwrap();
        assert_eq!(o2.info.red_move, Some(RedMove::Attempt { target: 1 }));
    }

    #[test]
    fn bline_recomputes_when_path_broken() {
        // diamond: 0-1, 0-2, 1-3, 2-3; target 3. After red takes node 1,
        // blue restores node 0, severing the cached path's source; red
        // recomputes from its remaining territory {1} straight to 3.
        let (mut cfg, state) = hand_state(4, &[(0, 1), (0, 2), (1, 3), (2, 3)], 1.0, 100);
        cfg.red = Some(RedSpec { variant: RedVariant::BLine, sleepy: false, target: Some(3) });
        let mut env = NetDefEnv::from_parts(cfg, state, 9).unwrap();
        let o1 = env.step(&upgrade(0)).unwrap();
        assert_eq!(o1.info.red_move, Some(RedMove::Attempt { target: 1 }));
        let o2 = env.step(&restore(0)).unwrap();
        assert_eq!(o2.info.red_move, Some(RedMove::Attempt { target: 3 }));
        assert!(env.state().compromised[3]);
        // target held: red goes quiet
        let o3 = env.step(&restore(0)).unwrap();
        assert_eq!(o3.info.red_move, Some(RedMove::NoOp));
    }

    #[test]
    fn meander_attacks_star_leaves_in_index_order() {
        let (mut cfg, state) = hand_state(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], 1.0, 100);
        cfg.red = Some(RedSpec::new(RedVariant::Meander));
        let mut env = NetDefEnv::from_parts(cfg, state, 4).unwrap();
        for expect in 1..=4 {
            let out = env.step(&upgrade(0)).unwrap();
            assert_eq!(out.info.red_move, Some(RedMove::Attempt { target: expect }));
        }
    }

    #[test]
    fn sleepy_gate_draws_first() {
        // rigged rng: draws ~0.3 then ~0.7 -> no-op then the base move
        use rand::rngs::mock::StepRng;
        let (mut cfg, state) = hand_state(3, &[(0, 1), (1, 2)], 1.0, 100);
        cfg.red = Some(RedSpec::sleepy(RedVariant::Meander));
        let mut red = RedRuntime::new(cfg.red.unwrap(), &state);
        let inc = (0.4_f64 * 2.0_f64.powi(64)) as u64;
        let start = (0.3_f64 * 2.0_f64.powi(64)) as u64;
        let mut rng = StepRng::new(start, inc);
        assert_eq!(red.choose(&state, &mut rng), RedMove::NoOp);
        assert_eq!(red.choose(&state, &mut rng), RedMove::Attempt { target: 1 });
    }

    #[test]
    fn reward_values() {
        assert_eq!(compute_reward(10, 0), 1.0);
        assert!((compute_reward(10, 3) - 0.7).abs() < 1e-12);
        assert_eq!(compute_reward(10, 10), 0.0);
    }

    #[test]
    fn normalize_score_perfect_and_worst() {
        // all-safe episode: horizon * 1.0 + bonus
        assert_eq!(normalize_score(500.0 + 100.0, 500), 1.0);
        // immediate total compromise: 0 - 100
        let s = normalize_score(-100.0, 500);
        assert!((s - (-1.0 / 6.0)).abs() < 1e-9);
    }

    #[test]
    fn total_compromise_and_horizon_rewards() {
        // n=2 path, vuln 1.0: red takes node 1 at step 1 -> total compromise
        let (cfg, state) = hand_state(2, &[(0, 1)], 1.0, 100);
        let mut env = NetDefEnv::from_parts(cfg, state, 0).unwrap();
        let out = env.step(&restore(1)).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, TOTAL_COMPROMISE_PENALTY); // ratio 0 plus penalty
        assert!(matches!(env.step(&restore(0)), Err(EnvError::Terminated)));

        // attacker-free short episode earns the survival bonus
        let cfg2 = ScenarioConfig { n: 3, horizon: 3, red: None, ..Default::default() };
        let mut env2 = NetDefEnv::new(cfg2, 1, 2).unwrap();
        let mut last = None;
        for _ in 0..3 {
            last = Some(env2.step(&restore(0)).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.reward, 1.0 + SURVIVAL_BONUS);
        assert_eq!(normalize_score(env2.total_reward(), 3), 1.0);
    }

    #[test]
    fn episodes_are_bitwise_reproducible() {
        let run = || {
            let cfg = ScenarioConfig::default();
            let mut env = NetDefEnv::new(cfg, 11, 22).unwrap();
            let mut trace = Vec::new();
            // deterministic blue: always restore the lowest compromised node,
            // otherwise upgrade node 0 when possible
            for _ in 0..50 {
                let target = env.state().compromised.iter().position(|&c| c);
                let (valid, _) = env.blue_actions();
                let action = match target {
                    Some(node) => restore(node),
                    None => valid[0],
                };
                let out = env.step(&action).unwrap();
                trace.push((out.reward.to_bits(), out.info.compromised, out.info.red_move));
                if out.done {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn restore_never_increases_compromise_and_red_never_decreases() {
        let cfg = ScenarioConfig::default();
        let mut env = NetDefEnv::new(cfg, 3, 4).unwrap();
        let mut last_c = env.state().compromised_count();
        for i in 0..200 {
            if env.is_done() {
                break;
            }
            let before = env.state().compromised_count();
            let node = i % env.state().graph.num_nodes();
            let out = env.step(&restore(node)).unwrap();
            // restore can drop count by at most 1; red can raise it by at most 1
            assert!(out.info.compromised >= before.saturating_sub(1));
            assert!(out.info.compromised <= before + 1);
            for &v in &env.state().vulnerability {
                assert!(v >= env.config().vuln_floor && v <= 1.0);
            }
            last_c = out.info.compromised;
        }
        let _ = last_c;
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let bad_n = ScenarioConfig { n: 1, ..Default::default() };
        assert!(bad_n.validate().is_err());
        let bad_p = ScenarioConfig { p: 0.0, ..Default::default() };
        assert!(bad_p.validate().is_err());
        let bad_target = ScenarioConfig {
            red: Some(RedSpec { variant: RedVariant::BLine, sleepy: false, target: Some(99) }),
            ..Default::default()
        };
        assert!(bad_target.validate().is_err());
    }
}
