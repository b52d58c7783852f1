//! Explicit-state exploration of the network as a discrete-time Markov
//! chain.
//!
//! A state's successors come from running one full cycle under every
//! combination of the routers' generation outcomes. Exploration is
//! breadth-first, so the first state found with some property is at minimal
//! depth and its parent chain is a shortest path from the initial state.

mod key;
mod reach;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{generation_branches, step_with_choices, CycleEvents, CycleRecord, EngineConfig, Trace};
use crate::error::{ConfigError, EngineFault, ExploreError};
use crate::mesh::{NocState, RouterId};
use crate::traffic::GenOutcome;

pub use key::{ClockMode, KeyCodec, StateKey};
pub use reach::{exact_cdf, exact_reachability, ReachQuery};

/// One way a cycle can go: the generation outcomes of every router and
/// their joint probability.
#[derive(Debug, Clone)]
pub struct Branch {
    pub prob: f64,
    pub choices: Vec<GenOutcome>,
}

/// Mixed-radix enumeration over per-router outcome lists, router 0 most
/// significant.
pub struct Branches {
    lists: Vec<Vec<(f64, GenOutcome)>>,
    total: u64,
}

impl Branches {
    pub fn of(state: &NocState, cfg: &EngineConfig) -> Result<Branches, ExploreError> {
        let lists = generation_branches(state, cfg);
        let total = lists
            .iter()
            .try_fold(1u64, |acc, l| acc.checked_mul(l.len() as u64))
            .filter(|&t| t <= u64::from(u32::MAX))
            .ok_or_else(|| ConfigError::invalid("traffic", "too many generation outcomes per cycle to enumerate"))?;
        Ok(Branches { lists, total })
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn get(&self, mut index: u64) -> Branch {
        let mut choices = vec![
            GenOutcome {
                inject: None,
                counters: Default::default()
            };
            self.lists.len()
        ];
        let mut prob = 1.0;
        for (slot, list) in choices.iter_mut().zip(&self.lists).rev() {
            let len = list.len() as u64;
            let (p, outcome) = list[(index % len) as usize];
            index /= len;
            *slot = outcome;
            prob *= p;
        }
        Branch { prob, choices }
    }
}

/// Runs one cycle with the given outcomes and no engine-side assertions;
/// violations are for the caller to detect.
pub fn apply_branch(
    state: &NocState,
    cfg: &EngineConfig,
    choices: &[GenOutcome],
) -> Result<(NocState, CycleEvents), EngineFault> {
    let mut next = state.clone();
    let events = step_with_choices(&mut next, cfg, choices, None)?;
    Ok((next, events))
}

/// Successor distribution of one state, identical successors merged.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub entries: Vec<(f64, StateKey)>,
}

impl TransitionSet {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|(p, _)| p).sum()
    }
}

pub fn transitions(cfg: &EngineConfig, codec: &KeyCodec, state: &NocState) -> Result<TransitionSet, ExploreError> {
    let cfg = unchecked(cfg);
    let branches = Branches::of(state, &cfg)?;
    let mut merged: indexmap::IndexMap<StateKey, f64> = indexmap::IndexMap::new();
    for i in 0..branches.len() {
        let b = branches.get(i);
        let (next, _) = apply_branch(state, &cfg, &b.choices)?;
        *merged.entry(codec.encode(&next)).or_insert(0.0) += b.prob;
    }
    Ok(TransitionSet {
        entries: merged.into_iter().map(|(k, p)| (p, k)).collect(),
    })
}

fn unchecked(cfg: &EngineConfig) -> EngineConfig {
    let mut cfg = cfg.clone();
    cfg.check_invariants = false;
    cfg
}

/// The checked properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// No router ever generates a flit addressed to itself.
    NoSelfFlits,
    /// Every ordered pair of distinct routers can see a flit generated.
    AllDestinations,
    /// No buffer ever holds more than the buffer size.
    BufferBound,
    /// Each channel carries at most one flit per cycle and each buffer
    /// receives at most one.
    ChannelOnce,
    /// Every priority list is a permutation of the five directions.
    PriorityPermutation,
}

impl Property {
    pub const ALL: [Property; 5] = [
        Property::NoSelfFlits,
        Property::AllDestinations,
        Property::BufferBound,
        Property::ChannelOnce,
        Property::PriorityPermutation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::NoSelfFlits => "no_self_flits",
            Property::AllDestinations => "all_destinations",
            Property::BufferBound => "buffer_bound",
            Property::ChannelOnce => "channel_once",
            Property::PriorityPermutation => "priority_permutation",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Property, ConfigError> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ConfigError::invalid("properties", format!("unknown property `{s}`")))
    }
}

/// A cycle taken from an explored state: index of the state and of the
/// branch in its [`Branches`] enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub from: u32,
    pub branch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreOptions {
    pub max_states: usize,
    pub clock: ClockMode,
    /// Worker threads for successor computation. Results do not depend on
    /// it.
    pub jobs: usize,
    /// Encode complete priority lists and last activities instead of the
    /// behaviourally sufficient projection.
    pub exact_keys: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            max_states: 20_000_000,
            clock: ClockMode::Reduced,
            jobs: 1,
            exact_keys: false,
        }
    }
}

/// The explored part of the reachable state space.
pub struct StateGraph {
    cfg: EngineConfig,
    codec: KeyCodec,
    states: IndexSet<StateKey>,
    /// How each state other than the initial one was first reached.
    parent: Vec<Step>,
    complete: bool,
    transitions: u64,
    first_violation: [Option<Step>; 5],
    generated: Vec<Option<Step>>,
    /// First transition the engine could not execute.
    fault: Option<(Step, EngineFault)>,
}

/// What one transition showed.
#[derive(Debug, Default, Clone)]
struct Observation {
    self_flit: bool,
    overflow: bool,
    channel_reuse: bool,
    bad_priority: bool,
    generated: Vec<(RouterId, RouterId)>,
}

fn observe(events: &CycleEvents, next: &NocState, buffer_size: usize) -> Observation {
    let mut obs = Observation::default();
    for (id, ev) in events.routers.iter().enumerate() {
        if let Some(dest) = ev.injected {
            obs.self_flit |= dest == id;
            obs.generated.push((id, dest));
        }
        obs.overflow |= usize::from(ev.peak_len) > buffer_size;
        obs.channel_reuse |= ev.channel_use.iter().any(|&u| u > 1) || ev.max_received > 1;
    }
    for r in &next.routers {
        obs.overflow |= r.ports.iter().any(|p| p.buffer.len() > buffer_size);
        obs.bad_priority |= !r.priority_is_permutation();
    }
    obs
}

struct Expanded {
    branch: u32,
    outcome: Result<(StateKey, Observation), EngineFault>,
}

fn expand(cfg: &EngineConfig, codec: &KeyCodec, key: &StateKey) -> Result<Vec<Expanded>, ExploreError> {
    let state = codec.decode_key(key);
    let branches = Branches::of(&state, cfg)?;
    let mut out = Vec::with_capacity(branches.len() as usize);
    let mut sum = 0.0;
    for i in 0..branches.len() {
        let b = branches.get(i);
        sum += b.prob;
        let outcome = apply_branch(&state, cfg, &b.choices)
            .map(|(next, events)| (codec.encode(&next), observe(&events, &next, cfg.buffer_size)));
        out.push(Expanded {
            branch: i as u32,
            outcome,
        });
    }
    debug_assert!((sum - 1.0).abs() < 1e-9, "branch probabilities sum to {sum}");
    Ok(out)
}

const CHUNK: usize = 4096;

/// Breadth-first exploration from the empty network.
///
/// Stops adding states once `max_states` are known; the graph is then
/// marked incomplete and property checks that need the full space report
/// inconclusive results.
pub fn explore(cfg: &EngineConfig, options: ExploreOptions) -> Result<StateGraph, ExploreError> {
    let cfg = unchecked(cfg);
    let mut codec = KeyCodec::new(&cfg, options.clock);
    if options.exact_keys {
        codec = codec.exact_priority().with_activity();
    }
    let routers = cfg.routers();
    let mut g = StateGraph {
        codec: codec.clone(),
        states: IndexSet::new(),
        parent: Vec::new(),
        complete: true,
        transitions: 0,
        first_violation: [None; 5],
        generated: vec![None; routers * routers],
        fault: None,
        cfg: cfg.clone(),
    };
    g.states.insert(codec.encode(&cfg.initial_state()));
    g.parent.push(Step {
        from: u32::MAX,
        branch: 0,
    });
    if options.max_states == 0 {
        g.complete = false;
        return Ok(g);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| ConfigError::invalid("jobs", e.to_string()))?;

    let mut next = 0usize;
    'outer: while next < g.states.len() {
        let end = (next + CHUNK).min(g.states.len());
        let keys: Vec<&StateKey> = (next..end).map(|i| g.states.get_index(i).expect("in range")).collect();
        let expanded: Vec<Vec<Expanded>> = pool.install(|| {
            keys.par_iter()
                .map(|k| expand(&cfg, &codec, k))
                .collect::<Result<_, _>>()
        })?;
        for (offset, succ) in expanded.into_iter().enumerate() {
            let from = (next + offset) as u32;
            for e in succ {
                g.transitions += 1;
                let step = Step { from, branch: e.branch };
                let (key, obs) = match e.outcome {
                    Ok(ok) => ok,
                    Err(fault) => {
                        g.fault.get_or_insert((step, fault));
                        continue;
                    }
                };
                g.note(step, &obs);
                if !g.states.contains(&key) {
                    if g.states.len() >= options.max_states {
                        g.complete = false;
                        break 'outer;
                    }
                    g.states.insert(key);
                    g.parent.push(step);
                }
            }
        }
        next = end;
    }
    Ok(g)
}

impl StateGraph {
    fn note(&mut self, step: Step, obs: &Observation) {
        let flags = [
            (Property::NoSelfFlits, obs.self_flit),
            (Property::BufferBound, obs.overflow),
            (Property::ChannelOnce, obs.channel_reuse),
            (Property::PriorityPermutation, obs.bad_priority),
        ];
        for (p, bad) in flags {
            if bad && self.first_violation[p.slot()].is_none() {
                self.first_violation[p.slot()] = Some(step);
            }
        }
        let n = self.cfg.routers();
        for &(src, dst) in &obs.generated {
            let slot = &mut self.generated[src * n + dst];
            if slot.is_none() {
                *slot = Some(step);
            }
        }
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn transition_count(&self) -> u64 {
        self.transitions
    }

    /// True when every reachable state was visited and every transition
    /// executed.
    pub fn is_complete(&self) -> bool {
        self.complete && self.fault.is_none()
    }

    /// The first engine fault hit while exploring, with the path leading to
    /// the faulting state.
    pub fn fault(&self) -> Option<&EngineFault> {
        self.fault.as_ref().map(|(_, f)| f)
    }

    fn inconclusive_reason(&self) -> String {
        match &self.fault {
            Some((_, f)) => format!("engine fault: {f}"),
            None => format!("state budget reached at {} states", self.states.len()),
        }
    }

    fn inconclusive(&self) -> Verdict {
        Verdict::Inconclusive {
            states: self.states.len(),
            reason: self.inconclusive_reason(),
        }
    }

    pub fn codec(&self) -> &KeyCodec {
        &self.codec
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn key(&self, index: usize) -> &StateKey {
        self.states.get_index(index).expect("state index in range")
    }

    pub fn index_of(&self, key: &StateKey) -> Option<usize> {
        self.states.get_index_of(key)
    }

    pub fn state(&self, index: usize) -> NocState {
        self.codec.decode_key(self.key(index))
    }

    pub fn keys(&self) -> impl Iterator<Item = &StateKey> {
        self.states.iter()
    }

    /// Branch choices from the initial state to state `index`.
    fn steps_to(&self, index: usize) -> Vec<Step> {
        let mut steps = Vec::new();
        let mut i = index;
        while i != 0 {
            let s = self.parent[i];
            steps.push(s);
            i = s.from as usize;
        }
        steps.reverse();
        steps
    }

    /// Replays the steps to state `index` followed by `last`, checking that
    /// every intermediate state matches the stored key.
    pub fn path(&self, index: usize, last: Option<Step>) -> Result<Path, ExploreError> {
        let mut steps = self.steps_to(index);
        steps.extend(last);
        let mut state = self.cfg.initial_state();
        let mut choices = Vec::with_capacity(steps.len());
        for s in &steps {
            assert_eq!(
                self.codec.encode(&state),
                *self.key(s.from as usize),
                "replay diverged from the graph"
            );
            let b = Branches::of(&state, &self.cfg)?.get(u64::from(s.branch));
            step_with_choices(&mut state, &self.cfg, &b.choices, None)?;
            choices.push(b.choices);
        }
        let trace = replay(&self.cfg, &choices)?;
        Ok(Path { choices, trace })
    }

    fn path_for_step(&self, step: Step) -> Result<Path, ExploreError> {
        self.path(step.from as usize, Some(step))
    }

    /// Path ending with the first transition that generated `src -> dst`.
    pub fn generation_witness(&self, src: RouterId, dst: RouterId) -> Result<Option<Path>, ExploreError> {
        let n = self.cfg.routers();
        match self.generated.get(src * n + dst).copied().flatten() {
            Some(step) => self.path_for_step(step).map(Some),
            None => Ok(None),
        }
    }

    pub fn check(&self, property: Property) -> Result<Verdict, ExploreError> {
        if property == Property::AllDestinations {
            let n = self.cfg.routers();
            let missing: Vec<(RouterId, RouterId)> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .filter(|&(i, j)| self.generated[i * n + j].is_none())
                .collect();
            return Ok(if missing.is_empty() {
                Verdict::Holds
            } else if !self.is_complete() {
                self.inconclusive()
            } else {
                Verdict::Violated {
                    detail: format!("never generated: {}", fmt_pairs(&missing)),
                    path: None,
                }
            });
        }
        match self.first_violation[property.slot()] {
            Some(step) => Ok(Verdict::Violated {
                detail: format!("violated after {} cycles", self.steps_to(step.from as usize).len() + 1),
                path: Some(self.path_for_step(step)?),
            }),
            None if self.is_complete() => Ok(Verdict::Holds),
            None => Ok(self.inconclusive()),
        }
    }
}

fn fmt_pairs(pairs: &[(RouterId, RouterId)]) -> String {
    pairs
        .iter()
        .map(|(i, j)| format!("{i}->{j}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Replays explicit generation outcomes from the empty network without
/// engine assertions.
pub fn replay(cfg: &EngineConfig, choices: &[Vec<GenOutcome>]) -> Result<Trace, EngineFault> {
    let cfg = unchecked(cfg);
    let mut state = cfg.initial_state();
    let mut records = Vec::with_capacity(choices.len());
    for c in choices {
        let ev = step_with_choices(&mut state, &cfg, c, None)?;
        records.push(CycleRecord::new(ev, &state));
    }
    Ok(Trace {
        records,
        final_state: state,
    })
}

#[derive(Debug, Clone)]
pub struct Path {
    pub choices: Vec<Vec<GenOutcome>>,
    pub trace: Trace,
}

impl Path {
    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn final_state(&self) -> &NocState {
        &self.trace.final_state
    }
}

#[derive(Debug, Clone)]
pub enum Verdict {
    Holds,
    Violated { detail: String, path: Option<Path> },
    Inconclusive { states: usize, reason: String },
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Violated { .. } => "violated",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// Result of a reachability (exists-eventually) search.
#[derive(Debug, Clone)]
pub enum Reachability {
    Witness(Path),
    Unreachable,
    Inconclusive { states: usize, reason: String },
}

/// Evaluates `pred` on every explored state in breadth-first order. A
/// counterexample is a shortest path to a violating state.
pub fn check_invariant(graph: &StateGraph, pred: impl Fn(&NocState) -> bool) -> Result<Verdict, ExploreError> {
    for i in 0..graph.state_count() {
        if !pred(&graph.state(i)) {
            return Ok(Verdict::Violated {
                detail: format!("state {i} violates the invariant"),
                path: Some(graph.path(i, None)?),
            });
        }
    }
    Ok(if graph.is_complete() {
        Verdict::Holds
    } else {
        graph.inconclusive()
    })
}

/// Shortest path to a state satisfying `pred`, if any.
pub fn check_ef(graph: &StateGraph, pred: impl Fn(&NocState) -> bool) -> Result<Reachability, ExploreError> {
    for i in 0..graph.state_count() {
        if pred(&graph.state(i)) {
            return Ok(Reachability::Witness(graph.path(i, None)?));
        }
    }
    Ok(if graph.is_complete() {
        Reachability::Unreachable
    } else {
        Reachability::Inconclusive {
            states: graph.state_count(),
            reason: graph.inconclusive_reason(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Mutation;
    use crate::mesh::Direction;
    use crate::traffic::{Disabled, Fixed, Periodic};

    fn small(buffer: usize) -> EngineConfig {
        EngineConfig::new(2).unwrap().with_buffer_size(buffer).unwrap()
    }

    /// One injection slot every five cycles keeps the space small.
    fn light() -> EngineConfig {
        small(1).with_traffic(Periodic::new(1, 5).unwrap())
    }

    #[test]
    fn quiet_network_has_one_state() {
        let cfg = small(1).with_traffic(Disabled);
        let g = explore(&cfg, ExploreOptions::default()).unwrap();
        assert_eq!(g.state_count(), 1);
        assert!(g.is_complete());
        let any_flit = |s: &NocState| !s.is_drained();
        assert!(matches!(check_ef(&g, any_flit).unwrap(), Reachability::Unreachable));
        for p in Property::ALL {
            let v = g.check(p).unwrap();
            assert_eq!(v.holds(), p != Property::AllDestinations, "{p}: {v:?}");
        }
    }

    #[test]
    fn transition_probabilities_sum_to_one() {
        let cfg = light();
        let g = explore(&cfg, ExploreOptions::default()).unwrap();
        for i in (0..g.state_count()).step_by(7) {
            let t = transitions(&cfg, g.codec(), &g.state(i)).unwrap();
            assert!((t.total_probability() - 1.0).abs() < 1e-12);
            for (_, k) in &t.entries {
                assert!(g.index_of(k).is_some());
            }
        }
    }

    #[test]
    fn exploration_is_deterministic_across_jobs() {
        let cfg = light();
        let a = explore(&cfg, ExploreOptions::default()).unwrap();
        let b = explore(
            &cfg,
            ExploreOptions {
                jobs: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.state_count(), b.state_count());
        assert!(a.keys().eq(b.keys()));
    }

    #[test]
    fn state_budget_is_reported() {
        let g = explore(
            &small(1),
            ExploreOptions {
                max_states: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!g.is_complete());
        assert_eq!(g.state_count(), 10);
        assert!(matches!(
            g.check(Property::BufferBound).unwrap(),
            Verdict::Inconclusive { .. }
        ));
    }

    #[test]
    fn generation_witness_replays() {
        let g = explore(&light(), ExploreOptions::default()).unwrap();
        let p = g.generation_witness(0, 3).unwrap().expect("0->3 reachable");
        assert_eq!(p.len(), 1);
        assert_eq!(p.trace.records[0].routers[0].injected, Some(3));
        for i in 0..4 {
            assert!(g.generation_witness(i, i).unwrap().is_none());
        }
    }

    #[test]
    fn full_snapshot_mutant_overflows() {
        let cfg = small(1).with_mutation(Some(Mutation::IgnoreFullSnapshot));
        // A counterexample in a partial graph is still a counterexample.
        let g = explore(
            &cfg,
            ExploreOptions {
                max_states: 50_000,
                ..Default::default()
            },
        )
        .unwrap();
        let Verdict::Violated { path: Some(p), .. } = g.check(Property::BufferBound).unwrap() else {
            panic!("mutant not caught");
        };
        let worst = p
            .final_state()
            .routers
            .iter()
            .flat_map(|r| r.ports.iter().map(|p| p.buffer.len()))
            .max()
            .unwrap();
        let peak = p
            .trace
            .records
            .last()
            .unwrap()
            .routers
            .iter()
            .map(|r| r.peak_len)
            .max()
            .unwrap();
        assert_eq!(worst.max(usize::from(peak)), 2);
    }

    #[test]
    fn broken_arbiter_caught() {
        let cfg = light().with_mutation(Some(Mutation::BrokenArbiter));
        let g = explore(
            &cfg,
            ExploreOptions {
                max_states: 100_000,
                ..Default::default()
            },
        )
        .unwrap();
        let Verdict::Violated { path: Some(p), .. } = g.check(Property::PriorityPermutation).unwrap() else {
            panic!("mutant not caught");
        };
        assert!(p.final_state().routers.iter().any(|r| !r.priority_is_permutation()));
        let shortest = check_invariant(&g, |s| s.routers.iter().all(|r| r.priority_is_permutation())).unwrap();
        let Verdict::Violated { path: Some(q), .. } = shortest else {
            panic!()
        };
        assert_eq!(q.len(), p.len());
    }

    #[test]
    fn deterministic_traffic_has_single_successors() {
        let topo = crate::mesh::Topology::new(2).unwrap();
        let cfg = small(1).with_traffic(Fixed::new(&topo, 3, 10, &[(0, 3), (3, 0)]).unwrap());
        let g = explore(&cfg, ExploreOptions::default()).unwrap();
        for i in 0..g.state_count() {
            assert_eq!(transitions(&cfg, g.codec(), &g.state(i)).unwrap().entries.len(), 1);
        }
        let east_full = |s: &NocState| s.routers[1].port(Direction::West).buffer.is_full();
        assert!(matches!(check_ef(&g, east_full).unwrap(), Reachability::Witness(_)));
    }

    #[test]
    fn property_names_parse() {
        for p in Property::ALL {
            assert_eq!(p.name().parse::<Property>().unwrap(), p);
        }
        assert!("liveness".parse::<Property>().is_err());
    }
}
