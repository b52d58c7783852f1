//! Lock-step cycle execution.
//!
//! One clock cycle runs every phase for all routers before the next phase
//! starts: Generate, Prep, Advance, UpdatePriority, UpdateNoise, then the
//! clock tick. Generation precedes the first tick, so flits can appear and
//! move on cycle 0.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arbiter::{update_priority, Arbiter, DuplicatingArbiter, RoundRobin};
use crate::error::{ConfigError, EngineFault, Phase};
use crate::mesh::{Direction, Flit, NocState, RouterId, RouterState, Topology};
use crate::psn::{update_noise, NoiseEvents, MAX_ACTIVITY};
use crate::routing::{advance_router, AdvanceContext, RoutingPolicy, XyRouting};
use crate::traffic::{GenContext, GenOutcome, Periodic, TrafficPolicy};

/// Deliberate defects used to show that the property checker catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Pushes ignore the receiving buffer's full-at-snapshot flag.
    IgnoreFullSnapshot,
    /// Arbitration duplicates blocked entries in the priority list.
    BrokenArbiter,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub topology: Topology,
    pub buffer_size: usize,
    pub activity_thresh: u8,
    pub traffic: Arc<dyn TrafficPolicy>,
    pub routing: Arc<dyn RoutingPolicy>,
    pub arbiter: Arc<dyn Arbiter>,
    pub mutation: Option<Mutation>,
    /// Run the per-phase invariant assertions.
    pub check_invariants: bool,
}

impl EngineConfig {
    /// Defaults: buffer size 4, threshold 3, 3/10 periodic traffic, X-Y
    /// routing and round-robin arbitration.
    pub fn new(n: usize) -> Result<EngineConfig, ConfigError> {
        Ok(EngineConfig {
            topology: Topology::new(n)?,
            buffer_size: 4,
            activity_thresh: 3,
            traffic: Arc::new(Periodic::default()),
            routing: Arc::new(XyRouting),
            arbiter: Arc::new(RoundRobin),
            mutation: None,
            check_invariants: true,
        })
    }

    pub fn with_buffer_size(mut self, size: usize) -> Result<Self, ConfigError> {
        if size == 0 {
            return Err(ConfigError::invalid("buffer_size", "must be at least 1"));
        }
        self.buffer_size = size;
        Ok(self)
    }

    pub fn with_activity_thresh(mut self, t: u8) -> Result<Self, ConfigError> {
        if t > MAX_ACTIVITY {
            return Err(ConfigError::invalid("activity_thresh", format!("{t} not in [0, 5]")));
        }
        self.activity_thresh = t;
        Ok(self)
    }

    pub fn with_traffic(mut self, traffic: impl TrafficPolicy + 'static) -> Self {
        self.traffic = Arc::new(traffic);
        self
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn routers(&self) -> usize {
        self.topology.routers()
    }

    pub fn initial_state(&self) -> NocState {
        NocState::new(self.topology, self.buffer_size)
    }

    /// The arbiter actually used, after any mutation.
    pub fn effective_arbiter(&self) -> &dyn Arbiter {
        match self.mutation {
            Some(Mutation::BrokenArbiter) => &DuplicatingArbiter,
            _ => self.arbiter.as_ref(),
        }
    }
}

/// What one router did during one cycle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RouterEvents {
    /// Destination of the flit generated this cycle.
    pub injected: Option<RouterId>,
    pub services: u8,
    pub consumptions: u8,
    pub blocked: Vec<Direction>,
    /// Flits sent on each outgoing compass channel (N, E, S, W).
    pub channel_use: [u8; 4],
    /// Most pushes any one input buffer received.
    pub max_received: u8,
    /// Longest buffer observed after Generate or after Advance.
    pub peak_len: u8,
    pub noise: NoiseEvents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleEvents {
    pub cycle: u64,
    pub routers: Vec<RouterEvents>,
}

impl CycleEvents {
    pub fn injections(&self) -> usize {
        self.routers.iter().filter(|r| r.injected.is_some()).count()
    }

    pub fn consumptions(&self) -> usize {
        self.routers.iter().map(|r| usize::from(r.consumptions)).sum()
    }
}

/// Deterministic random stream for run `stream` under `seed`.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Refresh the emptiness/fullness snapshots of every port.
pub fn prep_router(router: &mut RouterState) {
    for port in &mut router.ports {
        port.is_empty_snap = port.buffer.is_empty();
        port.is_full_snap = port.buffer.is_full();
    }
}

fn gen_context(state: &NocState, id: RouterId) -> GenContext {
    GenContext {
        id,
        clk: state.clk,
        routers: state.routers.len(),
        local_full: state.routers[id].port(Direction::Local).buffer.is_full(),
        counters: state.gen[id],
    }
}

/// Draws every router's generation outcome, router 0 first.
pub fn sample_generation(state: &NocState, cfg: &EngineConfig, rng: &mut dyn RngCore) -> Vec<GenOutcome> {
    (0..state.routers.len())
        .map(|id| cfg.traffic.sample(&gen_context(state, id), rng))
        .collect()
}

/// Every router's possible generation outcomes with their probabilities.
pub fn generation_branches(state: &NocState, cfg: &EngineConfig) -> Vec<Vec<(f64, GenOutcome)>> {
    (0..state.routers.len())
        .map(|id| cfg.traffic.enumerate(&gen_context(state, id)))
        .collect()
}

/// One full cycle with randomly sampled generation.
pub fn step_cycle(state: &mut NocState, cfg: &EngineConfig, rng: &mut dyn RngCore) -> Result<CycleEvents, EngineFault> {
    let choices = sample_generation(state, cfg, rng);
    step_with_choices(state, cfg, &choices, None)
}

/// One full cycle with the generation outcomes given explicitly.
///
/// `order` permutes the routers within the Advance phase; the post-cycle
/// state must not depend on it.
pub fn step_with_choices(
    state: &mut NocState,
    cfg: &EngineConfig,
    choices: &[GenOutcome],
    order: Option<&[RouterId]>,
) -> Result<CycleEvents, EngineFault> {
    let cycle = state.clk;
    let n_routers = state.routers.len();
    let checks = cfg.check_invariants;
    let mut events = vec![RouterEvents::default(); n_routers];

    // Generate
    for (id, choice) in choices.iter().enumerate() {
        state.gen[id] = choice.counters;
        if let Some(dest) = choice.inject {
            if checks && (dest == id || !state.topology.contains(dest)) {
                return Err(
                    EngineFault::new(cycle, Phase::Generate, format!("generated flit {id}->{dest}")).at(id, None),
                );
            }
            state.routers[id]
                .port_mut(Direction::Local)
                .buffer
                .enqueue(Flit::new(dest))
                .map_err(|e| EngineFault::new(cycle, Phase::Generate, e.to_string()).at(id, Some(Direction::Local)))?;
            state.flow.injected += 1;
            events[id].injected = Some(dest);
        }
        events[id].peak_len = max_len(&state.routers[id]);
    }
    if checks {
        check_bounds(state, cycle, Phase::Generate)?;
    }

    // Prep
    for r in &mut state.routers {
        prep_router(r);
    }

    // Advance
    let ctx = AdvanceContext {
        topology: &state.topology,
        routing: cfg.routing.as_ref(),
        cycle,
        ignore_full_snapshot: cfg.mutation == Some(Mutation::IgnoreFullSnapshot),
    };
    let default_order: Vec<RouterId>;
    let order = match order {
        Some(o) => o,
        None => {
            default_order = (0..n_routers).collect();
            &default_order
        }
    };
    for &id in order {
        advance_router(&ctx, &mut state.routers, &mut events, id)?;
    }
    for (id, ev) in events.iter_mut().enumerate() {
        state.flow.consumed += u64::from(ev.consumptions);
        let r = &state.routers[id];
        ev.peak_len = ev.peak_len.max(max_len(r));
        ev.max_received = r.ports.iter().map(|p| p.received).max().unwrap_or(0);
    }
    if checks {
        check_bounds(state, cycle, Phase::Advance)?;
        for (id, r) in state.routers.iter().enumerate() {
            for (i, p) in r.ports.iter().enumerate() {
                let dir = Direction::from_index(i);
                if p.used_count > 1 {
                    return Err(EngineFault::new(
                        cycle,
                        Phase::Advance,
                        format!("channel used {} times", p.used_count),
                    )
                    .at(id, dir));
                }
                if p.received > 1 {
                    return Err(EngineFault::new(
                        cycle,
                        Phase::Advance,
                        format!("buffer received {} pushes", p.received),
                    )
                    .at(id, dir));
                }
            }
            if u32::from(r.this_activity) != u32::from(events[id].services) {
                return Err(
                    EngineFault::new(cycle, Phase::Advance, "activity disagrees with service count").at(id, None),
                );
            }
        }
    }

    // UpdatePriority
    let arbiter = cfg.effective_arbiter();
    for r in &mut state.routers {
        update_priority(arbiter, r);
    }
    if checks {
        if let Some(id) = state.routers.iter().position(|r| !r.priority_is_permutation()) {
            return Err(EngineFault::new(
                cycle,
                Phase::UpdatePriority,
                format!("priority list {:?}", state.routers[id].priority_list),
            )
            .at(id, None));
        }
    }

    // UpdateNoise
    for (id, r) in state.routers.iter_mut().enumerate() {
        let ev = update_noise(r, cfg.activity_thresh);
        state.psn.record(id, ev);
        events[id].noise = ev;
    }

    state.clk += 1;
    Ok(CycleEvents { cycle, routers: events })
}

fn max_len(r: &RouterState) -> u8 {
    r.ports
        .iter()
        .map(|p| p.buffer.len())
        .max()
        .unwrap_or(0)
        .min(u8::MAX as usize) as u8
}

fn check_bounds(state: &NocState, cycle: u64, phase: Phase) -> Result<(), EngineFault> {
    for (id, r) in state.routers.iter().enumerate() {
        for (i, p) in r.ports.iter().enumerate() {
            if p.buffer.len() > p.buffer.capacity() {
                return Err(EngineFault::new(
                    cycle,
                    phase,
                    format!("buffer holds {} > {}", p.buffer.len(), p.buffer.capacity()),
                )
                .at(id, Direction::from_index(i)));
            }
            if !r.is_connected(Direction::from_index(i).unwrap()) && !p.buffer.is_empty() {
                return Err(
                    EngineFault::new(cycle, phase, "flit in a disconnected buffer").at(id, Direction::from_index(i))
                );
            }
        }
    }
    if !state.conserves_flits() {
        return Err(EngineFault::new(
            cycle,
            phase,
            format!(
                "flit conservation: injected {} != consumed {} + in flight {}",
                state.flow.injected,
                state.flow.consumed,
                state.in_flight()
            ),
        ));
    }
    Ok(())
}

/// Per-cycle trace record with running totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleRecord {
    pub cycle: u64,
    pub injected: u64,
    pub consumed: u64,
    pub in_flight: u64,
    pub resistive: u64,
    pub inductive: u64,
    pub routers: Vec<RouterEvents>,
}

impl CycleRecord {
    pub fn new(events: CycleEvents, after: &NocState) -> CycleRecord {
        CycleRecord {
            cycle: events.cycle,
            injected: after.flow.injected,
            consumed: after.flow.consumed,
            in_flight: after.in_flight() as u64,
            resistive: after.psn.global.resistive,
            inductive: after.psn.global.inductive,
            routers: events.routers,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<CycleRecord>,
    pub final_state: NocState,
}

/// Runs `cycles` cycles from the empty network; a deterministic function of
/// `(cfg, cycles, seed)`.
pub fn run(cfg: &EngineConfig, cycles: u64, seed: u64) -> Result<Trace, EngineFault> {
    let mut state = cfg.initial_state();
    let mut rng = run_rng(seed, 0);
    let mut records = Vec::with_capacity(cycles as usize);
    for _ in 0..cycles {
        let ev = step_cycle(&mut state, cfg, &mut rng)?;
        records.push(CycleRecord::new(ev, &state));
    }
    Ok(Trace {
        records,
        final_state: state,
    })
}
