//! Canonical byte encoding of the persistent part of a network state.
//!
//! Per router, in id order: for each connected compass port and then the
//! Local port, the buffer length followed by the destinations front to
//! back; the priority list packed three bits per direction; the last
//! activity if noise is tracked. Then the traffic counters when the policy uses them, then the
//! clock when the configuration asks for it.
//!
//! When the arbiter allows it, the priority list is first projected onto
//! the router's connected ports (unconnected directions are moved to the
//! back in a fixed order). Unconnected buffers are always empty and never
//! blocked, so states that differ only there behave identically.
//!
//! Per-cycle flags are not encoded: they are cleared or overwritten before
//! the next cycle reads them. Cumulative statistics (PSN ledger, flow
//! totals) are not encoded either.

use crate::engine::EngineConfig;
use crate::mesh::{Direction, Flit, NocState, Topology};
use crate::traffic::{ClockDependence, GenCounters};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub Box<[u8]>);

impl StateKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// How the clock enters the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// `clk mod period` for periodic policies, nothing otherwise. Keeps the
    /// state space finite.
    Reduced,
    /// The full clock value.
    Absolute,
}

#[derive(Debug, Clone)]
pub struct KeyCodec {
    topology: Topology,
    buffer_size: usize,
    wide_dest: bool,
    counters: bool,
    clock: Option<u64>,
    ports: Vec<Vec<Direction>>,
    project_priority: bool,
    activity: bool,
}

fn pack_priority(list: &[Direction; 5]) -> u16 {
    list.iter().fold(0u16, |acc, d| (acc << 3) | d.index() as u16)
}

fn unpack_priority(mut bits: u16) -> Option<[Direction; 5]> {
    let mut list = [Direction::Local; 5];
    for slot in list.iter_mut().rev() {
        *slot = Direction::from_index(usize::from(bits & 7))?;
        bits >>= 3;
    }
    Some(list)
}

impl KeyCodec {
    pub fn new(cfg: &EngineConfig, clock: ClockMode) -> KeyCodec {
        let topo = cfg.topology;
        let ports = (0..topo.routers())
            .map(|id| {
                Direction::COMPASS
                    .into_iter()
                    .filter(|&d| topo.neighbor(id, d).is_some())
                    .chain([Direction::Local])
                    .collect()
            })
            .collect();
        let clock = match (clock, cfg.traffic.clock_dependence()) {
            (ClockMode::Absolute, _) => Some(0),
            (ClockMode::Reduced, ClockDependence::Periodic(p)) => Some(p),
            (ClockMode::Reduced, ClockDependence::None) => None,
        };
        KeyCodec {
            topology: topo,
            buffer_size: cfg.buffer_size,
            wide_dest: topo.routers() > 256,
            counters: cfg.traffic.uses_counters(),
            clock,
            ports,
            project_priority: cfg.effective_arbiter().ignores_idle_directions(),
            activity: false,
        }
    }

    /// Also encodes each router's last activity, which only matters for
    /// noise events.
    pub fn with_activity(mut self) -> KeyCodec {
        self.activity = true;
        self
    }

    /// Keeps unconnected directions' positions in the priority list.
    pub fn exact_priority(mut self) -> KeyCodec {
        self.project_priority = false;
        self
    }

    fn canonical_priority(&self, id: usize, list: &[Direction; 5]) -> [Direction; 5] {
        if !self.project_priority {
            return *list;
        }
        let connected = &self.ports[id];
        let mut out = *list;
        let kept = list.iter().filter(|d| connected.contains(d));
        let idle = Direction::ALL.iter().filter(|d| !connected.contains(d));
        for (slot, d) in out.iter_mut().zip(kept.chain(idle)) {
            *slot = *d;
        }
        out
    }

    pub fn encode(&self, state: &NocState) -> StateKey {
        let mut out = Vec::with_capacity(64);
        self.encode_into(state, &mut out);
        StateKey(out.into_boxed_slice())
    }

    pub fn encode_into(&self, state: &NocState, out: &mut Vec<u8>) {
        for (id, (r, ports)) in state.routers.iter().zip(&self.ports).enumerate() {
            for &d in ports {
                let buf = &r.port(d).buffer;
                out.push(buf.len() as u8);
                for f in buf.iter() {
                    if self.wide_dest {
                        out.extend_from_slice(&(f.dest() as u16).to_le_bytes());
                    } else {
                        out.push(f.dest() as u8);
                    }
                }
            }
            out.extend_from_slice(&pack_priority(&self.canonical_priority(id, &r.priority_list)).to_le_bytes());
            if self.activity {
                out.push(r.last_activity);
            }
        }
        if self.counters {
            for c in &state.gen {
                out.extend_from_slice(&c.burst.to_le_bytes());
                out.extend_from_slice(&c.sleep.to_le_bytes());
            }
        }
        match self.clock {
            Some(0) => out.extend_from_slice(&state.clk.to_le_bytes()),
            Some(p) => out.extend_from_slice(&(state.clk % p).to_le_bytes()),
            None => {}
        }
    }

    /// Rebuilds a state from `bytes`, returning it with any trailing bytes
    /// the codec did not produce. Cumulative statistics start from zero
    /// except that flits in flight are counted as injected.
    pub fn decode<'a>(&self, bytes: &'a [u8]) -> Option<(NocState, &'a [u8])> {
        let mut state = NocState::new(self.topology, self.buffer_size);
        let mut rest = bytes;
        let mut take = |n: usize| -> Option<&'a [u8]> {
            if rest.len() < n {
                return None;
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Some(head)
        };
        for (r, ports) in state.routers.iter_mut().zip(&self.ports) {
            for &d in ports {
                let len = take(1)?[0];
                let buf = &mut r.port_mut(d).buffer;
                for _ in 0..len {
                    let dest = if self.wide_dest {
                        u16::from_le_bytes(take(2)?.try_into().ok()?) as usize
                    } else {
                        take(1)?[0] as usize
                    };
                    buf.enqueue_unchecked(Flit::new(dest));
                }
            }
            r.priority_list = unpack_priority(u16::from_le_bytes(take(2)?.try_into().ok()?))?;
            if self.activity {
                r.last_activity = take(1)?[0];
            }
        }
        if self.counters {
            for c in &mut state.gen {
                let burst = u32::from_le_bytes(take(4)?.try_into().ok()?);
                let sleep = u32::from_le_bytes(take(4)?.try_into().ok()?);
                *c = GenCounters { burst, sleep };
            }
        }
        if self.clock.is_some() {
            state.clk = u64::from_le_bytes(take(8)?.try_into().ok()?);
        }
        state.flow.injected = state.in_flight() as u64;
        Some((state, rest))
    }

    pub fn decode_key(&self, key: &StateKey) -> NocState {
        let (state, rest) = self.decode(&key.0).expect("key produced by this codec");
        debug_assert!(rest.is_empty());
        state
    }
}
