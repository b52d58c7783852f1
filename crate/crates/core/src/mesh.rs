//! Mesh topology, flits, bounded FIFO buffers and the router/NoC state
//! containers shared by the engine, the estimator and the explorer.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{ConfigError, ContractError};
use crate::psn::PsnLedger;
use crate::traffic::GenCounters;

/// Router identifier. IDs are row-major with router 0 in the top-left corner.
pub type RouterId = usize;

/// Port direction of a router. The four compass values name both the input
/// buffer fed by that neighbor and the outgoing channel towards it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    East,
    South,
    West,
    Local,
}

impl Direction {
    pub const ALL: [Direction; 5] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
        Direction::Local,
    ];

    pub const COMPASS: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Direction::ALL.get(i).copied()
    }

    pub const fn is_compass(self) -> bool {
        !matches!(self, Direction::Local)
    }

    /// The port on the neighbor that a flit sent out of `self` lands in.
    pub const fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
            Direction::Local => Direction::Local,
        }
    }

    pub const fn short(self) -> char {
        match self {
            Direction::North => 'N',
            Direction::East => 'E',
            Direction::South => 'S',
            Direction::West => 'W',
            Direction::Local => 'L',
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

/// A single-flit packet. The only payload is the destination router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Flit {
    dest: u16,
}

impl Flit {
    pub fn new(dest: RouterId) -> Flit {
        debug_assert!(dest <= u16::MAX as usize);
        Flit { dest: dest as u16 }
    }

    #[inline]
    pub fn dest(self) -> RouterId {
        self.dest as RouterId
    }
}

/// Bounded FIFO of flits. Front is the next flit to be serviced.
///
/// The capacity is enforced by [`FifoBuffer::enqueue`]. The engine's fault
/// injection fixtures can bypass it through `enqueue_unchecked`, which is how
/// the explorer demonstrates that the buffer-bound property actually bites.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FifoBuffer {
    items: SmallVec<[Flit; 4]>,
    capacity: usize,
}

impl FifoBuffer {
    pub fn new(capacity: usize) -> FifoBuffer {
        assert!(capacity > 0, "buffer capacity must be positive");
        FifoBuffer {
            items: SmallVec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn enqueue(&mut self, flit: Flit) -> Result<(), ContractError> {
        if self.is_full() {
            return Err(ContractError::BufferFull {
                capacity: self.capacity,
            });
        }
        self.items.push(flit);
        Ok(())
    }

    pub(crate) fn enqueue_unchecked(&mut self, flit: Flit) {
        self.items.push(flit);
    }

    pub fn dequeue(&mut self) -> Result<Flit, ContractError> {
        if self.items.is_empty() {
            return Err(ContractError::BufferEmpty);
        }
        Ok(self.items.remove(0))
    }

    pub fn peek(&self) -> Result<Flit, ContractError> {
        self.items.first().copied().ok_or(ContractError::BufferEmpty)
    }

    pub fn iter(&self) -> impl Iterator<Item = Flit> + '_ {
        self.items.iter().copied()
    }
}

/// One input buffer plus the per-cycle bookkeeping of the port.
///
/// `used_count` belongs to the *outgoing* channel in the same direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortState {
    pub buffer: FifoBuffer,
    pub serviced: bool,
    pub blocked: bool,
    pub is_empty_snap: bool,
    pub is_full_snap: bool,
    pub used_count: u8,
    /// Pushes received this cycle.
    pub received: u8,
}

impl PortState {
    pub fn new(capacity: usize) -> PortState {
        PortState {
            buffer: FifoBuffer::new(capacity),
            serviced: false,
            blocked: false,
            is_empty_snap: true,
            is_full_snap: false,
            used_count: 0,
            received: 0,
        }
    }

    pub(crate) fn clear_cycle_flags(&mut self) {
        self.serviced = false;
        self.blocked = false;
        self.used_count = 0;
        self.received = 0;
    }
}

pub const DEFAULT_PRIORITY: [Direction; 5] = Direction::ALL;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterState {
    pub ports: [PortState; 5],
    /// Neighbor IDs indexed by compass direction; `None` on the mesh border.
    pub ids: [Option<RouterId>; 4],
    pub priority_list: [Direction; 5],
    pub this_activity: u8,
    pub last_activity: u8,
}

impl RouterState {
    pub fn new(ids: [Option<RouterId>; 4], capacity: usize) -> RouterState {
        RouterState {
            ports: std::array::from_fn(|_| PortState::new(capacity)),
            ids,
            priority_list: DEFAULT_PRIORITY,
            this_activity: 0,
            last_activity: 0,
        }
    }

    pub fn port(&self, dir: Direction) -> &PortState {
        &self.ports[dir.index()]
    }

    pub fn port_mut(&mut self, dir: Direction) -> &mut PortState {
        &mut self.ports[dir.index()]
    }

    pub fn neighbor(&self, dir: Direction) -> Option<RouterId> {
        if dir.is_compass() {
            self.ids[dir.index()]
        } else {
            None
        }
    }

    /// Local is always connected; compass ports only when a neighbor exists.
    pub fn is_connected(&self, dir: Direction) -> bool {
        !dir.is_compass() || self.ids[dir.index()].is_some()
    }

    pub fn buffered(&self) -> usize {
        self.ports.iter().map(|p| p.buffer.len()).sum()
    }

    /// True when the priority list holds each direction exactly once.
    pub fn priority_is_permutation(&self) -> bool {
        let mut seen = [false; 5];
        for d in self.priority_list {
            if seen[d.index()] {
                return false;
            }
            seen[d.index()] = true;
        }
        seen.iter().all(|&s| s)
    }
}

/// Square `n`×`n` mesh with row-major router IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
}

/// Largest supported side length; router IDs must fit in a `u16` flit.
pub const MAX_SIDE: usize = 255;

impl Topology {
    pub fn new(n: usize) -> Result<Topology, ConfigError> {
        if n < 2 {
            return Err(ConfigError::invalid(
                "n",
                format!("mesh side must be at least 2, got {n}"),
            ));
        }
        if n > MAX_SIDE {
            return Err(ConfigError::invalid(
                "n",
                format!("mesh side must be at most {MAX_SIDE}, got {n}"),
            ));
        }
        Ok(Topology { n })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn routers(&self) -> usize {
        self.n * self.n
    }

    pub fn row_of(&self, id: RouterId) -> usize {
        id / self.n
    }

    pub fn col_of(&self, id: RouterId) -> usize {
        id % self.n
    }

    pub fn id_at(&self, row: usize, col: usize) -> RouterId {
        row * self.n + col
    }

    pub fn contains(&self, id: RouterId) -> bool {
        id < self.routers()
    }

    pub fn neighbor(&self, id: RouterId, dir: Direction) -> Option<RouterId> {
        let (row, col) = (self.row_of(id), self.col_of(id));
        match dir {
            Direction::North if row > 0 => Some(id - self.n),
            Direction::East if col + 1 < self.n => Some(id + 1),
            Direction::South if row + 1 < self.n => Some(id + self.n),
            Direction::West if col > 0 => Some(id - 1),
            _ => None,
        }
    }

    pub fn neighbors(&self, id: RouterId) -> [Option<RouterId>; 4] {
        Direction::COMPASS.map(|d| self.neighbor(id, d))
    }

    pub fn manhattan(&self, a: RouterId, b: RouterId) -> usize {
        self.row_of(a).abs_diff(self.row_of(b)) + self.col_of(a).abs_diff(self.col_of(b))
    }
}

/// Running flit bookkeeping used for the conservation invariant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStats {
    pub injected: u64,
    pub consumed: u64,
}

/// Whole-network state between cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NocState {
    pub topology: Topology,
    pub routers: Vec<RouterState>,
    pub clk: u64,
    pub psn: PsnLedger,
    pub gen: Vec<GenCounters>,
    pub flow: FlowStats,
}

impl NocState {
    pub fn new(topology: Topology, buffer_size: usize) -> NocState {
        let routers = (0..topology.routers())
            .map(|id| RouterState::new(topology.neighbors(id), buffer_size))
            .collect();
        NocState {
            topology,
            routers,
            clk: 0,
            psn: PsnLedger::new(topology.routers()),
            gen: vec![GenCounters::default(); topology.routers()],
            flow: FlowStats::default(),
        }
    }

    pub fn in_flight(&self) -> usize {
        self.routers.iter().map(RouterState::buffered).sum()
    }

    pub fn is_drained(&self) -> bool {
        self.in_flight() == 0
    }

    /// Places a flit directly in a router's Local buffer, outside the
    /// generation phase. Counts as an injection.
    pub fn inject(&mut self, src: RouterId, dest: RouterId) -> Result<(), ContractError> {
        if !self.topology.contains(dest) {
            return Err(ContractError::BadDestination { dest });
        }
        self.routers[src]
            .port_mut(Direction::Local)
            .buffer
            .enqueue(Flit::new(dest))?;
        self.flow.injected += 1;
        Ok(())
    }

    pub fn conserves_flits(&self) -> bool {
        self.flow.injected == self.flow.consumed + self.in_flight() as u64
    }
}
