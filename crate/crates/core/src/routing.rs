//! Advance phase: servicing buffers in priority order and moving flits one
//! hop along the configured routing policy.

use std::fmt;

use crate::engine::RouterEvents;
use crate::error::{EngineFault, Phase};
use crate::mesh::{Direction, RouterId, RouterState, Topology};
use crate::psn::{record_service, ACTIVITY_COUNTS_RECEIVES};

/// Chooses the outgoing compass direction for a flit that has not yet
/// reached its destination. Must be a pure function of its arguments.
pub trait RoutingPolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn next_hop(&self, topo: &Topology, here: RouterId, dest: RouterId) -> Direction;
}

/// Dimension-order routing: correct the column first, then the row.
#[derive(Debug, Clone, Copy, Default)]
pub struct XyRouting;

impl RoutingPolicy for XyRouting {
    fn name(&self) -> &str {
        "xy"
    }

    fn next_hop(&self, topo: &Topology, here: RouterId, dest: RouterId) -> Direction {
        route_direction(topo, here, dest)
    }
}

/// X-Y next hop from `id` towards `dest`. Panics if `dest == id`; flits at
/// their destination are consumed, never routed.
pub fn route_direction(topo: &Topology, id: RouterId, dest: RouterId) -> Direction {
    assert_ne!(id, dest, "routing a flit that is already at its destination");
    let (col, dest_col) = (topo.col_of(id), topo.col_of(dest));
    if dest_col != col {
        if dest_col > col {
            Direction::East
        } else {
            Direction::West
        }
    } else if topo.row_of(dest) > topo.row_of(id) {
        Direction::South
    } else {
        Direction::North
    }
}

/// Result of servicing one buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelOutcome {
    /// Disconnected port or empty at snapshot.
    Idle,
    Consumed,
    Forwarded {
        via: Direction,
        to: RouterId,
    },
    Blocked,
}

/// Knobs shared by every `advance_channel` call in one cycle.
#[derive(Debug, Clone, Copy)]
pub struct AdvanceContext<'a> {
    pub topology: &'a Topology,
    pub routing: &'a dyn RoutingPolicy,
    pub cycle: u64,
    /// Test fixture: push into neighbor buffers even when full at snapshot.
    pub ignore_full_snapshot: bool,
}

/// Services the buffer `dir` of router `id`.
///
/// Reads only the Prep snapshots for emptiness and fullness, so the result
/// does not depend on the order in which routers run their Advance phase.
pub fn advance_channel(
    ctx: &AdvanceContext<'_>,
    routers: &mut [RouterState],
    events: &mut [RouterEvents],
    id: RouterId,
    dir: Direction,
) -> Result<ChannelOutcome, EngineFault> {
    let fault = |msg: String| EngineFault::new(ctx.cycle, Phase::Advance, msg).at(id, Some(dir));

    let router = &routers[id];
    if !router.is_connected(dir) || router.port(dir).is_empty_snap {
        return Ok(ChannelOutcome::Idle);
    }
    let front = router
        .port(dir)
        .buffer
        .peek()
        .map_err(|e| fault(format!("nonempty at snapshot but {e}")))?;

    if front.dest() == id {
        let router = &mut routers[id];
        router
            .port_mut(dir)
            .buffer
            .dequeue()
            .map_err(|e| fault(e.to_string()))?;
        router.port_mut(dir).serviced = true;
        if !record_service(router) {
            return Err(fault("activity exceeded 5".into()));
        }
        events[id].services += 1;
        events[id].consumptions += 1;
        return Ok(ChannelOutcome::Consumed);
    }

    let out = ctx.routing.next_hop(ctx.topology, id, front.dest());
    let Some(next) = router.neighbor(out) else {
        return Err(fault(format!(
            "routing chose disconnected direction {out} for dest {}",
            front.dest()
        )));
    };
    let landing = out.opposite();
    let channel_free = router.port(out).used_count == 0;
    let target_open = ctx.ignore_full_snapshot || !routers[next].port(landing).is_full_snap;

    if !(channel_free && target_open) {
        routers[id].port_mut(dir).blocked = true;
        events[id].blocked.push(dir);
        return Ok(ChannelOutcome::Blocked);
    }

    let flit = routers[id]
        .port_mut(dir)
        .buffer
        .dequeue()
        .map_err(|e| fault(e.to_string()))?;
    {
        let target = routers[next].port_mut(landing);
        if ctx.ignore_full_snapshot {
            target.buffer.enqueue_unchecked(flit);
        } else {
            target
                .buffer
                .enqueue(flit)
                .map_err(|e| fault(format!("push into router {next} port {landing}: {e}")))?;
        }
        target.received += 1;
    }
    if ACTIVITY_COUNTS_RECEIVES && !record_service(&mut routers[next]) {
        return Err(fault("receiver activity exceeded 5".into()));
    }

    let router = &mut routers[id];
    router.port_mut(out).used_count += 1;
    router.port_mut(dir).serviced = true;
    if !record_service(router) {
        return Err(fault("activity exceeded 5".into()));
    }
    events[id].services += 1;
    events[id].channel_use[out.index()] += 1;
    Ok(ChannelOutcome::Forwarded { via: out, to: next })
}

/// Runs `advance_channel` over the router's five ports in priority order.
pub fn advance_router(
    ctx: &AdvanceContext<'_>,
    routers: &mut [RouterState],
    events: &mut [RouterEvents],
    id: RouterId,
) -> Result<(), EngineFault> {
    let order = routers[id].priority_list;
    for dir in order {
        advance_channel(ctx, routers, events, id, dir)?;
    }
    Ok(())
}
