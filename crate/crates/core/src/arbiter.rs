//! Priority-list arbitration between a router's five buffers.

use std::fmt;

use crate::mesh::{Direction, RouterState};

pub trait Arbiter: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Next cycle's service order given this cycle's order and which buffers
    /// were blocked (indexed by [`Direction::index`]).
    fn reorder(&self, previous: &[Direction; 5], blocked: &[bool; 5]) -> [Direction; 5];

    /// True when directions that are never blocked cannot change the
    /// relative order of the others. State-space exploration then only
    /// tracks the order of a router's connected ports.
    fn ignores_idle_directions(&self) -> bool {
        false
    }
}

/// Blocked buffers move to the front, everything else keeps its relative
/// order behind them.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundRobin;

impl Arbiter for RoundRobin {
    fn name(&self) -> &str {
        "round_robin"
    }

    fn reorder(&self, previous: &[Direction; 5], blocked: &[bool; 5]) -> [Direction; 5] {
        let mut next = *previous;
        let (front, back): (Vec<Direction>, Vec<Direction>) = previous.iter().partition(|d| blocked[d.index()]);
        for (slot, d) in next.iter_mut().zip(front.into_iter().chain(back)) {
            *slot = d;
        }
        next
    }

    fn ignores_idle_directions(&self) -> bool {
        true
    }
}

/// Deliberately broken arbiter used as a mutation fixture: blocked buffers
/// are copied to the front without being removed from their old slot, so
/// the tail of the list falls off.
#[derive(Debug, Clone, Copy, Default)]
pub struct DuplicatingArbiter;

impl Arbiter for DuplicatingArbiter {
    fn name(&self) -> &str {
        "duplicating"
    }

    fn reorder(&self, previous: &[Direction; 5], blocked: &[bool; 5]) -> [Direction; 5] {
        let mut next = *previous;
        let list: Vec<Direction> = previous
            .iter()
            .filter(|d| blocked[d.index()])
            .chain(previous.iter())
            .copied()
            .collect();
        next.copy_from_slice(&list[..5]);
        next
    }
}

/// Recomputes the router's priority list and clears the per-cycle flags.
pub fn update_priority(arbiter: &dyn Arbiter, router: &mut RouterState) {
    let blocked: [bool; 5] = std::array::from_fn(|i| router.ports[i].blocked);
    router.priority_list = arbiter.reorder(&router.priority_list, &blocked);
    for port in &mut router.ports {
        port.clear_cycle_flags();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Direction::*;

    fn blocked(dirs: &[Direction]) -> [bool; 5] {
        let mut b = [false; 5];
        for d in dirs {
            b[d.index()] = true;
        }
        b
    }

    #[test]
    fn round_robin_examples() {
        let prev = [North, East, South, West, Local];
        assert_eq!(RoundRobin.reorder(&prev, &blocked(&[])), prev);
        assert_eq!(
            RoundRobin.reorder(&prev, &blocked(&[South])),
            [South, North, East, West, Local]
        );
        assert_eq!(
            RoundRobin.reorder(&prev, &blocked(&[East, West])),
            [East, West, North, South, Local]
        );
    }

    #[test]
    fn update_priority_resets_flags() {
        let mut r = RouterState::new([None; 4], 2);
        r.ports[South.index()].blocked = true;
        r.ports[North.index()].serviced = true;
        r.ports[East.index()].used_count = 1;
        update_priority(&RoundRobin, &mut r);
        assert_eq!(r.priority_list, [South, North, East, West, Local]);
        assert!(r.ports.iter().all(|p| !p.blocked && !p.serviced && p.used_count == 0));
    }

    #[test]
    fn duplicating_arbiter_breaks_permutation() {
        let mut r = RouterState::new([None; 4], 2);
        r.ports[South.index()].blocked = true;
        update_priority(&DuplicatingArbiter, &mut r);
        assert!(!r.priority_is_permutation());
    }

    fn any_perm() -> impl Strategy<Value = [Direction; 5]> {
        Just(Direction::ALL.to_vec())
            .prop_shuffle()
            .prop_map(|v| [v[0], v[1], v[2], v[3], v[4]])
    }

    proptest! {
        #[test]
        fn round_robin_yields_permutation(prev in any_perm(), mask in any::<[bool; 5]>()) {
            let next = RoundRobin.reorder(&prev, &mask);
            let mut r = RouterState::new([None; 4], 1);
            r.priority_list = next;
            prop_assert!(r.priority_is_permutation());
            // Blocked directions form a prefix, in previous relative order.
            let k = mask.iter().filter(|&&b| b).count();
            let expect_front: Vec<_> = prev.iter().copied().filter(|d| mask[d.index()]).collect();
            let expect_back: Vec<_> = prev.iter().copied().filter(|d| !mask[d.index()]).collect();
            prop_assert_eq!(&next[..k], &expect_front[..]);
            prop_assert_eq!(&next[k..], &expect_back[..]);
        }

        #[test]
        fn round_robin_idempotent_without_conflicts(prev in any_perm()) {
            prop_assert_eq!(RoundRobin.reorder(&prev, &[false; 5]), prev);
        }
    }
}
