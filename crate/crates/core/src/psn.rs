//! Router activity and power-supply-noise event counting.
//!
//! Activity is the number of a router's buffers serviced in a cycle (0..=5).
//! A resistive event is a cycle whose activity reaches the threshold; an
//! inductive event is a cycle whose activity differs from the previous
//! cycle's by at least the threshold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::mesh::{RouterId, RouterState, Topology};

/// Largest possible per-cycle activity: every one of the five buffers serviced.
pub const MAX_ACTIVITY: u8 = 5;

/// Whether a push received from a neighbor also counts towards the
/// receiver's activity. Only pops count; flip for sensitivity studies.
pub(crate) const ACTIVITY_COUNTS_RECEIVES: bool = false;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Resistive,
    Inductive,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Resistive => "resistive",
            NoiseKind::Inductive => "inductive",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resistive" => Ok(NoiseKind::Resistive),
            "inductive" => Ok(NoiseKind::Inductive),
            other => Err(ConfigError::invalid(
                "kind",
                format!("expected resistive or inductive, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseCounts {
    pub resistive: u64,
    pub inductive: u64,
}

impl NoiseCounts {
    pub fn get(&self, kind: NoiseKind) -> u64 {
        match kind {
            NoiseKind::Resistive => self.resistive,
            NoiseKind::Inductive => self.inductive,
        }
    }
}

/// Events produced by one router in one cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseEvents {
    pub resistive: bool,
    pub inductive: bool,
}

impl NoiseEvents {
    pub fn get(&self, kind: NoiseKind) -> bool {
        match kind {
            NoiseKind::Resistive => self.resistive,
            NoiseKind::Inductive => self.inductive,
        }
    }
}

/// Cumulative noise counters, globally and per router.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PsnLedger {
    pub global: NoiseCounts,
    pub per_router: Vec<NoiseCounts>,
}

impl PsnLedger {
    pub fn new(routers: usize) -> PsnLedger {
        PsnLedger {
            global: NoiseCounts::default(),
            per_router: vec![NoiseCounts::default(); routers],
        }
    }

    pub fn record(&mut self, id: RouterId, events: NoiseEvents) {
        let r = &mut self.per_router[id];
        if events.resistive {
            r.resistive += 1;
            self.global.resistive += 1;
        }
        if events.inductive {
            r.inductive += 1;
            self.global.inductive += 1;
        }
    }

    /// Sum of the counters of the routers in `scope`.
    pub fn scoped_sum(&self, topo: &Topology, scope: PsnScope) -> NoiseCounts {
        match scope {
            PsnScope::Global => self.global,
            _ => self
                .per_router
                .iter()
                .enumerate()
                .filter(|(id, _)| scope.includes(topo, *id))
                .fold(NoiseCounts::default(), |acc, (_, c)| NoiseCounts {
                    resistive: acc.resistive + c.resistive,
                    inductive: acc.inductive + c.inductive,
                }),
        }
    }

    /// The counter a query on `scope` compares against its threshold: the
    /// network-wide total, one router's count, or the mean count of a
    /// class's routers rounded down.
    pub fn scoped(&self, topo: &Topology, scope: PsnScope) -> NoiseCounts {
        let sum = self.scoped_sum(topo, scope);
        let d = scope.divisor(topo).max(1);
        NoiseCounts {
            resistive: sum.resistive / d,
            inductive: sum.inductive / d,
        }
    }
}

/// Position class of a router in the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RouterClass {
    Corner,
    /// Top or bottom row, not a corner.
    HorizontalEdge,
    /// Left or right column, not a corner.
    VerticalEdge,
    Central,
}

impl RouterClass {
    pub fn name(self) -> &'static str {
        match self {
            RouterClass::Corner => "corner",
            RouterClass::HorizontalEdge => "h_edge",
            RouterClass::VerticalEdge => "v_edge",
            RouterClass::Central => "central",
        }
    }
}

impl FromStr for RouterClass {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corner" => Ok(RouterClass::Corner),
            "h_edge" => Ok(RouterClass::HorizontalEdge),
            "v_edge" => Ok(RouterClass::VerticalEdge),
            "central" => Ok(RouterClass::Central),
            other => Err(ConfigError::invalid(
                "psn_scope",
                format!("unknown router class `{other}` (corner, h_edge, v_edge, central)"),
            )),
        }
    }
}

pub fn classify_router(topo: &Topology, id: RouterId) -> RouterClass {
    let last = topo.side() - 1;
    let (row, col) = (topo.row_of(id), topo.col_of(id));
    let on_row_edge = row == 0 || row == last;
    let on_col_edge = col == 0 || col == last;
    match (on_row_edge, on_col_edge) {
        (true, true) => RouterClass::Corner,
        (true, false) => RouterClass::HorizontalEdge,
        (false, true) => RouterClass::VerticalEdge,
        (false, false) => RouterClass::Central,
    }
}

/// Which routers contribute to a noise counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum PsnScope {
    #[default]
    Global,
    Router(RouterId),
    Class(RouterClass),
}

impl PsnScope {
    pub fn includes(&self, topo: &Topology, id: RouterId) -> bool {
        match *self {
            PsnScope::Global => true,
            PsnScope::Router(r) => r == id,
            PsnScope::Class(c) => classify_router(topo, id) == c,
        }
    }

    pub fn members(&self, topo: &Topology) -> u64 {
        (0..topo.routers()).filter(|&id| self.includes(topo, id)).count() as u64
    }

    /// Class counters are averaged over the class; other scopes are not.
    /// A mean of at least `k` is the same as a sum of at least
    /// `k * divisor`.
    pub fn divisor(&self, topo: &Topology) -> u64 {
        match self {
            PsnScope::Class(_) => self.members(topo),
            _ => 1,
        }
    }

    pub fn validate(&self, topo: &Topology) -> Result<(), ConfigError> {
        match *self {
            PsnScope::Router(r) if !topo.contains(r) => Err(ConfigError::invalid(
                "psn_scope",
                format!("router {r} outside a {0}x{0} mesh", topo.side()),
            )),
            PsnScope::Class(c) if self.members(topo) == 0 => Err(ConfigError::invalid(
                "psn_scope",
                format!("a {0}x{0} mesh has no {1} routers", topo.side(), c.name()),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PsnScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsnScope::Global => f.write_str("global"),
            PsnScope::Router(id) => write!(f, "router:{id}"),
            PsnScope::Class(c) => write!(f, "class:{}", c.name()),
        }
    }
}

impl FromStr for PsnScope {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "global" {
            return Ok(PsnScope::Global);
        }
        if let Some(id) = s.strip_prefix("router:") {
            return id
                .parse()
                .map(PsnScope::Router)
                .map_err(|_| ConfigError::invalid("psn_scope", format!("bad router id `{id}`")));
        }
        if let Some(class) = s.strip_prefix("class:") {
            return class.parse().map(PsnScope::Class);
        }
        Err(ConfigError::invalid(
            "psn_scope",
            format!("expected global, router:<id> or class:<name>, got `{s}`"),
        ))
    }
}

impl Serialize for PsnScope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PsnScope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Counts one serviced buffer towards this cycle's activity.
/// Returns `false` if the router was already at the maximum.
pub fn record_service(router: &mut RouterState) -> bool {
    if router.this_activity >= MAX_ACTIVITY {
        return false;
    }
    router.this_activity += 1;
    true
}

/// Folds this cycle's activity into noise events and shifts the activity
/// window (`last := this`, `this := 0`).
pub fn update_noise(router: &mut RouterState, threshold: u8) -> NoiseEvents {
    let this = router.this_activity;
    let last = router.last_activity;
    let events = NoiseEvents {
        inductive: this.abs_diff(last) >= threshold,
        resistive: this >= threshold,
    };
    router.last_activity = this;
    router.this_activity = 0;
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    fn router(this: u8, last: u8) -> RouterState {
        let mut r = RouterState::new([None; 4], 4);
        r.this_activity = this;
        r.last_activity = last;
        r
    }

    #[test]
    fn record_service_counts_up_to_five() {
        let mut r = router(0, 0);
        assert_eq!(r.this_activity, 0);
        for _ in 0..3 {
            assert!(record_service(&mut r));
        }
        assert_eq!(r.this_activity, 3);
        for _ in 0..2 {
            assert!(record_service(&mut r));
        }
        assert_eq!(r.this_activity, 5);
        assert!(!record_service(&mut r));
        assert_eq!(r.this_activity, 5);
    }

    #[test]
    fn update_noise_examples() {
        let mut r = router(3, 0);
        assert_eq!(
            update_noise(&mut r, 3),
            NoiseEvents {
                resistive: true,
                inductive: true
            }
        );
        assert_eq!((r.this_activity, r.last_activity), (0, 3));

        let mut r = router(0, 0);
        assert_eq!(update_noise(&mut r, 3), NoiseEvents::default());

        let mut r = router(2, 5);
        assert_eq!(
            update_noise(&mut r, 3),
            NoiseEvents {
                resistive: false,
                inductive: true
            }
        );
    }

    #[test]
    fn update_noise_table_oracle() {
        // Table of (last, this) -> events, written out as literal predicates.
        for t in 0..=5u8 {
            for last in 0..=5u8 {
                for this in 0..=5u8 {
                    let expect_res = i32::from(this) >= i32::from(t);
                    let expect_ind = (i32::from(last) - i32::from(this)).abs() >= i32::from(t);
                    let mut r = router(this, last);
                    let ev = update_noise(&mut r, t);
                    assert_eq!(
                        (ev.resistive, ev.inductive),
                        (expect_res, expect_ind),
                        "t={t} last={last} this={this}"
                    );
                    assert_eq!(r.last_activity, this);
                    assert_eq!(r.this_activity, 0);
                }
            }
        }
    }

    #[test]
    fn classify_3x3() {
        let t = Topology::new(3).unwrap();
        assert_eq!(classify_router(&t, 0), RouterClass::Corner);
        assert_eq!(classify_router(&t, 4), RouterClass::Central);
        assert_eq!(classify_router(&t, 1), RouterClass::HorizontalEdge);
        assert_eq!(classify_router(&t, 3), RouterClass::VerticalEdge);
        assert_eq!(classify_router(&t, 7), RouterClass::HorizontalEdge);
        assert_eq!(classify_router(&t, 5), RouterClass::VerticalEdge);
        for id in [2, 6, 8] {
            assert_eq!(classify_router(&t, id), RouterClass::Corner);
        }
    }

    #[test]
    fn class_matches_missing_neighbor_count() {
        for n in 2..=6 {
            let t = Topology::new(n).unwrap();
            for id in 0..t.routers() {
                let missing = t.neighbors(id).iter().filter(|x| x.is_none()).count();
                let class = classify_router(&t, id);
                match missing {
                    2 => assert_eq!(class, RouterClass::Corner),
                    1 => assert!(matches!(class, RouterClass::HorizontalEdge | RouterClass::VerticalEdge)),
                    0 => assert_eq!(class, RouterClass::Central),
                    _ => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn scope_parse_roundtrip() {
        for s in [
            "global",
            "router:3",
            "class:central",
            "class:h_edge",
            "class:v_edge",
            "class:corner",
        ] {
            let scope: PsnScope = s.parse().unwrap();
            assert_eq!(scope.to_string(), s);
        }
        assert!("router:x".parse::<PsnScope>().is_err());
        assert!("class:middle".parse::<PsnScope>().is_err());
        assert!("everything".parse::<PsnScope>().is_err());
    }

    #[test]
    fn scoped_sums_match_global() {
        let t = Topology::new(3).unwrap();
        let mut l = PsnLedger::new(9);
        for id in 0..9 {
            for k in 0..id {
                l.record(
                    id,
                    NoiseEvents {
                        resistive: true,
                        inductive: k % 2 == 0,
                    },
                );
            }
        }
        let classes = [
            RouterClass::Corner,
            RouterClass::HorizontalEdge,
            RouterClass::VerticalEdge,
            RouterClass::Central,
        ];
        let sum: u64 = classes
            .iter()
            .map(|&c| l.scoped_sum(&t, PsnScope::Class(c)).resistive)
            .sum();
        assert_eq!(sum, l.global.resistive);
        let sum: u64 = (0..9).map(|id| l.scoped(&t, PsnScope::Router(id)).inductive).sum();
        assert_eq!(sum, l.global.inductive);
    }

    #[test]
    fn class_counter_is_floored_mean() {
        let t = Topology::new(3).unwrap();
        let mut l = PsnLedger::new(9);
        // Corners 0, 2, 6, 8 with 1, 2, 3, 5 resistive events: mean 2.75.
        for (id, n) in [(0, 1), (2, 2), (6, 3), (8, 5)] {
            for _ in 0..n {
                l.record(
                    id,
                    NoiseEvents {
                        resistive: true,
                        inductive: false,
                    },
                );
            }
        }
        let corner = PsnScope::Class(RouterClass::Corner);
        assert_eq!(corner.members(&t), 4);
        assert_eq!(l.scoped_sum(&t, corner).resistive, 11);
        assert_eq!(l.scoped(&t, corner).resistive, 2);
        assert_eq!(l.scoped(&t, PsnScope::Global).resistive, 11);
        assert_eq!(l.scoped(&t, PsnScope::Router(8)).resistive, 5);
    }

    #[test]
    fn empty_class_rejected() {
        let t = Topology::new(2).unwrap();
        assert!(PsnScope::Class(RouterClass::Central).validate(&t).is_err());
        assert!(PsnScope::Class(RouterClass::Corner).validate(&t).is_ok());
    }
}
