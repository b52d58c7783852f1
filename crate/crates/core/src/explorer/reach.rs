//! Exact bounded reachability of a PSN counter threshold.
//!
//! Probability mass is pushed forward one cycle at a time over states
//! augmented with the scoped event sum, which never needs to exceed the
//! threshold. Mass whose
//! counter reaches the threshold is absorbed and accumulated.

use indexmap::IndexMap;
use rayon::prelude::*;

use super::{apply_branch, unchecked, Branches, ClockMode, KeyCodec};
use crate::engine::EngineConfig;
use crate::error::ExploreError;
use crate::psn::{NoiseKind, PsnScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReachQuery {
    pub kind: NoiseKind,
    pub scope: PsnScope,
    pub k: u64,
    /// Last cycle index counted, so `horizon + 1` cycles are propagated.
    pub horizon: u64,
}

/// `P(first hit <= N)` for every `N` in `0..=q.horizon`.
///
/// `max_states` bounds the number of live augmented states in any cycle.
pub fn exact_cdf(cfg: &EngineConfig, q: &ReachQuery, max_states: usize) -> Result<Vec<f64>, ExploreError> {
    q.scope.validate(&cfg.topology)?;
    if q.k == 0 {
        return Ok(vec![1.0; q.horizon as usize + 1]);
    }
    let cfg = unchecked(cfg);
    let codec = KeyCodec::new(&cfg, ClockMode::Reduced).with_activity();
    let topo = cfg.topology;
    let in_scope: Vec<bool> = (0..topo.routers()).map(|id| q.scope.includes(&topo, id)).collect();
    // The raw scoped sum is tracked; class scopes compare its mean.
    let target = q.k * q.scope.divisor(&topo);

    let mut layer: IndexMap<Box<[u8]>, f64> = IndexMap::new();
    let mut start = Vec::new();
    codec.encode_into(&cfg.initial_state(), &mut start);
    start.extend_from_slice(&0u64.to_le_bytes());
    layer.insert(start.into_boxed_slice(), 1.0);

    let mut hit = 0.0;
    let mut cdf = Vec::with_capacity(q.horizon as usize + 1);
    for _ in 0..=q.horizon {
        let entries: Vec<(&Box<[u8]>, f64)> = layer.iter().map(|(k, &p)| (k, p)).collect();
        let expanded: Vec<Vec<(Option<Vec<u8>>, f64)>> = entries
            .par_iter()
            .map(|(bytes, p)| -> Result<_, ExploreError> {
                let (state, rest) = codec.decode(bytes).expect("augmented key");
                let counter = u64::from_le_bytes(rest.try_into().expect("counter suffix"));
                let branches = Branches::of(&state, &cfg)?;
                let mut out = Vec::with_capacity(branches.len() as usize);
                for i in 0..branches.len() {
                    let b = branches.get(i);
                    let (next, events) = apply_branch(&state, &cfg, &b.choices)?;
                    let inc = events
                        .routers
                        .iter()
                        .zip(&in_scope)
                        .filter(|(ev, &inside)| inside && ev.noise.get(q.kind))
                        .count() as u64;
                    let c = counter + inc;
                    let mass = p * b.prob;
                    if c >= target {
                        out.push((None, mass));
                    } else {
                        let mut key = Vec::with_capacity(bytes.len());
                        codec.encode_into(&next, &mut key);
                        key.extend_from_slice(&c.to_le_bytes());
                        out.push((Some(key), mass));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;
        let mut next: IndexMap<Box<[u8]>, f64> = IndexMap::with_capacity(layer.len());
        for (key, mass) in expanded.into_iter().flatten() {
            match key {
                None => hit += mass,
                Some(k) => *next.entry(k.into_boxed_slice()).or_insert(0.0) += mass,
            }
        }
        if next.len() > max_states {
            return Err(ExploreError::Exhausted { limit: max_states });
        }
        cdf.push(hit.min(1.0));
        layer = next;
    }
    Ok(cdf)
}

/// `P(first hit <= q.horizon)`.
pub fn exact_reachability(cfg: &EngineConfig, q: &ReachQuery, max_states: usize) -> Result<f64, ExploreError> {
    Ok(*exact_cdf(cfg, q, max_states)?.last().expect("horizon + 1 entries"))
}
