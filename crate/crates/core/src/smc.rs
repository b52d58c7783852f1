//! Monte-Carlo estimation of bounded PSN reachability probabilities.
//!
//! For a counter `C` (resistive or inductive events in some scope), a
//! threshold `K` and a horizon `N`, the estimated quantity is the
//! probability that `C` reaches `K` at some cycle `c <= N`. Cycles are
//! numbered from 0 and the counter is read after each cycle's noise update,
//! so a horizon of `N` simulates `N + 1` cycles.

use std::io::{self, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{run_rng, step_cycle, EngineConfig};
use crate::error::{ConfigError, EngineFault, SmcError};
use crate::psn::{NoiseKind, PsnScope};

pub const CSV_HEADER: &str = "kind,K,N,p_hat,ci_low,ci_high,runs,confidence,seed";

/// A batch of bounded-reachability queries answered from the same runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PsnQuery {
    pub kinds: Vec<NoiseKind>,
    pub thresholds: Vec<u64>,
    /// Strictly ascending horizons.
    pub horizons: Vec<u64>,
    pub scope: PsnScope,
}

impl PsnQuery {
    pub fn new(
        kinds: Vec<NoiseKind>,
        thresholds: Vec<u64>,
        horizons: Vec<u64>,
        scope: PsnScope,
    ) -> Result<PsnQuery, ConfigError> {
        let mut kinds = kinds;
        kinds.sort();
        kinds.dedup();
        let mut thresholds = thresholds;
        thresholds.sort_unstable();
        thresholds.dedup();
        if kinds.is_empty() {
            return Err(ConfigError::invalid("kind", "at least one noise kind is required"));
        }
        if thresholds.is_empty() {
            return Err(ConfigError::invalid("K", "at least one threshold is required"));
        }
        if horizons.is_empty() {
            return Err(ConfigError::invalid("N", "horizon grid is empty"));
        }
        if horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::invalid("N", "horizon grid must be strictly ascending"));
        }
        Ok(PsnQuery {
            kinds,
            thresholds,
            horizons,
            scope,
        })
    }

    pub fn single(kind: NoiseKind, k: u64, horizons: Vec<u64>, scope: PsnScope) -> Result<PsnQuery, ConfigError> {
        PsnQuery::new(vec![kind], vec![k], horizons, scope)
    }

    pub fn max_horizon(&self) -> u64 {
        *self.horizons.last().expect("validated nonempty")
    }

    /// Number of (kind, K) series; first-hit vectors use this layout,
    /// kind-major.
    pub fn series(&self) -> usize {
        self.kinds.len() * self.thresholds.len()
    }

    fn series_key(&self, i: usize) -> (NoiseKind, u64) {
        let nk = self.thresholds.len();
        (self.kinds[i / nk], self.thresholds[i % nk])
    }
}

/// Smallest cycle `c` with `counters[c] >= k`, where `counters[c]` is the
/// value after cycle `c`. `k == 0` holds before anything happens.
pub fn first_hit_time(counters: &[u64], k: u64) -> Option<u64> {
    if k == 0 {
        return Some(0);
    }
    counters.iter().position(|&c| c >= k).map(|c| c as u64)
}

/// Wilson score interval for `hits` successes out of `runs` at confidence
/// `confidence`.
pub fn wilson_interval(hits: u64, runs: u64, confidence: f64) -> (f64, f64) {
    assert!(runs > 0, "Wilson interval needs at least one run");
    let n = runs as f64;
    let p = hits as f64 / n;
    let z = z_score(confidence);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = (center - half).clamp(0.0, 1.0).min(p);
    let high = (center + half).clamp(0.0, 1.0).max(p);
    (low, high)
}

fn z_score(confidence: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    std.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

fn check_confidence(confidence: f64) -> Result<(), ConfigError> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            "confidence",
            format!("{confidence} not in (0, 1)"),
        ))
    }
}

/// First-hit cycle of every (kind, K) series for run `run_index`, in
/// [`PsnQuery::series`] order. Stops early once every series has hit.
pub fn run_first_hits(
    cfg: &EngineConfig,
    query: &PsnQuery,
    seed: u64,
    run_index: u64,
) -> Result<Vec<Option<u64>>, EngineFault> {
    let mut hits: Vec<Option<u64>> = (0..query.series())
        .map(|i| (query.series_key(i).1 == 0).then_some(0))
        .collect();
    let mut state = cfg.initial_state();
    let mut rng = run_rng(seed, run_index);
    let topo = cfg.topology;
    for cycle in 0..=query.max_horizon() {
        if hits.iter().all(Option::is_some) {
            break;
        }
        step_cycle(&mut state, cfg, &mut rng)?;
        let counts = state.psn.scoped(&topo, query.scope);
        for (i, hit) in hits.iter_mut().enumerate() {
            let (kind, k) = query.series_key(i);
            if hit.is_none() && counts.get(kind) >= k {
                *hit = Some(cycle);
            }
        }
    }
    Ok(hits)
}

/// Hit counts over a contiguous range of run indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialEstimate {
    pub query: PsnQuery,
    pub seed: u64,
    pub runs: Range<u64>,
    /// `hits[series * horizons + h]`: runs whose first hit is at or before
    /// `horizons[h]`.
    pub hits: Vec<u64>,
}

impl PartialEstimate {
    fn empty(query: &PsnQuery, seed: u64, runs: Range<u64>) -> PartialEstimate {
        PartialEstimate {
            hits: vec![0; query.series() * query.horizons.len()],
            query: query.clone(),
            seed,
            runs,
        }
    }

    fn add_run(&mut self, first_hits: &[Option<u64>]) {
        let nh = self.query.horizons.len();
        for (s, hit) in first_hits.iter().enumerate() {
            if let Some(c) = hit {
                let start = self.query.horizons.partition_point(|&n| n < *c);
                for slot in &mut self.hits[s * nh + start..(s + 1) * nh] {
                    *slot += 1;
                }
            }
        }
    }

    pub fn run_count(&self) -> u64 {
        self.runs.end - self.runs.start
    }
}

/// Simulates the runs with indices in `runs`.
pub fn estimate_partial(
    cfg: &EngineConfig,
    query: &PsnQuery,
    seed: u64,
    runs: Range<u64>,
) -> Result<PartialEstimate, EngineFault> {
    let mut partial = PartialEstimate::empty(query, seed, runs.clone());
    for r in runs {
        partial.add_run(&run_first_hits(cfg, query, seed, r)?);
    }
    Ok(partial)
}

/// Sums hit counts of partials whose run ranges tile one contiguous range.
/// The result is independent of the order of `partials`.
pub fn merge_partial_estimates(partials: &[PartialEstimate]) -> Result<PartialEstimate, SmcError> {
    let first = partials
        .first()
        .ok_or_else(|| SmcError::Mismatch("no partial estimates".into()))?;
    let mut sorted: Vec<&PartialEstimate> = partials.iter().collect();
    sorted.sort_by_key(|p| (p.runs.start, p.runs.end));
    for p in &sorted {
        if p.query != first.query {
            return Err(SmcError::Mismatch("queries differ".into()));
        }
        if p.seed != first.seed {
            return Err(SmcError::Mismatch(format!(
                "seeds differ ({} vs {})",
                p.seed, first.seed
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[0].runs.end != w[1].runs.start {
            return Err(SmcError::Mismatch(format!(
                "run ranges {:?} and {:?} do not abut",
                w[0].runs, w[1].runs
            )));
        }
    }
    let mut merged = PartialEstimate::empty(
        &first.query,
        first.seed,
        sorted[0].runs.start..sorted[sorted.len() - 1].runs.end,
    );
    for p in &sorted {
        for (m, h) in merged.hits.iter_mut().zip(&p.hits) {
            *m += h;
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfRow {
    pub kind: NoiseKind,
    pub k: u64,
    pub n: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfTable {
    pub rows: Vec<CdfRow>,
    pub runs: u64,
    pub confidence: f64,
    pub seed: u64,
    pub scope: PsnScope,
    pub config_digest: Option<String>,
}

impl CdfTable {
    pub fn from_partial(p: &PartialEstimate, confidence: f64) -> Result<CdfTable, ConfigError> {
        check_confidence(confidence)?;
        let runs = p.run_count();
        if runs == 0 {
            return Err(ConfigError::invalid("runs", "must be at least 1"));
        }
        let q = &p.query;
        let nh = q.horizons.len();
        let mut rows = Vec::with_capacity(p.hits.len());
        for s in 0..q.series() {
            let (kind, k) = q.series_key(s);
            for (h, &n) in q.horizons.iter().enumerate() {
                let hits = p.hits[s * nh + h];
                let (ci_low, ci_high) = wilson_interval(hits, runs, confidence);
                rows.push(CdfRow {
                    kind,
                    k,
                    n,
                    p_hat: hits as f64 / runs as f64,
                    ci_low,
                    ci_high,
                });
            }
        }
        Ok(CdfTable {
            rows,
            runs,
            confidence,
            seed: p.seed,
            scope: q.scope,
            config_digest: None,
        })
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = Some(digest.into());
        self
    }

    pub fn row(&self, kind: NoiseKind, k: u64, n: u64) -> Option<&CdfRow> {
        self.rows.iter().find(|r| r.kind == kind && r.k == k && r.n == n)
    }

    /// CSV with a leading `#` provenance comment when a digest is set.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        if let Some(d) = &self.config_digest {
            writeln!(out, "# config={d} scope={} seed={}", self.scope, self.seed)?;
        }
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.kind, r.k, r.n, r.p_hat, r.ci_low, r.ci_high, self.runs, self.confidence, self.seed
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcSettings {
    pub runs: u64,
    pub confidence: f64,
    pub seed: u64,
    /// Worker count; the result does not depend on it.
    pub jobs: usize,
}

impl Default for SmcSettings {
    fn default() -> Self {
        SmcSettings {
            runs: 1000,
            confidence: 0.95,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Splits `0..runs` into `parts` contiguous, nearly equal ranges.
pub fn split_runs(runs: u64, parts: usize) -> Vec<Range<u64>> {
    let parts = (parts.max(1) as u64).min(runs.max(1));
    let base = runs / parts;
    let extra = runs % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + u64::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

pub fn estimate_cdf(cfg: &EngineConfig, query: &PsnQuery, settings: SmcSettings) -> Result<CdfTable, SmcError> {
    check_confidence(settings.confidence)?;
    query.scope.validate(&cfg.topology)?;
    if settings.runs == 0 {
        return Err(ConfigError::invalid("runs", "must be at least 1").into());
    }
    let chunks = split_runs(settings.runs, settings.jobs);
    let partials: Vec<PartialEstimate> = if settings.jobs <= 1 {
        chunks
            .into_iter()
            .map(|r| estimate_partial(cfg, query, settings.seed, r))
            .collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.jobs)
            .build()
            .map_err(|e| ConfigError::invalid("jobs", e.to_string()))?;
        pool.install(|| {
            chunks
                .into_par_iter()
                .map(|r| estimate_partial(cfg, query, settings.seed, r))
                .collect::<Result<_, _>>()
        })?
    };
    let merged = merge_partial_estimates(&partials)?;
    Ok(CdfTable::from_partial(&merged, settings.confidence)?)
}
