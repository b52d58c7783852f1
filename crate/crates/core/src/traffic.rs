//! Flit-injection policies.
//!
//! A policy decides, once per router per cycle, whether a new flit is
//! appended to the router's Local buffer. Every policy can both *sample* an
//! outcome from a random stream (simulation) and *enumerate* all outcomes
//! with their probabilities (exhaustive exploration). The two views must
//! describe the same distribution.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::mesh::{RouterId, Topology};

/// Per-router policy counters. The bursty policy uses them as the remaining
/// burst and sleep lengths; other policies leave them at zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenCounters {
    pub burst: u32,
    pub sleep: u32,
}

/// What a policy sees when deciding for one router.
#[derive(Debug, Clone, Copy)]
pub struct GenContext {
    pub id: RouterId,
    pub clk: u64,
    pub routers: usize,
    /// Local buffer full at the start of the Generate phase.
    pub local_full: bool,
    pub counters: GenCounters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GenOutcome {
    pub inject: Option<RouterId>,
    pub counters: GenCounters,
}

impl GenOutcome {
    fn idle(counters: GenCounters) -> GenOutcome {
        GenOutcome { inject: None, counters }
    }
}

/// How the absolute clock influences a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockDependence {
    /// Decisions never look at the clock.
    None,
    /// Decisions depend only on `clk mod period`.
    Periodic(u64),
}

pub trait TrafficPolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn sample(&self, ctx: &GenContext, rng: &mut dyn RngCore) -> GenOutcome;

    /// All outcomes with nonzero probability. Probabilities sum to one.
    fn enumerate(&self, ctx: &GenContext) -> Vec<(f64, GenOutcome)>;

    fn clock_dependence(&self) -> ClockDependence;

    /// True when the policy carries information in [`GenCounters`].
    fn uses_counters(&self) -> bool {
        false
    }
}

/// Maps a draw `d` on `[0, routers-2]` to a destination other than `id`.
#[inline]
pub fn shift_destination(id: RouterId, draw: RouterId) -> RouterId {
    if draw >= id {
        draw + 1
    } else {
        draw
    }
}

/// Uniform destination over every router except `id`.
pub fn uniform_dest_excluding_self(id: RouterId, routers: usize, rng: &mut dyn RngCore) -> RouterId {
    debug_assert!(routers >= 2);
    let draw = rng.random_range(0..routers - 1);
    shift_destination(id, draw)
}

fn uniform_branches(id: RouterId, routers: usize, counters: GenCounters) -> Vec<(f64, GenOutcome)> {
    let p = 1.0 / (routers - 1) as f64;
    (0..routers - 1)
        .map(|draw| {
            (
                p,
                GenOutcome {
                    inject: Some(shift_destination(id, draw)),
                    counters,
                },
            )
        })
        .collect()
}

/// No traffic at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct Disabled;

impl TrafficPolicy for Disabled {
    fn name(&self) -> &str {
        "disabled"
    }

    fn sample(&self, ctx: &GenContext, _rng: &mut dyn RngCore) -> GenOutcome {
        GenOutcome::idle(ctx.counters)
    }

    fn enumerate(&self, ctx: &GenContext) -> Vec<(f64, GenOutcome)> {
        vec![(1.0, GenOutcome::idle(ctx.counters))]
    }

    fn clock_dependence(&self) -> ClockDependence {
        ClockDependence::None
    }
}

/// Inject during the first `duty_on` cycles of every `period`, with a
/// uniformly random destination among the other routers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Periodic {
    pub duty_on: u64,
    pub period: u64,
}

impl Default for Periodic {
    fn default() -> Self {
        Periodic { duty_on: 3, period: 10 }
    }
}

impl Periodic {
    pub fn new(duty_on: u64, period: u64) -> Result<Periodic, ConfigError> {
        if period == 0 {
            return Err(ConfigError::invalid("period", "must be at least 1"));
        }
        if duty_on > period {
            return Err(ConfigError::invalid(
                "duty_on",
                format!("{duty_on} exceeds period {period}"),
            ));
        }
        Ok(Periodic { duty_on, period })
    }

    pub fn is_on(&self, clk: u64) -> bool {
        clk % self.period < self.duty_on
    }
}

/// Periodic injection decision for one router.
pub fn periodic_inject(ctx: &GenContext, policy: &Periodic, rng: &mut dyn RngCore) -> Option<RouterId> {
    if policy.is_on(ctx.clk) && !ctx.local_full {
        Some(uniform_dest_excluding_self(ctx.id, ctx.routers, rng))
    } else {
        None
    }
}

impl TrafficPolicy for Periodic {
    fn name(&self) -> &str {
        "periodic"
    }

    fn sample(&self, ctx: &GenContext, rng: &mut dyn RngCore) -> GenOutcome {
        GenOutcome {
            inject: periodic_inject(ctx, self, rng),
            counters: ctx.counters,
        }
    }

    fn enumerate(&self, ctx: &GenContext) -> Vec<(f64, GenOutcome)> {
        if self.is_on(ctx.clk) && !ctx.local_full {
            uniform_branches(ctx.id, ctx.routers, ctx.counters)
        } else {
            vec![(1.0, GenOutcome::idle(ctx.counters))]
        }
    }

    fn clock_dependence(&self) -> ClockDependence {
        ClockDependence::Periodic(self.period)
    }
}

/// Bursts of back-to-back injections separated by idle stretches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bursty {
    pub burst_min: u32,
    pub burst_max: u32,
    pub sleep_min: u32,
    pub sleep_max: u32,
}

impl Default for Bursty {
    fn default() -> Self {
        Bursty {
            burst_min: 10,
            burst_max: 100,
            sleep_min: 200,
            sleep_max: 400,
        }
    }
}

impl Bursty {
    pub fn new(burst_min: u32, burst_max: u32, sleep_min: u32, sleep_max: u32) -> Result<Bursty, ConfigError> {
        if burst_min == 0 || sleep_min == 0 {
            return Err(ConfigError::invalid("bursty", "bounds must be positive"));
        }
        if burst_min > burst_max {
            return Err(ConfigError::invalid("burst_max", "must be >= burst_min"));
        }
        if sleep_min > sleep_max {
            return Err(ConfigError::invalid("sleep_max", "must be >= sleep_min"));
        }
        Ok(Bursty {
            burst_min,
            burst_max,
            sleep_min,
            sleep_max,
        })
    }
}

/// Bursty injection decision. A full Local buffer stalls the counters.
pub fn bursty_inject(ctx: &GenContext, policy: &Bursty, rng: &mut dyn RngCore) -> GenOutcome {
    let c = ctx.counters;
    if ctx.local_full {
        GenOutcome::idle(c)
    } else if c.burst > 0 {
        GenOutcome {
            inject: Some(uniform_dest_excluding_self(ctx.id, ctx.routers, rng)),
            counters: GenCounters {
                burst: c.burst - 1,
                ..c
            },
        }
    } else if c.sleep > 0 {
        GenOutcome::idle(GenCounters {
            sleep: c.sleep - 1,
            ..c
        })
    } else {
        let burst = rng.random_range(policy.burst_min..=policy.burst_max);
        let sleep = rng.random_range(policy.sleep_min..=policy.sleep_max);
        GenOutcome::idle(GenCounters { burst, sleep })
    }
}

impl TrafficPolicy for Bursty {
    fn name(&self) -> &str {
        "bursty"
    }

    fn sample(&self, ctx: &GenContext, rng: &mut dyn RngCore) -> GenOutcome {
        bursty_inject(ctx, self, rng)
    }

    fn enumerate(&self, ctx: &GenContext) -> Vec<(f64, GenOutcome)> {
        let c = ctx.counters;
        if ctx.local_full {
            vec![(1.0, GenOutcome::idle(c))]
        } else if c.burst > 0 {
            uniform_branches(
                ctx.id,
                ctx.routers,
                GenCounters {
                    burst: c.burst - 1,
                    ..c
                },
            )
        } else if c.sleep > 0 {
            vec![(
                1.0,
                GenOutcome::idle(GenCounters {
                    sleep: c.sleep - 1,
                    ..c
                }),
            )]
        } else {
            let bursts = self.burst_min..=self.burst_max;
            let sleeps = self.sleep_min..=self.sleep_max;
            let p = 1.0 / (bursts.clone().count() * sleeps.clone().count()) as f64;
            bursts
                .flat_map(|burst| {
                    sleeps
                        .clone()
                        .map(move |sleep| (p, GenOutcome::idle(GenCounters { burst, sleep })))
                })
                .collect()
        }
    }

    fn clock_dependence(&self) -> ClockDependence {
        ClockDependence::None
    }

    fn uses_counters(&self) -> bool {
        true
    }
}

/// Deterministic traffic: on the periodic "on" cycles, each listed source
/// injects a flit to its fixed destination. Used for engine/explorer
/// equivalence checks and latency measurements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixed {
    pub duty_on: u64,
    pub period: u64,
    dest_of: Vec<Option<RouterId>>,
}

impl Fixed {
    pub fn new(
        topo: &Topology,
        duty_on: u64,
        period: u64,
        pairs: &[(RouterId, RouterId)],
    ) -> Result<Fixed, ConfigError> {
        Periodic::new(duty_on, period)?;
        let mut dest_of = vec![None; topo.routers()];
        for &(src, dst) in pairs {
            if !topo.contains(src) || !topo.contains(dst) {
                return Err(ConfigError::invalid(
                    "pairs",
                    format!("({src}, {dst}) outside the mesh"),
                ));
            }
            if src == dst {
                return Err(ConfigError::invalid(
                    "pairs",
                    format!("router {src} cannot target itself"),
                ));
            }
            if dest_of[src].replace(dst).is_some() {
                return Err(ConfigError::invalid("pairs", format!("router {src} listed twice")));
            }
        }
        Ok(Fixed {
            duty_on,
            period,
            dest_of,
        })
    }

    fn decide(&self, ctx: &GenContext) -> GenOutcome {
        let on = ctx.clk % self.period < self.duty_on;
        let inject = match self.dest_of.get(ctx.id).copied().flatten() {
            Some(d) if on && !ctx.local_full => Some(d),
            _ => None,
        };
        GenOutcome {
            inject,
            counters: ctx.counters,
        }
    }
}

impl TrafficPolicy for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }

    fn sample(&self, ctx: &GenContext, _rng: &mut dyn RngCore) -> GenOutcome {
        self.decide(ctx)
    }

    fn enumerate(&self, ctx: &GenContext) -> Vec<(f64, GenOutcome)> {
        vec![(1.0, self.decide(ctx))]
    }

    fn clock_dependence(&self) -> ClockDependence {
        ClockDependence::Periodic(self.period)
    }
}
