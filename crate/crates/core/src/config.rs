//! File-level configuration and the policy registry that turns it into an
//! [`EngineConfig`].
//!
//! ```toml
//! n = 2
//! buffer_size = 4
//! activity_thresh = 3
//! traffic = "periodic"
//! routing = "xy"
//! arbitration = "round_robin"
//! psn_scope = "global"
//!
//! [periodic]
//! duty_on = 3
//! period = 10
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arbiter::{Arbiter, RoundRobin};
use crate::engine::{EngineConfig, Mutation};
use crate::error::ConfigError;
use crate::mesh::Topology;
use crate::psn::PsnScope;
use crate::routing::{RoutingPolicy, XyRouting};
use crate::traffic::{Bursty, Disabled, Fixed, Periodic, TrafficPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedSection {
    pub duty_on: u64,
    pub period: u64,
    /// `[source, destination]` pairs.
    pub pairs: Vec<[usize; 2]>,
}

impl Default for FixedSection {
    fn default() -> Self {
        FixedSection {
            duty_on: 3,
            period: 10,
            pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NocConfig {
    pub n: usize,
    pub buffer_size: usize,
    pub activity_thresh: u8,
    pub traffic: String,
    pub routing: String,
    pub arbitration: String,
    pub psn_scope: PsnScope,
    /// Test fixture only; see [`Mutation`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
    pub periodic: Periodic,
    pub bursty: Bursty,
    pub fixed: FixedSection,
    /// Sections for policies registered at runtime, keyed by policy name.
    #[serde(flatten)]
    pub extra: BTreeMap<String, toml::Value>,
}

impl Default for NocConfig {
    fn default() -> Self {
        NocConfig {
            n: 2,
            buffer_size: 4,
            activity_thresh: 3,
            traffic: "periodic".into(),
            routing: "xy".into(),
            arbitration: "round_robin".into(),
            psn_scope: PsnScope::Global,
            mutation: None,
            periodic: Periodic::default(),
            bursty: Bursty::default(),
            fixed: FixedSection::default(),
            extra: BTreeMap::new(),
        }
    }
}

impl NocConfig {
    pub fn from_toml_str(text: &str) -> Result<NocConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<NocConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        NocConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Short hex digest of the canonical (JSON) form of the configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        let hash = Sha256::digest(&canonical);
        hex::encode(&hash[..8])
    }

    pub fn build(&self) -> Result<EngineConfig, ConfigError> {
        PolicyRegistry::builtin().build(self)
    }
}

pub type TrafficFactory =
    Box<dyn Fn(&NocConfig, &Topology) -> Result<Arc<dyn TrafficPolicy>, ConfigError> + Send + Sync>;
pub type RoutingFactory = Box<dyn Fn() -> Arc<dyn RoutingPolicy> + Send + Sync>;
pub type ArbiterFactory = Box<dyn Fn() -> Arc<dyn Arbiter> + Send + Sync>;

/// Name → constructor tables for traffic, routing and arbitration policies.
pub struct PolicyRegistry {
    traffic: BTreeMap<String, TrafficFactory>,
    routing: BTreeMap<String, RoutingFactory>,
    arbitration: BTreeMap<String, ArbiterFactory>,
}

impl PolicyRegistry {
    pub fn empty() -> PolicyRegistry {
        PolicyRegistry {
            traffic: BTreeMap::new(),
            routing: BTreeMap::new(),
            arbitration: BTreeMap::new(),
        }
    }

    pub fn builtin() -> PolicyRegistry {
        let mut reg = PolicyRegistry::empty();
        reg.register_traffic("disabled", |_, _| Ok(Arc::new(Disabled)));
        reg.register_traffic("periodic", |c, _| {
            Ok(Arc::new(Periodic::new(c.periodic.duty_on, c.periodic.period)?))
        });
        reg.register_traffic("bursty", |c, _| {
            let b = c.bursty;
            Ok(Arc::new(Bursty::new(
                b.burst_min,
                b.burst_max,
                b.sleep_min,
                b.sleep_max,
            )?))
        });
        reg.register_traffic("fixed", |c, topo| {
            let pairs: Vec<_> = c.fixed.pairs.iter().map(|p| (p[0], p[1])).collect();
            Ok(Arc::new(Fixed::new(topo, c.fixed.duty_on, c.fixed.period, &pairs)?))
        });
        reg.register_routing("xy", || Arc::new(XyRouting));
        reg.register_arbitration("round_robin", || Arc::new(RoundRobin));
        reg
    }

    pub fn register_traffic<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&NocConfig, &Topology) -> Result<Arc<dyn TrafficPolicy>, ConfigError> + Send + Sync + 'static,
    {
        self.traffic.insert(name.to_owned(), Box::new(factory));
    }

    pub fn register_routing<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Arc<dyn RoutingPolicy> + Send + Sync + 'static,
    {
        self.routing.insert(name.to_owned(), Box::new(factory));
    }

    pub fn register_arbitration<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Arc<dyn Arbiter> + Send + Sync + 'static,
    {
        self.arbitration.insert(name.to_owned(), Box::new(factory));
    }

    pub fn build(&self, cfg: &NocConfig) -> Result<EngineConfig, ConfigError> {
        let mut engine = EngineConfig::new(cfg.n)?
            .with_buffer_size(cfg.buffer_size)?
            .with_activity_thresh(cfg.activity_thresh)?
            .with_mutation(cfg.mutation);
        cfg.psn_scope.validate(&engine.topology)?;

        let traffic = self
            .traffic
            .get(&cfg.traffic)
            .ok_or_else(|| ConfigError::UnknownPolicy {
                kind: "traffic",
                name: cfg.traffic.clone(),
            })?;
        engine.traffic = traffic(cfg, &engine.topology)?;

        let routing = self
            .routing
            .get(&cfg.routing)
            .ok_or_else(|| ConfigError::UnknownPolicy {
                kind: "routing",
                name: cfg.routing.clone(),
            })?;
        engine.routing = routing();

        let arbiter = self
            .arbitration
            .get(&cfg.arbitration)
            .ok_or_else(|| ConfigError::UnknownPolicy {
                kind: "arbitration",
                name: cfg.arbitration.clone(),
            })?;
        engine.arbiter = arbiter();
        Ok(engine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{ClockDependence, GenContext, GenOutcome};
    use rand::RngCore;

    #[test]
    fn empty_file_gives_defaults() {
        let c = NocConfig::from_toml_str("").unwrap();
        assert_eq!(c, NocConfig::default());
        let e = c.build().unwrap();
        assert_eq!(e.buffer_size, 4);
        assert_eq!(e.activity_thresh, 3);
        assert_eq!(e.traffic.name(), "periodic");
        assert_eq!(e.routing.name(), "xy");
        assert_eq!(e.arbiter.name(), "round_robin");
    }

    #[test]
    fn parses_sections() {
        let c = NocConfig::from_toml_str(
            r#"
            n = 3
            buffer_size = 2
            traffic = "bursty"
            psn_scope = "class:central"
            [bursty]
            burst_min = 1
            burst_max = 2
            sleep_min = 3
            sleep_max = 4
            "#,
        )
        .unwrap();
        assert_eq!(c.n, 3);
        assert_eq!(c.bursty, Bursty::new(1, 2, 3, 4).unwrap());
        assert_eq!(c.psn_scope.to_string(), "class:central");
        assert_eq!(c.build().unwrap().traffic.name(), "bursty");
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            "n = 1",
            "buffer_size = 0",
            "activity_thresh = 6",
            "traffic = \"teleport\"",
            "routing = \"odd_even\"",
            "psn_scope = \"router:9\"",
            "[periodic]\nduty_on = 11\nperiod = 10",
            "traffic = \"fixed\"\n[fixed]\npairs = [[1, 1]]",
        ];
        for text in bad {
            let err = NocConfig::from_toml_str(text).and_then(|c| c.build());
            assert!(err.is_err(), "accepted: {text}");
        }
        assert!(matches!(
            NocConfig::from_toml_str("n = \"two\""),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn digest_tracks_content() {
        let a = NocConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.buffer_size = 2;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }

    #[test]
    fn toml_roundtrip() {
        let mut c = NocConfig::default();
        c.fixed.pairs = vec![[0, 3], [2, 1]];
        c.psn_scope = PsnScope::Router(1);
        let back = NocConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[derive(Debug)]
    struct EveryOther(u64);

    impl TrafficPolicy for EveryOther {
        fn name(&self) -> &str {
            "every_other"
        }
        fn sample(&self, ctx: &GenContext, _rng: &mut dyn RngCore) -> GenOutcome {
            self.enumerate(ctx)[0].1
        }
        fn enumerate(&self, ctx: &GenContext) -> Vec<(f64, GenOutcome)> {
            let inject =
                (ctx.clk.is_multiple_of(2) && !ctx.local_full).then_some((ctx.id + self.0 as usize) % ctx.routers);
            vec![(
                1.0,
                GenOutcome {
                    inject,
                    counters: ctx.counters,
                },
            )]
        }
        fn clock_dependence(&self) -> ClockDependence {
            ClockDependence::Periodic(2)
        }
    }

    #[test]
    fn custom_policy_registers_by_name() {
        let mut reg = PolicyRegistry::builtin();
        reg.register_traffic("every_other", |c, _| {
            let offset = c
                .extra
                .get("every_other")
                .and_then(|v| v.get("offset"))
                .and_then(|v| v.as_integer())
                .unwrap_or(1);
            Ok(Arc::new(EveryOther(offset as u64)))
        });
        let c = NocConfig::from_toml_str("traffic = \"every_other\"\n[every_other]\noffset = 2").unwrap();
        let e = reg.build(&c).unwrap();
        assert_eq!(e.traffic.name(), "every_other");
        let trace = crate::engine::run(&e, 4, 0).unwrap();
        assert_eq!(trace.records[0].routers[0].injected, Some(2));
        assert_eq!(trace.records[1].routers[0].injected, None);
        assert!(c.build().is_err());
    }
}
