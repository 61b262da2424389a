//! Scenario configuration. The on-disk format is TOML; see
//! `configs/standard.toml` for the canonical example and README for the
//! schema. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::ObservationKind;
use crate::defense::ServerMode;
use crate::error::{Error, Result};
use crate::model::{Activation, TrainConfig};
use crate::protocol::{DenominatorMode, ProtocolConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub trials: usize,
    pub base_seed: u64,
    pub protocol: ProtocolSection,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison: Option<PoisonConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub n: usize,
    pub m: usize,
    pub rounds: usize,
    pub server_lr: f64,
    pub local_epochs: usize,
    pub local_lr: f64,
    /// `0` trains on the whole shard in one step per epoch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub denominator: DenominatorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub k: usize,
    pub target_class: usize,
    pub alpha_t: f64,
    pub alpha_d: f64,
    pub local_size: usize,
    /// Held-out examples per class for evaluation.
    pub test_per_class: usize,
    /// Size of the target-population sets held by the adversary and server.
    pub target_set_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub class_count: usize,
    pub input_dim: usize,
    pub separation: f64,
    /// Training-pool examples generated per class.
    pub pool_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Loss-difference identification, then dropping after `rounds_before_drop`.
    Targeted,
    /// Drop a fixed random subset of true target clients from round 1.
    PerfectKnowledge,
    /// Drop a fixed uniformly random subset of clients from round 1.
    RandomDrop,
}

fn default_true() -> bool {
    true
}

fn default_alpha_v() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub drop_count: usize,
    #[serde(default)]
    pub rounds_before_drop: usize,
    #[serde(default = "default_observation")]
    pub observation: ObservationKind,
    #[serde(default = "default_true")]
    pub refresh: bool,
    /// Size of the visible client subset for `encrypted_limited`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_count: Option<usize>,
    #[serde(default = "default_alpha_v")]
    pub alpha_v: f64,
}

fn default_observation() -> ObservationKind {
    ObservationKind::Encrypted
}

fn default_boost() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonConfig {
    pub count: usize,
    #[serde(default = "default_boost")]
    pub boost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_to: Option<usize>,
    /// Defaults to the attack's `rounds_before_drop` (or 1 with no attack).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_round: Option<usize>,
    #[serde(default)]
    pub placement: PoisonPlacement,
}

/// Where compromised clients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoisonPlacement {
    /// Take the place of honest clients; the population stays at `n`.
    #[default]
    Replace,
    /// Join as extra clients; the population grows to `n + count`.
    Add,
}

fn default_factor() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// `0` disables up-sampling.
    #[serde(default)]
    pub upsample_count: usize,
    #[serde(default = "default_factor")]
    pub upsample_factor: f64,
    #[serde(default)]
    pub rounds_before_upsample: usize,
    #[serde(default)]
    pub server_mode: ServerMode,
}

fn check(ok: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message()))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .map(|s| format!("at byte {}", s.start))
                .unwrap_or_else(|| "config".into());
            Error::config(field, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn class_count(&self) -> Option<usize> {
        match (&self.data.synthetic, &self.data.idx) {
            (Some(s), _) => Some(s.class_count),
            (None, Some(i)) => i.class_count,
            _ => None,
        }
    }

    pub fn poison_count(&self) -> usize {
        self.poison.as_ref().map_or(0, |p| p.count)
    }

    /// Clients in the protocol, counting added poisoners.
    pub fn population_size(&self) -> usize {
        match &self.poison {
            Some(p) if p.placement == PoisonPlacement::Add => self.protocol.n + p.count,
            _ => self.protocol.n,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let p = &self.protocol;
        ProtocolConfig {
            n: self.population_size(),
            m: p.m,
            rounds: p.rounds,
            server_lr: p.server_lr,
            local: TrainConfig {
                epochs: p.local_epochs,
                lr: p.local_lr,
                batch_size: p.batch_size,
            },
            clip_norm: self.defense.as_ref().and_then(|d| d.clip_norm),
            denominator: p.denominator,
        }
    }

    /// Round from which compromised clients send boosted updates.
    pub fn poison_start(&self) -> usize {
        self.poison
            .as_ref()
            .and_then(|p| p.start_round)
            .unwrap_or_else(|| match &self.attack {
                Some(a) if a.kind == AttackKind::Targeted => a.rounds_before_drop.max(1),
                _ => 1,
            })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        let d = &self.data;
        check(self.trials >= 1, "trials", || "must be >= 1".into())?;
        check(p.n >= 1, "protocol.n", || "must be >= 1".into())?;
        check(p.m >= 1 && p.m <= p.n, "protocol.m", || {
            format!("must satisfy 1 <= m <= n (got {}, n = {})", p.m, p.n)
        })?;
        check(p.rounds >= 1, "protocol.rounds", || "must be >= 1".into())?;
        check(p.server_lr > 0.0, "protocol.server_lr", || {
            "must be positive".into()
        })?;
        check(p.local_lr > 0.0, "protocol.local_lr", || {
            "must be positive".into()
        })?;

        match (&d.synthetic, &d.idx) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config(
                    "data",
                    "exactly one of [data.synthetic] or [data.idx] is required",
                ))
            }
            (Some(s), None) => {
                check(s.class_count >= 2, "data.synthetic.class_count", || {
                    "must be >= 2".into()
                })?;
                check(s.input_dim >= 1, "data.synthetic.input_dim", || {
                    "must be >= 1".into()
                })?;
                check(s.separation >= 0.0, "data.synthetic.separation", || {
                    "must be non-negative".into()
                })?;
            }
            (None, Some(_)) => {}
        }
        if let Some(c) = self.class_count() {
            check(d.target_class < c, "data.target_class", || {
                format!("must be < class_count ({c})")
            })?;
        }
        let k_p = self.poison_count();
        let pop_n = self.population_size();
        check(d.k + k_p <= pop_n, "data.k", || {
            format!(
                "k + poison.count = {} exceeds the population of {pop_n}",
                d.k + k_p
            )
        })?;
        check(d.alpha_t > 0.0 && d.alpha_t <= 1.0, "data.alpha_t", || {
            "must be in (0, 1]".into()
        })?;
        check(d.alpha_d > 0.0, "data.alpha_d", || {
            "must be positive".into()
        })?;
        check(d.local_size >= 1, "data.local_size", || {
            "must be >= 1".into()
        })?;
        check(d.test_per_class >= 1, "data.test_per_class", || {
            "must be >= 1".into()
        })?;
        check(d.target_set_size >= 1, "data.target_set_size", || {
            "must be >= 1".into()
        })?;

        if let Some(a) = &self.attack {
            check(a.drop_count <= pop_n, "attack.drop_count", || {
                format!("must be <= the population ({pop_n})")
            })?;
            if a.kind == AttackKind::PerfectKnowledge {
                check(a.drop_count <= d.k, "attack.drop_count", || {
                    format!("perfect knowledge can drop at most k = {} clients", d.k)
                })?;
            }
            if a.kind == AttackKind::Targeted {
                check(
                    a.rounds_before_drop >= 1,
                    "attack.rounds_before_drop",
                    || "must be >= 1 for a targeted attack".into(),
                )?;
            }
            match (a.observation, a.visible_count) {
                (ObservationKind::EncryptedLimited, None) => {
                    return Err(Error::config(
                        "attack.visible_count",
                        "required for encrypted_limited observation",
                    ))
                }
                (_, Some(v)) => check(v >= 1 && v <= pop_n, "attack.visible_count", || {
                    format!("must be in [1, {pop_n}]")
                })?,
                _ => {}
            }
            check(a.alpha_v > 0.0, "attack.alpha_v", || {
                "must be positive".into()
            })?;
        }

        if let Some(pz) = &self.poison {
            check(pz.boost > 0.0, "poison.boost", || "must be positive".into())?;
            if let (Some(f), Some(c)) = (pz.flip_to, self.class_count()) {
                check(f < c, "poison.flip_to", || {
                    format!("must be < class_count ({c})")
                })?;
            }
            if let Some(f) = pz.flip_to {
                check(f != d.target_class, "poison.flip_to", || {
                    "must differ from data.target_class".into()
                })?;
            }
        }

        if let Some(def) = &self.defense {
            if let Some(c) = def.clip_norm {
                check(c > 0.0, "defense.clip_norm", || "must be positive".into())?;
            }
            if def.upsample_count > 0 {
                check(
                    def.upsample_factor >= 1.0,
                    "defense.upsample_factor",
                    || "must be >= 1".into(),
                )?;
                let product = def.upsample_count as f64 * def.upsample_factor;
                check(product < pop_n as f64, "defense.upsample_count", || {
                    format!("upsample_count * upsample_factor = {product} must be < {pop_n}")
                })?;
                check(
                    def.rounds_before_upsample >= 1,
                    "defense.rounds_before_upsample",
                    || "must be >= 1".into(),
                )?;
            }
        }
        Ok(())
    }
}
