//! Run configuration: schema, defaults, layered overrides, and snapshots.
//!
//! A run is fully described by one TOML document. Optional fields resolve
//! against baked-in defaults (and against the realm catalog for variants and
//! buffer capacities), so the snapshot written next to a run's outputs is the
//! complete, self-contained recipe: re-running from it with the same seed
//! reproduces the metrics stream bit for bit.
//!
//! Override precedence, highest first: command-line `key=value` pairs, then
//! `DGAIL_`-prefixed environment variables, then the config file, then
//! defaults. Dotted keys address nested tables (`constraints.i_max_expert`);
//! in environment variables the dot is spelled `__`
//! (`DGAIL_CONSTRAINTS__I_MAX_EXPERT`).

use crate::buffers::load_reference_sizes;
use crate::env::{realm_info, RealmId};
use crate::error::{Error, Result};
use crate::mine::MiUnits;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Environment-variable override prefix.
pub const ENV_PREFIX: &str = "DGAIL_";

/// Training recipe. Everything except `dcl` shares the same adversarial
/// core; the variants differ in which penalties and stabilizers are active
/// and where the learner acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Full method: expert-set MI penalty, prior-set dual penalty, spectral
    /// norm, two statistics networks.
    #[serde(rename = "disentangail")]
    Disentangail,
    /// No prior data: the dual penalty and both prior buffers are dropped.
    #[serde(rename = "no_prior")]
    NoPrior,
    /// Domain-confusion baseline: a gradient-reversed domain classifier on
    /// single latents replaces both MI penalties.
    #[serde(rename = "dcl")]
    Dcl,
    /// Plain adversarial imitation from observations; no latent constraints.
    #[serde(rename = "no_regularization")]
    NoRegularization,
    /// Full method with the learner placed in the source domain itself; the
    /// no-shift reference the transfer runs are measured against.
    #[serde(rename = "source_upper_bound")]
    SourceUpperBound,
    /// Full method minus spectral normalization of the invariant head.
    #[serde(rename = "no_sn")]
    NoSn,
    /// Full method with a single statistics network instead of the pair.
    #[serde(rename = "no_2st")]
    No2St,
    /// Both degenerate-solution preventions off: no spectral norm and a
    /// single statistics network.
    #[serde(rename = "no_prev")]
    NoPrev,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Disentangail,
        Algorithm::NoPrior,
        Algorithm::Dcl,
        Algorithm::NoRegularization,
        Algorithm::SourceUpperBound,
        Algorithm::NoSn,
        Algorithm::No2St,
        Algorithm::NoPrev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Disentangail => "disentangail",
            Algorithm::NoPrior => "no_prior",
            Algorithm::Dcl => "dcl",
            Algorithm::NoRegularization => "no_regularization",
            Algorithm::SourceUpperBound => "source_upper_bound",
            Algorithm::NoSn => "no_sn",
            Algorithm::No2St => "no_2st",
            Algorithm::NoPrev => "no_prev",
        }
    }

    /// Expert-set MI penalty active by default.
    pub fn default_beta(self) -> bool {
        !matches!(self, Algorithm::Dcl | Algorithm::NoRegularization)
    }

    /// Prior-set dual penalty active by default.
    pub fn default_lambda(self) -> bool {
        !matches!(
            self,
            Algorithm::Dcl | Algorithm::NoRegularization | Algorithm::NoPrior
        )
    }

    /// Whether prior buffers are collected and sampled at all.
    pub fn uses_priors(self) -> bool {
        !matches!(
            self,
            Algorithm::NoPrior | Algorithm::NoRegularization | Algorithm::Dcl
        )
    }

    pub fn spectral_norm(self) -> bool {
        !matches!(self, Algorithm::NoSn | Algorithm::NoPrev)
    }

    pub fn double_stat(self) -> bool {
        !matches!(self, Algorithm::No2St | Algorithm::NoPrev)
    }

    /// The learner trains in the source variant instead of the target.
    pub fn agent_in_source(self) -> bool {
        matches!(self, Algorithm::SourceUpperBound)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Algorithm> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown algorithm '{s}' (expected one of {})",
                    Algorithm::ALL.map(|a| a.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSpec {
    /// Expert-set MI budget (geometric beta scheduler target).
    pub i_max_expert: f64,
    /// Prior-set MI budget (dual ascent target).
    pub i_max_prior: f64,
    pub units: MiUnits,
    /// Dual-ascent step size for lambda.
    pub dual_step: f64,
}

impl Default for ConstraintSpec {
    fn default() -> ConstraintSpec {
        ConstraintSpec {
            i_max_expert: 0.99,
            i_max_prior: 0.001,
            units: MiUnits::Bits,
            dual_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscSpec {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Windows per class in one adversarial batch.
    pub batch: usize,
    /// Gradient-reversal weight; read only by the dcl variant.
    pub dcl_weight: f64,
}

impl Default for DiscSpec {
    fn default() -> DiscSpec {
        DiscSpec {
            latent_dim: 8,
            hidden: 32,
            batch: 128,
            dcl_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatSpec {
    pub hidden: usize,
    /// Windows sampled per class for one MI-estimation batch; every frame of
    /// a sampled window enters individually.
    pub mi_windows: usize,
    /// Shuffle replicas when synthesizing the product-of-marginals batch.
    pub shuffle_replicas: usize,
}

impl Default for StatSpec {
    fn default() -> StatSpec {
        StatSpec {
            hidden: 32,
            mi_windows: 32,
            shuffle_replicas: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSpec {
    pub hidden: usize,
    pub temperature: f64,
    pub discount: f64,
    pub polyak: f64,
    /// Transitions per learner update.
    pub batch: usize,
}

impl Default for AgentSpec {
    fn default() -> AgentSpec {
        AgentSpec {
            hidden: 64,
            temperature: 0.2,
            discount: 0.99,
            polyak: 0.995,
            batch: 128,
        }
    }
}

/// One learning rate and (fixed) momentum pair shared by every optimizer in
/// the run. The momentum parameters are part of the snapshot contract but
/// are not tunable; validation rejects other values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSpec {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimSpec {
    fn default() -> OptimSpec {
        OptimSpec {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSpec {
    pub expert: Option<usize>,
    pub agent: Option<usize>,
    pub prior_expert: Option<usize>,
    pub prior_agent: Option<usize>,
}

impl Default for BufferSpec {
    fn default() -> BufferSpec {
        BufferSpec {
            expert: None,
            agent: None,
            prior_expert: None,
            prior_agent: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSpec {
    /// Demonstration episodes recorded from the source-domain expert.
    pub expert_episodes: usize,
    /// Random-behavior steps per domain for the prior sets.
    pub prior_steps: usize,
    /// Evaluation episodes per epoch checkpoint.
    pub eval_episodes: usize,
}

impl Default for CollectSpec {
    fn default() -> CollectSpec {
        CollectSpec {
            expert_episodes: 16,
            prior_steps: 400,
            eval_episodes: 10,
        }
    }
}

fn default_epoch_steps() -> usize {
    250
}

/// Complete description of one run. `resolve` fills every optional field, so
/// a resolved config serializes with no holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub realm: RealmId,
    /// Variant names from the realm catalog; defaults are the catalog's
    /// first variant (source) and its final, fully shifted variant (target).
    #[serde(default)]
    pub source_variant: Option<String>,
    #[serde(default)]
    pub target_variant: Option<String>,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Environment steps aggregated into one epoch.
    #[serde(default = "default_epoch_steps")]
    pub epoch_steps: usize,
    /// Explicit penalty switches; absent means "follow the algorithm".
    #[serde(default)]
    pub beta_penalty: Option<bool>,
    #[serde(default)]
    pub lambda_penalty: Option<bool>,
    #[serde(default)]
    pub constraints: ConstraintSpec,
    #[serde(default)]
    pub discriminator: DiscSpec,
    #[serde(default)]
    pub statistics: StatSpec,
    #[serde(default)]
    pub agent: AgentSpec,
    #[serde(default)]
    pub optimizer: OptimSpec,
    #[serde(default)]
    pub buffers: BufferSpec,
    #[serde(default)]
    pub collect: CollectSpec,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Disentangail
}

fn default_epochs() -> usize {
    5
}

impl RunConfig {
    /// Bare config for a realm; everything else at defaults, unresolved.
    pub fn for_realm(realm: RealmId) -> RunConfig {
        RunConfig {
            realm,
            source_variant: None,
            target_variant: None,
            algorithm: default_algorithm(),
            seed: 0,
            epochs: default_epochs(),
            epoch_steps: default_epoch_steps(),
            beta_penalty: None,
            lambda_penalty: None,
            constraints: ConstraintSpec::default(),
            discriminator: DiscSpec::default(),
            statistics: StatSpec::default(),
            agent: AgentSpec::default(),
            optimizer: OptimSpec::default(),
            buffers: BufferSpec::default(),
            collect: CollectSpec::default(),
        }
    }

    /// Fill every optional field from the defaults and the realm catalog,
    /// then validate. The result serializes as a complete snapshot.
    pub fn resolve(mut self) -> Result<RunConfig> {
        let info = realm_info(self.realm);
        let first = info.variants.first().expect("realms ship variants");
        let last = info.variants.last().expect("realms ship variants");
        if self.source_variant.is_none() {
            self.source_variant = Some(first.name.clone());
        }
        if self.target_variant.is_none() {
            self.target_variant = Some(if self.algorithm.agent_in_source() {
                self.source_variant.clone().unwrap()
            } else {
                last.name.clone()
            });
        }
        if self.algorithm.agent_in_source() {
            // The upper-bound recipe acts where the expert acted; pin the
            // snapshot to say so.
            self.target_variant = self.source_variant.clone();
        }
        if self.beta_penalty.is_none() {
            self.beta_penalty = Some(self.algorithm.default_beta());
        }
        if self.lambda_penalty.is_none() {
            self.lambda_penalty = Some(self.algorithm.default_lambda());
        }
        let reference = load_reference_sizes(self.realm);
        let b = &mut self.buffers;
        b.expert.get_or_insert(reference.expert);
        b.agent.get_or_insert(reference.agent);
        b.prior_expert.get_or_insert(reference.prior_expert);
        b.prior_agent.get_or_insert(reference.prior_agent);
        self.validate()?;
        Ok(self)
    }

    /// Variant index lookup against the realm catalog.
    pub fn variant_index(&self, name: &str) -> Result<usize> {
        let info = realm_info(self.realm);
        info.variants
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| {
                Error::config(format!(
                    "realm {} has no variant '{name}' (available: {})",
                    self.realm,
                    info.variants
                        .iter()
                        .map(|v| v.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }

    pub fn source_index(&self) -> Result<usize> {
        self.variant_index(self.source_variant.as_deref().ok_or_else(unresolved)?)
    }

    pub fn target_index(&self) -> Result<usize> {
        self.variant_index(self.target_variant.as_deref().ok_or_else(unresolved)?)
    }

    /// Resolved penalty switches.
    pub fn beta_on(&self) -> bool {
        self.beta_penalty
            .unwrap_or_else(|| self.algorithm.default_beta())
    }

    pub fn lambda_on(&self) -> bool {
        self.lambda_penalty
            .unwrap_or_else(|| self.algorithm.default_lambda())
    }

    fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(msg.to_string()))
            }
        };
        self.source_index()?;
        self.target_index()?;
        if self.algorithm == Algorithm::Dcl && (self.beta_penalty == Some(true) || self.lambda_penalty == Some(true)) {
            return Err(Error::config(
                "dcl replaces the MI constraints; beta_penalty/lambda_penalty cannot be enabled with it"
                    .to_string(),
            ));
        }
        if self.lambda_on() && !self.algorithm.uses_priors() {
            return Err(Error::config(format!(
                "lambda_penalty needs prior buffers, which algorithm '{}' disables",
                self.algorithm
            )));
        }
        check(self.epoch_steps >= 1, "epoch_steps must be at least 1")?;
        check(
            self.discriminator.latent_dim >= 1 && self.discriminator.hidden >= 1,
            "discriminator latent_dim and hidden must be positive",
        )?;
        check(
            self.discriminator.batch >= 2 && self.agent.batch >= 2,
            "batch sizes must be at least 2",
        )?;
        check(
            self.discriminator.dcl_weight >= 0.0,
            "dcl_weight must be non-negative",
        )?;
        check(
            self.statistics.hidden >= 1
                && self.statistics.mi_windows >= 1
                && self.statistics.shuffle_replicas >= 1,
            "statistics network settings must be positive",
        )?;
        check(self.agent.hidden >= 1, "agent hidden width must be positive")?;
        check(
            self.agent.temperature >= 0.0,
            "agent temperature must be non-negative",
        )?;
        check(
            self.agent.discount >= 0.0 && self.agent.discount < 1.0,
            "agent discount must lie in [0, 1)",
        )?;
        check(
            self.agent.polyak > 0.0 && self.agent.polyak < 1.0,
            "agent polyak must lie in (0, 1)",
        )?;
        check(
            self.optimizer.lr.is_finite() && self.optimizer.lr > 0.0,
            "learning rate must be positive and finite",
        )?;
        if (self.optimizer.beta1, self.optimizer.beta2) != (0.9, 0.999) {
            return Err(Error::config(
                "optimizer momentum parameters are fixed at 0.9/0.999".to_string(),
            ));
        }
        check(
            self.constraints.i_max_expert > 0.0 && self.constraints.i_max_expert.is_finite(),
            "i_max_expert must be positive and finite",
        )?;
        check(
            self.constraints.i_max_prior >= 0.0 && self.constraints.i_max_prior.is_finite(),
            "i_max_prior must be non-negative and finite",
        )?;
        check(
            self.constraints.dual_step > 0.0,
            "dual_step must be positive",
        )?;
        let horizon = realm_info(self.realm).horizon;
        for (name, cap) in [
            ("expert", self.buffers.expert),
            ("agent", self.buffers.agent),
            ("prior_expert", self.buffers.prior_expert),
            ("prior_agent", self.buffers.prior_agent),
        ] {
            if let Some(c) = cap {
                if c < horizon {
                    return Err(Error::config(format!(
                        "buffers.{name} capacity {c} cannot hold one horizon-{horizon} episode"
                    )));
                }
            }
        }
        check(
            self.collect.expert_episodes >= 1,
            "collect.expert_episodes must be at least 1",
        )?;
        check(
            self.collect.eval_episodes >= 1,
            "collect.eval_episodes must be at least 1",
        )?;
        if self.algorithm.uses_priors() && self.collect.prior_steps < horizon {
            return Err(Error::config(format!(
                "collect.prior_steps {} cannot cover one horizon-{horizon} episode",
                self.collect.prior_steps
            )));
        }
        Ok(())
    }

    /// Serialize as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn unresolved() -> Error {
    Error::contract("config variants not resolved; call resolve() first")
}

/// Parse `key=value` override strings (dotted keys address nested tables).
pub fn parse_overrides(specs: &[String]) -> Result<Vec<(String, String)>> {
    specs
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| Error::config(format!("override '{s}' is not of the form key=value")))
        })
        .collect()
}

/// Translate `DGAIL_SECTION__KEY` environment pairs into dotted overrides.
/// Unrelated variables pass through untouched (they are simply skipped).
pub fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            if rest.is_empty() {
                return None;
            }
            Some((rest.to_ascii_lowercase().replace("__", "."), v))
        })
        .collect();
    // Deterministic application order regardless of environment iteration.
    out.sort();
    out
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::config(format!("override key '{key}' has an empty segment")));
        }
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| {
            Error::config(format!(
                "override key '{key}' descends into non-table field '{part}'"
            ))
        })?;
    }
    unreachable!("split always yields at least one part")
}

/// Parse a bare override value with TOML scalar syntax, falling back to a
/// string so unquoted names like `pointreach` work on the command line.
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    if let Ok(t) = doc.parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// Layer a config from its sources and resolve it. `path` may be absent when
/// overrides carry every required field. Typed errors name the offending key.
pub fn load_config(
    path: Option<&Path>,
    env_vars: impl Iterator<Item = (String, String)>,
    cli_overrides: &[String],
) -> Result<RunConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::format(p.display().to_string(), e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in env_overrides(env_vars) {
        set_dotted(&mut table, &key, parse_scalar(&raw))?;
    }
    for (key, raw) in parse_overrides(cli_overrides)? {
        set_dotted(&mut table, &key, parse_scalar(&raw))?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::format("run config".to_string(), e.to_string()))?;
    config.resolve()
}

/// Write the fully resolved config next to the run outputs; returns the path.
pub fn snapshot_config(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("config.toml");
    std::fs::write(&path, config.to_toml())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}
