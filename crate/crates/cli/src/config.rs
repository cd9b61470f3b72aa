//! Experiment configuration: TOML schema, validation and hashing.

use std::path::Path;

use anyhow::Context;
use ctflow::agents::AgentConfig;
use ctflow::dynamics::{drift_chain, lq1d, ou, ChainParams, DiffusionModel, HoldingTimeSpec, LqParams, OuParams, StartState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Version string recorded in every output file.
pub const VERSION: &str = env!("CTFLOW_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    CtSac,
    CtTd3,
    QOrthBaseline,
    Picard,
    DiscretizedPicard,
    RandomTimePicard,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::CtSac => "ct-sac",
            Algo::CtTd3 => "ct-td3",
            Algo::QOrthBaseline => "q-orth-baseline",
            Algo::Picard => "picard",
            Algo::DiscretizedPicard => "discretized-picard",
            Algo::RandomTimePicard => "random-time-picard",
        }
    }

    pub fn is_agent(self) -> bool {
        matches!(self, Algo::CtSac | Algo::CtTd3 | Algo::QOrthBaseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvSpec {
    DriftChain(ChainParams),
    Lq1d(LqParams),
    Ou(OuParams),
}

impl EnvSpec {
    pub fn build(&self) -> ctflow::Result<DiffusionModel> {
        match self {
            EnvSpec::DriftChain(p) => drift_chain(p),
            EnvSpec::Lq1d(p) => lq1d(p),
            EnvSpec::Ou(p) => ou(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Episode length in model time.
    pub horizon: f64,
    /// Start distribution; defaults to uniform over the state box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartState>,
    /// Euler–Maruyama substep; defaults to `min(u/4, 0.005 * mean u)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substep: Option<f64>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { horizon: 5.0, start: None, substep: None }
    }
}

/// Holding-time law: a fixed `u` when `u_min == u_max`, otherwise the
/// three-bucket mixture over `[u_min, u_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldingConfig {
    pub u_min: f64,
    pub u_max: f64,
    /// `(small, large, average)` bucket probabilities.
    pub fractions: [f64; 3],
}

impl Default for HoldingConfig {
    fn default() -> Self {
        Self { u_min: 0.05, u_max: 0.25, fractions: [0.4, 0.4, 0.2] }
    }
}

impl HoldingConfig {
    pub fn spec(&self) -> ctflow::Result<HoldingTimeSpec> {
        if self.u_min == self.u_max {
            HoldingTimeSpec::fixed(self.u_min)
        } else {
            HoldingTimeSpec::mixture(self.u_min, self.u_max, self.fractions)
        }
    }
}

/// Settings of the value-flow iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub tau: f64,
    pub alpha: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    /// Grid nodes per state axis.
    pub grid_nodes: usize,
    /// Holding time of the discretized estimator.
    pub u: f64,
    pub richardson: bool,
    /// Random-time atoms (equal weights); empty derives them from `[holding]`.
    pub atoms: Vec<f64>,
    /// Midpoint atoms per holding bucket when `atoms` is empty.
    pub atoms_per_bucket: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            tau: 0.01,
            alpha: 0.0,
            max_iters: 100_000,
            stop_tol: 1e-8,
            grid_nodes: 33,
            u: 0.1,
            richardson: false,
            atoms: Vec::new(),
            atoms_per_bucket: 2,
        }
    }
}

/// Grid dynamic-programming oracle settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub enabled: bool,
    /// Oracle grid = flow grid refined by this factor.
    pub refine: usize,
    /// Backup time step; defaults to the flow's `tau`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { enabled: true, refine: 4, tau: None, tol: 1e-10, max_iters: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub checkpoint: bool,
    /// Fill the `wall_ms` column (makes metrics files differ between runs).
    pub wall_time: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { checkpoint: true, wall_time: false }
    }
}

fn default_steps() -> usize {
    20_000
}

/// Orthogonality-baseline table size.
fn default_baseline_nodes() -> usize {
    33
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub algo: Algo,
    #[serde(default)]
    pub seed: u64,
    /// Environment steps for agents.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_baseline_nodes")]
    pub baseline_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub env: EnvSpec,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub holding: HoldingConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// An invalid configuration file (syntax, schema or value domain).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: String) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg))
}

/// 1-based line of the first `key = ...` assignment inside table `section`
/// (or one of its sub-tables); `""` is the top level.
fn line_of(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut table = String::new();
    for (i, l) in src.lines().enumerate() {
        let t = l.trim();
        if let Some(h) = t.strip_prefix('[') {
            table = h.trim_end_matches(']').trim().to_string();
            continue;
        }
        let in_section = table == section || (!section.is_empty() && table.starts_with(&format!("{section}.")));
        if in_section && t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('=')) {
            return Some(i + 1);
        }
    }
    None
}

/// Attach the line of the offending key to a validation message whose first
/// word names the key.
fn locate(src: &str, section: &str, msg: &str) -> anyhow::Error {
    let key = msg.split_whitespace().next().unwrap_or("");
    let table = if section.is_empty() { String::new() } else { format!("[{section}] ") };
    match line_of(src, section, key) {
        Some(line) => config_error(format!("config error at line {line}: {table}{msg}")),
        None => config_error(format!("config error: {table}{msg}")),
    }
}

impl ExperimentConfig {
    pub fn parse(src: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message();
            // Fields of tagged tables are reported at the table header; point at the key itself.
            let key_line = msg
                .strip_prefix("unknown field `")
                .and_then(|rest| rest.split('`').next())
                .and_then(|key| src.lines().position(|l| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))));
            match key_line {
                Some(i) => config_error(format!("config error at line {}: {msg}", i + 1)),
                None => config_error(format!("config error: {e}")),
            }
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            let at = line_of(src, "", "schema_version").map(|l| format!(" at line {l}")).unwrap_or_default();
            return Err(config_error(format!(
                "config error{at}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate(src)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&src).with_context(|| format!("in {}", path.display()))
    }

    fn validate(&self, src: &str) -> anyhow::Result<()> {
        let strip = |e: ctflow::Error| e.to_string().trim_start_matches("invalid config: ").to_string();
        self.env.build().map_err(|e| locate(src, "env", &strip(e)))?;
        self.holding.spec().map_err(|e| locate(src, "holding", &strip(e)))?;
        self.agent.validate().map_err(|e| locate(src, "agent", &strip(e)))?;
        let f = &self.flow;
        let flow = ctflow::value_flow::FlowConfig::new(f.tau, f.alpha).with_stop_tol(f.stop_tol);
        flow.validate().map_err(|e| locate(src, "flow", &strip(e)))?;
        if f.grid_nodes < 3 {
            return Err(locate(src, "flow", &format!("grid_nodes must be >= 3, got {}", f.grid_nodes)));
        }
        if !(f.u > 0.0) {
            return Err(locate(src, "flow", &format!("u must be > 0, got {}", f.u)));
        }
        if let Some(&bad) = f.atoms.iter().find(|&&u| !(u > 0.0)) {
            return Err(locate(src, "flow", &format!("atoms must be > 0, got {bad}")));
        }
        if let Some(t) = self.oracle.tau.filter(|t| !(*t > 0.0)) {
            return Err(locate(src, "oracle", &format!("tau must be > 0, got {t}")));
        }
        if self.oracle.refine == 0 {
            return Err(locate(src, "oracle", "refine must be >= 1"));
        }
        if !(self.oracle.tol > 0.0) {
            return Err(locate(src, "oracle", &format!("tol must be > 0, got {}", self.oracle.tol)));
        }
        if !(self.episode.horizon > 0.0) {
            return Err(locate(src, "episode", &format!("horizon must be > 0, got {}", self.episode.horizon)));
        }
        if self.steps == 0 {
            return Err(locate(src, "", "steps must be >= 1"));
        }
        Ok(())
    }

    /// Materialise defaults that depend on the model.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if self.episode.start.is_none() {
            let m = self.env.build()?;
            let (lo, hi) = m.bounds().iter().copied().unzip();
            self.episode.start = Some(StartState::Uniform { lo, hi });
        }
        Ok(self)
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Hash of an arbitrary serialisable value, used for cache keys.
pub fn hash_of<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_string(v).expect("value serialises");
    format!("{:x}", Sha256::digest(json.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nalgo = \"picard\"\n\n[env]\nname = \"drift-chain\"\n";

    #[test]
    fn minimal_config_resolves_and_round_trips() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap().resolve().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let src = format!("{MINIMAL}bogus = 3\n");
        let e = ExperimentConfig::parse(&src).unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line 6"), "{e}");
        let src = "schema_version = 1\nalgo = \"picard\"\n[env]\nname = \"drift-chain\"\n[agent]\ntua = 0.1\n";
        let e = ExperimentConfig::parse(src).unwrap_err().to_string();
        assert!(e.contains("tua") && e.contains("line 6"), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let src = format!("{MINIMAL}\n[agent]\nlr_critic = -1.0\n");
        let e = ExperimentConfig::parse(&src).unwrap_err().to_string();
        assert!(e.contains("line 8") && e.contains("lr_critic"), "{e}");
        let e = ExperimentConfig::parse("schema_version = 2\nalgo = \"picard\"\n[env]\nname = \"ou\"\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
