//! Run configuration files, deterministic output formatting, and the
//! reproducibility manifest.
//!
//! A single JSON config describes the model, the driving process η, and
//! optional sampler overrides.  Key names are a stable contract:
//! `sigma_xi`, `mu_xi`, `pos_jumps: [{a, rho}]`,
//! `neg_jumps: [{a_hat, rho_hat}]`, `eta: {mu, sigma, jumps?}`, plus an
//! optional `sampler: {n_paths?, seed?, horizon?, grid_step?, stop_level?}`
//! block.  Unknown keys are rejected so typos fail loudly.
//!
//! All numeric output goes through one fixed 17-significant-digit format,
//! and manifests serialize with sorted keys, so identical inputs produce
//! byte-identical artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::SamplerConfig;
use crate::model::{EtaJumps, EtaSpec, HyperExpLevyModel, JumpTerm};

/// One upward jump family: Lévy density a·e^{−ρx} on x > 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosJump {
    pub a: f64,
    pub rho: f64,
}

/// One downward jump family: Lévy density â·e^{ρ̂x} on x < 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegJump {
    pub a_hat: f64,
    pub rho_hat: f64,
}

/// Jump mixture of η, same shape as the model's.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaJumpConfig {
    #[serde(default)]
    pub pos_jumps: Vec<PosJump>,
    #[serde(default)]
    pub neg_jumps: Vec<NegJump>,
}

/// The η block: drift, volatility, optional jump mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaConfig {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<EtaJumpConfig>,
}

/// Optional sampler overrides; anything unset falls back to the
/// model-derived defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_level: Option<f64>,
}

/// Parsed run configuration file.
///
/// ```
/// let config = expfun::RunConfig::from_str(r#"{
///     "sigma_xi": 1.4142135623730951,
///     "mu_xi": -1.0,
///     "pos_jumps": [{"a": 0.5, "rho": 2.0}],
///     "eta": {"mu": 0.0, "sigma": 1.0}
/// }"#)?;
/// let model = config.model()?;
/// assert!(model.mean() < 0.0);
/// # Ok::<(), expfun::Error>(())
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sigma_xi: f64,
    pub mu_xi: f64,
    #[serde(default)]
    pub pos_jumps: Vec<PosJump>,
    #[serde(default)]
    pub neg_jumps: Vec<NegJump>,
    pub eta: EtaConfig,
    #[serde(default)]
    pub sampler: SamplerOverrides,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_str(&text)
    }

    pub fn model(&self) -> Result<HyperExpLevyModel> {
        HyperExpLevyModel::new(
            self.sigma_xi,
            self.mu_xi,
            self.pos_jumps
                .iter()
                .map(|j| JumpTerm::new(j.a, j.rho))
                .collect(),
            self.neg_jumps
                .iter()
                .map(|j| JumpTerm::new(j.a_hat, j.rho_hat))
                .collect(),
        )
    }

    pub fn eta(&self) -> Result<EtaSpec> {
        let jumps = self.eta.jumps.as_ref().map(|j| EtaJumps {
            pos: j.pos_jumps.iter().map(|t| JumpTerm::new(t.a, t.rho)).collect(),
            neg: j
                .neg_jumps
                .iter()
                .map(|t| JumpTerm::new(t.a_hat, t.rho_hat))
                .collect(),
        });
        EtaSpec::new(self.eta.mu, self.eta.sigma, jumps)
    }

    /// Sampler configuration: model-derived defaults, then config-file
    /// overrides, then command-line overrides (strongest).
    pub fn sampler(
        &self,
        model: &HyperExpLevyModel,
        n_flag: Option<usize>,
        seed_flag: Option<u64>,
    ) -> Result<SamplerConfig> {
        let n = n_flag.or(self.sampler.n_paths).unwrap_or(100_000);
        let seed = seed_flag.or(self.sampler.seed).unwrap_or(1);
        let mut cfg = SamplerConfig::for_model(model, n, seed)?;
        if let Some(h) = self.sampler.horizon {
            cfg.horizon = h;
        }
        if let Some(g) = self.sampler.grid_step {
            cfg.grid_step = g;
        }
        if let Some(s) = self.sampler.stop_level {
            cfg.stop_level = s;
        }
        Ok(cfg)
    }
}

/// FNV-1a hash of the model + η parameters in canonical field order,
/// rendered as 16 hex digits.  Stable across runs and platforms.
pub fn model_hash(model: &HyperExpLevyModel, eta: &EtaSpec) -> String {
    let mut repr = String::new();
    repr.push_str(&format!(
        "sigma_xi={:.17e};mu_xi={:.17e};",
        model.sigma_xi(),
        model.mu_xi()
    ));
    for t in model.pos_jumps() {
        repr.push_str(&format!("pos={:.17e},{:.17e};", t.weight, t.rate));
    }
    for t in model.neg_jumps() {
        repr.push_str(&format!("neg={:.17e},{:.17e};", t.weight, t.rate));
    }
    repr.push_str(&format!("eta.mu={:.17e};eta.sigma={:.17e};", eta.mu(), eta.sigma()));
    if let Some(j) = eta.jumps() {
        for t in &j.pos {
            repr.push_str(&format!("eta.pos={:.17e},{:.17e};", t.weight, t.rate));
        }
        for t in &j.neg {
            repr.push_str(&format!("eta.neg={:.17e},{:.17e};", t.weight, t.rate));
        }
    }
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in repr.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Reproducibility record written next to every file output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub model_hash: String,
    pub seed: u64,
    /// Echo of the effective command parameters (sorted keys).
    pub parameters: BTreeMap<String, String>,
    /// The parsed configuration, re-serialized.
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        config: &RunConfig,
        model: &HyperExpLevyModel,
        eta: &EtaSpec,
        seed: u64,
    ) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            model_hash: model_hash(model, eta),
            seed,
            parameters: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> RunManifest {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        // serde_json maps use sorted keys; struct fields keep declaration
        // order — both deterministic.
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    /// The comment line stamped at the top of every data file, tying it to
    /// its manifest sidecar.
    pub fn reference_line(&self) -> String {
        format!(
            "# manifest: model={} seed={} subcommand={}\n",
            self.model_hash, self.seed, self.subcommand
        )
    }
}

/// Fixed float format for all CSV output: 17 significant digits, enough to
/// round-trip any f64 bit pattern.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `content` to `path`, or to stdout when the path is `-`.  File
/// outputs also get a `<path>.manifest.json` sidecar when a manifest is
/// supplied.
pub fn write_output(path: &str, content: &str, manifest: Option<&RunManifest>) -> Result<()> {
    if path == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(content.as_bytes())?;
        return Ok(());
    }
    std::fs::write(path, content)?;
    if let Some(m) = manifest {
        let sidecar = format!("{path}.manifest.json");
        std::fs::write(sidecar, m.to_json() + "\n")?;
    }
    Ok(())
}

/// Parses an x grid: either `a:b:n` (n evenly spaced points from a to b
/// inclusive, n ≥ 2) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad range start '{}'", parts[0])))?;
        let b: f64 = parts[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad range end '{}'", parts[1])))?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad range count '{}'", parts[2])))?;
        if n < 2 {
            return Err(Error::Parse("range needs at least 2 points".into()));
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Parse("range endpoints must be finite".into()));
        }
        return Ok((0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect());
    }
    if parts.len() != 1 {
        return Err(Error::Parse(format!(
            "expected 'a:b:n' or a comma-separated list, got '{text}'"
        )));
    }
    let vals: Result<Vec<f64>> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{t}'")))
        })
        .collect();
    let vals = vals?;
    if vals.is_empty() {
        return Err(Error::Parse("empty value list".into()));
    }
    Ok(vals)
}
