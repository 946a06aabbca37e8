//! Run configuration: TOML file, CLI-flag overrides, and the config hash
//! recorded in every output-file header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run seed; recorded in every output header and mixed into per-item
    /// seeds.
    pub seed: u64,
    /// Worker threads for per-query parallelism.
    pub workers: usize,
    /// Output directory for stage artifacts.
    pub output_dir: PathBuf,
    /// Append-only LLM request journal (written unless replaying).
    pub journal: Option<PathBuf>,
    /// Inclusion:exclusion mix for coverage generation, e.g. "1:1".
    pub intent_ratio: String,
    /// A run exits with code 2 when the failed fraction exceeds this.
    pub failure_threshold: f64,
    pub gateway: GatewayConfig,
    pub search: SearchConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// "http" (env-configured), "mock", or "replay".
    pub provider: String,
    /// Sampling temperature applied to every request.
    pub temperature: f64,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    /// 0 disables rate limiting.
    pub requests_per_minute: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            provider: "http".into(),
            temperature: 1.0,
            max_attempts: 5,
            base_delay_ms: 1_000,
            requests_per_minute: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// "http" (env-configured), "fixtures", or "synthetic".
    pub provider: String,
    pub fixtures_dir: Option<PathBuf>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            provider: "synthetic".into(),
            fixtures_dir: None,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 1,
            output_dir: PathBuf::from("out"),
            journal: None,
            intent_ratio: "1:1".into(),
            failure_threshold: 0.2,
            gateway: GatewayConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: Self = toml::from_str(&raw)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    /// Parses "a:b" into an (inclusion, exclusion) pair.
    pub fn intent_ratio_parts(&self) -> anyhow::Result<(u32, u32)> {
        let (a, b) = self
            .intent_ratio
            .split_once(':')
            .ok_or_else(|| anyhow::anyhow!("intent_ratio must look like \"1:1\""))?;
        let a: u32 = a.trim().parse()?;
        let b: u32 = b.trim().parse()?;
        if a + b == 0 {
            anyhow::bail!("intent_ratio must have a nonzero side");
        }
        Ok((a, b))
    }

    /// Hash over the knobs that shape the produced data (seed, intent mix,
    /// temperature, retry budget). Volatile paths and worker counts are
    /// excluded so equivalent runs in different directories share headers.
    pub fn config_hash(&self) -> String {
        let semantic = serde_json::json!({
            "seed": self.seed,
            "intent_ratio": self.intent_ratio,
            "temperature": self.gateway.temperature,
            "max_attempts": self.gateway.max_attempts,
        });
        let digest = Sha256::digest(semantic.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_hash_is_path_independent() {
        let mut a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        a.output_dir = PathBuf::from("/tmp/run-a");
        b.output_dir = PathBuf::from("/tmp/run-b");
        b.workers = 8;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 7;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn toml_round_trip() {
        let toml_text = r#"
            seed = 7
            intent_ratio = "2:1"
            [gateway]
            provider = "mock"
            base_delay_ms = 0
        "#;
        let cfg: PipelineConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.intent_ratio_parts().unwrap(), (2, 1));
        assert_eq!(cfg.gateway.provider, "mock");
        assert_eq!(cfg.gateway.max_attempts, 5);
    }

    #[test]
    fn bad_ratio_is_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.intent_ratio = "0:0".into();
        assert!(cfg.intent_ratio_parts().is_err());
        cfg.intent_ratio = "nonsense".into();
        assert!(cfg.intent_ratio_parts().is_err());
    }
}
