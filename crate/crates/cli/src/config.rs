//! Run configuration: one TOML file layered over a preset, then flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gmraim::attacks::ScenarioConfig;
use gmraim::baselines::KalmanConfig;
use gmraim::ingest::IngestConfig;
use gmraim::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Default,
    /// 1030-epoch walk with a coordinated ramp and three rogue access points.
    RogueRamp,
}

impl Preset {
    pub fn scenario(self, seed: u64) -> ScenarioConfig {
        match self {
            Preset::Default => ScenarioConfig {
                seed,
                ..ScenarioConfig::default()
            },
            Preset::RogueRamp => ScenarioConfig::rogue_ramp(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// False-positive targets for `compare` and `roc --targets`.
    pub targets: Vec<f64>,
    /// Scenario seeds simulated by `compare`.
    pub seeds: Vec<u64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            targets: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub scenario: ScenarioConfig,
    pub ingest: IngestConfig,
    pub pipeline: PipelineConfig,
    pub kalman: KalmanConfig,
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.pipeline.validate()?;
        self.kalman.validate()?;
        if let Some(t) = self
            .evaluation
            .targets
            .iter()
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            bail!("evaluation.targets: {t} outside [0, 1]");
        }
        Ok(())
    }
}

/// A loaded configuration and the raw bytes it came from.
pub struct Loaded {
    pub config: RunConfig,
    pub source: Option<Vec<u8>>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a TOML document over the preset it names. Keys absent from the
/// document keep the preset's values; unknown keys are errors that name
/// the key.
pub fn parse(text: &str, preset: Option<Preset>, seed: Option<u64>) -> Result<RunConfig> {
    let doc: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    let mut patch = serde_json::to_value(doc)?;
    let preset = match (preset, patch.get("preset")) {
        (Some(p), _) => p,
        (None, Some(v)) => serde_json::from_value(v.clone()).context("preset")?,
        (None, None) => Preset::default(),
    };
    let file_seed = patch.pointer("/scenario/seed").and_then(Value::as_u64);
    let seed = seed.or(file_seed).unwrap_or(ScenarioConfig::default().seed);
    if let Some(p) = patch.as_object_mut() {
        p.insert("preset".into(), serde_json::to_value(preset)?);
    }
    let base_cfg = RunConfig {
        preset,
        scenario: preset.scenario(seed),
        ..RunConfig::default()
    };
    let mut merged = serde_json::to_value(&base_cfg)?;
    merge(&mut merged, patch);
    let mut config: RunConfig =
        serde_json::from_value(merged).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    config.scenario.seed = seed;
    Ok(config)
}

pub fn load(path: Option<&Path>, preset: Option<Preset>, seed: Option<u64>) -> Result<Loaded> {
    let (text, source) = match path {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
            let text = String::from_utf8(bytes.clone())
                .with_context(|| format!("config {} is not UTF-8", p.display()))?;
            (text, Some(bytes))
        }
        None => (String::new(), None),
    };
    let config = parse(&text, preset, seed).with_context(|| match path {
        Some(p) => format!("in config {}", p.display()),
        None => "in default config".to_string(),
    })?;
    Ok(Loaded { config, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gmraim::filtering::SigmaMode;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse("", None, None).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn preset_then_file_then_flags() {
        let c = parse(
            "preset = \"rogue_ramp\"\n[scenario]\nseed = 4\n",
            None,
            Some(9),
        )
        .unwrap();
        assert_eq!(c.scenario.epochs, 1030);
        assert_eq!(c.scenario.seed, 9);
        assert_eq!(c.scenario.attack.seed, 1009);
        let c = parse(
            "[pipeline.filter]\nsigma_mode = \"rolling_window\"\n",
            None,
            None,
        )
        .unwrap();
        assert_eq!(c.pipeline.filter.sigma_mode, SigmaMode::RollingWindow);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse("[pipeline.detector]\nlambada = 1.0\n", None, None).unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("lambada"), "{msg}");
    }
}
