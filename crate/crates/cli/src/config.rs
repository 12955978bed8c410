//! The JSON run configuration consumed by `mixsr train`.
//!
//! ```json
//! {
//!   "corpus": "data/train",
//!   "out": "runs/mscn2",
//!   "mixture": {
//!     "experts": [
//!       { "kind": "scn", "dict_size": 64 },
//!       { "kind": "scn", "dict_size": 64 }
//!     ],
//!     "weight_module": { "gate": "linear" }
//!   },
//!   "train": { "max_iterations": 100000, "seed": 7 }
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mixsr_core::mixture::{MixtureConfig, WeightModuleConfig};
use mixsr_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of ground-truth training images.
    pub corpus: PathBuf,
    /// Output directory for the loss log, checkpoints and final model.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub mixture: MixtureConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Single-expert model whose expert initializes every expert of the mixture.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
    /// Print the smoothed loss every this many iterations; 0 is silent.
    #[serde(default = "RunConfig::default_log_every")]
    pub log_every: usize,
}

impl RunConfig {
    fn default_log_every() -> usize {
        100
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        if cfg.mixture.weight_module.is_none() && cfg.mixture.experts.len() >= 2 {
            cfg.mixture.weight_module = Some(WeightModuleConfig::default());
        }
        cfg.mixture.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config `{}`", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.corpus = base.join(&cfg.corpus);
        cfg.out = cfg.out.map(|p| base.join(p));
        cfg.init_from = cfg.init_from.map(|p| base.join(p));
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mixsr_core::experts::ExpertConfig;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse(
            r#"{"corpus": "c", "mixture": {"experts": [{"kind": "scn", "dict_size": 64},
                {"kind": "scn", "dict_size": 64}]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert!(cfg.mixture.weight_module.is_some());
        match &cfg.mixture.experts[1] {
            ExpertConfig::Scn(s) => assert_eq!((s.dict_size, s.stages), (64, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shipped_configs_parse() {
        for (text, n, dict) in [
            (include_str!("../../../configs/mscn2.json"), 2, 64),
            (include_str!("../../../configs/mscn4.json"), 4, 32),
        ] {
            let cfg = RunConfig::parse(text).unwrap();
            assert_eq!(cfg.mixture.experts.len(), n);
            assert!(cfg.mixture.weight_module.is_some());
            match &cfg.mixture.experts[0] {
                ExpertConfig::Scn(s) => assert_eq!(s.dict_size, dict),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [
            (
                r#"{"corpus": "c", "mixture": {"experts": []}, "lr": 1}"#,
                "lr",
            ),
            (
                r#"{"corpus": "c", "mixture": {"experts": [{"kind": "scn"}]}, "train": {"momentun": 0.9}}"#,
                "momentun",
            ),
            (
                r#"{"corpus": "c", "mixture": {"experts": [{"kind": "scn", "dictsize": 8}]}}"#,
                "dictsize",
            ),
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(err.is::<UsageError>());
            assert!(err.to_string().contains(key), "{err}");
        }
    }

    #[test]
    fn invalid_values_are_named() {
        let err = RunConfig::parse(
            r#"{"corpus": "c", "mixture": {"experts": [{"kind": "scn"}]}, "train": {"momentum": 1.5}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("momentum"), "{err}");
        let err = RunConfig::parse(r#"{"corpus": "c", "mixture": {"experts": []}}"#).unwrap_err();
        assert!(err.to_string().contains("experts"), "{err}");
    }
}
