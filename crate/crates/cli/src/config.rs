use std::path::Path;

use anyhow::Context;
use longtail_core::compositor::{MosaicParams, PasteParams};
use longtail_core::ema::DEFAULT_DECAY;
use longtail_core::eval::EvalConfig;
use longtail_core::fixture::FixtureParams;
use longtail_core::rfs::DEFAULT_THRESHOLD;
use longtail_core::seesaw::SeesawConfig;
use longtail_core::tta::FuseConfig;
use serde::{Deserialize, Serialize};

/// Experiment manifest: a root seed plus one parameter table per subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rfs: RfsBlock,
    pub paste: PasteParams,
    pub mosaic: MosaicParams,
    pub seesaw: SeesawBlock,
    pub eval: EvalConfig,
    pub fuse: FuseConfig,
    pub ema: EmaBlock,
    pub fixture: FixtureParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfsBlock {
    pub threshold: f64,
}

impl Default for RfsBlock {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeesawBlock {
    pub p: f64,
    pub q: f64,
    pub eps: f64,
}

impl Default for SeesawBlock {
    fn default() -> Self {
        Self {
            p: SeesawConfig::DEFAULT_P,
            q: SeesawConfig::DEFAULT_Q,
            eps: SeesawConfig::DEFAULT_EPS,
        }
    }
}

impl SeesawBlock {
    pub fn with_counts(&self, class_counts: Vec<u64>) -> SeesawConfig {
        SeesawConfig {
            p: self.p,
            q: self.q,
            class_counts,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmaBlock {
    pub decay: f64,
}

impl Default for EmaBlock {
    fn default() -> Self {
        Self {
            decay: DEFAULT_DECAY,
        }
    }
}

impl ToolConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
