use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sharpen::SharpenConfig;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::flowcache::DEFAULT_CAPACITY_1080P;
use crate::segment::SegmentParams;
use crate::stabilize::DEFAULT_CROP_BORDER;
use crate::stackblend::BlendParams;
use crate::turbstats::{Calibration, OpticalConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Stage switches. Stages always run in the fixed order of the fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub stabilize: bool,
    pub segment: bool,
    pub turbulence: bool,
    pub stack: bool,
    pub blend: bool,
    pub sharpen: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            stabilize: true,
            segment: true,
            turbulence: true,
            stack: true,
            blend: true,
            sharpen: true,
        }
    }
}

impl StageToggles {
    pub fn none() -> Self {
        Self {
            stabilize: false,
            segment: false,
            turbulence: false,
            stack: false,
            blend: false,
            sharpen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizeConfig {
    pub crop_border: usize,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        Self {
            crop_border: DEFAULT_CROP_BORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub threshold: f32,
    pub candidates: Vec<usize>,
    pub morph_radius: usize,
    pub flow: FlowParams,
    /// Directory of precomputed flow fields; Horn-Schunck is used when unset.
    pub flow_dir: Option<PathBuf>,
    pub cache_fields_at_1080p: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        let p = SegmentParams::default();
        Self {
            threshold: p.threshold,
            candidates: p.candidates,
            morph_radius: p.morph_radius,
            flow: p.flow,
            flow_dir: None,
            cache_fields_at_1080p: DEFAULT_CAPACITY_1080P,
        }
    }
}

impl SegmentConfig {
    pub fn params(&self) -> SegmentParams {
        SegmentParams {
            threshold: self.threshold,
            candidates: self.candidates.clone(),
            morph_radius: self.morph_radius,
            flow: self.flow.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceConfig {
    pub calibration: Calibration,
    pub optics: Option<OpticalConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    /// Temporal sigma in frames; overrides the turbulence estimate when set.
    pub sigma: Option<f64>,
    /// Used when the turbulence stage is bypassed and no sigma is given.
    pub fallback_sigma: f64,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            fallback_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; the command line may override it.
    pub dir: Option<PathBuf>,
    pub save_masks: bool,
    pub save_report: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            save_masks: true,
            save_report: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub stages: StageToggles,
    pub stabilize: StabilizeConfig,
    pub segment: SegmentConfig,
    pub turbulence: TurbulenceConfig,
    pub stack: StackConfig,
    pub blend: BlendParams,
    pub sharpen: SharpenConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            workers: 0,
            stages: StageToggles::default(),
            stabilize: StabilizeConfig::default(),
            segment: SegmentConfig::default(),
            turbulence: TurbulenceConfig::default(),
            stack: StackConfig::default(),
            blend: BlendParams::default(),
            sharpen: SharpenConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        let t = self.segment.threshold;
        if !(t > 0.0 && t < 1.0) {
            return bad(format!("segment.threshold must lie in (0, 1), got {t}"));
        }
        if self.segment.candidates.is_empty() || self.segment.candidates.contains(&0) {
            return bad("segment.candidates must be non-empty and positive".into());
        }
        if self.segment.cache_fields_at_1080p == 0 {
            return bad("segment.cache_fields_at_1080p must be >= 1".into());
        }
        self.turbulence
            .calibration
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(o) = &self.turbulence.optics {
            o.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(s) = self.stack.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("stack.sigma must be positive".into());
            }
        }
        if !(self.stack.fallback_sigma > 0.0 && self.stack.fallback_sigma.is_finite()) {
            return bad("stack.fallback_sigma must be positive".into());
        }
        if !(self.blend.tolerance > 0.0) || self.blend.max_iterations == 0 {
            return bad("blend tolerance and max_iterations must be positive".into());
        }
        self.sharpen.validate().map_err(|e| Error::Config(e.to_string()))
    }
}
