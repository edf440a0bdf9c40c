//! Turbulence strength estimation from image statistics and the mapping from
//! strength to a temporal averaging window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::mean_gradient_magnitude;
use crate::videocore::{Plane, VideoSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// Pixel field of view in radians per pixel.
    pub pfov: f64,
    /// Aperture diameter in metres.
    pub aperture_d: f64,
    /// Path length in metres.
    pub distance_l: f64,
    pub turbulence_p: f64,
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.pfov, self.aperture_d, self.distance_l, self.turbulence_p]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("optical parameters must be finite and positive"))
        }
    }

    /// `PFOV^2 * D^(1/3) / (L * P)`.
    pub fn factor(&self) -> f64 {
        self.pfov * self.pfov * self.aperture_d.cbrt() / (self.distance_l * self.turbulence_p)
    }
}

/// Maps turbulence strength to a Gaussian window width in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub cn2_low: f64,
    pub cn2_high: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for Calibration {
    /// Bounds measured with the bundled simulator's mild and severe presets
    /// (proxy units, no optics).
    fn default() -> Self {
        Self {
            cn2_low: DEFAULT_CN2_LOW,
            cn2_high: DEFAULT_CN2_HIGH,
            sigma_min: 1.0,
            sigma_max: 20.0,
        }
    }
}

pub const DEFAULT_CN2_LOW: f64 = 0.001;
pub const DEFAULT_CN2_HIGH: f64 = 0.1;

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.cn2_low > 0.0 && self.cn2_high > self.cn2_low) {
            return Err(Error::invalid("calibration requires 0 < cn2_low < cn2_high"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return Err(Error::invalid("calibration requires 0 < sigma_min <= sigma_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceReport {
    pub cn2: f64,
    pub variance_term: f64,
    pub gradient_term: f64,
    pub window_sigma: f64,
    pub window_span: usize,
}

/// Odd span covering +-3 sigma.
pub fn span_for_sigma(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil().max(0.0) as usize + 1
}

/// Log-linear interpolation of the window sigma between the calibration
/// bounds, clamped at both ends.
pub fn window_from_cn2(cn2: f64, cal: &Calibration) -> (f64, usize) {
    let t = if cn2 <= cal.cn2_low {
        0.0
    } else if cn2 >= cal.cn2_high {
        1.0
    } else {
        (cn2.ln() - cal.cn2_low.ln()) / (cal.cn2_high.ln() - cal.cn2_low.ln())
    };
    let sigma = cal.sigma_min + t * (cal.sigma_max - cal.sigma_min);
    (sigma, span_for_sigma(sigma))
}

/// Mean over included pixels of the per-pixel temporal (population) variance.
pub fn temporal_variance(planes: &[&Plane], include: Option<&[bool]>) -> f64 {
    let n = planes.len() as f64;
    let len = planes[0].len();
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for i in 0..len {
        if include.is_some_and(|m| !m[i]) {
            continue;
        }
        let mean = planes.iter().map(|p| p.data[i] as f64).sum::<f64>() / n;
        let var = planes
            .iter()
            .map(|p| {
                let d = p.data[i] as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        acc += var;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

/// Estimates Cn2 on the luma of `seq`, optionally restricted to background
/// pixels (`background[i] == true`).
pub fn estimate_cn2(
    seq: &VideoSequence,
    background: Option<&[bool]>,
    optics: Option<&OpticalConfig>,
    calibration: &Calibration,
) -> Result<TurbulenceReport> {
    if seq.len() < 2 {
        return Err(Error::invalid("turbulence estimation needs at least 2 frames"));
    }
    if let Some(o) = optics {
        o.validate()?;
    }
    let (w, h) = (seq.width(), seq.height());
    if let Some(m) = background {
        if m.len() != w * h {
            return Err(Error::DimensionMismatch {
                expected: (w, h, 1),
                found: (m.len(), 1, 1),
                context: "background mask".into(),
            });
        }
    }
    let luma = seq.to_luma();
    let planes: Vec<&Plane> = luma.frames().iter().map(|f| &f.planes[0]).collect();
    let variance_term = temporal_variance(&planes, background);
    let mean = luma.temporal_mean()?;
    let gradient_term = mean_gradient_magnitude(&mean.planes[0], background);
    if !(gradient_term > 1e-12) {
        return Err(Error::DegenerateGradient);
    }
    let ratio = variance_term / gradient_term;
    let cn2 = optics.map_or(ratio, |o| o.factor() * ratio);
    let (window_sigma, window_span) = window_from_cn2(cn2, calibration);
    Ok(TurbulenceReport {
        cn2,
        variance_term,
        gradient_term,
        window_sigma,
        window_span,
    })
}
