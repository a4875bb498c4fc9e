//! Fracture energy from far-field crack opening, and its regression against
//! ligament energy.
//!
//! Crack-face convention: the crack propagates along +x, opens along y, and
//! `r` is the distance behind the tip (`r = x_tip − x`). The far-field opening
//! is fitted as `δ² = C² (r + r₀)`, linear in `r` with a free intercept so the
//! effective tip position `r₀` is part of the fit. With the plane-stress LEFM
//! opening `δ(r) = (8 K_I / E') √(r / 2π)` and `E' = 3μ`:
//!
//! ```text
//! K_I = C E' √(2π) / 8,      G = K_I² / E' = π C² E' / 32
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::MaterialModel;
use crate::tensor3::Vec3;

const UM: f64 = 1e-6;

/// Minimum samples inside the window for a CTOD fit, and minimum nonempty
/// bins for an extracted profile.
pub const MIN_CTOD_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FractureError {
    #[error("need at least {min} samples in the fit window, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("fit window [{0}, {1}] µm does not overlap the data range [{2}, {3}] µm")]
    WindowOutsideData(f64, f64, f64, f64),
    #[error("invalid fit window [{0}, {1}] µm")]
    BadWindow(f64, f64),
    #[error("fitted C² = {0:e} is negative (opening decreases away from the tip)")]
    NegativeFit(f64),
    #[error("material: {0}")]
    Material(#[from] crate::constitutive::ConstitutiveError),
    #[error("no {0} crack-face points")]
    MissingFace(&'static str),
    #[error("need at least {min} bins with both faces, got {got}")]
    TooFewBins { got: usize, min: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("need at least 2 points for regression, got {0}")]
    TooFewPoints(usize),
    #[error("all E_lig values are identical; slope undefined")]
    DegenerateRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtodSample {
    /// Distance behind the tip, µm.
    pub r_um: f64,
    /// Total opening, µm.
    pub delta_um: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CtodProfile {
    pub label: String,
    pub samples: Vec<CtodSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractureFit {
    /// Parabola coefficient, √m.
    pub c_sqrt_m: f64,
    /// Fitted effective tip offset, µm.
    pub r_tip_offset_um: f64,
    /// Pa·√m.
    pub k_i: f64,
    /// J/m².
    pub g_c: f64,
    /// Pa.
    pub e_eff: f64,
    /// RMS of `δ − δ_fit` over the window, µm.
    pub fit_rms_um: f64,
    pub r_range_used_um: [f64; 2],
    pub n_used: usize,
}

/// `C` (√m) of the opening `δ = C √r` carrying energy release rate `g` (J/m²).
pub fn parabola_coefficient_for_g(g: f64, mat: &MaterialModel) -> f64 {
    (32.0 * g / (std::f64::consts::PI * mat.effective_modulus())).sqrt()
}

/// `K_I` for energy release rate `g` (plane stress, `E' = 3μ`).
pub fn k_from_g(g: f64, mat: &MaterialModel) -> f64 {
    (g * mat.effective_modulus()).sqrt()
}

pub fn fit_ctod(
    profile: &CtodProfile,
    mat: &MaterialModel,
    r_window_um: [f64; 2],
) -> Result<FractureFit, FractureError> {
    mat.validate()?;
    let [r_min, r_max] = r_window_um;
    if !(r_min.is_finite() && r_max.is_finite() && r_min < r_max) {
        return Err(FractureError::BadWindow(r_min, r_max));
    }
    if profile
        .samples
        .iter()
        .any(|s| !s.r_um.is_finite() || !s.delta_um.is_finite())
    {
        return Err(FractureError::NonFinite);
    }
    if let (Some(lo), Some(hi)) = (
        profile.samples.iter().map(|s| s.r_um).reduce(f64::min),
        profile.samples.iter().map(|s| s.r_um).reduce(f64::max),
    ) {
        if r_max < lo || r_min > hi {
            return Err(FractureError::WindowOutsideData(r_min, r_max, lo, hi));
        }
    }
    let used: Vec<(f64, f64)> = profile
        .samples
        .iter()
        .filter(|s| s.r_um >= r_min && s.r_um <= r_max)
        .map(|s| (s.r_um * UM, (s.delta_um * UM).powi(2)))
        .collect();
    if used.len() < MIN_CTOD_SAMPLES {
        return Err(FractureError::TooFewSamples {
            got: used.len(),
            min: MIN_CTOD_SAMPLES,
        });
    }

    let n = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / n;
    let my = used.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(FractureError::TooFewSamples {
            got: 1,
            min: MIN_CTOD_SAMPLES,
        });
    }
    let c2 = sxy / sxx;
    let a = my - c2 * mx;
    if c2 < 0.0 {
        return Err(FractureError::NegativeFit(c2));
    }
    let offset_m = if c2 > 0.0 { a / c2 } else { 0.0 };
    let c = c2.sqrt();
    let e_eff = mat.effective_modulus();
    let k_i = c * e_eff * (2.0 * std::f64::consts::PI).sqrt() / 8.0;
    let g_c = std::f64::consts::PI * c2 * e_eff / 32.0;

    let rss: f64 = used
        .iter()
        .map(|&(r, d2)| {
            let fit = (c2 * r + a).max(0.0).sqrt();
            (d2.sqrt() - fit).powi(2)
        })
        .sum();
    let lo = used.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) / UM;
    let hi = used.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) / UM;
    Ok(FractureFit {
        c_sqrt_m: c,
        r_tip_offset_um: offset_m / UM,
        k_i,
        g_c,
        e_eff,
        fit_rms_um: (rss / n).sqrt() / UM,
        r_range_used_um: [lo, hi],
        n_used: used.len(),
    })
}

/// G_c for each window, for reporting how much the result depends on it.
pub fn window_sensitivity(
    profile: &CtodProfile,
    mat: &MaterialModel,
    windows: &[[f64; 2]],
) -> Vec<([f64; 2], Result<FractureFit, FractureError>)> {
    windows
        .iter()
        .map(|w| (*w, fit_ctod(profile, mat, *w)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Upper,
    Lower,
}

impl Face {
    pub fn as_str(&self) -> &'static str {
        match self {
            Face::Upper => "upper",
            Face::Lower => "lower",
        }
    }

    pub fn parse(s: &str) -> Option<Face> {
        match s {
            "upper" => Some(Face::Upper),
            "lower" => Some(Face::Lower),
            _ => None,
        }
    }
}

/// A point on one crack face in the deformed configuration, µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacePoint {
    pub face: Face,
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtodExtraction {
    pub bin_width_um: f64,
    /// Ignore points further than this behind the tip.
    pub r_max_um: Option<f64>,
}

impl Default for CtodExtraction {
    fn default() -> Self {
        CtodExtraction {
            bin_width_um: 10.0,
            r_max_um: None,
        }
    }
}

/// Bin crack-face points by distance behind `tip` and take the mean
/// upper-minus-lower opening per bin, placed at the mean `r` of the bin's
/// points. Bins lacking either face are skipped.
pub fn extract_ctod_from_surface(
    points: &[FacePoint],
    tip: Vec3,
    cfg: &CtodExtraction,
) -> Result<CtodProfile, FractureError> {
    if !tip.is_finite()
        || !(cfg.bin_width_um > 0.0)
        || points.iter().any(|p| !p.position.is_finite())
    {
        return Err(FractureError::NonFinite);
    }
    if !points.iter().any(|p| p.face == Face::Upper) {
        return Err(FractureError::MissingFace("upper"));
    }
    if !points.iter().any(|p| p.face == Face::Lower) {
        return Err(FractureError::MissingFace("lower"));
    }
    let r_max = cfg.r_max_um.unwrap_or(f64::INFINITY);
    // (sum_y, count) per face per bin, then the sum of r
    let mut bins: std::collections::BTreeMap<i64, ([(f64, usize); 2], f64)> = Default::default();
    for p in points {
        let r = tip.x - p.position.x;
        if r < 0.0 || r > r_max {
            continue;
        }
        let k = (r / cfg.bin_width_um).floor() as i64;
        let bin = bins.entry(k).or_insert(([(0.0, 0); 2], 0.0));
        let slot = &mut bin.0[match p.face {
            Face::Upper => 0,
            Face::Lower => 1,
        }];
        slot.0 += p.position.y;
        slot.1 += 1;
        bin.1 += r;
    }
    let samples: Vec<CtodSample> = bins
        .into_values()
        .filter(|(f, _)| f[0].1 > 0 && f[1].1 > 0)
        .map(|(f, r_sum)| CtodSample {
            r_um: r_sum / (f[0].1 + f[1].1) as f64,
            delta_um: f[0].0 / f[0].1 as f64 - f[1].0 / f[1].1 as f64,
        })
        .collect();
    if samples.len() < MIN_CTOD_SAMPLES {
        return Err(FractureError::TooFewBins {
            got: samples.len(),
            min: MIN_CTOD_SAMPLES,
        });
    }
    Ok(CtodProfile {
        label: String::new(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// m⁻².
    pub slope: f64,
    /// J/m².
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// `G_c − (slope·E_lig + intercept)` per input point, J/m².
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn predict(&self, e_lig: f64) -> f64 {
        self.slope * e_lig + self.intercept
    }
}

/// Ordinary least squares `G_c = slope·E_lig + intercept` over
/// `(E_lig [J], G_c [J/m²])` points.
pub fn regress_gc_vs_elig(points: &[(f64, f64)]) -> Result<RegressionResult, FractureError> {
    if points.len() < 2 {
        return Err(FractureError::TooFewPoints(points.len()));
    }
    if points.iter().any(|(e, g)| !e.is_finite() || !g.is_finite()) {
        return Err(FractureError::NonFinite);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 || points.iter().all(|p| p.0 == points[0].0) {
        return Err(FractureError::DegenerateRegression);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = points
        .iter()
        .map(|&(e, g)| g - (slope * e + intercept))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        n_points: points.len(),
        residuals,
    })
}
