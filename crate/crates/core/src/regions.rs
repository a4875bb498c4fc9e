//! Particle subsets and volume integrals over them.
//!
//! Region membership is always decided on reference positions, so a region is
//! a material volume. Per-particle volumes come from radial weights
//! `vol_i = (4π/3) r_i³`, where `r_i` is half the mean distance to the `k_vol`
//! nearest neighbors scaled by one global factor fitted so the volumes inside
//! an interior calibration box add up to the box volume. Both the ligament
//! membership rule and the radial-weight rule are reconstructed definitions;
//! outputs carry [`RECONSTRUCTED_NOTE`].

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{FieldUnit, ScalarField};
use crate::kinematics::ParticleSet;
use crate::spatial::Aabb;
use crate::stats;
use crate::tensor3::Vec3;

pub const RECONSTRUCTED_NOTE: &str =
    "ligament membership and radial volume weights are reconstructed definitions (geometric box rule, k-NN radius with box calibration)";

const UM3_TO_M3: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("invalid region: {0}")]
    InvalidSpec(String),
    #[error("threshold region refers to field `{0}`, which was not provided")]
    MissingField(String),
    #[error("need more than {k_vol} particles for radial weights, got {n}")]
    TooFewParticles { n: usize, k_vol: usize },
    #[error("calibration box contains no particles")]
    EmptyCalibration,
    #[error("energy field has unit {0}, expected J/m^3")]
    UnitMismatch(&'static str),
    #[error("particle {0} missing from {1}")]
    IdMismatch(u64, &'static str),
}

/// Geometric or field-based particle subset definition. Lengths in µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegionSpec {
    Box {
        min_um: [f64; 3],
        max_um: [f64; 3],
    },
    /// Material bridge between two overlapping crack-front segments: the
    /// z-overlap of the segments, the x-range between trailing and leading
    /// front, and a y-slab of half-width `half_width_y_um` around
    /// `y_center_um`.
    Ligament {
        z_lo_um: f64,
        z_hi_um: f64,
        x_back_um: f64,
        x_front_um: f64,
        #[serde(default)]
        y_center_um: f64,
        half_width_y_um: f64,
    },
    /// Particles whose value in field `field` is at or above its `quantile`.
    Threshold {
        field: String,
        quantile: f64,
    },
    Intersection {
        parts: Vec<RegionSpec>,
    },
}

impl RegionSpec {
    pub fn validate(&self) -> Result<(), RegionError> {
        let bad = |m: String| Err(RegionError::InvalidSpec(m));
        match self {
            RegionSpec::Box { min_um, max_um } => {
                let b = Aabb::new(Vec3::from_array(*min_um), Vec3::from_array(*max_um));
                if !b.is_valid() {
                    return bad(format!("box min {min_um:?} exceeds max {max_um:?}"));
                }
            }
            RegionSpec::Ligament {
                z_lo_um,
                z_hi_um,
                x_back_um,
                x_front_um,
                y_center_um,
                half_width_y_um,
            } => {
                if !(z_lo_um < z_hi_um) {
                    return bad(format!("empty z-overlap [{z_lo_um}, {z_hi_um}]"));
                }
                if !(x_back_um < x_front_um) {
                    return bad(format!("empty front interval [{x_back_um}, {x_front_um}]"));
                }
                if !(*half_width_y_um > 0.0) || !y_center_um.is_finite() {
                    return bad(format!("half-width {half_width_y_um} must be > 0"));
                }
            }
            RegionSpec::Threshold { quantile, .. } => {
                if !(*quantile > 0.0 && *quantile < 1.0) {
                    return bad(format!("quantile {quantile} outside (0, 1)"));
                }
            }
            RegionSpec::Intersection { parts } => {
                if parts.is_empty() {
                    return bad("intersection with no parts".into());
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Bounding box of a purely geometric region; `None` for threshold parts.
    pub fn ligament_box(&self) -> Option<Aabb> {
        match self {
            RegionSpec::Ligament {
                z_lo_um,
                z_hi_um,
                x_back_um,
                x_front_um,
                y_center_um,
                half_width_y_um,
            } => Some(Aabb::new(
                Vec3::new(*x_back_um, y_center_um - half_width_y_um, *z_lo_um),
                Vec3::new(*x_front_um, y_center_um + half_width_y_um, *z_hi_um),
            )),
            RegionSpec::Box { min_um, max_um } => Some(Aabb::new(
                Vec3::from_array(*min_um),
                Vec3::from_array(*max_um),
            )),
            _ => None,
        }
    }
}

enum Predicate<'a> {
    Geometric(Aabb),
    Threshold {
        values: HashMap<u64, f64>,
        cut: f64,
        _field: &'a ScalarField,
    },
    All(Vec<Predicate<'a>>),
}

impl Predicate<'_> {
    fn holds(&self, id: u64, x: Vec3) -> bool {
        match self {
            Predicate::Geometric(b) => b.contains(x),
            Predicate::Threshold { values, cut, .. } => values.get(&id).is_some_and(|v| v >= cut),
            Predicate::All(parts) => parts.iter().all(|p| p.holds(id, x)),
        }
    }
}

fn compile<'a>(
    spec: &RegionSpec,
    fields: &[&'a ScalarField],
) -> Result<Predicate<'a>, RegionError> {
    Ok(match spec {
        RegionSpec::Box { .. } | RegionSpec::Ligament { .. } => {
            Predicate::Geometric(spec.ligament_box().expect("geometric"))
        }
        RegionSpec::Threshold { field, quantile } => {
            let f = fields
                .iter()
                .find(|f| &f.name == field)
                .ok_or_else(|| RegionError::MissingField(field.clone()))?;
            let values: HashMap<u64, f64> = f
                .records
                .iter()
                .filter(|r| r.valid)
                .map(|r| (r.particle_id, r.value))
                .collect();
            let all: Vec<f64> = f
                .records
                .iter()
                .filter(|r| r.valid)
                .map(|r| r.value)
                .collect();
            let cut = stats::quantile(&all, *quantile).unwrap_or(f64::INFINITY);
            Predicate::Threshold {
                values,
                cut,
                _field: f,
            }
        }
        RegionSpec::Intersection { parts } => Predicate::All(
            parts
                .iter()
                .map(|p| compile(p, fields))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Ids of the particles in `spec`, in particle-set order. An empty result is
/// not an error.
pub fn select_region(
    set: &ParticleSet,
    spec: &RegionSpec,
    fields: &[&ScalarField],
) -> Result<Vec<u64>, RegionError> {
    spec.validate()?;
    let pred = compile(spec, fields)?;
    Ok(set
        .tracks()
        .iter()
        .filter(|t| pred.holds(t.id, t.reference))
        .map(|t| t.id)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusMethod {
    /// Half the mean distance to the k nearest reference neighbors, times the
    /// calibration factor.
    KnnHalfMeanDistance,
}

/// Per-particle radii, µm.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialWeights {
    pub ids: Vec<u64>,
    pub radii_um: Vec<f64>,
    pub method: RadiusMethod,
    pub k_vol: usize,
    pub calibration_factor: f64,
    pub calibration_box: Aabb,
    by_id: HashMap<u64, usize>,
}

impl RadialWeights {
    pub fn radius(&self, id: u64) -> Option<f64> {
        self.by_id.get(&id).map(|&i| self.radii_um[i])
    }

    /// `(4π/3) r³` in µm³.
    pub fn cell_volume_um3(&self, id: u64) -> Option<f64> {
        self.radius(id).map(sphere_volume)
    }

    /// Sum of cell volumes (µm³) of the particles whose reference position
    /// lies in `b`.
    pub fn volume_in_box(&self, set: &ParticleSet, b: &Aabb) -> f64 {
        set.tracks()
            .iter()
            .filter(|t| b.contains(t.reference))
            .filter_map(|t| self.cell_volume_um3(t.id))
            .sum()
    }
}

#[inline]
fn sphere_volume(r: f64) -> f64 {
    4.0 / 3.0 * PI * r * r * r
}

/// Default calibration box: the particle bounds shrunk by three mean
/// neighbor spacings, falling back to the full bounds for small sets.
fn default_calibration_box(set: &ParticleSet, raw: &[f64]) -> Aabb {
    let spacing = 2.0 * raw.iter().sum::<f64>() / raw.len() as f64;
    let shrunk = set.bounds().shrunk(3.0 * spacing);
    let inside = set
        .tracks()
        .iter()
        .filter(|t| shrunk.contains(t.reference))
        .count();
    if shrunk.is_valid() && shrunk.volume() > 0.0 && inside >= 10 {
        shrunk
    } else {
        set.bounds()
    }
}

/// Radial weights with volume calibration.
///
/// `calibration` must lie inside the particle bulk, away from free surfaces
/// and crack faces. `None` uses the particle bounds shrunk by three mean
/// spacings.
pub fn radial_weights(
    set: &ParticleSet,
    k_vol: usize,
    calibration: Option<Aabb>,
) -> Result<RadialWeights, RegionError> {
    if k_vol == 0 || set.len() <= k_vol {
        return Err(RegionError::TooFewParticles {
            n: set.len(),
            k_vol,
        });
    }
    let raw: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let nn = set.neighbors_of(i, k_vol);
            0.5 * nn.iter().map(|n| n.dist()).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let cal_box = match calibration {
        Some(b) if b.is_valid() => b,
        Some(_) => {
            return Err(RegionError::InvalidSpec(
                "calibration box min exceeds max".into(),
            ))
        }
        None => default_calibration_box(set, &raw),
    };
    let raw_volume: f64 = set
        .tracks()
        .iter()
        .zip(&raw)
        .filter(|(t, _)| cal_box.contains(t.reference))
        .map(|(_, r)| sphere_volume(*r))
        .sum();
    if !(raw_volume > 0.0) {
        return Err(RegionError::EmptyCalibration);
    }
    let factor = (cal_box.volume() / raw_volume).cbrt();
    let ids: Vec<u64> = set.tracks().iter().map(|t| t.id).collect();
    let by_id = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    Ok(RadialWeights {
        ids,
        radii_um: raw.iter().map(|r| r * factor).collect(),
        method: RadiusMethod::KnnHalfMeanDistance,
        k_vol,
        calibration_factor: factor,
        calibration_box: cal_box,
        by_id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEnergy {
    /// Integrated energy, J.
    pub energy_j: f64,
    pub n_particles: usize,
    pub n_valid: usize,
    /// Summed cell volume of the valid particles, m³.
    pub volume_m3: f64,
    /// Fraction of region particles with a valid energy value (1 for an
    /// empty region).
    pub coverage: f64,
}

/// `E = Σ_i W_i (4π/3) r_i³` over the valid members of `subset`, in joules.
pub fn integrate_region_energy(
    energy: &ScalarField,
    subset: &[u64],
    weights: &RadialWeights,
) -> Result<RegionEnergy, RegionError> {
    if energy.unit != FieldUnit::JoulePerCubicMeter {
        return Err(RegionError::UnitMismatch(energy.unit.as_str()));
    }
    let by_id: HashMap<u64, usize> = energy
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.particle_id, i))
        .collect();
    let mut e = 0.0;
    let mut vol = 0.0;
    let mut n_valid = 0;
    for &id in subset {
        let rec = &energy.records[*by_id
            .get(&id)
            .ok_or(RegionError::IdMismatch(id, "energy field"))?];
        let cell = weights
            .cell_volume_um3(id)
            .ok_or(RegionError::IdMismatch(id, "radial weights"))?
            * UM3_TO_M3;
        if rec.valid && rec.value.is_finite() {
            e += rec.value * cell;
            vol += cell;
            n_valid += 1;
        }
    }
    Ok(RegionEnergy {
        energy_j: e,
        n_particles: subset.len(),
        n_valid,
        volume_m3: vol,
        coverage: if subset.is_empty() {
            1.0
        } else {
            n_valid as f64 / subset.len() as f64
        },
    })
}
