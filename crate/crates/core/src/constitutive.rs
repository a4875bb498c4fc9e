//! Incompressible Neo-Hookean strain energy density and stretch fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::DefGradSample;
use crate::tensor3::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("shear modulus must be positive and finite, got {0}")]
    BadModulus(f64),
    #[error("no samples")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    /// Shear modulus, Pa.
    pub mu: f64,
    /// Replace `I1` by the isochoric `J^(-2/3) I1`.
    pub use_isochoric: bool,
}

impl MaterialModel {
    pub fn new(mu: f64) -> Self {
        MaterialModel {
            mu,
            use_isochoric: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        if self.mu > 0.0 && self.mu.is_finite() {
            Ok(())
        } else {
            Err(ConstitutiveError::BadModulus(self.mu))
        }
    }

    /// Plane-stress effective modulus of the incompressible solid, `E = 3μ`.
    pub fn effective_modulus(&self) -> f64 {
        3.0 * self.mu
    }

    /// `W = μ/2 (I1 − 3)` with `I1 = tr(F Fᵀ)`, J/m³.
    pub fn energy_density(&self, f: &Mat3) -> f64 {
        let b = *f * f.transpose();
        let mut i1 = b.trace();
        if self.use_isochoric {
            i1 *= f.det().powf(-2.0 / 3.0);
        }
        0.5 * self.mu * (i1 - 3.0)
    }

    /// Same energy through the principal stretches, `I1 = Σ λᵢ²`.
    pub fn energy_density_from_stretches(&self, stretches: [f64; 3]) -> f64 {
        let mut i1: f64 = stretches.iter().map(|l| l * l).sum();
        if self.use_isochoric {
            let j = stretches[0] * stretches[1] * stretches[2];
            i1 *= j.powf(-2.0 / 3.0);
        }
        0.5 * self.mu * (i1 - 3.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldUnit {
    #[serde(rename = "J/m^3")]
    JoulePerCubicMeter,
    #[serde(rename = "1")]
    Dimensionless,
    #[serde(rename = "Pa")]
    Pascal,
}

impl FieldUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldUnit::JoulePerCubicMeter => "J/m^3",
            FieldUnit::Dimensionless => "1",
            FieldUnit::Pascal => "Pa",
        }
    }

    pub fn parse(s: &str) -> Option<FieldUnit> {
        [
            FieldUnit::JoulePerCubicMeter,
            FieldUnit::Dimensionless,
            FieldUnit::Pascal,
        ]
        .into_iter()
        .find(|u| u.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarRecord {
    pub particle_id: u64,
    pub reference: Vec3,
    pub current: Vec3,
    pub value: f64,
    pub valid: bool,
    /// Optional attached direction (e.g. the max-stretch axis).
    pub direction: Option<Vec3>,
}

/// Per-particle scalar field with a single unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub name: String,
    pub unit: FieldUnit,
    pub records: Vec<ScalarRecord>,
    /// Ids of valid records whose energy fell below `−μ·1e−12` (raw-I1 variant
    /// under volume change). The values are kept; this list only reports them.
    pub negative_energy_ids: Vec<u64>,
}

impl ScalarField {
    pub fn new(name: impl Into<String>, unit: FieldUnit, records: Vec<ScalarRecord>) -> Self {
        ScalarField {
            name: name.into(),
            unit,
            records,
            negative_energy_ids: Vec::new(),
        }
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.valid)
            .map(|r| r.value)
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.valid).count()
    }
}

/// Strain energy density `W` (J/m³) at every sample.
pub fn strain_energy_density(
    samples: &[DefGradSample],
    mat: &MaterialModel,
) -> Result<ScalarField, ConstitutiveError> {
    mat.validate()?;
    if samples.is_empty() {
        return Err(ConstitutiveError::Empty);
    }
    let floor = -mat.mu * 1e-12;
    let mut negative = Vec::new();
    let records = samples
        .iter()
        .map(|s| {
            let valid = s.is_valid();
            let value = if valid {
                mat.energy_density(&s.f)
            } else {
                f64::NAN
            };
            if valid && value < floor {
                negative.push(s.particle_id);
            }
            ScalarRecord {
                particle_id: s.particle_id,
                reference: s.reference,
                current: s.current,
                value,
                valid,
                direction: None,
            }
        })
        .collect();
    let mut field = ScalarField::new("W", FieldUnit::JoulePerCubicMeter, records);
    field.negative_energy_ids = negative;
    Ok(field)
}

/// Largest principal stretch of V with its deformed-frame direction.
pub fn max_principal_stretch_field(
    samples: &[DefGradSample],
) -> Result<ScalarField, ConstitutiveError> {
    if samples.is_empty() {
        return Err(ConstitutiveError::Empty);
    }
    let records = samples
        .iter()
        .map(|s| {
            let valid = s.is_valid();
            ScalarRecord {
                particle_id: s.particle_id,
                reference: s.reference,
                current: s.current,
                value: if valid {
                    s.principal_stretches[0]
                } else {
                    f64::NAN
                },
                valid,
                direction: valid.then_some(s.principal_dirs[0]),
            }
        })
        .collect();
    Ok(ScalarField::new(
        "lambda_max",
        FieldUnit::Dimensionless,
        records,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{DefGradSample, SampleStatus};
    use proptest::prelude::*;

    const MU: f64 = 35_000.0;

    fn sample(f: Mat3) -> DefGradSample {
        DefGradSample::from_stored(
            1,
            Vec3::ZERO,
            Vec3::ZERO,
            f,
            0.0,
            20,
            1.0,
            SampleStatus::Valid,
        )
    }

    fn uniaxial(l: f64) -> Mat3 {
        Mat3::diag(l, 1.0 / l.sqrt(), 1.0 / l.sqrt())
    }

    #[test]
    fn closed_forms() {
        let m = MaterialModel::new(MU);
        assert_eq!(m.energy_density(&Mat3::IDENTITY), 0.0);
        let w = m.energy_density(&uniaxial(2.0));
        assert!((w - 3.5e4).abs() <= 3.5e4 * 1e-10, "{w}");
        let mut shear = Mat3::IDENTITY;
        shear[(0, 1)] = 0.5;
        assert!((m.energy_density(&shear) - 4375.0).abs() < 1e-9);
        let r = Mat3::rotation(Vec3::new(1.0, 1.0, 0.0), 0.8);
        assert!(m.energy_density(&r).abs() < 1e-9);
    }

    #[test]
    fn field_propagates_invalid() {
        let mut bad = sample(Mat3::IDENTITY);
        bad.status = SampleStatus::IllConditioned;
        let f =
            strain_energy_density(&[sample(uniaxial(2.0)), bad], &MaterialModel::new(MU)).unwrap();
        assert_eq!(f.unit, FieldUnit::JoulePerCubicMeter);
        assert!(f.records[0].valid && !f.records[1].valid);
        assert_eq!(f.valid_values().len(), 1);
    }

    #[test]
    fn negative_raw_energy_is_reported() {
        let f = strain_energy_density(
            &[sample(Mat3::diag(0.9, 0.9, 0.9))],
            &MaterialModel::new(MU),
        )
        .unwrap();
        assert_eq!(f.negative_energy_ids, vec![1]);
        let iso = MaterialModel {
            mu: MU,
            use_isochoric: true,
        };
        let f = strain_energy_density(&[sample(Mat3::diag(0.9, 0.9, 0.9))], &iso).unwrap();
        assert!(f.negative_energy_ids.is_empty());
        assert!(f.records[0].value.abs() < 1e-9);
    }

    #[test]
    fn bad_modulus() {
        assert!(
            strain_energy_density(&[sample(Mat3::IDENTITY)], &MaterialModel::new(0.0)).is_err()
        );
        assert!(strain_energy_density(&[], &MaterialModel::new(MU)).is_err());
    }

    #[test]
    fn stretch_field_examples() {
        let f = max_principal_stretch_field(&[
            sample(Mat3::IDENTITY),
            sample(Mat3::diag(2.0, 0.5, 1.0)),
        ])
        .unwrap();
        assert_eq!(f.records[0].value, 1.0);
        let d0 = f.records[0].direction.unwrap();
        assert!((d0.norm() - 1.0).abs() < 1e-12);
        assert_eq!(f.records[1].value, 2.0);
        assert!((f.records[1].direction.unwrap().dot(Vec3::X) - 1.0).abs() < 1e-12);

        let r = Mat3::rotation(Vec3::Z, 45f64.to_radians());
        let s = sample(r * Mat3::diag(1.3, 1.0, 1.0 / 1.3));
        let f = max_principal_stretch_field(&[s]).unwrap();
        assert!((f.records[0].value - 1.3).abs() < 1e-12);
        assert!((f.records[0].direction.unwrap().dot(r * Vec3::X).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniaxial_monotone() {
        let m = MaterialModel::new(MU);
        let mut prev = 0.0;
        for k in 1..200 {
            let l = 1.0 + k as f64 * 0.01;
            let w = m.energy_density(&uniaxial(l));
            assert!(w > prev);
            prev = w;
        }
        let mut prev = 0.0;
        for k in 1..90 {
            let l = 1.0 - k as f64 * 0.01;
            let w = m.energy_density(&uniaxial(l));
            assert!(w > prev);
            prev = w;
        }
    }

    fn arb_f() -> impl Strategy<Value = Mat3> {
        prop::array::uniform9(-0.6f64..0.6).prop_filter_map("det > 0.1", |v| {
            let mut m = Mat3::from_row_major(v);
            for i in 0..3 {
                m[(i, i)] += 1.0;
            }
            (m.det() > 0.1).then_some(m)
        })
    }

    proptest! {
        #[test]
        fn rotation_invariance_and_two_routes(f in arb_f(), axis in prop::array::uniform3(-1.0f64..1.0), angle in -3.0f64..3.0) {
            for m in [MaterialModel::new(MU), MaterialModel { mu: MU, use_isochoric: true }] {
                let w = m.energy_density(&f);
                let q = Mat3::rotation(Vec3::from_array(axis), angle);
                let wq = m.energy_density(&(q * f));
                let scale = w.abs().max(m.mu * 1e-3);
                prop_assert!((w - wq).abs() <= 1e-10 * scale);
                let s = sample(f);
                let ws = m.energy_density_from_stretches(s.principal_stretches);
                prop_assert!((w - ws).abs() <= 1e-10 * scale);
            }
            let iso = MaterialModel { mu: MU, use_isochoric: true };
            prop_assert!(iso.energy_density(&f) >= -MU * 1e-12);
        }
    }
}
