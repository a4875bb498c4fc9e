//! Analysis chains built from the individual stages.
//!
//! Per phantom: particles → F → W → radial weights → ligament energy, and
//! crack faces → CTOD profile → G_c. Across the suite: G_c against E_lig.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{strain_energy_density, ConstitutiveError};
use crate::fracture::{extract_ctod_from_surface, fit_ctod, regress_gc_vs_elig, FractureError};
use crate::imaging::ImagingError;
use crate::io::{FaceTable, IoError, PipelineConfig, RegressionPoint};
use crate::kinematics::{
    build_particle_set, estimate_def_grad, field_quality_report, KinematicsError, ParticleTrack,
    QualityReport,
};
use crate::regions::{integrate_region_energy, radial_weights, select_region, RegionError};
use crate::synth::{phantom_suite, PhantomLabel, SuiteMember, SynthError};
use crate::{
    CtodProfile, DefGradSample, FractureFit, ParticleSet, RegionEnergy, RegionSpec,
    RegressionResult, ScalarField, Vec3,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Constitutive(#[from] ConstitutiveError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Fracture(#[from] FractureError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Particle set over the reference/current positions stored in a field.
pub fn particle_set_from_field(field: &ScalarField) -> Result<ParticleSet, KinematicsError> {
    build_particle_set(
        field
            .records
            .iter()
            .map(|r| ParticleTrack::new(r.particle_id, r.reference, r.current))
            .collect(),
    )
}

/// Integrated energy of `spec` using radial weights computed over the
/// particles of `energy`.
pub fn region_energy(
    energy: &ScalarField,
    spec: &RegionSpec,
    cfg: &PipelineConfig,
) -> Result<RegionEnergy, PipelineError> {
    let set = particle_set_from_field(energy)?;
    let weights = radial_weights(&set, cfg.volume.k_vol, cfg.calibration_box())?;
    let ids = select_region(&set, spec, &[energy])?;
    Ok(integrate_region_energy(energy, &ids, &weights)?)
}

/// CTOD profile and fracture fit from crack-face points.
pub fn fit_faces(
    faces: &FaceTable,
    label: &str,
    cfg: &PipelineConfig,
) -> Result<(CtodProfile, FractureFit), PipelineError> {
    let mut profile = extract_ctod_from_surface(&faces.points, faces.tip, &cfg.ctod_extraction())?;
    profile.label = label.to_string();
    let fit = fit_ctod(&profile, &cfg.material(), cfg.fracture.r_window_um)?;
    Ok((profile, fit))
}

/// Fraction of `samples` whose largest-stretch axis lies within
/// `max_angle_deg` of `axis` (either sense). Invalid samples count as not
/// aligned.
pub fn aligned_fraction(samples: &[&DefGradSample], axis: Vec3, max_angle_deg: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let axis = axis * (1.0 / axis.norm());
    let cos_min = max_angle_deg.to_radians().cos();
    let n = samples
        .iter()
        .filter(|s| s.is_valid() && s.principal_dirs[0].dot(axis).abs() >= cos_min)
        .count();
    n as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomResult {
    pub label: String,
    pub amplification: f64,
    /// Closed-form ligament energy, J.
    pub e_true: f64,
    /// Constructed energy release rate, J/m².
    pub g_true: f64,
    pub ligament: RegionEnergy,
    pub fit: FractureFit,
    pub n_ligament_labeled: usize,
    /// Share of labeled ligament particles with the largest stretch within
    /// 10° of y.
    pub aligned_fraction: f64,
    pub quality: QualityReport,
}

/// Intermediate artifacts of one phantom, kept for export.
#[derive(Debug, Clone)]
pub struct PhantomArtifacts {
    pub set: ParticleSet,
    pub labels: Vec<PhantomLabel>,
    pub samples: Vec<DefGradSample>,
    pub energy: ScalarField,
    pub faces: FaceTable,
    pub profile: CtodProfile,
}

pub fn phantom_label(i: usize) -> String {
    format!("phantom-{i}")
}

/// Full chain on one suite member.
pub fn analyze_phantom(
    member: &SuiteMember,
    label: &str,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<(PhantomResult, PhantomArtifacts), PipelineError> {
    let phantom = &member.phantom;
    let synth = phantom.generate(seed)?;
    let samples = estimate_def_grad(&synth.set, &cfg.estimator_config())?;
    let quality = field_quality_report(&samples);
    let energy = strain_energy_density(&samples, &cfg.material())?;
    let spec = cfg
        .region
        .clone()
        .unwrap_or_else(|| phantom.ligament_spec());
    let ligament = region_energy(&energy, &spec, cfg)?;

    let st = &cfg.synth.stepped;
    let (points, tip) = phantom.face_points(st.face_segment, st.face_z_um, st.face_spacing_um)?;
    let faces = FaceTable { tip, points };
    let (profile, fit) = fit_faces(&faces, label, cfg)?;

    let lig: Vec<&DefGradSample> = samples
        .iter()
        .zip(&synth.labels)
        .filter(|(_, l)| **l == PhantomLabel::Ligament)
        .map(|(s, _)| s)
        .collect();
    let result = PhantomResult {
        label: label.to_string(),
        amplification: phantom.amplification,
        e_true: member.e_true,
        g_true: member.g_true,
        ligament,
        fit,
        n_ligament_labeled: lig.len(),
        aligned_fraction: aligned_fraction(&lig, Vec3::Y, 10.0),
        quality,
    };
    let artifacts = PhantomArtifacts {
        set: synth.set,
        labels: synth.labels,
        samples,
        energy,
        faces,
        profile,
    };
    Ok((result, artifacts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub phantoms: Vec<PhantomResult>,
    pub points: Vec<(f64, f64)>,
    pub regression: RegressionResult,
}

impl SuiteOutcome {
    pub fn regression_points(&self) -> Vec<RegressionPoint> {
        self.phantoms
            .iter()
            .map(|p| RegressionPoint {
                label: p.label.clone(),
                e_lig_j: p.ligament.energy_j,
                g_c_j_per_m2: p.fit.g_c,
            })
            .collect()
    }
}

/// The configured stepped-crack suite. Phantom `i` is seeded with
/// `run.seed + i`. `each` sees every phantom's artifacts as it completes.
pub fn run_stepped_suite(
    cfg: &PipelineConfig,
    mut each: impl FnMut(&PhantomResult, &PhantomArtifacts) -> Result<(), PipelineError>,
) -> Result<SuiteOutcome, PipelineError> {
    let members = phantom_suite(
        &cfg.stepped_phantom(),
        &cfg.synth.stepped.amplifications,
        cfg.suite_law(),
    )?;
    let mut phantoms = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        let (res, art) = analyze_phantom(
            m,
            &phantom_label(i),
            cfg.run.seed.wrapping_add(i as u64),
            cfg,
        )?;
        each(&res, &art)?;
        phantoms.push(res);
    }
    let points: Vec<(f64, f64)> = phantoms
        .iter()
        .map(|p| (p.ligament.energy_j, p.fit.g_c))
        .collect();
    let regression = regress_gc_vs_elig(&points)?;
    Ok(SuiteOutcome {
        phantoms,
        points,
        regression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::SampleStatus;
    use crate::Mat3;

    #[test]
    fn alignment_counts_invalid_as_misaligned() {
        let s = |f: Mat3, st| {
            DefGradSample::from_stored(0, Vec3::ZERO, Vec3::ZERO, f, 0.0, 20, 1.0, st)
        };
        let along_y = s(Mat3::diag(0.9, 1.2, 0.95), SampleStatus::Valid);
        let c = 15f64.to_radians().cos();
        let sn = 15f64.to_radians().sin();
        let rot = Mat3::from_rows([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]]);
        let tilted = s(
            rot * Mat3::diag(0.9, 1.2, 0.95) * rot.transpose(),
            SampleStatus::Valid,
        );
        let bad = s(Mat3::diag(0.9, 1.2, 0.95), SampleStatus::IllConditioned);
        let v = [&along_y, &tilted, &bad, &along_y];
        assert_eq!(aligned_fraction(&v, Vec3::Y, 10.0), 0.5);
        assert_eq!(aligned_fraction(&v, -Vec3::Y, 20.0), 0.75);
        assert_eq!(aligned_fraction(&[], Vec3::Y, 10.0), 0.0);
    }

    #[test]
    fn small_suite_runs() {
        let mut cfg = PipelineConfig::default();
        let st = &mut cfg.synth.stepped;
        st.density_per_um3 = 2e-4;
        st.amplifications = vec![1.0, 1.5];
        let mut seen = 0;
        let out = run_stepped_suite(&cfg, |r, a| {
            seen += 1;
            assert_eq!(a.samples.len(), a.set.len());
            assert!(r.n_ligament_labeled > 0);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 2);
        assert_eq!(out.regression.n_points, 2);
        for p in &out.phantoms {
            assert!(
                (p.fit.g_c / p.g_true - 1.0).abs() < 0.01,
                "{} vs {}",
                p.fit.g_c,
                p.g_true
            );
        }
    }
}
