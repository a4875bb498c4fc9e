//! Per-particle deformation gradients from paired reference/deformed tracer
//! positions, evaluated directly at every particle without a grid.
//!
//! For particle `i` with reference-space neighbors `j`, the estimator solves
//!
//! ```text
//! F_i = argmin Σ_j w_ij |Δx_ij − F ΔX_ij|²,   w_ij = exp(−|ΔX_ij|² / h_i²)
//! ```
//!
//! in closed form, `F = A M⁻¹` with `A = Σ w Δx ΔXᵀ` and `M = Σ w ΔX ΔXᵀ`.
//! Differences are centered on the particle itself so no intercept is fitted.
//! Samples that fail a validity check are returned with a non-`Valid`
//! [`SampleStatus`]; nothing is dropped.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{Aabb, KdTree, Neighbor};
use crate::stats;
use crate::tensor3::{eig_sym3, polar_decompose, Mat3, PolarFactors, TensorError, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("particle set is empty")]
    Empty,
    #[error("duplicate particle id {0}")]
    DuplicateId(u64),
    #[error("particle {id}: non-finite position")]
    NonFinite { id: u64 },
    #[error("particle {id}: quality {quality} outside [0, 1]")]
    BadQuality { id: u64, quality: f64 },
    #[error("invalid estimator configuration: {0}")]
    Config(String),
}

/// One tracer particle seen in both configurations. Positions in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleTrack {
    pub id: u64,
    pub reference: Vec3,
    pub current: Vec3,
    /// Linking confidence in `[0, 1]`.
    pub quality: f64,
}

impl ParticleTrack {
    pub fn new(id: u64, reference: Vec3, current: Vec3) -> Self {
        ParticleTrack {
            id,
            reference,
            current,
            quality: 1.0,
        }
    }

    pub fn displacement(&self) -> Vec3 {
        self.current - self.reference
    }
}

/// Immutable particle ensemble with a reference-space neighbor index.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    tracks: Vec<ParticleTrack>,
    bounds: Aabb,
    index: KdTree,
    by_id: HashMap<u64, usize>,
}

/// Build a [`ParticleSet`], validating ids, positions and qualities.
pub fn build_particle_set(tracks: Vec<ParticleTrack>) -> Result<ParticleSet, KinematicsError> {
    if tracks.is_empty() {
        return Err(KinematicsError::Empty);
    }
    let mut by_id = HashMap::with_capacity(tracks.len());
    for (i, t) in tracks.iter().enumerate() {
        if !t.reference.is_finite() || !t.current.is_finite() {
            return Err(KinematicsError::NonFinite { id: t.id });
        }
        if !(0.0..=1.0).contains(&t.quality) {
            return Err(KinematicsError::BadQuality {
                id: t.id,
                quality: t.quality,
            });
        }
        if by_id.insert(t.id, i).is_some() {
            return Err(KinematicsError::DuplicateId(t.id));
        }
    }
    let bounds = Aabb::around(tracks.iter().map(|t| t.reference)).expect("nonempty");
    let index = KdTree::new(
        tracks.iter().map(|t| t.reference).collect(),
        tracks.iter().map(|t| t.id).collect(),
    );
    Ok(ParticleSet {
        tracks,
        bounds,
        index,
        by_id,
    })
}

impl ParticleSet {
    pub fn tracks(&self) -> &[ParticleTrack] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Tight reference-space bounding box.
    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<&ParticleTrack> {
        self.index_of(id).map(|i| &self.tracks[i])
    }

    /// The `k` nearest other particles of the particle at `index`, by
    /// reference distance, ties to the lower id.
    pub fn neighbors_of(&self, index: usize, k: usize) -> Vec<Neighbor> {
        self.index
            .knn_excluding(self.tracks[index].reference, k, Some(index))
    }

    /// The `k` nearest particles to an arbitrary reference-space point.
    pub fn nearest(&self, point: Vec3, k: usize) -> Vec<Neighbor> {
        self.index.knn(point, k)
    }

    pub fn within_radius(&self, point: Vec3, radius: f64) -> Vec<Neighbor> {
        self.index.within_radius(point, radius)
    }
}

/// How the Gaussian weight length `h_i` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum WeightScale {
    /// `h_i` = distance to the k-th neighbor of particle `i`.
    KthNeighborDistance,
    /// Fixed `h` in µm for every particle.
    Fixed { h_um: f64 },
}

/// Neighbor-median outlier filter on the largest principal stretch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierFilter {
    pub k_neighbors: usize,
    /// Flag when `|λ₁ − median| > relative_threshold · median`.
    pub relative_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub k_neighbors: usize,
    pub weight_scale: WeightScale,
    pub min_neighbors: usize,
    pub max_condition: f64,
    pub outlier_filter: Option<OutlierFilter>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k_neighbors: 20,
            weight_scale: WeightScale::KthNeighborDistance,
            min_neighbors: 6,
            max_condition: 1e6,
            outlier_filter: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.min_neighbors < 4 {
            return Err(KinematicsError::Config(format!(
                "min_neighbors = {} must be >= 4",
                self.min_neighbors
            )));
        }
        if self.k_neighbors < self.min_neighbors {
            return Err(KinematicsError::Config(format!(
                "k_neighbors = {} must be >= min_neighbors = {}",
                self.k_neighbors, self.min_neighbors
            )));
        }
        if !(self.max_condition > 1.0) {
            return Err(KinematicsError::Config(
                "max_condition must exceed 1".into(),
            ));
        }
        if let WeightScale::Fixed { h_um } = self.weight_scale {
            if !(h_um > 0.0 && h_um.is_finite()) {
                return Err(KinematicsError::Config(format!(
                    "fixed h = {h_um} must be > 0"
                )));
            }
        }
        if let Some(f) = self.outlier_filter {
            if f.k_neighbors == 0 || !(f.relative_threshold > 0.0) {
                return Err(KinematicsError::Config(
                    "outlier filter needs k > 0 and threshold > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleStatus {
    Valid,
    TooFewNeighbors,
    /// Moment matrix condition number above the limit (coplanar/collinear
    /// neighborhood).
    IllConditioned,
    /// `det F <= 0`.
    Inverted,
    /// Polar decomposition failed on an otherwise admissible F.
    PolarFailed,
    /// Rejected by the optional neighbor-median outlier filter.
    Outlier,
}

impl SampleStatus {
    pub const ALL: [SampleStatus; 6] = [
        SampleStatus::Valid,
        SampleStatus::TooFewNeighbors,
        SampleStatus::IllConditioned,
        SampleStatus::Inverted,
        SampleStatus::PolarFailed,
        SampleStatus::Outlier,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SampleStatus::Valid => "valid",
            SampleStatus::TooFewNeighbors => "too-few-neighbors",
            SampleStatus::IllConditioned => "ill-conditioned",
            SampleStatus::Inverted => "inverted",
            SampleStatus::PolarFailed => "polar-failed",
            SampleStatus::Outlier => "outlier",
        }
    }

    pub fn parse(s: &str) -> Option<SampleStatus> {
        SampleStatus::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// Deformation gradient and derived kinematics at one particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefGradSample {
    pub particle_id: u64,
    pub reference: Vec3,
    pub current: Vec3,
    pub f: Mat3,
    pub polar: Option<PolarFactors>,
    /// Eigenvalues of V, descending; zeros when invalid.
    pub principal_stretches: [f64; 3],
    /// Eigenvectors of V in the deformed frame.
    pub principal_dirs: [Vec3; 3],
    /// `det F`.
    pub j: f64,
    /// Weighted RMS of `Δx − F ΔX` over the neighborhood, µm.
    pub residual_rms: f64,
    pub n_neighbors: usize,
    /// Condition number of the weighted moment matrix.
    pub condition: f64,
    pub status: SampleStatus,
}

impl DefGradSample {
    pub fn is_valid(&self) -> bool {
        self.status == SampleStatus::Valid
    }

    /// Rebuild a sample from a stored F (e.g. read back from a table),
    /// recomputing polar factors and stretches. The stored status is kept
    /// unless F turns out to be inadmissible.
    #[allow(clippy::too_many_arguments)]
    pub fn from_stored(
        particle_id: u64,
        reference: Vec3,
        current: Vec3,
        f: Mat3,
        residual_rms: f64,
        n_neighbors: usize,
        condition: f64,
        status: SampleStatus,
    ) -> Self {
        let mut s = DefGradSample {
            particle_id,
            reference,
            current,
            f,
            polar: None,
            principal_stretches: [0.0; 3],
            principal_dirs: [Vec3::X, Vec3::Y, Vec3::Z],
            j: f.det(),
            residual_rms,
            n_neighbors,
            condition,
            status,
        };
        if status == SampleStatus::Valid {
            s.fill_polar();
        }
        s
    }

    fn fill_polar(&mut self) {
        if !(self.j > 0.0) {
            self.status = SampleStatus::Inverted;
            return;
        }
        match polar_decompose(&self.f) {
            Ok(p) => {
                self.principal_stretches = p.stretches;
                self.principal_dirs = p.left_dirs;
                self.polar = Some(p);
            }
            Err(TensorError::Inverted(_)) => self.status = SampleStatus::Inverted,
            Err(_) => self.status = SampleStatus::PolarFailed,
        }
    }
}

/// Estimate F at every particle. Output order follows `set.tracks()`.
///
/// Work is split across the current rayon pool; each sample depends only on
/// its own fixed, ordered neighbor list, so the result is bitwise identical
/// for any thread count.
pub fn estimate_def_grad(
    set: &ParticleSet,
    cfg: &EstimatorConfig,
) -> Result<Vec<DefGradSample>, KinematicsError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(KinematicsError::Empty);
    }
    let mut samples: Vec<DefGradSample> = (0..set.len())
        .into_par_iter()
        .map(|i| estimate_one(set, i, cfg))
        .collect();
    if let Some(filter) = cfg.outlier_filter {
        apply_outlier_filter(set, &mut samples, filter);
    }
    Ok(samples)
}

fn estimate_one(set: &ParticleSet, i: usize, cfg: &EstimatorConfig) -> DefGradSample {
    let track = set.tracks[i];
    let neighbors = set.neighbors_of(i, cfg.k_neighbors);
    let mut sample = DefGradSample {
        particle_id: track.id,
        reference: track.reference,
        current: track.current,
        f: Mat3::ZERO,
        polar: None,
        principal_stretches: [0.0; 3],
        principal_dirs: [Vec3::X, Vec3::Y, Vec3::Z],
        j: 0.0,
        residual_rms: 0.0,
        n_neighbors: neighbors.len(),
        condition: f64::INFINITY,
        status: SampleStatus::Valid,
    };
    if neighbors.len() < cfg.min_neighbors {
        sample.status = SampleStatus::TooFewNeighbors;
        return sample;
    }
    let h = match cfg.weight_scale {
        WeightScale::KthNeighborDistance => neighbors.last().map_or(0.0, |n| n.dist()),
        WeightScale::Fixed { h_um } => h_um,
    };
    if !(h > 0.0) {
        // Every neighbor coincides with the particle.
        sample.status = SampleStatus::IllConditioned;
        return sample;
    }
    let inv_h2 = 1.0 / (h * h);

    let mut moment = Mat3::ZERO;
    let mut cross = Mat3::ZERO;
    let mut diffs = Vec::with_capacity(neighbors.len());
    for n in &neighbors {
        let other = set.tracks[n.index];
        let dref = other.reference - track.reference;
        let dcur = other.current - track.current;
        let w = (-dref.norm_squared() * inv_h2).exp();
        moment += dref.outer(dref) * w;
        cross += dcur.outer(dref) * w;
        diffs.push((w, dref, dcur));
    }

    let eig = match eig_sym3(&moment) {
        Ok(e) => e,
        Err(_) => {
            sample.status = SampleStatus::IllConditioned;
            return sample;
        }
    };
    let (hi, lo) = (eig.values[0], eig.values[2]);
    sample.condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(sample.condition <= cfg.max_condition) {
        sample.status = SampleStatus::IllConditioned;
        return sample;
    }

    let moment_inv = eig.map_values(|v| 1.0 / v);
    let f = cross * moment_inv;
    sample.f = f;
    sample.j = f.det();

    let mut wsum = 0.0;
    let mut rsum = 0.0;
    for (w, dref, dcur) in &diffs {
        rsum += w * (*dcur - f * *dref).norm_squared();
        wsum += w;
    }
    sample.residual_rms = if wsum > 0.0 {
        (rsum / wsum).sqrt()
    } else {
        0.0
    };

    sample.fill_polar();
    sample
}

fn apply_outlier_filter(set: &ParticleSet, samples: &mut [DefGradSample], filter: OutlierFilter) {
    let flags: Vec<bool> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            if !samples[i].is_valid() {
                return false;
            }
            let lambdas: Vec<f64> = set
                .neighbors_of(i, filter.k_neighbors)
                .iter()
                .filter(|n| samples[n.index].is_valid())
                .map(|n| samples[n.index].principal_stretches[0])
                .collect();
            match stats::median(&lambdas) {
                Some(med) => {
                    (samples[i].principal_stretches[0] - med).abs()
                        > filter.relative_threshold * med
                }
                None => false,
            }
        })
        .collect();
    for (s, flagged) in samples.iter_mut().zip(flags) {
        if flagged {
            s.status = SampleStatus::Outlier;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of valid samples with `|J − 1| <= 0.01`.
    pub within_one_percent: f64,
    /// Fraction with `|J − 1| <= 0.05`.
    pub within_five_percent: f64,
}

/// Summary of an estimated field. J statistics double as an
/// incompressibility diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub total: usize,
    pub valid: usize,
    pub valid_fraction: f64,
    /// Counts per non-valid status, in [`SampleStatus::ALL`] order.
    pub flagged: Vec<(SampleStatus, usize)>,
    pub residual_um: Option<Percentiles>,
    pub jacobian: Option<JacobianStats>,
}

impl QualityReport {
    pub fn flagged_count(&self) -> usize {
        self.total - self.valid
    }

    pub fn invalid_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.flagged_count() as f64 / self.total as f64
        }
    }
}

pub fn field_quality_report(samples: &[DefGradSample]) -> QualityReport {
    let total = samples.len();
    let valid: Vec<&DefGradSample> = samples.iter().filter(|s| s.is_valid()).collect();
    let flagged = SampleStatus::ALL[1..]
        .iter()
        .map(|st| (*st, samples.iter().filter(|s| s.status == *st).count()))
        .collect();

    let mut residuals: Vec<f64> = valid.iter().map(|s| s.residual_rms).collect();
    residuals.sort_by(f64::total_cmp);
    let residual_um = (!residuals.is_empty()).then(|| Percentiles {
        p50: stats::quantile_sorted(&residuals, 0.5),
        p90: stats::quantile_sorted(&residuals, 0.9),
        p99: stats::quantile_sorted(&residuals, 0.99),
        max: *residuals.last().expect("nonempty"),
    });

    let js: Vec<f64> = valid.iter().map(|s| s.j).collect();
    let jacobian = stats::mean(&js).map(|mean| {
        let n = js.len() as f64;
        JacobianStats {
            mean,
            std: stats::std_dev(&js).unwrap_or(0.0),
            min: js.iter().copied().fold(f64::INFINITY, f64::min),
            max: js.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            within_one_percent: js.iter().filter(|j| (*j - 1.0).abs() <= 0.01).count() as f64 / n,
            within_five_percent: js.iter().filter(|j| (*j - 1.0).abs() <= 0.05).count() as f64 / n,
        }
    });

    QualityReport {
        total,
        valid: valid.len(),
        valid_fraction: if total == 0 {
            0.0
        } else {
            valid.len() as f64 / total as f64
        },
        flagged,
        residual_um,
        jacobian,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tracks(n: usize, seed: u64, map: impl Fn(Vec3) -> Vec3) -> Vec<ParticleTrack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x = Vec3::new(
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                );
                ParticleTrack::new(i as u64, x, map(x))
            })
            .collect()
    }

    #[test]
    fn cube_corners() {
        let mut tracks = Vec::new();
        for (i, c) in (0..8).enumerate() {
            let p = Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64);
            tracks.push(ParticleTrack::new(i as u64, p, p));
        }
        let set = build_particle_set(tracks).unwrap();
        assert_eq!(
            set.bounds(),
            Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0))
        );
        let nn: Vec<u64> = set
            .neighbors_of(0, 3)
            .iter()
            .map(|n| set.tracks()[n.index].id)
            .collect();
        assert_eq!(nn, vec![1, 2, 4]);
    }

    #[test]
    fn single_particle() {
        let set = build_particle_set(vec![ParticleTrack::new(9, Vec3::X, Vec3::X)]).unwrap();
        assert_eq!(set.bounds(), Aabb::new(Vec3::X, Vec3::X));
        assert!(set.neighbors_of(0, 5).is_empty());
        let s = estimate_def_grad(&set, &EstimatorConfig::default()).unwrap();
        assert_eq!(s[0].status, SampleStatus::TooFewNeighbors);
    }

    #[test]
    fn build_errors() {
        assert_eq!(
            build_particle_set(vec![]).unwrap_err(),
            KinematicsError::Empty
        );
        let t = ParticleTrack::new(1, Vec3::ZERO, Vec3::ZERO);
        assert_eq!(
            build_particle_set(vec![t, t]).unwrap_err(),
            KinematicsError::DuplicateId(1)
        );
        let bad = ParticleTrack { quality: 1.5, ..t };
        assert!(matches!(
            build_particle_set(vec![bad]),
            Err(KinematicsError::BadQuality { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = EstimatorConfig {
            min_neighbors: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.min_neighbors = 10;
        c.k_neighbors = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identity_motion() {
        let set = build_particle_set(random_tracks(2000, 3, |x| x)).unwrap();
        let samples = estimate_def_grad(&set, &EstimatorConfig::default()).unwrap();
        for s in &samples {
            assert!(s.is_valid());
            assert!((s.f - Mat3::IDENTITY).max_abs() < 1e-13);
            assert!(s.residual_rms < 1e-12);
            assert!((s.j - 1.0).abs() < 1e-13);
        }
        let report = field_quality_report(&samples);
        assert_eq!(report.valid, 2000);
        assert!(report.residual_um.unwrap().p99 < 1e-12);
        assert!((report.jacobian.unwrap().mean - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rigid_rotation() {
        let r = Mat3::rotation(Vec3::Z, 30f64.to_radians());
        let c = Vec3::new(5.0, -3.0, 2.0);
        let set = build_particle_set(random_tracks(2000, 5, |x| r * x + c)).unwrap();
        for s in estimate_def_grad(&set, &EstimatorConfig::default()).unwrap() {
            assert!((s.f - r).max_abs() < 1e-12);
            let p = s.polar.unwrap();
            assert!((p.right_stretch - Mat3::IDENTITY).max_abs() < 1e-12);
            assert!((s.j - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coplanar_particles_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tracks: Vec<_> = (0..300)
            .map(|i| {
                let p = Vec3::new(
                    rng.random_range(0.0..50.0),
                    rng.random_range(0.0..50.0),
                    7.0,
                );
                ParticleTrack::new(i, p, p)
            })
            .collect();
        let set = build_particle_set(tracks).unwrap();
        let samples = estimate_def_grad(&set, &EstimatorConfig::default()).unwrap();
        assert!(samples
            .iter()
            .all(|s| s.status == SampleStatus::IllConditioned));
    }

    #[test]
    fn coplanar_cluster_counted_in_report() {
        // Bulk cloud plus a far-away planar patch whose neighborhoods are
        // entirely planar.
        let mut tracks = random_tracks(1000, 4, |x| x);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..60 {
            let p = Vec3::new(
                1000.0 + rng.random_range(0.0..20.0),
                1000.0 + rng.random_range(0.0..20.0),
                500.0,
            );
            tracks.push(ParticleTrack::new(10_000 + i, p, p));
        }
        let set = build_particle_set(tracks).unwrap();
        let samples = estimate_def_grad(&set, &EstimatorConfig::default()).unwrap();
        let report = field_quality_report(&samples);
        assert_eq!(report.flagged_count(), 60);
        assert_eq!(report.flagged[1], (SampleStatus::IllConditioned, 60));
    }

    #[test]
    fn inverted_motion_flagged() {
        let mirror = Mat3::diag(1.0, 1.0, -1.0);
        let set = build_particle_set(random_tracks(200, 6, |x| mirror * x)).unwrap();
        let samples = estimate_def_grad(&set, &EstimatorConfig::default()).unwrap();
        assert!(samples.iter().all(|s| s.status == SampleStatus::Inverted));
        assert!(samples.iter().all(|s| s.j < 0.0));
    }

    #[test]
    fn fixed_scale_weights_recover_affine() {
        let f0 = Mat3::from_rows([[1.1, 0.2, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.01]]);
        let set = build_particle_set(random_tracks(1500, 7, |x| f0 * x)).unwrap();
        let cfg = EstimatorConfig {
            weight_scale: WeightScale::Fixed { h_um: 8.0 },
            ..Default::default()
        };
        for s in estimate_def_grad(&set, &cfg).unwrap() {
            assert!((s.f - f0).max_abs() < 1e-10);
        }
    }

    #[test]
    fn outlier_filter_flags_single_jump() {
        let set = build_particle_set(random_tracks(3000, 9, |x| x)).unwrap();
        let clean = estimate_def_grad(&set, &EstimatorConfig::default()).unwrap();
        assert!(clean.iter().all(|s| s.is_valid()));
        let mut samples = clean.clone();
        let s0 = &samples[0];
        samples[0] = DefGradSample::from_stored(
            s0.particle_id,
            s0.reference,
            s0.current,
            Mat3::diag(1.5, 1.0, 1.0 / 1.5),
            0.0,
            s0.n_neighbors,
            s0.condition,
            SampleStatus::Valid,
        );
        apply_outlier_filter(
            &set,
            &mut samples,
            OutlierFilter {
                k_neighbors: 20,
                relative_threshold: 0.2,
            },
        );
        assert_eq!(samples[0].status, SampleStatus::Outlier);
        assert_eq!(
            samples
                .iter()
                .filter(|s| s.status == SampleStatus::Outlier)
                .count(),
            1
        );
    }
}
