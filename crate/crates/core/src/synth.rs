//! Synthetic ground truth: affine fields, mode-I LEFM fields and a
//! stepped-crack phantom with a stretched ligament.
//!
//! The phantom's ligament deformation is a prescribed kinematic ansatz, not
//! the solution of an elasticity problem. It exists to check measurement
//! machinery against known answers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::MaterialModel;
use crate::fracture::{Face, FacePoint};
use crate::kinematics::{build_particle_set, KinematicsError, ParticleSet, ParticleTrack};
use crate::regions::RegionSpec;
use crate::spatial::Aabb;
use crate::tensor3::{Mat3, Vec3};

const UM: f64 = 1e-6;

/// Upper bound on generated particle counts, to catch unit mistakes in
/// densities before they exhaust memory.
pub const MAX_PARTICLES: usize = 20_000_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator input: {0}")]
    Invalid(String),
    #[error("bounds lie entirely inside the {r_excl_um} µm tip exclusion zone")]
    BoundsInsideExclusion { r_excl_um: f64 },
    #[error("{0} particles requested, limit is {MAX_PARTICLES}")]
    TooManyParticles(usize),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::Invalid(msg.into())
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_in(rng: &mut ChaCha8Rng, b: &Aabb) -> Vec3 {
    let e = b.extent();
    Vec3::new(
        b.min.x + e.x * rng.random::<f64>(),
        b.min.y + e.y * rng.random::<f64>(),
        b.min.z + e.z * rng.random::<f64>(),
    )
}

fn check_bounds(bounds: &Aabb) -> Result<(), SynthError> {
    if !bounds.is_valid() || !bounds.min.is_finite() || !bounds.max.is_finite() {
        return Err(invalid("bounds must be finite with min <= max"));
    }
    Ok(())
}

/// `n` uniform reference points in `bounds`, deformed by `x = F0·X + c`.
pub fn gen_affine(
    n: usize,
    bounds: Aabb,
    f0: Mat3,
    c: Vec3,
    seed: u64,
) -> Result<ParticleSet, SynthError> {
    check_bounds(&bounds)?;
    if !(f0.is_finite() && f0.det() > 0.0) || !c.is_finite() {
        return Err(invalid("F0 must be finite with det F0 > 0"));
    }
    if n > MAX_PARTICLES {
        return Err(SynthError::TooManyParticles(n));
    }
    let mut rng = rng_for(seed);
    let tracks = (0..n)
        .map(|i| {
            let x = uniform_in(&mut rng, &bounds);
            ParticleTrack::new(i as u64, x, f0 * x + c)
        })
        .collect();
    Ok(build_particle_set(tracks)?)
}

/// Kolosov constant of the incompressible solid in plane stress.
pub const KAPPA_INCOMPRESSIBLE: f64 = 5.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LefmFieldSpec {
    /// Pa·√m.
    pub k_i: f64,
    /// Pa.
    pub mu: f64,
    pub kappa: f64,
    /// Crack tip, µm. The tip line runs along z.
    pub tip: Vec3,
    /// Unit propagation direction in the x-y plane.
    pub direction: Vec3,
    /// No particles are seeded closer than this to the tip line, µm.
    pub r_excl_um: f64,
}

impl LefmFieldSpec {
    pub fn new(k_i: f64, mu: f64, tip: Vec3) -> Self {
        LefmFieldSpec {
            k_i,
            mu,
            kappa: KAPPA_INCOMPRESSIBLE,
            tip,
            direction: Vec3::X,
            r_excl_um: 20.0,
        }
    }

    /// Spec whose analytic energy release rate is `g` (J/m²).
    pub fn for_energy_release_rate(g: f64, mu: f64, tip: Vec3) -> Self {
        let k = (g * 8.0 * mu / (1.0 + KAPPA_INCOMPRESSIBLE)).sqrt();
        Self::new(k, mu, tip)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.k_i >= 0.0 && self.k_i.is_finite()) {
            return Err(invalid(format!("K_I must be >= 0, got {}", self.k_i)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(invalid(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.kappa > 1.0 && self.kappa < 3.0) {
            return Err(invalid(format!(
                "kappa must lie in (1, 3), got {}",
                self.kappa
            )));
        }
        if !self.tip.is_finite() {
            return Err(invalid("tip must be finite"));
        }
        if self.direction.z.abs() > 1e-12 || (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "propagation direction must be a unit vector in the x-y plane",
            ));
        }
        if !(self.r_excl_um >= 0.0 && self.r_excl_um.is_finite()) {
            return Err(invalid("exclusion radius must be >= 0"));
        }
        Ok(())
    }

    /// Plane-stress Young's modulus `8μ/(1+κ)`; `3μ` for κ = 5/3.
    pub fn effective_modulus(&self) -> f64 {
        8.0 * self.mu / (1.0 + self.kappa)
    }

    /// `G = K_I² / E'`, J/m².
    pub fn energy_release_rate(&self) -> f64 {
        self.k_i * self.k_i / self.effective_modulus()
    }

    /// Total face opening at distance `r_um` behind the tip, µm.
    pub fn opening_um(&self, r_um: f64) -> f64 {
        8.0 * self.k_i / self.effective_modulus() * (r_um * UM / (2.0 * PI)).sqrt() / UM
    }
}

/// Analytic Williams mode-I field, independent of z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LefmField {
    pub spec: LefmFieldSpec,
    e1: Vec3,
    e2: Vec3,
}

impl LefmField {
    pub fn new(spec: LefmFieldSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let e1 = spec.direction;
        Ok(LefmField {
            spec,
            e1,
            e2: Vec3::Z.cross(e1),
        })
    }

    /// Crack-aligned in-plane coordinates in µm: along propagation, along opening.
    pub fn local(&self, p: Vec3) -> (f64, f64) {
        let d = p - self.spec.tip;
        (d.dot(self.e1), d.dot(self.e2))
    }

    /// In-plane distance to the tip line, µm.
    pub fn tip_distance_um(&self, p: Vec3) -> f64 {
        let (a, b) = self.local(p);
        a.hypot(b)
    }

    fn amplitude(&self) -> f64 {
        self.spec.k_i / (2.0 * self.spec.mu * (2.0 * PI).sqrt())
    }

    fn angular(&self, theta: f64) -> (f64, f64) {
        let k = self.spec.kappa;
        let (s, c) = (theta / 2.0).sin_cos();
        (c * (k - 1.0 + 2.0 * s * s), s * (k + 1.0 - 2.0 * c * c))
    }

    fn local_displacement_um(&self, x1: f64, x2: f64) -> (f64, f64) {
        let r = x1.hypot(x2) * UM;
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let (gx, gy) = self.angular(x2.atan2(x1));
        let a = self.amplitude() * r.sqrt() / UM;
        (a * gx, a * gy)
    }

    fn in_global(&self, u1: f64, u2: f64) -> Vec3 {
        self.e1 * u1 + self.e2 * u2
    }

    /// Displacement at reference point `p`, µm.
    pub fn displacement(&self, p: Vec3) -> Vec3 {
        let (x1, x2) = self.local(p);
        let (u1, u2) = self.local_displacement_um(x1, x2);
        self.in_global(u1, u2)
    }

    /// Displacement of the face point `r_um` behind the tip.
    pub fn face_displacement(&self, r_um: f64, face: Face) -> Vec3 {
        let x2 = match face {
            Face::Upper => 0.0,
            Face::Lower => -0.0,
        };
        let (u1, u2) = self.local_displacement_um(-r_um, x2);
        self.in_global(u1, u2)
    }

    /// Displacement gradient `∂u/∂X`; NaN on the tip line.
    pub fn displacement_gradient(&self, p: Vec3) -> Mat3 {
        let (x1, x2) = self.local(p);
        let r = x1.hypot(x2) * UM;
        if r == 0.0 {
            return Mat3([[f64::NAN; 3]; 3]);
        }
        let theta = x2.atan2(x1);
        let k = self.spec.kappa;
        let (s, c) = (theta / 2.0).sin_cos();
        let (gx, gy) = self.angular(theta);
        let dgx = -0.5 * s * (k - 1.0 + 2.0 * s * s) + 2.0 * s * c * c;
        let dgy = 0.5 * c * (k + 1.0 - 2.0 * c * c) + 2.0 * s * s * c;
        let (st, ct) = theta.sin_cos();
        let a = self.amplitude() / r.sqrt();
        // ∂/∂x1 = cosθ ∂r − sinθ/r ∂θ, ∂/∂x2 = sinθ ∂r + cosθ/r ∂θ
        let local = [
            [
                a * (ct * gx / 2.0 - st * dgx),
                a * (st * gx / 2.0 + ct * dgx),
            ],
            [
                a * (ct * gy / 2.0 - st * dgy),
                a * (st * gy / 2.0 + ct * dgy),
            ],
        ];
        let q = Mat3::from_cols(self.e1, self.e2, Vec3::Z);
        let mut g = Mat3::ZERO;
        for (row, l) in g.0.iter_mut().zip(&local) {
            row[..2].copy_from_slice(l);
        }
        q * g * q.transpose()
    }

    /// Analytic `F = I + ∂u/∂X`.
    pub fn deformation_gradient(&self, p: Vec3) -> Mat3 {
        Mat3::IDENTITY + self.displacement_gradient(p)
    }
}

#[derive(Debug, Clone)]
pub struct LefmSynth {
    pub set: ParticleSet,
    pub field: LefmField,
    /// Crack-face points on the mid z-plane, deformed positions.
    pub faces: Vec<FacePoint>,
    /// Analytic `G = K_I²/E'`, J/m².
    pub g_analytic: f64,
}

/// Spacing of emitted crack-face points, µm.
pub const FACE_SPACING_UM: f64 = 2.0;

/// Particles displaced by the mode-I field, with no particle inside the
/// exclusion cylinder around the tip line.
pub fn gen_lefm_mode1(
    n: usize,
    bounds: Aabb,
    spec: LefmFieldSpec,
    seed: u64,
) -> Result<LefmSynth, SynthError> {
    check_bounds(&bounds)?;
    let field = LefmField::new(spec)?;
    if n > MAX_PARTICLES {
        return Err(SynthError::TooManyParticles(n));
    }
    let corners = [bounds.min.x, bounds.max.x].into_iter().flat_map(|x| {
        [bounds.min.y, bounds.max.y]
            .into_iter()
            .map(move |y| Vec3::new(x, y, 0.0))
    });
    let tip_xy = Vec3::new(spec.tip.x, spec.tip.y, 0.0);
    let farthest = corners.map(|c| (c - tip_xy).norm()).fold(0.0, f64::max);
    if n > 0 && farthest <= spec.r_excl_um {
        return Err(SynthError::BoundsInsideExclusion {
            r_excl_um: spec.r_excl_um,
        });
    }
    let mut rng = rng_for(seed);
    let mut tracks = Vec::with_capacity(n);
    while tracks.len() < n {
        let x = uniform_in(&mut rng, &bounds);
        if field.tip_distance_um(x) < spec.r_excl_um {
            continue;
        }
        tracks.push(ParticleTrack::new(
            tracks.len() as u64,
            x,
            x + field.displacement(x),
        ));
    }
    let set = build_particle_set(tracks)?;
    let z_mid = 0.5 * (bounds.min.z + bounds.max.z);
    let faces = lefm_faces(&field, &bounds, z_mid, FACE_SPACING_UM, spec.r_excl_um);
    Ok(LefmSynth {
        set,
        field,
        faces,
        g_analytic: spec.energy_release_rate(),
    })
}

fn lefm_faces(
    field: &LefmField,
    bounds: &Aabb,
    z: f64,
    spacing: f64,
    r_start: f64,
) -> Vec<FacePoint> {
    let tip = Vec3::new(field.spec.tip.x, field.spec.tip.y, z);
    let mut out = Vec::new();
    let mut k = (r_start / spacing).ceil().max(1.0) as usize;
    loop {
        let r = k as f64 * spacing;
        let reference = tip - field.e1 * r;
        let inside_xy = reference.x >= bounds.min.x
            && reference.x <= bounds.max.x
            && reference.y >= bounds.min.y
            && reference.y <= bounds.max.y;
        if !inside_xy {
            break;
        }
        for face in [Face::Upper, Face::Lower] {
            out.push(FacePoint {
                face,
                position: reference + field.face_displacement(r, face),
            });
        }
        k += 1;
    }
    out
}

/// One planar crack segment. The crack occupies `x < front_x_um` on the
/// plane `y = plane_y_um` for `z` in `[z_lo_um, z_hi_um]`, propagating along +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrackSegment {
    pub front_x_um: f64,
    pub plane_y_um: f64,
    pub z_lo_um: f64,
    pub z_hi_um: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteppedCrackPhantom {
    pub bounds: Aabb,
    pub segments: [CrackSegment; 2],
    /// Mode-I intensity of both segments, Pa·√m.
    pub k_i: f64,
    pub mu: f64,
    /// Uniaxial far-field stretch along y (incompressible).
    pub far_field_stretch: f64,
    /// Ligament stretch = amplification × far-field stretch.
    pub amplification: f64,
    /// Particles per µm³.
    pub density_per_um3: f64,
    /// Cosine ramp length between ligament and surroundings, µm.
    pub blend_um: f64,
    /// Region around the ligament box held at the exact ligament stretch, µm.
    pub plateau_margin_um: f64,
    pub r_excl_um: f64,
}

impl Default for SteppedCrackPhantom {
    fn default() -> Self {
        SteppedCrackPhantom {
            bounds: Aabb::new(
                Vec3::new(-450.0, -250.0, 0.0),
                Vec3::new(150.0, 250.0, 300.0),
            ),
            segments: [
                CrackSegment {
                    front_x_um: 0.0,
                    plane_y_um: -100.0,
                    z_lo_um: 0.0,
                    z_hi_um: 250.0,
                },
                CrackSegment {
                    front_x_um: -300.0,
                    plane_y_um: 100.0,
                    z_lo_um: 150.0,
                    z_hi_um: 400.0,
                },
            ],
            k_i: 0.0,
            mu: 35_000.0,
            far_field_stretch: 1.0,
            amplification: 1.0,
            density_per_um3: 1e-3,
            blend_um: 20.0,
            plateau_margin_um: 25.0,
            r_excl_um: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomLabel {
    /// Inside the declared ligament box.
    Ligament,
    /// Outside the box but touched by the ligament stretch.
    Blend,
    Background,
}

impl PhantomLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhantomLabel::Ligament => "ligament",
            PhantomLabel::Blend => "blend",
            PhantomLabel::Background => "background",
        }
    }

    pub fn parse(s: &str) -> Option<PhantomLabel> {
        [
            PhantomLabel::Ligament,
            PhantomLabel::Blend,
            PhantomLabel::Background,
        ]
        .into_iter()
        .find(|l| l.as_str() == s)
    }
}

/// 1 for `d <= 0`, cosine decay to 0 at `d = len`.
fn ramp(d: f64, len: f64) -> f64 {
    if d <= 0.0 {
        1.0
    } else if d >= len {
        0.0
    } else {
        0.5 * (1.0 + (PI * d / len).cos())
    }
}

fn outside_distance(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

fn uniaxial_y(l: f64) -> Mat3 {
    let t = 1.0 / l.sqrt();
    Mat3::diag(t, l, t)
}

#[derive(Debug, Clone)]
pub struct SteppedCrackSynth {
    pub set: ParticleSet,
    /// Parallel to `set.tracks()`.
    pub labels: Vec<PhantomLabel>,
}

impl SteppedCrackPhantom {
    pub fn validate(&self) -> Result<(), SynthError> {
        check_bounds(&self.bounds)?;
        let [a, b] = self.segments;
        for s in [a, b] {
            if !(s.z_lo_um < s.z_hi_um) {
                return Err(invalid("segment z-interval must be nonempty"));
            }
        }
        if a.z_lo_um.max(b.z_lo_um) >= a.z_hi_um.min(b.z_hi_um) {
            return Err(invalid("segment z-intervals must overlap"));
        }
        if a.front_x_um == b.front_x_um || a.plane_y_um == b.plane_y_um {
            return Err(invalid("segments need distinct front positions and planes"));
        }
        for (name, v) in [
            ("far-field stretch", self.far_field_stretch),
            ("amplification", self.amplification),
            ("density", self.density_per_um3),
            ("mu", self.mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("K_I", self.k_i),
            ("blend length", self.blend_um),
            ("plateau margin", self.plateau_margin_um),
            ("exclusion radius", self.r_excl_um),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        let n = self.n_particles();
        if n > MAX_PARTICLES {
            return Err(SynthError::TooManyParticles(n));
        }
        Ok(())
    }

    pub fn n_particles(&self) -> usize {
        (self.density_per_um3 * self.bounds.volume()).round() as usize
    }

    pub fn ligament_box(&self) -> Aabb {
        let [a, b] = self.segments;
        Aabb::new(
            Vec3::new(
                a.front_x_um.min(b.front_x_um),
                a.plane_y_um.min(b.plane_y_um),
                a.z_lo_um.max(b.z_lo_um),
            ),
            Vec3::new(
                a.front_x_um.max(b.front_x_um),
                a.plane_y_um.max(b.plane_y_um),
                a.z_hi_um.min(b.z_hi_um),
            ),
        )
    }

    /// The geometric region matching the ligament box.
    pub fn ligament_spec(&self) -> RegionSpec {
        let lb = self.ligament_box();
        RegionSpec::Ligament {
            z_lo_um: lb.min.z,
            z_hi_um: lb.max.z,
            x_back_um: lb.min.x,
            x_front_um: lb.max.x,
            y_center_um: 0.5 * (lb.min.y + lb.max.y),
            half_width_y_um: 0.5 * (lb.max.y - lb.min.y),
        }
    }

    pub fn ligament_stretch(&self) -> f64 {
        self.amplification * self.far_field_stretch
    }

    /// Closed-form ligament energy `W(λ_lig)·V_box`, J.
    pub fn expected_ligament_energy(&self, mat: &MaterialModel) -> f64 {
        mat.energy_density(&uniaxial_y(self.ligament_stretch()))
            * self.ligament_box().volume()
            * UM.powi(3)
    }

    pub fn segment_field(&self, i: usize) -> LefmField {
        let s = self.segments[i];
        LefmField {
            spec: LefmFieldSpec::new(
                self.k_i,
                self.mu,
                Vec3::new(s.front_x_um, s.plane_y_um, 0.0),
            ),
            e1: Vec3::X,
            e2: Vec3::Y,
        }
    }

    fn segment_weight(&self, i: usize, z: f64) -> f64 {
        let s = self.segments[i];
        ramp(outside_distance(z, s.z_lo_um, s.z_hi_um), self.blend_um)
    }

    /// Ligament blend weight: 1 on the plateau, 0 beyond plateau + blend.
    pub fn ligament_weight(&self, p: Vec3) -> f64 {
        let plateau = self.ligament_box().shrunk(-self.plateau_margin_um);
        (0..3)
            .map(|a| {
                ramp(
                    outside_distance(p[a], plateau.min[a], plateau.max[a]),
                    self.blend_um,
                )
            })
            .product()
    }

    fn background(&self, p: Vec3, face: Option<(usize, Face)>) -> Vec3 {
        let center = self.bounds.center();
        let mut u = (uniaxial_y(self.far_field_stretch) - Mat3::IDENTITY) * (p - center);
        for i in 0..2 {
            let w = self.segment_weight(i, p.z);
            if w == 0.0 {
                continue;
            }
            let field = self.segment_field(i);
            let ui = match face {
                Some((j, f)) if j == i => {
                    field.face_displacement(self.segments[i].front_x_um - p.x, f)
                }
                _ => field.displacement(p),
            };
            u += ui * w;
        }
        u
    }

    fn displacement_with(&self, p: Vec3, face: Option<(usize, Face)>) -> Vec3 {
        let u_bg = self.background(p, face);
        let psi = self.ligament_weight(p);
        if psi == 0.0 {
            return u_bg;
        }
        let c = self.ligament_box().center();
        let u_lig = (uniaxial_y(self.ligament_stretch()) - Mat3::IDENTITY) * (p - c)
            + self.background(c, None);
        u_bg + (u_lig - u_bg) * psi
    }

    /// Displacement at reference point `p`, µm.
    pub fn displacement(&self, p: Vec3) -> Vec3 {
        self.displacement_with(p, None)
    }

    pub fn label(&self, p: Vec3) -> PhantomLabel {
        if self.ligament_box().contains(p) {
            PhantomLabel::Ligament
        } else if self.ligament_weight(p) > 0.0 {
            PhantomLabel::Blend
        } else {
            PhantomLabel::Background
        }
    }

    fn excluded(&self, p: Vec3) -> bool {
        self.segments
            .iter()
            .any(|s| (p.x - s.front_x_um).hypot(p.y - s.plane_y_um) < self.r_excl_um)
    }

    pub fn generate(&self, seed: u64) -> Result<SteppedCrackSynth, SynthError> {
        self.validate()?;
        let n = self.n_particles();
        let mut rng = rng_for(seed);
        let mut tracks = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        while tracks.len() < n {
            let x = uniform_in(&mut rng, &self.bounds);
            if self.excluded(x) {
                continue;
            }
            labels.push(self.label(x));
            tracks.push(ParticleTrack::new(
                tracks.len() as u64,
                x,
                x + self.displacement(x),
            ));
        }
        Ok(SteppedCrackSynth {
            set: build_particle_set(tracks)?,
            labels,
        })
    }

    /// Face points of segment `i` on the plane `z = z_um`, and the deformed
    /// tip position to measure distances from.
    pub fn face_points(
        &self,
        i: usize,
        z_um: f64,
        spacing_um: f64,
    ) -> Result<(Vec<FacePoint>, Vec3), SynthError> {
        if i > 1 || !(spacing_um > 0.0) || !z_um.is_finite() {
            return Err(invalid(
                "face sampling needs segment 0 or 1, spacing > 0 and finite z",
            ));
        }
        let s = self.segments[i];
        let tip_ref = Vec3::new(s.front_x_um, s.plane_y_um, z_um);
        let tip = tip_ref + self.displacement(tip_ref);
        let mut out = Vec::new();
        let mut k = (self.r_excl_um / spacing_um).ceil().max(1.0) as usize;
        loop {
            let p = tip_ref - Vec3::X * (k as f64 * spacing_um);
            if p.x < self.bounds.min.x {
                break;
            }
            for face in [Face::Upper, Face::Lower] {
                out.push(FacePoint {
                    face,
                    position: p + self.displacement_with(p, Some((i, face))),
                });
            }
            k += 1;
        }
        Ok((out, tip))
    }
}

/// A target line `G_c = slope·E_lig + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineLaw {
    /// m⁻².
    pub slope: f64,
    /// J/m².
    pub intercept: f64,
}

impl Default for AffineLaw {
    fn default() -> Self {
        AffineLaw {
            slope: 3.84e7,
            intercept: 4.36,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteMember {
    pub phantom: SteppedCrackPhantom,
    /// J.
    pub e_true: f64,
    /// J/m².
    pub g_true: f64,
}

/// Ligament amplifications of the default suite (far-field stretch 1.0).
pub const SUITE_AMPLIFICATIONS: [f64; 5] = [1.0, 1.25, 1.5, 1.75, 1.95];

/// Phantoms differing only in ligament amplification. Each gets the K_I that
/// puts its closed-form `(E_lig, G)` on `law`.
pub fn phantom_suite(
    base: &SteppedCrackPhantom,
    amplifications: &[f64],
    law: AffineLaw,
) -> Result<Vec<SuiteMember>, SynthError> {
    let mat = MaterialModel::new(base.mu);
    amplifications
        .iter()
        .map(|&a| {
            let mut phantom = SteppedCrackPhantom {
                amplification: a,
                ..*base
            };
            phantom.validate()?;
            let e_true = phantom.expected_ligament_energy(&mat);
            let g_true = law.slope * e_true + law.intercept;
            if !(g_true >= 0.0) {
                return Err(invalid(format!(
                    "law gives negative G_c {g_true} for amplification {a}"
                )));
            }
            phantom.k_i = (g_true * mat.effective_modulus()).sqrt();
            Ok(SuiteMember {
                phantom,
                e_true,
                g_true,
            })
        })
        .collect()
}
