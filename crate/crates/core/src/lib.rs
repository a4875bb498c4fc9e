//! Particle-tracking kinematics, strain energy, and fracture analysis for
//! soft gels.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constitutive;
pub mod fracture;
pub mod imaging;
pub mod io;
pub mod kinematics;
pub mod pipeline;
pub mod regions;
pub mod spatial;
pub mod stats;
pub mod synth;
pub mod tensor3;

pub use constitutive::{FieldUnit, MaterialModel, ScalarField, ScalarRecord};
pub use fracture::{CtodProfile, CtodSample, Face, FacePoint, FractureFit, RegressionResult};
pub use kinematics::{DefGradSample, EstimatorConfig, ParticleSet, ParticleTrack, SampleStatus};
pub use regions::{RadialWeights, RegionEnergy, RegionSpec};
pub use spatial::Aabb;
pub use tensor3::{Mat3, Vec3};
