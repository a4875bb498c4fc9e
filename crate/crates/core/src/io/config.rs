//! Pipeline configuration (TOML).
//!
//! Unknown keys are rejected. Physical quantities carry their unit in the key
//! name (`mu_pa`, `r_window_um`, `g_j_per_m2`). Any key can be overridden
//! from the environment as `CRACKFIELD__<SECTION>__<KEY>=<toml value>`, e.g.
//! `CRACKFIELD__MATERIAL__MU_PA=40000`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::fracture::CtodExtraction;
use crate::imaging::{DetectConfig, LinkConfig, RenderConfig};
use crate::kinematics::{EstimatorConfig, OutlierFilter, WeightScale};
use crate::regions::RegionSpec;
use crate::spatial::Aabb;
use crate::synth::{
    AffineLaw, CrackSegment, LefmFieldSpec, SteppedCrackPhantom, KAPPA_INCOMPRESSIBLE,
};
use crate::tensor3::{Mat3, Vec3};
use crate::MaterialModel;

pub const ENV_PREFIX: &str = "CRACKFIELD__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Fraction of flagged particles above which `--strict` fails a run.
    pub strict_invalid_fraction: f64,
    pub out_dir: Option<PathBuf>,
    /// Particle table analysed by `gradient`/`energy` stages when given.
    pub input_particles: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            strict_invalid_fraction: 0.05,
            out_dir: None,
            input_particles: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    pub mu_pa: f64,
    pub isochoric: bool,
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection {
            mu_pa: 35_000.0,
            isochoric: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub k_neighbors: usize,
    /// Fixed Gaussian weight length; absent means the k-th neighbor distance.
    pub weight_h_um: Option<f64>,
    pub min_neighbors: usize,
    pub max_condition: f64,
    /// Enables the neighbor-median outlier filter.
    pub outlier_k_neighbors: Option<usize>,
    pub outlier_relative_threshold: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        EstimatorSection {
            k_neighbors: d.k_neighbors,
            weight_h_um: None,
            min_neighbors: d.min_neighbors,
            max_condition: d.max_condition,
            outlier_k_neighbors: None,
            outlier_relative_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeSection {
    pub k_vol: usize,
    pub calibration_min_um: Option<[f64; 3]>,
    pub calibration_max_um: Option<[f64; 3]>,
}

impl Default for VolumeSection {
    fn default() -> Self {
        VolumeSection {
            k_vol: 6,
            calibration_min_um: None,
            calibration_max_um: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FractureSection {
    pub r_window_um: [f64; 2],
    pub bin_width_um: f64,
    pub r_max_um: Option<f64>,
}

impl Default for FractureSection {
    fn default() -> Self {
        FractureSection {
            r_window_um: [100.0, 400.0],
            bin_width_um: 10.0,
            r_max_um: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingSection {
    pub dims_vox: [usize; 3],
    pub render: RenderConfig,
    pub detect: DetectConfig,
    pub link: LinkConfig,
}

impl Default for ImagingSection {
    fn default() -> Self {
        ImagingSection {
            dims_vox: [512, 512, 200],
            render: RenderConfig::default(),
            detect: DetectConfig::default(),
            link: LinkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineSynthConfig {
    pub n_particles: usize,
    pub bounds_min_um: [f64; 3],
    pub bounds_max_um: [f64; 3],
    /// Rows of F₀ (dimensionless).
    pub f0: [[f64; 3]; 3],
    pub translation_um: [f64; 3],
}

impl Default for AffineSynthConfig {
    fn default() -> Self {
        AffineSynthConfig {
            n_particles: 10_000,
            bounds_min_um: [0.0; 3],
            bounds_max_um: [300.0; 3],
            f0: [[1.1, 0.02, 0.0], [0.0, 0.95, 0.01], [0.0, 0.0, 1.0 / 1.045]],
            translation_um: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LefmSynthConfig {
    pub n_particles: usize,
    pub bounds_min_um: [f64; 3],
    pub bounds_max_um: [f64; 3],
    pub g_j_per_m2: f64,
    pub tip_um: [f64; 3],
    pub kappa: f64,
    pub r_excl_um: f64,
}

impl Default for LefmSynthConfig {
    fn default() -> Self {
        LefmSynthConfig {
            n_particles: 40_000,
            bounds_min_um: [-600.0, -300.0, 0.0],
            bounds_max_um: [200.0, 300.0, 60.0],
            g_j_per_m2: 10.0,
            tip_um: [0.0, 0.0, 30.0],
            kappa: KAPPA_INCOMPRESSIBLE,
            r_excl_um: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteppedSynthConfig {
    pub bounds_min_um: [f64; 3],
    pub bounds_max_um: [f64; 3],
    /// Segment A then segment B.
    pub front_x_um: [f64; 2],
    pub plane_y_um: [f64; 2],
    pub z_lo_um: [f64; 2],
    pub z_hi_um: [f64; 2],
    pub far_field_stretch: f64,
    pub amplifications: Vec<f64>,
    pub density_per_um3: f64,
    pub blend_um: f64,
    pub plateau_margin_um: f64,
    pub r_excl_um: f64,
    pub law_slope_per_m2: f64,
    pub law_intercept_j_per_m2: f64,
    /// Segment whose faces are sampled for the CTOD fit.
    pub face_segment: usize,
    pub face_z_um: f64,
    pub face_spacing_um: f64,
}

impl Default for SteppedSynthConfig {
    fn default() -> Self {
        let p = SteppedCrackPhantom::default();
        let law = AffineLaw::default();
        let [a, b] = p.segments;
        SteppedSynthConfig {
            bounds_min_um: p.bounds.min.to_array(),
            bounds_max_um: p.bounds.max.to_array(),
            front_x_um: [a.front_x_um, b.front_x_um],
            plane_y_um: [a.plane_y_um, b.plane_y_um],
            z_lo_um: [a.z_lo_um, b.z_lo_um],
            z_hi_um: [a.z_hi_um, b.z_hi_um],
            far_field_stretch: p.far_field_stretch,
            amplifications: crate::synth::SUITE_AMPLIFICATIONS.to_vec(),
            density_per_um3: p.density_per_um3,
            blend_um: p.blend_um,
            plateau_margin_um: p.plateau_margin_um,
            r_excl_um: p.r_excl_um,
            law_slope_per_m2: law.slope,
            law_intercept_j_per_m2: law.intercept,
            face_segment: 0,
            face_z_um: 50.0,
            face_spacing_um: crate::synth::FACE_SPACING_UM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub affine: AffineSynthConfig,
    pub lefm: LefmSynthConfig,
    pub stepped: SteppedSynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub material: MaterialSection,
    pub estimator: EstimatorSection,
    pub volume: VolumeSection,
    /// Region for `region-energy`; stepped-suite runs use each phantom's
    /// ligament when absent.
    pub region: Option<RegionSpec>,
    pub fracture: FractureSection,
    pub imaging: ImagingSection,
    pub synth: SynthSection,
}

fn classify(e: toml::de::Error) -> IoError {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        return IoError::UnknownConfigKey { key, message: msg };
    }
    IoError::ConfigValue(msg)
}

fn env_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn apply_env(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<(), IoError> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (var, text) in vars {
        let path: Vec<String> = var[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_ascii_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(IoError::EnvOverride {
                var,
                reason: "empty key segment".into(),
            });
        }
        let (last, parents) = path.split_last().expect("nonempty");
        let mut node = &mut *table;
        for p in parents {
            let entry = node
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = match entry {
                toml::Value::Table(t) => t,
                _ => {
                    return Err(IoError::EnvOverride {
                        var: var.clone(),
                        reason: format!("`{p}` is not a section"),
                    })
                }
            };
        }
        node.insert(last.clone(), env_value(&text));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parse and validate without environment overrides.
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        Self::from_toml_str_with_env(text, std::iter::empty())
    }

    /// Parse, apply `CRACKFIELD__…` overrides from `vars`, then validate.
    pub fn from_toml_str_with_env(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, IoError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| IoError::ConfigSyntax(e.to_string()))?;
        apply_env(&mut table, vars)?;
        let cfg: PipelineConfig = table.try_into().map_err(classify)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (or defaults when `None`) and apply process environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, IoError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| IoError::io(format!("read {}", p.display()), e))?,
            None => String::new(),
        };
        Self::from_toml_str_with_env(&text, std::env::vars())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: String| Err(IoError::ConfigValue(m));
        self.material()
            .validate()
            .map_err(|e| IoError::ConfigValue(format!("material: {e}")))?;
        self.estimator_config()
            .validate()
            .map_err(|e| IoError::ConfigValue(format!("estimator: {e}")))?;
        if let Some(r) = &self.region {
            r.validate()
                .map_err(|e| IoError::ConfigValue(format!("region: {e}")))?;
        }
        if !(0.0..=1.0).contains(&self.run.strict_invalid_fraction) {
            return bad(format!(
                "run.strict_invalid_fraction = {} outside [0, 1]",
                self.run.strict_invalid_fraction
            ));
        }
        if self.volume.calibration_min_um.is_some() != self.volume.calibration_max_um.is_some() {
            return bad(
                "volume.calibration_min_um and calibration_max_um must be given together".into(),
            );
        }
        if let Some(b) = self.calibration_box() {
            if !b.is_valid() {
                return bad("volume calibration box has min > max".into());
            }
        }
        let [lo, hi] = self.fracture.r_window_um;
        if !(lo >= 0.0 && hi > lo) {
            return bad(format!(
                "fracture.r_window_um [{lo}, {hi}] must satisfy 0 <= min < max"
            ));
        }
        if !(self.fracture.bin_width_um > 0.0) {
            return bad("fracture.bin_width_um must be > 0".into());
        }
        self.imaging
            .render
            .validate()
            .map_err(|e| IoError::ConfigValue(format!("imaging.render: {e}")))?;
        self.imaging
            .detect
            .validate()
            .map_err(|e| IoError::ConfigValue(format!("imaging.detect: {e}")))?;
        if self.imaging.dims_vox.contains(&0) {
            return bad("imaging.dims_vox must be nonzero".into());
        }
        if self.synth.stepped.face_segment > 1 {
            return bad("synth.stepped.face_segment must be 0 or 1".into());
        }
        if self.synth.stepped.amplifications.is_empty() {
            return bad("synth.stepped.amplifications is empty".into());
        }
        Ok(())
    }

    pub fn material(&self) -> MaterialModel {
        MaterialModel {
            mu: self.material.mu_pa,
            use_isochoric: self.material.isochoric,
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            k_neighbors: e.k_neighbors,
            weight_scale: match e.weight_h_um {
                Some(h_um) => WeightScale::Fixed { h_um },
                None => WeightScale::KthNeighborDistance,
            },
            min_neighbors: e.min_neighbors,
            max_condition: e.max_condition,
            outlier_filter: e.outlier_k_neighbors.map(|k| OutlierFilter {
                k_neighbors: k,
                relative_threshold: e.outlier_relative_threshold,
            }),
        }
    }

    pub fn calibration_box(&self) -> Option<Aabb> {
        match (
            self.volume.calibration_min_um,
            self.volume.calibration_max_um,
        ) {
            (Some(a), Some(b)) => Some(Aabb::new(Vec3::from_array(a), Vec3::from_array(b))),
            _ => None,
        }
    }

    pub fn ctod_extraction(&self) -> CtodExtraction {
        CtodExtraction {
            bin_width_um: self.fracture.bin_width_um,
            r_max_um: self.fracture.r_max_um,
        }
    }

    pub fn affine_bounds(&self) -> Aabb {
        let a = &self.synth.affine;
        Aabb::new(
            Vec3::from_array(a.bounds_min_um),
            Vec3::from_array(a.bounds_max_um),
        )
    }

    pub fn affine_f0(&self) -> Mat3 {
        Mat3::from_rows(self.synth.affine.f0)
    }

    pub fn lefm_bounds(&self) -> Aabb {
        let l = &self.synth.lefm;
        Aabb::new(
            Vec3::from_array(l.bounds_min_um),
            Vec3::from_array(l.bounds_max_um),
        )
    }

    pub fn lefm_spec(&self) -> LefmFieldSpec {
        let l = &self.synth.lefm;
        let mut spec = LefmFieldSpec::new(0.0, self.material.mu_pa, Vec3::from_array(l.tip_um));
        spec.kappa = l.kappa;
        spec.r_excl_um = l.r_excl_um;
        spec.k_i = (l.g_j_per_m2.max(0.0) * spec.effective_modulus()).sqrt();
        spec
    }

    /// Base phantom (K_I and amplification are set per suite member).
    pub fn stepped_phantom(&self) -> SteppedCrackPhantom {
        let s = &self.synth.stepped;
        let seg = |i: usize| CrackSegment {
            front_x_um: s.front_x_um[i],
            plane_y_um: s.plane_y_um[i],
            z_lo_um: s.z_lo_um[i],
            z_hi_um: s.z_hi_um[i],
        };
        SteppedCrackPhantom {
            bounds: Aabb::new(
                Vec3::from_array(s.bounds_min_um),
                Vec3::from_array(s.bounds_max_um),
            ),
            segments: [seg(0), seg(1)],
            k_i: 0.0,
            mu: self.material.mu_pa,
            far_field_stretch: s.far_field_stretch,
            amplification: 1.0,
            density_per_um3: s.density_per_um3,
            blend_um: s.blend_um,
            plateau_margin_um: s.plateau_margin_um,
            r_excl_um: s.r_excl_um,
        }
    }

    pub fn suite_law(&self) -> AffineLaw {
        AffineLaw {
            slope: self.synth.stepped.law_slope_per_m2,
            intercept: self.synth.stepped.law_intercept_j_per_m2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.material().mu, 35_000.0);
        assert_eq!(cfg.estimator_config(), EstimatorConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        match PipelineConfig::from_toml_str("[material]\nmu = 35000\n") {
            Err(IoError::UnknownConfigKey { key, .. }) => assert_eq!(key, "mu"),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::from_toml_str("[imaging.render]\nnoise = 3\n") {
            Err(IoError::UnknownConfigKey { key, .. }) => assert_eq!(key, "noise"),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::from_toml_str("[materials]\nmu_pa = 1\n") {
            Err(e @ IoError::UnknownConfigKey { .. }) => {
                assert!(e.to_string().contains("materials"))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            PipelineConfig::from_toml_str("[material\n"),
            Err(IoError::ConfigSyntax(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[material]\nmu_pa = -1\n"),
            Err(IoError::ConfigValue(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[material]\nmu_pa = \"soft\"\n"),
            Err(IoError::ConfigValue(_))
        ));
    }

    #[test]
    fn region_spec_in_config() {
        let text = "[region]\nkind = \"ligament\"\nz_lo_um = 150\nz_hi_um = 250\nx_back_um = -300\nx_front_um = 0\nhalf_width_y_um = 100\n";
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        assert!(
            matches!(cfg.region, Some(RegionSpec::Ligament { y_center_um, .. }) if y_center_um == 0.0)
        );
        let bad = "[region]\nkind = \"box\"\nmin_um = [0,0,0]\nmax_um = [1,1,1]\nmin = 1\n";
        assert!(matches!(
            PipelineConfig::from_toml_str(bad),
            Err(IoError::UnknownConfigKey { .. })
        ));
    }

    #[test]
    fn env_overrides() {
        let cfg = PipelineConfig::from_toml_str_with_env(
            "[material]\nmu_pa = 1000\n",
            env(&[
                ("CRACKFIELD__MATERIAL__MU_PA", "40000"),
                ("CRACKFIELD__RUN__OUT_DIR", "results/a"),
                ("CRACKFIELD__IMAGING__DIMS_VOX", "[64, 64, 32]"),
                ("CRACKFIELD__ESTIMATOR__WEIGHT_H_UM", "12.5"),
                ("UNRELATED", "1"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.material.mu_pa, 40_000.0);
        assert_eq!(cfg.run.out_dir, Some(PathBuf::from("results/a")));
        assert_eq!(cfg.imaging.dims_vox, [64, 64, 32]);
        assert_eq!(
            cfg.estimator_config().weight_scale,
            WeightScale::Fixed { h_um: 12.5 }
        );
        match PipelineConfig::from_toml_str_with_env("", env(&[("CRACKFIELD__MATERIAL__MU", "1")]))
        {
            Err(IoError::UnknownConfigKey { key, .. }) => assert_eq!(key, "mu"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            PipelineConfig::from_toml_str_with_env(
                "[run]\nseed = 1\n",
                env(&[("CRACKFIELD__RUN__SEED__X", "1")])
            ),
            Err(IoError::EnvOverride { .. })
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str_with_env("", env(&[("CRACKFIELD____MU", "1")])),
            Err(IoError::EnvOverride { .. })
        ));
    }

    #[test]
    fn derived_inputs() {
        let cfg = PipelineConfig::default();
        let p = cfg.stepped_phantom();
        assert_eq!(p, SteppedCrackPhantom::default());
        let spec = cfg.lefm_spec();
        assert!((spec.energy_release_rate() - 10.0).abs() < 1e-12);
        assert_eq!(cfg.suite_law(), AffineLaw::default());
    }
}
