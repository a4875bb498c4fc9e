//! File-to-file stages. Every subcommand is one of these, and `pipeline`
//! chains the same functions, so a pipeline run is reproducible stage by
//! stage from the command line.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crackfield::constitutive::{max_principal_stretch_field, strain_energy_density};
use crackfield::fracture::regress_gc_vs_elig;
use crackfield::imaging::{detect, link, render_stack, Frame, VoxelVolume};
use crackfield::io::{
    export_point_cloud, open_read, read_defgrad_table, read_detections, read_faces,
    read_key_values, read_particle_table, read_regression_points, read_scalar_field,
    write_ctod_profile, write_defgrad_table, write_detections, write_faces, write_file,
    write_key_values, write_particle_table, write_regression, write_regression_points,
    write_scalar_field, FaceTable, IoError, ParticleTable, PipelineConfig, RegressionPoint,
};
use crackfield::kinematics::{estimate_def_grad, field_quality_report};
use crackfield::pipeline::{fit_faces, phantom_label, region_energy};
use crackfield::synth::{gen_affine, gen_lefm_mode1, phantom_suite};
use crackfield::{RegionSpec, ScalarField, Vec3};

use crate::error::CliError;
use crate::manifest::{
    cache_lookup, cache_store, display_path, hash_file, sha256_hex, RunManifest, StageRecord,
};

pub const SUITE_TRUTH_FILE: &str = "suite_truth.csv";

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub cache: bool,
    pub strict: bool,
    pub quiet: bool,
    manifest: RefCell<RunManifest>,
    violations: RefCell<Vec<String>>,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, out_dir: PathBuf, cache: bool, strict: bool) -> Self {
        let config_hash = sha256_hex(cfg.to_toml_string().as_bytes());
        let manifest = RunManifest::open(&out_dir, &config_hash, cfg.run.seed);
        Ctx {
            cfg,
            out_dir,
            config_hash,
            cache,
            strict,
            quiet: false,
            manifest: RefCell::new(manifest),
            violations: RefCell::new(Vec::new()),
        }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn say(&self, msg: String) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    /// Hash inputs, reuse cached outputs when allowed, otherwise run `body`,
    /// then record the stage and rewrite the manifest.
    fn stage(
        &self,
        name: &str,
        params: &str,
        inputs: &[&Path],
        body: impl FnOnce() -> Result<Vec<PathBuf>, CliError>,
    ) -> Result<Vec<PathBuf>, CliError> {
        let t0 = Instant::now();
        let mut input_hashes = BTreeMap::new();
        let mut key_src = format!("{name}\n{params}\n{}\n", self.config_hash);
        for p in inputs {
            let h = hash_file(p)?;
            key_src.push_str(&format!("{}={h}\n", p.display()));
            input_hashes.insert(display_path(&self.out_dir, p), h);
        }
        let key = sha256_hex(key_src.as_bytes());
        let cached = if self.cache {
            cache_lookup(&self.out_dir, &key)
        } else {
            None
        };
        let was_cached = cached.is_some();
        let outputs = match cached {
            Some(o) => o,
            None => body()?,
        };
        let mut out_hashes = BTreeMap::new();
        let mut abs_hashes = BTreeMap::new();
        for p in &outputs {
            let h = hash_file(p)?;
            out_hashes.insert(display_path(&self.out_dir, p), h.clone());
            abs_hashes.insert(p.clone(), h);
        }
        if self.cache && !was_cached {
            cache_store(&self.out_dir, &key, &abs_hashes)?;
        }
        let mut m = self.manifest.borrow_mut();
        m.record(StageRecord {
            name: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
            cached: was_cached,
            inputs: input_hashes,
            outputs: out_hashes,
        });
        m.save(&self.out_dir)?;
        drop(m);
        if was_cached {
            self.say(format!("{name}: cached"));
        }
        Ok(outputs)
    }

    /// Strict-mode failure collected so far, if any.
    pub fn strict_failure(&self) -> Option<CliError> {
        let v = self.violations.borrow();
        (self.strict && !v.is_empty()).then(|| CliError::Strict(v.join("; ")))
    }
}

fn read_with<T>(
    path: &Path,
    f: impl FnOnce(&mut dyn std::io::Read) -> Result<T, IoError>,
) -> Result<T, CliError> {
    let mut r = open_read(path)?;
    Ok(f(&mut r)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_file(path, |w| {
        w.write_all(text.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| IoError::io(format!("write {}", path.display()), e))
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_file(path, |w| {
        w.write_all(text.as_bytes())
            .map_err(|e| IoError::io(format!("write {}", path.display()), e))
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data

pub fn synth_affine(ctx: &Ctx, dir: &Path) -> Result<PathBuf, CliError> {
    let out = dir.join("particles.csv");
    ctx.stage("synth-affine", &out.display().to_string(), &[], || {
        let a = &ctx.cfg.synth.affine;
        let set = gen_affine(
            a.n_particles,
            ctx.cfg.affine_bounds(),
            ctx.cfg.affine_f0(),
            Vec3::from_array(a.translation_um),
            ctx.cfg.run.seed,
        )?;
        write_file(&out, |w| {
            write_particle_table(w, &ParticleTable::from_tracks(set.tracks(), None))
        })?;
        ctx.say(format!(
            "synth-affine: {} particles -> {}",
            set.len(),
            out.display()
        ));
        Ok(vec![out.clone()])
    })?;
    Ok(out)
}

pub fn synth_lefm(ctx: &Ctx, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let particles = dir.join("particles.csv");
    let faces = dir.join("faces.csv");
    ctx.stage("synth-lefm", &dir.display().to_string(), &[], || {
        let l = &ctx.cfg.synth.lefm;
        let s = gen_lefm_mode1(
            l.n_particles,
            ctx.cfg.lefm_bounds(),
            ctx.cfg.lefm_spec(),
            ctx.cfg.run.seed,
        )?;
        write_file(&particles, |w| {
            write_particle_table(w, &ParticleTable::from_tracks(s.set.tracks(), None))
        })?;
        let t = s.field.spec.tip;
        let tip = Vec3::new(t.x, t.y, ctx.cfg.lefm_bounds().center().z);
        write_file(&faces, |w| {
            write_faces(
                w,
                &FaceTable {
                    tip,
                    points: s.faces.clone(),
                },
            )
        })?;
        ctx.say(format!(
            "synth-lefm: {} particles, G = {} J/m^2 -> {}",
            s.set.len(),
            s.g_analytic,
            dir.display()
        ));
        Ok(vec![particles.clone(), faces.clone()])
    })?;
    Ok((particles, faces))
}

/// One directory per suite member holding labeled particles, crack faces and
/// the ligament region, plus the closed-form truth of the suite.
pub fn synth_stepped(ctx: &Ctx, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let n = ctx.cfg.synth.stepped.amplifications.len();
    let dirs: Vec<PathBuf> = (0..n).map(|i| dir.join(phantom_label(i))).collect();
    ctx.stage("synth-stepped", &dir.display().to_string(), &[], || {
        let st = &ctx.cfg.synth.stepped;
        let members = phantom_suite(
            &ctx.cfg.stepped_phantom(),
            &st.amplifications,
            ctx.cfg.suite_law(),
        )?;
        let mut outputs = Vec::new();
        let mut truth = Vec::new();
        for (i, m) in members.iter().enumerate() {
            let label = phantom_label(i);
            let d = &dirs[i];
            let synth = m
                .phantom
                .generate(ctx.cfg.run.seed.wrapping_add(i as u64))?;
            let labels: Vec<&str> = synth.labels.iter().map(|l| l.as_str()).collect();
            let particles = d.join("particles.csv");
            write_file(&particles, |w| {
                write_particle_table(
                    w,
                    &ParticleTable::from_tracks(synth.set.tracks(), Some(&labels)),
                )
            })?;
            let (points, tip) =
                m.phantom
                    .face_points(st.face_segment, st.face_z_um, st.face_spacing_um)?;
            let faces = d.join("faces.csv");
            write_file(&faces, |w| write_faces(w, &FaceTable { tip, points }))?;
            let region = d.join("region.toml");
            let spec = toml::to_string(&m.phantom.ligament_spec())
                .map_err(|e| CliError::Numerical(format!("serialize region: {e}")))?;
            write_text(&region, &spec)?;
            ctx.say(format!(
                "synth-stepped: {label} amplification {} with {} particles",
                m.phantom.amplification,
                synth.set.len()
            ));
            truth.push(RegressionPoint {
                label,
                e_lig_j: m.e_true,
                g_c_j_per_m2: m.g_true,
            });
            outputs.extend([particles, faces, region]);
        }
        let truth_path = dir.join(SUITE_TRUTH_FILE);
        write_file(&truth_path, |w| write_regression_points(w, &truth))?;
        outputs.push(truth_path);
        Ok(outputs)
    })?;
    Ok(dirs)
}

// ---------------------------------------------------------------------------
// Imaging

pub fn frame_name(frame: Frame) -> &'static str {
    match frame {
        Frame::Reference => "reference",
        Frame::Deformed => "deformed",
    }
}

/// Scatter and fluorescence stacks of one frame. The deformed frame draws
/// its noise from `seed + 1`.
pub fn render(
    ctx: &Ctx,
    particles: &Path,
    frame: Frame,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), CliError> {
    let f = frame_name(frame);
    let scatter = dir.join(format!("{f}_scatter.cfvol"));
    let fluo = dir.join(format!("{f}_fluorescence.cfvol"));
    ctx.stage(
        &format!("render[{f}]"),
        &dir.display().to_string(),
        &[particles],
        || {
            let set = read_with(particles, read_particle_table)?.to_set()?;
            let seed = match frame {
                Frame::Reference => ctx.cfg.run.seed,
                Frame::Deformed => ctx.cfg.run.seed.wrapping_add(1),
            };
            let im = &ctx.cfg.imaging;
            let stack = render_stack(&set, frame, im.dims_vox, &im.render, None, seed)?;
            stack.scatter.write_raw(&scatter)?;
            stack.fluorescence.write_raw(&fluo)?;
            ctx.say(format!(
                "render: {f} frame {:?} voxels, {} particles clipped -> {}",
                im.dims_vox,
                stack.clipped,
                dir.display()
            ));
            Ok(vec![scatter.clone(), fluo.clone()])
        },
    )?;
    Ok((scatter, fluo))
}

pub fn detect_stage(ctx: &Ctx, volume: &Path, out: &Path) -> Result<(), CliError> {
    let name = format!("detect[{}]", display_path(&ctx.out_dir, out));
    ctx.stage(&name, "", &[volume], || {
        let v = VoxelVolume::read_raw(volume)?;
        let d = detect(&v, &ctx.cfg.imaging.detect)?;
        write_file(out, |w| write_detections(w, &d.blobs))?;
        ctx.say(format!(
            "detect: {} blobs above {:.4}, {} saturated voxels -> {}",
            d.blobs.len(),
            d.threshold,
            d.saturated_voxels,
            out.display()
        ));
        Ok(vec![out.to_path_buf()])
    })?;
    Ok(())
}

pub fn link_stage(
    ctx: &Ctx,
    reference: &Path,
    deformed: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let name = format!("link[{}]", display_path(&ctx.out_dir, out));
    ctx.stage(&name, "", &[reference, deformed], || {
        let r = read_with(reference, read_detections)?;
        let d = read_with(deformed, read_detections)?;
        let res = link(&r, &d, &ctx.cfg.imaging.link)?;
        write_file(out, |w| {
            write_particle_table(w, &ParticleTable::from_tracks(&res.tracks, None))
        })?;
        ctx.say(format!(
            "link: {} tracks, {} reference and {} deformed unmatched -> {}",
            res.tracks.len(),
            res.unmatched_reference.len(),
            res.unmatched_deformed.len(),
            out.display()
        ));
        Ok(vec![out.to_path_buf()])
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Analysis

/// Deformation gradients and their quality report. In strict mode a flagged
/// fraction above the configured limit is recorded as a failure; outputs are
/// written regardless.
pub fn gradient(ctx: &Ctx, tag: &str, particles: &Path, dir: &Path) -> Result<PathBuf, CliError> {
    let defgrad = dir.join("defgrad.csv");
    let quality = dir.join("gradient_quality.json");
    ctx.stage(
        &format!("gradient{tag}"),
        &dir.display().to_string(),
        &[particles],
        || {
            let set = read_with(particles, read_particle_table)?.to_set()?;
            let samples = estimate_def_grad(&set, &ctx.cfg.estimator_config())?;
            write_file(&defgrad, |w| write_defgrad_table(w, &samples))?;
            write_json(&quality, &field_quality_report(&samples))?;
            Ok(vec![defgrad.clone(), quality.clone()])
        },
    )?;
    let samples = read_with(&defgrad, read_defgrad_table)?;
    let report = field_quality_report(&samples);
    let frac = report.invalid_fraction();
    ctx.say(format!(
        "gradient{tag}: {} samples, {} flagged ({:.2}%) -> {}",
        report.total,
        report.flagged_count(),
        100.0 * frac,
        defgrad.display()
    ));
    let limit = ctx.cfg.run.strict_invalid_fraction;
    if frac > limit {
        let msg = format!(
            "{}: flagged fraction {frac:.4} exceeds {limit}",
            display_path(&ctx.out_dir, &defgrad)
        );
        if !ctx.strict {
            eprintln!("warning: {msg}");
        }
        ctx.violations.borrow_mut().push(msg);
    }
    Ok(defgrad)
}

/// Strain-energy density and largest principal stretch, as tables and VTK
/// point clouds in the deformed frame.
pub fn energy(ctx: &Ctx, tag: &str, defgrad: &Path, dir: &Path) -> Result<PathBuf, CliError> {
    let energy = dir.join("energy.csv");
    let lambda = dir.join("lambda_max.csv");
    let energy_vtk = dir.join("energy.vtk");
    let lambda_vtk = dir.join("lambda_max.vtk");
    ctx.stage(
        &format!("energy{tag}"),
        &dir.display().to_string(),
        &[defgrad],
        || {
            let samples = read_with(defgrad, read_defgrad_table)?;
            let w_field = strain_energy_density(&samples, &ctx.cfg.material())?;
            let l_field = max_principal_stretch_field(&samples)?;
            if !w_field.negative_energy_ids.is_empty() {
                eprintln!(
                    "warning: {} particles with negative strain energy",
                    w_field.negative_energy_ids.len()
                );
            }
            write_file(&energy, |w| write_scalar_field(w, &w_field))?;
            write_file(&lambda, |w| write_scalar_field(w, &l_field))?;
            write_file(&energy_vtk, |w| {
                export_point_cloud(w, &w_field, Frame::Deformed).map(drop)
            })?;
            write_file(&lambda_vtk, |w| {
                export_point_cloud(w, &l_field, Frame::Deformed).map(drop)
            })?;
            ctx.say(format!(
                "energy{tag}: {} valid of {} -> {}",
                w_field.valid_count(),
                w_field.records.len(),
                energy.display()
            ));
            Ok(vec![
                energy.clone(),
                lambda.clone(),
                energy_vtk.clone(),
                lambda_vtk.clone(),
            ])
        },
    )?;
    Ok(energy)
}

pub fn read_region(path: &Path) -> Result<RegionSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("read {}: {e}", path.display())))?;
    let spec: RegionSpec = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("region {}: {}", path.display(), e.message())))?;
    spec.validate()?;
    Ok(spec)
}

/// Integrated energy of a region. The region comes from `region_file`, else
/// from the config.
pub fn region_energy_stage(
    ctx: &Ctx,
    tag: &str,
    energy: &Path,
    region_file: Option<&Path>,
    dir: &Path,
) -> Result<PathBuf, CliError> {
    let out = dir.join("region_energy.csv");
    let (spec, inputs): (RegionSpec, Vec<&Path>) = match (region_file, &ctx.cfg.region) {
        (Some(p), _) => (read_region(p)?, vec![energy, p]),
        (None, Some(r)) => (r.clone(), vec![energy]),
        (None, None) => {
            return Err(CliError::Config(
                "no region: pass --region or set [region] in the config".into(),
            ))
        }
    };
    ctx.stage(
        &format!("region-energy{tag}"),
        &dir.display().to_string(),
        &inputs,
        || {
            let field: ScalarField = read_with(energy, read_scalar_field)?;
            let e = region_energy(&field, &spec, &ctx.cfg)?;
            write_file(&out, |w| {
                write_key_values(
                    w,
                    &[
                        ("energy_j", e.energy_j),
                        ("n_particles", e.n_particles as f64),
                        ("n_valid", e.n_valid as f64),
                        ("volume_m3", e.volume_m3),
                        ("coverage", e.coverage),
                    ],
                )
            })?;
            ctx.say(format!(
                "region-energy{tag}: {:e} J over {} particles -> {}",
                e.energy_j,
                e.n_particles,
                out.display()
            ));
            Ok(vec![out.clone()])
        },
    )?;
    Ok(out)
}

pub fn fit_ctod_stage(
    ctx: &Ctx,
    tag: &str,
    label: &str,
    faces: &Path,
    dir: &Path,
) -> Result<PathBuf, CliError> {
    let profile_path = dir.join("ctod.csv");
    let fit_path = dir.join("fit.csv");
    ctx.stage(
        &format!("fit-ctod{tag}"),
        &format!("{}\n{label}", dir.display()),
        &[faces],
        || {
            let table = read_with(faces, read_faces)?;
            let (profile, fit) = fit_faces(&table, label, &ctx.cfg)?;
            write_file(&profile_path, |w| write_ctod_profile(w, &profile))?;
            write_file(&fit_path, |w| {
                write_key_values(
                    w,
                    &[
                        ("g_c_j_per_m2", fit.g_c),
                        ("k_i_pa_sqrt_m", fit.k_i),
                        ("c_sqrt_m", fit.c_sqrt_m),
                        ("r_tip_offset_um", fit.r_tip_offset_um),
                        ("e_eff_pa", fit.e_eff),
                        ("fit_rms_um", fit.fit_rms_um),
                        ("r_min_um", fit.r_range_used_um[0]),
                        ("r_max_um", fit.r_range_used_um[1]),
                        ("n_used", fit.n_used as f64),
                    ],
                )
            })?;
            ctx.say(format!(
                "fit-ctod{tag}: G_c = {} J/m^2 -> {}",
                fit.g_c,
                fit_path.display()
            ));
            Ok(vec![profile_path.clone(), fit_path.clone()])
        },
    )?;
    Ok(fit_path)
}

fn key(map: &BTreeMap<String, f64>, k: &str, path: &Path) -> Result<f64, CliError> {
    map.get(k)
        .copied()
        .ok_or_else(|| CliError::Input(format!("{}: missing quantity `{k}`", path.display())))
}

/// Regression points from run directories holding `region_energy.csv` and
/// `fit.csv`, labeled by directory name.
pub fn collect_points(ctx: &Ctx, runs: &[PathBuf], out: &Path) -> Result<PathBuf, CliError> {
    let mut inputs = Vec::new();
    for d in runs {
        inputs.push(d.join("region_energy.csv"));
        inputs.push(d.join("fit.csv"));
    }
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    ctx.stage("collect-points", &out.display().to_string(), &refs, || {
        let mut points = Vec::new();
        for d in runs {
            let re = d.join("region_energy.csv");
            let fit = d.join("fit.csv");
            let e = read_with(&re, read_key_values)?;
            let g = read_with(&fit, read_key_values)?;
            points.push(RegressionPoint {
                label: d.file_name().map_or_else(
                    || d.display().to_string(),
                    |n| n.to_string_lossy().into_owned(),
                ),
                e_lig_j: key(&e, "energy_j", &re)?,
                g_c_j_per_m2: key(&g, "g_c_j_per_m2", &fit)?,
            });
        }
        write_file(out, |w| write_regression_points(w, &points))?;
        Ok(vec![out.to_path_buf()])
    })?;
    Ok(out.to_path_buf())
}

pub fn regress(ctx: &Ctx, points: &Path, dir: &Path) -> Result<PathBuf, CliError> {
    let summary = dir.join("regression.csv");
    let plot = dir.join("regression_plot.csv");
    ctx.stage("regress", &dir.display().to_string(), &[points], || {
        let pts = read_with(points, read_regression_points)?;
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.e_lig_j, p.g_c_j_per_m2)).collect();
        let fit = regress_gc_vs_elig(&xy)?;
        let mut s = Vec::new();
        let mut p = Vec::new();
        write_regression(&mut s, &mut p, &pts, &fit)?;
        write_text(&summary, &String::from_utf8(s).expect("utf-8 table"))?;
        write_text(&plot, &String::from_utf8(p).expect("utf-8 table"))?;
        ctx.say(format!(
            "regress: G_c = {:e} * E_lig + {} (R^2 = {}) over {} points",
            fit.slope, fit.intercept, fit.r_squared, fit.n_points
        ));
        Ok(vec![summary.clone(), plot.clone()])
    })?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Report

/// `v` with `sig` significant digits as `m × 10^e` (plain when `e` is 0).
pub fn fmt_sci(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{:.*e}", sig.saturating_sub(1), v);
    let (m, e) = s.split_once('e').expect("exponent form");
    match e.parse::<i32>().expect("integer exponent") {
        0 => m.to_string(),
        e => format!("{m} × 10^{e}"),
    }
}

/// `v` with `sig` significant digits in positional notation.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn report(
    ctx: &Ctx,
    regression: &Path,
    points: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let mut inputs = vec![regression];
    inputs.extend(points);
    inputs.extend(truth);
    ctx.stage("report", &out.display().to_string(), &inputs, || {
        let s = read_with(regression, read_key_values)?;
        let slope = key(&s, "slope_per_m2", regression)?;
        let intercept = key(&s, "intercept_j_per_m2", regression)?;
        let r2 = key(&s, "r_squared", regression)?;
        let n = key(&s, "n_points", regression)?;
        let mut md = String::from("# Fracture energy against ligament energy\n\n");
        md.push_str(&format!(
            "G_c = {} m^-2 · E_lig + {} J/m^2\n\n",
            fmt_sci(slope, 3),
            fmt_sig(intercept, 3)
        ));
        md.push_str("| quantity | value |\n|---|---|\n");
        md.push_str(&format!("| slope | {} m^-2 |\n", fmt_sci(slope, 3)));
        md.push_str(&format!("| intercept | {} J/m^2 |\n", fmt_sig(intercept, 3)));
        md.push_str(&format!("| R^2 | {} |\n", fmt_sig(r2, 4)));
        md.push_str(&format!("| points | {n} |\n"));
        if let Some(p) = points {
            let pts = read_with(p, read_regression_points)?;
            let truth_by_label: BTreeMap<String, RegressionPoint> = match truth {
                Some(t) => read_with(t, read_regression_points)?
                    .into_iter()
                    .map(|r| (r.label.clone(), r))
                    .collect(),
                None => BTreeMap::new(),
            };
            md.push_str("\n## Points\n\n");
            if truth_by_label.is_empty() {
                md.push_str("| label | E_lig (J) | G_c (J/m^2) | residual (J/m^2) |\n|---|---|---|---|\n");
            } else {
                md.push_str(
                    "| label | E_lig (J) | G_c (J/m^2) | residual (J/m^2) | true E_lig (J) | true G (J/m^2) |\n|---|---|---|---|---|---|\n",
                );
            }
            for pt in &pts {
                md.push_str(&format!(
                    "| {} | {} | {} | {} |",
                    pt.label,
                    fmt_sci(pt.e_lig_j, 4),
                    fmt_sig(pt.g_c_j_per_m2, 4),
                    fmt_sci(pt.g_c_j_per_m2 - (slope * pt.e_lig_j + intercept), 2)
                ));
                if !truth_by_label.is_empty() {
                    match truth_by_label.get(&pt.label) {
                        Some(t) => md.push_str(&format!(
                            " {} | {} |",
                            fmt_sci(t.e_lig_j, 4),
                            fmt_sig(t.g_c_j_per_m2, 4)
                        )),
                        None => md.push_str(" | |"),
                    }
                }
                md.push('\n');
            }
        }
        write_text(out, &md)?;
        ctx.say(format!("report -> {}", out.display()));
        Ok(vec![out.to_path_buf()])
    })?;
    Ok(out.to_path_buf())
}

// ---------------------------------------------------------------------------
// Full chain

/// Stepped-crack suite end to end: synthesis, per-phantom analysis,
/// regression and report, all through the files of the stages above.
pub fn pipeline(ctx: &Ctx) -> Result<PathBuf, CliError> {
    let root = ctx.out_dir.clone();
    let dirs = synth_stepped(ctx, &root)?;
    for d in &dirs {
        let label = d
            .file_name()
            .expect("phantom dir")
            .to_string_lossy()
            .into_owned();
        let tag = format!("[{label}]");
        let defgrad = gradient(ctx, &tag, &d.join("particles.csv"), d)?;
        let energy = energy(ctx, &tag, &defgrad, d)?;
        let region = d.join("region.toml");
        let region = ctx.cfg.region.is_none().then_some(region.as_path());
        region_energy_stage(ctx, &tag, &energy, region, d)?;
        fit_ctod_stage(ctx, &tag, &label, &d.join("faces.csv"), d)?;
    }
    let points = collect_points(ctx, &dirs, &root.join("points.csv"))?;
    let summary = regress(ctx, &points, &root)?;
    report(
        ctx,
        &summary,
        Some(&points),
        Some(&root.join(SUITE_TRUTH_FILE)),
        &root.join("report.md"),
    )
}
