use crackfield::constitutive::{strain_energy_density, MaterialModel};
use crackfield::fracture::{extract_ctod_from_surface, fit_ctod, CtodExtraction};
use crackfield::kinematics::{estimate_def_grad, EstimatorConfig};
use crackfield::stats::median;
use crackfield::synth::{gen_lefm_mode1, LefmFieldSpec};
use crackfield::{Aabb, Vec3};

const MU: f64 = 35_000.0;

fn count(bounds: &Aabb, spacing: f64) -> usize {
    (bounds.volume() / spacing.powi(3)).round() as usize
}

#[test]
fn ctod_and_energy_along_ray() {
    let tip = Vec3::new(0.0, 0.0, 0.0);
    let bounds = Aabb::new(
        Vec3::new(-650.0, -200.0, -20.0),
        Vec3::new(150.0, 600.0, 20.0),
    );
    let spec = LefmFieldSpec::for_energy_release_rate(10.0, MU, tip);
    let s = gen_lefm_mode1(count(&bounds, 8.0), bounds, spec, 42).unwrap();
    let mat = MaterialModel::new(MU);

    let tip_mid = Vec3::new(tip.x, tip.y, 0.0);
    let prof = extract_ctod_from_surface(&s.faces, tip_mid, &CtodExtraction::default()).unwrap();
    let fit = fit_ctod(&prof, &mat, [100.0, 600.0]).unwrap();
    assert!((fit.g_c / s.g_analytic - 1.0).abs() < 0.01);

    let samples = estimate_def_grad(&s.set, &EstimatorConfig::default()).unwrap();
    let w = strain_energy_density(&samples, &mat).unwrap();
    let mut rel = Vec::new();
    for rec in w.records.iter().filter(|r| r.valid) {
        let p = rec.reference;
        let (x1, x2) = s.field.local(p);
        if x1.abs() < 8.0 && (100.0..=500.0).contains(&x2) {
            let want = mat.energy_density(&s.field.deformation_gradient(p));
            rel.push((rec.value / want - 1.0).abs());
        }
    }
    let med = median(&rel).unwrap();
    assert!(rel.len() > 100);
    assert!(med < 0.05, "{med}");
}

#[test]
fn gradient_error_shrinks_with_density() {
    let tip = Vec3::ZERO;
    let bounds = Aabb::new(
        Vec3::new(-400.0, -400.0, -15.0),
        Vec3::new(400.0, 400.0, 15.0),
    );
    let spec = LefmFieldSpec::for_energy_release_rate(10.0, MU, tip);
    let base = 4000usize;
    let mut prev = f64::INFINITY;
    for d in 0..4 {
        let s = gen_lefm_mode1(base << d, bounds, spec, 7).unwrap();
        let samples = estimate_def_grad(&s.set, &EstimatorConfig::default()).unwrap();
        let errs: Vec<f64> = samples
            .iter()
            .filter(|x| x.is_valid())
            .filter(|x| {
                let (x1, x2) = s.field.local(x.reference);
                let r = x1.hypot(x2);
                (100.0..=300.0).contains(&r) && x2.atan2(x1).abs() < 2.5
            })
            .map(|x| (x.f - s.field.deformation_gradient(x.reference)).max_abs())
            .collect();
        let med = median(&errs).unwrap();
        assert!(med < prev);
        prev = med;
    }
}
