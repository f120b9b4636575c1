//! Law of the reduced, simulated and frame-inverted process against the
//! Riccati transform of the original parameters.

use std::path::Path;

use affine_path::params::load;
use affine_path::riccati::RiccatiOptions;
use affine_path::simulate::{SimConfig, Simulator};
use affine_path::verify::{compare_cf, default_u_grid, mc_cf, moment_check, predict_cf, McOptions};

fn params(name: &str) -> affine_path::params::AdmissibleParamSet {
    load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("params").join(name)).unwrap()
}

#[test]
fn reduced_pipeline_matches_original_transform() {
    let p = params("reducible.toml");
    let x0 = vec![0.5, 0.2];
    let sim = Simulator::new(&p, SimConfig::new(x0.clone(), 1.0)).unwrap();
    assert!(sim.plan().is_some());
    let us = default_u_grid(&p);
    let times = [0.5, 1.0];
    let opts = McOptions::new(2000, 3);
    let est = mc_cf(&sim, &us, &times, &opts).unwrap();
    let pred = predict_cf(&p, &x0, &us, &times, &RiccatiOptions::default()).unwrap();
    let report = compare_cf(&est, &pred, 3.0).unwrap();
    assert!(report.pass, "{report}");
    for pt in &report.points {
        assert!((pt.estimate - pt.prediction).norm() < 0.1, "{report}");
    }
}

#[test]
fn reduced_pipeline_first_moments() {
    let p = params("reducible.toml");
    let sim = Simulator::new(&p, SimConfig::new(vec![0.5, 0.2], 1.0)).unwrap();
    let report = moment_check(&sim, &[0.5, 1.0], &McOptions::new(1000, 4)).unwrap();
    assert!(report.pass, "{report}");
}

#[test]
fn heston_first_moments() {
    let p = params("heston.toml");
    let sim = Simulator::new(&p, SimConfig::new(vec![1.0, 0.0], 1.0)).unwrap();
    let report = moment_check(&sim, &[0.25, 1.0], &McOptions::new(4000, 5)).unwrap();
    assert!(report.pass, "{report}");
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let p = params("jump_cir.toml");
    let sim = Simulator::new(&p, SimConfig::new(vec![1.0], 0.5)).unwrap();
    let us = default_u_grid(&p);
    let one = McOptions { workers: 1, ..McOptions::new(200, 9) };
    let three = McOptions { workers: 3, ..McOptions::new(200, 9) };
    let a = mc_cf(&sim, &us, &[0.5], &one).unwrap();
    let b = mc_cf(&sim, &us, &[0.5], &three).unwrap();
    assert_eq!(a, b);
}
