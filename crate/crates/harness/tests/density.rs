//! Small density2d runs through the library: output files, checkpoints and
//! metric sanity.

use std::fs;

use meco_core::RngStream;
use meco_harness::config::{ExperimentConfig, ExperimentKind, SamplerKind};
use meco_harness::density2d::{
    bandwidth, build_model, generate_samples, init_params, run_density2d, score, write_density2d,
};
use meco_harness::io::read_checkpoint;
use meco_harness::{dataset, Split};

fn tiny(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Density2d);
    cfg.seeds = vec![0];
    cfg.budget.max_steps = Some(5);
    cfg.budget.wall_secs = None;
    cfg.dataset.n = 500;
    cfg.dataset.n_test = 500;
    cfg.eval.n_samples = 500;
    cfg.eval.sampler = SamplerKind::Grid;
    cfg.methods.retain(|m| m.label() == "meco" || m.label() == "nce_sgd");
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn outputs_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let report = run_density2d(&cfg).unwrap();
    write_density2d(&cfg, &report).unwrap();
    let hash = cfg.hash();
    for c in &report.cells {
        let name = &c.summary.cell;
        let grid = fs::read_to_string(dir.path().join(format!("grid_{name}.csv"))).unwrap();
        let lines: Vec<&str> = grid.lines().collect();
        assert_eq!(lines[0], format!("# config_hash={hash}"));
        assert_eq!(lines[1], "x,y,log_p0");
        assert_eq!(lines.len(), 2 + 200 * 200);

        let samples = fs::read_to_string(dir.path().join(format!("samples_{name}.csv"))).unwrap();
        assert_eq!(samples.lines().count(), 2 + 500);

        let ck = read_checkpoint(&dir.path().join(format!("ckpt_{name}.bin"))).unwrap();
        assert_eq!(ck.config_hash, hash);
        assert_eq!(ck.params, c.theta);
        assert_eq!(ck.extra["alpha"].as_f64().unwrap(), c.alpha);
        assert_eq!(ck.extra["steps"].as_u64().unwrap(), 5);
        assert!(c.summary.mmd2.unwrap() >= 0.0 && c.summary.frechet2.unwrap() >= 0.0);
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.methods.truncate(1);
    cfg.eval.write_grid = false;
    write_density2d(&cfg, &run_density2d(&cfg).unwrap()).unwrap();
    let p = dir.path().join("ckpt_8gaussians_meco_s0.bin");
    let mut bytes = fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&p, bytes).unwrap();
    assert!(read_checkpoint(&p).is_err());
}

/// An untrained network scores clearly worse than a second sample from the
/// data distribution itself.
#[test]
fn untrained_model_is_far_from_the_data() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Density2d);
    cfg.eval.n_samples = 2000;
    cfg.eval.sampler = SamplerKind::Grid;
    for name in ["8gaussians", "circles"] {
        cfg.dataset.name = name.into();
        let test = dataset(&cfg, 0, Split::Test).unwrap();
        let train = dataset(&cfg, 0, Split::Train).unwrap();
        let bw = bandwidth(&cfg.eval, &test).unwrap();
        let model = build_model(&cfg, 2);
        let theta = init_params(&model, 0);
        let s = generate_samples(&model, &theta, &cfg.eval, None, &mut RngStream::new(0, 9)).unwrap();
        let untrained = score(&s, &test, &cfg.eval, bw).unwrap().mmd2;
        let idx: Vec<usize> = (0..2000).collect();
        let floor = score(&train.select_rows(&idx), &test, &cfg.eval, bw).unwrap().mmd2;
        assert!(untrained > 10.0 * floor, "{name}: untrained {untrained}, data {floor}");
    }
}
