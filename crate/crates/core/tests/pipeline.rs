//! Stage contracts on a miniature configuration.

use std::fs;

use plumeshift::config::RunConfig;
use plumeshift::experiments::{self as ex, Approach, Layout, RunLock};
use plumeshift::normalization::NormStats;
use plumeshift::translation::{DiscArch, GenArch};
use plumeshift::{Domain, Error};

fn tiny() -> RunConfig {
    let mut c = RunConfig::default();
    c.synth.extent_px = 32;
    c.synth.tiles_per_region = 2;
    for d in [&mut c.synth.airborne, &mut c.synth.spaceborne] {
        d.n_plume = 30;
        d.n_background = 40;
    }
    c.classifier.epochs = 2;
    c.classifier.width_scale = 0.5;
    c.adaptation.fine_tune.epochs = 1;
    c.adaptation.unfreeze_sweep = true;
    c.adaptation.fractions = vec![0.0, 0.5];
    c.adaptation.repeats = 1;
    c.cyclegan.epochs = 1;
    c.cyclegan.steps_per_epoch = Some(2);
    c.cyclegan.generator = GenArch { channels: 2, res_blocks: 1 };
    c.cyclegan.discriminator = DiscArch { channels: 2, leaky_slope: 0.2 };
    c.experiments.gallery_plume = 1;
    c.experiments.gallery_background = 1;
    c
}

#[test]
fn synth_curate_stats_write_norm_stats_for_both_domains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let l = Layout::new(dir.path(), &cfg);
    ex::stage_synth(&cfg, &l).unwrap();
    ex::stage_curate(&cfg, &l).unwrap();
    ex::stage_stats(&cfg, &l).unwrap();
    for d in Domain::ALL {
        let s = NormStats::read(&l.stats(d)).unwrap();
        assert_eq!(s.instrument, d);
        assert!(s.instr_max > 0.0);
    }
    assert!(l.root.join("stats/summary.csv").exists());
    assert!(l.root.ends_with(cfg.hash()));
}

#[test]
fn report_without_cyclegan_names_the_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let l = Layout::new(dir.path(), &cfg);
    let err = ex::stage_report(&cfg, &l).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact(ref p) if p.ends_with("cyclegan.ckpt")), "{}", err);
    assert_eq!(err.exit_code(), 2);
    assert_eq!(err.category(), "missing-artifact");
}

#[test]
fn curate_before_synth_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let err = ex::stage_curate(&cfg, &Layout::new(dir.path(), &cfg)).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{}", err);
    assert!(err.to_string().contains("manifest.tsv"));
}

#[test]
fn full_tiny_study_is_reproducible_and_complete() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s1 = ex::run_full_study(&cfg, a.path()).unwrap();
    let s2 = ex::run_full_study(&cfg, b.path()).unwrap();
    assert_eq!(s1, s2);
    let la = Layout::new(a.path(), &cfg);
    let lb = Layout::new(b.path(), &cfg);
    assert_eq!(fs::read(la.summary()).unwrap(), fs::read(lb.summary()).unwrap());
    assert_eq!(s1.approaches.len(), 4);
    assert_eq!(s1.config_hash, cfg.hash());
    for a in Approach::ALL {
        assert!(s1.f1(a).is_finite());
    }
    for f in [
        "summary.csv",
        "baseline_matrix.csv",
        "unfreeze_sweep.csv",
        "unfreeze_sweep.svg",
        "fraction_sweep.csv",
        "fraction_sweep.svg",
        "cyclegan_tracking.csv",
        "cyclegan_losses.csv",
        "tracking_air_to_space.svg",
        "tracking_space_to_air.svg",
        "difference_maps/index.csv",
    ] {
        assert!(la.report(f).exists(), "missing {}", f);
    }
    let pngs = fs::read_dir(la.report("difference_maps"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 2);
    let log = fs::read_to_string(la.log()).unwrap();
    for stage in ["synth", "curate", "stats", "train", "finetune", "cyclegan", "report"] {
        assert!(log.contains(&format!("stage={} config_hash={}", stage, cfg.hash())), "{}", stage);
    }
    assert!(log.contains("seed="));
    // Rerunning into the same directory replaces rather than appends the log.
    ex::run_full_study(&cfg, a.path()).unwrap();
    assert_eq!(fs::read_to_string(la.log()).unwrap(), log);
}

#[test]
fn seed_changes_the_artifact_directory() {
    let a = tiny();
    let mut b = tiny();
    b.master_seed = 99;
    let root = std::path::Path::new("out");
    assert_ne!(Layout::new(root, &a).root, Layout::new(root, &b).root);
    assert_ne!(a.gen_config(Domain::Airborne).seed, b.gen_config(Domain::Airborne).seed);
}

#[test]
fn stage_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    // Every spaceborne scene is cloudy enough to be rejected.
    cfg.synth.spaceborne.profile.cloudy_prob = 1.0;
    cfg.synth.spaceborne.profile.cloud_fraction = plumeshift::synthkit::Range(0.5, 0.9);
    let err = ex::run_full_study(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().starts_with("stage curate failed"), "{}", err);
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn output_lock_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let first = RunLock::acquire(dir.path()).unwrap();
    let err = RunLock::acquire(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Usage(ref m) if m.contains("locked")));
    drop(first);
    RunLock::acquire(dir.path()).unwrap();
}
