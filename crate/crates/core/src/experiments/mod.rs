//! Pipeline stages and the full study: direct application, transfer
//! learning and CycleGAN translation scored on one spaceborne test split.
//!
//! Artifacts live under `<out>/<config hash>/`, so runs with different
//! configurations never share files.

pub mod diffmap;
pub mod report;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{
    evaluate_on, fine_tune, fraction_sweep, unfreeze_sweep, FineTuneConfig, FractionSweep,
    FreezePlan, TargetData, UnfreezeSweep,
};
use crate::classifier::{build_model, train, ModelCheckpoint};
use crate::config::RunConfig;
use crate::curation::{balance, reject_cloudy, split, split_counts};
use crate::data::TileSet;
use crate::error::{Error, Result};
use crate::manifest::{load_tile, DatasetManifest};
use crate::metrics::EvalResult;
use crate::normalization::{compute_instr_max, summary_csv, summary_stats, NormStats};
use crate::rng::sub_seed;
use crate::synthkit::{make_dataset, Tile};
use crate::translation::{cyclegan_train, translate, CycleGanCheckpoint, Direction, Judges, Pools};
use crate::types::{Domain, Label, Split};

pub use diffmap::{difference_map, DifferenceMap};
pub use report::{run_baseline_matrix, BaselineMatrix};

/// File layout of one run.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(out: &Path, cfg: &RunConfig) -> Layout {
        Layout {
            root: out.join(cfg.hash()),
        }
    }

    pub fn data_dir(&self, d: Domain) -> PathBuf {
        self.root.join("data").join(d.as_str())
    }
    pub fn raw_manifest(&self, d: Domain) -> PathBuf {
        self.data_dir(d).join("manifest.tsv")
    }
    pub fn curated_manifest(&self, d: Domain) -> PathBuf {
        self.data_dir(d).join("curated.tsv")
    }
    pub fn stats(&self, d: Domain) -> PathBuf {
        self.root.join("stats").join(format!("{}.json", d))
    }
    pub fn model(&self, d: Domain) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", d))
    }
    pub fn finetuned(&self) -> PathBuf {
        self.root.join("models").join("finetuned.ckpt")
    }
    pub fn cyclegan(&self) -> PathBuf {
        self.root.join("models").join("cyclegan.ckpt")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }
    pub fn summary(&self) -> PathBuf {
        self.report("summary.json")
    }
    pub fn log(&self) -> PathBuf {
        self.root.join("run.log")
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Exclusive hold on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(out: &Path) -> Result<RunLock> {
        ensure_dir(out)?;
        let path = out.join(".plumeshift.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is locked by another run; remove {} if no run is active",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Appends one line to the run log. Lines carry the config hash and the
/// seeds of the stage, and nothing time-dependent.
fn log_stage(cfg: &RunConfig, layout: &Layout, stage: &str, detail: &str) -> Result<()> {
    ensure_dir(&layout.root)?;
    let path = layout.log();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(
        f,
        "stage={} config_hash={} master_seed={} {}",
        stage,
        cfg.hash(),
        cfg.master_seed,
        detail
    )
    .map_err(|e| Error::io(&path, e))?;
    log::info!("{}: {}", stage, detail);
    Ok(())
}

/// Writes the resolved configuration next to the artifacts.
pub fn write_config(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    write(&layout.root.join("config.toml"), cfg.to_toml())
}

pub fn stage_synth(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    write_config(cfg, layout)?;
    for d in Domain::ALL {
        let gen = cfg.gen_config(d);
        let m = make_dataset(&gen, &layout.data_dir(d))?;
        log_stage(cfg, layout, "synth", &format!("domain={} tiles={} seed={}", d, m.len(), gen.seed))?;
    }
    Ok(())
}

pub fn stage_curate(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let c = &cfg.curation;
    for d in Domain::ALL {
        let raw = DatasetManifest::read(&layout.raw_manifest(d))?;
        let kept = reject_cloudy(&raw, c.cloud_threshold)?;
        let seed = sub_seed(cfg.master_seed, &format!("split-{}", d));
        let r = c.split_ratios;
        let m = split(&kept, (r[0], r[1], r[2]), c.stratify_by_region, seed)?;
        m.write(&layout.curated_manifest(d))?;
        let counts: Vec<String> = split_counts(&m).iter().map(|(s, n)| format!("{}={}", s, n)).collect();
        log_stage(cfg, layout, "curate", &format!("domain={} seed={} {}", d, seed, counts.join(" ")))?;
    }
    Ok(())
}

pub fn stage_stats(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let mut summaries = Vec::new();
    ensure_dir(&layout.root.join("stats"))?;
    for d in Domain::ALL {
        let m = DatasetManifest::read(&layout.curated_manifest(d))?;
        let dir = layout.data_dir(d);
        let stats = compute_instr_max(&dir, &m)?;
        stats.write(&layout.stats(d))?;
        let splits = &cfg.normalization.summary_splits;
        let pooled = m.filter(|r| r.split.is_some_and(|s| splits.contains(&s)));
        summaries.push((d, summary_stats(&dir, &pooled)?));
        log_stage(cfg, layout, "stats", &format!("domain={} instr_max={}", d, stats.instr_max))?;
    }
    let cols: Vec<(&str, &NormStats)> = summaries.iter().map(|(d, s)| (d.as_str(), s)).collect();
    write(&layout.root.join("stats").join("summary.csv"), summary_csv(&cols))
}

/// Normalized splits of one instrument.
pub struct DomainData {
    pub manifest: DatasetManifest,
    pub norm: NormStats,
    pub train: TileSet,
    pub val: TileSet,
    pub test: TileSet,
}

pub fn load_domain(layout: &Layout, d: Domain) -> Result<DomainData> {
    let manifest = DatasetManifest::read(&layout.curated_manifest(d))?;
    let norm = NormStats::read(&layout.stats(d))?;
    if norm.instrument != d {
        return Err(Error::Config(format!(
            "{} holds {} statistics",
            layout.stats(d).display(),
            norm.instrument
        )));
    }
    let dir = layout.data_dir(d);
    let part = |s: Split| TileSet::load(&dir, &manifest.filter(|r| r.split == Some(s)), &norm);
    Ok(DomainData {
        train: part(Split::Train)?,
        val: part(Split::Val)?,
        test: part(Split::Test)?,
        manifest,
        norm,
    })
}

pub fn stage_train(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    for d in Domain::ALL {
        let data = load_domain(layout, d)?;
        let ccfg = crate::classifier::ClassifierConfig {
            seed: sub_seed(cfg.master_seed, &format!("classifier-{}", d)),
            ..cfg.classifier.clone()
        };
        let init_seed = sub_seed(cfg.master_seed, &format!("init-{}", d));
        let model = build_model(&ccfg.arch(), init_seed)?;
        let out = train(&model, &data.train, &data.val, &ccfg)?;
        let ck = ModelCheckpoint {
            model: out.model,
            optimizer: Some(out.optimizer),
            epoch: out.best_epoch,
            history: out.history,
            config_hash: cfg.hash(),
            domain: d,
            norm: data.norm.clone(),
            lineage: None,
        };
        ensure_dir(&layout.root.join("models"))?;
        ck.save(&layout.model(d))?;
        log_stage(
            cfg,
            layout,
            "train",
            &format!("domain={} seed={} init_seed={} best_epoch={}", d, ccfg.seed, init_seed, ck.epoch),
        )?;
    }
    Ok(())
}

fn fine_tune_cfg(cfg: &RunConfig) -> FineTuneConfig {
    FineTuneConfig {
        seed: sub_seed(cfg.master_seed, "finetune"),
        ..cfg.adaptation.fine_tune.clone()
    }
}

pub fn stage_finetune(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let source = ModelCheckpoint::load(&layout.model(Domain::Airborne))?;
    let space = load_domain(layout, Domain::Spaceborne)?;
    let ft = fine_tune_cfg(cfg);
    let plan = FreezePlan::new(cfg.adaptation.n_unfrozen_blocks);
    let ck = fine_tune(&source, &space.train, &space.val, &space.norm, plan, &ft)?;
    ensure_dir(&layout.root.join("models"))?;
    ck.save(&layout.finetuned())?;
    log_stage(
        cfg,
        layout,
        "finetune",
        &format!("seed={} n_unfrozen_blocks={} best_epoch={}", ft.seed, plan.n_unfrozen_blocks, ck.epoch),
    )?;
    let target = TargetData {
        train: &space.train,
        val: &space.val,
        test: &space.test,
        norm: &space.norm,
    };
    if cfg.adaptation.unfreeze_sweep {
        let sweep = unfreeze_sweep(&source, &target, &ft, &[])?;
        write_json(&layout.report("unfreeze_sweep.json"), &sweep)?;
        log_stage(cfg, layout, "finetune", &format!("unfreeze_sweep points={}", sweep.points.len()))?;
    }
    if !cfg.adaptation.fractions.is_empty() {
        let sweep = fraction_sweep(&source, &target, &ft, plan, &cfg.adaptation.fractions, cfg.adaptation.repeats)?;
        write_json(&layout.report("fraction_sweep.json"), &sweep)?;
        log_stage(
            cfg,
            layout,
            "finetune",
            &format!("fraction_sweep fractions={} repeats={}", sweep.points.len(), cfg.adaptation.repeats),
        )?;
    }
    Ok(())
}

fn balanced(layout: &Layout, data: &DomainData, d: Domain, seed: u64) -> Result<TileSet> {
    let m = balance(&data.manifest, Split::Train, seed)?;
    TileSet::load(&layout.data_dir(d), &m, &data.norm)
}

pub fn stage_cyclegan(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let air_model = ModelCheckpoint::load(&layout.model(Domain::Airborne))?;
    let space_model = ModelCheckpoint::load(&layout.model(Domain::Spaceborne))?;
    let air = load_domain(layout, Domain::Airborne)?;
    let space = load_domain(layout, Domain::Spaceborne)?;
    let seeds = (
        sub_seed(cfg.master_seed, "balance-airborne"),
        sub_seed(cfg.master_seed, "balance-spaceborne"),
    );
    let pool_a = balanced(layout, &air, Domain::Airborne, seeds.0)?;
    let pool_s = balanced(layout, &space, Domain::Spaceborne, seeds.1)?;
    let gcfg = crate::translation::CycleGanConfig {
        seed: sub_seed(cfg.master_seed, "cyclegan"),
        ..cfg.cyclegan.clone()
    };
    let pools = Pools {
        train_airborne: &pool_a,
        train_spaceborne: &pool_s,
        test_airborne: &air.test,
        test_spaceborne: &space.test,
    };
    let judges = Judges {
        airborne: &air_model.model,
        spaceborne: &space_model.model,
    };
    let ck = cyclegan_train(&gcfg, &pools, &judges, &air.norm, &space.norm)?;
    ensure_dir(&layout.root.join("models"))?;
    ck.save(&layout.cyclegan())?;
    log_stage(
        cfg,
        layout,
        "cyclegan",
        &format!(
            "seed={} balance_seeds={},{} pool_airborne={} pool_spaceborne={}",
            gcfg.seed,
            seeds.0,
            seeds.1,
            pool_a.len(),
            pool_s.len()
        ),
    )
}

pub fn stage_eval(cfg: &RunConfig, layout: &Layout) -> Result<BaselineMatrix> {
    let air_model = ModelCheckpoint::load(&layout.model(Domain::Airborne))?;
    let space_model = ModelCheckpoint::load(&layout.model(Domain::Spaceborne))?;
    let air = load_domain(layout, Domain::Airborne)?;
    let space = load_domain(layout, Domain::Spaceborne)?;
    let matrix = run_baseline_matrix(
        &[("airborne", &air_model), ("spaceborne", &space_model)],
        &[("airborne_test", &air.test), ("spaceborne_test", &space.test)],
    )?;
    write(&layout.report("baseline_matrix.csv"), matrix.to_csv())?;
    write_json(&layout.report("baseline_matrix.json"), &matrix)?;
    log_stage(
        cfg,
        layout,
        "eval",
        &format!("diagonal_dominant_rows={}/{}", matrix.diagonal_dominance(), matrix.rows.len()),
    )?;
    Ok(matrix)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Airborne classifier applied to spaceborne tiles as they are.
    DirectAirborneOnSpaceborne,
    SpaceborneOnly,
    FineTuned,
    /// Airborne classifier on spaceborne tiles translated by `G_a`.
    CycleganTranslated,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::DirectAirborneOnSpaceborne,
        Approach::SpaceborneOnly,
        Approach::FineTuned,
        Approach::CycleganTranslated,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproachResult {
    pub approach: Approach,
    pub eval: EvalResult,
}

/// The four-way comparison, all scored on the same spaceborne test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub master_seed: u64,
    pub test_tiles: usize,
    pub test_positives: usize,
    pub n_unfrozen_blocks: usize,
    pub approaches: Vec<ApproachResult>,
}

impl Summary {
    pub fn f1(&self, a: Approach) -> f64 {
        self.approaches
            .iter()
            .find(|r| r.approach == a)
            .map_or(f64::NAN, |r| r.eval.plume.f1)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "approach", "plume_precision", "plume_recall", "plume_f1", "background_precision",
            "background_recall", "background_f1", "tp", "fp", "fn", "tn",
        ])
        .expect("in-memory csv");
        for r in &self.approaches {
            let e = &r.eval;
            let name = serde_json::to_value(r.approach).expect("enum serialises");
            w.write_record([
                name.as_str().unwrap_or_default().to_string(),
                report::fmt(e.plume.precision),
                report::fmt(e.plume.recall),
                report::fmt(e.plume.f1),
                report::fmt(e.background.precision),
                report::fmt(e.background.recall),
                report::fmt(e.background.f1),
                e.tp.to_string(),
                e.fp.to_string(),
                e.fn_.to_string(),
                e.tn.to_string(),
            ])
            .expect("in-memory csv");
        }
        report::into_string(w)
    }
}

/// Scores the four approaches on the spaceborne test split.
pub fn four_way(
    cfg: &RunConfig,
    space_test: &TileSet,
    airborne: &ModelCheckpoint,
    spaceborne: &ModelCheckpoint,
    finetuned: &ModelCheckpoint,
    cyclegan: &CycleGanCheckpoint,
) -> Result<Summary> {
    let translated = translate(cyclegan, space_test, Direction::SpaceToAir)?;
    let results = [
        evaluate_on(&airborne.model, space_test)?,
        evaluate_on(&spaceborne.model, space_test)?,
        evaluate_on(&finetuned.model, space_test)?,
        evaluate_on(&airborne.model, &translated)?,
    ];
    Ok(Summary {
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        test_tiles: space_test.len(),
        test_positives: space_test.positives(),
        n_unfrozen_blocks: finetuned.lineage.as_ref().map_or(0, |l| l.n_unfrozen_blocks),
        approaches: Approach::ALL
            .iter()
            .zip(results)
            .map(|(&approach, eval)| ApproachResult { approach, eval })
            .collect(),
    })
}

fn denormalized(set: &TileSet, i: usize, template: &Tile) -> Tile {
    Tile {
        grid: set.images[i].iter().map(|&v| (v * set.instr_max) as f32).collect(),
        domain: set.domain,
        normalized: false,
        ..template.clone()
    }
}

/// Difference maps for the first plume and background test tiles (by
/// tile id), written as PNGs plus an index CSV.
fn gallery(cfg: &RunConfig, layout: &Layout, space: &DomainData, ck: &CycleGanCheckpoint) -> Result<usize> {
    let e = &cfg.experiments;
    let dir = layout.report("difference_maps");
    ensure_dir(&dir)?;
    let mut recs: Vec<_> = space.manifest.in_split(Split::Test).cloned().collect();
    recs.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    let pick = |label: Label, n: usize| recs.iter().filter(move |r| r.label == label).take(n);
    let chosen: Vec<_> = pick(Label::Plume, e.gallery_plume)
        .chain(pick(Label::Background, e.gallery_background))
        .cloned()
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tile_id", "label", "file", "masked_pixels", "mean_difference_ppmm"])
        .expect("in-memory csv");
    for rec in &chosen {
        let source = load_tile(&layout.data_dir(Domain::Spaceborne), rec)?;
        let one = TileSet::from_tiles(std::slice::from_ref(&source), &space.norm)?;
        let trans = translate(ck, &one, Direction::SpaceToAir)?;
        let map = difference_map(&source, &denormalized(&trans, 0, &source), e.display_clip_ppmm)?;
        let file = format!("{}.png", rec.tile_id);
        write(&dir.join(&file), map.to_png())?;
        w.write_record([
            rec.tile_id.clone(),
            rec.label.to_string(),
            file,
            map.masked_count().to_string(),
            map.mean_difference().map_or("".into(), report::fmt),
        ])
        .expect("in-memory csv");
    }
    write(&dir.join("index.csv"), report::into_string(w))?;
    Ok(chosen.len())
}

fn sweep_charts(layout: &Layout, summary: &Summary) -> Result<()> {
    use report::{write_chart, Chart, Series};
    let b = summary.f1(Approach::SpaceborneOnly);
    let a = summary.f1(Approach::DirectAirborneOnSpaceborne);
    let unfreeze = layout.report("unfreeze_sweep.json");
    if unfreeze.exists() {
        let s: UnfreezeSweep = read_json(&unfreeze)?;
        write(&layout.report("unfreeze_sweep.csv"), report::unfreeze_csv(&s))?;
        write_chart(
            &layout.report("unfreeze_sweep.svg"),
            &Chart {
                title: "Fine-tuning by number of unfrozen blocks",
                x_label: "unfrozen blocks (0 = head only)",
                y_label: "plume F1",
                series: vec![Series {
                    name: "fine-tuned".into(),
                    points: s.points.iter().map(|p| (p.n_unfrozen_blocks as f64, p.test.plume.f1)).collect(),
                    spread: None,
                }],
                references: vec![("spaceborne only".into(), b), ("zero-shot".into(), s.zero_shot.plume.f1)],
            },
        )?;
    }
    let fraction = layout.report("fraction_sweep.json");
    if fraction.exists() {
        let s: FractionSweep = read_json(&fraction)?;
        write(&layout.report("fraction_sweep.csv"), report::fraction_csv(&s))?;
        let kept: Vec<_> = s.points.iter().filter(|p| !p.runs.is_empty()).collect();
        write_chart(
            &layout.report("fraction_sweep.svg"),
            &Chart {
                title: "Fine-tuning by fraction of spaceborne training data",
                x_label: "fraction of training tiles",
                y_label: "plume F1",
                series: vec![Series {
                    name: "mean over repeats".into(),
                    points: kept.iter().map(|p| (p.fraction, p.mean_f1())).collect(),
                    spread: Some(kept.iter().map(|p| (p.min_f1(), p.max_f1())).collect()),
                }],
                references: vec![("spaceborne only".into(), b), ("zero-shot".into(), a)],
            },
        )?;
    }
    Ok(())
}

fn tracking_charts(layout: &Layout, ck: &CycleGanCheckpoint, summary: &Summary) -> Result<()> {
    use report::{write_chart, Chart, Series};
    write(&layout.report("cyclegan_tracking.csv"), report::tracking_csv(&ck.tracking))?;
    write(&layout.report("cyclegan_losses.csv"), report::losses_csv(&ck.losses))?;
    let t0 = &ck.tracking[0];
    write_chart(
        &layout.report("tracking_air_to_space.svg"),
        &Chart {
            title: "Spaceborne classifier on translated airborne test tiles",
            x_label: "epoch",
            y_label: "plume F1",
            series: vec![Series {
                name: "G_s(airborne)".into(),
                points: ck.tracking.iter().map(|r| (r.epoch as f64, r.air_to_space.plume.f1)).collect(),
                spread: None,
            }],
            references: vec![("direct application".into(), t0.air_to_space.plume.f1)],
        },
    )?;
    write_chart(
        &layout.report("tracking_space_to_air.svg"),
        &Chart {
            title: "Airborne classifier on translated spaceborne test tiles",
            x_label: "epoch",
            y_label: "plume F1",
            series: vec![Series {
                name: "G_a(spaceborne)".into(),
                points: ck.tracking.iter().map(|r| (r.epoch as f64, r.space_to_air.plume.f1)).collect(),
                spread: None,
            }],
            references: vec![
                ("direct application".into(), t0.space_to_air.plume.f1),
                ("fine-tuned".into(), summary.f1(Approach::FineTuned)),
            ],
        },
    )
}

/// Builds the report bundle from the stored checkpoints.
pub fn stage_report(cfg: &RunConfig, layout: &Layout) -> Result<Summary> {
    let cyclegan = CycleGanCheckpoint::load(&layout.cyclegan())?;
    let finetuned = ModelCheckpoint::load(&layout.finetuned())?;
    let airborne = ModelCheckpoint::load(&layout.model(Domain::Airborne))?;
    let spaceborne = ModelCheckpoint::load(&layout.model(Domain::Spaceborne))?;
    let space = load_domain(layout, Domain::Spaceborne)?;
    let summary = four_way(cfg, &space.test, &airborne, &spaceborne, &finetuned, &cyclegan)?;
    write(&layout.summary(), summary.to_json())?;
    write(&layout.report("summary.csv"), summary.to_csv())?;
    stage_eval(cfg, layout)?;
    sweep_charts(layout, &summary)?;
    tracking_charts(layout, &cyclegan, &summary)?;
    let n = gallery(cfg, layout, &space, &cyclegan)?;
    let f1s: Vec<String> = Approach::ALL.iter().map(|&a| format!("{:.4}", summary.f1(a))).collect();
    log_stage(cfg, layout, "report", &format!("gallery={} f1_abcd={}", n, f1s.join(",")))?;
    Ok(summary)
}

pub const STAGES: [&str; 8] = ["synth", "curate", "stats", "train", "finetune", "cyclegan", "eval", "report"];

/// Runs every stage in order. A failure names its stage; artifacts of
/// earlier stages stay on disk.
pub fn run_full_study(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    let layout = Layout::new(out, cfg);
    if layout.log().exists() {
        fs::remove_file(layout.log()).map_err(|e| Error::io(layout.log(), e))?;
    }
    stage_synth(cfg, &layout).map_err(|e| e.in_stage("synth"))?;
    stage_curate(cfg, &layout).map_err(|e| e.in_stage("curate"))?;
    stage_stats(cfg, &layout).map_err(|e| e.in_stage("stats"))?;
    stage_train(cfg, &layout).map_err(|e| e.in_stage("train"))?;
    stage_finetune(cfg, &layout).map_err(|e| e.in_stage("finetune"))?;
    stage_cyclegan(cfg, &layout).map_err(|e| e.in_stage("cyclegan"))?;
    stage_report(cfg, &layout).map_err(|e| e.in_stage("report"))
}

/// Opens `path` for reading, reporting a missing file as a missing artifact.
pub fn open_artifact(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}
