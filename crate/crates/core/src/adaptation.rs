//! Transfer learning from an airborne checkpoint to the spaceborne domain:
//! block freezing, the unfreeze sweep and the data-fraction sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    block_group, train, Classifier, ClassifierConfig, Lineage, ModelCheckpoint, HEAD_GROUP,
};
use crate::data::TileSet;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult, DECISION_THRESHOLD};
use crate::normalization::NormStats;
use crate::rng::{rng, sub_seed};

/// Which parameters stay trainable: the head plus the deepest
/// `n_unfrozen_blocks` blocks. The head is never frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub n_unfrozen_blocks: usize,
}

impl FreezePlan {
    pub fn new(n_unfrozen_blocks: usize) -> Self {
        FreezePlan { n_unfrozen_blocks }
    }

    /// Block indices (1-based) left trainable for a model with `n_blocks`.
    pub fn unfrozen_blocks(&self, n_blocks: usize) -> std::ops::RangeInclusive<usize> {
        (n_blocks - self.n_unfrozen_blocks + 1)..=n_blocks
    }

    pub fn frozen_groups(&self, n_blocks: usize) -> Vec<String> {
        (1..=n_blocks - self.n_unfrozen_blocks).map(block_group).collect()
    }
}

/// Copy of `model` with frozen blocks marked non-trainable.
pub fn apply_freeze(model: &Classifier, plan: FreezePlan) -> Result<Classifier> {
    let n = model.arch.n_blocks;
    if plan.n_unfrozen_blocks > n {
        return Err(Error::Config(format!(
            "cannot unfreeze {} blocks of a {}-block model",
            plan.n_unfrozen_blocks, n
        )));
    }
    let mut m = model.clone();
    m.params.set_all_trainable(false);
    m.params.set_group_trainable(HEAD_GROUP, true);
    for i in plan.unfrozen_blocks(n) {
        m.params.set_group_trainable(&block_group(i), true);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Overwritten from the master seed when run through the pipeline.
    #[serde(default)]
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Target-domain data for adaptation, normalized with the target
/// instrument's statistics.
pub struct TargetData<'a> {
    pub train: &'a TileSet,
    pub val: &'a TileSet,
    pub test: &'a TileSet,
    pub norm: &'a NormStats,
}

impl TargetData<'_> {
    fn check(&self) -> Result<()> {
        for (what, set) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if set.domain != self.norm.instrument || set.norm_instrument != self.norm.instrument {
                return Err(Error::Config(format!(
                    "target {} set holds {} tiles normalized with {} statistics; expected {} throughout",
                    what, set.domain, set.norm_instrument, self.norm.instrument
                )));
            }
        }
        Ok(())
    }
}

fn check_side(model: &Classifier, set: &TileSet) -> Result<()> {
    let f = model.arch.downsample_factor();
    if !set.is_empty() && set.side < f {
        return Err(Error::Shape(format!(
            "tile side {} is smaller than the classifier's downsampling factor {}",
            set.side, f
        )));
    }
    Ok(())
}

pub fn evaluate_on(model: &Classifier, set: &TileSet) -> Result<EvalResult> {
    evaluate(&model.predict(set)?, &set.labels, DECISION_THRESHOLD)
}

/// Fine-tunes `source` on target data with a fresh Adam state. Frozen
/// blocks are verified bit-identical afterwards.
pub fn fine_tune(
    source: &ModelCheckpoint,
    train_set: &TileSet,
    val: &TileSet,
    target_norm: &NormStats,
    plan: FreezePlan,
    cfg: &FineTuneConfig,
) -> Result<ModelCheckpoint> {
    for set in [train_set, val] {
        if set.domain != target_norm.instrument || set.norm_instrument != target_norm.instrument {
            return Err(Error::Config(format!(
                "fine-tuning data must be {} tiles normalized with {} statistics",
                target_norm.instrument, target_norm.instrument
            )));
        }
        check_side(&source.model, set)?;
    }
    let model = apply_freeze(&source.model, plan)?;
    let arch = &model.arch;
    let frozen = plan.frozen_groups(arch.n_blocks);
    let before: Vec<String> = frozen.iter().map(|g| model.params.group_digest(g)).collect();
    let ccfg = ClassifierConfig {
        n_blocks: arch.n_blocks,
        width_scale: arch.width_scale,
        antialias: arch.antialias,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
    };
    let out = train(&model, train_set, val, &ccfg)?;
    for (g, d) in frozen.iter().zip(&before) {
        if out.model.params.group_digest(g) != *d {
            return Err(Error::Training(format!("frozen group {} changed during fine-tuning", g)));
        }
    }
    Ok(ModelCheckpoint {
        model: out.model,
        optimizer: Some(out.optimizer),
        epoch: out.best_epoch,
        history: out.history,
        config_hash: source.config_hash.clone(),
        domain: target_norm.instrument,
        norm: target_norm.clone(),
        lineage: Some(Lineage {
            source_digest: source.model.params.digest(),
            n_unfrozen_blocks: plan.n_unfrozen_blocks,
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfreezePoint {
    pub n_unfrozen_blocks: usize,
    pub trainable_params: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub test: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfreezeSweep {
    pub zero_shot: EvalResult,
    pub points: Vec<UnfreezePoint>,
}

impl UnfreezeSweep {
    /// Point with the highest test F1 (ties go to fewer unfrozen blocks).
    pub fn best(&self) -> Option<&UnfreezePoint> {
        self.points.iter().fold(None, |best: Option<&UnfreezePoint>, p| match best {
            Some(b) if b.test.plume.f1 >= p.test.plume.f1 => Some(b),
            _ => Some(p),
        })
    }
}

/// Fine-tunes once per `k` in `ks` (all of `0..=n_blocks` when empty).
pub fn unfreeze_sweep(
    source: &ModelCheckpoint,
    target: &TargetData,
    cfg: &FineTuneConfig,
    ks: &[usize],
) -> Result<UnfreezeSweep> {
    target.check()?;
    let n = source.model.arch.n_blocks;
    let ks: Vec<usize> = if ks.is_empty() { (0..=n).collect() } else { ks.to_vec() };
    let points = ks
        .par_iter()
        .map(|&k| {
            let plan = FreezePlan::new(k);
            let ck = fine_tune(source, target.train, target.val, target.norm, plan, cfg)?;
            let best_val_f1 = ck
                .history
                .get(ck.epoch.wrapping_sub(1))
                .map_or(0.0, |h| h.val_f1);
            Ok(UnfreezePoint {
                n_unfrozen_blocks: k,
                trainable_params: apply_freeze(&source.model, plan)?.params.trainable_count(),
                best_epoch: ck.epoch,
                best_val_f1,
                test: evaluate_on(&ck.model, target.test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UnfreezeSweep {
        zero_shot: evaluate_on(&source.model, target.test)?,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionPoint {
    pub fraction: f64,
    /// One result per completed repeat.
    pub runs: Vec<EvalResult>,
    /// Repeats skipped because the subsample held a single class.
    pub skipped: Vec<usize>,
}

impl FractionPoint {
    fn f1s(&self) -> impl Iterator<Item = f64> + '_ {
        self.runs.iter().map(|r| r.plume.f1)
    }

    pub fn mean_f1(&self) -> f64 {
        if self.runs.is_empty() {
            return f64::NAN;
        }
        self.f1s().sum::<f64>() / self.runs.len() as f64
    }

    pub fn min_f1(&self) -> f64 {
        self.f1s().fold(f64::NAN, f64::min)
    }

    pub fn max_f1(&self) -> f64 {
        self.f1s().fold(f64::NAN, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionSweep {
    pub n_unfrozen_blocks: usize,
    pub points: Vec<FractionPoint>,
}

impl FractionSweep {
    pub fn point(&self, fraction: f64) -> Option<&FractionPoint> {
        self.points.iter().find(|p| p.fraction == fraction)
    }
}

pub const DEFAULT_FRACTIONS: [f64; 7] = [0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0];

/// Seed of repeat `r`; repeat 0 uses the plain fine-tuning seed.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        sub_seed(seed, &format!("repeat-{}", r))
    }
}

/// Fine-tunes on class-proportional subsamples of the target training set.
/// Fraction 0 is the untouched source model.
pub fn fraction_sweep(
    source: &ModelCheckpoint,
    target: &TargetData,
    cfg: &FineTuneConfig,
    plan: FreezePlan,
    fractions: &[f64],
    repeats: usize,
) -> Result<FractionSweep> {
    target.check()?;
    if repeats == 0 {
        return Err(Error::Config("fraction sweep needs at least one repeat".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Config(format!("fraction {} outside [0,1]", f)));
    }
    let zero_shot = evaluate_on(&source.model, target.test)?;
    let jobs: Vec<(usize, usize)> = (0..fractions.len())
        .flat_map(|fi| (0..repeats).map(move |r| (fi, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(fi, r)| -> Result<Option<EvalResult>> {
            let fraction = fractions[fi];
            if fraction == 0.0 {
                return Ok(Some(zero_shot.clone()));
            }
            let seed = repeat_seed(cfg.seed, r);
            let idx = target
                .train
                .stratified_fraction(fraction, &mut rng(sub_seed(seed, &format!("fraction-{}", fraction))));
            let subset = target.train.subset(&idx);
            let pos = subset.positives();
            if pos == 0 || pos == subset.len() {
                log::warn!(
                    "fraction {} repeat {} gives a single-class subset of {} tiles; skipped",
                    fraction,
                    r,
                    subset.len()
                );
                return Ok(None);
            }
            let run_cfg = FineTuneConfig { seed, ..cfg.clone() };
            let ck = fine_tune(source, &subset, target.val, target.norm, plan, &run_cfg)?;
            Ok(Some(evaluate_on(&ck.model, target.test)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points: Vec<FractionPoint> = fractions
        .iter()
        .map(|&fraction| FractionPoint {
            fraction,
            runs: Vec::new(),
            skipped: Vec::new(),
        })
        .collect();
    for (&(fi, r), res) in jobs.iter().zip(results) {
        match res {
            Some(e) => points[fi].runs.push(e),
            None => points[fi].skipped.push(r),
        }
    }
    Ok(FractionSweep {
        n_unfrozen_blocks: plan.n_unfrozen_blocks,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{build_model, Arch};
    use crate::types::Domain;
    use rand::Rng;

    fn arch() -> Arch {
        Arch {
            n_blocks: 3,
            width_scale: 0.5,
            antialias: true,
        }
    }

    fn norm() -> NormStats {
        NormStats {
            instrument: Domain::Spaceborne,
            instr_max: 100.0,
            count_pixels: 1,
            mean_ppmm: 1.0,
            max_ppmm: 1.0,
            p95_ppmm: 100.0,
            variance_ppmm: 0.0,
        }
    }

    fn set(n: usize, seed: u64) -> TileSet {
        let mut r = rng(seed);
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        TileSet {
            side: 16,
            domain: Domain::Spaceborne,
            norm_instrument: Domain::Spaceborne,
            instr_max: 100.0,
            ids: (0..n).map(|i| format!("t{}", i)).collect(),
            images: labels
                .iter()
                .map(|&l| (0..256).map(|p| r.random::<f64>() * 0.3 + if l && p % 17 < 6 { 0.6 } else { 0.0 }).collect())
                .collect(),
            labels,
        }
    }

    fn source() -> ModelCheckpoint {
        ModelCheckpoint {
            model: build_model(&arch(), 3).unwrap(),
            optimizer: None,
            epoch: 0,
            history: Vec::new(),
            config_hash: "h".into(),
            domain: Domain::Airborne,
            norm: NormStats { instrument: Domain::Airborne, ..norm() },
            lineage: None,
        }
    }

    fn quick(epochs: usize) -> FineTuneConfig {
        FineTuneConfig {
            epochs,
            learning_rate: 1e-2,
            batch_size: 4,
            seed: 9,
        }
    }

    #[test]
    fn freeze_counts_follow_groups() {
        let m = build_model(&arch(), 1).unwrap();
        let head = m.params.group_count(HEAD_GROUP);
        assert_eq!(apply_freeze(&m, FreezePlan::new(0)).unwrap().params.trainable_count(), head);
        assert_eq!(apply_freeze(&m, FreezePlan::new(3)).unwrap().params.trainable_count(), m.params.count());
        let mut prev = 0;
        for k in 0..=3 {
            let c = apply_freeze(&m, FreezePlan::new(k)).unwrap().params.trainable_count();
            let want: usize = head + (4 - k..=3).map(|i| m.params.group_count(&block_group(i))).sum::<usize>();
            assert_eq!(c, want);
            assert!(c > prev);
            prev = c;
        }
        assert!(matches!(apply_freeze(&m, FreezePlan::new(4)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let src = source();
        let ck = fine_tune(&src, &set(12, 1), &set(6, 2), &norm(), FreezePlan::new(1), &quick(0)).unwrap();
        assert_eq!(ck.model.params.digest(), src.model.params.digest());
        let lineage = ck.lineage.unwrap();
        assert_eq!(lineage.source_digest, src.model.params.digest());
        assert_eq!(lineage.n_unfrozen_blocks, 1);
        assert_eq!(ck.domain, Domain::Spaceborne);
    }

    #[test]
    fn frozen_blocks_stay_bit_identical() {
        let src = source();
        for k in 0..=3 {
            let plan = FreezePlan::new(k);
            let ck = fine_tune(&src, &set(12, 1), &set(6, 2), &norm(), plan, &quick(2)).unwrap();
            for g in plan.frozen_groups(3) {
                assert_eq!(ck.model.params.group_digest(&g), src.model.params.group_digest(&g), "k={} {}", k, g);
            }
            assert_ne!(ck.model.params.group_digest(HEAD_GROUP), src.model.params.group_digest(HEAD_GROUP));
        }
    }

    #[test]
    fn rejects_data_normalized_for_another_instrument() {
        let mut bad = set(12, 1);
        bad.norm_instrument = Domain::Airborne;
        let r = fine_tune(&source(), &bad, &set(6, 2), &norm(), FreezePlan::new(1), &quick(1));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn fraction_endpoints() {
        let src = source();
        let (tr, va, te, n) = (set(12, 1), set(6, 2), set(9, 3), norm());
        let target = TargetData { train: &tr, val: &va, test: &te, norm: &n };
        let cfg = quick(1);
        let plan = FreezePlan::new(1);
        let sweep = fraction_sweep(&src, &target, &cfg, plan, &[0.0, 1.0], 1).unwrap();
        assert_eq!(sweep.points[0].runs[0], evaluate_on(&src.model, &te).unwrap());
        let plain = fine_tune(&src, &tr, &va, &n, plan, &cfg).unwrap();
        assert_eq!(sweep.points[1].runs[0], evaluate_on(&plain.model, &te).unwrap());
        assert!(fraction_sweep(&src, &target, &cfg, plan, &[1.5], 1).is_err());
        assert!(fraction_sweep(&src, &target, &cfg, plan, &[0.5], 0).is_err());
    }

    #[test]
    fn single_class_subsets_are_skipped() {
        let src = source();
        let mut tr = set(12, 1);
        tr.labels.iter_mut().for_each(|l| *l = false);
        let (va, te, n) = (set(6, 2), set(9, 3), norm());
        let target = TargetData { train: &tr, val: &va, test: &te, norm: &n };
        let sweep = fraction_sweep(&src, &target, &quick(1), FreezePlan::new(0), &[0.5], 2).unwrap();
        assert!(sweep.points[0].runs.is_empty());
        assert_eq!(sweep.points[0].skipped, vec![0, 1]);
    }
}
