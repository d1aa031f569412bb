//! CycleGAN translation between the airborne and spaceborne domains.
//!
//! `G_s` maps airborne → spaceborne and `G_a` maps spaceborne → airborne;
//! `D_a` and `D_s` are patch critics on each domain. All images are
//! normalized with their own instrument's statistics.

mod checkpoint;
pub mod losses;
pub mod nets;

use plumeshift_nn::{Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::TileSet;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult, DECISION_THRESHOLD};
use crate::normalization::NormStats;
use crate::rng::{rng, sub_seed};
use crate::types::Domain;

pub use checkpoint::CycleGanCheckpoint;
pub use losses::{adversarial_losses, cycle_loss, gradient_penalty, CycleKind, Objective};
pub use nets::{build_discriminator, build_generator, DiscArch, Discriminator, GenArch, Generator};

/// Learning rates the study grid allows.
pub const LR_GRID: [f64; 4] = [2e-3, 2e-4, 2e-5, 2e-6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleGanConfig {
    pub objective: Objective,
    pub cycle_loss: CycleKind,
    pub cycle_weight: f64,
    /// Only read for the WGAN-GP objective.
    pub gp_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Overwritten from the master seed when run through the pipeline.
    #[serde(default)]
    pub seed: u64,
    pub batch_size: usize,
    /// Batches per epoch; by default one pass over the larger pool.
    pub steps_per_epoch: Option<usize>,
    /// Critic updates per generator update under WGAN-GP.
    pub critic_steps: usize,
    pub generator: GenArch,
    pub discriminator: DiscArch,
}

impl Default for CycleGanConfig {
    fn default() -> Self {
        CycleGanConfig {
            objective: Objective::Vanilla,
            cycle_loss: CycleKind::L1,
            cycle_weight: 10.0,
            gp_weight: 10.0,
            learning_rate: 2e-5,
            epochs: 20,
            seed: 0,
            batch_size: 1,
            steps_per_epoch: None,
            critic_steps: 5,
            generator: GenArch {
                channels: 4,
                res_blocks: 2,
            },
            discriminator: DiscArch {
                channels: 4,
                leaky_slope: 0.2,
            },
        }
    }
}

impl CycleGanConfig {
    pub fn validate(&self) -> Result<()> {
        if !LR_GRID
            .iter()
            .any(|g| (self.learning_rate - g).abs() <= 1e-9 * g)
        {
            return Err(Error::Config(format!(
                "cyclegan learning_rate {} is not in the grid {:?}",
                self.learning_rate, LR_GRID
            )));
        }
        if !(self.cycle_weight > 0.0) {
            return Err(Error::Config("cycle_weight must be positive".into()));
        }
        if self.objective == Objective::WganGp && !(self.gp_weight > 0.0) {
            return Err(Error::Config("gp_weight must be positive".into()));
        }
        if self.batch_size == 0 || self.critic_steps == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::Config("batch_size, critic_steps and steps_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AirToSpace,
    SpaceToAir,
}

impl Direction {
    pub fn source(self) -> Domain {
        match self {
            Direction::AirToSpace => Domain::Airborne,
            Direction::SpaceToAir => Domain::Spaceborne,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub d_airborne: f64,
    pub d_spaceborne: f64,
    pub g_adversarial: f64,
    /// Weighted sum of the forward and backward cycle terms.
    pub cycle: f64,
}

/// Cross-domain scores after an epoch. Epoch 0 is untranslated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub epoch: usize,
    /// Spaceborne classifier on `G_s(airborne test)`.
    pub air_to_space: EvalResult,
    /// Airborne classifier on `G_a(spaceborne test)`.
    pub space_to_air: EvalResult,
}

pub struct Pools<'a> {
    pub train_airborne: &'a TileSet,
    pub train_spaceborne: &'a TileSet,
    pub test_airborne: &'a TileSet,
    pub test_spaceborne: &'a TileSet,
}

/// Frozen classifiers used as judges during tracking.
pub struct Judges<'a> {
    pub airborne: &'a Classifier,
    pub spaceborne: &'a Classifier,
}

fn expect_domain(set: &TileSet, d: Domain, what: &str) -> Result<()> {
    if set.domain != d || set.norm_instrument != d {
        return Err(Error::Config(format!(
            "{} must be {} tiles normalized with {} statistics",
            what, d, d
        )));
    }
    Ok(())
}

fn expect_balanced(set: &TileSet, what: &str) -> Result<()> {
    if set.is_empty() || 2 * set.positives() != set.len() {
        return Err(Error::Config(format!(
            "{} is not balanced ({} positives of {})",
            what,
            set.positives(),
            set.len()
        )));
    }
    Ok(())
}

fn map_images(gen: &Generator, set: &TileSet) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(32) {
        let y = gen.apply_tensor(set.batch(chunk))?;
        for i in 0..chunk.len() {
            out.push(y.sample(i).to_vec());
        }
    }
    Ok(out)
}

/// Applies a generator to a normalized set, tagging the output with the
/// destination domain and its statistics.
pub fn translate_with(gen: &Generator, set: &TileSet, dest: &NormStats) -> Result<TileSet> {
    let mut out = set.with_images(if set.is_empty() { Vec::new() } else { map_images(gen, set)? });
    out.domain = dest.instrument;
    out.norm_instrument = dest.instrument;
    out.instr_max = dest.instr_max;
    Ok(out)
}

pub fn translate(ckpt: &CycleGanCheckpoint, set: &TileSet, direction: Direction) -> Result<TileSet> {
    if set.domain != direction.source() {
        return Err(Error::Usage(format!(
            "{:?} expects {} tiles, got {}",
            direction,
            direction.source(),
            set.domain
        )));
    }
    match direction {
        Direction::AirToSpace => translate_with(&ckpt.g_s, set, &ckpt.norm_spaceborne),
        Direction::SpaceToAir => translate_with(&ckpt.g_a, set, &ckpt.norm_airborne),
    }
}

fn track(epoch: usize, g_s: Option<&Generator>, g_a: Option<&Generator>, pools: &Pools, judges: &Judges, norms: (&NormStats, &NormStats)) -> Result<TrackRecord> {
    let a = match g_s {
        Some(g) => translate_with(g, pools.test_airborne, norms.1)?,
        None => pools.test_airborne.clone(),
    };
    let s = match g_a {
        Some(g) => translate_with(g, pools.test_spaceborne, norms.0)?,
        None => pools.test_spaceborne.clone(),
    };
    Ok(TrackRecord {
        epoch,
        air_to_space: evaluate(&judges.spaceborne.predict(&a)?, &a.labels, DECISION_THRESHOLD)?,
        space_to_air: evaluate(&judges.airborne.predict(&s)?, &s.labels, DECISION_THRESHOLD)?,
    })
}

fn check_finite(v: f64, what: &str, epoch: usize, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("non-finite {} at epoch {} step {}", what, epoch, step)))
    }
}

struct Nets {
    g_s: Generator,
    g_a: Generator,
    d_a: Discriminator,
    d_s: Discriminator,
}

struct Opts {
    g_s: Adam,
    g_a: Adam,
    d_a: Adam,
    d_s: Adam,
}

fn add_scaled(acc: &mut [Option<Tensor>], extra: Vec<Option<Tensor>>, k: f64) {
    for (a, e) in acc.iter_mut().zip(extra) {
        if let Some(e) = e {
            let e = e.map(|v| v * k);
            match a {
                Some(t) => t.add_assign(&e),
                None => *a = Some(e),
            }
        }
    }
}

/// One update of both critics; returns their losses.
fn critic_step<R: rand::Rng>(cfg: &CycleGanConfig, nets: &mut Nets, opts: &mut Opts, xa: &Tensor, xs: &Tensor, r: &mut R) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    g.set_param_grads(false);
    let va = g.input(xa.clone());
    let vs = g.input(xs.clone());
    let fake_s = nets.g_s.forward(&mut g, va)?;
    let fake_a = nets.g_a.forward(&mut g, vs)?;
    g.set_param_grads(true);
    let ra = nets.d_a.forward(&mut g, va)?;
    let fa = nets.d_a.forward(&mut g, fake_a)?;
    let rs = nets.d_s.forward(&mut g, vs)?;
    let fs = nets.d_s.forward(&mut g, fake_s)?;
    let la = losses::d_loss(&mut g, cfg.objective, ra, fa)?;
    let ls = losses::d_loss(&mut g, cfg.objective, rs, fs)?;
    let total = g.add(la, ls)?;
    let grads = g.backward(total)?;
    let mut ga = grads.for_store(&g, &nets.d_a.params);
    let mut gs = grads.for_store(&g, &nets.d_s.params);
    let (mut loss_a, mut loss_s) = (g.value(la).item(), g.value(ls).item());
    if cfg.objective == Objective::WganGp {
        let fake_a_t = g.value(fake_a).clone();
        let fake_s_t = g.value(fake_s).clone();
        let (pa, pga) = losses::penalty_param_grads(&nets.d_a, &losses::interpolate(xa, &fake_a_t, r)?)?;
        let (ps, pgs) = losses::penalty_param_grads(&nets.d_s, &losses::interpolate(xs, &fake_s_t, r)?)?;
        add_scaled(&mut ga, pga, cfg.gp_weight);
        add_scaled(&mut gs, pgs, cfg.gp_weight);
        loss_a += cfg.gp_weight * pa;
        loss_s += cfg.gp_weight * ps;
    }
    opts.d_a.step(&mut nets.d_a.params, &ga);
    opts.d_s.step(&mut nets.d_s.params, &gs);
    Ok((loss_a, loss_s))
}

/// One update of both generators; returns (adversarial, weighted cycle).
fn generator_step(cfg: &CycleGanConfig, nets: &mut Nets, opts: &mut Opts, xa: &Tensor, xs: &Tensor) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let va = g.input(xa.clone());
    let vs = g.input(xs.clone());
    let fake_s = nets.g_s.forward(&mut g, va)?;
    let rec_a = nets.g_a.forward(&mut g, fake_s)?;
    let fake_a = nets.g_a.forward(&mut g, vs)?;
    let rec_s = nets.g_s.forward(&mut g, fake_a)?;
    g.set_param_grads(false);
    let ss = nets.d_s.forward(&mut g, fake_s)?;
    let sa = nets.d_a.forward(&mut g, fake_a)?;
    let adv_s = losses::g_loss(&mut g, cfg.objective, ss)?;
    let adv_a = losses::g_loss(&mut g, cfg.objective, sa)?;
    let adv = g.add(adv_s, adv_a)?;
    let ca = losses::cycle_term(&mut g, cfg.cycle_loss, va, rec_a)?;
    let cs = losses::cycle_term(&mut g, cfg.cycle_loss, vs, rec_s)?;
    let cyc = g.add(ca, cs)?;
    let cyc = g.scale(cyc, cfg.cycle_weight);
    let total = g.add(adv, cyc)?;
    let grads = g.backward(total)?;
    let gs = grads.for_store(&g, &nets.g_s.params);
    let ga = grads.for_store(&g, &nets.g_a.params);
    opts.g_s.step(&mut nets.g_s.params, &gs);
    opts.g_a.step(&mut nets.g_a.params, &ga);
    Ok((g.value(adv).item(), g.value(cyc).item()))
}

/// Trains the four networks on unpaired balanced pools and tracks
/// cross-domain F1 after every epoch.
pub fn cyclegan_train(cfg: &CycleGanConfig, pools: &Pools, judges: &Judges, norm_airborne: &NormStats, norm_spaceborne: &NormStats) -> Result<CycleGanCheckpoint> {
    cfg.validate()?;
    expect_domain(pools.train_airborne, Domain::Airborne, "airborne training pool")?;
    expect_domain(pools.test_airborne, Domain::Airborne, "airborne test pool")?;
    expect_domain(pools.train_spaceborne, Domain::Spaceborne, "spaceborne training pool")?;
    expect_domain(pools.test_spaceborne, Domain::Spaceborne, "spaceborne test pool")?;
    expect_balanced(pools.train_airborne, "airborne training pool")?;
    expect_balanced(pools.train_spaceborne, "spaceborne training pool")?;
    if norm_airborne.instrument != Domain::Airborne || norm_spaceborne.instrument != Domain::Spaceborne {
        return Err(Error::Config("normalization statistics passed for the wrong instruments".into()));
    }
    let norms = (norm_airborne, norm_spaceborne);
    let seed = cfg.seed;
    let mut nets = Nets {
        g_s: build_generator(&cfg.generator, sub_seed(seed, "G_s"))?,
        g_a: build_generator(&cfg.generator, sub_seed(seed, "G_a"))?,
        d_a: build_discriminator(&cfg.discriminator, sub_seed(seed, "D_a"))?,
        d_s: build_discriminator(&cfg.discriminator, sub_seed(seed, "D_s"))?,
    };
    let adam = || Adam::with_betas(cfg.learning_rate, 0.5, 0.999);
    let mut opts = Opts {
        g_s: adam(),
        g_a: adam(),
        d_a: adam(),
        d_s: adam(),
    };
    let mut tracking = vec![track(0, None, None, pools, judges, norms)?];
    let mut losses_out = Vec::with_capacity(cfg.epochs);
    let (ta, ts) = (pools.train_airborne, pools.train_spaceborne);
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| ta.len().max(ts.len()).div_ceil(cfg.batch_size));
    let mut rng_a = rng(sub_seed(seed, "order-airborne"));
    let mut rng_s = rng(sub_seed(seed, "order-spaceborne"));
    let mut rng_gp = rng(sub_seed(seed, "gp"));
    let mut order_a: Vec<usize> = (0..ta.len()).collect();
    let mut order_s: Vec<usize> = (0..ts.len()).collect();
    for epoch in 1..=cfg.epochs {
        order_a.shuffle(&mut rng_a);
        order_s.shuffle(&mut rng_s);
        let mut sums = [0.0f64; 4];
        let mut cursor = (0usize, 0usize);
        let next = |order: &[usize], c: &mut usize| -> Vec<usize> {
            (0..cfg.batch_size)
                .map(|_| {
                    let i = order[*c % order.len()];
                    *c += 1;
                    i
                })
                .collect()
        };
        for step in 1..=steps {
            let ia = next(&order_a, &mut cursor.0);
            let is = next(&order_s, &mut cursor.1);
            let (xa, xs) = (ta.batch(&ia), ts.batch(&is));
            let reps = if cfg.objective == Objective::WganGp { cfg.critic_steps } else { 1 };
            let mut dl = (0.0, 0.0);
            for _ in 0..reps {
                dl = critic_step(cfg, &mut nets, &mut opts, &xa, &xs, &mut rng_gp)?;
            }
            let (adv, cyc) = generator_step(cfg, &mut nets, &mut opts, &xa, &xs)?;
            sums[0] += check_finite(dl.0, "airborne critic loss", epoch, step)?;
            sums[1] += check_finite(dl.1, "spaceborne critic loss", epoch, step)?;
            sums[2] += check_finite(adv, "generator loss", epoch, step)?;
            sums[3] += check_finite(cyc, "cycle loss", epoch, step)?;
        }
        let k = 1.0 / steps as f64;
        losses_out.push(LossRecord {
            epoch,
            d_airborne: sums[0] * k,
            d_spaceborne: sums[1] * k,
            g_adversarial: sums[2] * k,
            cycle: sums[3] * k,
        });
        tracking.push(track(epoch, Some(&nets.g_s), Some(&nets.g_a), pools, judges, norms)?);
        let t = tracking.last().expect("pushed");
        log::info!(
            "cyclegan epoch {} cycle {:.4} F1 a->s {:.3} s->a {:.3}",
            epoch,
            sums[3] * k,
            t.air_to_space.plume.f1,
            t.space_to_air.plume.f1
        );
    }
    Ok(CycleGanCheckpoint {
        config: cfg.clone(),
        g_s: nets.g_s,
        g_a: nets.g_a,
        d_a: nets.d_a,
        d_s: nets.d_s,
        norm_airborne: norm_airborne.clone(),
        norm_spaceborne: norm_spaceborne.clone(),
        losses: losses_out,
        tracking,
    })
}
