use plumeshift_nn::{Adam, Graph};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierConfig};
use crate::data::TileSet;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, DECISION_THRESHOLD};
use crate::rng::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_macro_f1: f64,
    /// Mean binary cross-entropy on the validation split.
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
    pub optimizer: Adam,
}

/// Mini-batch Adam on binary cross-entropy. Parameters marked non-trainable
/// are never touched.
pub fn train(
    model: &Classifier,
    train: &TileSet,
    val: &TileSet,
    cfg: &ClassifierConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pos = train.positives();
    if pos == 0 || pos == train.len() {
        return Err(Error::Config(format!(
            "training split needs both classes ({} positives of {})",
            pos,
            train.len()
        )));
    }
    let mut current = model.clone();
    let mut opt = Adam::new(cfg.learning_rate);
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut r = rng(cfg.seed);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let x = g.input(train.batch(idx));
            let logits = current.forward(&mut g, x)?;
            let loss = g.bce_with_logits(logits, train.targets(idx))?;
            let l = g.value(loss).item();
            if !l.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite classifier loss at epoch {} batch {}",
                    epoch,
                    bi + 1
                )));
            }
            loss_sum += l * idx.len() as f64;
            let grads = g.backward(loss)?.for_store(&g, &current.params);
            opt.step(&mut current.params, &grads);
        }
        if !current.params.is_finite() {
            return Err(Error::Training(format!(
                "non-finite classifier parameters after epoch {}",
                epoch
            )));
        }
        let (val_f1, val_macro_f1, val_loss) = if val.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let p = current.predict(val)?;
            let e = evaluate(&p, &val.labels, DECISION_THRESHOLD)?;
            (e.plume.f1, e.macro_f1(), mean_bce(&p, &val.labels))
        };
        log::debug!(
            "epoch {} loss {:.4} val_f1 {:.4}",
            epoch,
            loss_sum / train.len() as f64,
            val_f1
        );
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_f1,
            val_macro_f1,
            val_loss,
        });
        // Validation F1 saturates on small splits; ties go to the lower loss.
        if val_f1 > best_f1 || (val_f1 == best_f1 && val_loss < best_loss) || val.is_empty() {
            best_f1 = val_f1;
            best_loss = val_loss;
            best_epoch = epoch;
            best = current.clone();
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        optimizer: opt,
    })
}

fn mean_bce(probs: &[f64], labels: &[bool]) -> f64 {
    let eps = 1e-12;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, l)| {
            let p = p.clamp(eps, 1.0 - eps);
            if *l {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    sum / probs.len() as f64
}
