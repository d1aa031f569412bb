//! Adversarial objectives, gradient penalty and cycle-consistency loss.

use plumeshift_nn::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nets::Discriminator;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Vanilla,
    Lsgan,
    WganGp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleKind {
    L1,
    #[serde(rename = "MSE", alias = "mse")]
    Mse,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Objective::Vanilla),
            "lsgan" => Ok(Objective::Lsgan),
            "wgan_gp" => Ok(Objective::WganGp),
            other => Err(Error::Config(format!("unknown objective '{}'", other))),
        }
    }
}

fn square_diff_mean(g: &mut Graph, s: Var, target: f64) -> Var {
    let d = g.add_scalar(s, -target);
    let d = g.square(d);
    g.mean(d)
}

/// Discriminator loss on detached real and fake scores (any shape).
pub fn d_loss(g: &mut Graph, obj: Objective, real: Var, fake: Var) -> Result<Var> {
    Ok(match obj {
        Objective::Vanilla => {
            let lr = g.bce_with_logits(real, vec![1.0; g.value(real).len()])?;
            let lf = g.bce_with_logits(fake, vec![0.0; g.value(fake).len()])?;
            let s = g.add(lr, lf)?;
            g.scale(s, 0.5)
        }
        Objective::Lsgan => {
            let lr = square_diff_mean(g, real, 1.0);
            let lf = square_diff_mean(g, fake, 0.0);
            let s = g.add(lr, lf)?;
            g.scale(s, 0.5)
        }
        Objective::WganGp => {
            let mr = g.mean(real);
            let mf = g.mean(fake);
            g.sub(mf, mr)?
        }
    })
}

/// Generator loss on the scores its fakes receive.
pub fn g_loss(g: &mut Graph, obj: Objective, fake: Var) -> Result<Var> {
    Ok(match obj {
        Objective::Vanilla => g.bce_with_logits(fake, vec![1.0; g.value(fake).len()])?,
        Objective::Lsgan => square_diff_mean(g, fake, 1.0),
        Objective::WganGp => {
            let m = g.mean(fake);
            g.scale(m, -1.0)
        }
    })
}

/// `(loss_D, loss_G)` for raw score arrays. The penalty term of WGAN-GP is
/// not included; see [`gradient_penalty`].
pub fn adversarial_losses(obj: Objective, real_scores: &[f64], fake_scores: &[f64]) -> Result<(f64, f64)> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::Data("adversarial losses need scores".into()));
    }
    if real_scores.iter().chain(fake_scores).any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite discriminator scores".into()));
    }
    let mut g = Graph::new();
    let r = g.input(Tensor::from_vec(&[real_scores.len()], real_scores.to_vec())?);
    let f = g.input(Tensor::from_vec(&[fake_scores.len()], fake_scores.to_vec())?);
    let d = d_loss(&mut g, obj, r, f)?;
    let gl = g_loss(&mut g, obj, f)?;
    Ok((g.value(d).item(), g.value(gl).item()))
}

/// Graph form of the cycle loss for NaN-free batches.
pub fn cycle_term(g: &mut Graph, kind: CycleKind, x: Var, rec: Var) -> Result<Var> {
    let d = g.sub(rec, x)?;
    let e = match kind {
        CycleKind::L1 => g.abs(d),
        CycleKind::Mse => g.square(d),
    };
    Ok(g.mean(e))
}

/// Mean absolute (L1) or squared (MSE) difference over pixels where both
/// inputs are valid.
pub fn cycle_loss(kind: CycleKind, x: &[f64], x_rec: &[f64]) -> Result<f64> {
    if x.len() != x_rec.len() {
        return Err(Error::Shape(format!("cycle loss over {} vs {} pixels", x.len(), x_rec.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&a, &b) in x.iter().zip(x_rec) {
        if a.is_nan() || b.is_nan() {
            continue;
        }
        let d = b - a;
        sum += match kind {
            CycleKind::L1 => d.abs(),
            CycleKind::Mse => d * d,
        };
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Interpolates `eps_i * real_i + (1 - eps_i) * fake_i` per sample with
/// `eps_i ~ U(0, 1)`.
pub fn interpolate<R: Rng>(real: &Tensor, fake: &Tensor, rng: &mut R) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "gradient penalty batches differ: {:?} vs {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape()[0];
    let per = real.len() / n.max(1);
    let mut data = Vec::with_capacity(real.len());
    for i in 0..n {
        let e: f64 = rng.random();
        data.extend(
            real.sample(i)
                .iter()
                .zip(fake.sample(i))
                .map(|(r, f)| e * r + (1.0 - e) * f),
        );
    }
    debug_assert_eq!(data.len(), n * per);
    Ok(Tensor::from_vec(real.shape(), data)?)
}

/// Per-sample input gradients of the critic value at `x`.
pub fn critic_input_grads(d: &Discriminator, x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let mut g = Graph::new();
    g.set_param_grads(false);
    let xv = g.input_with_grad(x.clone());
    let c = d.critic(&mut g, xv)?;
    let grads = g.backward_seeded(c, Tensor::full(&[n], 1.0))?;
    grads
        .wrt(xv)
        .cloned()
        .ok_or_else(|| Error::Training("critic input gradient unavailable".into()))
}

fn norms(grads: &Tensor) -> Vec<f64> {
    let n = grads.shape()[0];
    (0..n)
        .map(|i| grads.sample(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Penalty at fixed interpolates: mean of `(|grad_x D(x_hat)| - 1)^2`.
pub fn penalty_at(d: &Discriminator, x_hat: &Tensor) -> Result<f64> {
    let g = critic_input_grads(d, x_hat)?;
    let ns = norms(&g);
    Ok(ns.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / ns.len() as f64)
}

/// WGAN-GP penalty on random interpolates of `real` and `fake`.
pub fn gradient_penalty<R: Rng>(d: &Discriminator, real: &Tensor, fake: &Tensor, rng: &mut R) -> Result<f64> {
    let x_hat = interpolate(real, fake, rng)?;
    penalty_at(d, &x_hat)
}

/// Step used for the directional finite difference in
/// [`penalty_param_grads`].
pub const GP_FD_STEP: f64 = 1e-3;

/// Penalty value and its gradient with respect to the critic parameters.
///
/// With `v_i = g_i / |g_i|` the gradient of `(|g_i| - 1)^2` equals
/// `2 (|g_i| - 1)` times the parameter gradient of the directional
/// derivative `v_i · grad_x D(x_hat_i)`, which is approximated by a central
/// difference of the critic along `v_i`. One extra forward/backward pass on
/// `2N` perturbed samples replaces double back-propagation.
pub fn penalty_param_grads(d: &Discriminator, x_hat: &Tensor) -> Result<(f64, Vec<Option<Tensor>>)> {
    let grads = critic_input_grads(d, x_hat)?;
    let ns = norms(&grads);
    let n = ns.len();
    let value = ns.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / n as f64;
    let per = x_hat.len() / n;
    let mut plus = Vec::with_capacity(2 * n * per);
    let mut weights = Vec::with_capacity(2 * n);
    let h = GP_FD_STEP;
    for sign in [1.0, -1.0] {
        for i in 0..n {
            let norm = ns[i];
            let gi = grads.sample(i);
            let xi = x_hat.sample(i);
            if norm > 0.0 {
                plus.extend(xi.iter().zip(gi).map(|(x, g)| x + sign * h * g / norm));
            } else {
                plus.extend_from_slice(xi);
            }
            let c = if norm > 0.0 { 2.0 * (norm - 1.0) / n as f64 } else { 0.0 };
            weights.push(sign * c / (2.0 * h));
        }
    }
    let mut shape = x_hat.shape().to_vec();
    shape[0] = 2 * n;
    let mut g = Graph::new();
    let xv = g.input(Tensor::from_vec(&shape, plus)?);
    let c = d.critic(&mut g, xv)?;
    let pg = g.backward_seeded(c, Tensor::from_vec(&[2 * n], weights)?)?;
    Ok((value, pg.for_store(&g, &d.params)))
}
