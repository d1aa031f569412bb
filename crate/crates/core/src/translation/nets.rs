//! Generator and PatchGAN discriminator.

use plumeshift_nn::{kaiming_normal, ConvGeom, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng;

/// Input pixels are clamped into `[LOGIT_EPS, 1 - LOGIT_EPS]` before the
/// logit skip connection.
pub const LOGIT_EPS: f64 = 1e-4;

/// The tone gain and offset are stored divided by this factor, which makes
/// Adam move them this many times faster than the convolution weights.
pub const TONE_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenArch {
    pub channels: usize,
    pub res_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscArch {
    pub channels: usize,
    /// Negative slope of the leaky ReLUs (1.0 makes the network linear).
    pub leaky_slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

fn conv<R: Rng>(s: &mut ParamStore, r: &mut R, group: &str, name: &str, cin: usize, cout: usize, gain: f64) -> Conv {
    Conv {
        w: s.add(group, &format!("{}.w", name), kaiming_normal(r, &[cout, cin, 3, 3], cin * 9, gain)),
        b: s.add(group, &format!("{}.b", name), Tensor::zeros(&[cout])),
    }
}

fn apply(g: &mut Graph, s: &ParamStore, c: Conv, x: Var, geom: ConvGeom) -> Result<Var> {
    let w = g.param(s, c.w);
    let b = g.param(s, c.b);
    Ok(g.conv2d(x, w, Some(b), geom)?)
}

/// Residual image-to-image network with a logit skip:
/// `y = sigmoid(a·logit(x) + b + r(x))`, so outputs stay in (0, 1). The
/// global tone terms `a`, `b` start at 1 and 0; with a zero residual the
/// untrained skip is the identity map.
///
/// ```text
/// conv3×3 ─ conv3×3/2 ─ res blocks ─ up×2 ─ conv3×3 ─ conv3×3 → r(x)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub arch: GenArch,
    pub params: ParamStore,
    enc: Conv,
    down: Conv,
    res: Vec<(Conv, Conv)>,
    up: Conv,
    out: Conv,
    tone: Conv,
}

pub const GEN_STRIDE: usize = 2;

pub fn build_generator(arch: &GenArch, seed: u64) -> Result<Generator> {
    if arch.channels == 0 {
        return Err(Error::Config("generator needs at least one channel".into()));
    }
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    let c = arch.channels;
    let relu = 2f64.sqrt();
    let enc = conv(&mut s, &mut r, "generator", "enc", 1, c, relu);
    let down = conv(&mut s, &mut r, "generator", "down", c, 2 * c, relu);
    let res = (0..arch.res_blocks)
        .map(|i| {
            (
                conv(&mut s, &mut r, "generator", &format!("res{}a", i), 2 * c, 2 * c, relu),
                conv(&mut s, &mut r, "generator", &format!("res{}b", i), 2 * c, 2 * c, 0.5),
            )
        })
        .collect();
    let up = conv(&mut s, &mut r, "generator", "up", 2 * c, c, relu);
    let out = conv(&mut s, &mut r, "generator", "out", c, 1, 1.0);
    let tone = Conv {
        w: s.add("generator", "tone.w", Tensor::from_vec(&[1, 1, 1, 1], vec![1.0 / TONE_SCALE]).expect("1 value")),
        b: s.add("generator", "tone.b", Tensor::zeros(&[1])),
    };
    Ok(Generator {
        arch: arch.clone(),
        params: s,
        enc,
        down,
        res,
        up,
        out,
        tone,
    })
}

impl Generator {
    pub fn from_params(arch: &GenArch, params: ParamStore) -> Result<Generator> {
        let mut g = build_generator(arch, 0)?;
        check_layout(&g.params, &params)?;
        g.params = params;
        Ok(g)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4();
        if c != 1 || h % GEN_STRIDE != 0 || w % GEN_STRIDE != 0 || h < 2 * GEN_STRIDE {
            return Err(Error::Shape(format!(
                "generator needs 1×H×W input with H, W divisible by {}, got {}×{}×{}",
                GEN_STRIDE, c, h, w
            )));
        }
        let s = &self.params;
        let mut v = apply(g, s, self.enc, x, ConvGeom::same3())?;
        v = g.relu(v);
        v = apply(g, s, self.down, v, ConvGeom::new(2, 1, 1))?;
        v = g.relu(v);
        for &(a, b) in &self.res {
            let mut t = apply(g, s, a, v, ConvGeom::same3())?;
            t = g.relu(t);
            t = apply(g, s, b, t, ConvGeom::same3())?;
            v = g.add(v, t)?;
        }
        v = g.upsample2(v)?;
        v = apply(g, s, self.up, v, ConvGeom::same3())?;
        v = g.relu(v);
        let r = apply(g, s, self.out, v, ConvGeom::same3())?;
        let z = g.logit(x, LOGIT_EPS);
        let z = apply(g, s, self.tone, z, ConvGeom::new(1, 0, 1))?;
        let z = g.scale(z, TONE_SCALE);
        let z = g.add(z, r)?;
        Ok(g.sigmoid(z))
    }

    /// Translates an NCHW batch without recording gradients.
    pub fn apply_tensor(&self, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        g.set_param_grads(false);
        let xv = g.input(x);
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

/// PatchGAN critic: two stride-2 convolutions and two stride-1
/// convolutions, producing one score per overlapping patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub arch: DiscArch,
    pub params: ParamStore,
    layers: Vec<(Conv, usize)>,
}

pub fn build_discriminator(arch: &DiscArch, seed: u64) -> Result<Discriminator> {
    if arch.channels == 0 || !arch.leaky_slope.is_finite() {
        return Err(Error::Config(format!("invalid discriminator architecture {:?}", arch)));
    }
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    let c = arch.channels;
    let gain = (2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope)).sqrt();
    let spec = [(1, c, 2), (c, 2 * c, 2), (2 * c, 2 * c, 1), (2 * c, 1, 1)];
    let layers = spec
        .iter()
        .enumerate()
        .map(|(i, &(cin, cout, stride))| {
            let gn = if i == 3 { 1.0 } else { gain };
            (conv(&mut s, &mut r, "discriminator", &format!("l{}", i), cin, cout, gn), stride)
        })
        .collect();
    Ok(Discriminator {
        arch: arch.clone(),
        params: s,
        layers,
    })
}

impl Discriminator {
    pub fn from_params(arch: &DiscArch, params: ParamStore) -> Result<Discriminator> {
        let mut d = build_discriminator(arch, 0)?;
        check_layout(&d.params, &params)?;
        d.params = params;
        Ok(d)
    }

    /// Patch score grid `[N, 1, H/4, W/4]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4();
        if c != 1 || h < 8 || w < 8 {
            return Err(Error::Shape(format!("discriminator needs 1×H×W input with H, W >= 8, got {}×{}×{}", c, h, w)));
        }
        let mut v = x;
        let last = self.layers.len() - 1;
        for (i, &(cv, stride)) in self.layers.iter().enumerate() {
            v = apply(g, &self.params, cv, v, ConvGeom::new(stride, 1, 1))?;
            if i < last {
                v = g.leaky_relu(v, self.arch.leaky_slope);
            }
        }
        Ok(v)
    }

    /// Per-sample critic value: the mean patch score, `[N]`.
    pub fn critic(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = self.forward(g, x)?;
        Ok(g.mean_per_sample(s))
    }

    pub fn scores_tensor(&self, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        g.set_param_grads(false);
        let xv = g.input(x);
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

fn check_layout(fresh: &ParamStore, loaded: &ParamStore) -> Result<()> {
    let ok = fresh.len() == loaded.len()
        && fresh
            .entries()
            .iter()
            .zip(loaded.entries())
            .all(|(a, b)| a.group == b.group && a.name == b.name && a.value.shape() == b.value.shape());
    if ok {
        Ok(())
    } else {
        Err(Error::Shape("stored network parameters do not match the architecture".into()))
    }
}
