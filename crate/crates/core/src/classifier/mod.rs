//! Inception-style antialiased binary tile classifier.
//!
//! ```text
//! input 1×H×W ─ blur↓2 ─ conv3×3 ─ ReLU ─ blur↓2 ─ block_1 … block_n ─ GAP ─ head
//!                                                 (max+blur↓2 after block n/2)
//! ```
//!
//! Each block runs four parallel branches (1×1, 3×3, dilated 3×3, 3×3 max
//! pool + 1×1), applies ReLU and concatenates them. The stem convolution is
//! part of `block_1`, so the parameter groups are exactly
//! `block_1..block_n` and `head`.

mod checkpoint;
mod train;

use plumeshift_nn::{kaiming_normal, ConvGeom, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TileSet;
use crate::error::{Error, Result};
use crate::rng::rng;

pub use checkpoint::{Lineage, ModelCheckpoint};
pub use train::{train, EpochRecord, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub n_blocks: usize,
    pub width_scale: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overwritten from the master seed when run through the pipeline.
    #[serde(default)]
    pub seed: u64,
    /// Blur before every subsampling step. Off only for the aliased
    /// ablation.
    #[serde(default = "yes")]
    pub antialias: bool,
}

fn yes() -> bool {
    true
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            n_blocks: 4,
            width_scale: 1.0,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 15,
            seed: 0,
            antialias: true,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("classifier n_blocks must be >= 1".into()));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::Config(
                "classifier width_scale must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "classifier learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("classifier batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        Arch {
            n_blocks: self.n_blocks,
            width_scale: self.width_scale,
            antialias: self.antialias,
        }
    }
}

/// Structural hyperparameters, enough to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub n_blocks: usize,
    pub width_scale: f64,
    pub antialias: bool,
}

impl Arch {
    fn stem_channels(&self) -> usize {
        ((8.0 * self.width_scale).round() as usize).max(1)
    }

    fn branch_channels(&self) -> usize {
        ((4.0 * self.width_scale).round() as usize).max(1)
    }

    /// Index (1-based) of the block after which the middle pooling happens.
    fn mid_pool_after(&self) -> Option<usize> {
        (self.n_blocks >= 2).then_some(self.n_blocks / 2)
    }

    /// Total spatial reduction between the input and the pooled features.
    pub fn downsample_factor(&self) -> usize {
        if self.mid_pool_after().is_some() {
            8
        } else {
            4
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    b1: Conv,
    b3: Conv,
    bd: Conv,
    bp: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub arch: Arch,
    pub params: ParamStore,
    stem: Conv,
    blocks: Vec<Block>,
    head: Conv,
}

pub fn block_group(i: usize) -> String {
    format!("block_{}", i)
}

pub const HEAD_GROUP: &str = "head";

fn conv_param<R: Rng>(
    store: &mut ParamStore,
    r: &mut R,
    group: &str,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) -> Conv {
    let w = kaiming_normal(r, &[cout, cin, k, k], cin * k * k, 2f64.sqrt());
    Conv {
        w: store.add(group, &format!("{}.w", name), w),
        b: store.add(group, &format!("{}.b", name), Tensor::zeros(&[cout])),
    }
}

/// Freshly initialised classifier with seeded weights.
pub fn build_model(arch: &Arch, seed: u64) -> Result<Classifier> {
    if arch.n_blocks == 0 || !(arch.width_scale > 0.0) {
        return Err(Error::Config(format!(
            "invalid classifier architecture {:?}",
            arch
        )));
    }
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let c0 = arch.stem_channels();
    let b = arch.branch_channels();
    let g1 = block_group(1);
    let stem = conv_param(&mut store, &mut r, &g1, "stem", 1, c0, 3);
    let mut blocks = Vec::with_capacity(arch.n_blocks);
    for i in 1..=arch.n_blocks {
        let g = block_group(i);
        let cin = if i == 1 { c0 } else { 4 * b };
        blocks.push(Block {
            b1: conv_param(&mut store, &mut r, &g, "b1x1", cin, b, 1),
            b3: conv_param(&mut store, &mut r, &g, "b3x3", cin, b, 3),
            bd: conv_param(&mut store, &mut r, &g, "b3x3d2", cin, b, 3),
            bp: conv_param(&mut store, &mut r, &g, "bpool", cin, b, 1),
        });
    }
    let hw = kaiming_normal(&mut r, &[1, 4 * b], 4 * b, 1.0);
    let head = Conv {
        w: store.add(HEAD_GROUP, "fc.w", hw),
        b: store.add(HEAD_GROUP, "fc.b", Tensor::zeros(&[1])),
    };
    Ok(Classifier {
        arch: arch.clone(),
        params: store,
        stem,
        blocks,
        head,
    })
}

impl Classifier {
    /// Adopts a loaded parameter store after checking it matches the layout
    /// implied by `arch`.
    pub fn from_params(arch: &Arch, params: ParamStore) -> Result<Classifier> {
        let mut model = build_model(arch, 0)?;
        let fresh = model.params.entries();
        let loaded = params.entries();
        if fresh.len() != loaded.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, architecture needs {}",
                loaded.len(),
                fresh.len()
            )));
        }
        for (f, l) in fresh.iter().zip(loaded) {
            if f.group != l.group || f.name != l.name || f.value.shape() != l.value.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {}/{} {:?} does not match {}/{} {:?}",
                    l.group,
                    l.name,
                    l.value.shape(),
                    f.group,
                    f.name,
                    f.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn groups(&self) -> Vec<String> {
        self.params.groups()
    }

    fn down(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(if self.arch.antialias {
            g.blur_pool(x)?
        } else {
            g.subsample(x)?
        })
    }

    fn conv(&self, g: &mut Graph, x: Var, c: Conv, geom: ConvGeom) -> Result<Var> {
        let w = g.param(&self.params, c.w);
        let b = g.param(&self.params, c.b);
        Ok(g.conv2d(x, w, Some(b), geom)?)
    }

    fn block(&self, g: &mut Graph, x: Var, blk: &Block) -> Result<Var> {
        let one = ConvGeom::new(1, 0, 1);
        let a = self.conv(g, x, blk.b1, one)?;
        let b = self.conv(g, x, blk.b3, ConvGeom::same3())?;
        let d = self.conv(g, x, blk.bd, ConvGeom::new(1, 2, 2))?;
        let p = g.max_pool3(x)?;
        let p = self.conv(g, p, blk.bp, one)?;
        let parts: Vec<Var> = [a, b, d, p].into_iter().map(|v| g.relu(v)).collect();
        Ok(g.concat(&parts)?)
    }

    /// Logits `[N, 1]` for an NCHW batch `x`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4();
        let f = self.arch.downsample_factor();
        if c != 1 || h < f || w < f {
            return Err(Error::Shape(format!(
                "classifier needs 1×H×W input with H, W >= {}, got {}×{}×{}",
                f, c, h, w
            )));
        }
        let mut v = self.down(g, x)?;
        v = self.conv(g, v, self.stem, ConvGeom::same3())?;
        v = g.relu(v);
        v = self.down(g, v)?;
        for (i, blk) in self.blocks.iter().enumerate() {
            v = self.block(g, v, blk)?;
            if self.arch.mid_pool_after() == Some(i + 1) {
                v = g.max_pool3(v)?;
                v = self.down(g, v)?;
            }
        }
        let pooled = g.global_avg_pool(v)?;
        let w = g.param(&self.params, self.head.w);
        let b = g.param(&self.params, self.head.b);
        Ok(g.linear(pooled, w, Some(b))?)
    }

    /// Plume probabilities for raw NCHW images, evaluated in chunks. Each
    /// sample's value does not depend on the rest of its chunk.
    pub fn predict_tensor(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (n, _, _, _) = x.dims4();
        let per = x.len() / n.max(1);
        let mut out = Vec::with_capacity(n);
        const CHUNK: usize = 32;
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::from_vec(&shape, x.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            g.set_param_grads(false);
            let xv = g.input(chunk);
            let logits = self.forward(&mut g, xv)?;
            out.extend(
                g.value(logits)
                    .data()
                    .iter()
                    .map(|&z| plumeshift_nn::sigmoid(z)),
            );
            start = end;
        }
        Ok(out)
    }

    pub fn predict(&self, set: &TileSet) -> Result<Vec<f64>> {
        if set.is_empty() {
            return Ok(Vec::new());
        }
        let idx: Vec<usize> = (0..set.len()).collect();
        self.predict_tensor(&set.batch(&idx))
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }
}
