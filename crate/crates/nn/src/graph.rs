//! Eager tape: every op computes its value immediately and records enough to
//! run the reverse pass later.

use std::collections::HashMap;

use crate::kernels::{self, gemm, ConvGeom};
use crate::{NnError, ParamId, ParamStore, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param { tag: u64, id: ParamId },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Logit { x: Var, eps: f64 },
    Abs(Var),
    Square(Var),
    BlurPool(Var),
    Subsample(Var),
    MaxPool3 { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    Mean(Var),
    MeanPerSample(Var),
    WeightedMean { x: Var, weights: Vec<f64>, total: f64 },
    BceWithLogits { x: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<(u64, usize), Var>,
    param_grads: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(NnError::Shape(msg))
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: HashMap::new(),
            param_grads: true,
        }
    }

    /// When disabled, parameters bound afterwards are treated as constants.
    /// Gradients still flow *through* the ops that use them.
    pub fn set_param_grads(&mut self, enabled: bool) {
        self.param_grads = enabled;
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is wanted (e.g. for input-gradient penalties).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter; repeated binds of the same parameter share a node so
    /// gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.tag(), id.0);
        let wants = self.param_grads && store.is_trainable(id);
        if let Some(&v) = self.bound.get(&key) {
            if wants && !self.nodes[v.0].needs_grad {
                // bound earlier as a constant; bind a fresh trainable copy
                let nv = self.push(store.get(id).clone(), Op::Param { tag: key.0, id }, true);
                self.bound.insert(key, nv);
                return nv;
            }
            if !wants && self.nodes[v.0].needs_grad {
                return self.push(store.get(id).clone(), Op::Param { tag: key.0, id }, false);
            }
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param { tag: key.0, id }, wants);
        self.bound.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[1] != xs[1] {
            return shape_err(format!("conv2d input {:?} weight {:?}", xs, ws));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        let (ho, wo) = match (geom.out_len(h, k), geom.out_len(wd, k)) {
            (Some(a), Some(b)) => (a, b),
            _ => return shape_err(format!("conv2d kernel {} does not fit {}x{}", k, h, wd)),
        };
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return shape_err(format!("conv2d bias {:?} for {} outputs", self.value(b).shape(), o));
            }
        }
        let ckk = c * k * k;
        let plane = ho * wo;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        {
            let xd = self.value(x).data();
            let wdata = self.value(w).data();
            let bias = b.map(|b| self.value(b).data());
            let direct = k == 1 && geom.stride == 1 && geom.pad == 0;
            let mut cols = if direct { Vec::new() } else { vec![0.0; ckk * plane] };
            for s in 0..n {
                let xs_ = &xd[s * c * h * wd..(s + 1) * c * h * wd];
                let src: &[f64] = if direct {
                    xs_
                } else {
                    kernels::im2col(xs_, c, h, wd, k, geom, ho, wo, &mut cols);
                    &cols
                };
                let dst = &mut out.data_mut()[s * o * plane..(s + 1) * o * plane];
                if let Some(bias) = bias {
                    for (oc, bv) in bias.iter().enumerate() {
                        dst[oc * plane..(oc + 1) * plane].iter_mut().for_each(|v| *v = *bv);
                    }
                }
                let beta = if bias.is_some() { 1.0 } else { 0.0 };
                gemm(o, ckk, plane, wdata, (ckk, 1), src, (plane, 1), beta, dst);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// `x · wᵀ + b` for `x` of shape [N, in] and `w` of shape [out, in].
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("linear input {:?} weight {:?}", xs, ws));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut out = Tensor::zeros(&[n, o]);
        if let Some(b) = b {
            let bd = self.value(b).data().to_vec();
            if bd.len() != o {
                return shape_err(format!("linear bias len {} for {} outputs", bd.len(), o));
            }
            for row in out.data_mut().chunks_mut(o) {
                row.copy_from_slice(&bd);
            }
        }
        gemm(
            n,
            i,
            o,
            self.value(x).data(),
            (i, 1),
            self.value(w).data(),
            (1, i),
            1.0,
            out.data_mut(),
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{}: {:?} vs {:?}",
                what,
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().zip(bv).for_each(|(x, y)| *x -= y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// `ln(p / (1 - p))` of the input clamped to `[eps, 1 - eps]`.
    pub fn logit(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| {
            let p = x.clamp(eps, 1.0 - eps);
            (p / (1.0 - p)).ln()
        });
        let ng = self.ng(a);
        self.push(v, Op::Logit { x: a, eps }, ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        let ng = self.ng(a);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    fn nchw(&self, a: Var, what: &str) -> Result<(usize, usize, usize, usize)> {
        let s = self.value(a).shape();
        if s.len() != 4 {
            return shape_err(format!("{} expects NCHW, got {:?}", what, s));
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    /// Antialiased stride-2 downsampling (binomial blur, then decimate).
    pub fn blur_pool(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(a, "blur_pool")?;
        let (ho, wo) = (kernels::half_len(h), kernels::half_len(w));
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let x = self.value(a).data();
        for s in 0..n {
            kernels::blur_pool(
                &x[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                &mut out.data_mut()[s * c * ho * wo..(s + 1) * c * ho * wo],
            );
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::BlurPool(a), ng))
    }

    /// Stride-2 decimation without low-pass filtering.
    pub fn subsample(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(a, "subsample")?;
        let (ho, wo) = (kernels::half_len(h), kernels::half_len(w));
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let x = self.value(a).data();
        for s in 0..n {
            kernels::subsample(
                &x[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                &mut out.data_mut()[s * c * ho * wo..(s + 1) * c * ho * wo],
            );
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::Subsample(a), ng))
    }

    pub fn max_pool3(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(a, "max_pool3")?;
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let mut arg = vec![0u32; n * c * h * w];
        let x = self.value(a).data();
        let per = c * h * w;
        for s in 0..n {
            kernels::max_pool3(
                &x[s * per..(s + 1) * per],
                c,
                h,
                w,
                &mut out.data_mut()[s * per..(s + 1) * per],
                &mut arg[s * per..(s + 1) * per],
            );
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::MaxPool3 { x: a, argmax: arg }, ng))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(a, "upsample2")?;
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        let x = self.value(a).data();
        for s in 0..n {
            kernels::upsample2(
                &x[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                &mut out.data_mut()[s * c * 4 * h * w..(s + 1) * c * 4 * h * w],
            );
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::Upsample2(a), ng))
    }

    /// Channel concatenation of NCHW tensors sharing N, H, W.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of nothing".into());
        }
        let (n, _, h, w) = self.nchw(parts[0], "concat")?;
        let mut cs = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc, ph, pw) = self.nchw(*p, "concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(format!("concat part {:?}", self.value(*p).shape()));
            }
            cs.push(pc);
        }
        let ctot: usize = cs.iter().sum();
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, ctot, h, w]);
        for s in 0..n {
            let mut off = 0;
            for (p, &pc) in parts.iter().zip(&cs) {
                let src = &self.value(*p).data()[s * pc * plane..(s + 1) * pc * plane];
                let base = (s * ctot + off) * plane;
                out.data_mut()[base..base + pc * plane].copy_from_slice(src);
                off += pc;
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), ng))
    }

    /// [N, C, H, W] → [N, C] spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(a, "global_avg_pool")?;
        let plane = (h * w) as f64;
        let x = self.value(a).data();
        let data = x.chunks(h * w).map(|p| p.iter().sum::<f64>() / plane).collect();
        let out = Tensor::from_vec(&[n, c], data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GlobalAvgPool(a), ng))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    /// Mean over every axis but the first: [N, ...] → [N].
    pub fn mean_per_sample(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.shape()[0];
        let per = t.len() / n.max(1);
        let data = t.data().chunks(per.max(1)).map(|c| c.iter().sum::<f64>() / per as f64).collect();
        let out = Tensor::from_vec(&[n], data).expect("n values");
        let ng = self.ng(a);
        self.push(out, Op::MeanPerSample(a), ng)
    }

    /// `Σ wᵢ xᵢ / Σ wᵢ`; zero when every weight is zero.
    pub fn weighted_mean(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return shape_err(format!(
                "weighted_mean: {} weights for {} values",
                weights.len(),
                self.value(a).len()
            ));
        }
        let total: f64 = weights.iter().sum();
        let s: f64 = self.value(a).data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        let m = if total > 0.0 { s / total } else { 0.0 };
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(m), Op::WeightedMean { x: a, weights, total }, ng))
    }

    /// Mean binary cross-entropy between `sigmoid(x)` and `targets`.
    pub fn bce_with_logits(&mut self, a: Var, targets: Vec<f64>) -> Result<Var> {
        let x = self.value(a).data();
        if targets.len() != x.len() {
            return shape_err(format!("bce: {} targets for {} logits", targets.len(), x.len()));
        }
        let n = x.len().max(1) as f64;
        let l: f64 = x.iter().zip(&targets).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / n;
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(l), Op::BceWithLogits { x: a, targets }, ng))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if self.value(out).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.value(out).shape()));
        }
        self.backward_seeded(out, Tensor::full(self.value(out).shape(), 1.0))
    }

    /// Reverse pass with an explicit upstream gradient for `out`.
    pub fn backward_seeded(&self, out: Var, seed: Tensor) -> Result<Grads> {
        if seed.shape() != self.value(out).shape() {
            return shape_err(format!(
                "seed {:?} for output {:?}",
                seed.shape(),
                self.value(out).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[out.0].needs_grad {
            return Ok(Grads { grads });
        }
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param { .. }) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("just filled"));
    }

    fn unary(&self, grads: &mut [Option<Tensor>], a: Var, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
        self.accum(grads, a, |t| {
            for (i, (d, gv)) in t.data_mut().iter_mut().zip(g.data()).enumerate() {
                *d += f(i, *gv);
            }
        });
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Conv2d { x, w, b, geom } => self.conv_backward(*x, *w, *b, *geom, g, grads),
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, i) = (xs[0], xs[1]);
                let o = self.value(*w).shape()[0];
                let gd = g.data();
                if self.ng(*x) {
                    let wd = self.value(*w).data();
                    self.accum(grads, *x, |t| gemm(n, o, i, gd, (o, 1), wd, (i, 1), 1.0, t.data_mut()));
                }
                if self.ng(*w) {
                    let xd = self.value(*x).data();
                    self.accum(grads, *w, |t| gemm(o, n, i, gd, (1, o), xd, (i, 1), 1.0, t.data_mut()));
                }
                if let Some(b) = b {
                    self.accum(grads, *b, |t| {
                        for row in gd.chunks(o) {
                            for (d, v) in t.data_mut().iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.unary(grads, *a, g, |_, gv| gv);
                self.unary(grads, *b, g, |_, gv| gv);
            }
            Op::Sub(a, b) => {
                self.unary(grads, *a, g, |_, gv| gv);
                self.unary(grads, *b, g, |_, gv| -gv);
            }
            Op::Scale(a, k) => self.unary(grads, *a, g, |_, gv| gv * k),
            Op::AddScalar(a) => self.unary(grads, *a, g, |_, gv| gv),
            Op::Relu(a) => self.unary(grads, *a, g, |i, gv| if y[i] > 0.0 { gv } else { 0.0 }),
            Op::LeakyRelu(a, s) => {
                let x = self.value(*a).data();
                self.unary(grads, *a, g, |i, gv| if x[i] > 0.0 { gv } else { s * gv })
            }
            Op::Sigmoid(a) => self.unary(grads, *a, g, |i, gv| gv * y[i] * (1.0 - y[i])),
            Op::Logit { x, eps } => {
                let xv = self.value(*x).data();
                self.unary(grads, *x, g, |i, gv| {
                    let p = xv[i];
                    if p > *eps && p < 1.0 - eps {
                        gv / (p * (1.0 - p))
                    } else {
                        0.0
                    }
                })
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                self.unary(grads, *a, g, |i, gv| {
                    if x[i] > 0.0 {
                        gv
                    } else if x[i] < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.unary(grads, *a, g, |i, gv| 2.0 * x[i] * gv)
            }
            Op::BlurPool(a) | Op::Subsample(a) => {
                let (n, c, h, w) = self.value(*a).dims4();
                let (ho, wo) = (kernels::half_len(h), kernels::half_len(w));
                let blur = matches!(node.op, Op::BlurPool(_));
                self.accum(grads, *a, |t| {
                    for s in 0..n {
                        let dy = &g.data()[s * c * ho * wo..(s + 1) * c * ho * wo];
                        let dx = &mut t.data_mut()[s * c * h * w..(s + 1) * c * h * w];
                        if blur {
                            kernels::blur_pool_backward(dy, c, h, w, dx);
                        } else {
                            kernels::subsample_backward(dy, c, h, w, dx);
                        }
                    }
                });
            }
            Op::MaxPool3 { x, argmax } => self.accum(grads, *x, |t| {
                let dst = t.data_mut();
                let per = dst.len() / self.value(*x).shape()[0];
                for (i, (&src, gv)) in argmax.iter().zip(g.data()).enumerate() {
                    dst[(i / per) * per + src as usize] += gv;
                }
            }),
            Op::Upsample2(a) => {
                let (n, c, h, w) = self.value(*a).dims4();
                self.accum(grads, *a, |t| {
                    for s in 0..n {
                        kernels::upsample2_backward(
                            &g.data()[s * c * 4 * h * w..(s + 1) * c * 4 * h * w],
                            c,
                            h,
                            w,
                            &mut t.data_mut()[s * c * h * w..(s + 1) * c * h * w],
                        );
                    }
                });
            }
            Op::Concat(parts) => {
                let (n, ctot, h, w) = node.value.dims4();
                let plane = h * w;
                let mut off = 0;
                for p in parts {
                    let pc = self.value(*p).shape()[1];
                    self.accum(grads, *p, |t| {
                        for s in 0..n {
                            let src = &g.data()[(s * ctot + off) * plane..(s * ctot + off + pc) * plane];
                            let dst = &mut t.data_mut()[s * pc * plane..(s + 1) * pc * plane];
                            for (d, v) in dst.iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, h, w) = self.value(*a).dims4();
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                self.accum(grads, *a, |t| {
                    for (i, d) in t.data_mut().iter_mut().enumerate() {
                        *d += g.data()[i / plane] * inv;
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                let gv = g.item() / n;
                self.accum(grads, *a, |t| t.data_mut().iter_mut().for_each(|d| *d += gv));
            }
            Op::MeanPerSample(a) => {
                let n = self.value(*a).shape()[0];
                let per = self.value(*a).len() / n.max(1);
                self.accum(grads, *a, |t| {
                    for (i, d) in t.data_mut().iter_mut().enumerate() {
                        *d += g.data()[i / per] / per as f64;
                    }
                });
            }
            Op::WeightedMean { x, weights, total } => {
                if *total > 0.0 {
                    let gv = g.item() / total;
                    self.accum(grads, *x, |t| {
                        for (d, w) in t.data_mut().iter_mut().zip(weights) {
                            *d += gv * w;
                        }
                    });
                }
            }
            Op::BceWithLogits { x, targets } => {
                let xv = self.value(*x).data();
                let n = xv.len().max(1) as f64;
                let gv = g.item();
                self.accum(grads, *x, |t| {
                    for ((d, &z), &tg) in t.data_mut().iter_mut().zip(xv).zip(targets) {
                        *d += gv * (sigmoid(z) - tg) / n;
                    }
                });
            }
        }
    }

    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (n, c, h, wd) = self.value(x).dims4();
        let (o, _, k, _) = self.value(w).dims4();
        let (_, _, ho, wo) = g.dims4();
        let ckk = c * k * k;
        let plane = ho * wo;
        let gd = g.data();
        let direct = k == 1 && geom.stride == 1 && geom.pad == 0;
        let need_x = self.ng(x);
        let need_w = self.ng(w);
        if let Some(b) = b {
            self.accum(grads, b, |t| {
                for s in 0..n {
                    for oc in 0..o {
                        let base = (s * o + oc) * plane;
                        t.data_mut()[oc] += gd[base..base + plane].iter().sum::<f64>();
                    }
                }
            });
        }
        if !need_x && !need_w {
            return;
        }
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        let mut dw = if need_w { vec![0.0; o * ckk] } else { Vec::new() };
        let mut dx = if need_x { vec![0.0; n * c * h * wd] } else { Vec::new() };
        let mut cols = vec![0.0; if direct { 0 } else { ckk * plane }];
        let mut dcols = vec![0.0; if need_x && !direct { ckk * plane } else { 0 }];
        for s in 0..n {
            let dy = &gd[s * o * plane..(s + 1) * o * plane];
            let xs = &xd[s * c * h * wd..(s + 1) * c * h * wd];
            if need_w {
                let src: &[f64] = if direct {
                    xs
                } else {
                    kernels::im2col(xs, c, h, wd, k, geom, ho, wo, &mut cols);
                    &cols
                };
                // dW[o, ckk] += dY[o, plane] · colsᵀ[plane, ckk]
                gemm(o, plane, ckk, dy, (plane, 1), src, (1, plane), 1.0, &mut dw);
            }
            if need_x {
                let dxs = &mut dx[s * c * h * wd..(s + 1) * c * h * wd];
                if direct {
                    // dX[c, plane] = Wᵀ[c, o] · dY[o, plane]
                    gemm(ckk, o, plane, wdata, (1, ckk), dy, (plane, 1), 1.0, dxs);
                } else {
                    gemm(ckk, o, plane, wdata, (1, ckk), dy, (plane, 1), 0.0, &mut dcols);
                    kernels::col2im(&dcols, c, h, wd, k, geom, ho, wo, dxs);
                }
            }
        }
        if need_w {
            self.accum(grads, w, |t| {
                for (d, v) in t.data_mut().iter_mut().zip(&dw) {
                    *d += v;
                }
            });
        }
        if need_x {
            self.accum(grads, x, |t| {
                for (d, v) in t.data_mut().iter_mut().zip(&dx) {
                    *d += v;
                }
            });
        }
    }
}

/// Per-node gradients produced by a reverse pass.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every entry of `store`, indexed by [`ParamId`]; `None`
    /// for parameters that were not bound or not trainable.
    pub fn for_store(&self, graph: &Graph, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();
        for (i, node) in graph.nodes.iter().enumerate() {
            if let Op::Param { tag, id } = node.op {
                if tag != store.tag() || !node.needs_grad {
                    continue;
                }
                if let Some(gr) = &self.grads[i] {
                    match &mut out[id.0] {
                        Some(acc) => acc.add_assign(gr),
                        slot => *slot = Some(gr.clone()),
                    }
                }
            }
        }
        out
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
