//! Central finite differences against the analytic reverse pass, one op at a
//! time and for a small composed network.

use plumeshift_nn::{ConvGeom, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Runs `f` on leaves built from `inputs`, reduces the result with a fixed
/// random projection and compares d/d(input) against central differences.
fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        project(g.value(out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = f(&mut g, &vars);
    let seed = Tensor::from_vec(
        g.value(out).shape(),
        (0..g.value(out).len()).map(weight).collect(),
    )
    .unwrap();
    let grads = g.backward_seeded(out, seed).unwrap();
    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / fd.abs().max(a.abs()).max(1e-3);
            assert!(err < tol, "input {} idx {}: analytic {} vs fd {}", k, i, a, fd);
        }
    }
}

fn weight(i: usize) -> f64 {
    ((i * 7919 % 97) as f64 / 97.0) - 0.4
}

fn project(t: &Tensor) -> f64 {
    t.data().iter().enumerate().map(|(i, v)| v * weight(i)).sum()
}

#[test]
fn conv_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, geom) in [
        (3, ConvGeom::same3()),
        (3, ConvGeom::new(2, 1, 1)),
        (3, ConvGeom::new(1, 2, 2)),
        (1, ConvGeom::new(1, 0, 1)),
    ] {
        let x = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, k, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3], -1.0, 1.0);
        check(vec![x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), geom).unwrap(), 1e-6);
    }
}

#[test]
fn linear_and_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[2, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2], -1.0, 1.0);
    check(vec![x, w, b], |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(), 1e-6);

    let x = rand_tensor(&mut rng, &[2, 2, 7, 6], -1.0, 1.0);
    check(vec![x.clone()], |g, v| g.blur_pool(v[0]).unwrap(), 1e-6);
    check(vec![x.clone()], |g, v| g.subsample(v[0]).unwrap(), 1e-6);
    check(vec![x.clone()], |g, v| g.max_pool3(v[0]).unwrap(), 1e-6);
    check(vec![x.clone()], |g, v| g.upsample2(v[0]).unwrap(), 1e-6);
    check(vec![x.clone()], |g, v| g.global_avg_pool(v[0]).unwrap(), 1e-6);
    check(vec![x.clone()], |g, v| g.mean_per_sample(v[0]), 1e-6);
    let y = rand_tensor(&mut rng, &[2, 3, 7, 6], -1.0, 1.0);
    check(vec![x, y], |g, v| g.concat(&[v[0], v[1]]).unwrap(), 1e-6);
}

#[test]
fn elementwise_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[2, 5], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[2, 5], -2.0, 2.0);
    check(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap(), 1e-6);
    check(vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap(), 1e-6);
    check(vec![a.clone()], |g, v| g.scale(v[0], -1.7), 1e-6);
    check(vec![a.clone()], |g, v| g.add_scalar(v[0], 0.3), 1e-6);
    check(vec![a.clone()], |g, v| g.relu(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.leaky_relu(v[0], 0.2), 1e-6);
    check(vec![a.clone()], |g, v| g.sigmoid(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.abs(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.square(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.mean(v[0]), 1e-6);
    let p = rand_tensor(&mut rng, &[2, 5], 0.05, 0.95);
    check(vec![p], |g, v| g.logit(v[0], 1e-4), 1e-5);
    let weights: Vec<f64> = (0..10).map(|i| (i % 3) as f64).collect();
    check(vec![a.clone()], move |g, v| g.weighted_mean(v[0], weights.clone()).unwrap(), 1e-6);
    let targets: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
    check(vec![a], move |g, v| g.bce_with_logits(v[0], targets.clone()).unwrap(), 1e-6);
}

#[test]
fn shared_param_accumulates_across_uses() {
    let mut store = ParamStore::new();
    let id = store.add("g", "w", Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap());
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[1, 1, 2, 2], 1.0));
    let w1 = g.param(&store, id);
    let y = g.conv2d(x, w1, None, ConvGeom::new(1, 0, 1)).unwrap();
    let w2 = g.param(&store, id);
    assert_eq!(w1, w2);
    let z = g.conv2d(y, w2, None, ConvGeom::new(1, 0, 1)).unwrap();
    let m = g.mean(z);
    let grads = g.backward(m).unwrap();
    // z = w² x  ⇒ dz/dw = 2 w x = 4
    let gw = grads.for_store(&g, &store);
    assert!((gw[0].as_ref().unwrap().data()[0] - 4.0).abs() < 1e-12);
}

#[test]
fn frozen_params_get_no_gradient_but_pass_it_through() {
    let mut store = ParamStore::new();
    let id = store.add("g", "w", Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap());
    store.set_all_trainable(false);
    let mut g = Graph::new();
    let x = g.input_with_grad(Tensor::full(&[1, 1, 1, 1], 1.0));
    let w = g.param(&store, id);
    let y = g.conv2d(x, w, None, ConvGeom::new(1, 0, 1)).unwrap();
    let m = g.mean(y);
    let grads = g.backward(m).unwrap();
    assert!(grads.for_store(&g, &store)[0].is_none());
    assert_eq!(grads.wrt(x).unwrap().data(), &[3.0]);
}
