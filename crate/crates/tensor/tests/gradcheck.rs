//! Every differentiable op checked against central finite differences.

use ddmem_tensor::{Graph, Padding, ParamId, ParamStore, Tensor, Var};

fn pseudo(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Builds a scalar from parameters; the builder must be a pure function of
/// the store's values.
fn check(store: &mut ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Var) {
    let mut g = Graph::new();
    let root = build(&mut g, store);
    let grads = g.backward(root);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for i in 0..store.get(id).len() {
            let h = 1e-6;
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let mut gp = Graph::new();
            let rp = build(&mut gp, store);
            let fp = gp.value(rp).data()[0];
            store.get_mut(id).data_mut()[i] = orig - h;
            let mut gm = Graph::new();
            let rm = build(&mut gm, store);
            let fm = gm.value(rm).data()[0];
            store.get_mut(id).data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / (a.abs().max(fd.abs()).max(1e-3));
            assert!(err < 1e-5, "{}[{i}]: analytic {a} vs numeric {fd}", store.name(id));
        }
    }
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn reduce(g: &mut Graph, x: Var, seed: u64) -> Var {
    let w = g.constant(pseudo(g.shape(x), seed));
    let p = g.mul(x, w);
    g.sum(p)
}

#[test]
fn elementwise_ops() {
    let mut s = ParamStore::new();
    let a = s.add("a", pseudo(&[3, 4], 1));
    let b = s.add("b", pseudo(&[3, 4], 2));
    check(&mut s, |g, s| {
        let (a, b) = (g.param(s, a), g.param(s, b));
        let x = g.mul(a, b);
        let y = g.sub(x, a);
        let y = g.add(y, b);
        let y = g.scale(y, 1.7);
        let y = g.add_scalar(y, 0.3);
        let t = g.tanh(y);
        let sg = g.sigmoid(b);
        let r = g.relu(a);
        let z = g.add(t, sg);
        let z = g.add(z, r);
        reduce(g, z, 3)
    });
}

#[test]
fn broadcast_concat_reshape_transpose_matmul() {
    let mut s = ParamStore::new();
    let x = s.add("x", pseudo(&[4, 3], 4));
    let v = s.add("v", pseudo(&[3], 5));
    let c = s.add("c", pseudo(&[2], 6));
    let f = s.add("f", pseudo(&[2, 2, 3], 7));
    let m = s.add("m", pseudo(&[3, 5], 8));
    check(&mut s, |g, s| {
        let (x, v, c, f, m) = (g.param(s, x), g.param(s, v), g.param(s, c), g.param(s, f), g.param(s, m));
        let a = g.add_trailing(x, v);
        let a = g.mul_trailing(a, v);
        let fb = g.add_leading(f, c);
        let fr = g.reshape(fb, &[4, 3]);
        let cat = g.concat(&[a, fr]);
        let t = g.transpose(cat);
        let tt = g.transpose(t);
        let mm = g.matmul(tt, m);
        reduce(g, mm, 9)
    });
}

#[test]
fn conv_zero_and_replicate_padding_with_stride() {
    for (stride, padding, k) in [(2, Padding::Zero, 3), (1, Padding::Replicate, 3), (1, Padding::Zero, 1)] {
        let mut s = ParamStore::new();
        let x = s.add("x", pseudo(&[2, 5, 6], 10));
        let w = s.add("w", pseudo(&[3, 2, k, k], 11));
        let b = s.add("b", pseudo(&[3], 12));
        check(&mut s, |g, s| {
            let (x, w, b) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let y = g.conv2d(x, w, Some(b), stride, k / 2, padding);
            reduce(g, y, 13)
        });
    }
}

#[test]
fn bilinear_resize_up_and_down() {
    for (oh, ow) in [(7, 9), (2, 3)] {
        let mut s = ParamStore::new();
        let x = s.add("x", pseudo(&[2, 3, 4], 14));
        check(&mut s, |g, s| {
            let x = g.param(s, x);
            let y = g.resize(x, oh, ow);
            reduce(g, y, 15)
        });
    }
}

#[test]
fn layer_norm_rows() {
    let mut s = ParamStore::new();
    let x = s.add("x", pseudo(&[3, 5], 16));
    check(&mut s, |g, s| {
        let x = g.param(s, x);
        let y = g.layer_norm(x, 1e-5);
        reduce(g, y, 17)
    });
}

#[test]
fn attention_with_and_without_row_mask() {
    for active in [None, Some(vec![true, false, true])] {
        let mut s = ParamStore::new();
        let q = s.add("q", pseudo(&[3, 4], 18));
        let k = s.add("k", pseudo(&[5, 4], 19));
        let v = s.add("v", pseudo(&[5, 4], 20));
        check(&mut s, |g, s| {
            let (q, k, v) = (g.param(s, q), g.param(s, k), g.param(s, v));
            let y = g.attention(q, k, v, 2, active.clone());
            reduce(g, y, 21)
        });
    }
}

#[test]
fn dice_and_bootstrapped_bce() {
    let target: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    let mut s = ParamStore::new();
    let x = s.add("x", pseudo(&[3, 4], 22));
    check(&mut s, |g, s| {
        let x = g.param(s, x);
        let d = g.dice_loss(x, &target, 1.0);
        let b = g.bootstrapped_bce(x, &target, 0.4);
        g.add(d, b)
    });
}

#[test]
fn shared_node_gradients_accumulate() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(3.0));
    let y = g.mul(x, x);
    let grads = g.backward(y);
    assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
}
