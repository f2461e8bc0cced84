//! Central finite differences against the tape's analytic gradients (f64).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxclone_tensor::layers::{ChannelNorm, Conv1d, Init, Upsample1d};
use voxclone_tensor::{Graph, ParamStore, Tensor, Var};

/// Builds a scalar loss from one input leaf.
fn check(name: &str, x0: Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Var) {
    let mut g = Graph::new();
    let x = g.input(x0.clone());
    let y = f(&mut g, x);
    let loss = g.sum(y);
    let grads = g.backward(loss);
    let analytic = grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(x0.rows(), x0.cols()));
    let h = 1e-6;
    for i in 0..x0.len() {
        let eval = |delta: f64| {
            let mut xp = x0.clone();
            xp.data_mut()[i] += delta;
            let mut g = Graph::new();
            let x = g.input(xp);
            let y = f(&mut g, x);
            let l = g.sum(y);
            g.item(l)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (1.0 + numeric.abs());
        assert!(err < 1e-5, "{name}: element {i} analytic {a} numeric {numeric}");
    }
}

fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    Tensor::randn(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn elementwise_ops() {
    let x = rand_t(3, 4, 1);
    let pos = x.map(|v| v.abs() + 0.5);
    check("exp", x.clone(), |g, x| g.exp(x));
    check("tanh", x.clone(), |g, x| g.tanh(x));
    check("sigmoid", x.clone(), |g, x| g.sigmoid(x));
    check("log_sigmoid", x.clone(), |g, x| g.log_sigmoid(x));
    check("leaky", x.clone(), |g, x| g.leaky_relu(x, 0.1));
    check("abs", x.clone(), |g, x| g.abs(x));
    check("log", pos.clone(), |g, x| g.log(x));
    check("sqrt", pos.clone(), |g, x| g.sqrt(x));
    check("powf", pos.clone(), |g, x| g.powf(x, -0.5));
    check("affine", x.clone(), |g, x| g.affine(x, 3.0, 1.0));
    check("square", x, |g, x| g.square(x));
}

#[test]
fn broadcasting_binary_ops() {
    let col = rand_t(3, 1, 2);
    let row = rand_t(1, 4, 3);
    let full = rand_t(3, 4, 4);
    for (label, other) in [("col", col), ("row", row), ("full", full.clone())] {
        let o1 = other.clone();
        check(label, full.clone(), move |g, x| {
            let c = g.constant(o1.clone());
            let a = g.mul(x, c);
            let b = g.sub(a, c);
            g.add(b, x)
        });
        check(label, other.clone(), |g, x| {
            let c = g.constant(Tensor::from_fn(3, 4, |r, c| (r as f64 + 1.0) * 0.3 - c as f64 * 0.2));
            let a = g.mul(c, x);
            let s = g.square(x);
            let denom = g.affine(s, 1.0, 1.0);
            let d = g.div(a, denom);
            g.add(d, x)
        });
    }
}

#[test]
fn matmul_every_transpose() {
    let b = rand_t(4, 5, 5);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let bb = if tb { b.transpose() } else { b.clone() };
        let x0 = if ta { rand_t(4, 3, 6) } else { rand_t(3, 4, 6) };
        let b1 = bb.clone();
        check("matmul-lhs", x0, move |g, x| {
            let c = g.constant(b1.clone());
            g.matmul_t(x, ta, c, tb)
        });
        let a0 = if ta { rand_t(4, 3, 7) } else { rand_t(3, 4, 7) };
        check("matmul-rhs", bb.clone(), move |g, x| {
            let c = g.constant(a0.clone());
            let y = g.matmul_t(c, ta, x, tb);
            g.square(y)
        });
    }
}

#[test]
fn reductions_and_softmax() {
    let x = rand_t(3, 5, 8);
    let w = rand_t(3, 5, 9);
    let w1 = w.clone();
    check("softmax", x.clone(), move |g, x| {
        let s = g.softmax_rows(x);
        let c = g.constant(w1.clone());
        g.mul(s, c)
    });
    check("row_sums", x.clone(), |g, x| {
        let s = g.row_sums(x);
        g.square(s)
    });
    check("col_sums", x.clone(), |g, x| {
        let s = g.col_sums(x);
        g.square(s)
    });
    check("mean", x, |g, x| {
        let s = g.mean(x);
        g.square(s)
    });
}

#[test]
fn structural_ops() {
    let x = rand_t(4, 7, 10);
    let w = rand_t(4 * 3, 3, 11);
    check("im2col", x.clone(), move |g, x| {
        let c = g.im2col(x, 3, 2, 2, 2, 1);
        let k = g.constant(w.clone());
        g.mul(c, k)
    });
    check("reflect", x.clone(), |g, x| {
        let p = g.reflect_pad_cols(x, 3);
        let s = g.square(p);
        g.col_sums(s)
    });
    check("stuff", x.clone(), |g, x| {
        let p = g.zero_stuff_cols(x, 3);
        g.square(p)
    });
    check("slices", x.clone(), |g, x| {
        let a = g.slice_rows(x, 1, 2);
        let b = g.slice_cols(x, 2, 4);
        let b = g.slice_rows(b, 0, 2);
        let b2 = g.slice_cols(a, 0, 4);
        let y = g.mul(b2, b);
        let c = g.concat_cols(&[y, a]);
        let r = g.reverse_rows(x);
        let r = g.slice_cols(r, 0, 8 - 1);
        let r = g.slice_rows(r, 0, 2);
        let c = g.slice_cols(c, 0, 7);
        let c2 = g.concat_rows(&[c, r]);
        g.square(c2)
    });
    check("gather", x, |g, x| {
        let y = g.gather_cols(x, &[0, 0, 3, 6, 3]);
        g.square(y)
    });
}

#[test]
fn layers_have_consistent_param_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::<f64>::new();
    let conv = Conv1d::same(&mut store, "c", 3, 4, 5, 2, Init::FanIn, &mut rng).unwrap();
    let up = Upsample1d::new(&mut store, "u", 4, 2, 4, Init::FanIn, &mut rng).unwrap();
    let norm = ChannelNorm::new(&mut store, "n", 2).unwrap();
    // perturb norm params away from identity
    for id in [norm.gamma, norm.beta] {
        let t = store.get(id).map(|v| v + 0.3);
        store.set(id, t).unwrap();
    }
    let x = rand_t(3, 6, 13);
    let forward = |store: &ParamStore<f64>, g: &mut Graph<f64>| {
        let xi = g.constant(x.clone());
        let h = conv.forward(g, store, xi);
        let h = g.tanh(h);
        let h = up.forward(g, store, h);
        assert_eq!(g.shape(h), (2, 24));
        let h = norm.forward(g, store, h);
        let h = g.square(h);
        let h = g.affine(h, 1.0, 0.0);
        let w = g.constant(Tensor::from_fn(2, 24, |r, c| ((r * 24 + c) as f64).sin()));
        let h = g.mul(h, w);
        g.sum(h)
    };
    let mut g = Graph::new();
    let loss = forward(&store, &mut g);
    let grads = g.backward(loss);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = grads.param(id).expect("every param is used").clone();
        for i in (0..analytic.len()).step_by(3) {
            let eval = |d: f64| {
                let mut s = store.clone();
                s.get_mut(id).data_mut()[i] += d;
                let mut g = Graph::new();
                let l = forward(&s, &mut g);
                g.item(l)
            };
            let numeric = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() / (1.0 + numeric.abs()) < 1e-5,
                "{}[{i}]: {a} vs {numeric}",
                store.name(id)
            );
        }
    }
}

#[test]
fn upsample_length_is_exact_multiple() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f32>::new();
    for f in [2, 4, 8] {
        let up = Upsample1d::new(&mut store, &format!("u{f}"), 2, 2, f, Init::FanIn, &mut rng).unwrap();
        for t in [1, 5, 9] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::zeros(2, t));
            let y = up.forward(&mut g, &store, x);
            assert_eq!(g.shape(y), (2, t * f));
        }
    }
    assert!(Upsample1d::new(&mut store, "odd", 2, 2, 3, Init::FanIn, &mut rng).is_err());
}
