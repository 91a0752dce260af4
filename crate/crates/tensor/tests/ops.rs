//! Operation values against independent loop oracles and gradients against
//! central finite differences.

use deepjive_tensor::nn::Dense;
use deepjive_tensor::{Graph, ParamStore, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a.data()[i * k + t] * b.data()[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Direct nested-sum cross-correlation of one image.
#[allow(clippy::too_many_arguments)]
fn direct_conv(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    k: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xo in 0..ow {
                let mut s = 0.0;
                for c in 0..cin {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * sh + i) as isize - ph as isize;
                            let ix = (xo * sw + j) as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += x[(c * h + iy as usize) * w + ix as usize]
                                * k[((o * cin + c) * kh + i) * kw + j];
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = s;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn matmul_identity_and_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let mut eye = Tensor::zeros(&[4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 5] = 1.0;
    }
    let mut g = Graph::new();
    let av = g.input(a.clone());
    let iv = g.input(eye);
    let zv = g.input(Tensor::zeros(&[4, 2]));
    let ai = g.matmul(av, iv).unwrap();
    let az = g.matmul(av, zv).unwrap();
    assert_eq!(g.value(ai), &a);
    assert!(g.value(az).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let expected = triple_loop(&a, &b);
    let mut g = Graph::new();
    let (av, bv) = (g.input(a), g.input(b));
    let c = g.matmul(av, bv).unwrap();
    for (x, y) in g.value(c).data().iter().zip(&expected) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[1, 6, 5]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let k = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(xv, k, (1, 1), (0, 0)).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_ones_kernel_on_constant_image() {
    let c = 0.7;
    let mut g = Graph::new();
    let xv = g.input(Tensor::full(&[1, 6, 6], c));
    let k = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(xv, k, (1, 1), (0, 0)).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 4, 4]);
    // direct summation of nine equal terms
    let expected = (0..9).fold(0.0, |s, _| s + c);
    assert!(g.value(y).data().iter().all(|&v| (v - expected).abs() < 1e-12));
}

#[test]
fn conv_stride_two_shape() {
    let mut g = Graph::new();
    let xv = g.input(Tensor::zeros(&[1, 28, 28]));
    let k = g.input(Tensor::zeros(&[1, 1, 3, 3]));
    let y = g.conv2d(xv, k, (2, 2), (0, 0)).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 13, 13]);
}

#[test]
fn conv_kernel_larger_than_input_fails() {
    let mut g = Graph::new();
    let xv = g.input(Tensor::zeros(&[1, 2, 2]));
    let k = g.input(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(g.conv2d(xv, k, (1, 1), (0, 0)), Err(TensorError::Dimension { .. })));
    // padding makes it fit
    assert!(g.conv2d(xv, k, (1, 1), (1, 1)).is_ok());
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(stride, pad) in &[((1, 1), (0, 0)), ((2, 1), (1, 0)), ((2, 2), (1, 1)), ((3, 2), (0, 2))] {
        let x = random(&mut rng, &[2, 3, 7, 6]);
        let k = random(&mut rng, &[4, 3, 3, 2]);
        let mut g = Graph::new();
        let (xv, kv) = (g.input(x.clone()), g.input(k.clone()));
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        for n in 0..2 {
            let img = &x.data()[n * 3 * 42..(n + 1) * 3 * 42];
            let (exp, oh, ow) = direct_conv(img, (3, 7, 6), k.data(), (4, 3, 2), stride, pad);
            assert_eq!(g.value(y).shape(), &[2, 4, oh, ow]);
            for (a, b) in g.value(y).row(n).iter().zip(&exp) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mse_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[4, 5]);
    let b = random(&mut rng, &[4, 5]);
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    let mut g = Graph::new();
    let (av, bv) = (g.input(a), g.input(b));
    let m = g.mse(av, bv).unwrap();
    assert!((g.scalar(m) - s / 20.0).abs() < 1e-12);
}

/// Compares autodiff gradients of every variable leaf against central
/// differences of the same scalar function.
fn check_gradients(leaves: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward_only(loss).unwrap();
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.scalar(l)
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        for e in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[e] += h;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn two_layer_dense_relu_net_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let l1 = Dense::new(&mut store, "l1", 4, 6, true, &mut rng).unwrap();
    let l2 = Dense::new(&mut store, "l2", 6, 3, true, &mut rng).unwrap();
    let x = random(&mut rng, &[5, 4]);
    let y = random(&mut rng, &[5, 3]);
    let ids: Vec<_> = l1.params().into_iter().chain(l2.params()).collect();
    let leaves: Vec<Tensor> = ids.iter().map(|&id| store.value(id).clone()).collect();
    let worst = check_gradients(&leaves, |g, v| {
        let xv = g.input(x.clone());
        let h = g.matmul(xv, v[0]).unwrap();
        let h = g.add_bias(h, v[1]).unwrap();
        let h = g.relu(h).unwrap();
        let o = g.matmul(h, v[2]).unwrap();
        let o = g.add_bias(o, v[3]).unwrap();
        let yv = g.input(y.clone());
        g.mse(o, yv).unwrap()
    });
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn ops_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random(&mut rng, &[3, 2, 9, 9]);
        let k = random(&mut rng, &[4, 2, 3, 3]);
        let kt = random(&mut rng, &[4, 2, 3, 3]);
        let mut g = Graph::new();
        let xv = g.variable(x);
        let kv = g.variable(k);
        let ktv = g.variable(kt);
        let y = g.conv2d(xv, kv, (2, 2), (1, 1)).unwrap();
        let y = g.relu(y).unwrap();
        let z = g.conv_transpose2d(y, ktv, (2, 2), (1, 1), (0, 0)).unwrap();
        let l = g.mse(z, xv).unwrap();
        let grads = g.backward_only(l).unwrap();
        (g.scalar(l).to_bits(), grads.get(kv).unwrap().data().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv_shape_follows_floor_formula(
        h in 3usize..12, w in 3usize..12, kh in 1usize..4, kw in 1usize..4,
        sh in 1usize..4, sw in 1usize..4, ph in 0usize..3, pw in 0usize..3,
    ) {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 2, h, w]));
        let k = g.input(Tensor::zeros(&[3, 2, kh, kw]));
        let y = g.conv2d(x, k, (sh, sw), (ph, pw)).unwrap();
        prop_assert_eq!(
            g.value(y).shape(),
            &[1, 3, (h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1]
        );
    }

    #[test]
    fn every_op_gradient_matches_finite_differences(seed in 0u64..u64::MAX) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
        let leaves = vec![
            random(&mut rng, &[2, 2, 6, 5]),  // image batch
            random(&mut rng, &[3, 2, 3, 2]),  // conv kernels
            random(&mut rng, &[3]),           // conv bias
            random(&mut rng, &[3, 2, 3, 2]),  // transposed conv kernels
            random(&mut rng, &[2, 4]),        // extra dense input
            random(&mut rng, &[4, 3]),        // dense weight
        ];
        let worst = check_gradients(&leaves, |g, v| {
            let c = g.conv2d(v[0], v[1], stride, (1, 0)).unwrap();
            let c = g.add_bias(c, v[2]).unwrap();
            let r = g.relu(c).unwrap();
            let (oh, ow) = (g.value(r).shape()[2], g.value(r).shape()[3]);
            // output padding recovers the input extent exactly
            let op = ((6 + 2 - 3) - (oh - 1) * stride.0, (5 - 2) - (ow - 1) * stride.1);
            let t = g.conv_transpose2d(r, v[3], stride, (1, 0), op).unwrap();
            let rec = g.mse(t, v[0]).unwrap();
            let f = g.flatten(r).unwrap();
            let cat = g.concat(&[f, v[4]]).unwrap();
            let d = g.matmul(v[4], v[5]).unwrap();
            let p = g.mul(d, d).unwrap();
            let q = g.sub(p, d).unwrap();
            let s1 = g.sum(q).unwrap();
            let s2 = g.sum(cat).unwrap();
            let s2 = g.scale(s2, 0.1).unwrap();
            g.add_all(&[rec, s1, s2]).unwrap()
        });
        prop_assert!(worst < 1e-4, "worst relative error {}", worst);
    }
}
