use super::*;
use crate::error::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// `sum(out ⊙ R)` for a fixed random `R`, so every output entry carries a
/// distinct weight into the scalar loss.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(out);
    let w = g.constant(Tensor::normal(r, c, 1.0, &mut rng(seed)));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn check(
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    params: &[Tensor],
    tol: f64,
) -> GradCheckReport {
    let report = grad_check(f, params, 1e-5, tol).unwrap();
    assert!(report.passed, "gradient check failed: {report:#?}");
    report
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(2));
    let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = g.matmul(i, a).unwrap();
    assert_eq!(g.value(out), g.value(a));

    let ones = g.constant(m(&[&[1.0], &[1.0]]));
    let out = g.matmul(a, ones).unwrap();
    assert_eq!(g.value(out), &m(&[&[3.0], &[7.0]]));
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut r = rng(1);
    let a = Tensor::normal(3, 4, 1.0, &mut r);
    let b = Tensor::normal(4, 2, 1.0, &mut r);
    check(
        |g, v| {
            let out = g.matmul(v[0], v[1])?;
            weighted_sum(g, out, 9)
        },
        &[a, b],
        1e-6,
    );
}

#[test]
fn concat_rows_stacks_in_order() {
    let mut g = Graph::new();
    let parts: Vec<Var> = [1.0, 2.0, 3.0]
        .iter()
        .map(|&x| g.constant(Tensor::row_vector(vec![x, -x])))
        .collect();
    let out = g.concat_rows(&parts).unwrap();
    assert_eq!(g.value(out), &m(&[&[1.0, -1.0], &[2.0, -2.0], &[3.0, -3.0]]));

    let single = g.concat_rows(&parts[..1]).unwrap();
    assert_eq!(g.value(single), g.value(parts[0]));

    let wide = g.constant(Tensor::zeros(1, 3));
    assert!(matches!(g.concat_rows(&[parts[0], wide]), Err(Error::Dimension(_))));
}

#[test]
fn concat_rows_backward_routes_ones() {
    let mut g = Graph::new();
    let parts: Vec<Var> = (0..3).map(|_| g.param(Tensor::zeros(1, 4))).collect();
    let out = g.concat_rows(&parts).unwrap();
    let loss = g.sum(out);
    g.backward(loss).unwrap();
    for p in parts {
        assert_eq!(g.grad(p).unwrap(), &Tensor::filled(1, 4, 1.0));
    }
}

#[test]
fn softmax_examples() {
    let p = softmax_row(&[0.0, 0.0, 0.0]).unwrap();
    for v in &p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(softmax_row(&[42.0]).unwrap(), vec![1.0]);
    assert!(matches!(softmax_row(&[]), Err(Error::Dimension(_))));

    // In log space the second entry is -1000 - ln(1 + e^-1000), which is far
    // below the smallest subnormal, so the f64 result is exactly zero.
    let p = softmax_row(&[1000.0, 0.0]).unwrap();
    assert_eq!(p[0], 1.0);
    assert_eq!(p[1], (-1000.0f64).exp());
    assert!(p.iter().all(|v| v.is_finite()));
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax_row(&logits).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = softmax_row(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes(values in prop::collection::vec(-100.0f64..100.0, 2..16)) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        // The epsilon inside the square root shrinks the output variance to
        // var / (var + 1e-5), so the 1e-6 band needs var >= 10.
        prop_assume!(var >= 10.0);
        let d = values.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row_vector(values));
        let gain = g.constant(Tensor::filled(1, d, 1.0));
        let bias = g.constant(Tensor::zeros(1, d));
        let y = g.layer_norm(x, gain, bias).unwrap();
        let out = g.value(y).data();
        let mu = out.iter().sum::<f64>() / d as f64;
        let var_out = out.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(mu.abs() < 1e-9);
        prop_assert!((var_out - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let gain = g.constant(Tensor::filled(1, 4, 1.0));
    let bias = g.constant(Tensor::zeros(1, 4));
    let c = g.constant(Tensor::filled(1, 4, 7.5));
    let y = g.layer_norm(c, gain, bias).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let gain2 = g.constant(Tensor::filled(1, 2, 1.0));
    let bias2 = g.constant(Tensor::zeros(1, 2));
    let x = g.constant(Tensor::row_vector(vec![1.0, -1.0]));
    let y = g.layer_norm(x, gain2, bias2).unwrap();
    let out = g.value(y).data();
    assert!((out[0] - 1.0).abs() < 1e-5 && (out[1] + 1.0).abs() < 1e-5);

    let one = g.constant(Tensor::row_vector(vec![3.0]));
    let g1 = g.constant(Tensor::filled(1, 1, 1.0));
    let b1 = g.constant(Tensor::zeros(1, 1));
    assert!(matches!(g.layer_norm(one, g1, b1), Err(Error::Dimension(_))));
}

#[test]
fn layer_norm_gradients_match_finite_differences() {
    let mut r = rng(2);
    let x = Tensor::normal(1, 8, 1.0, &mut r);
    let gain = Tensor::normal(1, 8, 1.0, &mut r);
    let bias = Tensor::normal(1, 8, 1.0, &mut r);
    check(
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(g, y, 5)
        },
        &[x, gain, bias],
        1e-5,
    );
}

#[test]
fn relu_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row_vector(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    // Subgradient at exactly zero is zero.
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::filled(2, 3, -0.5));
    let y = g.relu(x);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_gradient_mask_is_positivity_mask() {
    let mut r = rng(4);
    let mut x = Tensor::normal(3, 5, 1.0, &mut r);
    // Keep entries away from the kink so central differences are valid.
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = g.relu(xv);
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    for (gv, xv) in g.grad(xv).unwrap().data().iter().zip(x.data()) {
        assert_eq!(*gv, if *xv > 0.0 { 1.0 } else { 0.0 });
    }
    check(
        |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, 3)
        },
        &[x],
        1e-6,
    );
}

#[test]
fn attention_gradients_match_finite_differences() {
    let mut r = rng(6);
    let params = vec![
        Tensor::normal(1, 4, 1.0, &mut r),
        Tensor::normal(3, 4, 1.0, &mut r),
        Tensor::normal(4, 4, 0.5, &mut r),
        Tensor::normal(4, 4, 0.5, &mut r),
        Tensor::normal(4, 4, 0.5, &mut r),
    ];
    check(
        |g, v| {
            let out = scaled_dot_attention(g, v[0], v[1], v[2], v[3], v[4])?;
            weighted_sum(g, out, 8)
        },
        &params,
        1e-5,
    );
}

#[test]
fn multi_head_attention_gradients_match_finite_differences() {
    let mut r = rng(7);
    let params = vec![
        Tensor::normal(1, 8, 1.0, &mut r),
        Tensor::normal(3, 8, 1.0, &mut r),
        Tensor::normal(8, 8, 0.4, &mut r),
        Tensor::normal(8, 8, 0.4, &mut r),
        Tensor::normal(8, 8, 0.4, &mut r),
        Tensor::normal(8, 8, 0.4, &mut r),
    ];
    check(
        |g, v| {
            let w = AttentionVars {
                wq: v[2],
                wk: v[3],
                wv: v[4],
                wo: v[5],
            };
            let out = multi_head_attention(g, v[0], v[1], &w, 4)?;
            weighted_sum(g, out, 10)
        },
        &params,
        1e-4,
    );
}

#[test]
fn backward_trivial_cases() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row_vector(vec![1.0, 2.0, 3.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    // A second call accumulates.
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());

    let z = g.scale(x, 0.0);
    let s = g.sum(z);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));

    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_is_deterministic() {
    let mut r = rng(12);
    let params: Vec<Tensor> = vec![
        Tensor::normal(1, 8, 1.0, &mut r),
        Tensor::normal(4, 8, 1.0, &mut r),
        Tensor::normal(8, 8, 0.4, &mut r),
    ];
    let run = || {
        let mut g = Graph::new();
        let v: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
        let w = AttentionVars { wq: v[2], wk: v[2], wv: v[2], wo: v[2] };
        let out = multi_head_attention(&mut g, v[0], v[1], &w, 2).unwrap();
        let loss = weighted_sum(&mut g, out, 1).unwrap();
        g.backward(loss).unwrap();
        v.iter().map(|&x| g.grad(x).unwrap().clone()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

/// Randomized trials over every differentiable primitive, kept away from
/// ReLU kinks.
#[test]
fn every_primitive_passes_randomized_gradient_checks() {
    for trial in 0..100u64 {
        let mut r = rng(1000 + trial);
        let rows = r.random_range(1..4);
        let cols = r.random_range(2..5);
        let a = Tensor::normal(rows, cols, 1.0, &mut r);
        let b = Tensor::normal(rows, cols, 1.0, &mut r);
        let w = Tensor::normal(cols, 3, 1.0, &mut r);
        let bias = Tensor::normal(1, cols, 1.0, &mut r);
        let gain = Tensor::normal(1, cols, 1.0, &mut r);
        let mut kinkless = a.clone();
        for v in kinkless.data_mut() {
            if v.abs() < 0.05 {
                *v = 0.1f64.copysign(*v);
            }
        }
        let seed = trial;
        let ops: Vec<(&str, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>, Vec<Tensor>)> = vec![
            ("matmul", Box::new(move |g, v| {
                let o = g.matmul(v[0], v[1])?;
                weighted_sum(g, o, seed)
            }), vec![a.clone(), w.clone()]),
            ("transpose", Box::new(move |g, v| {
                let o = g.transpose(v[0]);
                weighted_sum(g, o, seed)
            }), vec![a.clone()]),
            ("add_sub_mul", Box::new(move |g, v| {
                let s = g.add(v[0], v[1])?;
                let d = g.sub(s, v[1])?;
                let p = g.mul(d, v[1])?;
                weighted_sum(g, p, seed)
            }), vec![a.clone(), b.clone()]),
            ("add_row", Box::new(move |g, v| {
                let o = g.add_row(v[0], v[1])?;
                weighted_sum(g, o, seed)
            }), vec![a.clone(), bias.clone()]),
            ("concat_slices", Box::new(move |g, v| {
                let c = g.concat_rows(&[v[0], v[1]])?;
                let cc = g.concat_cols(&[c, c])?;
                let s = g.slice_rows(cc, 1, 1)?;
                let t = g.slice_cols(cc, 1, 2)?;
                let sel = g.select_cols(cc, &[0, 2, 2])?;
                let x = weighted_sum(g, s, seed)?;
                let y = weighted_sum(g, t, seed + 1)?;
                let z = weighted_sum(g, sel, seed + 2)?;
                let xy = g.add(x, y)?;
                g.add(xy, z)
            }), vec![a.clone(), b.clone()]),
            ("relu", Box::new(move |g, v| {
                let o = g.relu(v[0]);
                weighted_sum(g, o, seed)
            }), vec![kinkless.clone()]),
            ("softmax", Box::new(move |g, v| {
                let o = g.softmax(v[0])?;
                weighted_sum(g, o, seed)
            }), vec![a.clone()]),
            ("log_softmax", Box::new(move |g, v| {
                let o = g.log_softmax(v[0])?;
                weighted_sum(g, o, seed)
            }), vec![a.clone()]),
            ("layer_norm", Box::new(move |g, v| {
                let o = g.layer_norm(v[0], v[1], v[2])?;
                weighted_sum(g, o, seed)
            }), vec![a.clone(), gain.clone(), bias.clone()]),
            ("l2_normalize", Box::new(move |g, v| {
                let o = g.l2_normalize(v[0])?;
                weighted_sum(g, o, seed)
            }), vec![a.clone()]),
            ("scale", Box::new(move |g, v| {
                let o = g.scale(v[0], -2.5);
                weighted_sum(g, o, seed)
            }), vec![a.clone()]),
        ];
        for (name, f, params) in ops {
            let report = grad_check(f, &params, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{name} trial {trial}: {report:#?}");
        }
    }
}
