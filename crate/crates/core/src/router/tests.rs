use super::*;
use crate::numcore::grad_check;
use proptest::prelude::*;
use rand::SeedableRng;

fn small(backbone: Backbone, d_enc: usize, n: usize, d: usize) -> RouterModel {
    let config = RouterConfig {
        d_enc,
        n,
        d,
        layers: 2,
        heads: 2,
        share_layers: false,
        backbone,
        mlp_hidden: 16,
    };
    let mut m = RouterModel::new(config, 7).unwrap();
    // visible model embeddings
    if let BackboneParams::Former(p) = &m.backbone {
        *m.store.get_mut(p.embeddings) = Tensor::normal(n, d, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    }
    m
}

fn raw(d_enc: usize, seed: u64) -> Vec<f64> {
    Tensor::normal(1, d_enc, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).into_data()
}

#[test]
fn identity_adapter_leaves_query_unchanged() {
    let mut m = small(Backbone::RadialFormer, 4, 3, 4);
    *m.store.get_mut(m.adapter.weight) = Tensor::identity(4);
    let x = vec![0.5, -1.0, 2.0, 0.0];
    assert_eq!(m.project(&x).unwrap().data(), &x[..]);
}

#[test]
fn zero_adapter_gives_bias_row() {
    let mut m = small(Backbone::RadialFormer, 5, 3, 4);
    *m.store.get_mut(m.adapter.weight) = Tensor::zeros(5, 4);
    *m.store.get_mut(m.adapter.bias) = Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m.project(&raw(5, 1)).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn wrong_embedding_width_is_a_dimension_error() {
    let m = small(Backbone::RadialFormer, 5, 3, 4);
    assert!(matches!(m.predict_scores(&[1.0; 4]), Err(Error::Dimension(_))));
    assert!(matches!(m.predict_scores(&[f64::NAN; 5]), Err(Error::NonFinite(_))));
}

#[test]
fn shared_head_scores_identical_rows_identically() {
    let m = small(Backbone::RadialFormer, 4, 3, 4);
    let row = vec![0.3, -0.2, 1.5, 0.7];
    let sats = Tensor::from_rows(&[row.clone(), row]).unwrap();
    let s = m.head_scores(&sats).unwrap();
    assert_eq!(s[0], s[1]);
}

#[test]
fn zero_weight_head_returns_output_bias() {
    let mut m = small(Backbone::RadialFormer, 4, 3, 4);
    *m.store.get_mut(m.head.w2) = Tensor::zeros(16, 1);
    *m.store.get_mut(m.head.b2) = Tensor::row_vector(vec![0.25]);
    assert_eq!(m.predict_scores(&raw(4, 2)).unwrap(), vec![0.25; 3]);
}

#[test]
fn fast_path_matches_recorded_path_for_every_backbone() {
    for backbone in Backbone::ALL {
        let m = small(backbone, 6, 4, 8);
        for seed in 0..3 {
            let x = raw(6, seed);
            let fast = m.predict_scores(&x).unwrap();
            let mut g = Graph::new();
            let bound = m.store.bind_frozen(&mut g);
            let q = g.constant(Tensor::row_vector(x));
            let out = m.forward_graph(&mut g, &bound, q).unwrap();
            let slow = g.value(out.logits).data();
            for (a, b) in fast.iter().zip(slow) {
                assert!((a - b).abs() < 1e-10, "{backbone:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn mlp_backbone_makes_no_attention_calls() {
    let m = small(Backbone::MlpOnly, 6, 4, 8);
    let mut g = Graph::new();
    let bound = m.store.bind_frozen(&mut g);
    let q = g.constant(Tensor::row_vector(raw(6, 0)));
    m.forward_graph(&mut g, &bound, q).unwrap();
    assert_eq!(g.stats().attention_calls, 0);

    let m = small(Backbone::RadialFormer, 6, 4, 8);
    let mut g = Graph::new();
    let bound = m.store.bind_frozen(&mut g);
    let q = g.constant(Tensor::row_vector(raw(6, 0)));
    m.forward_graph(&mut g, &bound, q).unwrap();
    // n satellites plus the relay, per layer
    assert_eq!(g.stats().attention_calls, 2 * 5);
}

#[test]
fn eleven_candidate_router_passes_gradient_check() {
    let m = small(Backbone::RadialFormer, 6, 11, 8);
    let x = Tensor::row_vector(raw(6, 9));
    let weights = Tensor::normal(1, 11, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let report = grad_check(
        |g, vars| {
            let bound = BoundParams::from_vars(vars.to_vec());
            let q = g.constant(x.clone());
            let out = m.forward_graph(g, &bound, q)?;
            let w = g.constant(weights.clone());
            let y = g.mul(out.logits, w)?;
            Ok(g.sum(y))
        },
        m.store.tensors(),
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "max error {}", report.max_error());
}

#[test]
fn predictions_are_repeatable() {
    let m = small(Backbone::RadialFormer, 6, 4, 8);
    let x = raw(6, 5);
    assert_eq!(m.predict_scores(&x).unwrap(), m.predict_scores(&x).unwrap());
    let again = small(Backbone::RadialFormer, 6, 4, 8);
    assert_eq!(m.store.content_hash(), again.store.content_hash());
}

#[test]
fn routing_probability_examples() {
    let p = routing_probability(&[0.3; 4]).unwrap();
    assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    let p = routing_probability(&[2.0, 1.0, 0.0]).unwrap();
    assert!(p[0] > p[1] && p[1] > p[2]);
    assert!(routing_probability(&[]).is_err());
}

#[test]
fn select_examples() {
    assert_eq!(select(&[1.0]).unwrap(), 0);
    assert_eq!(select(&[0.2, 0.5, 0.3]).unwrap(), 1);
    assert_eq!(select(&[0.5, 0.5]).unwrap(), 0);
    assert!(matches!(select(&[]), Err(Error::Config(_))));
}

#[test]
fn decision_names_the_chosen_llm() {
    let catalog = LlmCatalog::from_pairs([("a", 1.0), ("b", 2.0), ("c", 0.5)]).unwrap();
    let d = RoutingDecision::from_scores(vec![0.1, 0.9, 0.3], &catalog).unwrap();
    assert_eq!((d.chosen_index, d.chosen_name.as_str()), (1, "b"));
    assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(RoutingDecision::from_scores(vec![0.1, 0.9], &catalog).is_err());
}

#[test]
fn true_score_reference_rows() {
    assert_eq!(true_score(0.8134, 7.185, 0.0).unwrap(), 0.8134);
    assert!((true_score(0.7092, 0.562, 0.02).unwrap() - 0.698).abs() < 5e-4);
    assert!((true_score(0.7037, 0.439, 0.1).unwrap() - 0.660).abs() < 5e-4);
    assert!(matches!(true_score(0.5, -0.1, 0.1), Err(Error::Validation(_))));
    assert!(true_score(1.2, 0.1, 0.1).is_err());
}

#[test]
fn target_distribution_examples() {
    let q = target_distribution(&[0.4; 3]).unwrap();
    assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    let q = target_distribution(&[10.0, 0.0, 0.0]).unwrap();
    assert!(q[0] > 0.999);
    // q_i = 1 / sum_j exp(s_j - s_i)
    let s = [0.9, 0.5, 0.1];
    let q = target_distribution(&s).unwrap();
    for i in 0..3 {
        let oracle = 1.0 / s.iter().map(|sj| (sj - s[i]).exp()).sum::<f64>();
        assert!((q[i] - oracle).abs() < 1e-15);
    }
    assert!(target_distribution(&[f64::INFINITY, 0.0]).is_err());
}

#[test]
fn zero_alpha_target_ignores_cost() {
    let perf = [0.7, 0.2, 0.9];
    let a: Vec<f64> = perf.iter().zip([0.1, 5.0, 7.0]).map(|(&p, c)| true_score(p, c, 0.0).unwrap()).collect();
    let b: Vec<f64> = perf.iter().zip([3.0, 0.0, 0.2]).map(|(&p, c)| true_score(p, c, 0.0).unwrap()).collect();
    assert_eq!(target_distribution(&a).unwrap(), target_distribution(&b).unwrap());
}

proptest! {
    #[test]
    fn selection_survives_positive_affine_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 1..12),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let mapped: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let p = routing_probability(&scores).unwrap();
        let pm = routing_probability(&mapped).unwrap();
        prop_assert_eq!(select(&scores).unwrap(), select(&mapped).unwrap());
        prop_assert_eq!(select(&p).unwrap(), select(&scores).unwrap());
        prop_assert_eq!(select(&pm).unwrap(), select(&mapped).unwrap());
    }

    #[test]
    fn probabilities_are_shift_invariant(scores in prop::collection::vec(-5.0f64..5.0, 1..12), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let p = routing_probability(&scores).unwrap();
        let q = routing_probability(&shifted).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn true_score_is_linear_and_monotone(
        perf in 0.0f64..=1.0,
        cost in 0.0f64..10.0,
        alpha in 0.001f64..1.0,
        dc in 0.001f64..1.0,
    ) {
        let s = true_score(perf, cost, alpha).unwrap();
        prop_assert!((s - (perf - alpha * cost)).abs() == 0.0);
        prop_assert!(true_score(perf, cost + dc, alpha).unwrap() < s);
        if perf < 0.99 {
            prop_assert!(true_score(perf + 0.01, cost, alpha).unwrap() > s);
        }
    }
}
