//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero if
//! any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use radialrouter_cli::service::{self, AppState, Health, RouteResponse};
use radialrouter_core::clustering::{group_queries, ClusterConfig};
use radialrouter_core::data::synth::generate;
use radialrouter_core::data::{reference, stratified_split, Dataset, SynthConfig};
use radialrouter_core::eval::{
    self, ablation_run, baseline_best_candidate, baseline_oracle, baseline_random, check_oracle_dominance,
    evaluate_choices, pool_growth, AblationInputs, AblationVariant, EvalReport, Scenario,
};
use radialrouter_core::losses::{
    ce_graph, ce_loss, kl_graph, kl_loss, ql_graph, qq_contrastive_loss, qq_graph, LossConfig, LossKind,
};
use radialrouter_core::numcore::{grad_check, multi_head_attention, scaled_dot_attention, AttentionVars, Graph, Tensor, Var};
use radialrouter_core::params::{BoundParams, ParamStore};
use radialrouter_core::radialformer::{flop_count, RadialFormerConfig, RadialFormerParams};
use radialrouter_core::router::{Backbone, RouterConfig, RouterModel};
use radialrouter_core::training::{objective_graph, precompute_targets, train, Checkpoint, TrainConfig, TrainData};
use radialrouter_core::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Reports gathered by the other criteria for the dominance check.
#[derive(Default)]
struct Collected {
    evaluations: Vec<(Dataset, EvalReport)>,
}

impl Collected {
    fn push(&mut self, ds: &Dataset, r: &EvalReport) {
        self.evaluations.push((ds.clone(), r.clone()));
    }
}

// 1. gradient suite

fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> CoreResult<Var> {
    let [r, c] = g.shape(out);
    let w = g.constant(Tensor::normal(r, c, 1.0, &mut rng(seed)));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> CoreResult<Var>>;

fn op_cases(trial: u64) -> Vec<(&'static str, OpFn, Vec<Tensor>)> {
    let mut r = rng(9000 + trial);
    let rows = r.random_range(1..4);
    let cols = 2 * r.random_range(1..3);
    let a = Tensor::normal(rows, cols, 1.0, &mut r);
    let b = Tensor::normal(rows, cols, 1.0, &mut r);
    let w = Tensor::normal(cols, 3, 1.0, &mut r);
    let bias = Tensor::normal(1, cols, 1.0, &mut r);
    let gain = Tensor::normal(1, cols, 1.0, &mut r);
    let q = Tensor::normal(1, cols, 1.0, &mut r);
    let ctx = Tensor::normal(3, cols, 1.0, &mut r);
    let proj: Vec<Tensor> = (0..4).map(|_| Tensor::normal(cols, cols, 0.7, &mut r)).collect();
    let logits = Tensor::normal(1, 5, 1.0, &mut r);
    let target = {
        let raw: Vec<f64> = (0..5).map(|_| r.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let scores: Vec<f64> = (0..5).map(|_| r.random_range(0.0..1.0)).collect();
    let label = r.random_range(0..5);
    let mut kinkless = a.clone();
    for v in kinkless.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.1f64.copysign(*v);
        }
    }
    let s = trial;
    let mut attn = vec![q.clone(), ctx.clone()];
    attn.extend(proj.iter().cloned());
    let (t1, t2) = (target.clone(), scores.clone());
    let t3 = scores.clone();
    vec![
        ("matmul", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.matmul(v[0], v[1])?;
            weighted_sum(g, o, s)
        }) as OpFn, vec![a.clone(), w]),
        ("transpose", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.transpose(v[0]);
            weighted_sum(g, o, s)
        }), vec![a.clone()]),
        ("add_sub_mul", Box::new(move |g: &mut Graph, v: &[Var]| {
            let x = g.add(v[0], v[1])?;
            let y = g.sub(x, v[1])?;
            let z = g.mul(y, v[1])?;
            weighted_sum(g, z, s)
        }), vec![a.clone(), b.clone()]),
        ("add_row", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.add_row(v[0], v[1])?;
            weighted_sum(g, o, s)
        }), vec![a.clone(), bias.clone()]),
        ("concat_slice_select", Box::new(move |g: &mut Graph, v: &[Var]| {
            let c = g.concat_rows(&[v[0], v[1]])?;
            let cc = g.concat_cols(&[c, c])?;
            let x = g.slice_rows(cc, 1, 1)?;
            let y = g.slice_cols(cc, 1, 2)?;
            let z = g.select_cols(cc, &[0, 2, 2])?;
            let x = weighted_sum(g, x, s)?;
            let y = weighted_sum(g, y, s + 1)?;
            let z = weighted_sum(g, z, s + 2)?;
            let xy = g.add(x, y)?;
            g.add(xy, z)
        }), vec![a.clone(), b.clone()]),
        ("relu", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.relu(v[0]);
            weighted_sum(g, o, s)
        }), vec![kinkless]),
        ("softmax", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.softmax(v[0])?;
            weighted_sum(g, o, s)
        }), vec![a.clone()]),
        ("log_softmax", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.log_softmax(v[0])?;
            weighted_sum(g, o, s)
        }), vec![a.clone()]),
        ("layer_norm", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(g, o, s)
        }), vec![a.clone(), gain, bias]),
        ("l2_normalize", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.l2_normalize(v[0])?;
            weighted_sum(g, o, s)
        }), vec![a.clone()]),
        ("scale", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = g.scale(v[0], -2.5);
            weighted_sum(g, o, s)
        }), vec![a]),
        ("scaled_dot_attention", Box::new(move |g: &mut Graph, v: &[Var]| {
            let o = scaled_dot_attention(g, v[0], v[1], v[2], v[3], v[4])?;
            weighted_sum(g, o, s)
        }), attn[..5].to_vec()),
        ("multi_head_attention", Box::new(move |g: &mut Graph, v: &[Var]| {
            let w = AttentionVars { wq: v[2], wk: v[3], wv: v[4], wo: v[5] };
            let o = multi_head_attention(g, v[0], v[1], &w, 2)?;
            weighted_sum(g, o, s)
        }), attn),
        ("kl", Box::new(move |g: &mut Graph, v: &[Var]| kl_graph(g, v[0], &t1)), vec![logits.clone()]),
        ("ce", Box::new(move |g: &mut Graph, v: &[Var]| ce_graph(g, v[0], label)), vec![logits.clone()]),
        ("ql_probabilities", Box::new(move |g: &mut Graph, v: &[Var]| ql_graph(g, v[0], &t2, 2, false)), vec![logits.clone()]),
        ("ql_logits", Box::new(move |g: &mut Graph, v: &[Var]| ql_graph(g, v[0], &t3, 2, true)), vec![logits]),
        ("qq", Box::new(move |g: &mut Graph, v: &[Var]| qq_graph(g, v[0], v[1], &v[2..])), vec![
            Tensor::normal(1, 6, 1.0, &mut r),
            Tensor::normal(1, 6, 1.0, &mut r),
            Tensor::normal(1, 6, 1.0, &mut r),
            Tensor::normal(1, 6, 1.0, &mut r),
        ]),
    ]
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checks = 0usize;
    let mut worst = 0.0f64;
    for trial in 0..10 {
        for (name, f, params) in op_cases(trial) {
            let report = grad_check(f, &params, 1e-5, 1e-4).map_err(fail)?;
            ensure(report.passed, || format!("{name} trial {trial}: max error {:.3e}", report.max_error()))?;
            worst = worst.max(report.max_error());
            checks += 1;
        }
    }

    // full objective, n=3, d=8, T=2, batch of 4 with qq pairs
    let data = generate(&SynthConfig::new(3, 2, 2, 5, 0.05, 1)).map_err(fail)?;
    let config = RouterConfig {
        d_enc: 5,
        n: 3,
        d: 8,
        layers: 2,
        heads: 2,
        share_layers: false,
        backbone: Backbone::RadialFormer,
        mlp_hidden: 8,
    };
    let model = RouterModel::new(config, 2).map_err(fail)?;
    let emb = data.dataset.require_embeddings().map_err(fail)?.clone();
    let targets = precompute_targets(&data.dataset, 0.02).map_err(fail)?;
    let loss = LossConfig::default();
    let pairs: Vec<(usize, usize, usize)> = vec![(0, 1, 2), (1, 0, 3), (2, 3, 0), (3, 2, 1)];
    for &(a, p, n) in &pairs {
        ensure(data.groups[a] == data.groups[p] && data.groups[a] != data.groups[n], || {
            "synthetic groups do not give in-group pairs".into()
        })?;
    }
    let f = |g: &mut Graph, vars: &[Var]| -> CoreResult<Var> {
        let bound = BoundParams::from_vars(vars.to_vec());
        let mut terms = Vec::new();
        for &(q, p, n) in &pairs {
            let negs = [emb.row(n)];
            let ex = objective_graph(g, &model, &bound, emb.row(q), &targets[q], Some((emb.row(p), &negs[..])), &loss)?;
            terms.push(ex.total);
        }
        let all = g.concat_cols(&terms)?;
        let s = g.sum(all);
        Ok(g.scale(s, 0.25))
    };
    let report = grad_check(f, model.store.tensors(), 1e-5, 1e-4).map_err(fail)?;
    ensure(report.passed, || format!("full objective: max error {:.3e}", report.max_error()))?;
    worst = worst.max(report.max_error());
    checks += 1;

    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s, limit 30 s"))?;
    Ok(format!("{checks} checks, max relative error {worst:.2e}, {secs:.2} s"))
}

// 2. loss identities

fn random_distribution(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (r.random_range(-4.0..4.0f64)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn loss_identities() -> Outcome {
    let mut r = rng(11);
    let mut min_kl = f64::INFINITY;
    let mut self_kl = 0.0f64;
    for _ in 0..10_000 {
        let n = r.random_range(1..12);
        let p = random_distribution(&mut r, n);
        let q = random_distribution(&mut r, n);
        let kl = kl_loss(&p, &q).map_err(fail)?;
        ensure(kl >= 0.0, || format!("KL {kl} < 0 for {p:?} vs {q:?}"))?;
        min_kl = min_kl.min(kl);
        self_kl = self_kl.max(kl_loss(&p, &p).map_err(fail)?.abs());
    }
    ensure(self_kl <= 1e-12, || format!("KL(p,p) reached {self_kl:e}"))?;

    let mut qq_err = 0.0f64;
    for h in 1..=16 {
        let anchor: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let positive: Vec<f64> = anchor.iter().map(|v| 2.0 * v).collect();
        let negatives: Vec<Vec<f64>> = (1..=h).map(|k| anchor.iter().map(|v| v * k as f64).collect()).collect();
        let l = qq_contrastive_loss(&anchor, &positive, &negatives).map_err(fail)?;
        qq_err = qq_err.max((l - (1.0 + h as f64).ln()).abs());
    }
    ensure(qq_err <= 1e-12, || format!("qq deviates from ln(1+H) by {qq_err:e}"))?;

    let mut ce_err = 0.0f64;
    for n in 1..=32 {
        let p = vec![1.0 / n as f64; n];
        for label in 0..n {
            ce_err = ce_err.max((ce_loss(&p, label).map_err(fail)? - (n as f64).ln()).abs());
        }
    }
    ensure(ce_err <= 1e-12, || format!("uniform CE deviates from ln n by {ce_err:e}"))?;
    Ok(format!(
        "min KL {min_kl:.2e} over 1e4 pairs, |KL(p,p)| <= {self_kl:.1e}, qq err {qq_err:.1e}, ce err {ce_err:.1e}"
    ))
}

// 3. reference rows

fn table_rows(collected: &mut Collected) -> Outcome {
    let start = Instant::now();
    let ds = reference::dataset().map_err(fail)?;
    let expected = [
        (Scenario::PERFORMANCE_FIRST, "gpt-4-1106-preview", 0.813),
        (Scenario::BALANCE, "gpt-3.5-turbo-1106", 0.698),
        (Scenario::COST_FIRST, "Yi-34B-Chat", 0.660),
    ];
    let mut parts = Vec::new();
    for (scenario, name, score) in expected {
        let (idx, report) = baseline_best_candidate(&ds, scenario).map_err(fail)?;
        let got = ds.catalog().name(idx);
        ensure(got == name, || format!("alpha {}: best candidate {got}, expected {name}", scenario.alpha))?;
        ensure((report.score() - score).abs() <= 0.001, || {
            format!("alpha {}: score {:.4}, expected {score} ± 0.001", scenario.alpha, report.score())
        })?;
        collected.push(&ds, &report);
        parts.push(format!("{name} {:.4}", report.score()));
    }
    let random = baseline_random(&ds, Scenario::PERFORMANCE_FIRST, eval::RANDOM_TRIALS, 0).map_err(fail)?;
    collected.push(&ds, &random.report);
    let e = random.expectation;
    ensure((e.performance - 0.627).abs() <= 0.01, || format!("random performance {:.4} vs 0.627", e.performance))?;
    ensure((e.cost - 1.847).abs() <= 0.05, || format!("random cost {:.4} vs 1.847", e.cost))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.2} s, limit 1 s"))?;
    Ok(format!(
        "{}; random expectation perf {:.4} cost {:.4}; {:.3} s",
        parts.join(", "),
        e.performance,
        e.cost,
        secs
    ))
}

// 4. radial topology

fn radial_invariant() -> Outcome {
    let (n, d, layers) = (6, 16, 4);
    let mut r = rng(21);
    let mut store = ParamStore::new();
    let params = RadialFormerParams::init(RadialFormerConfig::new(n, d, layers, 2), &mut store, &mut r).map_err(fail)?;
    *store.get_mut(params.embeddings) = Tensor::normal(n, d, 1.0, &mut r);
    let query = Tensor::normal(1, d, 1.0, &mut r);
    let mut states = vec![params.init_state(&store, &query).map_err(fail)?];
    for _ in 1..layers {
        let mut s = states.last().expect("initial state").clone();
        params.step(&store, &mut s).map_err(fail)?;
        states.push(s);
    }
    let mut self_moved = 0;
    for probe in 0..100 {
        let layer = r.random_range(0..layers);
        let i = r.random_range(0..n);
        let j = (i + r.random_range(1..n)) % n;
        let state = &states[layer];
        let before = params.update_satellite(&store, state, i).map_err(fail)?;
        let mut perturbed = state.clone();
        for v in perturbed.satellites.row_mut(j) {
            *v += r.random_range(-1.0..1.0);
        }
        let after = params.update_satellite(&store, &perturbed, i).map_err(fail)?;
        ensure(before.data() == after.data(), || {
            format!("probe {probe}: satellite {i} changed when {j} was perturbed at layer {}", layer + 1)
        })?;
        let own_before = params.update_satellite(&store, state, j).map_err(fail)?;
        let own_after = params.update_satellite(&store, &perturbed, j).map_err(fail)?;
        if own_before.data() != own_after.data() {
            self_moved += 1;
        }
    }
    ensure(self_moved == 100, || format!("perturbation moved the perturbed satellite in only {self_moved}/100 probes"))?;
    Ok("100 probes bit-identical; every perturbation moved its own satellite".into())
}

// 5. end-to-end synthetic run

const E2E_SEED: u64 = 0;

struct SynthSplits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    groups: Vec<usize>,
}

fn synthetic_splits() -> Result<SynthSplits, String> {
    let data = generate(&SynthConfig::new(4, 6, 40, 32, 0.05, E2E_SEED)).map_err(fail)?;
    let ds = &data.dataset;
    let s = stratified_split(&ds.tags(), 0.7, 0.1, E2E_SEED).map_err(fail)?;
    let train = ds.select(&s.train).map_err(fail)?;
    let emb = train.require_embeddings().map_err(fail)?;
    let groups = group_queries(&train.ids(), emb, 6, &ClusterConfig::default(), E2E_SEED)
        .and_then(|g| g.labels_for(&train.ids()))
        .map_err(fail)?;
    Ok(SynthSplits {
        val: ds.select(&s.val).map_err(fail)?,
        test: ds.select(&s.test).map_err(fail)?,
        train,
        groups,
    })
}

fn e2e_router() -> RouterConfig {
    RouterConfig {
        d: 32,
        layers: 3,
        heads: 4,
        ..RouterConfig::new(32, 4)
    }
}

fn e2e_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        max_epochs: 300,
        patience: 50,
        alpha: Scenario::BALANCE.alpha,
        seed,
        ..TrainConfig::default()
    }
}

fn end_to_end(splits: &SynthSplits, collected: &mut Collected) -> Outcome {
    let start = Instant::now();
    let scenario = Scenario::BALANCE;
    let cfg = e2e_train_config(E2E_SEED);
    let inputs = TrainData {
        train: &splits.train,
        val: &splits.val,
        groups: Some(&splits.groups),
    };
    let mut hashes = Vec::new();
    let mut report = None;
    for _ in 0..2 {
        let model = RouterModel::new(e2e_router(), cfg.seed).map_err(fail)?;
        let out = train(model, &inputs, &cfg, None, |_| Ok(())).map_err(fail)?;
        hashes.push(out.model.store.content_hash());
        let emb = splits.test.require_embeddings().map_err(fail)?;
        let choices: Vec<usize> = (0..splits.test.len())
            .map(|q| out.model.choose(emb.row(q)))
            .collect::<CoreResult<_>>()
            .map_err(fail)?;
        report = Some(evaluate_choices(&splits.test, &choices, scenario, "radialrouter").map_err(fail)?);
    }
    let report = report.expect("two runs");
    collected.push(&splits.test, &report);
    let oracle = baseline_oracle(&splits.test, scenario).map_err(fail)?.score();
    let best = baseline_best_candidate(&splits.test, scenario).map_err(fail)?.1.score();
    let secs = start.elapsed().as_secs_f64();
    let score = report.score();
    ensure(hashes[0] == hashes[1], || format!("parameter hashes differ: {} vs {}", hashes[0], hashes[1]))?;
    ensure(score >= 0.95 * oracle, || format!("score {score:.4} < 0.95 x oracle {oracle:.4}"))?;
    ensure(score > best, || format!("score {score:.4} not above best candidate {best:.4}"))?;
    ensure(secs < 300.0, || format!("took {secs:.1} s, limit 300 s"))?;
    Ok(format!(
        "score {score:.4}, oracle {oracle:.4} (ratio {:.3}), best candidate {best:.4}, hash {}.., {secs:.1} s for two runs",
        score / oracle,
        &hashes[0][..12]
    ))
}

// 6. ablation directionality

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation(splits: &SynthSplits, collected: &mut Collected) -> Outcome {
    let scenario = Scenario::BALANCE;
    let inputs = AblationInputs {
        train: &splits.train,
        val: &splits.val,
        test: &splits.test,
        groups: Some(&splits.groups),
    };
    let variants = [
        AblationVariant::FULL,
        AblationVariant { qq: false, ..AblationVariant::FULL },
        AblationVariant { loss: LossKind::Ce, ..AblationVariant::FULL },
    ];
    let mut medians = Vec::new();
    for v in variants {
        let mut scores = Vec::new();
        for seed in 0..3 {
            let row = ablation_run(&inputs, v, &e2e_router(), &e2e_train_config(seed), scenario).map_err(fail)?;
            collected.push(&splits.test, &row.report);
            scores.push(row.report.score());
        }
        medians.push(median(scores));
    }
    let (kl_qq, kl, ce_qq) = (medians[0], medians[1], medians[2]);
    ensure(kl_qq >= ce_qq, || format!("KL median {kl_qq:.4} < CE median {ce_qq:.4}"))?;
    ensure(kl_qq >= kl - 0.01, || format!("qq median {kl_qq:.4} < no-qq median {kl:.4} - 0.01"))?;
    Ok(format!("medians over 3 seeds: KL+qq {kl_qq:.4}, KL {kl:.4}, CE+qq {ce_qq:.4}"))
}

// 7. complexity

fn complexity() -> Outcome {
    let at = |n: usize, d: usize, t: usize| flop_count(&RadialFormerConfig::new(n, d, t, 2));
    let step = at(2, 32, 2) - at(1, 32, 2);
    for n in 1..128 {
        ensure(at(n + 1, 32, 2) - at(n, 32, 2) == step, || format!("formula not affine in n at n={n}"))?;
    }
    let mut parts = Vec::new();
    for &(n, d, t) in &[(8, 32, 2), (64, 32, 2), (8, 64, 4)] {
        let mut r = rng(31);
        let mut store = ParamStore::new();
        let params = RadialFormerParams::init(RadialFormerConfig::new(n, d, t, 2), &mut store, &mut r).map_err(fail)?;
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let q = g.constant(Tensor::normal(1, d, 1.0, &mut r));
        params.forward_graph(&mut g, &bound, q, None).map_err(fail)?;
        let counted = g.stats().matmul_macs;
        let formula = flop_count(&params.config);
        ensure(counted == formula, || format!("({n},{d},{t}): counted {counted}, formula {formula}"))?;
        parts.push(format!("({n},{d},{t})={counted}"));
    }
    Ok(format!("affine in n with slope {step} at d=32,T=2; {}", parts.join(" ")))
}

// 8. oracle dominance

fn oracle_dominance(collected: &mut Collected) -> Outcome {
    let ds = generate(&SynthConfig::new(5, 4, 15, 8, 0.1, 41)).map_err(fail)?.dataset;
    let mut r = rng(41);
    for scenario in Scenario::NAMED {
        for _ in 0..50 {
            let choices: Vec<usize> = (0..ds.len()).map(|_| r.random_range(0..5)).collect();
            let rep = evaluate_choices(&ds, &choices, scenario, "random_router").map_err(fail)?;
            collected.push(&ds, &rep);
        }
        for rep in eval::constant_reports(&ds, scenario).map_err(fail)? {
            collected.push(&ds, &rep);
        }
    }
    for (ds, rep) in &collected.evaluations {
        check_oracle_dominance(ds, rep.scenario, rep).map_err(fail)?;
        let oracle = baseline_oracle(ds, rep.scenario).map_err(fail)?;
        ensure(oracle.score() >= rep.score(), || format!("{} beats the oracle", rep.router))?;
    }
    Ok(format!("{} evaluations checked", collected.evaluations.len()))
}

// 9. pool growth

fn pool_monotone() -> Outcome {
    let ds = generate(&SynthConfig::new(8, 6, 20, 16, 0.05, 51)).map_err(fail)?.dataset;
    let order: Vec<usize> = (0..ds.catalog().len()).collect();
    let mut parts = Vec::new();
    for scenario in Scenario::NAMED {
        let rows = pool_growth(&ds, &order, scenario, |_, _| Ok(None)).map_err(fail)?;
        for w in rows.windows(2) {
            ensure(w[1].oracle.score >= w[0].oracle.score, || {
                format!("alpha {}: oracle fell from {} to {} at size {}", scenario.alpha, w[0].oracle.score, w[1].oracle.score, w[1].size)
            })?;
        }
        let single = evaluate_choices(&ds, &vec![order[0]; ds.len()], scenario, "single").map_err(fail)?.macro_avg;
        ensure(rows[0].oracle == single && rows[0].best_candidate == single, || {
            format!("size-1 row {:?} differs from the single LLM {single:?}", rows[0].oracle)
        })?;
        parts.push(format!("{:.4}->{:.4}", rows[0].oracle.score, rows.last().expect("rows").oracle.score));
    }
    Ok(format!("synthetic 8-LLM pool, oracle score per scenario {}", parts.join(", ")))
}

// 10. service contract

fn service_contract() -> Outcome {
    let catalog = reference::catalog();
    let model = RouterModel::new(RouterConfig::new(768, catalog.len()), 7).map_err(fail)?;
    ensure(model.config.d == 128 && model.config.layers == 6, || "default router is not d=128, T=6".into())?;
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("checkpoint.json");
    Checkpoint::new(&model, &catalog, 0.02, 7, &LossConfig::default(), 0)
        .and_then(|c| c.save(&path))
        .map_err(fail)?;
    let ck = Checkpoint::load(&path).map_err(fail)?;
    let model = ck.model(&catalog).map_err(fail)?;
    let state = Arc::new(AppState::new(model, catalog, ck.alpha));

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(fail)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(fail)?;
        let addr = listener.local_addr().map_err(fail)?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(service::serve(listener, state, async {
            let _ = rx.await;
        }));
        let client = reqwest::Client::new();
        let url = format!("http://{addr}/route");
        let mut r = rng(61);
        let embedding: Vec<f64> = (0..768).map(|_| r.random_range(-1.0..1.0)).collect();
        let body = serde_json::json!({ "embedding": embedding }).to_string();

        let send = |client: reqwest::Client, url: String, body: String| async move {
            let resp = client
                .post(&url)
                .header("content-type", "application/json")
                .body(body)
                .send()
                .await
                .map_err(fail)?;
            ensure(resp.status().is_success(), || format!("status {}", resp.status()))?;
            resp.json::<RouteResponse>().await.map_err(fail)
        };
        let replies = futures::future::join_all((0..100).map(|_| send(client.clone(), url.clone(), body.clone()))).await;
        let replies: Vec<RouteResponse> = replies.into_iter().collect::<Result<_, _>>()?;
        let first = &replies[0].decision;
        ensure(replies.iter().all(|x| &x.decision == first), || "concurrent decisions differ".into())?;

        let health: Health = client
            .get(format!("http://{addr}/healthz"))
            .send()
            .await
            .map_err(fail)?
            .json()
            .await
            .map_err(fail)?;
        ensure(health.catalog_hash == ck.catalog_hash, || {
            format!("healthz hash {} vs checkpoint {}", health.catalog_hash, ck.catalog_hash)
        })?;

        let mut times = Vec::new();
        for _ in 0..200 {
            let t = Instant::now();
            send(client.clone(), url.clone(), body.clone()).await?;
            times.push(t.elapsed());
        }
        times.sort();
        let p50: Duration = times[times.len() / 2];
        let _ = tx.send(());
        server.await.map_err(fail)?.map_err(fail)?;
        let ms = p50.as_secs_f64() * 1e3;
        ensure(ms < 5.0, || format!("p50 latency {ms:.2} ms, limit 5 ms"))?;
        Ok(format!(
            "100 concurrent identical decisions ({}), healthz hash matches, p50 round trip {ms:.2} ms at n=11 d=128 T=6",
            first.chosen_name
        ))
    })
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut collected = Collected::default();
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        println!("{tag} {name}: {detail} [{secs:.2} s]");
        results.push((name, out, secs));
    };

    record("gradient_suite", &mut gradient_suite);
    record("loss_identities", &mut loss_identities);
    record("reference_rows", &mut || table_rows(&mut collected));
    record("radial_topology_invariant", &mut radial_invariant);
    let splits = synthetic_splits();
    record("end_to_end_synthetic", &mut || match &splits {
        Ok(s) => end_to_end(s, &mut collected),
        Err(e) => Err(e.clone()),
    });
    record("ablation_directionality", &mut || match &splits {
        Ok(s) => ablation(s, &mut collected),
        Err(e) => Err(e.clone()),
    });
    record("complexity", &mut complexity);
    record("oracle_dominance", &mut || oracle_dominance(&mut collected));
    record("pool_growth_monotonicity", &mut pool_monotone);
    record("service_contract", &mut service_contract);

    let failed = results.iter().filter(|(_, o, _)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
