use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Arc;

use anyhow::{bail, Context};
use radialrouter_core::clustering::{group_queries, SemanticGroups, DEFAULT_GROUPS};
use radialrouter_core::data::routerbench::{adapt, AdaptOptions};
use radialrouter_core::data::synth::generate;
use radialrouter_core::data::{
    reference, stratified_split, Dataset, EmbeddingTable, LlmCatalog, SynthConfig,
};
use radialrouter_core::eval::{
    self, baseline_best_candidate, baseline_oracle, baseline_random, evaluate_choices, evaluate_router,
    AblationInputs, AblationRow, AblationVariant, CosineClassifier, CosineConfig, EvalReport, Metrics, Scenario,
};
use radialrouter_core::router::RouterModel;
use radialrouter_core::training::{train, Checkpoint, EpochRecord, ResumeState, TrainConfig, TrainData};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::service::{self, AppState, RouteOutput};
use crate::{
    AdaptArgs, ClusterArgs, Command, CommonArgs, DataArgs, EvalArgs, RouteArgs, ScenarioArgs, ServeArgs, SplitChoice,
    SynthArgs, TrainArgs, UsageError,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LAST_FILE: &str = "last.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const GROUPS_FILE: &str = "groups.json";

pub fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Adapt(a) => cmd_adapt(&a),
        Command::Cluster(a) => cmd_cluster(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Route(a) => cmd_route(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn out_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Config file plus `--seed`; the seed applies to every stage.
fn load_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    if let Some(p) = &common.config {
        require_file(p, "config")?;
    }
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn resolve_scenario(args: &ScenarioArgs, fallback_alpha: f64) -> anyhow::Result<Scenario> {
    Ok(match (&args.scenario, args.alpha) {
        (Some(name), alpha) => Scenario::parse(name, alpha)?,
        (None, Some(alpha)) => eval::scenario_for(alpha)?,
        (None, None) => eval::scenario_for(fallback_alpha)?,
    })
}

struct Loaded {
    catalog: LlmCatalog,
    dataset: Dataset,
}

fn load_data(d: &DataArgs, need_embeddings: bool, m: &mut RunManifest) -> anyhow::Result<Loaded> {
    require_file(&d.catalog, "catalog")?;
    require_file(&d.dataset, "dataset")?;
    m.input(&d.catalog)?;
    m.input(&d.dataset)?;
    let catalog = LlmCatalog::load(&d.catalog)?;
    let mut dataset = Dataset::load(&d.dataset, &catalog)?;
    match &d.embeddings {
        Some(emb) => {
            require_file(emb, "embeddings")?;
            let manifest = d
                .manifest
                .clone()
                .unwrap_or_else(|| emb.with_file_name("manifest.txt"));
            require_file(&manifest, "embedding manifest")?;
            m.input(emb)?;
            m.input(&manifest)?;
            dataset.attach_embeddings(&EmbeddingTable::load(emb, &manifest)?)?;
        }
        None if need_embeddings => return Err(usage("--embeddings is required for this command")),
        None => {}
    }
    Ok(Loaded { catalog, dataset })
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn split(ds: &Dataset, cfg: &RunConfig) -> anyhow::Result<Splits> {
    let tags: Vec<String> = ds.tags().into_iter().map(String::from).collect();
    let s = stratified_split(&tags, cfg.split.train, cfg.split.val, cfg.seed)?;
    Ok(Splits {
        train: ds.select(&s.train)?,
        val: ds.select(&s.val)?,
        test: ds.select(&s.test)?,
    })
}

fn load_groups(path: Option<&PathBuf>, train: &Dataset, lambda: f64, m: &mut RunManifest) -> anyhow::Result<Option<Vec<usize>>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let Some(path) = path else {
        return Err(usage("lambda > 0 needs --groups (run `radialrouter cluster` first)"));
    };
    require_file(path, "groups file")?;
    m.input(path)?;
    let groups = SemanticGroups::load(path)?;
    let labels = groups.labels_for(&train.ids()).map_err(|e| {
        usage(format!(
            "{e}; the groups file must come from `cluster` with the same seed and split as this run"
        ))
    })?;
    Ok(Some(labels))
}

pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        spread: a.spread,
        ..SynthConfig::new(a.llms, a.groups, a.per_group, a.d_enc, a.noise, a.seed)
    };
    let mut m = RunManifest::start("synth", Some(a.seed), &cfg)?;
    let data = generate(&cfg)?;
    out_dir(&a.out)?;
    let catalog = a.out.join("catalog.json");
    let dataset = a.out.join("dataset.jsonl");
    let emb = a.out.join("embeddings.bin");
    let manifest = a.out.join("manifest.txt");
    data.catalog.save(&catalog)?;
    data.dataset.save(&dataset)?;
    data.embeddings.save(&emb, &manifest)?;
    for p in [&catalog, &dataset, &emb, &manifest] {
        m.output(p);
    }
    m.finish(&a.out)?;
    Ok(())
}

pub fn cmd_adapt(a: &AdaptArgs) -> anyhow::Result<()> {
    require_file(&a.dataset, "RouterBench CSV")?;
    let opts = AdaptOptions {
        cost_scale: a.cost_scale,
        reference_costs: a.reference_costs,
    };
    #[derive(Serialize)]
    struct Snapshot {
        cost_scale: f64,
        reference_costs: bool,
    }
    let mut m = RunManifest::start(
        "adapt",
        None,
        &Snapshot {
            cost_scale: a.cost_scale,
            reference_costs: a.reference_costs,
        },
    )?;
    m.input(&a.dataset)?;
    let (dataset, catalog) = adapt(&a.dataset, &opts)?;
    out_dir(&a.out)?;
    let cp = a.out.join("catalog.json");
    let dp = a.out.join("dataset.jsonl");
    catalog.save(&cp)?;
    dataset.save(&dp)?;
    m.output(&cp);
    m.output(&dp);
    m.finish(&a.out)?;
    Ok(())
}

pub fn cmd_cluster(a: &ClusterArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    let mut m = RunManifest::start("cluster", Some(cfg.seed), &cfg)?;
    let data = load_data(&a.data, true, &mut m)?;
    cfg.check(data.catalog.len())?;
    let splits = split(&data.dataset, &cfg)?;
    let train = &splits.train;
    let tags: BTreeSet<&str> = train.tags().into_iter().collect();
    let n_groups = a
        .groups
        .or(cfg.cluster.n_groups)
        .unwrap_or(if tags.len() >= 2 { tags.len() } else { DEFAULT_GROUPS });
    if n_groups == 0 || n_groups > train.len() {
        return Err(usage(format!(
            "cannot form {n_groups} groups from {} training queries",
            train.len()
        )));
    }
    let groups = group_queries(&train.ids(), train.require_embeddings()?, n_groups, &cfg.cluster, cfg.seed)?;
    out_dir(&a.common.out)?;
    let path = a.common.out.join(GROUPS_FILE);
    groups.save(&path)?;
    m.output(&path);
    m.finish(&a.common.out)?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    let scenario = resolve_scenario(&a.scenario, cfg.train.alpha)?;
    cfg.train.alpha = scenario.alpha;
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    let mut m = RunManifest::start("train", Some(cfg.seed), &cfg)?;
    let data = load_data(&a.data, true, &mut m)?;
    cfg.check(data.catalog.len())?;
    let splits = split(&data.dataset, &cfg)?;
    let groups = load_groups(a.groups.as_ref(), &splits.train, cfg.train.loss.lambda, &mut m)?;

    let (model, resume) = match &a.resume {
        Some(path) => {
            require_file(path, "resume checkpoint")?;
            m.input(path)?;
            let ck = Checkpoint::load(path)?;
            let opt = ck
                .optimizer
                .clone()
                .ok_or_else(|| usage(format!("{} has no optimizer state", path.display())))?;
            let model = ck.model(&data.catalog)?;
            (
                model,
                Some(ResumeState {
                    epoch: ck.epoch,
                    optimizer: opt,
                }),
            )
        }
        None => {
            let d_enc = data.dataset.require_embeddings()?.cols();
            (RouterModel::new(cfg.router.build(d_enc, data.catalog.len()), cfg.seed)?, None)
        }
    };

    out_dir(&a.common.out)?;
    let history_path = a.common.out.join(HISTORY_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&history_path)?;
    let mut history = BufWriter::new(file);
    let inputs = TrainData {
        train: &splits.train,
        val: &splits.val,
        groups: groups.as_deref(),
    };
    let outcome = train(model, &inputs, &cfg.train, resume, |r: &EpochRecord| {
        let line = serde_json::to_string(r)?;
        writeln!(history, "{line}")?;
        Ok(())
    })?;
    history.flush()?;
    drop(history);
    log::info!(
        "trained {} epochs, best epoch {} with validation score {:.4}",
        outcome.epochs_run,
        outcome.best_epoch,
        outcome.best_val.score()
    );

    let best = Checkpoint::new(
        &outcome.model,
        &data.catalog,
        cfg.train.alpha,
        cfg.seed,
        &cfg.train.loss,
        outcome.best_epoch,
    )?;
    let mut last_model = outcome.model.clone();
    last_model.store = outcome.last;
    let last = Checkpoint::new(
        &last_model,
        &data.catalog,
        cfg.train.alpha,
        cfg.seed,
        &cfg.train.loss,
        outcome.epochs_run,
    )?
    .with_optimizer(outcome.optimizer);
    let best_path = a.common.out.join(CHECKPOINT_FILE);
    let last_path = a.common.out.join(LAST_FILE);
    best.save(&best_path)?;
    last.save(&last_path)?;
    for p in [&best_path, &last_path, &history_path] {
        m.output(p);
    }
    m.finish(&a.common.out)?;
    Ok(())
}

fn train_router(
    cfg: &RunConfig,
    splits: &Splits,
    groups: Option<&[usize]>,
    alpha: f64,
) -> anyhow::Result<RouterModel> {
    let mut tc: TrainConfig = cfg.train.clone();
    tc.alpha = alpha;
    let d_enc = splits.train.require_embeddings()?.cols();
    let model = RouterModel::new(cfg.router.build(d_enc, splits.train.catalog().len()), cfg.seed)?;
    let inputs = TrainData {
        train: &splits.train,
        val: &splits.val,
        groups,
    };
    Ok(train(model, &inputs, &tc, None, |_| Ok(()))?.model)
}

fn model_choices(model: &RouterModel, ds: &Dataset) -> anyhow::Result<Vec<usize>> {
    let emb = ds.require_embeddings()?;
    Ok((0..ds.len())
        .map(|q| model.choose(emb.row(q)))
        .collect::<radialrouter_core::Result<Vec<_>>>()?)
}

#[derive(Serialize)]
struct RandomExpectation {
    scenario: String,
    alpha: f64,
    expectation: Metrics,
    trials: usize,
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    let scenarios: Vec<Scenario> = match (&a.scenario.scenario, a.scenario.alpha) {
        (None, None) => Scenario::NAMED.to_vec(),
        (Some(s), None) if s == "all" => Scenario::NAMED.to_vec(),
        _ => vec![resolve_scenario(&a.scenario, 0.0)?],
    };
    let mut m = RunManifest::start("eval", Some(cfg.seed), &cfg)?;
    let experiments = a.sweep || a.pool_growth || a.ablation;
    let data = load_data(&a.data, a.checkpoint.is_some() || experiments, &mut m)?;
    cfg.check(data.catalog.len())?;
    let model = match &a.checkpoint {
        Some(p) => {
            require_file(p, "checkpoint")?;
            m.input(p)?;
            Some(Checkpoint::load(p)?.model(&data.catalog)?)
        }
        None => None,
    };
    let splits = split(&data.dataset, &cfg)?;
    let target = match a.split {
        SplitChoice::Train => &splits.train,
        SplitChoice::Val => &splits.val,
        SplitChoice::Test => &splits.test,
        SplitChoice::All => &data.dataset,
    };
    if target.is_empty() {
        return Err(usage("the selected split is empty"));
    }
    let cosine_ready = target.embeddings().is_some() && splits.train.embeddings().is_some() && !splits.train.is_empty();

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut expectations = Vec::new();
    for &scenario in &scenarios {
        let rnd = baseline_random(target, scenario, cfg.eval.random_trials, cfg.seed)?;
        expectations.push(RandomExpectation {
            scenario: scenario.label(),
            alpha: scenario.alpha,
            expectation: rnd.expectation,
            trials: rnd.trials,
        });
        reports.push(rnd.report);
        reports.push(baseline_best_candidate(target, scenario)?.1);
        reports.push(baseline_oracle(target, scenario)?);
        if cosine_ready {
            let cos_cfg = CosineConfig {
                seed: cfg.seed,
                ..CosineConfig::default()
            };
            let clf = CosineClassifier::fit_dataset(&splits.train, scenario.alpha, &cos_cfg)?;
            let emb = target.require_embeddings()?;
            reports.push(evaluate_router(target, scenario, "cosine_classifier", |q| clf.predict(emb.row(q)))?);
        }
        if let Some(model) = &model {
            let choices = model_choices(model, target)?;
            let r = evaluate_choices(target, &choices, scenario, "radialrouter")?;
            eval::check_oracle_dominance(target, scenario, &r)?;
            let ck = a.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            reports.push(r.with_checkpoint(ck).with_seed(cfg.seed));
        }
    }

    out_dir(&a.common.out)?;
    let out = &a.common.out;
    let summary = out.join("summary.csv");
    let per = out.join("per_dataset.csv");
    let json = out.join("reports.json");
    let exp = out.join("random_expectation.json");
    eval::write_summary_csv(&summary, &reports)?;
    eval::write_per_dataset_csv(&per, &reports)?;
    eval::write_report_json(&json, &reports)?;
    write_json(&exp, &expectations)?;
    for p in [&summary, &per, &json, &exp] {
        m.output(p);
    }

    if experiments {
        let lambda = cfg.train.loss.lambda;
        let groups = load_groups(a.groups.as_ref(), &splits.train, lambda, &mut m)?;
        if a.sweep {
            for p in run_sweep(&cfg, &splits, target, groups.as_deref(), out)? {
                m.output(&p);
            }
        }
        if a.pool_growth {
            for p in run_pool_growth(&cfg, &splits, target, groups.as_deref(), scenarios[0], out)? {
                m.output(&p);
            }
        }
        if a.ablation {
            for p in run_ablation(&cfg, &splits, groups.as_deref(), scenarios[0], out)? {
                m.output(&p);
            }
        }
    }
    m.finish(out)?;
    Ok(())
}

fn run_sweep(
    cfg: &RunConfig,
    splits: &Splits,
    target: &Dataset,
    groups: Option<&[usize]>,
    out: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let rows = eval::alpha_sweep(target, &cfg.eval.sweep_alphas, |scenario| {
        let model = train_router(cfg, splits, groups, scenario.alpha)
            .map_err(|e| radialrouter_core::Error::Config(format!("{e:#}")))?;
        let choices = model_choices(&model, target).map_err(|e| radialrouter_core::Error::Config(format!("{e:#}")))?;
        Ok(vec![("radialrouter".to_string(), choices)])
    })?;
    let csv = out.join("sweep.csv");
    eval::write_sweep_csv(&csv, &rows)?;
    let routers: BTreeSet<&str> = rows.iter().map(|r| r.router.as_str()).collect();
    let series = |f: &dyn Fn(&eval::SweepRow) -> (f64, f64)| -> Vec<(String, Vec<(f64, f64)>)> {
        routers
            .iter()
            .map(|name| {
                (
                    name.to_string(),
                    rows.iter().filter(|r| r.router == *name).map(f).collect(),
                )
            })
            .collect()
    };
    let score = out.join("plot_score_vs_alpha.tsv");
    let frontier = out.join("plot_performance_vs_cost.tsv");
    eval::write_plot_tsv(&score, &series(&|r| (r.alpha, r.score)))?;
    eval::write_plot_tsv(&frontier, &series(&|r| (r.cost, r.performance)))?;
    Ok(vec![csv, score, frontier])
}

fn run_pool_growth(
    cfg: &RunConfig,
    splits: &Splits,
    target: &Dataset,
    groups: Option<&[usize]>,
    scenario: Scenario,
    out: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let catalog = target.catalog();
    let order = reference::pool_order_indices(catalog)
        .filter(|o| o.len() == catalog.len())
        .unwrap_or_else(|| (0..catalog.len()).collect());
    let rows = eval::pool_growth(target, &order, scenario, |pool, restricted| {
        let to_core = |e: anyhow::Error| radialrouter_core::Error::Config(format!("{e:#}"));
        let sub = Splits {
            train: splits.train.restrict_pool(pool)?,
            val: splits.val.restrict_pool(pool)?,
            test: splits.test.restrict_pool(pool)?,
        };
        let model = train_router(cfg, &sub, groups, scenario.alpha).map_err(to_core)?;
        Ok(Some(model_choices(&model, restricted).map_err(to_core)?))
    })?;
    let csv = out.join("pool_growth.csv");
    eval::write_pool_csv(&csv, &rows)?;
    let plot = out.join("plot_pool_growth.tsv");
    let oracle: Vec<(f64, f64)> = rows.iter().map(|r| (r.size as f64, r.oracle.score)).collect();
    let router: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.router.map(|m| (r.size as f64, m.score)))
        .collect();
    eval::write_plot_tsv(&plot, &[("oracle".into(), oracle), ("radialrouter".into(), router)])?;
    Ok(vec![csv, plot])
}

fn run_ablation(
    cfg: &RunConfig,
    splits: &Splits,
    groups: Option<&[usize]>,
    scenario: Scenario,
    out: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let inputs = AblationInputs {
        train: &splits.train,
        val: &splits.val,
        test: &splits.test,
        groups,
    };
    let d_enc = splits.train.require_embeddings()?.cols();
    let base = cfg.router.build(d_enc, splits.train.catalog().len());
    let variants = AblationVariant::table();
    for v in &variants {
        if v.qq && groups.is_none() && cfg.train.loss.lambda > 0.0 {
            return Err(usage("ablation with qq needs --groups"));
        }
        let loss = radialrouter_core::losses::LossConfig {
            kind: v.loss,
            ..cfg.train.loss.clone()
        };
        loss.validate(base.n)
            .map_err(|e| usage(format!("ablation variant {}: {e}", v.name())))?;
    }
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in variants {
        for &seed in &cfg.eval.ablation_seeds {
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            rows.push(eval::ablation_run(&inputs, variant, &base, &tc, scenario)?);
        }
    }
    let csv = out.join("ablation.csv");
    eval::write_ablation_csv(&csv, &rows)?;
    Ok(vec![csv])
}

fn parse_embedding(text: &str) -> anyhow::Result<Vec<f64>> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Input {
        Bare(Vec<f64>),
        Wrapped { embedding: Vec<f64> },
    }
    match serde_json::from_str::<Input>(text.trim()) {
        Ok(Input::Bare(v)) | Ok(Input::Wrapped { embedding: v }) => Ok(v),
        Err(e) => Err(usage(format!("embedding must be a JSON array of numbers: {e}"))),
    }
}

fn encode_text(cmd: &str, text: &str) -> anyhow::Result<Vec<f64>> {
    let mut child = std::process::Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .with_context(|| format!("starting encoder command {cmd:?}"))?;
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(text.as_bytes())?;
    let output = child.wait_with_output()?;
    if !output.status.success() {
        bail!("encoder command exited with {}", output.status);
    }
    parse_embedding(&String::from_utf8_lossy(&output.stdout))
}

/// Checkpoint model against `--catalog` when given, else its own catalog.
fn load_checkpoint(
    path: &Path,
    catalog: Option<&PathBuf>,
    m: &mut RunManifest,
) -> anyhow::Result<(Checkpoint, RouterModel, LlmCatalog)> {
    require_file(path, "checkpoint")?;
    m.input(path)?;
    let ck = Checkpoint::load(path)?;
    let catalog = match catalog {
        Some(p) => {
            require_file(p, "catalog")?;
            m.input(p)?;
            LlmCatalog::load(p)?
        }
        None => ck.catalog.clone(),
    };
    let model = ck.model(&catalog)?;
    Ok((ck, model, catalog))
}

pub fn cmd_route(a: &RouteArgs) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Snapshot<'a> {
        checkpoint: &'a Path,
    }
    let mut m = RunManifest::start("route", None, &Snapshot { checkpoint: &a.checkpoint })?;
    let (ck, model, catalog) = load_checkpoint(&a.checkpoint, a.catalog.as_ref(), &mut m)?;
    m.seed = Some(ck.seed);
    let embedding = if let Some(text) = &a.text {
        encode_text(a.encoder_cmd.as_deref().expect("clap requires encoder_cmd"), text)?
    } else if let Some(e) = &a.embedding {
        parse_embedding(e)?
    } else if let Some(p) = &a.input {
        require_file(p, "input")?;
        m.input(p)?;
        parse_embedding(&std::fs::read_to_string(p)?)?
    } else {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        parse_embedding(&s)?
    };
    let decision: RouteOutput = model.route(&embedding, &catalog)?.into();
    println!("{}", serde_json::to_string(&decision)?);
    if let Some(out) = &a.out {
        out_dir(out)?;
        m.finish(out)?;
    }
    Ok(())
}

pub fn cmd_serve(a: &ServeArgs) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Snapshot<'a> {
        checkpoint: &'a Path,
        bind: &'a str,
    }
    let mut m = RunManifest::start(
        "serve",
        None,
        &Snapshot {
            checkpoint: &a.checkpoint,
            bind: &a.bind,
        },
    )?;
    let (ck, model, catalog) = load_checkpoint(&a.checkpoint, a.catalog.as_ref(), &mut m)?;
    m.seed = Some(ck.seed);
    let state = Arc::new(AppState::new(model, catalog, ck.alpha));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| usage(format!("cannot bind {}: {e}", a.bind)))?;
        eprintln!("listening on {}", listener.local_addr()?);
        if let Some(out) = &a.out {
            out_dir(out)?;
            m.finish(out)?;
        }
        service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
