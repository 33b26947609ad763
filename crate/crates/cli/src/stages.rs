//! Stage implementations. Each stage checks that its input artifacts exist
//! (failing fast with every missing path named), reads the persisted run
//! config, does its work, and records a manifest of input/output content
//! hashes. Re-running a stage with unchanged inputs rewrites identical
//! bytes.


use agro_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use agro_core::data::{
    assign_folds, config_sidecar_text, generate, oracle_groups, read_split_csv, write_split_csv,
    Example, TrainView,
};
use agro_core::eval::{
    evaluate, mean_std, read_metrics_json, select_checkpoint, write_metrics_json, MetricsReport,
    SelectionMode, SelectionOutcome,
};
use agro_core::features::{
    extract_features_kfold, read_features, train_erm, write_features, PretrainedAnalog,
    TrainConfig,
};
use agro_core::grouper::{load_grouper, pretrain_kl, save_grouper, Grouper};
use agro_core::matrix::{read_matrix, write_matrix};
use agro_core::nn::NetworkParams;
use agro_core::robust::{
    agro_rounds, fit_slice_model, gdro_train, write_trace_csv, AgroConfig,
};
use agro_core::seeds::{derive_seed, tags};
use agro_core::slice::{
    save_slice_model, slice_report, write_slice_report_csv, Responsibilities,
};
use agro_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{
    read_config, resolve_config, write_config, ExperimentConfig, SelectionRule,
};
use crate::manifest::{hash_file, StageRecorder};
use crate::runs::{require, RunDir};

fn load_run_config(run: &RunDir) -> Result<ExperimentConfig> {
    read_config(&run.config())
}

fn recorder(run: &RunDir, stage: &str, cfg: &ExperimentConfig) -> Result<StageRecorder> {
    let config_hash = hash_file(&run.config())?;
    Ok(StageRecorder::start(&run.dir, stage, cfg.seed, config_hash))
}

fn train_view(run: &RunDir) -> Result<(ExperimentConfig, Vec<Example>, TrainView)> {
    let cfg = load_run_config(run)?;
    let train_csv = run.split_csv("train");
    require(&[&train_csv])?;
    let examples = read_split_csv(&train_csv)?;
    let view = TrainView::from_examples(&examples)?;
    Ok((cfg, examples, view))
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub fn cmd_generate(run: &RunDir, cfg: &ExperimentConfig) -> Result<()> {
    write_config(&run.config(), cfg)?;
    let mut rec = recorder(run, "generate", cfg)?;
    let mut bundle = generate(&cfg.benchmark.generator)?;
    assign_folds(
        &mut bundle.train,
        cfg.benchmark.pipeline.kfold,
        derive_seed(cfg.benchmark.generator.seed, tags::KFOLD),
    )?;
    for (name, split) in [
        ("train", &bundle.train),
        ("dev", &bundle.dev),
        ("test", &bundle.test),
        ("ood", &bundle.ood),
    ] {
        let path = run.split_csv(name);
        write_split_csv(&path, split)?;
        rec.output(&path)?;
    }
    std::fs::write(
        run.generator_sidecar(),
        config_sidecar_text(&cfg.benchmark.generator),
    )?;
    rec.output(&run.generator_sidecar())?;
    rec.finish()
}

// ---------------------------------------------------------------------------
// train-erm
// ---------------------------------------------------------------------------

pub fn cmd_train_erm(run: &RunDir) -> Result<()> {
    let (cfg, _, view) = train_view(run)?;
    let mut rec = recorder(run, "train-erm", &cfg)?;
    rec.input(&run.split_csv("train"))?;
    let out = train_erm(&view, &cfg.benchmark.pipeline.layer_sizes, &cfg.benchmark.erm)?;
    for (epoch, params) in out.checkpoints.iter().enumerate() {
        let stem = run.erm_checkpoint(epoch);
        save_checkpoint(&stem, &Checkpoint::task(params.clone(), cfg.benchmark.erm.seed))?;
        rec.output(&stem.with_extension("params"))?;
    }
    rec.finish()
}

// ---------------------------------------------------------------------------
// extract-features
// ---------------------------------------------------------------------------

pub fn cmd_extract_features(run: &RunDir) -> Result<()> {
    let (cfg, _, view) = train_view(run)?;
    let mut rec = recorder(run, "extract-features", &cfg)?;
    rec.input(&run.split_csv("train"))?;
    let pc = &cfg.benchmark.pipeline;
    let analog = PretrainedAnalog::new(
        view.inputs.cols(),
        pc.d_g,
        derive_seed(pc.agro.seed, tags::PRETRAINED_ANALOG),
    );
    let kfold_config = TrainConfig {
        epochs: pc.kfold_epochs,
        batch_size: pc.agro.batch_size,
        lr: pc.erm_lr,
        weight_decay: pc.agro.weight_decay,
        seed: derive_seed(pc.agro.seed, tags::KFOLD),
    };
    let out = extract_features_kfold(&view, pc.kfold, &pc.layer_sizes, &kfold_config, &analog)?;
    let stem = run.features_stem();
    write_features(
        &stem,
        &out.features,
        &format!("seed={} kfold_seed={}", pc.agro.seed, kfold_config.seed),
    )?;
    rec.output(&stem.with_extension("f64"))?;
    rec.output(&stem.with_extension("manifest"))?;
    for (k, params) in out.fold_models.iter().enumerate() {
        let fstem = run.fold_model(k);
        save_checkpoint(
            &fstem,
            &Checkpoint::task(params.clone(), kfold_config.seed + k as u64),
        )?;
        rec.output(&fstem.with_extension("params"))?;
    }
    rec.finish()
}

// ---------------------------------------------------------------------------
// fit-slices
// ---------------------------------------------------------------------------

/// `variant` is `"gamma1"` (the standard error-aware fit) or `"gamma0"`
/// (plain feature clustering, used by the ablation baseline).
pub fn cmd_fit_slices(run: &RunDir, variant: &str) -> Result<()> {
    let (cfg, _, view) = train_view(run)?;
    let features_stem = run.features_stem();
    require(&[
        &features_stem.with_extension("f64"),
        &features_stem.with_extension("manifest"),
    ])?;
    let mut rec = recorder(run, &format!("fit-slices-{variant}"), &cfg)?;
    rec.input(&features_stem.with_extension("f64"))?;
    let features = read_features(&features_stem)?;
    let pc = &cfg.benchmark.pipeline;
    let gamma = match variant {
        "gamma0" => 0.0,
        _ => pc.slice_gamma,
    };
    let (model, fit) = fit_slice_model(
        &features,
        &view.labels,
        pc.agro.m,
        gamma,
        pc.slice_max_iters,
        pc.slice_tol,
        pc.slice_pca,
        derive_seed(pc.agro.seed, tags::SLICE_MODEL),
    )?;
    let stem = run.slice_model_stem(variant);
    save_slice_model(
        &stem,
        &model,
        &format!(
            "iters={} final_loglik={}",
            fit.loglik_trace.len(),
            fit.loglik_trace.last().unwrap_or(&f64::NAN)
        ),
    )?;
    rec.output(&stem.with_extension("bin"))?;
    let resp_stem = run.responsibilities_stem(variant);
    write_matrix(&resp_stem, &fit.responsibilities.0)?;
    rec.output(&resp_stem.with_extension("f64"))?;

    let probs = features.pred_probs();
    let yhat: Vec<usize> = (0..probs.rows())
        .map(|i| agro_core::features::argmax(probs.row(i)))
        .collect();
    let report = slice_report(&fit, &view.labels, &yhat, cfg.benchmark.generator.n_classes);
    write_slice_report_csv(&run.slice_report(variant), &report)?;
    rec.output(&run.slice_report(variant))?;
    rec.finish()
}

// ---------------------------------------------------------------------------
// pretrain-grouper
// ---------------------------------------------------------------------------

pub fn cmd_pretrain_grouper(run: &RunDir) -> Result<()> {
    let (cfg, _, _) = train_view(run)?;
    let features_stem = run.features_stem();
    let resp_stem = run.responsibilities_stem("gamma1");
    require(&[
        &features_stem.with_extension("f64"),
        &resp_stem.with_extension("f64"),
    ])?;
    let mut rec = recorder(run, "pretrain-grouper", &cfg)?;
    rec.input(&features_stem.with_extension("f64"))?;
    rec.input(&resp_stem.with_extension("f64"))?;
    let features = read_features(&features_stem)?;
    let responsibilities = Responsibilities(read_matrix(&resp_stem)?);
    let pc = &cfg.benchmark.pipeline;
    let fresh = Grouper::new_random(
        features.data.cols(),
        pc.grouper.hidden,
        pc.agro.m,
        derive_seed(pc.agro.seed, tags::GROUPER_INIT),
        if pc.grouper.standardize {
            Some(&features.data)
        } else {
            None
        },
    )?;
    let out = pretrain_kl(
        fresh,
        &features.data,
        &responsibilities,
        pc.grouper.pretrain_epochs,
        pc.grouper.pretrain_batch_size,
        pc.grouper.pretrain_lr,
        derive_seed(pc.agro.seed, tags::GROUPER_PRETRAIN),
    )?;
    save_grouper(&run.grouper_pretrained(), &out.grouper, pc.agro.seed)?;
    rec.output(&run.grouper_pretrained().with_extension("params"))?;
    let mut trace = String::from("epoch,mean_kl\n");
    for (epoch, kl) in out.kl_trace.iter().enumerate() {
        trace.push_str(&format!("{epoch},{kl}\n"));
    }
    std::fs::write(run.grouper_kl_trace(), trace)?;
    rec.output(&run.grouper_kl_trace())?;
    rec.finish()
}

// ---------------------------------------------------------------------------
// train-gdro
// ---------------------------------------------------------------------------

/// Group sources for hard-group training.
pub const GDRO_GROUP_SOURCES: &[&str] = &["oracle", "labels", "slices", "slices-gamma0"];

fn hard_groups_for(
    run: &RunDir,
    source: &str,
    examples: &[Example],
    cfg: &ExperimentConfig,
) -> Result<(Vec<usize>, usize)> {
    match source {
        // Ground-truth groups: evaluation-side supervision, used only for
        // the oracle upper-bound baseline.
        "oracle" => Ok((
            oracle_groups(examples),
            cfg.benchmark.generator.n_groups(),
        )),
        "labels" => Ok((
            examples.iter().map(|e| e.y).collect(),
            cfg.benchmark.generator.n_classes,
        )),
        "slices" | "slices-gamma0" => {
            let variant = if source == "slices" { "gamma1" } else { "gamma0" };
            let resp_stem = run.responsibilities_stem(variant);
            require(&[&resp_stem.with_extension("f64")])?;
            let resp = Responsibilities(read_matrix(&resp_stem)?);
            let k = resp.0.cols();
            Ok((resp.hard_assignment(), k))
        }
        other => Err(Error::Config(format!(
            "unknown group source `{other}`; expected one of {GDRO_GROUP_SOURCES:?}"
        ))),
    }
}

pub fn cmd_train_gdro(run: &RunDir, source: &str) -> Result<()> {
    let (cfg, examples, view) = train_view(run)?;
    let mut rec = recorder(run, &format!("train-gdro-{source}"), &cfg)?;
    rec.input(&run.split_csv("train"))?;
    let (groups, m) = hard_groups_for(run, source, &examples, &cfg)?;
    let mut rc: AgroConfig = cfg.benchmark.pipeline.agro.clone();
    rc.m = m;
    let mut theta = agro_core::nn::init_network(
        &cfg.benchmark.pipeline.layer_sizes,
        derive_seed(rc.seed, tags::THETA_INIT),
    )?;
    let out = gdro_train(
        &view,
        &groups,
        &mut theta,
        cfg.benchmark.erm.epochs,
        &rc,
        derive_seed(rc.seed, tags::ROBUST_BATCHES),
        0,
    )?;
    let model = format!("gdro-{source}");
    for (epoch, params) in out.checkpoints.iter().enumerate() {
        let stem = run.model_checkpoint(&model, epoch);
        save_checkpoint(&stem, &Checkpoint::task(params.clone(), rc.seed))?;
        rec.output(&stem.with_extension("params"))?;
    }
    write_trace_csv(&run.model_trace(&model), &out.traces)?;
    rec.output(&run.model_trace(&model))?;
    rec.finish()
}

// ---------------------------------------------------------------------------
// train-agro
// ---------------------------------------------------------------------------

pub fn cmd_train_agro(run: &RunDir, random_adversary_init: bool) -> Result<()> {
    let (cfg, _, view) = train_view(run)?;
    let features_stem = run.features_stem();
    let grouper_stem = run.grouper_pretrained();
    require(&[
        &features_stem.with_extension("f64"),
        &features_stem.with_extension("manifest"),
        &grouper_stem.with_extension("params"),
        &grouper_stem.with_extension("manifest"),
    ])?;
    let mut rec = recorder(run, "train-agro", &cfg)?;
    rec.input(&run.split_csv("train"))?;
    rec.input(&features_stem.with_extension("f64"))?;
    rec.input(&grouper_stem.with_extension("params"))?;
    let features = read_features(&features_stem)?;
    let pretrained = load_grouper(&grouper_stem)?;
    let mut pc = cfg.benchmark.pipeline.clone();
    pc.random_adversary_init = random_adversary_init;
    let out = agro_rounds(&view, &pc, &features, &pretrained)?;
    for (epoch, params) in out.checkpoints.iter().enumerate() {
        let stem = run.model_checkpoint("agro", epoch);
        save_checkpoint(&stem, &Checkpoint::task(params.clone(), pc.agro.seed))?;
        rec.output(&stem.with_extension("params"))?;
    }
    save_grouper(&run.agro_grouper(), &out.grouper, pc.agro.seed)?;
    rec.output(&run.agro_grouper().with_extension("params"))?;
    write_trace_csv(&run.model_trace("agro"), &out.traces)?;
    rec.output(&run.model_trace("agro"))?;
    let mut info = format!("collapse_warning={}\n", out.adversary_collapsed);
    for (epoch, share) in out.adversary_epoch_shares.iter().enumerate() {
        info.push_str(&format!("epoch_{epoch}_max_share={share}\n"));
    }
    std::fs::write(run.agro_adversary_info(), info)?;
    rec.output(&run.agro_adversary_info())?;
    rec.finish()
}

// ---------------------------------------------------------------------------
// select / evaluate
// ---------------------------------------------------------------------------

pub fn default_rule(model: &str) -> SelectionRule {
    match model {
        "agro" => SelectionRule::Predicted,
        "gdro-oracle" => SelectionRule::Oracle,
        _ => SelectionRule::FullDev,
    }
}

fn load_model_checkpoints(run: &RunDir, model: &str) -> Result<Vec<NetworkParams>> {
    run.model_checkpoints(model)?
        .iter()
        .map(|stem| load_checkpoint(stem).map(|c| c.params))
        .collect()
}

fn run_selection(
    run: &RunDir,
    model: &str,
    rule: SelectionRule,
    cfg: &ExperimentConfig,
    checkpoints: &[NetworkParams],
    dev: &[Example],
) -> Result<SelectionOutcome> {
    let pc = &cfg.benchmark.pipeline;
    match rule {
        SelectionRule::FullDev => select_checkpoint(checkpoints, dev, SelectionMode::FullDev),
        SelectionRule::Oracle => select_checkpoint(
            checkpoints,
            dev,
            SelectionMode::OracleWorstGroup {
                n_groups: cfg.benchmark.generator.n_groups(),
            },
        ),
        SelectionRule::Predicted => {
            let grouper_stem = if model == "agro" {
                run.agro_grouper()
            } else {
                run.grouper_pretrained()
            };
            require(&[&grouper_stem.with_extension("params")])?;
            let grouper = load_grouper(&grouper_stem)?;
            let analog = PretrainedAnalog::new(
                cfg.benchmark.generator.input_dim(),
                pc.d_g,
                derive_seed(pc.agro.seed, tags::PRETRAINED_ANALOG),
            );
            select_checkpoint(
                checkpoints,
                dev,
                SelectionMode::PredictedGroups {
                    grouper: &grouper,
                    analog: &analog,
                    alpha: pc.agro.alpha,
                },
            )
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionFile {
    pub model: String,
    pub rule: String,
    pub selected_checkpoint: usize,
    pub score: f64,
    pub scores: Vec<f64>,
}

pub fn cmd_select(run: &RunDir, model: &str, rule: Option<SelectionRule>) -> Result<SelectionFile> {
    let cfg = load_run_config(run)?;
    let dev_csv = run.split_csv("dev");
    require(&[&dev_csv])?;
    let dev = read_split_csv(&dev_csv)?;
    let checkpoints = load_model_checkpoints(run, model)?;
    let rule = rule.unwrap_or_else(|| default_rule(model));
    let outcome = run_selection(run, model, rule, &cfg, &checkpoints, &dev)?;
    let file = SelectionFile {
        model: model.to_string(),
        rule: format!("{rule:?}"),
        selected_checkpoint: outcome.index,
        score: outcome.score,
        scores: outcome.scores,
    };
    let path = run.selection(model);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Parse(format!("selection serialization: {e}")))?;
    std::fs::write(&path, text + "\n")?;
    Ok(file)
}

pub fn cmd_evaluate(
    run: &RunDir,
    model: &str,
    split: &str,
    rule: Option<SelectionRule>,
) -> Result<MetricsReport> {
    let cfg = load_run_config(run)?;
    let split_csv = run.split_csv(split);
    let dev_csv = run.split_csv("dev");
    let ood_csv = run.split_csv("ood");
    require(&[&split_csv, &dev_csv, &ood_csv])?;
    let dev = read_split_csv(&dev_csv)?;
    let eval_split = read_split_csv(&split_csv)?;
    let ood = read_split_csv(&ood_csv)?;
    let checkpoints = load_model_checkpoints(run, model)?;
    let rule = rule.unwrap_or_else(|| default_rule(model));
    let outcome = run_selection(run, model, rule, &cfg, &checkpoints, &dev)?;
    let chosen = &checkpoints[outcome.index];
    let n_groups = cfg.benchmark.generator.n_groups();
    let split_metrics = evaluate(chosen, &eval_split, Some(n_groups))?;
    let ood_metrics = evaluate(chosen, &ood, None)?;
    let report = MetricsReport {
        avg_accuracy: split_metrics.avg_accuracy,
        per_group: split_metrics.per_group.unwrap_or_default(),
        worst_group_accuracy: split_metrics.worst_group_accuracy,
        ood_accuracy: Some(ood_metrics.avg_accuracy),
        selected_checkpoint: Some(outcome.index),
        selection_score: Some(outcome.score),
    };
    write_metrics_json(&run.metrics(model), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiseedReport {
    pub model: String,
    pub seeds: Vec<u64>,
    pub avg_accuracy_mean: f64,
    pub avg_accuracy_std: f64,
    pub worst_group_accuracy_mean: f64,
    pub worst_group_accuracy_std: f64,
    pub ood_accuracy_mean: f64,
    pub ood_accuracy_std: f64,
}

/// Aggregates per-seed metrics files from `seed-<s>` subruns.
pub fn cmd_evaluate_multiseed(run: &RunDir, model: &str, seeds: &[u64]) -> Result<MultiseedReport> {
    let mut avg = Vec::new();
    let mut worst = Vec::new();
    let mut ood = Vec::new();
    for &s in seeds {
        let sub = run.seed_subrun(s);
        let path = sub.metrics(model);
        let report = read_metrics_json(&path)?;
        avg.push(report.avg_accuracy);
        worst.push(report.worst_group_accuracy.unwrap_or(f64::NAN));
        ood.push(report.ood_accuracy.unwrap_or(f64::NAN));
    }
    let (am, asd) = mean_std(&avg);
    let (wm, wsd) = mean_std(&worst);
    let (om, osd) = mean_std(&ood);
    let report = MultiseedReport {
        model: model.to_string(),
        seeds: seeds.to_vec(),
        avg_accuracy_mean: am,
        avg_accuracy_std: asd,
        worst_group_accuracy_mean: wm,
        worst_group_accuracy_std: wsd,
        ood_accuracy_mean: om,
        ood_accuracy_std: osd,
    };
    let path = run.multiseed_metrics(model);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse(format!("multiseed serialization: {e}")))?;
    std::fs::write(&path, text + "\n")?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// pipeline / sweep
// ---------------------------------------------------------------------------

pub const PIPELINE_MODELS: &[&str] = &["erm", "gdro-oracle", "agro"];

/// Runs every stage in order for one seed, training the ERM baseline, the
/// oracle worst-group baseline, and the adversarial model, then evaluating
/// all three.
pub fn run_pipeline_once(run: &RunDir, cfg: &ExperimentConfig, split: &str) -> Result<()> {
    cmd_generate(run, cfg)?;
    cmd_train_erm(run)?;
    cmd_extract_features(run)?;
    cmd_fit_slices(run, "gamma1")?;
    cmd_pretrain_grouper(run)?;
    cmd_train_gdro(run, "oracle")?;
    cmd_train_agro(run, false)?;
    for model in PIPELINE_MODELS {
        cmd_select(run, model, None)?;
        cmd_evaluate(run, model, split, None)?;
    }
    Ok(())
}

/// Full pipeline over one or more seeds; with several seeds each lands in a
/// `seed-<s>` subrun and aggregate metrics are written at the top.
pub fn cmd_pipeline(run: &RunDir, cfg: &ExperimentConfig, n_seeds: u64, split: &str) -> Result<()> {
    if n_seeds <= 1 {
        return run_pipeline_once(run, cfg, split);
    }
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + n_seeds).collect();
    for &s in &seeds {
        let sub = run.seed_subrun(s);
        let sub_cfg = reseed(cfg, s);
        run_pipeline_once(&sub, &sub_cfg, split)?;
    }
    write_config(&run.config(), cfg)?;
    for model in PIPELINE_MODELS {
        let report = cmd_evaluate_multiseed(run, model, &seeds)?;
        println!(
            "{}: avg {:.4} ({:.4}) worst {:.4} ({:.4}) ood {:.4} ({:.4})",
            report.model,
            report.avg_accuracy_mean,
            report.avg_accuracy_std,
            report.worst_group_accuracy_mean,
            report.worst_group_accuracy_std,
            report.ood_accuracy_mean,
            report.ood_accuracy_std,
        );
    }
    Ok(())
}

/// Re-derives every seed-bearing field from a new top-level seed, leaving
/// all other settings untouched.
pub fn reseed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut out = cfg.clone();
    out.seed = seed;
    out.benchmark.generator.seed = seed;
    out.benchmark.erm.seed = derive_seed(seed, tags::ERM);
    out.benchmark.pipeline.agro.seed = seed;
    out
}

/// One row of the sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub avg_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub ood_accuracy: f64,
}

pub fn cmd_sweep(
    run: &RunDir,
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    n_seeds: u64,
    split: &str,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs a non-empty value list".into()));
    }
    let mut rows = Vec::new();
    for value in values {
        let sub = run.sweep_subrun(param, value);
        let cfg = resolve_config(
            &format!("{}-{param}-{value}", base.run_id),
            None,
            Some(base.seed),
            &[(param.to_string(), value.clone())],
        )?;
        cmd_pipeline(&sub, &cfg, n_seeds, split)?;
        let (avg, worst, ood) = if n_seeds <= 1 {
            let report = read_metrics_json(&sub.metrics("agro"))?;
            (
                report.avg_accuracy,
                report.worst_group_accuracy.unwrap_or(f64::NAN),
                report.ood_accuracy.unwrap_or(f64::NAN),
            )
        } else {
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + n_seeds).collect();
            let report = cmd_evaluate_multiseed(&sub, "agro", &seeds)?;
            (
                report.avg_accuracy_mean,
                report.worst_group_accuracy_mean,
                report.ood_accuracy_mean,
            )
        };
        rows.push(SweepRow {
            value: value.clone(),
            avg_accuracy: avg,
            worst_group_accuracy: worst,
            ood_accuracy: ood,
        });
    }
    let mut csv = String::from("value,avg_accuracy,worst_group_accuracy,ood_accuracy\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.value, r.avg_accuracy, r.worst_group_accuracy, r.ood_accuracy
        ));
    }
    std::fs::create_dir_all(&run.dir)?;
    std::fs::write(run.dir.join(format!("sweep-{param}.csv")), csv)?;
    Ok(rows)
}
