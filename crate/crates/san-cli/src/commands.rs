//! Subcommand implementations.

use crate::config::RunConfig;
use san_core::dataset::{
    load_csv_file, load_feature_file, make_split, sample_training_pairs, synth_generate,
    write_feature_file, FeatureStore, PairSet, ResolvedSplit, SplitMode, SynthConfig,
};
use san_core::error::{Result, SanError};
use san_core::retrieval::{
    embed_gallery, embed_query, embedding_dump_tsv, evaluate, EvalParams, MetricsReport, Pipeline,
};
use san_core::training::{
    load_checkpoint, save_checkpoint, train_stage1, train_stage2, train_stage3, StageCheckpoint,
    TrainLog,
};
use san_core::verify::{run_gradient_checks, run_mutated_check};
use std::path::PathBuf;

pub struct SynthArgs {
    pub classes: usize,
    pub sketches: usize,
    pub images: usize,
    pub dim: usize,
    pub noise: f64,
    pub latent: usize,
    pub identity_map: bool,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let store = synth_generate(&SynthConfig {
        classes: args.classes,
        per_class_sketches: args.sketches,
        per_class_images: args.images,
        feature_dim: args.dim,
        domain_gap_noise: args.noise,
        identity_map: args.identity_map,
        mean_latent_dim: args.latent,
        seed: args.seed,
    })?;
    write_feature_file(&store, &args.out)?;
    println!(
        "wrote {} records ({} classes, {} sketches + {} images per class, dim {}) to {}",
        store.len(),
        args.classes,
        args.sketches,
        args.images,
        args.dim,
        args.out.display()
    );
    Ok(())
}

fn load_store(cfg: &RunConfig) -> Result<FeatureStore> {
    let path = cfg
        .features
        .as_ref()
        .ok_or_else(|| SanError::InvalidConfig("no feature file configured (set features= or --features)".into()))?;
    if path.extension().is_some_and(|e| e == "csv") {
        load_csv_file(path)
    } else {
        load_feature_file(path)
    }
}

fn split_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("split.txt")
}

fn ckpt_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(format!("{name}.ckpt"))
}

fn load_split(cfg: &RunConfig) -> Result<ResolvedSplit> {
    let path = split_path(cfg);
    if !path.exists() {
        return Err(SanError::Prerequisite(format!(
            "missing split file {} (run `san train --stage 1` first)",
            path.display()
        )));
    }
    ResolvedSplit::load(&path)
}

fn load_ckpt(cfg: &RunConfig, name: &str, hint: &str) -> Result<StageCheckpoint> {
    let path = ckpt_path(cfg, name);
    if !path.exists() {
        return Err(SanError::Prerequisite(format!(
            "missing checkpoint {} ({hint})",
            path.display()
        )));
    }
    load_checkpoint(&path)
}

fn write_log(cfg: &RunConfig, stage_name: &str, log: &TrainLog) -> Result<()> {
    let path = cfg.out_dir.join(format!("train_log_{stage_name}.tsv"));
    std::fs::write(&path, log.to_tsv())?;
    Ok(())
}

fn resolve_and_save_split(cfg: &RunConfig, store: &FeatureStore) -> Result<ResolvedSplit> {
    let spec = cfg.split_spec(store)?;
    let split = make_split(store, &spec)?;
    split.save(&split_path(cfg))?;
    println!(
        "split: {} seen / {} unseen classes, {} train records, {} queries, {} gallery images ({})",
        split.seen.len(),
        split.unseen.len(),
        split.train.len(),
        split.test_query_sketches.len(),
        split.test_gallery_images.len(),
        split.mode.as_str()
    );
    Ok(split)
}

fn training_pairs(cfg: &RunConfig, store: &FeatureStore, split: &ResolvedSplit) -> Result<PairSet> {
    sample_training_pairs(store, split, cfg.pairs_per_class, cfg.seed)
}

fn run_train_stage1(cfg: &RunConfig, store: &FeatureStore, split: &ResolvedSplit) -> Result<StageCheckpoint> {
    let pairs = training_pairs(cfg, store, split)?;
    let (ckpt, log) = train_stage1(&cfg.stage1, &pairs, store)?;
    save_checkpoint(&ckpt, &ckpt_path(cfg, "stage1"))?;
    write_log(cfg, "stage1", &log)?;
    Ok(ckpt)
}

fn run_train_stage2(
    cfg: &RunConfig,
    store: &FeatureStore,
    split: &ResolvedSplit,
    stage1: &StageCheckpoint,
    gamma: f64,
    name: &str,
) -> Result<StageCheckpoint> {
    let pairs = training_pairs(cfg, store, split)?;
    let mut stage_cfg = cfg.stage2.clone();
    stage_cfg.weights.gamma = gamma;
    let bank = cfg.kernel_bank()?;
    let (ckpt, log) = train_stage2(&stage_cfg, &pairs, store, stage1, &bank, cfg.mmd_normalization())?;
    save_checkpoint(&ckpt, &ckpt_path(cfg, name))?;
    write_log(cfg, name, &log)?;
    Ok(ckpt)
}

fn run_train_stage3(
    cfg: &RunConfig,
    store: &FeatureStore,
    split: &ResolvedSplit,
    stage1: &StageCheckpoint,
    stage2: &StageCheckpoint,
) -> Result<StageCheckpoint> {
    let (ckpt, log) = train_stage3(&cfg.stage3, store, split, stage1, stage2)?;
    save_checkpoint(&ckpt, &ckpt_path(cfg, "stage3"))?;
    write_log(cfg, "stage3", &log)?;
    Ok(ckpt)
}

pub fn cmd_train(cfg: &RunConfig, stage: u8) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let store = load_store(cfg)?;
    println!("config digest {}", cfg.digest());
    match stage {
        1 => {
            let split = resolve_and_save_split(cfg, &store)?;
            let ckpt = run_train_stage1(cfg, &store, &split)?;
            println!(
                "stage 1 trained for {} epochs -> {}",
                ckpt.epochs_completed,
                ckpt_path(cfg, "stage1").display()
            );
        }
        2 => {
            let split = load_split(cfg)?;
            let stage1 = load_ckpt(cfg, "stage1", "run `san train --stage 1` first")?;
            let gamma = if cfg.use_mmd { cfg.stage2.weights.gamma } else { 0.0 };
            let ckpt = run_train_stage2(cfg, &store, &split, &stage1, gamma, "stage2")?;
            println!(
                "stage 2 trained for {} epochs (gamma {gamma}) -> {}",
                ckpt.epochs_completed,
                ckpt_path(cfg, "stage2").display()
            );
        }
        3 => {
            let split = load_split(cfg)?;
            let stage1 = load_ckpt(cfg, "stage1", "run `san train --stage 1` first")?;
            let stage2 = load_ckpt(cfg, "stage2", "run `san train --stage 2` first")?;
            let ckpt = run_train_stage3(cfg, &store, &split, &stage1, &stage2)?;
            println!(
                "stage 3 trained for {} epochs -> {}",
                ckpt.epochs_completed,
                ckpt_path(cfg, "stage3").display()
            );
        }
        other => return Err(SanError::InvalidConfig(format!("stage must be 1, 2, or 3, got {other}"))),
    }
    Ok(())
}

fn eval_params(cfg: &RunConfig) -> EvalParams {
    EvalParams {
        k: cfg.k,
        n_z: cfg.n_z,
        seed: cfg.seed,
        ap_denominator: cfg.ap_denominator(),
    }
}

fn report_and_save(cfg: &RunConfig, report: &MetricsReport, suffix: &str) -> Result<()> {
    let tsv = cfg.out_dir.join(format!("metrics_{suffix}.tsv"));
    let txt = cfg.out_dir.join(format!("metrics_{suffix}.txt"));
    report.save(&tsv, &txt)?;
    println!(
        "{suffix}: precision@{} {:.4}, mAP@{} {:.4} over {} queries -> {}",
        report.k,
        report.precision_at_k,
        report.k,
        report.map_at_k,
        report.query_count,
        tsv.display()
    );
    Ok(())
}

fn dump_embeddings(
    cfg: &RunConfig,
    pipeline: &Pipeline,
    split: &ResolvedSplit,
    store: &FeatureStore,
    suffix: &str,
) -> Result<()> {
    let gallery = embed_gallery(pipeline, store, &split.test_gallery_images)?;
    let queries: Result<Vec<_>> = split
        .test_query_sketches
        .iter()
        .map(|&id| embed_query(pipeline, store, id, cfg.n_z, cfg.seed))
        .collect();
    let path = cfg.out_dir.join(format!("embeddings_{suffix}.tsv"));
    std::fs::write(&path, embedding_dump_tsv(&queries?, &gallery))?;
    Ok(())
}

pub struct EvaluateArgs {
    pub mode: SplitMode,
    pub ablation_matrix: bool,
    pub no_stage2: bool,
    pub no_siamese: bool,
}

pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let store = load_store(cfg)?;
    let split = load_split(cfg)?;
    if split.mode != args.mode {
        return Err(SanError::InvalidConfig(format!(
            "evaluate --mode {} but the stored split was resolved in {} mode; retrain stage 1 with split.mode={}",
            args.mode.as_str(),
            split.mode.as_str(),
            args.mode.as_str()
        )));
    }
    println!("config digest {}", cfg.digest());

    if args.ablation_matrix {
        return ablation_matrix(cfg, &store, &split);
    }

    let use_stage2 = cfg.use_stage2 && !args.no_stage2;
    let use_siamese = cfg.use_siamese && !args.no_siamese;
    if use_siamese && !use_stage2 {
        return Err(SanError::InvalidConfig(
            "flag inconsistency: the projector runs on refined features; drop --no-stage2 or add --no-siamese".into(),
        ));
    }
    let stage1 = load_ckpt(cfg, "stage1", "run `san train --stage 1` first")?;
    let stage2 = if use_stage2 {
        Some(load_ckpt(cfg, "stage2", "run `san train --stage 2` first")?)
    } else {
        None
    };
    let stage3 = if use_siamese {
        Some(load_ckpt(cfg, "stage3", "run `san train --stage 3` first")?)
    } else {
        None
    };
    let pipeline = Pipeline::from_checkpoints(&stage1, stage2.as_ref(), stage3.as_ref())?;
    let report = evaluate(&pipeline, &split, &store, &eval_params(cfg), &cfg.digest())?;
    let suffix = args.mode.as_str();
    report_and_save(cfg, &report, suffix)?;
    if use_siamese {
        dump_embeddings(cfg, &pipeline, &split, &store, suffix)?;
    }
    Ok(())
}

/// Train (or reuse) every variant and emit the four ablation rows:
/// stage-1 only, both generators, both generators with MMD, and the full
/// pipeline with the projector.
fn ablation_matrix(cfg: &RunConfig, store: &FeatureStore, split: &ResolvedSplit) -> Result<()> {
    let stage1 = match load_ckpt(cfg, "stage1", "") {
        Ok(ck) => ck,
        Err(SanError::Prerequisite(_)) => {
            println!("training stage 1 for the ablation matrix");
            run_train_stage1(cfg, store, split)?
        }
        Err(e) => return Err(e),
    };
    let stage2_plain = match load_ckpt(cfg, "stage2_nommd", "") {
        Ok(ck) => ck,
        Err(SanError::Prerequisite(_)) => {
            println!("training stage 2 without MMD");
            run_train_stage2(cfg, store, split, &stage1, 0.0, "stage2_nommd")?
        }
        Err(e) => return Err(e),
    };
    let mmd_gamma = if cfg.stage2.weights.gamma > 0.0 {
        cfg.stage2.weights.gamma
    } else {
        0.01
    };
    let stage2_mmd = match load_ckpt(cfg, "stage2", "") {
        Ok(ck) => ck,
        Err(SanError::Prerequisite(_)) => {
            println!("training stage 2 with MMD (gamma {mmd_gamma})");
            run_train_stage2(cfg, store, split, &stage1, mmd_gamma, "stage2")?
        }
        Err(e) => return Err(e),
    };
    let stage3 = match load_ckpt(cfg, "stage3", "") {
        Ok(ck) => ck,
        Err(SanError::Prerequisite(_)) => {
            println!("training stage 3 on the MMD variant");
            run_train_stage3(cfg, store, split, &stage1, &stage2_mmd)?
        }
        Err(e) => return Err(e),
    };

    let params = eval_params(cfg);
    let mode = split.mode.as_str();
    let rows: [(&str, Pipeline); 4] = [
        ("g1", Pipeline::from_checkpoints(&stage1, None, None)?),
        ("g1g2", Pipeline::from_checkpoints(&stage1, Some(&stage2_plain), None)?),
        ("g1g2mmd", Pipeline::from_checkpoints(&stage1, Some(&stage2_mmd), None)?),
        ("full", Pipeline::from_checkpoints(&stage1, Some(&stage2_mmd), Some(&stage3))?),
    ];
    for (name, pipeline) in &rows {
        let report = evaluate(pipeline, split, store, &params, &cfg.digest())?;
        report_and_save(cfg, &report, &format!("{mode}_{name}"))?;
        if name == &"full" {
            dump_embeddings(cfg, pipeline, split, store, &format!("{mode}_{name}"))?;
        }
    }
    Ok(())
}

pub fn cmd_gradcheck(eps: f64, seed: u64, mutate: bool) -> Result<()> {
    const THRESHOLD: f64 = 1e-6;
    println!("gradient checks: eps={eps:e} seed={seed} threshold={THRESHOLD:e}");
    let mut outcomes = run_gradient_checks(eps, seed)?;
    if mutate {
        outcomes.push(run_mutated_check(eps, seed)?);
    }
    let mut failures = 0;
    for o in &outcomes {
        let ok = o.passed(THRESHOLD);
        if !ok {
            failures += 1;
        }
        println!(
            "{} {:<28} max_rel_err={:.3e}",
            if ok { "PASS" } else { "FAIL" },
            o.name,
            o.max_rel_error
        );
    }
    if failures > 0 {
        return Err(SanError::Numeric(format!(
            "{failures} of {} gradient checks exceeded {THRESHOLD:e}",
            outcomes.len()
        )));
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}
