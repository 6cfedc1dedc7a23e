//! Stage-wise training loops: discriminator pretraining, alternating
//! adversarial updates, frozen earlier stages, and per-epoch loss logging.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, StageCheckpoint};

use crate::dataset::{sample_siamese_batch, FeatureStore, PairSet, ResolvedSplit, TrainIndex};
use crate::engine::{adam_step, AdamState, DenseNet, Matrix};
use crate::error::{Result, SanError};
use crate::losses::{
    combine_stage_loss, loss_adv_discriminator, loss_adv_generator, loss_contrastive, loss_mmd_with,
    loss_rec, loss_reg, KernelBank, LossWeights, MmdNormalization, StageLossParts,
};
use crate::models::{build_siamese, build_stage1, build_stage2, NoiseSpec};
use crate::rng::{self, tags};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;
use std::time::Instant;

/// Per-stage hyperparameters. The stage defaults follow the reference
/// schedules; everything is overridable.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: u8,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub d_pretrain_epochs: usize,
    pub seed: u64,
}

impl StageConfig {
    pub fn stage1_defaults(seed: u64) -> Self {
        StageConfig {
            stage: 1,
            learning_rate: 1e-5,
            batch_size: 50,
            epochs: 30,
            weights: LossWeights {
                alpha: 0.01,
                beta: 1e-4,
                gamma: 0.0,
                margin: 5.0,
            },
            d_pretrain_epochs: 2,
            seed,
        }
    }

    pub fn stage2_defaults(seed: u64) -> Self {
        StageConfig {
            stage: 2,
            epochs: 35,
            weights: LossWeights {
                alpha: 0.01,
                beta: 1e-4,
                gamma: 0.01,
                margin: 5.0,
            },
            ..Self::stage1_defaults(seed)
        }
    }

    pub fn stage3_defaults(seed: u64) -> Self {
        StageConfig {
            stage: 3,
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 20,
            weights: LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                margin: 5.0,
            },
            d_pretrain_epochs: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(SanError::InvalidConfig(format!("stage must be 1..=3, got {}", self.stage)));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(SanError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(SanError::InvalidConfig("batch size must be at least 1".into()));
        }
        self.weights.validate()
    }

    /// Canonical key-sorted `key=value` block used inside checkpoints.
    pub fn canonical_text(&self) -> String {
        format!(
            "alpha={}\nbatch_size={}\nbeta={}\nd_pretrain_epochs={}\nepochs={}\ngamma={}\nlearning_rate={}\nmargin={}\nseed={}\nstage={}\n",
            self.weights.alpha,
            self.batch_size,
            self.weights.beta,
            self.d_pretrain_epochs,
            self.epochs,
            self.weights.gamma,
            self.learning_rate,
            self.weights.margin,
            self.seed,
            self.stage,
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SanError::Data(format!("bad config line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| SanError::Data(format!("config block missing key {k}")))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| SanError::Data(format!("bad {k}: {e}")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|e| SanError::Data(format!("bad {k}: {e}")))
        };
        Ok(StageConfig {
            stage: get("stage")?
                .parse::<u8>()
                .map_err(|e| SanError::Data(format!("bad stage: {e}")))?,
            learning_rate: parse_f64("learning_rate")?,
            batch_size: parse_usize("batch_size")?,
            epochs: parse_usize("epochs")?,
            weights: LossWeights {
                alpha: parse_f64("alpha")?,
                beta: parse_f64("beta")?,
                gamma: parse_f64("gamma")?,
                margin: parse_f64("margin")?,
            },
            d_pretrain_epochs: parse_usize("d_pretrain_epochs")?,
            seed: get("seed")?
                .parse::<u64>()
                .map_err(|e| SanError::Data(format!("bad seed: {e}")))?,
        })
    }
}

/// One per-epoch record of loss components and wall time.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub values: BTreeMap<String, f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub stage: u8,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    fn new(stage: u8) -> Self {
        TrainLog {
            stage,
            epochs: Vec::new(),
        }
    }

    pub fn get(&self, epoch: usize, key: &str) -> Option<f64> {
        self.epochs.get(epoch).and_then(|r| r.values.get(key)).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let keys: Vec<&String> = self
            .epochs
            .first()
            .map(|r| r.values.keys().collect())
            .unwrap_or_default();
        out.push_str("epoch");
        for k in &keys {
            out.push('\t');
            out.push_str(k);
        }
        out.push_str("\twall_secs\n");
        for rec in &self.epochs {
            out.push_str(&rec.epoch.to_string());
            for k in &keys {
                out.push('\t');
                out.push_str(&rec.values.get(*k).copied().unwrap_or(f64::NAN).to_string());
            }
            out.push('\t');
            out.push_str(&format!("{:.3}\n", rec.wall_secs));
        }
        out
    }
}

fn numeric_context<T>(r: Result<T>, stage: u8, phase: &str, epoch: usize, batch: usize) -> Result<T> {
    r.map_err(|e| match e {
        SanError::Numeric(msg) => SanError::Numeric(format!(
            "stage {stage} {phase} epoch {epoch} batch {batch}: {msg}"
        )),
        other => other,
    })
}

fn batch_features(store: &FeatureStore, pairs: &PairSet, idxs: &[usize]) -> Result<(Matrix, Matrix)> {
    let sketch_ids: Vec<u64> = idxs.iter().map(|&i| pairs.pairs[i].sketch_id).collect();
    let image_ids: Vec<u64> = idxs.iter().map(|&i| pairs.pairs[i].image_id).collect();
    Ok((store.matrix_for_ids(&sketch_ids)?, store.matrix_for_ids(&image_ids)?))
}

/// One BCE update of a discriminator on a real batch and a fake batch.
fn discriminator_step(
    d: &mut DenseNet,
    adam: &mut AdamState,
    real: &Matrix,
    fake: &Matrix,
    lr: f64,
) -> Result<f64> {
    let (p_real, tr_real) = d.forward(real)?;
    let (p_fake, tr_fake) = d.forward(fake)?;
    let (loss, g_real, g_fake) = loss_adv_discriminator(&p_real, &p_fake)?;
    let (mut grads, _) = d.backward(&tr_real, &g_real)?;
    let (grads_fake, _) = d.backward(&tr_fake, &g_fake)?;
    grads.add_scaled_assign(&grads_fake, 1.0);
    adam_step(adam, d, &grads, lr)?;
    Ok(loss)
}

/// Generator-side adversarial loss and its gradient with respect to the fake
/// batch, backpropagated through a frozen discriminator.
fn generator_adv_grad(d: &DenseNet, fake: &Matrix) -> Result<(f64, Matrix)> {
    let (p, tr) = d.forward(fake)?;
    let (loss, gp) = loss_adv_generator(&p)?;
    let (_, input_grad) = d.backward(&tr, &gp)?;
    Ok((loss, input_grad))
}

struct EpochAccumulator {
    sums: BTreeMap<&'static str, f64>,
    batches: usize,
}

impl EpochAccumulator {
    fn new() -> Self {
        EpochAccumulator {
            sums: BTreeMap::new(),
            batches: 0,
        }
    }

    fn add(&mut self, key: &'static str, v: f64) {
        *self.sums.entry(key).or_insert(0.0) += v;
    }

    fn finish(self, epoch: usize, started: Instant, extra: &[(&'static str, f64)]) -> Result<EpochRecord> {
        let mut values: BTreeMap<String, f64> = self
            .sums
            .into_iter()
            .map(|(k, v)| (k.to_string(), v / self.batches.max(1) as f64))
            .collect();
        for (k, v) in extra {
            values.insert((*k).to_string(), *v);
        }
        for (k, v) in &values {
            if !v.is_finite() {
                return Err(SanError::Numeric(format!("non-finite logged value {k}={v} at epoch {epoch}")));
            }
        }
        Ok(EpochRecord {
            epoch,
            values,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }
}

/// Stage-1 training: the discriminator is pretrained alone, then every batch
/// makes exactly one discriminator update followed by one generator/regressor
/// update on the weighted composite.
pub fn train_stage1(
    cfg: &StageConfig,
    pairs: &PairSet,
    store: &FeatureStore,
) -> Result<(StageCheckpoint, TrainLog)> {
    cfg.validate()?;
    if cfg.stage != 1 {
        return Err(SanError::InvalidConfig(format!("train_stage1 got stage {}", cfg.stage)));
    }
    if pairs.is_empty() {
        return Err(SanError::Data("no training pairs".into()));
    }
    let feature_dim = store.feature_dim();
    let mut nets = build_stage1(feature_dim, cfg.seed)?;
    let noise = NoiseSpec {
        dim: nets.arch.noise_dim(),
        seed: cfg.seed,
    };
    let mut noise_rng = noise.stream();
    let mut shuffle_rng = rng::rng_for(cfg.seed, tags::SHUFFLE);
    let mut adam_g = AdamState::new(&nets.g1);
    let mut adam_d = AdamState::new(&nets.d1);
    let mut adam_r = AdamState::new(&nets.r1);
    let mut log = TrainLog::new(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    // Epoch budget 0 means "return the initialization untouched".
    if cfg.epochs > 0 {
        for epoch in 0..cfg.d_pretrain_epochs {
            order.shuffle(&mut shuffle_rng);
            for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
                let mut step = || -> Result<()> {
                    let (c, x) = batch_features(store, pairs, idxs)?;
                    let z = noise.sample(&mut noise_rng, c.rows());
                    let xhat1 = nets.g1.forward_no_trace(&c.hconcat(&z)?)?;
                    discriminator_step(&mut nets.d1, &mut adam_d, &x, &xhat1, cfg.learning_rate)?;
                    Ok(())
                };
                numeric_context(step(), 1, "pretrain", epoch, b)?;
            }
        }
    }

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochAccumulator::new();
        let mut d_steps = 0usize;
        let mut g_steps = 0usize;
        for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
            let mut step = |acc: &mut EpochAccumulator| -> Result<()> {
                let (c, x) = batch_features(store, pairs, idxs)?;
                let z = noise.sample(&mut noise_rng, c.rows());
                let (xhat1, g_trace) = nets.g1.forward(&c.hconcat(&z)?)?;

                let l_d = discriminator_step(&mut nets.d1, &mut adam_d, &x, &xhat1, cfg.learning_rate)?;
                d_steps += 1;

                let (l_adv_g, adv_grad) = generator_adv_grad(&nets.d1, &xhat1)?;
                let (chat, r_trace) = nets.r1.forward(&xhat1)?;
                let (l_reg, chat_grad) = loss_reg(&c, &chat)?;
                let (mut r_grads, reg_input_grad) = nets.r1.backward(&r_trace, &chat_grad)?;
                let (l_rec, mut xhat_grad) = loss_rec(&x, &xhat1)?;
                xhat_grad.add_scaled_assign(&adv_grad, cfg.weights.alpha);
                xhat_grad.add_scaled_assign(&reg_input_grad, cfg.weights.beta);
                let (g_grads, _) = nets.g1.backward(&g_trace, &xhat_grad)?;
                adam_step(&mut adam_g, &mut nets.g1, &g_grads, cfg.learning_rate)?;
                r_grads.scale_in_place(cfg.weights.beta);
                adam_step(&mut adam_r, &mut nets.r1, &r_grads, cfg.learning_rate)?;
                g_steps += 1;

                let total = combine_stage_loss(
                    &StageLossParts {
                        rec: l_rec,
                        adv_g: l_adv_g,
                        reg: l_reg,
                        mmd: None,
                    },
                    &cfg.weights,
                )?;
                acc.add("l_rec", l_rec);
                acc.add("l_adv_d", l_d);
                acc.add("l_adv_g", l_adv_g);
                acc.add("l_reg", l_reg);
                acc.add("l_total", total);
                Ok(())
            };
            numeric_context(step(&mut acc), 1, "train", epoch, b)?;
            acc.batches += 1;
        }
        log.epochs.push(acc.finish(
            epoch,
            started,
            &[("d_steps", d_steps as f64), ("g_steps", g_steps as f64)],
        )?);
    }

    let ckpt = StageCheckpoint {
        stage: 1,
        feature_dim: feature_dim as u32,
        epochs_completed: cfg.epochs as u32,
        config: cfg.clone(),
        nets: vec![
            ("G1".into(), nets.g1),
            ("D1".into(), nets.d1),
            ("R1".into(), nets.r1),
        ],
    };
    Ok((ckpt, log))
}

/// Stage-2 training. The stage-1 generator stays frozen and supplies fresh
/// coarse features per batch; the composite adds the per-batch MMD between
/// refined and real features.
pub fn train_stage2(
    cfg: &StageConfig,
    pairs: &PairSet,
    store: &FeatureStore,
    stage1: &StageCheckpoint,
    bank: &KernelBank,
    mmd_norm: MmdNormalization,
) -> Result<(StageCheckpoint, TrainLog)> {
    cfg.validate()?;
    if cfg.stage != 2 {
        return Err(SanError::InvalidConfig(format!("train_stage2 got stage {}", cfg.stage)));
    }
    if pairs.is_empty() {
        return Err(SanError::Data("no training pairs".into()));
    }
    if stage1.feature_dim as usize != store.feature_dim() {
        return Err(SanError::Prerequisite(format!(
            "stage-1 checkpoint feature_dim {} does not match store feature_dim {}",
            stage1.feature_dim,
            store.feature_dim()
        )));
    }
    let frozen1 = stage1.stage1_nets()?;
    let feature_dim = store.feature_dim();
    let mut nets = build_stage2(feature_dim, cfg.seed)?;
    let noise = NoiseSpec {
        dim: frozen1.arch.noise_dim(),
        seed: cfg.seed,
    };
    let mut noise_rng = noise.stream();
    let mut shuffle_rng = rng::rng_for(cfg.seed, tags::SHUFFLE);
    let mut adam_g = AdamState::new(&nets.g2);
    let mut adam_d = AdamState::new(&nets.d2);
    let mut adam_r = AdamState::new(&nets.r2);
    let mut log = TrainLog::new(2);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    if cfg.epochs > 0 {
        for epoch in 0..cfg.d_pretrain_epochs {
            order.shuffle(&mut shuffle_rng);
            for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
                let mut step = || -> Result<()> {
                    let (c, x) = batch_features(store, pairs, idxs)?;
                    let z = noise.sample(&mut noise_rng, c.rows());
                    let xhat1 = frozen1.generate(&c, &z)?;
                    let xhat2 = nets.g2.forward_no_trace(&c.hconcat(&xhat1)?)?;
                    discriminator_step(&mut nets.d2, &mut adam_d, &x, &xhat2, cfg.learning_rate)?;
                    Ok(())
                };
                numeric_context(step(), 2, "pretrain", epoch, b)?;
            }
        }
    }

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochAccumulator::new();
        let mut d_steps = 0usize;
        let mut g_steps = 0usize;
        for (b, idxs) in order.chunks(cfg.batch_size).enumerate() {
            let mut step = |acc: &mut EpochAccumulator| -> Result<()> {
                let (c, x) = batch_features(store, pairs, idxs)?;
                let z = noise.sample(&mut noise_rng, c.rows());
                let xhat1 = frozen1.generate(&c, &z)?;
                let (xhat2, g_trace) = nets.g2.forward(&c.hconcat(&xhat1)?)?;

                let l_d = discriminator_step(&mut nets.d2, &mut adam_d, &x, &xhat2, cfg.learning_rate)?;
                d_steps += 1;

                let (l_adv_g, adv_grad) = generator_adv_grad(&nets.d2, &xhat2)?;
                let (chat, r_trace) = nets.r2.forward(&xhat2)?;
                let (l_reg, chat_grad) = loss_reg(&c, &chat)?;
                let (mut r_grads, reg_input_grad) = nets.r2.backward(&r_trace, &chat_grad)?;
                let (l_mmd, mmd_grad) = loss_mmd_with(&x, &xhat2, bank, mmd_norm)?;
                let (l_rec, mut xhat_grad) = loss_rec(&x, &xhat2)?;
                xhat_grad.add_scaled_assign(&adv_grad, cfg.weights.alpha);
                xhat_grad.add_scaled_assign(&reg_input_grad, cfg.weights.beta);
                if cfg.weights.gamma > 0.0 {
                    xhat_grad.add_scaled_assign(&mmd_grad, cfg.weights.gamma);
                }
                let (g_grads, _) = nets.g2.backward(&g_trace, &xhat_grad)?;
                adam_step(&mut adam_g, &mut nets.g2, &g_grads, cfg.learning_rate)?;
                r_grads.scale_in_place(cfg.weights.beta);
                adam_step(&mut adam_r, &mut nets.r2, &r_grads, cfg.learning_rate)?;
                g_steps += 1;

                let total = combine_stage_loss(
                    &StageLossParts {
                        rec: l_rec,
                        adv_g: l_adv_g,
                        reg: l_reg,
                        mmd: Some(l_mmd),
                    },
                    &cfg.weights,
                )?;
                acc.add("l_rec", l_rec);
                acc.add("l_adv_d", l_d);
                acc.add("l_adv_g", l_adv_g);
                acc.add("l_reg", l_reg);
                acc.add("l_mmd", l_mmd);
                acc.add("l_total", total);
                Ok(())
            };
            numeric_context(step(&mut acc), 2, "train", epoch, b)?;
            acc.batches += 1;
        }
        log.epochs.push(acc.finish(
            epoch,
            started,
            &[("d_steps", d_steps as f64), ("g_steps", g_steps as f64)],
        )?);
    }

    let ckpt = StageCheckpoint {
        stage: 2,
        feature_dim: feature_dim as u32,
        epochs_completed: cfg.epochs as u32,
        config: cfg.clone(),
        nets: vec![
            ("G2".into(), nets.g2),
            ("D2".into(), nets.d2),
            ("R2".into(), nets.r2),
        ],
    };
    Ok((ckpt, log))
}

/// Stage-3 training: both generators frozen, the shared-weight projector
/// trained on balanced contrastive batches.
pub fn train_stage3(
    cfg: &StageConfig,
    store: &FeatureStore,
    split: &ResolvedSplit,
    stage1: &StageCheckpoint,
    stage2: &StageCheckpoint,
) -> Result<(StageCheckpoint, TrainLog)> {
    cfg.validate()?;
    if cfg.stage != 3 {
        return Err(SanError::InvalidConfig(format!("train_stage3 got stage {}", cfg.stage)));
    }
    if stage1.feature_dim != stage2.feature_dim || stage1.feature_dim as usize != store.feature_dim() {
        return Err(SanError::Prerequisite(format!(
            "checkpoint feature dims ({}, {}) must match store feature_dim {}",
            stage1.feature_dim,
            stage2.feature_dim,
            store.feature_dim()
        )));
    }
    let frozen1 = stage1.stage1_nets()?;
    let frozen2 = stage2.stage2_nets()?;
    let index = TrainIndex::build(store, split)?;
    if index.images_by_class.len() < 2 {
        return Err(SanError::Data(
            "stage-3 needs at least two train classes with images".into(),
        ));
    }
    let mut sketch_pool: Vec<(u64, u32)> = Vec::new();
    for (&label, ids) in &index.sketches_by_class {
        sketch_pool.extend(ids.iter().map(|&id| (id, label)));
    }
    if sketch_pool.is_empty() {
        return Err(SanError::Data("stage-3 needs train sketches".into()));
    }

    let feature_dim = store.feature_dim();
    let mut siamese = build_siamese(feature_dim, cfg.seed)?;
    let noise = NoiseSpec {
        dim: frozen1.arch.noise_dim(),
        seed: cfg.seed,
    };
    let mut noise_rng = noise.stream();
    let mut batch_rng = rng::rng_for(cfg.seed, tags::SIAMESE_BATCH);
    let mut adam = AdamState::new(&siamese.net);
    let mut log = TrainLog::new(3);
    let batches_per_epoch = (sketch_pool.len() / cfg.batch_size).max(1);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut acc = EpochAccumulator::new();
        for b in 0..batches_per_epoch {
            let mut step = |acc: &mut EpochAccumulator| -> Result<()> {
                let mut sketch_ids = Vec::with_capacity(cfg.batch_size);
                let mut labels = Vec::with_capacity(cfg.batch_size);
                for _ in 0..cfg.batch_size {
                    let (id, label) = sketch_pool[batch_rng.random_range(0..sketch_pool.len())];
                    sketch_ids.push(id);
                    labels.push(label);
                }
                let c = store.matrix_for_ids(&sketch_ids)?;
                let z = noise.sample(&mut noise_rng, c.rows());
                let xhat1 = frozen1.generate(&c, &z)?;
                let xhat2 = frozen2.refine(&c, &xhat1)?;
                let batch = sample_siamese_batch(&xhat2, &labels, store, split, cfg.batch_size, &mut batch_rng)?;

                let (o_g, tr_g) = siamese.net.forward(&batch.generated)?;
                let (o_r, tr_r) = siamese.net.forward(&batch.real)?;
                let (l_c, grad_g, grad_r) = loss_contrastive(&o_g, &o_r, &batch.labels, cfg.weights.margin)?;
                let (mut grads, _) = siamese.net.backward(&tr_g, &grad_g)?;
                let (grads_r, _) = siamese.net.backward(&tr_r, &grad_r)?;
                // Shared weights: both twins contribute to the same parameters.
                grads.add_scaled_assign(&grads_r, 1.0);
                adam_step(&mut adam, &mut siamese.net, &grads, cfg.learning_rate)?;

                let mut pos = (0.0, 0usize);
                let mut neg = (0.0, 0usize);
                for i in 0..o_g.rows() {
                    let d = o_g.row_sq_dist(i, &o_r, i).sqrt();
                    if batch.labels.y_t(i) == 1.0 {
                        pos = (pos.0 + d, pos.1 + 1);
                    } else {
                        neg = (neg.0 + d, neg.1 + 1);
                    }
                }
                acc.add("l_contrastive", l_c);
                acc.add("pos_dist", pos.0 / pos.1.max(1) as f64);
                acc.add("neg_dist", neg.0 / neg.1.max(1) as f64);
                Ok(())
            };
            numeric_context(step(&mut acc), 3, "train", epoch, b)?;
            acc.batches += 1;
        }
        log.epochs.push(acc.finish(epoch, started, &[])?);
    }

    let ckpt = StageCheckpoint {
        stage: 3,
        feature_dim: feature_dim as u32,
        epochs_completed: cfg.epochs as u32,
        config: cfg.clone(),
        nets: vec![("NN".into(), siamese.net)],
    };
    Ok((ckpt, log))
}
