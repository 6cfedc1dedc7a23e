//! Flat `key=value` run configuration with dotted sections.
//!
//! Reference defaults are baked in, so a minimal config only needs paths:
//!
//! ```text
//! features=data/features.sanf
//! out_dir=runs/exp1
//! split.unseen_count=21
//! stage1.epochs=30
//! ```
//!
//! `SAN_SEED` in the environment overrides the configured seed.

use san_core::dataset::{FeatureStore, SplitMode, SplitSpec};
use san_core::error::{Result, SanError};
use san_core::losses::{KernelBank, MmdNormalization};
use san_core::retrieval::ApDenominator;
use san_core::training::StageConfig;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub split_mode: SplitMode,
    pub unseen: Option<Vec<u32>>,
    pub unseen_count: Option<usize>,
    pub gzsl_seen_fraction: f64,
    pub min_gallery_size: Option<usize>,
    pub pairs_per_class: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub mmd_sigmas: Vec<f64>,
    pub mmd_etas: Vec<f64>,
    pub mmd_raw_sum: bool,
    pub k: usize,
    pub n_z: usize,
    pub ap_total_relevant: bool,
    pub use_stage2: bool,
    pub use_mmd: bool,
    pub use_siamese: bool,
}

impl RunConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        let bank = KernelBank::default();
        RunConfig {
            features: None,
            out_dir: PathBuf::from("san-out"),
            seed,
            split_mode: SplitMode::Zsl,
            unseen: None,
            unseen_count: None,
            gzsl_seen_fraction: 0.10,
            min_gallery_size: None,
            pairs_per_class: 1000,
            stage1: StageConfig::stage1_defaults(seed),
            stage2: StageConfig::stage2_defaults(seed),
            stage3: StageConfig::stage3_defaults(seed),
            mmd_sigmas: bank.sigmas().to_vec(),
            mmd_etas: bank.etas().to_vec(),
            mmd_raw_sum: false,
            k: 200,
            n_z: 1,
            ap_total_relevant: false,
            use_stage2: true,
            use_mmd: true,
            use_siamese: true,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SanError::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default_with_seed(0);
        let mut set_seed: Option<u64> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SanError::InvalidConfig(format!("config line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: String| SanError::InvalidConfig(format!("config key {key}: {e}"));
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(e.to_string()));
            let parse_bool = |v: &str| match v {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                other => Err(bad(format!("expected true/false, got {other:?}"))),
            };
            let parse_f64_list = |v: &str| -> Result<Vec<f64>> {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                    .collect()
            };
            match key {
                "features" => cfg.features = Some(PathBuf::from(value)),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "seed" => set_seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "split.mode" => cfg.split_mode = SplitMode::parse(value)?,
                "split.unseen" => {
                    cfg.unseen = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().parse::<u32>().map_err(|e| bad(e.to_string())))
                            .collect::<Result<Vec<u32>>>()?,
                    )
                }
                "split.unseen_count" => cfg.unseen_count = Some(parse_usize(value)?),
                "split.gzsl_seen_fraction" => cfg.gzsl_seen_fraction = parse_f64(value)?,
                "split.min_gallery_size" => cfg.min_gallery_size = Some(parse_usize(value)?),
                "pairs.per_class" => cfg.pairs_per_class = parse_usize(value)?,
                "stage1.lr" => cfg.stage1.learning_rate = parse_f64(value)?,
                "stage1.batch" => cfg.stage1.batch_size = parse_usize(value)?,
                "stage1.epochs" => cfg.stage1.epochs = parse_usize(value)?,
                "stage1.alpha" => cfg.stage1.weights.alpha = parse_f64(value)?,
                "stage1.beta" => cfg.stage1.weights.beta = parse_f64(value)?,
                "stage1.d_pretrain" => cfg.stage1.d_pretrain_epochs = parse_usize(value)?,
                "stage2.lr" => cfg.stage2.learning_rate = parse_f64(value)?,
                "stage2.batch" => cfg.stage2.batch_size = parse_usize(value)?,
                "stage2.epochs" => cfg.stage2.epochs = parse_usize(value)?,
                "stage2.alpha" => cfg.stage2.weights.alpha = parse_f64(value)?,
                "stage2.beta" => cfg.stage2.weights.beta = parse_f64(value)?,
                "stage2.gamma" => cfg.stage2.weights.gamma = parse_f64(value)?,
                "stage2.d_pretrain" => cfg.stage2.d_pretrain_epochs = parse_usize(value)?,
                "stage3.lr" => cfg.stage3.learning_rate = parse_f64(value)?,
                "stage3.batch" => cfg.stage3.batch_size = parse_usize(value)?,
                "stage3.epochs" => cfg.stage3.epochs = parse_usize(value)?,
                "stage3.margin" => cfg.stage3.weights.margin = parse_f64(value)?,
                "mmd.sigmas" => cfg.mmd_sigmas = parse_f64_list(value)?,
                "mmd.etas" => cfg.mmd_etas = parse_f64_list(value)?,
                "mmd.raw_sum" => cfg.mmd_raw_sum = parse_bool(value)?,
                "retrieval.k" => cfg.k = parse_usize(value)?,
                "retrieval.n_z" => cfg.n_z = parse_usize(value)?,
                "retrieval.ap_denominator" => {
                    cfg.ap_total_relevant = match value {
                        "min_rk" => false,
                        "total_relevant" => true,
                        other => return Err(bad(format!("expected min_rk or total_relevant, got {other:?}"))),
                    }
                }
                "ablation.use_stage2" => cfg.use_stage2 = parse_bool(value)?,
                "ablation.use_mmd" => cfg.use_mmd = parse_bool(value)?,
                "ablation.use_siamese" => cfg.use_siamese = parse_bool(value)?,
                other => return Err(SanError::InvalidConfig(format!("unknown config key {other:?}"))),
            }
        }
        if let Some(seed) = set_seed {
            cfg.set_seed(seed);
        }
        if let Ok(env_seed) = std::env::var("SAN_SEED") {
            let seed = env_seed
                .parse::<u64>()
                .map_err(|e| SanError::InvalidConfig(format!("SAN_SEED: {e}")))?;
            cfg.set_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
        self.stage3.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.stage3.validate()?;
        self.kernel_bank()?;
        if self.pairs_per_class == 0 {
            return Err(SanError::InvalidConfig("pairs.per_class must be at least 1".into()));
        }
        if self.k == 0 || self.n_z == 0 {
            return Err(SanError::InvalidConfig("retrieval.k and retrieval.n_z must be at least 1".into()));
        }
        if self.use_mmd && !self.use_stage2 {
            return Err(SanError::InvalidConfig(
                "ablation flags inconsistent: use_mmd requires use_stage2".into(),
            ));
        }
        if self.use_siamese && !self.use_stage2 {
            return Err(SanError::InvalidConfig(
                "ablation flags inconsistent: use_siamese requires use_stage2".into(),
            ));
        }
        if self.unseen.is_some() && self.unseen_count.is_some() {
            return Err(SanError::InvalidConfig(
                "set either split.unseen or split.unseen_count, not both".into(),
            ));
        }
        Ok(())
    }

    pub fn kernel_bank(&self) -> Result<KernelBank> {
        KernelBank::new(self.mmd_sigmas.clone(), self.mmd_etas.clone())
    }

    pub fn mmd_normalization(&self) -> MmdNormalization {
        if self.mmd_raw_sum {
            MmdNormalization::RawSum
        } else {
            MmdNormalization::Mean
        }
    }

    pub fn ap_denominator(&self) -> ApDenominator {
        if self.ap_total_relevant {
            ApDenominator::TotalRelevant
        } else {
            ApDenominator::MinRK
        }
    }

    /// Resolve the seen/unseen partition against an actual store. Explicit
    /// labels win; otherwise `unseen_count` classes are drawn (seeded) from
    /// the store's label set; the default holds out 20% (at least one).
    pub fn split_spec(&self, store: &FeatureStore) -> Result<SplitSpec> {
        let classes: Vec<u32> = store.classes().into_iter().collect();
        if classes.len() < 2 {
            return Err(SanError::Data("store needs at least two classes".into()));
        }
        let unseen: BTreeSet<u32> = match &self.unseen {
            Some(labels) => labels.iter().copied().collect(),
            None => {
                let count = self
                    .unseen_count
                    .unwrap_or_else(|| (classes.len() as f64 * 0.2).round() as usize)
                    .clamp(1, classes.len() - 1);
                san_core::dataset::pick_unseen_classes(store, count, self.seed)?
            }
        };
        let seen: BTreeSet<u32> = classes.iter().copied().filter(|c| !unseen.contains(c)).collect();
        let mut spec = SplitSpec::new(seen, unseen, self.split_mode, self.seed)?;
        spec.gzsl_seen_fraction = self.gzsl_seen_fraction;
        spec.min_gallery_size = self.min_gallery_size;
        Ok(spec)
    }

    /// Canonical form of the effective configuration (sorted keys).
    pub fn canonical_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut push = |k: &str, v: String| lines.push(format!("{k}={v}"));
        push("ablation.use_mmd", self.use_mmd.to_string());
        push("ablation.use_siamese", self.use_siamese.to_string());
        push("ablation.use_stage2", self.use_stage2.to_string());
        push(
            "features",
            self.features
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        push(
            "mmd.etas",
            self.mmd_etas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        push("mmd.raw_sum", self.mmd_raw_sum.to_string());
        push(
            "mmd.sigmas",
            self.mmd_sigmas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        push("out_dir", self.out_dir.display().to_string());
        push("pairs.per_class", self.pairs_per_class.to_string());
        push(
            "retrieval.ap_denominator",
            if self.ap_total_relevant { "total_relevant" } else { "min_rk" }.to_string(),
        );
        push("retrieval.k", self.k.to_string());
        push("retrieval.n_z", self.n_z.to_string());
        push("seed", self.seed.to_string());
        push("split.gzsl_seen_fraction", self.gzsl_seen_fraction.to_string());
        push(
            "split.min_gallery_size",
            self.min_gallery_size.map(|v| v.to_string()).unwrap_or_default(),
        );
        push("split.mode", self.split_mode.as_str().to_string());
        push(
            "split.unseen",
            self.unseen
                .as_ref()
                .map(|v| v.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
                .unwrap_or_default(),
        );
        push(
            "split.unseen_count",
            self.unseen_count.map(|v| v.to_string()).unwrap_or_default(),
        );
        for (name, sc) in [("stage1", &self.stage1), ("stage2", &self.stage2), ("stage3", &self.stage3)] {
            push(&format!("{name}.alpha"), sc.weights.alpha.to_string());
            push(&format!("{name}.batch"), sc.batch_size.to_string());
            push(&format!("{name}.beta"), sc.weights.beta.to_string());
            push(&format!("{name}.d_pretrain"), sc.d_pretrain_epochs.to_string());
            push(&format!("{name}.epochs"), sc.epochs.to_string());
            push(&format!("{name}.gamma"), sc.weights.gamma.to_string());
            push(&format!("{name}.lr"), sc.learning_rate.to_string());
            push(&format!("{name}.margin"), sc.weights.margin.to_string());
        }
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    /// Short hex digest of the effective configuration, embedded in reports.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_text().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
