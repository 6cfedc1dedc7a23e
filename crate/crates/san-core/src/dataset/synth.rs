//! Synthetic cross-domain feature generator for desk-scale runs.
//!
//! Each class gets an image-cluster mean on the unit sphere. Images are that
//! mean plus Gaussian noise; sketches live on the other side of a fixed
//! random orthonormal map `T` with larger noise, simulating the sketch/image
//! domain gap.

use super::{Domain, FeatureRecord, FeatureStore};
use crate::error::{Result, SanError};
use crate::rng::{self, tags};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class_sketches: usize,
    pub per_class_images: usize,
    pub feature_dim: usize,
    /// Sketch noise standard deviation; image noise is half of it.
    pub domain_gap_noise: f64,
    /// Use the identity map instead of a random rotation (noise-free limit).
    pub identity_map: bool,
    /// Intrinsic dimension of the class-mean layout. Real backbone features
    /// put class centroids near a low-dimensional manifold, which is what
    /// makes a 2-d retrieval projection workable; 0 disables the constraint
    /// (means drawn from the full sphere).
    pub mean_latent_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 20,
            per_class_sketches: 25,
            per_class_images: 50,
            feature_dim: 32,
            domain_gap_noise: 0.1,
            identity_map: false,
            mean_latent_dim: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class_sketches == 0 || self.per_class_images == 0 {
            return Err(SanError::InvalidConfig(
                "synthetic class and per-class counts must be at least 1".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(SanError::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.domain_gap_noise < 0.0 || !self.domain_gap_noise.is_finite() {
            return Err(SanError::InvalidConfig(format!(
                "domain_gap_noise must be finite and non-negative, got {}",
                self.domain_gap_noise
            )));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = rng::sample_standard_normal(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random orthonormal `dim x dim` map via Gram-Schmidt on Gaussian rows.
fn random_orthonormal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    random_orthonormal_rows(rng, dim, dim)
}

fn apply_map(map: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    map.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Class means on the unit sphere. With a latent constraint the means live on
/// the sphere of a random `latent_dim`-dimensional subspace and are picked
/// greedily for max-min pairwise separation, so classes do not crowd.
fn class_means(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let latent = if cfg.mean_latent_dim == 0 {
        cfg.feature_dim
    } else {
        cfg.mean_latent_dim.min(cfg.feature_dim)
    };
    let pool_size = (cfg.classes * 16).max(64);
    let pool: Vec<Vec<f64>> = (0..pool_size).map(|_| unit_vector(rng, latent)).collect();
    let mut chosen: Vec<Vec<f64>> = vec![pool[0].clone()];
    while chosen.len() < cfg.classes {
        let best = pool
            .iter()
            .map(|cand| {
                let min_d = chosen
                    .iter()
                    .map(|s| {
                        cand.iter()
                            .zip(s)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                (cand, min_d)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"))
            .expect("nonempty pool")
            .0;
        chosen.push(best.clone());
    }
    if latent == cfg.feature_dim {
        return chosen;
    }
    // Embed the latent sphere into feature space with a random orthonormal
    // basis; unit norms are preserved.
    let basis = random_orthonormal_rows(rng, latent, cfg.feature_dim);
    chosen
        .into_iter()
        .map(|u| {
            let mut v = vec![0.0; cfg.feature_dim];
            for (coef, row) in u.iter().zip(&basis) {
                for (x, b) in v.iter_mut().zip(row) {
                    *x += coef * b;
                }
            }
            v
        })
        .collect()
}

/// `rows` orthonormal vectors of length `dim` via Gram-Schmidt.
fn random_orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while out.len() < rows {
        let mut v = rng::sample_standard_normal(rng, dim);
        for prev in &out {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<FeatureStore> {
    cfg.validate()?;
    let mut rng = rng::rng_for(cfg.seed, tags::SYNTH);
    let map = if cfg.identity_map {
        None
    } else {
        Some(random_orthonormal(&mut rng, cfg.feature_dim))
    };
    let image_noise = cfg.domain_gap_noise * 0.5;
    let means = class_means(&mut rng, cfg);

    let mut records = Vec::with_capacity(cfg.classes * (cfg.per_class_sketches + cfg.per_class_images));
    let mut class_names = BTreeMap::new();
    let mut id = 0u64;
    for label in 0..cfg.classes as u32 {
        class_names.insert(label, format!("class_{label:03}"));
        let mean = means[label as usize].clone();
        let sketch_mean = match &map {
            Some(t) => apply_map(t, &mean),
            None => mean.clone(),
        };
        for _ in 0..cfg.per_class_sketches {
            let noise = rng::sample_normal(&mut rng, cfg.feature_dim, cfg.domain_gap_noise);
            let vector = sketch_mean
                .iter()
                .zip(&noise)
                .map(|(m, n)| (m + n) as f32)
                .collect();
            records.push(FeatureRecord {
                id,
                label,
                domain: Domain::Sketch,
                vector,
            });
            id += 1;
        }
        for _ in 0..cfg.per_class_images {
            let noise = rng::sample_normal(&mut rng, cfg.feature_dim, image_noise);
            let vector = mean.iter().zip(&noise).map(|(m, n)| (m + n) as f32).collect();
            records.push(FeatureRecord {
                id,
                label,
                domain: Domain::Image,
                vector,
            });
            id += 1;
        }
    }
    FeatureStore::new(cfg.feature_dim, records, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_counting() {
        let store = synth_generate(&SynthConfig {
            classes: 20,
            per_class_sketches: 25,
            per_class_images: 50,
            feature_dim: 32,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(store.len(), 20 * 75);
        assert_eq!(store.classes().len(), 20);
        assert_eq!(store.count_in(0, Domain::Sketch), 25);
        assert_eq!(store.count_in(0, Domain::Image), 50);
    }

    #[test]
    fn noise_free_identity_limit() {
        let store = synth_generate(&SynthConfig {
            classes: 3,
            per_class_sketches: 2,
            per_class_images: 2,
            feature_dim: 8,
            domain_gap_noise: 0.0,
            identity_map: true,
            mean_latent_dim: 3,
            seed: 5,
        })
        .unwrap();
        // Sketches equal the class image mean exactly.
        for label in 0..3u32 {
            let sketches: Vec<_> = store
                .records()
                .iter()
                .filter(|r| r.label == label && r.domain == Domain::Sketch)
                .collect();
            let images: Vec<_> = store
                .records()
                .iter()
                .filter(|r| r.label == label && r.domain == Domain::Image)
                .collect();
            assert_eq!(sketches[0].vector, sketches[1].vector);
            assert_eq!(sketches[0].vector, images[0].vector);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            classes: 4,
            per_class_sketches: 3,
            per_class_images: 3,
            feature_dim: 16,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn rejects_zero_counts() {
        let cfg = SynthConfig {
            classes: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&cfg), Err(SanError::InvalidConfig(_))));
    }

    // Brute-force nearest-centroid classification of the generated images.
    #[test]
    fn images_are_centroid_separable_at_default_noise() {
        let cfg = SynthConfig::default();
        let store = synth_generate(&cfg).unwrap();
        let mut centroids: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for rec in store.records().iter().filter(|r| r.domain == Domain::Image) {
            let c = centroids
                .entry(rec.label)
                .or_insert_with(|| vec![0.0; cfg.feature_dim]);
            for (acc, &v) in c.iter_mut().zip(&rec.vector) {
                *acc += v as f64;
            }
            *counts.entry(rec.label).or_default() += 1;
        }
        for (label, c) in centroids.iter_mut() {
            let n = counts[label] as f64;
            for v in c.iter_mut() {
                *v /= n;
            }
        }
        let mut correct = 0;
        let mut total = 0;
        for rec in store.records().iter().filter(|r| r.domain == Domain::Image) {
            let best = centroids
                .iter()
                .map(|(label, c)| {
                    let d: f64 = c
                        .iter()
                        .zip(&rec.vector)
                        .map(|(a, &b)| (a - b as f64) * (a - b as f64))
                        .sum();
                    (label, d)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0;
            total += 1;
            if *best == rec.label {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / total as f64;
        assert!(accuracy >= 0.95, "centroid accuracy {accuracy}");
    }
}
