//! Sketch-image pair sampling and Siamese batch construction.

use super::{Domain, FeatureStore, ResolvedSplit};
use crate::engine::Matrix;
use crate::error::{Result, SanError};
use crate::losses::PairLabels;
use crate::rng::{self, tags};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// A matched sketch/image pair from one training class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchImagePair {
    pub sketch_id: u64,
    pub image_id: u64,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub pairs: Vec<SketchImagePair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Train-side record ids grouped by class and domain.
#[derive(Debug, Clone)]
pub struct TrainIndex {
    pub sketches_by_class: BTreeMap<u32, Vec<u64>>,
    pub images_by_class: BTreeMap<u32, Vec<u64>>,
}

impl TrainIndex {
    pub fn build(store: &FeatureStore, split: &ResolvedSplit) -> Result<Self> {
        let mut sketches_by_class: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        let mut images_by_class: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for &id in &split.train {
            let rec = store.get(id)?;
            match rec.domain {
                Domain::Sketch => sketches_by_class.entry(rec.label).or_default().push(id),
                Domain::Image => images_by_class.entry(rec.label).or_default().push(id),
            }
        }
        Ok(TrainIndex {
            sketches_by_class,
            images_by_class,
        })
    }
}

/// Sample exactly `pairs_per_class` same-class sketch/image pairs per seen
/// class, with replacement, from the train split.
pub fn sample_training_pairs(
    store: &FeatureStore,
    split: &ResolvedSplit,
    pairs_per_class: usize,
    seed: u64,
) -> Result<PairSet> {
    if pairs_per_class == 0 {
        return Err(SanError::InvalidConfig("pairs_per_class must be at least 1".into()));
    }
    let index = TrainIndex::build(store, split)?;
    let mut rng = rng::rng_for(seed, tags::PAIRS);
    let mut pairs = Vec::with_capacity(split.seen.len() * pairs_per_class);
    for &label in &split.seen {
        let sketches = index
            .sketches_by_class
            .get(&label)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| SanError::Data(format!("seen class {label} has no train sketches")))?;
        let images = index
            .images_by_class
            .get(&label)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| SanError::Data(format!("seen class {label} has no train images")))?;
        for _ in 0..pairs_per_class {
            pairs.push(SketchImagePair {
                sketch_id: sketches[rng.random_range(0..sketches.len())],
                image_id: images[rng.random_range(0..images.len())],
                label,
            });
        }
    }
    Ok(PairSet { pairs })
}

/// A balanced batch for contrastive training: generated features paired with
/// real images, half same-class and half different-class.
#[derive(Debug, Clone)]
pub struct SiameseBatch {
    pub generated: Matrix,
    pub real: Matrix,
    pub labels: PairLabels,
    pub gen_labels: Vec<u32>,
    pub real_labels: Vec<u32>,
}

/// Draw `batch` pairs (sampling generated rows with replacement): the first
/// half positive (a train image of the same class), the second half negative
/// (a uniform different class, then a uniform image of it).
pub fn sample_siamese_batch(
    generated: &Matrix,
    generated_labels: &[u32],
    store: &FeatureStore,
    split: &ResolvedSplit,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SiameseBatch> {
    if batch == 0 || !batch.is_multiple_of(2) {
        return Err(SanError::InvalidConfig(format!(
            "siamese batch must be even and positive, got {batch}"
        )));
    }
    if generated.rows() == 0 || generated.rows() != generated_labels.len() {
        return Err(SanError::shape(
            "sample_siamese_batch labels",
            format!("{} labels", generated.rows()),
            format!("{}", generated_labels.len()),
        ));
    }
    let index = TrainIndex::build(store, split)?;
    if index.images_by_class.len() < 2 {
        return Err(SanError::Data(
            "cannot form negative pairs: fewer than two classes have train images".into(),
        ));
    }
    let classes_with_images: Vec<u32> = index.images_by_class.keys().copied().collect();

    let half = batch / 2;
    let mut gen_rows = Vec::with_capacity(batch);
    let mut real_ids = Vec::with_capacity(batch);
    let mut same = Vec::with_capacity(batch);
    let mut gen_labels_out = Vec::with_capacity(batch);
    for slot in 0..batch {
        let positive = slot < half;
        let gi = rng.random_range(0..generated.rows());
        let g_label = generated_labels[gi];
        let (real_label, pool) = if positive {
            let pool = index.images_by_class.get(&g_label).ok_or_else(|| {
                SanError::Data(format!("class {g_label} has no train images for positive pairs"))
            })?;
            (g_label, pool)
        } else {
            let others: Vec<u32> = classes_with_images
                .iter()
                .copied()
                .filter(|&c| c != g_label)
                .collect();
            if others.is_empty() {
                return Err(SanError::Data(
                    "cannot form negative pairs: only one class available".into(),
                ));
            }
            let neg_label = others[rng.random_range(0..others.len())];
            (neg_label, &index.images_by_class[&neg_label])
        };
        let image_id = pool[rng.random_range(0..pool.len())];
        gen_rows.push(generated.row(gi).to_vec());
        real_ids.push(image_id);
        same.push(real_label == g_label);
        gen_labels_out.push(g_label);
    }

    let real = store.matrix_for_ids(&real_ids)?;
    let real_labels = store.labels_for_ids(&real_ids)?;
    Ok(SiameseBatch {
        generated: Matrix::from_rows(&gen_rows)?,
        real,
        labels: PairLabels::new(same),
        gen_labels: gen_labels_out,
        real_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_split, FeatureRecord, SplitMode, SplitSpec};
    use std::collections::BTreeMap;

    fn store_with(classes: u32, sketches: usize, images: usize) -> FeatureStore {
        let mut records = Vec::new();
        let mut id = 0;
        for label in 0..classes {
            for k in 0..sketches {
                records.push(FeatureRecord {
                    id,
                    label,
                    domain: Domain::Sketch,
                    vector: vec![label as f32, k as f32],
                });
                id += 1;
            }
            for k in 0..images {
                records.push(FeatureRecord {
                    id,
                    label,
                    domain: Domain::Image,
                    vector: vec![label as f32, -(k as f32)],
                });
                id += 1;
            }
        }
        FeatureStore::new(2, records, BTreeMap::new()).unwrap()
    }

    fn zsl_split(store: &FeatureStore, seen: u32, total: u32) -> ResolvedSplit {
        let spec = SplitSpec::new(
            (0..seen).collect(),
            (seen..total).collect(),
            SplitMode::Zsl,
            1,
        )
        .unwrap();
        make_split(store, &spec).unwrap()
    }

    #[test]
    fn pair_counts_and_integrity() {
        let store = store_with(6, 3, 4);
        let split = zsl_split(&store, 4, 6);
        let pairs = sample_training_pairs(&store, &split, 10, 7).unwrap();
        assert_eq!(pairs.len(), 40);
        for p in &pairs.pairs {
            let s = store.get(p.sketch_id).unwrap();
            let i = store.get(p.image_id).unwrap();
            assert_eq!(s.domain, Domain::Sketch);
            assert_eq!(i.domain, Domain::Image);
            assert_eq!(s.label, p.label);
            assert_eq!(i.label, p.label);
            assert!(split.seen.contains(&p.label));
        }
    }

    #[test]
    fn benchmark_scale_pair_budget() {
        // 125 classes, 104 seen, 1000 pairs per seen class.
        let store = store_with(125, 1, 1);
        let split = zsl_split(&store, 104, 125);
        let pairs = sample_training_pairs(&store, &split, 1000, 0).unwrap();
        assert_eq!(pairs.len(), 104_000);
    }

    #[test]
    fn forced_unique_pairing() {
        let store = store_with(3, 1, 1);
        let split = zsl_split(&store, 2, 3);
        let pairs = sample_training_pairs(&store, &split, 1, 3).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs.pairs {
            assert_eq!(store.get(p.sketch_id).unwrap().label, p.label);
        }
    }

    #[test]
    fn pair_sampling_is_deterministic() {
        let store = store_with(5, 4, 4);
        let split = zsl_split(&store, 3, 5);
        let a = sample_training_pairs(&store, &split, 25, 9).unwrap();
        let b = sample_training_pairs(&store, &split, 25, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_training_pairs(&store, &split, 25, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_domain_is_reported() {
        // Class 1 has no sketches.
        let records = vec![
            FeatureRecord {
                id: 0,
                label: 0,
                domain: Domain::Sketch,
                vector: vec![0.0],
            },
            FeatureRecord {
                id: 1,
                label: 0,
                domain: Domain::Image,
                vector: vec![0.0],
            },
            FeatureRecord {
                id: 2,
                label: 1,
                domain: Domain::Image,
                vector: vec![1.0],
            },
            FeatureRecord {
                id: 3,
                label: 2,
                domain: Domain::Sketch,
                vector: vec![2.0],
            },
            FeatureRecord {
                id: 4,
                label: 2,
                domain: Domain::Image,
                vector: vec![2.0],
            },
        ];
        let store = FeatureStore::new(1, records, BTreeMap::new()).unwrap();
        let spec = SplitSpec::new([0, 1].into(), [2].into(), SplitMode::Zsl, 0).unwrap();
        let split = make_split(&store, &spec).unwrap();
        assert!(matches!(
            sample_training_pairs(&store, &split, 5, 0),
            Err(SanError::Data(_))
        ));
    }

    #[test]
    fn siamese_batch_is_balanced() {
        let store = store_with(5, 3, 6);
        let split = zsl_split(&store, 4, 5);
        let generated = Matrix::from_fn(8, 2, |r, c| (r * 2 + c) as f64);
        let gen_labels: Vec<u32> = (0..8).map(|i| (i % 4) as u32).collect();
        let mut rng = rng::rng_for(3, tags::SIAMESE_BATCH);
        let batch = sample_siamese_batch(&generated, &gen_labels, &store, &split, 32, &mut rng).unwrap();
        assert_eq!(batch.generated.rows(), 32);
        assert_eq!(batch.real.rows(), 32);
        assert_eq!(batch.labels.positives(), 16);
        for i in 0..32 {
            let same = batch.gen_labels[i] == batch.real_labels[i];
            assert_eq!(batch.labels.y_t(i) == 1.0, same);
            assert_eq!(batch.labels.y_f(i), 1.0 - batch.labels.y_t(i));
            assert!(split.seen.contains(&batch.real_labels[i]));
        }
    }

    #[test]
    fn single_class_cannot_form_negatives() {
        let store = store_with(3, 2, 2);
        // Split with a single seen class.
        let spec = SplitSpec::new([0].into(), [1, 2].into(), SplitMode::Zsl, 0).unwrap();
        let split = make_split(&store, &spec).unwrap();
        let generated = Matrix::from_fn(4, 2, |r, c| (r + c) as f64);
        let mut rng = rng::rng_for(3, tags::SIAMESE_BATCH);
        assert!(matches!(
            sample_siamese_batch(&generated, &[0, 0, 0, 0], &store, &split, 8, &mut rng),
            Err(SanError::Data(_))
        ));
    }

    #[test]
    fn odd_batch_rejected() {
        let store = store_with(3, 2, 2);
        let split = zsl_split(&store, 2, 3);
        let generated = Matrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let mut rng = rng::rng_for(3, tags::SIAMESE_BATCH);
        assert!(matches!(
            sample_siamese_batch(&generated, &[0, 1], &store, &split, 7, &mut rng),
            Err(SanError::InvalidConfig(_))
        ));
    }
}
