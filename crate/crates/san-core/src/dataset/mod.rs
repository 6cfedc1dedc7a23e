//! Feature-vector storage, file formats, splits, pair sampling, and the
//! synthetic cross-domain generator.

mod sampling;
mod sanf;
mod split;
mod synth;

pub use sampling::{sample_siamese_batch, sample_training_pairs, PairSet, SiameseBatch, SketchImagePair, TrainIndex};
pub use sanf::{load_csv_file, load_feature_file, write_feature_file};
pub use split::{make_split, pick_unseen_classes, ResolvedSplit, SplitMode, SplitSpec};
pub use synth::{synth_generate, SynthConfig};

use crate::engine::Matrix;
use crate::error::{Result, SanError};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Whether a record is a sketch or a real image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Sketch,
    Image,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Sketch => 0,
            Domain::Image => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Domain::Sketch),
            1 => Ok(Domain::Image),
            other => Err(SanError::Data(format!("unknown domain tag {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Sketch => "sketch",
            Domain::Image => "image",
        }
    }
}

/// One sketch or image instance. Vectors are stored at 32-bit precision
/// (matching the file format) and promoted to f64 when batched.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: u64,
    pub label: u32,
    pub domain: Domain,
    pub vector: Vec<f32>,
}

/// An in-memory feature collection with unique ids and a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    feature_dim: usize,
    records: Vec<FeatureRecord>,
    class_names: BTreeMap<u32, String>,
    by_id: HashMap<u64, usize>,
}

impl FeatureStore {
    pub fn new(
        feature_dim: usize,
        records: Vec<FeatureRecord>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.vector.len() != feature_dim {
                return Err(SanError::shape(
                    "FeatureStore record",
                    format!("{feature_dim} entries"),
                    format!("{} entries (id {})", rec.vector.len(), rec.id),
                ));
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(SanError::Numeric(format!("non-finite feature in record {}", rec.id)));
            }
            if by_id.insert(rec.id, i).is_some() {
                return Err(SanError::Data(format!("duplicate record id {}", rec.id)));
            }
        }
        Ok(FeatureStore {
            feature_dim,
            records,
            class_names,
            by_id,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    pub fn get(&self, id: u64) -> Result<&FeatureRecord> {
        self.by_id
            .get(&id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| SanError::Data(format!("unknown record id {id}")))
    }

    /// Labels observed in the records.
    pub fn classes(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn count_in(&self, label: u32, domain: Domain) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == label && r.domain == domain)
            .count()
    }

    /// Promote the listed records into an f64 batch (one row per id).
    pub fn matrix_for_ids(&self, ids: &[u64]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(ids.len() * self.feature_dim);
        for &id in ids {
            let rec = self.get(id)?;
            data.extend(rec.vector.iter().map(|&v| v as f64));
        }
        Matrix::from_vec(ids.len(), self.feature_dim, data)
    }

    pub fn labels_for_ids(&self, ids: &[u64]) -> Result<Vec<u32>> {
        ids.iter().map(|&id| self.get(id).map(|r| r.label)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: u64, label: u32, domain: Domain, vector: Vec<f32>) -> FeatureRecord {
        FeatureRecord {
            id,
            label,
            domain,
            vector,
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let recs = vec![
            record(1, 0, Domain::Sketch, vec![0.0, 1.0]),
            record(1, 0, Domain::Image, vec![2.0, 3.0]),
        ];
        assert!(matches!(
            FeatureStore::new(2, recs, BTreeMap::new()),
            Err(SanError::Data(_))
        ));
    }

    #[test]
    fn rejects_dim_mismatch_and_nan() {
        let recs = vec![record(1, 0, Domain::Sketch, vec![0.0])];
        assert!(matches!(
            FeatureStore::new(2, recs, BTreeMap::new()),
            Err(SanError::Shape { .. })
        ));
        let recs = vec![record(1, 0, Domain::Sketch, vec![0.0, f32::NAN])];
        assert!(matches!(
            FeatureStore::new(2, recs, BTreeMap::new()),
            Err(SanError::Numeric(_))
        ));
    }

    #[test]
    fn matrix_promotion_is_exact() {
        let recs = vec![
            record(5, 0, Domain::Sketch, vec![0.25, -1.5]),
            record(9, 1, Domain::Image, vec![3.0, 0.125]),
        ];
        let store = FeatureStore::new(2, recs, BTreeMap::new()).unwrap();
        let m = store.matrix_for_ids(&[9, 5]).unwrap();
        assert_eq!(m.row(0), &[3.0, 0.125]);
        assert_eq!(m.row(1), &[0.25, -1.5]);
    }
}
