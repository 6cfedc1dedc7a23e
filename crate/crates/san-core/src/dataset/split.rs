//! Seen/unseen class partitions and the materialized train/test sets.

use super::{Domain, FeatureStore};
use crate::error::{Result, SanError};
use crate::rng::{self, tags};
use rand::seq::SliceRandom;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Zsl,
    Gzsl,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Zsl => "zsl",
            SplitMode::Gzsl => "gzsl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(SplitMode::Zsl),
            "gzsl" => Ok(SplitMode::Gzsl),
            other => Err(SanError::InvalidConfig(format!("unknown split mode {other:?}"))),
        }
    }
}

/// Requested partition of class labels into mutually exclusive seen and
/// unseen sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub seen: BTreeSet<u32>,
    pub unseen: BTreeSet<u32>,
    pub mode: SplitMode,
    /// Fraction of each seen class sampled into the GZSL test side.
    pub gzsl_seen_fraction: f64,
    /// Unseen classes with fewer gallery images than this are dropped.
    pub min_gallery_size: Option<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seen: BTreeSet<u32>, unseen: BTreeSet<u32>, mode: SplitMode, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            seen,
            unseen,
            mode,
            gzsl_seen_fraction: 0.10,
            min_gallery_size: None,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seen.is_empty() || self.unseen.is_empty() {
            return Err(SanError::InvalidConfig(
                "both seen and unseen class sets must be nonempty".into(),
            ));
        }
        if let Some(&overlap) = self.seen.intersection(&self.unseen).next() {
            return Err(SanError::InvalidConfig(format!(
                "class {overlap} appears in both seen and unseen sets"
            )));
        }
        if !(self.gzsl_seen_fraction > 0.0 && self.gzsl_seen_fraction < 1.0) {
            return Err(SanError::InvalidConfig(format!(
                "gzsl_seen_fraction must be in (0,1), got {}",
                self.gzsl_seen_fraction
            )));
        }
        Ok(())
    }
}

/// Materialized record-id sets for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSplit {
    pub mode: SplitMode,
    pub seen: BTreeSet<u32>,
    pub unseen: BTreeSet<u32>,
    pub train: Vec<u64>,
    pub test_query_sketches: Vec<u64>,
    pub test_gallery_images: Vec<u64>,
    pub seed: u64,
}

/// Draw `count` unseen classes from the store's label set, seeded.
pub fn pick_unseen_classes(store: &FeatureStore, count: usize, seed: u64) -> Result<BTreeSet<u32>> {
    let mut classes: Vec<u32> = store.classes().into_iter().collect();
    if classes.len() < 2 {
        return Err(SanError::Data("store needs at least two classes to split".into()));
    }
    let count = count.clamp(1, classes.len() - 1);
    let mut rng = rng::rng_for(seed, tags::SPLIT ^ 0x5EED);
    classes.shuffle(&mut rng);
    Ok(classes.into_iter().take(count).collect())
}

/// Partition the store according to `spec`.
///
/// ZSL: queries and gallery come only from unseen classes. GZSL: additionally
/// a seeded `gzsl_seen_fraction` sample per seen class (floor) of sketches
/// joins the queries and of images joins the gallery; those records leave the
/// train set.
pub fn make_split(store: &FeatureStore, spec: &SplitSpec) -> Result<ResolvedSplit> {
    spec.validate()?;
    let present = store.classes();
    for &label in spec.seen.iter().chain(&spec.unseen) {
        if !present.contains(&label) {
            return Err(SanError::Data(format!("split class {label} has no records in the store")));
        }
    }
    let mut unseen = spec.unseen.clone();
    if let Some(min) = spec.min_gallery_size {
        unseen.retain(|&label| store.count_in(label, Domain::Image) >= min);
        if unseen.is_empty() {
            return Err(SanError::Data(format!(
                "no unseen class has at least {min} gallery images"
            )));
        }
    }
    for &label in &unseen {
        if store.count_in(label, Domain::Image) == 0 {
            return Err(SanError::Data(format!("unseen class {label} has zero images")));
        }
    }

    let mut train = Vec::new();
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for rec in store.records() {
        if spec.seen.contains(&rec.label) {
            train.push(rec.id);
        } else if unseen.contains(&rec.label) {
            match rec.domain {
                Domain::Sketch => queries.push(rec.id),
                Domain::Image => gallery.push(rec.id),
            }
        }
    }

    if spec.mode == SplitMode::Gzsl {
        let mut rng = rng::rng_for(spec.seed, tags::SPLIT);
        let mut held_out = BTreeSet::new();
        for &label in &spec.seen {
            for (domain, sink) in [(Domain::Sketch, &mut queries), (Domain::Image, &mut gallery)] {
                let mut candidates: Vec<u64> = train
                    .iter()
                    .copied()
                    .filter(|&id| {
                        let r = store.get(id).expect("train id");
                        r.label == label && r.domain == domain
                    })
                    .collect();
                let take = (spec.gzsl_seen_fraction * candidates.len() as f64).floor() as usize;
                candidates.shuffle(&mut rng);
                let mut chosen: Vec<u64> = candidates.into_iter().take(take).collect();
                chosen.sort_unstable();
                held_out.extend(chosen.iter().copied());
                sink.extend(chosen);
            }
        }
        train.retain(|id| !held_out.contains(id));
    }

    if queries.is_empty() {
        return Err(SanError::Data("split has no query sketches".into()));
    }
    Ok(ResolvedSplit {
        mode: spec.mode,
        seen: spec.seen.clone(),
        unseen,
        train,
        test_query_sketches: queries,
        test_gallery_images: gallery,
        seed: spec.seed,
    })
}

fn write_ids(out: &mut String, key: &str, ids: &[u64]) {
    let _ = write!(out, "{key}=");
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{id}");
    }
    out.push('\n');
}

fn write_labels(out: &mut String, key: &str, labels: &BTreeSet<u32>) {
    let _ = write!(out, "{key}=");
    for (i, l) in labels.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{l}");
    }
    out.push('\n');
}

impl ResolvedSplit {
    /// Canonical text form (stable line and id order).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("mode={}\n", self.mode.as_str()));
        out.push_str(&format!("seed={}\n", self.seed));
        write_labels(&mut out, "seen", &self.seen);
        write_labels(&mut out, "unseen", &self.unseen);
        write_ids(&mut out, "train", &self.train);
        write_ids(&mut out, "queries", &self.test_query_sketches);
        write_ids(&mut out, "gallery", &self.test_gallery_images);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mode = None;
        let mut seed = None;
        let mut seen = BTreeSet::new();
        let mut unseen = BTreeSet::new();
        let mut train = Vec::new();
        let mut queries = Vec::new();
        let mut gallery = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SanError::Data(format!("bad split line {line:?}")))?;
            let parse_u64s = |v: &str| -> Result<Vec<u64>> {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',')
                    .map(|s| s.parse::<u64>().map_err(|e| SanError::Data(format!("bad id {s:?}: {e}"))))
                    .collect()
            };
            match key {
                "mode" => mode = Some(SplitMode::parse(value)?),
                "seed" => {
                    seed = Some(
                        value
                            .parse::<u64>()
                            .map_err(|e| SanError::Data(format!("bad seed: {e}")))?,
                    )
                }
                "seen" | "unseen" => {
                    let labels = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|s| s.parse::<u32>().map_err(|e| SanError::Data(format!("bad label {s:?}: {e}"))))
                            .collect::<Result<Vec<u32>>>()?
                    };
                    if key == "seen" {
                        seen = labels.into_iter().collect();
                    } else {
                        unseen = labels.into_iter().collect();
                    }
                }
                "train" => train = parse_u64s(value)?,
                "queries" => queries = parse_u64s(value)?,
                "gallery" => gallery = parse_u64s(value)?,
                other => return Err(SanError::Data(format!("unknown split key {other:?}"))),
            }
        }
        Ok(ResolvedSplit {
            mode: mode.ok_or_else(|| SanError::Data("split file missing mode".into()))?,
            seen,
            unseen,
            train,
            test_query_sketches: queries,
            test_gallery_images: gallery,
            seed: seed.ok_or_else(|| SanError::Data("split file missing seed".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SanError::Prerequisite(format!("split file {} not readable: {e}", path.display()))
        })?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureRecord, SynthConfig};
    use std::collections::BTreeMap;

    fn toy_store(classes: u32, sketches: usize, images: usize) -> FeatureStore {
        let mut records = Vec::new();
        let mut id = 0;
        for label in 0..classes {
            for _ in 0..sketches {
                records.push(FeatureRecord {
                    id,
                    label,
                    domain: Domain::Sketch,
                    vector: vec![label as f32, id as f32],
                });
                id += 1;
            }
            for _ in 0..images {
                records.push(FeatureRecord {
                    id,
                    label,
                    domain: Domain::Image,
                    vector: vec![label as f32, -(id as f32)],
                });
                id += 1;
            }
        }
        FeatureStore::new(2, records, BTreeMap::new()).unwrap()
    }

    fn spec(classes: u32, unseen_from: u32, mode: SplitMode) -> SplitSpec {
        let seen: BTreeSet<u32> = (0..unseen_from).collect();
        let unseen: BTreeSet<u32> = (unseen_from..classes).collect();
        SplitSpec::new(seen, unseen, mode, 7).unwrap()
    }

    #[test]
    fn rejects_overlapping_sets() {
        let seen: BTreeSet<u32> = [0, 1, 2].into();
        let unseen: BTreeSet<u32> = [2, 3].into();
        assert!(SplitSpec::new(seen, unseen, SplitMode::Zsl, 0).is_err());
    }

    #[test]
    fn zsl_split_is_pure_and_disjoint() {
        let store = toy_store(6, 3, 4);
        let split = make_split(&store, &spec(6, 4, SplitMode::Zsl)).unwrap();
        assert_eq!(split.train.len(), 4 * 7);
        assert_eq!(split.test_query_sketches.len(), 2 * 3);
        assert_eq!(split.test_gallery_images.len(), 2 * 4);
        let train: BTreeSet<u64> = split.train.iter().copied().collect();
        for id in split.test_query_sketches.iter().chain(&split.test_gallery_images) {
            assert!(!train.contains(id));
            let label = store.get(*id).unwrap().label;
            assert!(split.unseen.contains(&label));
        }
    }

    #[test]
    fn benchmark_scale_configuration_accepted() {
        // 125 classes with 104 seen / 21 unseen, one record per side.
        let store = toy_store(125, 1, 1);
        let split = make_split(&store, &spec(125, 104, SplitMode::Zsl)).unwrap();
        assert_eq!(split.seen.len(), 104);
        assert_eq!(split.unseen.len(), 21);
    }

    #[test]
    fn gzsl_injects_a_floored_fraction_per_class() {
        let store = toy_store(5, 20, 100);
        let split = make_split(&store, &spec(5, 3, SplitMode::Gzsl)).unwrap();
        // Each seen class: floor(0.1 * 20) = 2 sketches, floor(0.1 * 100) = 10 images.
        assert_eq!(split.test_query_sketches.len(), 2 * 20 + 3 * 2);
        assert_eq!(split.test_gallery_images.len(), 2 * 100 + 3 * 10);
        assert_eq!(split.train.len(), 3 * 120 - 3 * 12);
        // Injected ids really left the train set.
        let train: BTreeSet<u64> = split.train.iter().copied().collect();
        for id in split.test_query_sketches.iter().chain(&split.test_gallery_images) {
            assert!(!train.contains(id), "id {id} in both train and test");
        }
    }

    #[test]
    fn gzsl_is_seeded() {
        let store = toy_store(4, 10, 10);
        let a = make_split(&store, &spec(4, 2, SplitMode::Gzsl)).unwrap();
        let b = make_split(&store, &spec(4, 2, SplitMode::Gzsl)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(4, 2, SplitMode::Gzsl);
        other.seed = 8;
        let c = make_split(&store, &other).unwrap();
        assert_ne!(a.test_query_sketches, c.test_query_sketches);
    }

    #[test]
    fn unseen_class_without_images_is_rejected() {
        let mut records = Vec::new();
        for label in 0..3u32 {
            records.push(FeatureRecord {
                id: label as u64 * 2,
                label,
                domain: Domain::Sketch,
                vector: vec![0.0],
            });
            if label != 2 {
                records.push(FeatureRecord {
                    id: label as u64 * 2 + 1,
                    label,
                    domain: Domain::Image,
                    vector: vec![0.0],
                });
            }
        }
        let store = FeatureStore::new(1, records, BTreeMap::new()).unwrap();
        let spec = SplitSpec::new([0, 1].into(), [2].into(), SplitMode::Zsl, 0).unwrap();
        assert!(matches!(make_split(&store, &spec), Err(SanError::Data(_))));
    }

    #[test]
    fn min_gallery_size_filters_small_unseen_classes() {
        let store = toy_store(4, 2, 5);
        let mut s = spec(4, 2, SplitMode::Zsl);
        s.min_gallery_size = Some(6);
        assert!(matches!(make_split(&store, &s), Err(SanError::Data(_))));
        s.min_gallery_size = Some(5);
        let split = make_split(&store, &s).unwrap();
        assert_eq!(split.unseen.len(), 2);
    }

    #[test]
    fn split_text_round_trip() {
        let store = crate::dataset::synth_generate(&SynthConfig {
            classes: 5,
            per_class_sketches: 3,
            per_class_images: 4,
            feature_dim: 8,
            domain_gap_noise: 0.1,
            identity_map: false,
            mean_latent_dim: 3,
            seed: 3,
        })
        .unwrap();
        let spec = SplitSpec::new((0..3).collect(), (3..5).collect(), SplitMode::Gzsl, 11).unwrap();
        let split = make_split(&store, &spec).unwrap();
        let text = split.to_text();
        let back = ResolvedSplit::from_text(&text).unwrap();
        assert_eq!(split, back);
    }
}
