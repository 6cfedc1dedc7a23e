//! The retrieval pipeline (synthesize, refine, project, rank) and the
//! Precision@K / mAP@K evaluation harness.

use crate::dataset::{Domain, FeatureStore, ResolvedSplit, SplitMode};
use crate::engine::Matrix;
use crate::error::{Result, SanError};
use crate::models::{NoiseSpec, SiameseNet, Stage1Nets, Stage2Nets};
use crate::rng::{self, tags};
use crate::training::StageCheckpoint;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Which space queries and gallery are compared in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSpace {
    /// Siamese 2-d projection of refined features vs projected gallery.
    Siamese,
    /// Raw refined features vs raw gallery image features.
    Stage2Raw,
    /// Raw stage-1 features vs raw gallery image features.
    Stage1Raw,
}

impl EmbeddingSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingSpace::Siamese => "siamese",
            EmbeddingSpace::Stage2Raw => "stage2_raw",
            EmbeddingSpace::Stage1Raw => "stage1_raw",
        }
    }
}

/// Trained networks assembled for retrieval. Stage-2 and the projector are
/// optional to support the ablation rows; the projector requires stage-2.
pub struct Pipeline {
    pub stage1: Stage1Nets,
    pub stage2: Option<Stage2Nets>,
    pub siamese: Option<SiameseNet>,
}

impl Pipeline {
    pub fn from_checkpoints(
        stage1: &StageCheckpoint,
        stage2: Option<&StageCheckpoint>,
        stage3: Option<&StageCheckpoint>,
    ) -> Result<Self> {
        let nets1 = stage1.stage1_nets()?;
        let nets2 = stage2.map(StageCheckpoint::stage2_nets).transpose()?;
        let siamese = stage3.map(StageCheckpoint::siamese_net).transpose()?;
        for (name, dim) in [
            ("stage-2", stage2.map(|c| c.feature_dim)),
            ("stage-3", stage3.map(|c| c.feature_dim)),
        ] {
            if let Some(dim) = dim {
                if dim != stage1.feature_dim {
                    return Err(SanError::Prerequisite(format!(
                        "{name} checkpoint feature_dim {dim} does not match stage-1 ({})",
                        stage1.feature_dim
                    )));
                }
            }
        }
        if siamese.is_some() && nets2.is_none() {
            return Err(SanError::Prerequisite(
                "projector evaluation needs the stage-2 checkpoint it was trained on".into(),
            ));
        }
        Ok(Pipeline {
            stage1: nets1,
            stage2: nets2,
            siamese,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.stage1.arch.feature_dim
    }

    pub fn space(&self) -> EmbeddingSpace {
        if self.siamese.is_some() {
            EmbeddingSpace::Siamese
        } else if self.stage2.is_some() {
            EmbeddingSpace::Stage2Raw
        } else {
            EmbeddingSpace::Stage1Raw
        }
    }

    /// Generate features for the batch and lift them into the retrieval space.
    fn embed_generated(&self, c: &Matrix, z: &Matrix) -> Result<Matrix> {
        let xhat1 = self.stage1.generate(c, z)?;
        let xhat = match &self.stage2 {
            Some(s2) => s2.refine(c, &xhat1)?,
            None => xhat1,
        };
        match &self.siamese {
            Some(s) => s.project(&xhat),
            None => Ok(xhat),
        }
    }

    /// Lift real gallery features into the retrieval space.
    fn embed_real(&self, features: &Matrix) -> Result<Matrix> {
        match &self.siamese {
            Some(s) => s.project(features),
            None => Ok(features.clone()),
        }
    }
}

/// Gallery images lifted into the retrieval space, one row per image.
#[derive(Debug, Clone)]
pub struct ProjectedGallery {
    pub ids: Vec<u64>,
    pub labels: Vec<u32>,
    pub embeddings: Matrix,
}

pub fn embed_gallery(pipeline: &Pipeline, store: &FeatureStore, gallery_ids: &[u64]) -> Result<ProjectedGallery> {
    if gallery_ids.is_empty() {
        return Err(SanError::Data("empty gallery".into()));
    }
    let features = store.matrix_for_ids(gallery_ids)?;
    let embeddings = pipeline.embed_real(&features)?;
    embeddings.validate_finite("gallery embeddings")?;
    Ok(ProjectedGallery {
        ids: gallery_ids.to_vec(),
        labels: store.labels_for_ids(gallery_ids)?,
        embeddings,
    })
}

/// One query sketch lifted into the retrieval space, averaged over `n_z`
/// noise draws.
#[derive(Debug, Clone)]
pub struct QueryEmbedding {
    pub sketch_id: u64,
    pub label: u32,
    pub embedding: Vec<f64>,
    pub noise_samples: usize,
}

/// The per-query noise stream depends only on (seed, sketch id), so results
/// do not depend on evaluation order.
pub fn embed_query(
    pipeline: &Pipeline,
    store: &FeatureStore,
    sketch_id: u64,
    n_z: usize,
    seed: u64,
) -> Result<QueryEmbedding> {
    if n_z == 0 {
        return Err(SanError::InvalidConfig("n_z must be at least 1".into()));
    }
    let rec = store.get(sketch_id)?;
    if rec.domain != Domain::Sketch {
        return Err(SanError::Data(format!("query record {sketch_id} is not a sketch")));
    }
    let row: Vec<f64> = rec.vector.iter().map(|&v| v as f64).collect();
    let c = Matrix::from_rows(&vec![row; n_z])?;
    let noise = NoiseSpec {
        dim: pipeline.stage1.arch.noise_dim(),
        seed: rng::derive_seed(seed, sketch_id.wrapping_add(tags::QUERY_NOISE)),
    };
    let z = noise.sample(&mut noise.stream(), n_z);
    let embedded = pipeline.embed_generated(&c, &z)?;
    let dim = embedded.cols();
    let mut mean = vec![0.0; dim];
    for r in 0..embedded.rows() {
        for (m, &v) in mean.iter_mut().zip(embedded.row(r)) {
            *m += v / n_z as f64;
        }
    }
    Ok(QueryEmbedding {
        sketch_id,
        label: rec.label,
        embedding: mean,
        noise_samples: n_z,
    })
}

/// Gallery indices sorted by ascending Euclidean distance to the query,
/// ties broken by ascending image id.
pub fn rank(query: &QueryEmbedding, gallery: &ProjectedGallery) -> Result<Vec<usize>> {
    if gallery.ids.is_empty() {
        return Err(SanError::Data("cannot rank an empty gallery".into()));
    }
    if query.embedding.len() != gallery.embeddings.cols() {
        return Err(SanError::shape(
            "rank",
            format!("{} dims", gallery.embeddings.cols()),
            format!("{}", query.embedding.len()),
        ));
    }
    let mut order: Vec<(f64, u64, usize)> = (0..gallery.ids.len())
        .map(|i| {
            let d: f64 = query
                .embedding
                .iter()
                .zip(gallery.embeddings.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, gallery.ids[i], i)
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    Ok(order.into_iter().map(|(_, _, i)| i).collect())
}

/// Fraction of the first `min(k, len)` ranked labels matching the query label.
pub fn precision_at_k(ranked_labels: &[u32], query_label: u32, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(SanError::InvalidConfig("k must be at least 1".into()));
    }
    if ranked_labels.is_empty() {
        return Err(SanError::Data("precision over an empty ranking".into()));
    }
    let kk = k.min(ranked_labels.len());
    let hits = ranked_labels[..kk].iter().filter(|&&l| l == query_label).count();
    Ok(hits as f64 / kk as f64)
}

/// Denominator used by AP@K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApDenominator {
    /// `min(R, K)`: a perfect prefix scores 1 even when `R > K`.
    MinRK,
    /// Plain `R` (total relevant in the gallery).
    TotalRelevant,
}

pub fn average_precision_at_k(ranked_labels: &[u32], query_label: u32, k: usize) -> Result<f64> {
    average_precision_at_k_with(ranked_labels, query_label, k, ApDenominator::MinRK)
}

pub fn average_precision_at_k_with(
    ranked_labels: &[u32],
    query_label: u32,
    k: usize,
    denom: ApDenominator,
) -> Result<f64> {
    if k == 0 {
        return Err(SanError::InvalidConfig("k must be at least 1".into()));
    }
    if ranked_labels.is_empty() {
        return Err(SanError::Data("AP over an empty ranking".into()));
    }
    let total_relevant = ranked_labels.iter().filter(|&&l| l == query_label).count();
    if total_relevant == 0 {
        return Ok(0.0);
    }
    let cutoff = k.min(ranked_labels.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &label) in ranked_labels[..cutoff].iter().enumerate() {
        if label == query_label {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    let d = match denom {
        ApDenominator::MinRK => total_relevant.min(k),
        ApDenominator::TotalRelevant => total_relevant,
    };
    Ok(sum / d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub queries: usize,
    pub precision: f64,
    pub map: f64,
}

/// Aggregate retrieval quality for one evaluation run. Overall values are
/// per-query means; the macro variants average per-class means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mode: SplitMode,
    pub space: EmbeddingSpace,
    pub k: usize,
    pub n_z: usize,
    pub seed: u64,
    pub config_digest: String,
    pub query_count: usize,
    pub precision_at_k: f64,
    pub map_at_k: f64,
    pub precision_at_k_macro: f64,
    pub map_at_k_macro: f64,
    pub per_class: BTreeMap<u32, ClassMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub k: usize,
    pub n_z: usize,
    pub seed: u64,
    pub ap_denominator: ApDenominator,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            k: 200,
            n_z: 1,
            seed: 0,
            ap_denominator: ApDenominator::MinRK,
        }
    }
}

/// Run the full retrieval protocol over every query sketch in the split.
pub fn evaluate(
    pipeline: &Pipeline,
    split: &ResolvedSplit,
    store: &FeatureStore,
    params: &EvalParams,
    config_digest: &str,
) -> Result<MetricsReport> {
    if pipeline.feature_dim() != store.feature_dim() {
        return Err(SanError::Prerequisite(format!(
            "pipeline feature_dim {} does not match store feature_dim {}",
            pipeline.feature_dim(),
            store.feature_dim()
        )));
    }
    if split.test_query_sketches.is_empty() {
        return Err(SanError::Data("split has no query sketches".into()));
    }
    let gallery = embed_gallery(pipeline, store, &split.test_gallery_images)?;

    let mut sum_p = 0.0;
    let mut sum_ap = 0.0;
    let mut per_class: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
    for &sketch_id in &split.test_query_sketches {
        let query = embed_query(pipeline, store, sketch_id, params.n_z, params.seed)?;
        let order = rank(&query, &gallery)?;
        let ranked_labels: Vec<u32> = order.iter().map(|&i| gallery.labels[i]).collect();
        let p = precision_at_k(&ranked_labels, query.label, params.k)?;
        let ap = average_precision_at_k_with(&ranked_labels, query.label, params.k, params.ap_denominator)?;
        sum_p += p;
        sum_ap += ap;
        let entry = per_class.entry(query.label).or_insert((0, 0.0, 0.0));
        entry.0 += 1;
        entry.1 += p;
        entry.2 += ap;
    }
    let n = split.test_query_sketches.len() as f64;
    let per_class: BTreeMap<u32, ClassMetrics> = per_class
        .into_iter()
        .map(|(label, (q, p, ap))| {
            (
                label,
                ClassMetrics {
                    queries: q,
                    precision: p / q as f64,
                    map: ap / q as f64,
                },
            )
        })
        .collect();
    let classes = per_class.len() as f64;
    let report = MetricsReport {
        mode: split.mode,
        space: pipeline.space(),
        k: params.k,
        n_z: params.n_z,
        seed: params.seed,
        config_digest: config_digest.to_string(),
        query_count: split.test_query_sketches.len(),
        precision_at_k: sum_p / n,
        map_at_k: sum_ap / n,
        precision_at_k_macro: per_class.values().map(|c| c.precision).sum::<f64>() / classes,
        map_at_k_macro: per_class.values().map(|c| c.map).sum::<f64>() / classes,
        per_class,
    };
    for v in [
        report.precision_at_k,
        report.map_at_k,
        report.precision_at_k_macro,
        report.map_at_k_macro,
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SanError::Numeric(format!("metric {v} outside [0,1]")));
        }
    }
    Ok(report)
}

impl MetricsReport {
    /// Tab-separated rows: one per class plus an overall row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scope\tlabel\tqueries\tprecision_at_k\tmap_at_k\n");
        for (label, c) in &self.per_class {
            let _ = writeln!(
                out,
                "class\t{label}\t{}\t{:.6}\t{:.6}",
                c.queries, c.precision, c.map
            );
        }
        let _ = writeln!(
            out,
            "overall\t-\t{}\t{:.6}\t{:.6}",
            self.query_count, self.precision_at_k, self.map_at_k
        );
        out
    }

    /// `key: value` lines in a stable order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_digest: {}", self.config_digest);
        let _ = writeln!(out, "k: {}", self.k);
        let _ = writeln!(out, "map_at_k: {:.6}", self.map_at_k);
        let _ = writeln!(out, "map_at_k_macro: {:.6}", self.map_at_k_macro);
        let _ = writeln!(out, "mode: {}", self.mode.as_str());
        let _ = writeln!(out, "n_z: {}", self.n_z);
        let _ = writeln!(out, "precision_at_k: {:.6}", self.precision_at_k);
        let _ = writeln!(out, "precision_at_k_macro: {:.6}", self.precision_at_k_macro);
        let _ = writeln!(out, "query_count: {}", self.query_count);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "space: {}", self.space.as_str());
        for (label, c) in &self.per_class {
            let _ = writeln!(
                out,
                "class.{label}.queries: {}\nclass.{label}.precision_at_k: {:.6}\nclass.{label}.map_at_k: {:.6}",
                c.queries, c.precision, c.map
            );
        }
        out
    }

    pub fn save(&self, tsv_path: &Path, text_path: &Path) -> Result<()> {
        std::fs::write(tsv_path, self.to_tsv())?;
        std::fs::write(text_path, self.to_text())?;
        Ok(())
    }
}

/// Query and gallery points with labels, for external plotting.
pub fn embedding_dump_tsv(queries: &[QueryEmbedding], gallery: &ProjectedGallery) -> String {
    let mut out = String::from("kind\tid\tlabel");
    let dim = gallery.embeddings.cols();
    for d in 0..dim {
        let _ = write!(out, "\tdim{d}");
    }
    out.push('\n');
    for q in queries {
        let _ = write!(out, "query\t{}\t{}", q.sketch_id, q.label);
        for v in &q.embedding {
            let _ = write!(out, "\t{v:.6}");
        }
        out.push('\n');
    }
    for i in 0..gallery.ids.len() {
        let _ = write!(out, "gallery\t{}\t{}", gallery.ids[i], gallery.labels[i]);
        for v in gallery.embeddings.row(i) {
            let _ = write!(out, "\t{v:.6}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery_from(points: &[(u64, u32, [f64; 2])]) -> ProjectedGallery {
        ProjectedGallery {
            ids: points.iter().map(|p| p.0).collect(),
            labels: points.iter().map(|p| p.1).collect(),
            embeddings: Matrix::from_rows(&points.iter().map(|p| p.2.to_vec()).collect::<Vec<_>>()).unwrap(),
        }
    }

    fn query_at(v: [f64; 2]) -> QueryEmbedding {
        QueryEmbedding {
            sketch_id: 1000,
            label: 0,
            embedding: v.to_vec(),
            noise_samples: 1,
        }
    }

    #[test]
    fn rank_puts_zero_distance_first_and_breaks_ties_by_id() {
        let gallery = gallery_from(&[(9, 0, [5.0, 5.0]), (5, 0, [1.0, 1.0])]);
        let order = rank(&query_at([1.0, 1.0]), &gallery).unwrap();
        assert_eq!(order.iter().map(|&i| gallery.ids[i]).collect::<Vec<_>>(), vec![5, 9]);

        let gallery = gallery_from(&[(7, 0, [1.0, 0.0]), (3, 0, [-1.0, 0.0])]);
        let order = rank(&query_at([0.0, 0.0]), &gallery).unwrap();
        assert_eq!(order.iter().map(|&i| gallery.ids[i]).collect::<Vec<_>>(), vec![3, 7]);
    }

    #[test]
    fn rank_is_invariant_under_gallery_permutation() {
        let points = [
            (4, 0, [0.1, 0.3]),
            (2, 1, [1.0, -0.5]),
            (8, 0, [-0.4, 0.2]),
            (6, 2, [0.9, 0.9]),
        ];
        let gallery = gallery_from(&points);
        let q = query_at([0.0, 0.0]);
        let ids: Vec<u64> = rank(&q, &gallery).unwrap().iter().map(|&i| gallery.ids[i]).collect();
        let mut shuffled = points;
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        let gallery2 = gallery_from(&shuffled);
        let ids2: Vec<u64> = rank(&q, &gallery2).unwrap().iter().map(|&i| gallery2.ids[i]).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn rank_is_invariant_under_isometry() {
        let points = [
            (1, 0, [0.4, 0.1]),
            (2, 1, [-0.7, 0.9]),
            (3, 0, [1.2, -0.3]),
            (4, 2, [0.0, 0.8]),
        ];
        let gallery = gallery_from(&points);
        let q = query_at([0.2, -0.1]);
        let base: Vec<u64> = rank(&q, &gallery).unwrap().iter().map(|&i| gallery.ids[i]).collect();
        // Rotate by angle t and translate by (3, -2).
        let t: f64 = 0.83;
        let (s, c) = t.sin_cos();
        let iso = |p: [f64; 2]| [c * p[0] - s * p[1] + 3.0, s * p[0] + c * p[1] - 2.0];
        let moved: Vec<(u64, u32, [f64; 2])> = points.iter().map(|&(id, l, p)| (id, l, iso(p))).collect();
        let gallery2 = gallery_from(&moved);
        let q2 = query_at(iso([0.2, -0.1]));
        let after: Vec<u64> = rank(&q2, &gallery2).unwrap().iter().map(|&i| gallery2.ids[i]).collect();
        assert_eq!(base, after);
    }

    #[test]
    fn precision_direct_cases() {
        assert_eq!(precision_at_k(&[0, 0, 1], 0, 3).unwrap(), 2.0 / 3.0);
        assert_eq!(precision_at_k(&[0, 0, 0], 0, 3).unwrap(), 1.0);
        // K larger than the ranking truncates.
        assert_eq!(precision_at_k(&[0, 1], 0, 10).unwrap(), 0.5);
        assert!(precision_at_k(&[], 0, 3).is_err());
        assert!(precision_at_k(&[0], 0, 0).is_err());
    }

    #[test]
    fn average_precision_reference_cases() {
        // Relevance [1, 0, 1], R = 2, K = 3 -> (1 + 2/3) / 2 = 5/6.
        let ap = average_precision_at_k(&[7, 1, 7], 7, 3).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        // Perfect ranking with R >= K.
        let ap = average_precision_at_k(&[2, 2, 2, 2], 2, 3).unwrap();
        assert_eq!(ap, 1.0);
        // No relevant images at all.
        assert_eq!(average_precision_at_k(&[1, 1], 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn ap_denominator_variants() {
        // R = 4 relevant, K = 2, perfect prefix.
        let labels = [5, 5, 5, 5, 1, 1];
        let min_rk = average_precision_at_k_with(&labels, 5, 2, ApDenominator::MinRK).unwrap();
        assert_eq!(min_rk, 1.0);
        let total = average_precision_at_k_with(&labels, 5, 2, ApDenominator::TotalRelevant).unwrap();
        assert_eq!(total, 0.5);
    }

    #[test]
    fn report_text_is_stable() {
        let mut per_class = BTreeMap::new();
        per_class.insert(
            3,
            ClassMetrics {
                queries: 2,
                precision: 0.5,
                map: 0.25,
            },
        );
        let report = MetricsReport {
            mode: SplitMode::Zsl,
            space: EmbeddingSpace::Siamese,
            k: 20,
            n_z: 1,
            seed: 7,
            config_digest: "abc".into(),
            query_count: 2,
            precision_at_k: 0.5,
            map_at_k: 0.25,
            precision_at_k_macro: 0.5,
            map_at_k_macro: 0.25,
            per_class,
        };
        let a = report.to_text();
        let b = report.to_text();
        assert_eq!(a, b);
        assert!(a.contains("precision_at_k: 0.500000"));
        assert!(report.to_tsv().contains("overall\t-\t2"));
    }
}
