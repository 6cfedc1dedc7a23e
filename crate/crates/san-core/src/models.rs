//! The seven networks of the pipeline and their stage-level compositions.
//!
//! At `feature_dim = 2048` the layer widths match the reference architecture
//! exactly: generators and regressors run 1024 / 512 / 1024 / 2048 with ReLU
//! after every layer except the last, discriminators run 1024 / 512 / 128
//! plus a scalar sigmoid head, and the Siamese projector runs 1024 / 2.
//! For smaller feature dimensions (desk-scale synthetic data) the hidden
//! widths scale proportionally, clamped below at 4 (noise dim at 2).

use crate::engine::{sample_noise, Activation, DenseNet, Matrix};
use crate::error::{Result, SanError};
use crate::rng::{self, tags};
use rand_chacha::ChaCha8Rng;

pub const REFERENCE_FEATURE_DIM: usize = 2048;
pub const REFERENCE_NOISE_DIM: usize = 300;
const GEN_HIDDEN: [usize; 3] = [1024, 512, 1024];
const DISC_HIDDEN: [usize; 3] = [1024, 512, 128];
const SIAMESE_HIDDEN: usize = 1024;

fn scale_width(reference_width: usize, feature_dim: usize) -> usize {
    let scaled = (reference_width as f64 * feature_dim as f64 / REFERENCE_FEATURE_DIM as f64).round() as usize;
    scaled.max(4)
}

fn scale_noise_dim(feature_dim: usize) -> usize {
    let scaled = (REFERENCE_NOISE_DIM as f64 * feature_dim as f64 / REFERENCE_FEATURE_DIM as f64).round() as usize;
    scaled.max(2)
}

/// Layer dimensioning for a given feature width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub feature_dim: usize,
}

impl Architecture {
    pub fn new(feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(SanError::InvalidConfig("feature_dim must be positive".into()));
        }
        Ok(Architecture { feature_dim })
    }

    pub fn noise_dim(&self) -> usize {
        scale_noise_dim(self.feature_dim)
    }

    fn gen_hidden(&self) -> [usize; 3] {
        GEN_HIDDEN.map(|w| scale_width(w, self.feature_dim))
    }

    /// Generator dims for the given input width (conditioning plus noise, or
    /// the doubled stage-2 input).
    fn generator_dims(&self, in_dim: usize) -> Vec<usize> {
        let h = self.gen_hidden();
        vec![in_dim, h[0], h[1], h[2], self.feature_dim]
    }

    pub fn g1_dims(&self) -> Vec<usize> {
        self.generator_dims(self.feature_dim + self.noise_dim())
    }

    pub fn g2_dims(&self) -> Vec<usize> {
        self.generator_dims(2 * self.feature_dim)
    }

    pub fn regressor_dims(&self) -> Vec<usize> {
        self.generator_dims(self.feature_dim)
    }

    /// Discriminator hidden widths plus the scalar sigmoid head.
    pub fn discriminator_dims(&self) -> Vec<usize> {
        let h = DISC_HIDDEN.map(|w| scale_width(w, self.feature_dim));
        vec![self.feature_dim, h[0], h[1], h[2], 1]
    }

    pub fn siamese_dims(&self) -> Vec<usize> {
        vec![self.feature_dim, scale_width(SIAMESE_HIDDEN, self.feature_dim), 2]
    }

    fn generator_activations() -> Vec<Activation> {
        vec![Activation::ReLU, Activation::ReLU, Activation::ReLU, Activation::Identity]
    }

    fn discriminator_activations() -> Vec<Activation> {
        vec![Activation::ReLU, Activation::ReLU, Activation::ReLU, Activation::Sigmoid]
    }

    fn siamese_activations() -> Vec<Activation> {
        vec![Activation::ReLU, Activation::Identity]
    }
}

/// Unit-Gaussian noise source for the generator input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub dim: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn stream(&self) -> ChaCha8Rng {
        rng::rng_for(self.seed, tags::NOISE)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, rows: usize) -> Matrix {
        sample_noise(rng, rows, self.dim)
    }
}

/// Stage-1 conditional GAN: generator, discriminator, regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Nets {
    pub g1: DenseNet,
    pub d1: DenseNet,
    pub r1: DenseNet,
    pub arch: Architecture,
}

/// Stage-2 refinement GAN; the generator consumes `[c | xhat1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Nets {
    pub g2: DenseNet,
    pub d2: DenseNet,
    pub r2: DenseNet,
    pub arch: Architecture,
}

/// Twin projector with a single shared parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseNet {
    pub net: DenseNet,
    pub arch: Architecture,
}

pub fn build_stage1(feature_dim: usize, seed: u64) -> Result<Stage1Nets> {
    let arch = Architecture::new(feature_dim)?;
    Ok(Stage1Nets {
        g1: DenseNet::init(
            &arch.g1_dims(),
            &Architecture::generator_activations(),
            rng::derive_seed(seed, tags::INIT_G1),
        )?,
        d1: DenseNet::init(
            &arch.discriminator_dims(),
            &Architecture::discriminator_activations(),
            rng::derive_seed(seed, tags::INIT_D1),
        )?,
        r1: DenseNet::init(
            &arch.regressor_dims(),
            &Architecture::generator_activations(),
            rng::derive_seed(seed, tags::INIT_R1),
        )?,
        arch,
    })
}

pub fn build_stage2(feature_dim: usize, seed: u64) -> Result<Stage2Nets> {
    let arch = Architecture::new(feature_dim)?;
    Ok(Stage2Nets {
        g2: DenseNet::init(
            &arch.g2_dims(),
            &Architecture::generator_activations(),
            rng::derive_seed(seed, tags::INIT_G2),
        )?,
        d2: DenseNet::init(
            &arch.discriminator_dims(),
            &Architecture::discriminator_activations(),
            rng::derive_seed(seed, tags::INIT_D2),
        )?,
        r2: DenseNet::init(
            &arch.regressor_dims(),
            &Architecture::generator_activations(),
            rng::derive_seed(seed, tags::INIT_R2),
        )?,
        arch,
    })
}

pub fn build_siamese(feature_dim: usize, seed: u64) -> Result<SiameseNet> {
    let arch = Architecture::new(feature_dim)?;
    Ok(SiameseNet {
        net: DenseNet::init(
            &arch.siamese_dims(),
            &Architecture::siamese_activations(),
            rng::derive_seed(seed, tags::INIT_SIAMESE),
        )?,
        arch,
    })
}

impl Stage1Nets {
    /// Synthesize image features from sketch features `c` and noise `z`.
    pub fn generate(&self, c: &Matrix, z: &Matrix) -> Result<Matrix> {
        if c.cols() != self.arch.feature_dim {
            return Err(SanError::shape(
                "stage1_generate conditioning",
                format!("{} columns", self.arch.feature_dim),
                format!("{} columns", c.cols()),
            ));
        }
        if z.cols() != self.arch.noise_dim() {
            return Err(SanError::shape(
                "stage1_generate noise",
                format!("{} columns", self.arch.noise_dim()),
                format!("{} columns", z.cols()),
            ));
        }
        if c.rows() != z.rows() {
            return Err(SanError::shape(
                "stage1_generate batch",
                format!("{} rows", c.rows()),
                format!("{} rows", z.rows()),
            ));
        }
        self.g1.forward_no_trace(&c.hconcat(z)?)
    }
}

impl Stage2Nets {
    /// Refine stage-1 features, conditioned on the original sketch features.
    pub fn refine(&self, c: &Matrix, xhat1: &Matrix) -> Result<Matrix> {
        if c.cols() != self.arch.feature_dim || xhat1.cols() != self.arch.feature_dim {
            return Err(SanError::shape(
                "stage2_refine",
                format!("{} columns each", self.arch.feature_dim),
                format!("{} and {} columns", c.cols(), xhat1.cols()),
            ));
        }
        if c.rows() != xhat1.rows() {
            return Err(SanError::shape(
                "stage2_refine batch",
                format!("{} rows", c.rows()),
                format!("{} rows", xhat1.rows()),
            ));
        }
        self.g2.forward_no_trace(&c.hconcat(xhat1)?)
    }
}

impl SiameseNet {
    /// Project features into the shared 2-d retrieval space. The same
    /// parameters serve both twins.
    pub fn project(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.arch.feature_dim {
            return Err(SanError::shape(
                "siamese_project",
                format!("{} columns", self.arch.feature_dim),
                format!("{} columns", features.cols()),
            ));
        }
        self.net.forward_no_trace(features)
    }
}
