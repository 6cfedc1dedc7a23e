//! Versioned binary checkpoint files ("SANC").
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "SANC" | version u16 = 1 | stage u8 | feature_dim u32 | epochs_completed u32
//! config block: length u32, canonical key-sorted key=value text
//! net count u8, per net: name_len u16 + UTF-8, layer count u16,
//!   per layer: in u32, out u32, activation u8, weights f64 (in*out), bias f64 (out)
//! CRC32 of all preceding bytes
//! ```

use super::StageConfig;
use crate::engine::{Activation, DenseLayer, DenseNet, Matrix};
use crate::error::{Result, SanError};
use crate::models::{Architecture, SiameseNet, Stage1Nets, Stage2Nets};
use std::path::Path;

const MAGIC: [u8; 4] = *b"SANC";
const VERSION: u16 = 1;

/// Serialized parameters of one stage's networks plus its config and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCheckpoint {
    pub stage: u8,
    pub feature_dim: u32,
    pub epochs_completed: u32,
    pub config: StageConfig,
    pub nets: Vec<(String, DenseNet)>,
}

impl StageCheckpoint {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(SanError::InvalidConfig(format!("bad checkpoint stage {}", self.stage)));
        }
        for (name, net) in &self.nets {
            net.validate_finite(&format!("checkpoint net {name}"))?;
        }
        Ok(())
    }

    fn net(&self, name: &str) -> Result<DenseNet> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net.clone())
            .ok_or_else(|| SanError::Prerequisite(format!("checkpoint has no net named {name}")))
    }

    fn expect_stage(&self, stage: u8) -> Result<()> {
        if self.stage != stage {
            return Err(SanError::Prerequisite(format!(
                "expected a stage-{stage} checkpoint, got stage {}",
                self.stage
            )));
        }
        Ok(())
    }

    pub fn stage1_nets(&self) -> Result<Stage1Nets> {
        self.expect_stage(1)?;
        let arch = Architecture::new(self.feature_dim as usize)?;
        let nets = Stage1Nets {
            g1: self.net("G1")?,
            d1: self.net("D1")?,
            r1: self.net("R1")?,
            arch,
        };
        if nets.g1.out_dim() != arch.feature_dim || nets.g1.in_dim() != arch.feature_dim + arch.noise_dim() {
            return Err(SanError::Prerequisite(format!(
                "stage-1 generator dims {:?} do not match feature_dim {}",
                nets.g1.dims(),
                arch.feature_dim
            )));
        }
        Ok(nets)
    }

    pub fn stage2_nets(&self) -> Result<Stage2Nets> {
        self.expect_stage(2)?;
        let arch = Architecture::new(self.feature_dim as usize)?;
        let nets = Stage2Nets {
            g2: self.net("G2")?,
            d2: self.net("D2")?,
            r2: self.net("R2")?,
            arch,
        };
        if nets.g2.out_dim() != arch.feature_dim || nets.g2.in_dim() != 2 * arch.feature_dim {
            return Err(SanError::Prerequisite(format!(
                "stage-2 generator dims {:?} do not match feature_dim {}",
                nets.g2.dims(),
                arch.feature_dim
            )));
        }
        Ok(nets)
    }

    pub fn siamese_net(&self) -> Result<SiameseNet> {
        self.expect_stage(3)?;
        let arch = Architecture::new(self.feature_dim as usize)?;
        let net = self.net("NN")?;
        if net.in_dim() != arch.feature_dim || net.out_dim() != 2 {
            return Err(SanError::Prerequisite(format!(
                "siamese dims {:?} do not match feature_dim {}",
                net.dims(),
                arch.feature_dim
            )));
        }
        Ok(SiameseNet { net, arch })
    }
}

pub fn save_checkpoint(ckpt: &StageCheckpoint, path: &Path) -> Result<()> {
    ckpt.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(ckpt.stage);
    buf.extend_from_slice(&ckpt.feature_dim.to_le_bytes());
    buf.extend_from_slice(&ckpt.epochs_completed.to_le_bytes());
    let config_text = ckpt.config.canonical_text();
    buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_text.as_bytes());
    if ckpt.nets.len() > u8::MAX as usize {
        return Err(SanError::InvalidConfig("too many nets in checkpoint".into()));
    }
    buf.push(ckpt.nets.len() as u8);
    for (name, net) in &ckpt.nets {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(net.layers().len() as u16).to_le_bytes());
        for layer in net.layers() {
            buf.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            buf.push(layer.activation.tag());
            for &w in layer.weight.data() {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            for &b in &layer.bias {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SanError::Truncated(format!(
                "need {n} bytes for {what} at offset {}, only {} remain",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<StageCheckpoint> {
    let buf = std::fs::read(path)?;
    if buf.len() < 8 {
        return Err(SanError::Truncated(format!("checkpoint is only {} bytes", buf.len())));
    }
    let found: [u8; 4] = buf[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(SanError::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(SanError::UnsupportedVersion(version));
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(SanError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor { buf: body, pos: 6 };
    let stage = cur.u8("stage")?;
    let feature_dim = cur.u32("feature_dim")?;
    let epochs_completed = cur.u32("epochs_completed")?;
    let config_len = cur.u32("config length")? as usize;
    let config_text = std::str::from_utf8(cur.take(config_len, "config block")?)
        .map_err(|_| SanError::Data("checkpoint config block is not UTF-8".into()))?;
    let config = StageConfig::from_canonical_text(config_text)?;
    let net_count = cur.u8("net count")? as usize;
    let mut nets = Vec::with_capacity(net_count);
    for _ in 0..net_count {
        let name_len = cur.u16("net name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "net name")?)
            .map_err(|_| SanError::Data("net name is not UTF-8".into()))?
            .to_string();
        let layer_count = cur.u16("layer count")? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let in_dim = cur.u32("layer in_dim")? as usize;
            let out_dim = cur.u32("layer out_dim")? as usize;
            let activation = Activation::from_tag(cur.u8("activation tag")?)?;
            let mut weights = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..in_dim * out_dim {
                weights.push(cur.f64("weight")?);
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                bias.push(cur.f64("bias")?);
            }
            layers.push(DenseLayer {
                weight: Matrix::from_vec(in_dim, out_dim, weights)?,
                bias,
                activation,
            });
        }
        nets.push((name, DenseNet::from_layers(layers)?));
    }
    if cur.pos != body.len() {
        return Err(SanError::Data(format!(
            "{} trailing bytes in checkpoint",
            body.len() - cur.pos
        )));
    }
    let ckpt = StageCheckpoint {
        stage,
        feature_dim,
        epochs_completed,
        config,
        nets,
    };
    ckpt.validate()?;
    Ok(ckpt)
}
