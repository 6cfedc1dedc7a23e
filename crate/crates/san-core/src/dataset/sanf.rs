//! The SANF binary feature file and a CSV import path.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "SANF" | version u16 = 1 | feature_dim u32 | record_count u64
//! class table: count u32, then per class: label u32, name_len u16, UTF-8 bytes
//! records: id u64, label u32, domain u8 (0 = sketch, 1 = image), feature_dim x f32
//! CRC32 of all preceding bytes
//! ```

use super::{Domain, FeatureRecord, FeatureStore};
use crate::error::{Result, SanError};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: [u8; 4] = *b"SANF";
const VERSION: u16 = 1;

/// Serialize the store; the write is atomic (temp file + rename).
pub fn write_feature_file(store: &FeatureStore, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + store.len() * (13 + store.feature_dim() * 4));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.feature_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(store.class_names().len() as u32).to_le_bytes());
    for (&label, name) in store.class_names() {
        buf.extend_from_slice(&label.to_le_bytes());
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(SanError::Data(format!("class name for label {label} too long")));
        }
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    for rec in store.records() {
        buf.extend_from_slice(&rec.id.to_le_bytes());
        buf.extend_from_slice(&rec.label.to_le_bytes());
        buf.push(rec.domain.tag());
        for &v in &rec.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let tmp = path.with_extension("sanf.tmp");
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

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_feature_file(path: &Path) -> Result<FeatureStore> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 4 {
        return Err(SanError::Truncated(format!(
            "file is {} bytes, below the minimum header size",
            buf.len()
        )));
    }
    let found: [u8; 4] = buf[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(SanError::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    // Version precedes the checksum so unsupported versions are reported as
    // such even though their checksum may cover a different layout.
    let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(SanError::UnsupportedVersion(version));
    }
    if stored != computed {
        return Err(SanError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor {
        buf: body,
        pos: 6,
    };
    let feature_dim = cur.u32("feature_dim")? as usize;
    let record_count = cur.u64("record_count")? as usize;
    let class_count = cur.u32("class_count")? as usize;
    let mut class_names = BTreeMap::new();
    for _ in 0..class_count {
        let label = cur.u32("class label")?;
        let name_len = cur.u16("class name length")? as usize;
        let bytes = cur.take(name_len, "class name")?;
        let name = std::str::from_utf8(bytes)
            .map_err(|_| SanError::Data(format!("class name for label {label} is not UTF-8")))?;
        class_names.insert(label, name.to_string());
    }
    let mut records = Vec::with_capacity(record_count);
    for _ in 0..record_count {
        let id = cur.u64("record id")?;
        let label = cur.u32("record label")?;
        let domain = Domain::from_tag(cur.u8("record domain")?)?;
        let mut vector = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            vector.push(cur.f32("feature value")?);
        }
        records.push(FeatureRecord {
            id,
            label,
            domain,
            vector,
        });
    }
    if cur.pos != body.len() {
        return Err(SanError::Data(format!(
            "{} trailing bytes after the declared records",
            body.len() - cur.pos
        )));
    }
    FeatureStore::new(feature_dim, records, class_names)
}

/// Import `id,label,domain,v0..v{d-1}` rows; a header line is skipped when
/// the first field is not numeric. Domains may be spelled `sketch`/`image`
/// or `0`/`1`.
pub fn load_csv_file(path: &Path) -> Result<FeatureStore> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SanError::Data(format!("cannot open CSV: {e}")))?;
    let mut records = Vec::new();
    let mut feature_dim: Option<usize> = None;
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| SanError::Data(format!("CSV parse error: {e}")))?;
        if row.len() < 4 {
            return Err(SanError::Data(format!(
                "CSV line {} has {} fields, need at least 4",
                line + 1,
                row.len()
            )));
        }
        let id: u64 = match row[0].parse() {
            Ok(v) => v,
            // A single header line is tolerated.
            Err(_) if line == 0 => continue,
            Err(e) => return Err(SanError::Data(format!("CSV line {}: bad id: {e}", line + 1))),
        };
        let label: u32 = row[1]
            .parse()
            .map_err(|e| SanError::Data(format!("CSV line {}: bad label: {e}", line + 1)))?;
        let domain = match &row[2] {
            "sketch" | "0" => Domain::Sketch,
            "image" | "1" => Domain::Image,
            other => return Err(SanError::Data(format!("CSV line {}: bad domain {other:?}", line + 1))),
        };
        let dim = row.len() - 3;
        match feature_dim {
            None => feature_dim = Some(dim),
            Some(d) if d != dim => {
                return Err(SanError::shape(
                    "CSV feature dimension",
                    format!("{d} values"),
                    format!("{dim} values on line {}", line + 1),
                ));
            }
            _ => {}
        }
        let vector = row
            .iter()
            .skip(3)
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|e| SanError::Data(format!("CSV line {}: bad value: {e}", line + 1)))
            })
            .collect::<Result<Vec<f32>>>()?;
        records.push(FeatureRecord {
            id,
            label,
            domain,
            vector,
        });
    }
    let feature_dim = feature_dim.ok_or_else(|| SanError::Data("CSV has no data rows".into()))?;
    FeatureStore::new(feature_dim, records, BTreeMap::new())
}
