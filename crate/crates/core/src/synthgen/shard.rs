//! Binary example shards and their JSON manifest.
//!
//! A shard starts with the 8-byte magic `SHRDEX1\0` and holds a sequence of
//! records. Each record is a little-endian `u32` payload length followed by
//! the payload:
//!
//! ```text
//! u8  kind          0 split, 1 fix, 2 merge
//! u32 n_points
//! u8  n_features    6, 7 or 8 by kind
//! f32 features      n_points * n_features, row major
//! u32 n_labels      n_points for split and fix, 1 for merge
//! u8  labels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::OpKind;

pub const SHARD_MAGIC: &[u8; 8] = b"SHRDEX1\0";
pub const EXAMPLES_PER_SHARD: usize = 10_000;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ShardRecord {
    pub kind: OpKind,
    pub n_points: usize,
    pub n_features: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
}

fn kind_code(kind: OpKind) -> u8 {
    match kind {
        OpKind::Split => 0,
        OpKind::Fix => 1,
        OpKind::Merge => 2,
    }
}

fn feature_width(kind: OpKind) -> usize {
    match kind {
        OpKind::Split => 6,
        OpKind::Fix => 7,
        OpKind::Merge => 8,
    }
}

impl ShardRecord {
    pub fn new<const F: usize>(kind: OpKind, rows: &[[f32; F]], labels: Vec<u8>) -> Result<Self> {
        let rec = ShardRecord {
            kind,
            n_points: rows.len(),
            n_features: F,
            features: rows.iter().flatten().copied().collect(),
            labels,
        };
        rec.check()?;
        Ok(rec)
    }

    fn check(&self) -> Result<()> {
        if self.n_features != feature_width(self.kind) {
            return Err(Error::Format(format!(
                "{} record with {} features",
                self.kind, self.n_features
            )));
        }
        if self.features.len() != self.n_points * self.n_features {
            return Err(Error::Format(
                "feature count does not match point count".into(),
            ));
        }
        let want = if self.kind == OpKind::Merge {
            1
        } else {
            self.n_points
        };
        if self.labels.len() != want {
            return Err(Error::Format(format!(
                "{} record with {} labels, expected {want}",
                self.kind,
                self.labels.len()
            )));
        }
        Ok(())
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let len = 1 + 4 + 1 + 4 * self.features.len() + 4 + self.labels.len();
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.push(kind_code(self.kind));
        out.extend_from_slice(&(self.n_points as u32).to_le_bytes());
        out.push(self.n_features as u8);
        for f in &self.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.labels);
    }
}

pub fn encode_shard(records: &[ShardRecord]) -> Vec<u8> {
    let mut out = SHARD_MAGIC.to_vec();
    for r in records {
        r.encode_into(&mut out);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated shard at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode_shard(bytes: &[u8]) -> Result<Vec<ShardRecord>> {
    if bytes.len() < SHARD_MAGIC.len() || &bytes[..8] != SHARD_MAGIC {
        return Err(Error::Format("missing shard magic".into()));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32()? as usize;
        let payload = cur.take(len)?;
        out.push(decode_record(payload)?);
    }
    Ok(out)
}

fn decode_record(payload: &[u8]) -> Result<ShardRecord> {
    let mut cur = Cursor {
        bytes: payload,
        pos: 0,
    };
    let kind = match cur.u8()? {
        0 => OpKind::Split,
        1 => OpKind::Fix,
        2 => OpKind::Merge,
        k => return Err(Error::Format(format!("unknown record kind {k}"))),
    };
    let n_points = cur.u32()? as usize;
    let n_features = cur.u8()? as usize;
    if n_features != feature_width(kind) {
        return Err(Error::Format(format!(
            "{kind} record with {n_features} features"
        )));
    }
    let n_floats = n_points
        .checked_mul(n_features)
        .ok_or_else(|| Error::Format("feature block overflows".into()))?;
    let raw = cur.take(
        n_floats
            .checked_mul(4)
            .ok_or_else(|| Error::Format("feature block overflows".into()))?,
    )?;
    let features = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let n_labels = cur.u32()? as usize;
    let labels = cur.take(n_labels)?.to_vec();
    if cur.pos != payload.len() {
        return Err(Error::Format("trailing bytes in record".into()));
    }
    let rec = ShardRecord {
        kind,
        n_points,
        n_features,
        features,
        labels,
    };
    rec.check()?;
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format_version: u32,
    pub kind: OpKind,
    pub seed: u64,
    pub shapes: Vec<String>,
    pub examples: usize,
    pub rejected: usize,
    pub shards: Vec<ShardInfo>,
    pub config: serde_json::Value,
}

impl ShardManifest {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.examples + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }
}

/// Streams records into `{prefix}-{nnnnn}.bin` files of at most `per_shard`
/// records each.
pub struct ShardWriter {
    dir: PathBuf,
    prefix: String,
    per_shard: usize,
    pending: Vec<ShardRecord>,
    written: Vec<ShardInfo>,
}

impl ShardWriter {
    pub fn new(
        dir: impl Into<PathBuf>,
        prefix: impl Into<String>,
        per_shard: usize,
    ) -> Result<Self> {
        if per_shard == 0 {
            return Err(Error::Config("shard size must be positive".into()));
        }
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ShardWriter {
            dir,
            prefix: prefix.into(),
            per_shard,
            pending: Vec::new(),
            written: Vec::new(),
        })
    }

    pub fn push(&mut self, rec: ShardRecord) -> Result<()> {
        self.pending.push(rec);
        if self.pending.len() >= self.per_shard {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let file = format!("{}-{:05}.bin", self.prefix, self.written.len());
        fs::write(self.dir.join(&file), encode_shard(&self.pending))?;
        self.written.push(ShardInfo {
            file,
            examples: self.pending.len(),
        });
        self.pending.clear();
        Ok(())
    }

    pub fn finish(mut self) -> Result<Vec<ShardInfo>> {
        self.flush()?;
        Ok(self.written)
    }
}

pub fn write_manifest(path: &Path, manifest: &ShardManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<ShardManifest> {
    parse_manifest(&fs::read_to_string(path)?)
}

pub fn parse_manifest(text: &str) -> Result<ShardManifest> {
    let m: ShardManifest = serde_json::from_str(text)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest version {}",
            m.format_version
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split_rec(n: usize) -> ShardRecord {
        let rows: Vec<[f32; 6]> = (0..n)
            .map(|i| [i as f32, 0.5, -1.0, 0.0, 0.0, 1.0])
            .collect();
        ShardRecord::new(
            OpKind::Split,
            &rows,
            (0..n).map(|i| (i % 10) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let merge = ShardRecord::new(OpKind::Merge, &[[1.0f32; 8], [2.0; 8]], vec![1]).unwrap();
        let fix = ShardRecord::new(OpKind::Fix, &[[0.25f32; 7]], vec![0]).unwrap();
        let recs = vec![split_rec(3), merge, fix, split_rec(0)];
        assert_eq!(decode_shard(&encode_shard(&recs)).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_bytes() {
        let good = encode_shard(&[split_rec(4)]);
        assert!(decode_shard(b"SHRDEX0\0").is_err());
        assert!(decode_shard(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_shard(&extra).is_err());
        let mut wrong_kind = good.clone();
        wrong_kind[12] = 2;
        assert!(decode_shard(&wrong_kind).is_err());
        let mut huge = good;
        huge[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_shard(&huge).is_err());
    }

    #[test]
    fn wrong_label_count() {
        assert!(ShardRecord::new(OpKind::Merge, &[[0.0f32; 8]], vec![1, 0]).is_err());
        assert!(ShardRecord::new(OpKind::Split, &[[0.0f32; 7]], vec![0]).is_err());
    }

    #[test]
    fn writer_rotates() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ShardWriter::new(dir.path(), "split", 4).unwrap();
        for _ in 0..10 {
            w.push(split_rec(2)).unwrap();
        }
        let shards = w.finish().unwrap();
        let counts: Vec<usize> = shards.iter().map(|s| s.examples).collect();
        assert_eq!(counts, [4, 4, 2]);
        let back = decode_shard(&fs::read(dir.path().join(&shards[2].file)).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
    }
}
