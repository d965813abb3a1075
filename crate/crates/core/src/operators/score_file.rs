//! JSON-lines score files: recording operator responses and replaying them.
//!
//! One record per line:
//!
//! ```text
//! {"kind":"merge","shape":"chair_17","seq":3,"digest":"9a0c3e1f5b7d2468","score":0.87}
//! {"kind":"split","shape":"chair_17","seq":0,"digest":"...","labels":[0,0,1,...]}
//! {"kind":"fix","shape":"chair_17","seq":0,"digest":"...","probs":[1.0,0.0,...]}
//! ```
//!
//! `seq` counts requests of one kind for one shape, starting at 0. `digest`
//! is the FNV-1a fingerprint of the request's point indices (see
//! [`request_digest`](super::requests::request_digest)); replay refuses to
//! answer a request whose fingerprint differs from the recorded one.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::requests::digest_hex;
use super::{
    FixOperator, FixRequest, FixResponse, MergeOperator, MergeRequest, MergeResponse, OpContext,
    OpKind, SplitOperator, SplitRequest, SplitResponse,
};
use crate::error::{Error, Result};
use crate::synthgen::shard::ShardRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub kind: OpKind,
    pub shape: String,
    pub seq: u64,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f32>>,
}

impl ScoreRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.digest.len() != 16 || !self.digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("digest {:?} is not 16 hex digits", self.digest));
        }
        let payload_ok = match self.kind {
            OpKind::Split => self.labels.is_some() && self.score.is_none() && self.probs.is_none(),
            OpKind::Fix => self.probs.is_some() && self.score.is_none() && self.labels.is_none(),
            OpKind::Merge => self.score.is_some() && self.labels.is_none() && self.probs.is_none(),
        };
        if !payload_ok {
            return Err(format!(
                "{} record must carry exactly its own payload",
                self.kind
            ));
        }
        Ok(())
    }
}

/// Parsed score file, records grouped per `(shape, kind)` in `seq` order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreFile {
    streams: BTreeMap<(String, OpKind), Vec<ScoreRecord>>,
}

impl ScoreFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut streams: BTreeMap<(String, OpKind), Vec<ScoreRecord>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: ScoreRecord =
                serde_json::from_str(line).map_err(|e| Error::parse(n + 1, e.to_string()))?;
            rec.check().map_err(|m| Error::parse(n + 1, m))?;
            let stream = streams.entry((rec.shape.clone(), rec.kind)).or_default();
            if let Some(prev) = stream.last() {
                if rec.seq <= prev.seq {
                    return Err(Error::parse(
                        n + 1,
                        format!(
                            "seq {} not after {} for this shape and kind",
                            rec.seq, prev.seq
                        ),
                    ));
                }
            }
            stream.push(rec);
        }
        Ok(ScoreFile { streams })
    }

    pub fn load(path: &Path) -> Result<Self> {
        ScoreFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_records(records: impl IntoIterator<Item = ScoreRecord>) -> Result<Self> {
        ScoreFile::parse(&to_jsonl(records)?)
    }

    pub fn stream(&self, shape: &str, kind: OpKind) -> &[ScoreRecord] {
        self.streams
            .get(&(shape.to_string(), kind))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.streams.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.streams.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn to_jsonl(records: impl IntoIterator<Item = ScoreRecord>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Answers the n-th request of its kind for a shape with the n-th record.
#[derive(Debug)]
pub struct Replay {
    file: Arc<ScoreFile>,
    kind: OpKind,
    cursors: HashMap<String, usize>,
}

impl Replay {
    pub fn new(file: Arc<ScoreFile>, kind: OpKind) -> Self {
        Replay {
            file,
            kind,
            cursors: HashMap::new(),
        }
    }

    fn next(&mut self, shape: &str, digest: u64) -> Result<&ScoreRecord> {
        let cursor = self.cursors.entry(shape.to_string()).or_default();
        let index = *cursor;
        let rec = self
            .file
            .stream(shape, self.kind)
            .get(index)
            .ok_or_else(|| Error::ScoreFileUnderrun {
                kind: self.kind.as_str(),
                shape: shape.to_string(),
                index,
            })?;
        let expected = digest_hex(digest);
        if !rec.digest.eq_ignore_ascii_case(&expected) {
            return Err(Error::StaleScoreFile {
                kind: self.kind.as_str(),
                shape: shape.to_string(),
                seq: rec.seq,
                expected,
                found: rec.digest.clone(),
            });
        }
        *cursor += 1;
        Ok(rec)
    }
}

impl SplitOperator for Replay {
    fn split(&mut self, ctx: &OpContext<'_>, req: &SplitRequest) -> Result<SplitResponse> {
        let rec = self.next(&ctx.shape.id, req.digest())?;
        Ok(SplitResponse {
            labels: rec.labels.clone().unwrap_or_default(),
        })
    }
}

impl FixOperator for Replay {
    fn fix(&mut self, ctx: &OpContext<'_>, req: &FixRequest) -> Result<FixResponse> {
        let rec = self.next(&ctx.shape.id, req.digest())?;
        Ok(FixResponse {
            probs: rec.probs.clone().unwrap_or_default(),
        })
    }
}

impl MergeOperator for Replay {
    fn merge(&mut self, ctx: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse> {
        let rec = self.next(&ctx.shape.id, req.digest())?;
        Ok(MergeResponse {
            score: rec.score.unwrap_or_default(),
        })
    }
}

/// Shared destination for recorded records.
pub type ScoreSink = Arc<Mutex<Vec<ScoreRecord>>>;

pub fn new_sink() -> ScoreSink {
    Arc::new(Mutex::new(Vec::new()))
}

/// Network input of one recorded request, labeled with the recorded
/// response. Fix probabilities and merge scores become 0/1 labels at 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedRequest {
    pub shape: String,
    pub kind: OpKind,
    pub seq: u64,
    pub record: ShardRecord,
}

pub type RequestSink = Arc<Mutex<Vec<LoggedRequest>>>;

pub fn new_request_sink() -> RequestSink {
    Arc::new(Mutex::new(Vec::new()))
}

/// Forwards to `inner` and appends every response to `sink`, and every
/// request's features to the request sink when one is attached.
pub struct Recording<O> {
    inner: O,
    sink: ScoreSink,
    requests: Option<RequestSink>,
    seqs: HashMap<String, u64>,
}

impl<O> Recording<O> {
    pub fn new(inner: O, sink: ScoreSink) -> Self {
        Recording {
            inner,
            sink,
            requests: None,
            seqs: HashMap::new(),
        }
    }

    pub fn with_requests(mut self, requests: RequestSink) -> Self {
        self.requests = Some(requests);
        self
    }

    fn push(
        &mut self,
        kind: OpKind,
        shape: &str,
        digest: u64,
        fill: impl FnOnce(&mut ScoreRecord),
        input: impl FnOnce() -> Result<ShardRecord>,
    ) -> Result<()> {
        let seq = self.seqs.entry(shape.to_string()).or_default();
        let mut rec = ScoreRecord {
            kind,
            shape: shape.to_string(),
            seq: *seq,
            digest: digest_hex(digest),
            score: None,
            labels: None,
            probs: None,
        };
        fill(&mut rec);
        if let Some(requests) = &self.requests {
            let logged = LoggedRequest {
                shape: shape.to_string(),
                kind,
                seq: *seq,
                record: input()?,
            };
            requests.lock().expect("request sink poisoned").push(logged);
        }
        *seq += 1;
        self.sink.lock().expect("score sink poisoned").push(rec);
        Ok(())
    }
}

impl<O: SplitOperator> SplitOperator for Recording<O> {
    fn split(&mut self, ctx: &OpContext<'_>, req: &SplitRequest) -> Result<SplitResponse> {
        let resp = self.inner.split(ctx, req)?;
        self.push(
            OpKind::Split,
            &ctx.shape.id,
            req.digest(),
            |r| r.labels = Some(resp.labels.clone()),
            || ShardRecord::new(OpKind::Split, &req.points.features(), resp.labels.clone()),
        )?;
        Ok(resp)
    }
}

impl<O: FixOperator> FixOperator for Recording<O> {
    fn fix(&mut self, ctx: &OpContext<'_>, req: &FixRequest) -> Result<FixResponse> {
        let resp = self.inner.fix(ctx, req)?;
        self.push(
            OpKind::Fix,
            &ctx.shape.id,
            req.digest(),
            |r| r.probs = Some(resp.probs.clone()),
            || {
                let labels = resp.probs.iter().map(|&p| (p > 0.5) as u8).collect();
                ShardRecord::new(OpKind::Fix, &req.features(), labels)
            },
        )?;
        Ok(resp)
    }
}

impl<O: MergeOperator> MergeOperator for Recording<O> {
    fn merge(&mut self, ctx: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse> {
        let resp = self.inner.merge(ctx, req)?;
        self.push(
            OpKind::Merge,
            &ctx.shape.id,
            req.digest(),
            |r| r.score = Some(resp.score),
            || {
                ShardRecord::new(
                    OpKind::Merge,
                    &req.features(),
                    vec![(resp.score > 0.5) as u8],
                )
            },
        )?;
        Ok(resp)
    }
}
