//! The three local operators (split, fix, merge) behind a uniform interface.
//!
//! Every operator sees a fixed-size request assembled by [`requests`] and
//! answers with a plain score record. Sources:
//!
//! * [`oracle`]: answers derived from ground-truth instance labels,
//! * [`heuristic`]: label-free geometric stand-ins,
//! * [`score_file`]: responses replayed from a JSON-lines score file, plus a
//!   recorder that produces such files from any other source.

pub mod heuristic;
pub mod oracle;
pub mod requests;
pub mod score_file;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::region::RegionDecomposition;
use crate::shape::Shape;

pub use requests::{FixRequest, MergeRequest, MergeRole, SplitRequest};

/// Slots available to a split prediction.
pub const SPLIT_SLOTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Split,
    Fix,
    Merge,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Split => "split",
            OpKind::Fix => "fix",
            OpKind::Merge => "merge",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OpKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(OpKind::Split),
            "fix" => Ok(OpKind::Fix),
            "merge" => Ok(OpKind::Merge),
            other => Err(crate::Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

/// What an operator may look at besides its request. Oracles read ground
/// truth and current region membership from here.
#[derive(Clone, Copy)]
pub struct OpContext<'a> {
    pub shape: &'a Shape,
    pub decomp: &'a RegionDecomposition,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResponse {
    /// One slot in `0..SPLIT_SLOTS` per request point.
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixResponse {
    /// Inside-probability per request point.
    pub probs: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeResponse {
    pub score: f32,
}

pub trait SplitOperator {
    fn split(&mut self, ctx: &OpContext<'_>, req: &SplitRequest) -> Result<SplitResponse>;
}

pub trait FixOperator {
    fn fix(&mut self, ctx: &OpContext<'_>, req: &FixRequest) -> Result<FixResponse>;
}

pub trait MergeOperator {
    fn merge(&mut self, ctx: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse>;
}

impl<F> SplitOperator for F
where
    F: FnMut(&OpContext<'_>, &SplitRequest) -> Result<SplitResponse>,
{
    fn split(&mut self, ctx: &OpContext<'_>, req: &SplitRequest) -> Result<SplitResponse> {
        self(ctx, req)
    }
}

impl<F> FixOperator for F
where
    F: FnMut(&OpContext<'_>, &FixRequest) -> Result<FixResponse>,
{
    fn fix(&mut self, ctx: &OpContext<'_>, req: &FixRequest) -> Result<FixResponse> {
        self(ctx, req)
    }
}

impl<F> MergeOperator for F
where
    F: FnMut(&OpContext<'_>, &MergeRequest) -> Result<MergeResponse>,
{
    fn merge(&mut self, ctx: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse> {
        self(ctx, req)
    }
}

/// Merge scorer that answers the same probability for every pair.
#[derive(Clone, Copy, Debug)]
pub struct ConstantMerge(pub f32);

impl MergeOperator for ConstantMerge {
    fn merge(&mut self, _: &OpContext<'_>, _: &MergeRequest) -> Result<MergeResponse> {
        Ok(MergeResponse { score: self.0 })
    }
}

/// Wraps a merge scorer and replaces its score `p` with `1 - p` for a
/// pseudo-random subset of requests. Whether a request is flipped depends
/// only on `seed` and the request digest, so runs are reproducible.
#[derive(Debug)]
pub struct FlipMerge<M> {
    pub inner: M,
    pub flip_prob: f64,
    pub seed: u64,
}

impl<M: MergeOperator> MergeOperator for FlipMerge<M> {
    fn merge(&mut self, ctx: &OpContext<'_>, req: &MergeRequest) -> Result<MergeResponse> {
        let mut out = self.inner.merge(ctx, req)?;
        let h = splitmix64(self.seed ^ req.digest());
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.flip_prob {
            out.score = 1.0 - out.score;
        }
        Ok(out)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Operator set for one pipeline run. A stage without an operator must be
/// disabled in the configuration.
#[derive(Default)]
pub struct Operators<'a> {
    pub split: Option<Box<dyn SplitOperator + 'a>>,
    pub fix: Option<Box<dyn FixOperator + 'a>>,
    pub merge: Option<Box<dyn MergeOperator + 'a>>,
}

impl<'a> Operators<'a> {
    pub fn oracle() -> Self {
        Operators {
            split: Some(Box::new(oracle::OracleSplit)),
            fix: Some(Box::new(oracle::OracleFix)),
            merge: Some(Box::new(oracle::OracleMerge)),
        }
    }

    pub fn heuristic() -> Self {
        Operators {
            split: Some(Box::new(heuristic::HeuristicSplit::default())),
            fix: Some(Box::new(heuristic::EchoFix)),
            merge: Some(Box::new(heuristic::NormalAgreementMerge)),
        }
    }

    pub fn with_split(mut self, op: impl SplitOperator + 'a) -> Self {
        self.split = Some(Box::new(op));
        self
    }

    pub fn with_fix(mut self, op: impl FixOperator + 'a) -> Self {
        self.fix = Some(Box::new(op));
        self
    }

    pub fn with_merge(mut self, op: impl MergeOperator + 'a) -> Self {
        self.merge = Some(Box::new(op));
        self
    }
}
