//! Operator selection flags.
//!
//! `--op` takes either a bare source applied to every stage (`oracle`,
//! `heuristic`) or `STAGE=SOURCE`, where `SOURCE` is `oracle`, `heuristic`,
//! `replay:PATH` or `record:PATH`. `--record` and `--replay` take
//! `STAGE:PATH`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use shred_core::operators::OpKind;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpSource {
    Oracle,
    Heuristic,
    Replay(PathBuf),
    /// Record whatever the stage would otherwise use.
    Record(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSpec {
    /// `None` applies to all three stages.
    pub stage: Option<OpKind>,
    pub source: OpSource,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecError(pub String);

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SpecError {}

fn non_empty_path(kind: &str, path: &str) -> Result<PathBuf, SpecError> {
    if path.is_empty() {
        Err(SpecError(format!("{kind} needs a path")))
    } else {
        Ok(PathBuf::from(path))
    }
}

impl FromStr for OpSource {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        match s {
            "oracle" => Ok(OpSource::Oracle),
            "heuristic" => Ok(OpSource::Heuristic),
            _ => {
                if let Some(p) = s.strip_prefix("replay:") {
                    Ok(OpSource::Replay(non_empty_path("replay", p)?))
                } else if let Some(p) = s.strip_prefix("record:") {
                    Ok(OpSource::Record(non_empty_path("record", p)?))
                } else {
                    Err(SpecError(format!(
                        "unknown operator source {s:?}; expected oracle, heuristic, replay:PATH or record:PATH"
                    )))
                }
            }
        }
    }
}

fn parse_stage(s: &str) -> Result<OpKind, SpecError> {
    s.parse()
        .map_err(|_| SpecError(format!("unknown stage {s:?}")))
}

impl FromStr for OpSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        match s.split_once('=') {
            Some((stage, source)) => Ok(OpSpec {
                stage: Some(parse_stage(stage)?),
                source: source.parse()?,
            }),
            None => {
                let source: OpSource = s.parse()?;
                if matches!(source, OpSource::Replay(_) | OpSource::Record(_)) {
                    return Err(SpecError(format!(
                        "{s:?} must name a stage, as in merge={s}"
                    )));
                }
                Ok(OpSpec {
                    stage: None,
                    source,
                })
            }
        }
    }
}

/// `STAGE:PATH`, as taken by `--record` and `--replay`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePath {
    pub stage: OpKind,
    pub path: PathBuf,
}

impl FromStr for StagePath {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        let (stage, path) = s
            .split_once(':')
            .ok_or_else(|| SpecError(format!("expected STAGE:PATH, got {s:?}")))?;
        Ok(StagePath {
            stage: parse_stage(stage)?,
            path: non_empty_path("stage", path)?,
        })
    }
}

/// Resolved choice for one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub base: OpSource,
    pub record: Option<PathBuf>,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            base: OpSource::Oracle,
            record: None,
        }
    }
}

/// Per-stage plans in split, fix, merge order. Later flags win.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpPlan {
    pub stages: [StagePlan; 3],
}

fn slot(kind: OpKind) -> usize {
    match kind {
        OpKind::Split => 0,
        OpKind::Fix => 1,
        OpKind::Merge => 2,
    }
}

impl OpPlan {
    pub fn build(ops: &[OpSpec], record: &[StagePath], replay: &[StagePath]) -> Self {
        let mut plan = OpPlan::default();
        for spec in ops {
            let targets: Vec<usize> = match spec.stage {
                Some(k) => vec![slot(k)],
                None => vec![0, 1, 2],
            };
            for t in targets {
                match &spec.source {
                    OpSource::Record(p) => plan.stages[t].record = Some(p.clone()),
                    src => plan.stages[t].base = src.clone(),
                }
            }
        }
        for r in replay {
            plan.stages[slot(r.stage)].base = OpSource::Replay(r.path.clone());
        }
        for r in record {
            plan.stages[slot(r.stage)].record = Some(r.path.clone());
        }
        plan
    }

    pub fn stage(&self, kind: OpKind) -> &StagePlan {
        &self.stages[slot(kind)]
    }

    pub fn replay_paths(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = self
            .stages
            .iter()
            .filter_map(|s| match &s.base {
                OpSource::Replay(p) => Some(p.clone()),
                _ => None,
            })
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn record_paths(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = self
            .stages
            .iter()
            .filter_map(|s| s.record.clone())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn uses_ground_truth(&self) -> bool {
        self.stages.iter().any(|s| s.base == OpSource::Oracle)
    }
}
