use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MeasurementPlan, RunError, RunRecord, RunSet};

pub const SCHEMA_VERSION: u64 = 1;

/// On-disk form of a [`RunSet`]. Aggregates are not stored; they are
/// recomputed on load, which keeps them consistent with the records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSetFile {
    pub schema_version: u64,
    pub plan: MeasurementPlan,
    pub records: Vec<RunRecord>,
    pub snapshot_hash: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl From<&RunSet> for RunSetFile {
    fn from(rs: &RunSet) -> Self {
        RunSetFile {
            schema_version: SCHEMA_VERSION,
            plan: rs.plan.clone(),
            records: rs.records.clone(),
            snapshot_hash: rs.snapshot_hash.clone(),
            meta: rs.meta.clone(),
        }
    }
}

impl RunSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RunSetFile::from(self)).expect("run set serializes")
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(RunSetFile::from(self)).expect("run set serializes")
    }

    /// Parses a run-record file. A full report document is accepted too;
    /// its `run_set` member is used.
    pub fn from_json(text: &str) -> Result<RunSet, RunError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        RunSet::from_value(value)
    }

    pub fn from_value(mut value: serde_json::Value) -> Result<RunSet, RunError> {
        if value.get("schema_version").is_none() {
            if let Some(inner) = value.get_mut("run_set") {
                value = inner.take();
            }
        }
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| RunError::InvalidRecord("missing schema_version".into()))?;
        if found != SCHEMA_VERSION {
            return Err(RunError::SchemaMismatch {
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let file: RunSetFile = serde_json::from_value(value)?;
        let discard_marks: Vec<bool> = file.records.iter().map(|r| r.discarded).collect();
        let rs = RunSet::new(file.plan, file.records, file.snapshot_hash, file.meta)?;
        let now: Vec<bool> = rs.records.iter().map(|r| r.discarded).collect();
        if now != discard_marks {
            return Err(RunError::InvalidRecord(
                "discarded flags disagree with the plan's discard_first".into(),
            ));
        }
        Ok(rs)
    }
}

pub fn save_run_set(rs: &RunSet, path: &Path) -> Result<(), RunError> {
    std::fs::write(path, rs.to_json() + "\n")?;
    Ok(())
}

pub fn load_run_set(path: &Path) -> Result<RunSet, RunError> {
    let text = std::fs::read_to_string(path)?;
    RunSet::from_json(&text)
}
