use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FLConfig;
use crate::error::{Error, Result};
use crate::nn::snapshot::{read_snapshot, write_snapshot};
use crate::nn::{GradientRecord, Model, ModelSpec};

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub round: usize,
    pub model: Model,
}

/// Global-model snapshots in increasing round order plus the per-round
/// aggregate gradients (entry `t - 1` belongs to round `t`).
#[derive(Debug, Clone)]
pub struct SnapshotLog {
    pub snapshots: Vec<Snapshot>,
    pub aggregates: Vec<GradientRecord>,
    /// Source-dataset indices of each client's partition.
    pub partitions: Vec<Vec<usize>>,
}

impl SnapshotLog {
    pub fn new(partitions: Vec<Vec<usize>>) -> Self {
        SnapshotLog {
            snapshots: Vec::new(),
            aggregates: Vec::new(),
            partitions,
        }
    }

    pub fn from_snapshots(snapshots: Vec<Snapshot>) -> Result<Self> {
        let mut log = SnapshotLog::new(Vec::new());
        for s in snapshots {
            log.push_snapshot(s.round, s.model)?;
        }
        Ok(log)
    }

    pub fn push_snapshot(&mut self, round: usize, model: Model) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if round <= last.round {
                return Err(Error::InvalidConfig(format!(
                    "snapshot rounds must increase: {round} after {}",
                    last.round
                )));
            }
        }
        self.snapshots.push(Snapshot { round, model });
        Ok(())
    }

    pub(crate) fn push_aggregate(&mut self, agg: GradientRecord) {
        self.aggregates.push(agg);
    }

    pub fn rounds(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.round).collect()
    }

    pub fn final_model(&self) -> Option<&Model> {
        self.snapshots.last().map(|s| &s.model)
    }
}

/// `manifest.json` written next to the snapshot directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    pub config: FLConfig,
    pub model: ModelSpec,
    pub model_seed: u64,
    pub rounds: Vec<usize>,
    pub client_partitions: Vec<Vec<usize>>,
    /// Source-dataset indices held back as the adversary's auxiliary data.
    #[serde(default)]
    pub aux_indices: Vec<usize>,
    #[serde(default)]
    pub data_file: Option<String>,
}

fn snapshot_path(dir: &Path, round: usize) -> PathBuf {
    dir.join("snapshots").join(format!("round_{round}.flsnap"))
}

pub fn save_log(dir: &Path, log: &SnapshotLog, manifest: &TrainManifest) -> Result<()> {
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
    for s in &log.snapshots {
        write_snapshot(&snapshot_path(dir, s.round), &s.model, s.round)?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads `manifest.json` and every snapshot it lists.
pub fn load_log(dir: &Path) -> Result<(TrainManifest, SnapshotLog)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: TrainManifest = serde_json::from_str(&text)?;
    let mut log = SnapshotLog::new(manifest.client_partitions.clone());
    for &round in &manifest.rounds {
        let p = snapshot_path(dir, round);
        let (model, stored) = read_snapshot(&p)?;
        if stored != round {
            return Err(Error::format(p, format!("file holds round {stored}")));
        }
        log.push_snapshot(round, model)?;
    }
    Ok((manifest, log))
}
