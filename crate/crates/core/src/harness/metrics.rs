use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::sha256;
use crate::rollup::GasReport;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub trainer: String,
    /// 1-based index of the completed task.
    pub task_index: u64,
    pub reputation: f64,
}

/// Gas of one workload: a posting session on L2, a block on L1, or a row of
/// the calibration replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasRow {
    /// Function name, or names joined by `+` for a mixed workload.
    pub function: String,
    pub calls: u64,
    pub batches: u64,
    pub commit: u64,
    pub verify: u64,
    pub execute: u64,
    pub total: u64,
    pub l1_equivalent: u64,
}

impl GasRow {
    pub fn from_report(r: &GasReport) -> Self {
        let names: Vec<&str> = r.calls.keys().map(|f| f.name()).collect();
        Self {
            function: names.join("+"),
            calls: r.calls.values().sum(),
            batches: r.batches() as u64,
            commit: r.commit().0,
            verify: r.verify.0,
            execute: r.execute.0,
            total: r.total.0,
            l1_equivalent: r.l1_equivalent.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSample {
    pub layer: String,
    pub function: String,
    pub send_rate: f64,
    pub tps: f64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRow {
    pub trainer: String,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub trajectories: Vec<TrajectoryPoint>,
    pub gas: Vec<GasRow>,
    pub throughput: Vec<ThroughputSample>,
    /// Total reward paid to each trainer.
    pub rewards: Vec<RewardRow>,
}

const TRAJECTORIES: &str = "trajectories.csv";
const GAS: &str = "gas.csv";
const THROUGHPUT: &str = "throughput.csv";
const REWARDS: &str = "rewards.csv";
const JSON: &str = "metrics.json";

impl MetricsFrame {
    /// JSON with object keys sorted, stable across runs.
    pub fn to_json(&self) -> String {
        // serde_json maps are ordered by key
        let value = serde_json::to_value(self).expect("frame serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("frame serializes");
        hex::encode(sha256(value.to_string().as_bytes()))
    }

    /// Trajectory of one trainer, in task order.
    pub fn trajectory(&self, trainer: &str) -> Vec<f64> {
        self.trajectories
            .iter()
            .filter(|p| p.trainer == trainer)
            .map(|p| p.reputation)
            .collect()
    }

    pub fn reward_of(&self, trainer: &str) -> u64 {
        self.rewards.iter().find(|r| r.trainer == trainer).map_or(0, |r| r.amount)
    }

    pub fn gas_total(&self) -> u64 {
        self.gas.iter().map(|g| g.total).sum()
    }

    /// Writes the CSV tables and `metrics.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(TRAJECTORIES), &self.trajectories)?;
        write_csv(&dir.join(GAS), &self.gas)?;
        write_csv(&dir.join(THROUGHPUT), &self.throughput)?;
        write_csv(&dir.join(REWARDS), &self.rewards)?;
        fs::write(dir.join(JSON), self.to_json())?;
        Ok(())
    }

    /// Reads a frame back from the CSV tables written by [`MetricsFrame::export`].
    pub fn import(dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let dir = dir.as_ref();
        Ok(Self {
            trajectories: read_csv(&dir.join(TRAJECTORIES))?,
            gas: read_csv(&dir.join(GAS))?,
            throughput: read_csv(&dir.join(THROUGHPUT))?,
            rewards: read_csv(&dir.join(REWARDS))?,
        })
    }

    /// Per-trainer summary used by reports.
    pub fn final_reputations(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for p in &self.trajectories {
            out.insert(p.trainer.clone(), p.reputation);
        }
        out
    }
}

/// A row type with a fixed CSV header.
trait Table: Serialize + for<'de> Deserialize<'de> {
    const HEADER: &'static [&'static str];
}

impl Table for TrajectoryPoint {
    const HEADER: &'static [&'static str] = &["trainer", "task_index", "reputation"];
}

impl Table for GasRow {
    const HEADER: &'static [&'static str] =
        &["function", "calls", "batches", "commit", "verify", "execute", "total", "l1_equivalent"];
}

impl Table for ThroughputSample {
    const HEADER: &'static [&'static str] = &["layer", "function", "send_rate", "tps", "latency_s"];
}

impl Table for RewardRow {
    const HEADER: &'static [&'static str] = &["trainer", "amount"];
}

fn write_csv<T: Table>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    // written by hand so an empty table still gets its header line
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: Table>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
