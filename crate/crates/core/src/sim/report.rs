use serde::{Deserialize, Serialize};

use crate::domain::{CheckpointMedium, StorageTarget};
use crate::iomodel::{FsSample, IoRecord};

use super::queue::EventKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u32,
    pub time: f64,
    pub medium: CheckpointMedium,
    pub lost: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub id: String,
    pub nodes: Vec<u32>,
    pub storage: Option<StorageTarget>,
    pub start: f64,
    pub end: f64,
    pub wallclock: f64,
    pub steps: u32,
    /// Time from the end of one step (including its blocking writes) to the
    /// end of the next.
    pub step_times: Vec<f64>,
    pub node_seconds: f64,
    pub core_seconds: f64,
    pub restarts: u32,
    pub recomputed_steps: u32,
    pub checkpoints: Vec<CheckpointRecord>,
    pub bytes_written: u64,
}

impl JobReport {
    pub fn mean_step(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.wallclock / self.steps as f64
        }
    }
}

/// Byte movements of one dataset. Node-local holdings must balance to zero
/// when the run ends: `produced_local + staged_in = released + lost`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetLedger {
    pub id: String,
    pub size: u64,
    /// Bytes written into node-local AppDirect space by the producer.
    pub produced_local: u64,
    /// Bytes written directly to the parallel file system by the producer.
    pub produced_pfs: u64,
    pub staged_out: u64,
    pub staged_in: u64,
    pub released: u64,
    pub lost: u64,
    pub on_parallel_fs_at_end: bool,
}

impl DatasetLedger {
    pub fn produced(&self) -> u64 {
        self.produced_local + self.produced_pfs
    }

    /// Node-local bytes still held.
    pub fn local_balance(&self) -> i128 {
        self.produced_local as i128 + self.staged_in as i128 - self.released as i128 - self.lost as i128
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidencyInterval {
    pub dataset: String,
    /// `"parallel_fs"` or the node list, e.g. `"nodes 0,1"`.
    pub location: String,
    pub from: f64,
    pub to: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Write,
    StageOut,
    StageIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub dataset: String,
    pub kind: TransferKind,
    pub nodes: Vec<u32>,
    pub bytes: u64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebootRecord {
    pub nodes: Vec<u32>,
    pub start: f64,
    pub end: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedJob {
    pub job: String,
    pub completed_steps: u32,
    pub resume_step: u32,
    pub recomputed_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLossRecord {
    pub time: f64,
    pub nodes: Vec<u32>,
    pub aborted: Vec<AbortedJob>,
    /// Datasets with a node-local copy on an affected node; all survive.
    pub datasets_survived: Vec<String>,
    pub checkpoints_lost: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub subject: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    /// Delivered payload over `aggregate_bw * makespan`.
    pub parallel_fs: f64,
    /// Busy node-seconds over `node_count * makespan`.
    pub nodes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rng_seed: u64,
    pub makespan: f64,
    pub jobs: Vec<JobReport>,
    pub datasets: Vec<DatasetLedger>,
    pub residency: Vec<ResidencyInterval>,
    pub transfers: Vec<TransferRecord>,
    pub reboots: Vec<RebootRecord>,
    pub power_losses: Vec<PowerLossRecord>,
    pub utilization: Utilization,
    pub io_trace: Vec<IoRecord>,
    pub fs_samples: Vec<FsSample>,
    pub events: Vec<EventRecord>,
    pub warnings: Vec<String>,
}

impl SimReport {
    pub fn job(&self, id: &str) -> Option<&JobReport> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetLedger> {
        self.datasets.iter().find(|d| d.id == id)
    }

    /// The I/O trace as CSV with a header row.
    pub fn io_trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.io_trace {
            w.serialize(r).expect("trace rows serialize");
        }
        let mut out = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");
        if self.io_trace.is_empty() {
            out = "job_id,step,path,bytes,files,start_s,end_s\n".into();
        }
        out
    }
}

/// Ensemble spread under the three common definitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    /// `(max - min) / mean`
    pub range_over_mean: f64,
    /// `(max - mean) / mean`
    pub max_over_mean: f64,
    /// `(max - min) / (2 * mean)`
    pub half_range_over_mean: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let Some(s) = Stats::of(values) else {
            return Spread::default();
        };
        if s.mean == 0.0 {
            return Spread::default();
        }
        Spread {
            range_over_mean: (s.max - s.min) / s.mean,
            max_over_mean: (s.max - s.mean) / s.mean,
            half_range_over_mean: (s.max - s.min) / (2.0 * s.mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Stats { mean, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub nodes: usize,
    pub wallclock: f64,
    pub mean_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub node_seconds: f64,
    pub core_seconds: f64,
    /// Bytes written divided by wall-clock seconds.
    pub write_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub jobs: Vec<JobSummary>,
    pub wallclock: Option<Stats>,
    pub spread: Spread,
    pub node_seconds: f64,
    pub core_seconds: f64,
    /// Aggregate delivered bandwidth per storage path, bytes/s while busy.
    pub path_bandwidth: Vec<(String, f64)>,
}

/// Per-job statistics plus ensemble spread over job wall-clock times.
pub fn summarize_results(report: &SimReport) -> Summary {
    let jobs: Vec<JobSummary> = report
        .jobs
        .iter()
        .map(|j| {
            let st = Stats::of(&j.step_times).unwrap_or(Stats {
                mean: 0.0,
                min: 0.0,
                max: 0.0,
            });
            JobSummary {
                id: j.id.clone(),
                nodes: j.nodes.len(),
                wallclock: j.wallclock,
                mean_step: st.mean,
                min_step: st.min,
                max_step: st.max,
                node_seconds: j.node_seconds,
                core_seconds: j.core_seconds,
                write_bandwidth: if j.wallclock > 0.0 {
                    j.bytes_written as f64 / j.wallclock
                } else {
                    0.0
                },
            }
        })
        .collect();
    let walls: Vec<f64> = report.jobs.iter().map(|j| j.wallclock).collect();
    let mut paths: Vec<(String, f64, f64)> = Vec::new();
    for r in &report.io_trace {
        let dt = (r.end_s - r.start_s).max(0.0);
        match paths.iter_mut().find(|p| p.0 == r.path) {
            Some(p) => {
                p.1 += r.bytes as f64;
                p.2 += dt;
            }
            None => paths.push((r.path.clone(), r.bytes as f64, dt)),
        }
    }
    paths.sort_by(|a, b| a.0.cmp(&b.0));
    Summary {
        node_seconds: jobs.iter().map(|j| j.node_seconds).sum(),
        core_seconds: jobs.iter().map(|j| j.core_seconds).sum(),
        wallclock: Stats::of(&walls),
        spread: Spread::of(&walls),
        jobs,
        path_bandwidth: paths
            .into_iter()
            .map(|(p, b, t)| (p, if t > 0.0 { b / t } else { 0.0 }))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_definitions() {
        let s = Spread::of(&[547.0, 710.0, 621.0]);
        let mean = (547.0 + 710.0 + 621.0) / 3.0;
        assert!((s.range_over_mean - 163.0 / mean).abs() < 1e-12);
        assert!((s.max_over_mean - (710.0 - mean) / mean).abs() < 1e-12);
        assert!((s.half_range_over_mean - 81.5 / mean).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_no_spread() {
        assert_eq!(Spread::of(&[12.0]), Spread::default());
        assert_eq!(Spread::of(&[]), Spread::default());
    }
}
