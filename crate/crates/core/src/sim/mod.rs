//! Deterministic discrete-event simulation of jobs and workflows.

mod engine;
pub mod queue;
pub mod report;
mod workflow;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_cluster_spec, ApplicationProfile, CheckpointPolicy, ClusterSpec, NodeConfiguration, StorageTarget,
};
use crate::error::{Error, Result};
use crate::iomodel::{EphemeralFsParams, FsdaxParams, ObjectStoreParams};
use crate::memmodel::MemoryParams;

use engine::{Engine, JobDef, Plan, Task, TaskKind};

pub use queue::{EventKind, EventQueue};
pub use report::*;
pub use workflow::{schedule_workflow, ScheduledJob, StagingPolicy, WorkflowOutcome, WorkflowPolicy};

/// Model constants the engine reads besides the cluster spec.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub memory: MemoryParams,
    pub fsdax: FsdaxParams,
    pub ephemeral: EphemeralFsParams,
    pub objectstore: ObjectStoreParams,
}

/// One job with a fixed node allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRun {
    pub id: String,
    pub profile: ApplicationProfile,
    pub nodes: Vec<u32>,
    /// Defaults to fsdax when the nodes have AppDirect namespaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointPolicy>,
    #[serde(default)]
    pub start: f64,
}

impl JobRun {
    pub fn new(id: impl Into<String>, profile: ApplicationProfile, nodes: Vec<u32>) -> Self {
        JobRun {
            id: id.into(),
            profile,
            nodes,
            storage: None,
            checkpoint: None,
            start: 0.0,
        }
    }

    pub fn storage(mut self, target: StorageTarget) -> Self {
        self.storage = Some(target);
        self
    }

    pub fn checkpoint(mut self, policy: CheckpointPolicy) -> Self {
        self.checkpoint = Some(policy);
        self
    }

    pub fn start_at(mut self, t: f64) -> Self {
        self.start = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLoss {
    pub time: f64,
    pub nodes: Vec<u32>,
}

/// A set of concurrently allocated jobs on a configured cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub cluster: ClusterSpec,
    /// One configuration per node.
    pub configs: Vec<NodeConfiguration>,
    pub jobs: Vec<JobRun>,
    pub power_losses: Vec<PowerLoss>,
    pub seed: u64,
    /// Keep the event log, I/O trace and bandwidth samples.
    pub record_trace: bool,
}

impl Simulation {
    pub fn new(cluster: ClusterSpec, configs: Vec<NodeConfiguration>, seed: u64) -> Self {
        Simulation {
            cluster,
            configs,
            jobs: Vec::new(),
            power_losses: Vec::new(),
            seed,
            record_trace: true,
        }
    }

    /// Every node gets the same configuration.
    pub fn uniform(cluster: ClusterSpec, config: NodeConfiguration, seed: u64) -> Self {
        let configs = vec![config; cluster.node_count as usize];
        Simulation::new(cluster, configs, seed)
    }

    pub fn with_job(mut self, job: JobRun) -> Self {
        self.jobs.push(job);
        self
    }

    pub fn lean(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn run(&self, params: &ModelParams) -> Result<SimReport> {
        let cluster = validate_cluster_spec(self.cluster.clone())?;
        for c in &self.configs {
            c.validate(&cluster)?;
        }
        let mut owner: BTreeMap<u32, &str> = BTreeMap::new();
        let mut errs = Vec::new();
        for j in &self.jobs {
            errs.extend(j.profile.violations().into_iter().map(|e| format!("{}: {e}", j.id)));
            if j.nodes.is_empty() {
                errs.push(format!("job `{}` has no nodes", j.id));
            }
            if !(j.start >= 0.0) {
                errs.push(format!("job `{}` has a negative start time", j.id));
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidSpec(errs));
        }
        for j in &self.jobs {
            for &n in &j.nodes {
                if let Some(first) = owner.insert(n, &j.id) {
                    return Err(Error::AllocationConflict {
                        node: n,
                        first: first.to_string(),
                        second: j.id.clone(),
                    });
                }
            }
        }
        let tasks = self
            .jobs
            .iter()
            .map(|j| Task {
                name: j.id.clone(),
                occupies: j.nodes.clone(),
                deps: Vec::new(),
                kind: TaskKind::Job(JobDef {
                    id: j.id.clone(),
                    profile: j.profile.clone(),
                    nodes: j.nodes.clone(),
                    storage: j.storage,
                    checkpoint: j.checkpoint.clone(),
                    start_at: j.start,
                }),
            })
            .collect();
        let plan = Plan {
            tasks,
            datasets: Vec::new(),
            initial: self.configs.clone(),
            power_losses: self.power_losses.clone(),
            seed: self.seed,
            record_trace: self.record_trace,
        };
        Engine::new(&cluster, params, plan)?.run()
    }
}

/// Runs jobs with fixed allocations side by side.
pub fn run_simulation(
    cluster: &ClusterSpec,
    configs: Vec<NodeConfiguration>,
    jobs: Vec<JobRun>,
    seed: u64,
    params: &ModelParams,
) -> Result<SimReport> {
    let mut sim = Simulation::new(cluster.clone(), configs, seed);
    sim.jobs = jobs;
    sim.run(params)
}

/// Adds a power loss on `nodes` at `time`.
pub fn inject_power_loss(mut sim: Simulation, time: f64, nodes: Vec<u32>) -> Simulation {
    sim.power_losses.push(PowerLoss { time, nodes });
    sim
}
