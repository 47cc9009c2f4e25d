//! Plans a workflow DAG onto nodes and runs it.
//!
//! Consumers are placed on their producers' nodes when possible. Node-local
//! data then hands over for free unless the staging policy forces it through
//! the parallel file system, or a reconfiguration in between wipes the
//! AppDirect space. Everything else moves as a stage-out from the producer's
//! nodes followed by a stage-in to the consumer's nodes.

use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_cluster_spec, ClusterSpec, DatasetHome, NodeConfiguration, PlatformMode, WorkflowSpec,
};
use crate::error::{Error, Result};
use crate::units::Bytes;

use super::engine::{Engine, JobDef, Plan, Task, TaskKind};
use super::{ModelParams, PowerLoss, SimReport};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagingPolicy {
    /// Hand node-local data over in place when the consumer runs there.
    #[default]
    PreferNodeLocal,
    /// Always stage node-local data out and back in.
    ForceParallelFs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowPolicy {
    #[serde(default)]
    pub staging: StagingPolicy,
    /// Starting configuration of every node. When absent, each node starts
    /// in the configuration of the first job placed on it.
    #[serde(default)]
    pub initial: Option<NodeConfiguration>,
    #[serde(default)]
    pub power_losses: Vec<PowerLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledJob {
    pub id: String,
    pub nodes: Vec<u32>,
    /// Nodes rebooted into a new configuration before this job.
    pub rebooted: Vec<u32>,
    pub local_inputs: Vec<String>,
    pub staged_inputs: Vec<String>,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowOutcome {
    pub schedule: Vec<ScheduledJob>,
    pub report: SimReport,
}

struct OpenCopy {
    dataset: usize,
    nodes: Vec<u32>,
    /// Jobs reading this copy in place, plus the task that created it.
    users: Vec<usize>,
}

struct Planner<'a> {
    cluster: &'a ClusterSpec,
    wf: &'a WorkflowSpec,
    policy: &'a WorkflowPolicy,
    tasks: Vec<Task>,
    current: Vec<Option<NodeConfiguration>>,
    initial: Vec<Option<NodeConfiguration>>,
    last_use: Vec<u64>,
    use_counter: u64,
    open: Vec<OpenCopy>,
    write_task: Vec<Option<usize>>,
    producer_nodes: Vec<Vec<u32>>,
    stage_out: Vec<Option<usize>>,
    consumers_left: Vec<usize>,
    job_task: Vec<usize>,
    schedule: Vec<ScheduledJob>,
}

fn job_config(cluster: &ClusterSpec, mode: PlatformMode, memory_space: Bytes) -> Result<NodeConfiguration> {
    if mode == PlatformMode::Memory && memory_space == Bytes::ZERO {
        // Memory mode without an explicit split means the whole B-APM
        return Ok(NodeConfiguration::memory(cluster));
    }
    NodeConfiguration::mixed(cluster, mode, memory_space)
}

impl<'a> Planner<'a> {
    fn push(&mut self, name: String, kind: TaskKind, deps: Vec<usize>, occupies: Vec<u32>) -> usize {
        let mut deps = deps;
        deps.sort_unstable();
        deps.dedup();
        self.tasks.push(Task {
            name,
            kind,
            deps,
            occupies,
        });
        self.tasks.len() - 1
    }

    fn pick_nodes(&mut self, wanted: u32, preferred: &[u32]) -> Vec<u32> {
        let mut nodes: Vec<u32> = Vec::new();
        for &n in preferred {
            if nodes.len() < wanted as usize && !nodes.contains(&n) {
                nodes.push(n);
            }
        }
        let mut rest: Vec<u32> = (0..self.cluster.node_count)
            .filter(|n| !nodes.contains(n))
            .collect();
        rest.sort_by_key(|&n| (self.last_use[n as usize], n));
        for n in rest {
            if nodes.len() >= wanted as usize {
                break;
            }
            nodes.push(n);
        }
        for &n in &nodes {
            self.use_counter += 1;
            self.last_use[n as usize] = self.use_counter;
        }
        nodes
    }

    fn ensure_stage_out(&mut self, d: usize) -> usize {
        if let Some(t) = self.stage_out[d] {
            return t;
        }
        let write = self.write_task[d].expect("dataset written before staging");
        let nodes = self.producer_nodes[d].clone();
        let name = format!("stage-out:{}", self.wf.datasets[d].id);
        let t = self.push(name, TaskKind::StageOut { dataset: d, nodes }, vec![write], Vec::new());
        self.stage_out[d] = Some(t);
        t
    }

    /// Closes a node-local copy: stages it out first if anyone still needs it.
    fn close_copy(&mut self, idx: usize, at_end: &[usize]) -> usize {
        let c = self.open.remove(idx);
        let d = c.dataset;
        let needed_later = self.consumers_left[d] > 0 || self.wf.keep(&self.wf.datasets[d].id);
        let mut deps = c.users.clone();
        if needed_later && self.producer_nodes[d] == c.nodes {
            let so = if self.stage_out[d].is_none() && self.consumers_left[d] == 0 {
                // only kept: move it out when the workflow ends
                let write = self.write_task[d].expect("written");
                let mut so_deps = at_end.to_vec();
                so_deps.push(write);
                let name = format!("stage-out:{}", self.wf.datasets[d].id);
                let t = self.push(
                    name,
                    TaskKind::StageOut {
                        dataset: d,
                        nodes: c.nodes.clone(),
                    },
                    so_deps,
                    Vec::new(),
                );
                self.stage_out[d] = Some(t);
                t
            } else {
                self.ensure_stage_out(d)
            };
            deps.push(so);
        }
        let name = format!("release:{}@{}", self.wf.datasets[d].id, nodes_label(&c.nodes));
        self.push(
            name,
            TaskKind::Release {
                dataset: d,
                nodes: c.nodes,
            },
            deps,
            Vec::new(),
        )
    }

    fn plan_job(&mut self, j: usize) -> Result<()> {
        let spec = &self.wf.jobs[j];
        let config = job_config(self.cluster, spec.mode, spec.memory_space)?;
        if spec.nodes > self.cluster.node_count {
            return Err(Error::InvalidSpec(vec![format!(
                "job `{}` needs {} nodes but the cluster has {}",
                spec.id, spec.nodes, self.cluster.node_count
            )]));
        }
        let inputs: Vec<usize> = self
            .wf
            .inputs_of(&spec.id)
            .iter()
            .map(|id| self.wf.datasets.iter().position(|d| d.id == *id).unwrap())
            .collect();
        let mut preferred = Vec::new();
        for &d in &inputs {
            if self.wf.datasets[d].home == DatasetHome::NodeLocal {
                preferred.extend(self.producer_nodes[d].iter().copied());
            }
        }
        let nodes = self.pick_nodes(spec.nodes, &preferred);

        // reconfigure nodes whose setup differs
        let mut rebooted = Vec::new();
        for &n in &nodes {
            match &self.current[n as usize] {
                None => {
                    if let Some(init) = &self.policy.initial {
                        self.initial[n as usize] = Some(init.clone());
                        if *init != config {
                            rebooted.push(n);
                        }
                    } else {
                        self.initial[n as usize] = Some(config.clone());
                    }
                }
                Some(c) if *c != config => rebooted.push(n),
                Some(_) => {}
            }
        }
        let mut deps = Vec::new();
        if !rebooted.is_empty() {
            let mut reboot_deps = Vec::new();
            let mut i = 0;
            while i < self.open.len() {
                let wipes = self.open[i].nodes.iter().any(|n| {
                    rebooted.contains(n)
                        && self.current[*n as usize]
                            .as_ref()
                            .is_some_and(|c| c.appdirect_space != config.appdirect_space)
                });
                if wipes {
                    let r = self.close_copy(i, &[]);
                    reboot_deps.push(r);
                } else {
                    i += 1;
                }
            }
            let name = format!("reboot:{}", spec.id);
            let r = self.push(
                name,
                TaskKind::Reboot {
                    nodes: rebooted.clone(),
                    config: config.clone(),
                    reason: format!("reconfigure for `{}`", spec.id),
                },
                reboot_deps,
                rebooted.clone(),
            );
            deps.push(r);
        }
        for &n in &nodes {
            self.current[n as usize] = Some(config.clone());
        }

        // inputs
        let mut local_inputs = Vec::new();
        let mut staged_inputs = Vec::new();
        let mut pending_users = Vec::new();
        for &d in &inputs {
            let ds = &self.wf.datasets[d];
            let write = self.write_task[d].expect("producer planned first");
            self.consumers_left[d] -= 1;
            if ds.home == DatasetHome::ParallelFs {
                deps.push(write);
                continue;
            }
            let local = if self.policy.staging == StagingPolicy::PreferNodeLocal {
                self.open
                    .iter()
                    .position(|c| c.dataset == d && c.nodes.iter().all(|n| nodes.contains(n)))
            } else {
                None
            };
            if let Some(ci) = local {
                // the consumer reads in place
                deps.extend(self.open[ci].users.iter().copied().filter(|&u| {
                    matches!(self.tasks[u].kind, TaskKind::Write { .. } | TaskKind::StageIn { .. })
                }));
                pending_users.push(ci);
                local_inputs.push(ds.id.clone());
                continue;
            }
            let so = self.ensure_stage_out(d);
            let mut si_deps = vec![so];
            si_deps.extend(deps.iter().copied());
            let name = format!("stage-in:{}@{}", ds.id, spec.id);
            let si = self.push(
                name,
                TaskKind::StageIn {
                    dataset: d,
                    nodes: nodes.clone(),
                },
                si_deps,
                Vec::new(),
            );
            deps.push(si);
            self.open.push(OpenCopy {
                dataset: d,
                nodes: nodes.clone(),
                users: vec![si],
            });
            pending_users.push(self.open.len() - 1);
            staged_inputs.push(ds.id.clone());
        }

        let job = self.push(
            spec.id.clone(),
            TaskKind::Job(JobDef {
                id: spec.id.clone(),
                profile: spec.profile.clone(),
                nodes: nodes.clone(),
                storage: spec.storage,
                checkpoint: spec.checkpoint.clone(),
                start_at: 0.0,
            }),
            deps,
            nodes.clone(),
        );
        for ci in pending_users {
            self.open[ci].users.push(job);
        }
        self.job_task[j] = job;

        // outputs
        for id in self.wf.outputs_of(&spec.id) {
            let d = self.wf.datasets.iter().position(|x| x.id == id).unwrap();
            let ds = &self.wf.datasets[d];
            let local = ds.home == DatasetHome::NodeLocal;
            if local {
                let per_node = Bytes(ds.size.0.div_ceil(nodes.len() as u64));
                if per_node > config.appdirect_space {
                    return Err(Error::InsufficientCapacity {
                        what: ds.id.clone(),
                        needed: per_node,
                        available: config.appdirect_space,
                    });
                }
            }
            let name = format!("write:{}", ds.id);
            let w = self.push(
                name,
                TaskKind::Write {
                    dataset: d,
                    nodes: nodes.clone(),
                    local,
                },
                vec![job],
                nodes.clone(),
            );
            self.write_task[d] = Some(w);
            self.producer_nodes[d] = nodes.clone();
            if local {
                self.open.push(OpenCopy {
                    dataset: d,
                    nodes: nodes.clone(),
                    users: vec![w],
                });
            }
        }
        self.schedule.push(ScheduledJob {
            id: spec.id.clone(),
            nodes,
            rebooted,
            local_inputs,
            staged_inputs,
            start: 0.0,
            end: 0.0,
        });
        Ok(())
    }
}

fn nodes_label(nodes: &[u32]) -> String {
    nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

/// Places and runs every job of `workflow`, staging data between them.
pub fn schedule_workflow(
    cluster: &ClusterSpec,
    workflow: &WorkflowSpec,
    policy: &WorkflowPolicy,
    params: &ModelParams,
    seed: u64,
) -> Result<WorkflowOutcome> {
    let cluster = validate_cluster_spec(cluster.clone())?;
    let order = workflow.validate()?;
    let n = cluster.node_count as usize;
    let nd = workflow.datasets.len();
    let mut consumers_left = vec![0; nd];
    for e in &workflow.edges {
        if e.consumer.is_some() {
            let d = workflow.datasets.iter().position(|x| x.id == e.dataset).unwrap();
            consumers_left[d] += 1;
        }
    }
    let mut p = Planner {
        cluster: &cluster,
        wf: workflow,
        policy,
        tasks: Vec::new(),
        current: vec![None; n],
        initial: vec![None; n],
        last_use: vec![0; n],
        use_counter: 0,
        open: Vec::new(),
        write_task: vec![None; nd],
        producer_nodes: vec![Vec::new(); nd],
        stage_out: vec![None; nd],
        consumers_left,
        job_task: vec![0; workflow.jobs.len()],
        schedule: Vec::new(),
    };
    for &j in &order {
        p.plan_job(j)?;
    }
    let all_jobs: Vec<usize> = p.job_task.clone();
    while !p.open.is_empty() {
        p.close_copy(0, &all_jobs);
    }
    let initial: Vec<NodeConfiguration> = p
        .initial
        .iter()
        .map(|c| {
            c.clone()
                .or_else(|| policy.initial.clone())
                .unwrap_or_else(|| NodeConfiguration::app_direct(&cluster))
        })
        .collect();
    let mut schedule = std::mem::take(&mut p.schedule);
    let plan = Plan {
        tasks: p.tasks,
        datasets: workflow.datasets.clone(),
        initial,
        power_losses: policy.power_losses.clone(),
        seed,
        record_trace: true,
    };
    let report = Engine::new(&cluster, params, plan)?.run()?;
    for s in schedule.iter_mut() {
        if let Some(j) = report.job(&s.id) {
            s.start = j.start;
            s.end = j.end;
        }
    }
    Ok(WorkflowOutcome { schedule, report })
}
