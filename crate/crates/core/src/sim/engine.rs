//! Task-graph executor shared by plain job runs and workflows.
//!
//! A run is a list of tasks (jobs, reboots, dataset writes, staging
//! transfers, releases) with dependencies. Tasks that occupy nodes start in
//! plan order per node. Everything advances through one event queue; the
//! shared file system is a separate resource whose completions are turned
//! into queue events as the clock passes them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{
    ApplicationProfile, CheckpointMedium, CheckpointPolicy, ClusterSpec, DatasetSpec, NodeConfiguration,
    StorageTarget,
};
use crate::error::{Error, Result};
use crate::iomodel::{
    ephemeralfs_throughput, fsdax_write_time, jitter_multiplier, objectstore_write_throughput, FsRequest,
    IoRecord, IorAccess, SharedFs,
};
use crate::memmodel::step_compute_time;
use crate::units::Bytes;

use super::queue::{Event, EventKind, EventQueue};
use super::report::*;
use super::{ModelParams, PowerLoss};

const NO_TASK: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct JobDef {
    pub id: String,
    pub profile: ApplicationProfile,
    pub nodes: Vec<u32>,
    pub storage: Option<StorageTarget>,
    pub checkpoint: Option<CheckpointPolicy>,
    pub start_at: f64,
}

#[derive(Debug, Clone)]
pub(crate) enum TaskKind {
    Job(JobDef),
    Reboot {
        nodes: Vec<u32>,
        config: NodeConfiguration,
        reason: String,
    },
    /// The producer writes a dataset, node-locally or to the parallel FS.
    Write { dataset: usize, nodes: Vec<u32>, local: bool },
    StageOut { dataset: usize, nodes: Vec<u32> },
    StageIn { dataset: usize, nodes: Vec<u32> },
    Release { dataset: usize, nodes: Vec<u32> },
}

#[derive(Debug, Clone)]
pub(crate) struct Task {
    pub name: String,
    pub kind: TaskKind,
    pub deps: Vec<usize>,
    /// Nodes held exclusively while the task runs, claimed in plan order.
    pub occupies: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub tasks: Vec<Task>,
    pub datasets: Vec<DatasetSpec>,
    pub initial: Vec<NodeConfiguration>,
    pub power_losses: Vec<PowerLoss>,
    pub seed: u64,
    pub record_trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending,
    Running,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Wait {
    Running,
    /// Blocked until the current write group finishes.
    SyncWrite(u32),
    /// Async writer with a group in flight; the group for this step waits.
    QueueFull(u32),
    Drain,
}

#[derive(Debug, Clone)]
struct JobRt {
    step_time: f64,
    config: NodeConfiguration,
    started: Option<f64>,
    end: Option<f64>,
    done: u32,
    block: Option<(f64, u32, u32)>,
    inflight: usize,
    wait: Wait,
    step_end: Vec<f64>,
    checkpoints: Vec<CheckpointRecord>,
    restarts: u32,
    recomputed: u32,
    bytes_written: u64,
    aborted: bool,
}

#[derive(Debug, Clone)]
enum WriteKind {
    Output { path: String, files: u64 },
    Checkpoint { medium: CheckpointMedium },
    Transfer,
}

#[derive(Debug, Clone)]
struct WriteInfo {
    task: usize,
    gen: u32,
    step: u32,
    bytes: u64,
    start: f64,
    kind: WriteKind,
}

#[derive(Debug, Clone)]
struct Copy {
    dataset: usize,
    nodes: Vec<u32>,
    per_node: u64,
    residency: usize,
}

pub(crate) struct Engine<'a> {
    cluster: &'a ClusterSpec,
    params: &'a ModelParams,
    tasks: Vec<Task>,
    status: Vec<Status>,
    gen: Vec<u32>,
    jobs: Vec<Option<JobRt>>,
    node_queue: Vec<VecDeque<usize>>,
    node_config: Vec<NodeConfiguration>,
    node_down: Vec<u32>,
    node_usage: Vec<u64>,
    queue: EventQueue,
    fs: SharedFs,
    rng: ChaCha8Rng,
    writes: BTreeMap<u64, WriteInfo>,
    next_write: u64,
    datasets: Vec<DatasetSpec>,
    ledgers: Vec<DatasetLedger>,
    copies: Vec<Copy>,
    residency: Vec<ResidencyInterval>,
    pfs_residency: Vec<Option<usize>>,
    transfers: Vec<TransferRecord>,
    reboots: Vec<RebootRecord>,
    reboot_start: Vec<f64>,
    power_losses: Vec<PowerLoss>,
    pl_records: Vec<PowerLossRecord>,
    io_trace: Vec<IoRecord>,
    events: Vec<EventRecord>,
    record: bool,
    seed: u64,
    now: f64,
}

fn node_list(nodes: &[u32]) -> String {
    let v: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
    format!("nodes {}", v.join(","))
}

impl<'a> Engine<'a> {
    pub(crate) fn new(cluster: &'a ClusterSpec, params: &'a ModelParams, plan: Plan) -> Result<Self> {
        let n = cluster.node_count as usize;
        if plan.initial.len() != n {
            return Err(Error::InvalidSpec(vec![format!(
                "{} node configurations given for {n} nodes",
                plan.initial.len()
            )]));
        }
        let mut errs = Vec::new();
        let mut node_queue = vec![VecDeque::new(); n];
        for (i, t) in plan.tasks.iter().enumerate() {
            for &node in &t.occupies {
                match node_queue.get_mut(node as usize) {
                    Some(q) => q.push_back(i),
                    None => errs.push(format!("task `{}` uses node {node} outside the cluster", t.name)),
                }
            }
            for &d in &t.deps {
                if d >= i {
                    errs.push(format!("task `{}` depends on a later task", t.name));
                }
            }
        }
        for pl in &plan.power_losses {
            if pl.nodes.iter().any(|&x| x as usize >= n) {
                errs.push("power loss names a node outside the cluster".into());
            }
            if !(pl.time >= 0.0) {
                errs.push("power loss time must be non-negative".into());
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidSpec(errs));
        }
        let mut fs = SharedFs::new(&cluster.parallel_fs);
        if !plan.record_trace {
            fs = fs.without_samples();
        }
        let ledgers = plan
            .datasets
            .iter()
            .map(|d| DatasetLedger {
                id: d.id.clone(),
                size: d.size.0,
                ..Default::default()
            })
            .collect();
        let tn = plan.tasks.len();
        Ok(Engine {
            cluster,
            params,
            status: vec![Status::Pending; tn],
            gen: vec![0; tn],
            jobs: vec![None; tn],
            reboot_start: vec![0.0; tn],
            tasks: plan.tasks,
            node_queue,
            node_config: plan.initial,
            node_down: vec![0; n],
            node_usage: vec![0; n],
            queue: EventQueue::new(),
            fs,
            rng: ChaCha8Rng::seed_from_u64(plan.seed),
            writes: BTreeMap::new(),
            next_write: 0,
            pfs_residency: vec![None; plan.datasets.len()],
            datasets: plan.datasets,
            ledgers,
            copies: Vec::new(),
            residency: Vec::new(),
            transfers: Vec::new(),
            reboots: Vec::new(),
            power_losses: plan.power_losses,
            pl_records: Vec::new(),
            io_trace: Vec::new(),
            events: Vec::new(),
            record: plan.record_trace,
            seed: plan.seed,
            now: 0.0,
        })
    }

    fn push(&mut self, time: f64, kind: EventKind, target: usize, arg: u64) {
        let gen = if target == NO_TASK { 0 } else { self.gen[target] };
        self.queue.push(time.max(self.now), kind, target, gen, arg);
    }

    pub(crate) fn run(mut self) -> Result<SimReport> {
        for i in 0..self.power_losses.len() {
            let t = self.power_losses[i].time;
            self.queue.push(t, EventKind::PowerLoss, NO_TASK, 0, i as u64);
        }
        self.try_start()?;
        loop {
            let tq = self.queue.peek_time();
            let tf = self.fs.next_event();
            if let Some(tf) = tf {
                if tq.is_none_or(|tq| tf < tq) {
                    let done = self.fs.advance(tf);
                    self.now = self.now.max(tf);
                    self.fs_completions(done);
                    continue;
                }
            }
            let Some(ev) = self.queue.pop() else { break };
            let done = self.fs.advance(ev.time);
            self.now = self.now.max(ev.time);
            self.fs_completions(done);
            if self.record {
                let subject = if ev.target == NO_TASK {
                    format!("power-loss#{}", ev.arg)
                } else {
                    self.tasks[ev.target].name.clone()
                };
                self.events.push(EventRecord {
                    time: ev.time,
                    seq: ev.seq,
                    kind: ev.kind,
                    subject,
                });
            }
            self.dispatch(ev)?;
        }
        let stuck: Vec<String> = self
            .tasks
            .iter()
            .zip(&self.status)
            .filter(|(_, s)| **s != Status::Done)
            .map(|(t, _)| t.name.clone())
            .collect();
        if !stuck.is_empty() {
            return Err(Error::InvalidSpec(vec![format!(
                "schedule cannot complete; blocked tasks: {}",
                stuck.join(", ")
            )]));
        }
        Ok(self.finish())
    }

    fn fs_completions(&mut self, done: Vec<crate::iomodel::FsCompletion>) {
        for c in done {
            let Some(info) = self.writes.get(&c.tag) else { continue };
            let kind = match (&info.kind, &self.tasks[info.task].kind) {
                (WriteKind::Transfer, TaskKind::StageIn { .. } | TaskKind::StageOut { .. }) => {
                    EventKind::StageComplete
                }
                _ => EventKind::WriteComplete,
            };
            let (task, gen) = (info.task, info.gen);
            self.queue.push(c.completed.max(self.now), kind, task, gen, c.tag);
        }
    }

    fn dispatch(&mut self, ev: Event) -> Result<()> {
        if ev.kind == EventKind::PowerLoss {
            return self.power_loss(ev.arg as usize);
        }
        if ev.kind == EventKind::RebootComplete && ev.target == NO_TASK {
            return self.power_reboot_done(ev.arg as usize);
        }
        if ev.gen != self.gen[ev.target] {
            return Ok(());
        }
        match ev.kind {
            EventKind::JobStart => self.job_start(ev.target),
            EventKind::StepComplete => self.step_complete(ev.target, ev.arg as u32),
            EventKind::WriteComplete | EventKind::StageComplete => self.write_complete(ev.arg),
            EventKind::RebootComplete => self.reboot_done(ev.target),
            EventKind::JobEnd => self.task_done(ev.target),
            EventKind::PowerLoss => unreachable!(),
        }
    }

    fn task_nodes(&self, i: usize) -> &[u32] {
        match &self.tasks[i].kind {
            TaskKind::Job(j) => &j.nodes,
            TaskKind::Reboot { nodes, .. }
            | TaskKind::Write { nodes, .. }
            | TaskKind::StageOut { nodes, .. }
            | TaskKind::StageIn { nodes, .. }
            | TaskKind::Release { nodes, .. } => nodes,
        }
    }

    fn ready(&self, i: usize) -> bool {
        let t = &self.tasks[i];
        t.deps.iter().all(|&d| self.status[d] == Status::Done)
            && t
                .occupies
                .iter()
                .all(|&n| self.node_queue[n as usize].front() == Some(&i))
            && self.task_nodes(i).iter().all(|&n| self.node_down[n as usize] == 0)
    }

    fn try_start(&mut self) -> Result<()> {
        loop {
            let mut progressed = false;
            for i in 0..self.tasks.len() {
                if self.status[i] == Status::Pending && self.ready(i) {
                    self.status[i] = Status::Running;
                    progressed = true;
                    self.start_task(i)?;
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    fn task_done(&mut self, i: usize) -> Result<()> {
        self.status[i] = Status::Done;
        for &n in &self.tasks[i].occupies.clone() {
            let q = &mut self.node_queue[n as usize];
            debug_assert_eq!(q.front(), Some(&i));
            q.pop_front();
        }
        self.try_start()
    }

    fn new_write(&mut self, task: usize, step: u32, bytes: u64, kind: WriteKind) -> u64 {
        let id = self.next_write;
        self.next_write += 1;
        self.writes.insert(
            id,
            WriteInfo {
                task,
                gen: self.gen[task],
                step,
                bytes,
                start: self.now,
                kind,
            },
        );
        id
    }

    fn submit_shared(&mut self, task: usize, id: u64, bytes: f64, files: f64, nodes: usize) {
        let sigma = self.cluster.parallel_fs.jitter_sigma;
        let slowdown = if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            jitter_multiplier(sigma, z)
        } else {
            1.0
        };
        let mut req = FsRequest::new(task, id, bytes, files);
        req.cap = nodes as f64 * self.cluster.network_bw;
        req.slowdown = slowdown;
        self.fs.submit(req);
    }

    fn fsdax_time(&self, config: &NodeConfiguration, nodes: usize, bytes: f64, files: f64) -> Result<f64> {
        let devices = config.fsdax_devices(self.cluster) as usize * nodes;
        if devices == 0 {
            return Err(Error::InvalidSpec(vec![
                "fsdax storage needs AppDirect namespaces on the job's nodes".into(),
            ]));
        }
        Ok(fsdax_write_time(
            bytes / devices as f64,
            files / devices as f64,
            config.crosses_numa(),
            &self.params.fsdax,
        ))
    }

    fn start_task(&mut self, i: usize) -> Result<()> {
        match self.tasks[i].kind.clone() {
            TaskKind::Job(j) => {
                let t = j.start_at.max(self.now);
                self.push(t, EventKind::JobStart, i, 0);
            }
            TaskKind::Reboot { nodes, .. } => {
                for &n in &nodes {
                    self.node_down[n as usize] += 1;
                }
                self.reboot_start[i] = self.now;
                self.push(self.now + self.cluster.reboot_seconds, EventKind::RebootComplete, i, 0);
            }
            TaskKind::Write { dataset, nodes, local } => {
                let size = self.datasets[dataset].size.0;
                let id = self.new_write(i, 0, size, WriteKind::Transfer);
                if local {
                    let config = self.node_config[nodes[0] as usize].clone();
                    let dt = self.fsdax_time(&config, nodes.len(), size as f64, 0.0)?;
                    self.push(self.now + dt, EventKind::WriteComplete, i, id);
                } else {
                    self.submit_shared(i, id, size as f64, 0.0, nodes.len());
                }
            }
            TaskKind::StageOut { dataset, nodes } | TaskKind::StageIn { dataset, nodes } => {
                let size = self.datasets[dataset].size.0;
                let id = self.new_write(i, 0, size, WriteKind::Transfer);
                self.submit_shared(i, id, size as f64, 0.0, nodes.len());
            }
            TaskKind::Release { dataset, nodes } => {
                self.release_copy(dataset, &nodes, false);
                return self.task_done(i);
            }
        }
        Ok(())
    }

    fn add_copy(&mut self, dataset: usize, nodes: &[u32]) -> Result<()> {
        let size = self.datasets[dataset].size.0;
        let per_node = size.div_ceil(nodes.len().max(1) as u64);
        for &n in nodes {
            let n = n as usize;
            self.node_usage[n] += per_node;
            let available = self.node_config[n].appdirect_space;
            if self.node_usage[n] > available.0 {
                return Err(Error::InsufficientCapacity {
                    what: self.datasets[dataset].id.clone(),
                    needed: Bytes(self.node_usage[n]),
                    available,
                });
            }
        }
        self.residency.push(ResidencyInterval {
            dataset: self.datasets[dataset].id.clone(),
            location: node_list(nodes),
            from: self.now,
            to: None,
        });
        self.copies.push(Copy {
            dataset,
            nodes: nodes.to_vec(),
            per_node,
            residency: self.residency.len() - 1,
        });
        Ok(())
    }

    fn release_copy(&mut self, dataset: usize, nodes: &[u32], lost: bool) {
        let Some(pos) = self
            .copies
            .iter()
            .position(|c| c.dataset == dataset && c.nodes == nodes)
        else {
            return;
        };
        let c = self.copies.remove(pos);
        for &n in &c.nodes {
            self.node_usage[n as usize] -= c.per_node;
        }
        self.residency[c.residency].to = Some(self.now);
        let size = self.datasets[dataset].size.0;
        if lost {
            self.ledgers[dataset].lost += size;
        } else {
            self.ledgers[dataset].released += size;
        }
    }

    fn mark_on_pfs(&mut self, dataset: usize) {
        self.ledgers[dataset].on_parallel_fs_at_end = true;
        if self.pfs_residency[dataset].is_none() {
            self.residency.push(ResidencyInterval {
                dataset: self.datasets[dataset].id.clone(),
                location: "parallel_fs".into(),
                from: self.now,
                to: None,
            });
            self.pfs_residency[dataset] = Some(self.residency.len() - 1);
        }
    }

    fn reboot_done(&mut self, i: usize) -> Result<()> {
        let TaskKind::Reboot { nodes, config, reason } = self.tasks[i].kind.clone() else {
            unreachable!()
        };
        for &n in &nodes {
            let old = &self.node_config[n as usize];
            if old.appdirect_space != config.appdirect_space {
                let doomed: Vec<(usize, Vec<u32>)> = self
                    .copies
                    .iter()
                    .filter(|c| c.nodes.contains(&n))
                    .map(|c| (c.dataset, c.nodes.clone()))
                    .collect();
                for (d, ns) in doomed {
                    self.release_copy(d, &ns, true);
                }
            }
            self.node_config[n as usize] = config.clone();
            self.node_down[n as usize] -= 1;
        }
        self.reboots.push(RebootRecord {
            nodes,
            start: self.reboot_start[i],
            end: self.now,
            reason,
        });
        self.task_done(i)
    }

    fn job_def(&self, i: usize) -> &JobDef {
        match &self.tasks[i].kind {
            TaskKind::Job(j) => j,
            _ => unreachable!("task {i} is not a job"),
        }
    }

    fn job_start(&mut self, i: usize) -> Result<()> {
        let def = self.job_def(i).clone();
        if def.nodes.iter().any(|&n| self.node_down[n as usize] > 0) {
            if let Some(rt) = self.jobs[i].as_mut() {
                rt.aborted = true;
            } else {
                self.jobs[i] = Some(self.new_rt(&def)?);
                self.jobs[i].as_mut().unwrap().aborted = true;
            }
            return Ok(());
        }
        if self.jobs[i].is_none() {
            self.jobs[i] = Some(self.new_rt(&def)?);
        }
        let now = self.now;
        let rt = self.jobs[i].as_mut().unwrap();
        rt.aborted = false;
        if rt.started.is_none() {
            rt.started = Some(now);
        }
        self.start_block(i)
    }

    fn new_rt(&self, def: &JobDef) -> Result<JobRt> {
        let config = self.node_config[def.nodes[0] as usize].clone();
        if def.nodes.iter().any(|&n| self.node_config[n as usize] != config) {
            return Err(Error::InvalidSpec(vec![format!(
                "job `{}` spans nodes with different configurations",
                def.id
            )]));
        }
        let step_time = step_compute_time(
            &def.profile,
            &config,
            self.cluster,
            def.nodes.len() as u32,
            &self.params.memory,
        )?;
        Ok(JobRt {
            step_time,
            config,
            started: None,
            end: None,
            done: 0,
            block: None,
            inflight: 0,
            wait: Wait::Running,
            step_end: Vec::with_capacity(def.profile.steps as usize),
            checkpoints: Vec::new(),
            restarts: 0,
            recomputed: 0,
            bytes_written: 0,
            aborted: false,
        })
    }

    fn start_block(&mut self, i: usize) -> Result<()> {
        let def = self.job_def(i);
        let steps = def.profile.steps;
        let out_every = if def.profile.performs_io() {
            def.profile.write_interval
        } else {
            0
        };
        let ck_every = def.checkpoint.as_ref().map_or(0, |c| c.interval_steps);
        let rt = self.jobs[i].as_mut().unwrap();
        if rt.done >= steps {
            return self.finish_job(i);
        }
        let first = rt.done + 1;
        let mut last = steps;
        for m in [out_every, ck_every] {
            if m > 0 {
                last = last.min(first.div_ceil(m) * m);
            }
        }
        let t0 = self.now;
        rt.block = Some((t0, first, last));
        rt.wait = Wait::Running;
        let dt = (last - first + 1) as f64 * rt.step_time;
        self.push(t0 + dt, EventKind::StepComplete, i, last as u64);
        Ok(())
    }

    fn step_complete(&mut self, i: usize, last: u32) -> Result<()> {
        let rt = self.jobs[i].as_mut().unwrap();
        let (t0, first, _) = rt.block.take().expect("block in progress");
        for s in first..=last {
            let t = if s == last {
                self.now
            } else {
                t0 + (s - first + 1) as f64 * rt.step_time
            };
            rt.step_end.push(t);
        }
        rt.done = last;
        self.after_step(i, last)
    }

    fn due_writes(&self, i: usize, step: u32) -> Vec<(u64, WriteKind)> {
        let def = self.job_def(i);
        let p = &def.profile;
        let rt = self.jobs[i].as_ref().unwrap();
        let mut v = Vec::new();
        if p.writes_after_step(step) {
            let index = step / p.write_interval - 1;
            let target = self.storage_of(def, &rt.config);
            v.push((
                p.write_bytes(index).0,
                WriteKind::Output {
                    path: target.to_string(),
                    files: p.files_per_write(),
                },
            ));
        }
        if let Some(c) = &def.checkpoint {
            if c.interval_steps > 0 && step.is_multiple_of(c.interval_steps) {
                v.push((
                    c.bytes_per_process.0 * p.processes as u64,
                    WriteKind::Checkpoint { medium: c.medium },
                ));
            }
        }
        v
    }

    fn storage_of(&self, def: &JobDef, config: &NodeConfiguration) -> StorageTarget {
        def.storage.unwrap_or(if config.fsdax_devices(self.cluster) > 0 {
            StorageTarget::Fsdax
        } else {
            StorageTarget::ParallelFs
        })
    }

    fn after_step(&mut self, i: usize, step: u32) -> Result<()> {
        let writes = self.due_writes(i, step);
        let asynchronous = self.job_def(i).profile.async_io_servers;
        let steps = self.job_def(i).profile.steps;
        let rt = self.jobs[i].as_mut().unwrap();
        if writes.is_empty() {
            if rt.done >= steps {
                if rt.inflight > 0 {
                    rt.wait = Wait::Drain;
                    return Ok(());
                }
                return self.finish_job(i);
            }
            return self.start_block(i);
        }
        if !asynchronous {
            rt.wait = Wait::SyncWrite(step);
            return self.issue(i, step, writes);
        }
        if rt.inflight > 0 {
            rt.wait = Wait::QueueFull(step);
            return Ok(());
        }
        self.issue(i, step, writes)?;
        self.continue_async(i)
    }

    fn continue_async(&mut self, i: usize) -> Result<()> {
        let steps = self.job_def(i).profile.steps;
        let rt = self.jobs[i].as_mut().unwrap();
        if rt.done < steps {
            self.start_block(i)
        } else if rt.inflight > 0 {
            rt.wait = Wait::Drain;
            Ok(())
        } else {
            self.finish_job(i)
        }
    }

    fn issue(&mut self, i: usize, step: u32, writes: Vec<(u64, WriteKind)>) -> Result<()> {
        let def = self.job_def(i).clone();
        let config = self.jobs[i].as_ref().unwrap().config.clone();
        let n = def.nodes.len();
        let sockets = self.cluster.sockets_per_node as f64;
        for (bytes, kind) in writes {
            let b = bytes as f64;
            let route = match &kind {
                WriteKind::Output { .. } => match self.storage_of(&def, &config) {
                    StorageTarget::ParallelFs => None,
                    StorageTarget::Fsdax => Some(None),
                    StorageTarget::EphemeralFs => {
                        let access = if def.profile.shared_file {
                            IorAccess::HardWrite
                        } else {
                            IorAccess::EasyWrite
                        };
                        let thr = ephemeralfs_throughput(n as u32, n as u32, access, &self.params.ephemeral);
                        Some(Some(b / thr))
                    }
                    StorageTarget::ObjectStore => {
                        let servers = n as u32 * self.cluster.sockets_per_node;
                        let thr = objectstore_write_throughput(servers, &self.params.objectstore);
                        Some(Some(b / thr))
                    }
                },
                WriteKind::Checkpoint { medium } => match medium {
                    CheckpointMedium::ParallelFs => None,
                    CheckpointMedium::AppDirect => Some(None),
                    CheckpointMedium::MemorySpace => {
                        let bw = self.params.memory.media_write_bw * sockets;
                        Some(Some(b / n as f64 / bw))
                    }
                },
                WriteKind::Transfer => unreachable!(),
            };
            let files = match &kind {
                WriteKind::Output { files, .. } => *files as f64,
                _ => 0.0,
            };
            let id = self.new_write(i, step, bytes, kind);
            let rt = self.jobs[i].as_mut().unwrap();
            rt.inflight += 1;
            match route {
                None => self.submit_shared(i, id, b, files, n),
                Some(fixed) => {
                    let dt = match fixed {
                        Some(dt) => dt,
                        None => self.fsdax_time(&config, n, b, files)?,
                    };
                    self.push(self.now + dt, EventKind::WriteComplete, i, id);
                }
            }
        }
        Ok(())
    }

    fn write_complete(&mut self, id: u64) -> Result<()> {
        let Some(info) = self.writes.remove(&id) else {
            return Ok(());
        };
        let i = info.task;
        if self.record || matches!(info.kind, WriteKind::Transfer) {
            let (job_id, path, files) = match (&info.kind, &self.tasks[i].kind) {
                (WriteKind::Output { path, files }, TaskKind::Job(j)) => (j.id.clone(), path.clone(), *files),
                (WriteKind::Checkpoint { medium }, TaskKind::Job(j)) => {
                    let path = match medium {
                        CheckpointMedium::AppDirect => "fsdax",
                        CheckpointMedium::ParallelFs => "parallel_fs",
                        CheckpointMedium::MemorySpace => "memory_space",
                    };
                    (j.id.clone(), format!("checkpoint:{path}"), 0)
                }
                (_, _) => (self.tasks[i].name.clone(), "staging".to_string(), 0),
            };
            if self.record {
                self.io_trace.push(IoRecord {
                    job_id,
                    step: info.step,
                    path,
                    bytes: info.bytes,
                    files,
                    start_s: info.start,
                    end_s: self.now,
                });
            }
        }
        match info.kind {
            WriteKind::Transfer => self.transfer_done(i, info.bytes, info.start),
            WriteKind::Output { .. } | WriteKind::Checkpoint { .. } => {
                let now = self.now;
                let rt = self.jobs[i].as_mut().unwrap();
                rt.bytes_written += info.bytes;
                if let WriteKind::Checkpoint { medium } = info.kind {
                    rt.checkpoints.push(CheckpointRecord {
                        step: info.step,
                        time: now,
                        medium,
                        lost: false,
                    });
                }
                rt.inflight -= 1;
                if rt.inflight > 0 {
                    return Ok(());
                }
                match rt.wait {
                    Wait::Running => Ok(()),
                    Wait::SyncWrite(step) => {
                        if let Some(t) = rt.step_end.get_mut(step as usize - 1) {
                            *t = now;
                        }
                        self.continue_async(i)
                    }
                    Wait::QueueFull(step) => {
                        let writes = self.due_writes(i, step);
                        self.issue(i, step, writes)?;
                        self.continue_async(i)
                    }
                    Wait::Drain => self.finish_job(i),
                }
            }
        }
    }

    fn transfer_done(&mut self, i: usize, bytes: u64, start: f64) -> Result<()> {
        let (dataset, nodes, kind) = match self.tasks[i].kind.clone() {
            TaskKind::Write { dataset, nodes, local } => {
                if local {
                    self.add_copy(dataset, &nodes)?;
                    self.ledgers[dataset].produced_local += bytes;
                } else {
                    self.ledgers[dataset].produced_pfs += bytes;
                    self.mark_on_pfs(dataset);
                }
                (dataset, nodes, TransferKind::Write)
            }
            TaskKind::StageOut { dataset, nodes } => {
                self.ledgers[dataset].staged_out += bytes;
                self.mark_on_pfs(dataset);
                (dataset, nodes, TransferKind::StageOut)
            }
            TaskKind::StageIn { dataset, nodes } => {
                self.add_copy(dataset, &nodes)?;
                self.ledgers[dataset].staged_in += bytes;
                (dataset, nodes, TransferKind::StageIn)
            }
            _ => unreachable!(),
        };
        self.transfers.push(TransferRecord {
            dataset: self.datasets[dataset].id.clone(),
            kind,
            nodes,
            bytes,
            start,
            end: self.now,
        });
        self.task_done(i)
    }

    fn finish_job(&mut self, i: usize) -> Result<()> {
        let now = self.now;
        let rt = self.jobs[i].as_mut().unwrap();
        rt.end = Some(now);
        rt.wait = Wait::Running;
        self.push(now, EventKind::JobEnd, i, 0);
        Ok(())
    }

    fn power_loss(&mut self, index: usize) -> Result<()> {
        let hit: BTreeSet<u32> = self.power_losses[index].nodes.iter().copied().collect();
        let now = self.now;
        for &n in &hit {
            self.node_down[n as usize] += 1;
        }
        let mut aborted = Vec::new();
        let mut checkpoints_lost = 0;
        for i in 0..self.tasks.len() {
            if self.status[i] != Status::Running
                || !self.task_nodes(i).iter().any(|n| hit.contains(n))
                || matches!(self.tasks[i].kind, TaskKind::Reboot { .. })
            {
                // an in-progress reconfiguration simply completes later
                continue;
            }
            self.fs.cancel_owner(i);
            self.writes.retain(|_, w| w.task != i);
            self.gen[i] += 1;
            if let TaskKind::Job(def) = &self.tasks[i].kind {
                let id = def.id.clone();
                let Some(rt) = self.jobs[i].as_mut() else {
                    // started event still queued; it will wait for the reboot
                    let def = def.clone();
                    let mut rt = self.new_rt(&def)?;
                    rt.aborted = true;
                    self.jobs[i] = Some(rt);
                    continue;
                };
                if rt.end.is_some() {
                    // finished; only the JobEnd bookkeeping was pending
                    self.push(now, EventKind::JobEnd, i, 0);
                    continue;
                }
                let mut completed = rt.done;
                if let Some((t0, first, last)) = rt.block.take() {
                    let whole = ((now - t0) / rt.step_time + 1e-9).floor().max(0.0) as u32;
                    completed = (first - 1) + whole.min(last - first + 1);
                }
                for c in rt.checkpoints.iter_mut() {
                    if !c.medium.survives_power_loss() && !c.lost {
                        c.lost = true;
                        checkpoints_lost += 1;
                    }
                }
                let resume = rt
                    .checkpoints
                    .iter()
                    .filter(|c| !c.lost && c.step <= completed)
                    .map(|c| c.step)
                    .max()
                    .unwrap_or(0);
                rt.recomputed += completed - resume;
                rt.restarts += 1;
                rt.done = resume;
                rt.inflight = 0;
                rt.wait = Wait::Running;
                rt.step_end.truncate(resume as usize);
                rt.aborted = true;
                aborted.push(AbortedJob {
                    job: id,
                    completed_steps: completed,
                    resume_step: resume,
                    recomputed_steps: completed - resume,
                });
            } else {
                // transfers restart from scratch once the nodes are back
                self.status[i] = Status::Pending;
            }
        }
        let mut survived: Vec<String> = self
            .copies
            .iter()
            .filter(|c| c.nodes.iter().any(|n| hit.contains(n)))
            .map(|c| self.datasets[c.dataset].id.clone())
            .collect();
        survived.sort();
        survived.dedup();
        let nodes: Vec<u32> = hit.into_iter().collect();
        self.reboots.push(RebootRecord {
            nodes: nodes.clone(),
            start: now,
            end: now + self.cluster.reboot_seconds,
            reason: "power loss".into(),
        });
        self.pl_records.push(PowerLossRecord {
            time: now,
            nodes,
            aborted,
            datasets_survived: survived,
            checkpoints_lost,
        });
        self.queue.push(
            now + self.cluster.reboot_seconds,
            EventKind::RebootComplete,
            NO_TASK,
            0,
            index as u64,
        );
        Ok(())
    }

    fn power_reboot_done(&mut self, index: usize) -> Result<()> {
        for &n in &self.power_losses[index].nodes.clone() {
            self.node_down[n as usize] -= 1;
        }
        for i in 0..self.tasks.len() {
            if self.status[i] != Status::Running {
                continue;
            }
            let waiting = self.jobs[i].as_ref().is_some_and(|rt| rt.aborted);
            if waiting && self.task_nodes(i).iter().all(|&n| self.node_down[n as usize] == 0) {
                self.push(self.now, EventKind::JobStart, i, 0);
            }
        }
        self.try_start()
    }

    fn finish(mut self) -> SimReport {
        let makespan = self.now;
        let end = self.now;
        for c in &self.copies {
            self.residency[c.residency].to.get_or_insert(end);
        }
        let mut jobs = Vec::new();
        let cores = self.cluster.cores_per_node() as f64;
        let mut busy = 0.0;
        for (i, t) in self.tasks.iter().enumerate() {
            let TaskKind::Job(def) = &t.kind else { continue };
            let Some(rt) = self.jobs[i].as_ref() else { continue };
            let start = rt.started.unwrap_or(0.0);
            let stop = rt.end.unwrap_or(start);
            let wall = stop - start;
            let mut prev = start;
            let step_times = rt
                .step_end
                .iter()
                .map(|&e| {
                    let d = e - prev;
                    prev = e;
                    d
                })
                .collect();
            let n = def.nodes.len() as f64;
            busy += n * wall;
            jobs.push(JobReport {
                id: def.id.clone(),
                nodes: def.nodes.clone(),
                storage: def
                    .profile
                    .performs_io()
                    .then(|| self.storage_of(def, &rt.config)),
                start,
                end: stop,
                wallclock: wall,
                steps: def.profile.steps,
                step_times,
                node_seconds: n * wall,
                core_seconds: n * cores * wall,
                restarts: rt.restarts,
                recomputed_steps: rt.recomputed,
                checkpoints: rt.checkpoints.clone(),
                bytes_written: rt.bytes_written,
            });
        }
        let delivered: f64 = self
            .fs
            .samples()
            .iter()
            .map(|s| s.payload_rate * (s.end - s.start))
            .sum();
        let utilization = if makespan > 0.0 {
            Utilization {
                parallel_fs: delivered / (self.cluster.parallel_fs.aggregate_bw * makespan),
                nodes: busy / (self.cluster.node_count as f64 * makespan),
            }
        } else {
            Utilization::default()
        };
        SimReport {
            rng_seed: self.seed,
            makespan,
            jobs,
            datasets: self.ledgers,
            residency: self.residency,
            transfers: self.transfers,
            reboots: self.reboots,
            power_losses: self.pl_records,
            utilization,
            io_trace: self.io_trace,
            fs_samples: self.fs.samples().to_vec(),
            events: self.events,
            warnings: Vec::new(),
        }
    }
}
