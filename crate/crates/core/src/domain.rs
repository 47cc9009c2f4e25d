//! Cluster inventory, node configurations, application profiles and workflows.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::units::{de_bandwidth, Bytes};

/// Hardware inventory of a cluster. Capacities are per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default)]
    pub name: String,
    pub node_count: u32,
    pub sockets_per_node: u32,
    pub cores_per_socket: u32,
    pub dram_per_node: Bytes,
    pub bapm_per_node: Bytes,
    pub parallel_fs: ParallelFsSpec,
    /// Injection bandwidth of one node, bytes/s.
    #[serde(deserialize_with = "de_bandwidth")]
    pub network_bw: f64,
    pub reboot_seconds: f64,
}

/// The shared network-attached file system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelFsSpec {
    pub capacity: Bytes,
    #[serde(deserialize_with = "de_bandwidth")]
    pub aggregate_bw: f64,
    pub metadata_ops_per_second: f64,
    pub contention_beta: f64,
    pub jitter_sigma: f64,
}

impl ClusterSpec {
    pub fn cores_per_node(&self) -> u32 {
        self.sockets_per_node * self.cores_per_socket
    }

    /// The 34-node prototype bundled as `fixtures/nextgenio.json`.
    pub fn nextgenio() -> Self {
        serde_json::from_str(crate::assets::NEXTGENIO_JSON).expect("bundled cluster fixture parses")
    }

    /// Every violated invariant, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let counts = [
            ("node_count", self.node_count),
            ("sockets_per_node", self.sockets_per_node),
            ("cores_per_socket", self.cores_per_socket),
        ];
        for (name, value) in counts {
            if value < 1 {
                v.push(format!("{name} must be at least 1"));
            }
        }
        let caps = [
            ("dram_per_node", self.dram_per_node),
            ("bapm_per_node", self.bapm_per_node),
            ("parallel_fs.capacity", self.parallel_fs.capacity),
        ];
        for (name, value) in caps {
            if value == Bytes::ZERO {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.network_bw > 0.0) {
            v.push("network_bw must be positive".into());
        }
        if !(self.reboot_seconds >= 0.0) {
            v.push("reboot_seconds must be non-negative".into());
        }
        let fs = &self.parallel_fs;
        if !(fs.aggregate_bw > 0.0) {
            v.push("parallel_fs.aggregate_bw must be positive".into());
        }
        if !(fs.metadata_ops_per_second > 0.0) {
            v.push("parallel_fs.metadata_ops_per_second must be positive".into());
        }
        if !(fs.contention_beta >= 0.0) {
            v.push("parallel_fs.contention_beta must be non-negative".into());
        }
        if !(fs.jitter_sigma >= 0.0) {
            v.push("parallel_fs.jitter_sigma must be non-negative".into());
        }
        v
    }
}

/// Returns the spec unchanged when every invariant holds.
pub fn validate_cluster_spec(spec: ClusterSpec) -> Result<ClusterSpec> {
    let v = spec.violations();
    if v.is_empty() {
        Ok(spec)
    } else {
        Err(Error::InvalidSpec(v))
    }
}

/// Firmware operating mode of the persistent memory. Switching requires a reboot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlatformMode {
    AppDirect,
    Memory,
}

impl fmt::Display for PlatformMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlatformMode::AppDirect => f.write_str("AppDirect"),
            PlatformMode::Memory => f.write_str("Memory"),
        }
    }
}

/// Which socket's devices back a namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SocketAffinity {
    Socket(u32),
    /// Both sockets' devices linearly mapped into one device; accesses cross NUMA.
    Concatenated,
}

impl Serialize for SocketAffinity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SocketAffinity::Socket(i) => s.serialize_u32(*i),
            SocketAffinity::Concatenated => s.serialize_str("concatenated"),
        }
    }
}

impl<'de> Deserialize<'de> for SocketAffinity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u32),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(SocketAffinity::Socket(i)),
            Raw::Name(s) if s.eq_ignore_ascii_case("concatenated") => {
                Ok(SocketAffinity::Concatenated)
            }
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "socket_affinity must be a socket index or \"concatenated\", got `{s}`"
            ))),
        }
    }
}

/// An fsdax namespace carved out of the AppDirect space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Namespace {
    pub id: String,
    pub size: Bytes,
    pub socket_affinity: SocketAffinity,
}

impl Namespace {
    pub fn new(id: impl Into<String>, size: Bytes, socket_affinity: SocketAffinity) -> Self {
        Namespace {
            id: id.into(),
            size,
            socket_affinity,
        }
    }
}

/// Per-node platform mode and capacity partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfiguration {
    pub mode: PlatformMode,
    pub memory_space: Bytes,
    pub appdirect_space: Bytes,
    #[serde(default)]
    pub namespaces: Vec<Namespace>,
}

/// Non-fatal conditions noticed while partitioning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigWarning {
    /// Memory space exists but the node boots in AppDirect mode, so it is unreachable.
    MemorySpaceUnusable { memory_space: Bytes },
    /// Namespaces are not spread evenly over the sockets.
    AsymmetricNamespaces,
}

impl fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigWarning::MemorySpaceUnusable { memory_space } => write!(
                f,
                "{memory_space} of Memory space is inaccessible in AppDirect mode"
            ),
            ConfigWarning::AsymmetricNamespaces => {
                f.write_str("namespaces are not symmetric across sockets")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub config: NodeConfiguration,
    pub warnings: Vec<ConfigWarning>,
}

impl NodeConfiguration {
    /// Pure AppDirect: the whole B-APM as one fsdax namespace per socket.
    pub fn app_direct(spec: &ClusterSpec) -> Self {
        let per_socket = Bytes(spec.bapm_per_node.0 / spec.sockets_per_node as u64);
        let namespaces = (0..spec.sockets_per_node)
            .map(|s| Namespace::new(format!("pmem_fsdax{s}"), per_socket, SocketAffinity::Socket(s)))
            .collect();
        NodeConfiguration {
            mode: PlatformMode::AppDirect,
            memory_space: Bytes::ZERO,
            appdirect_space: spec.bapm_per_node,
            namespaces,
        }
    }

    /// Pure Memory mode: the whole B-APM is main memory.
    pub fn memory(spec: &ClusterSpec) -> Self {
        NodeConfiguration {
            mode: PlatformMode::Memory,
            memory_space: spec.bapm_per_node,
            appdirect_space: Bytes::ZERO,
            namespaces: Vec::new(),
        }
    }

    /// Mixed setup with per-socket namespaces covering the AppDirect space.
    pub fn mixed(spec: &ClusterSpec, mode: PlatformMode, memory_space: Bytes) -> Result<Self> {
        let ad = spec
            .bapm_per_node
            .checked_sub(memory_space)
            .ok_or(Error::OverCommit {
                requested: memory_space,
                available: spec.bapm_per_node,
            })?;
        let per_socket = Bytes(ad.0 / spec.sockets_per_node as u64);
        let namespaces = if per_socket == Bytes::ZERO {
            Vec::new()
        } else {
            (0..spec.sockets_per_node)
                .map(|s| {
                    Namespace::new(format!("pmem_fsdax{s}"), per_socket, SocketAffinity::Socket(s))
                })
                .collect()
        };
        Ok(partition_bapm(spec, mode, memory_space, namespaces)?.config)
    }

    pub fn namespace_total(&self) -> Bytes {
        self.namespaces.iter().map(|n| n.size).sum()
    }

    /// True when any namespace spans both sockets.
    pub fn crosses_numa(&self) -> bool {
        self.namespaces
            .iter()
            .any(|n| n.socket_affinity == SocketAffinity::Concatenated)
    }

    /// Number of independent fsdax devices writes can be spread over.
    pub fn fsdax_devices(&self, spec: &ClusterSpec) -> u32 {
        if self.namespaces.is_empty() {
            0
        } else if self.crosses_numa() {
            spec.sockets_per_node
        } else {
            let sockets: BTreeSet<_> = self.namespaces.iter().map(|n| n.socket_affinity).collect();
            sockets.len() as u32
        }
    }

    pub fn violations(&self, spec: &ClusterSpec) -> Vec<String> {
        let mut v = Vec::new();
        if self.memory_space + self.appdirect_space > spec.bapm_per_node {
            v.push(format!(
                "memory_space + appdirect_space ({}) exceeds bapm_per_node ({})",
                self.memory_space + self.appdirect_space,
                spec.bapm_per_node
            ));
        }
        if self.namespace_total() > self.appdirect_space {
            v.push(format!(
                "namespaces total {} exceeds appdirect_space {}",
                self.namespace_total(),
                self.appdirect_space
            ));
        }
        for ns in &self.namespaces {
            if ns.size == Bytes::ZERO {
                v.push(format!("namespace `{}` has zero size", ns.id));
            }
            if let SocketAffinity::Socket(s) = ns.socket_affinity {
                if s >= spec.sockets_per_node {
                    v.push(format!(
                        "namespace `{}` bound to socket {s} but node has {} sockets",
                        ns.id, spec.sockets_per_node
                    ));
                }
            }
        }
        v
    }

    pub fn validate(&self, spec: &ClusterSpec) -> Result<()> {
        let v = self.violations(spec);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v))
        }
    }
}

/// Splits a node's B-APM into Memory space and AppDirect space.
///
/// The AppDirect space is whatever the Memory space leaves over. Requesting
/// Memory space while booting into AppDirect mode is allowed but reported.
pub fn partition_bapm(
    spec: &ClusterSpec,
    mode: PlatformMode,
    memory_space: Bytes,
    namespaces: Vec<Namespace>,
) -> Result<Partition> {
    let ns_total: Bytes = namespaces.iter().map(|n| n.size).sum();
    let requested = memory_space + ns_total;
    if requested > spec.bapm_per_node {
        return Err(Error::OverCommit {
            requested,
            available: spec.bapm_per_node,
        });
    }
    let config = NodeConfiguration {
        mode,
        memory_space,
        appdirect_space: spec.bapm_per_node - memory_space,
        namespaces,
    };
    config.validate(spec)?;

    let mut warnings = Vec::new();
    if mode == PlatformMode::AppDirect && memory_space > Bytes::ZERO {
        warnings.push(ConfigWarning::MemorySpaceUnusable { memory_space });
    }
    let mut per_socket: BTreeMap<u32, Bytes> = BTreeMap::new();
    let mut concatenated = false;
    for ns in &config.namespaces {
        match ns.socket_affinity {
            SocketAffinity::Socket(s) => *per_socket.entry(s).or_default() += ns.size,
            SocketAffinity::Concatenated => concatenated = true,
        }
    }
    if !concatenated && !per_socket.is_empty() {
        let first = per_socket.values().next().copied();
        let uneven = per_socket.len() as u32 != spec.sockets_per_node
            || per_socket.values().any(|v| Some(*v) != first);
        if uneven {
            warnings.push(ConfigWarning::AsymmetricNamespaces);
        }
    }
    Ok(Partition { config, warnings })
}

/// Main memory visible to the operating system.
pub fn effective_main_memory(config: &NodeConfiguration, spec: &ClusterSpec) -> Bytes {
    match config.mode {
        PlatformMode::Memory => config.memory_space,
        PlatformMode::AppDirect => spec.dram_per_node,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoPattern {
    None,
    Local,
    Global,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifiable {
    Yes,
    Undesirable,
    No,
}

/// How a workload revisits its data, which decides the DRAM-cache hit model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reuse {
    /// Accesses spread uniformly over the working set.
    #[default]
    Streaming,
    /// The working set is reused from cache whenever it fits.
    Resident,
    /// Repeated sequential passes over the working set (STREAM-like).
    Sweep,
}

/// Workload descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationProfile {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub processes: u32,
    pub mem_footprint_per_process: Bytes,
    /// Bytes moved to or from main memory by each process per step.
    pub mem_traffic_per_step: Bytes,
    pub compute_seconds_per_step: f64,
    pub steps: u32,
    #[serde(default = "one")]
    pub write_interval: u32,
    #[serde(default)]
    pub write_bytes_per_process: Bytes,
    /// When set, write volume grows linearly from the first write to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_write_bytes_per_process: Option<Bytes>,
    #[serde(default)]
    pub files_per_write_per_process: u32,
    pub io_pattern: IoPattern,
    #[serde(default)]
    pub shared_file: bool,
    pub modifiable: Modifiable,
    pub io_perf_critical: bool,
    pub memory_intensive: bool,
    pub io_intensive: bool,
    #[serde(default)]
    pub reuse: Reuse,
    /// Data laid out on DRAM-cache aliasing boundaries; every access misses.
    #[serde(default)]
    pub aliasing_pathology: bool,
    /// Dedicated I/O server processes overlap a write with the next compute phase.
    #[serde(default)]
    pub async_io_servers: bool,
}

fn one() -> u32 {
    1
}

impl ApplicationProfile {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.processes < 1 {
            v.push("processes must be at least 1".into());
        }
        if self.io_pattern != IoPattern::None && self.write_interval < 1 {
            v.push("write_interval must be at least 1 when the profile performs I/O".into());
        }
        if !(self.compute_seconds_per_step >= 0.0) {
            v.push("compute_seconds_per_step must be non-negative".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(
                v.into_iter().map(|e| format!("{}: {e}", self.name)).collect(),
            ))
        }
    }

    pub fn total_footprint(&self) -> Bytes {
        Bytes(self.mem_footprint_per_process.0 * self.processes as u64)
    }

    pub fn performs_io(&self) -> bool {
        self.io_pattern != IoPattern::None
            && self.write_interval >= 1
            && (self.write_bytes_per_process > Bytes::ZERO
                || self.final_write_bytes_per_process.is_some_and(|b| b > Bytes::ZERO))
    }

    /// Number of write events over the whole run.
    pub fn write_count(&self) -> u32 {
        if !self.performs_io() {
            0
        } else {
            self.steps / self.write_interval
        }
    }

    /// Whether a write follows the given (1-based) step.
    pub fn writes_after_step(&self, step: u32) -> bool {
        self.performs_io() && step.is_multiple_of(self.write_interval)
    }

    /// Total bytes of the `index`-th write (0-based) across all processes.
    pub fn write_bytes(&self, index: u32) -> Bytes {
        let first = self.write_bytes_per_process.as_f64();
        let per_proc = match self.final_write_bytes_per_process {
            Some(last) if self.write_count() > 1 => {
                let frac = index as f64 / (self.write_count() - 1) as f64;
                first + (last.as_f64() - first) * frac
            }
            Some(last) => last.as_f64(),
            None => first,
        };
        Bytes::from_f64(per_proc * self.processes as f64)
    }

    /// Files created by one write event.
    pub fn files_per_write(&self) -> u64 {
        if self.shared_file {
            self.files_per_write_per_process as u64
        } else {
            self.files_per_write_per_process as u64 * self.processes as u64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetHome {
    ParallelFs,
    NodeLocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: String,
    pub size: Bytes,
    pub home: DatasetHome,
}

/// Where a job's periodic output goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageTarget {
    ParallelFs,
    Fsdax,
    EphemeralFs,
    ObjectStore,
}

impl fmt::Display for StorageTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageTarget::ParallelFs => "parallel_fs",
            StorageTarget::Fsdax => "fsdax",
            StorageTarget::EphemeralFs => "ephemeral_fs",
            StorageTarget::ObjectStore => "object_store",
        })
    }
}

/// Where checkpoints are kept. Only `MemorySpace` is volatile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMedium {
    AppDirect,
    ParallelFs,
    MemorySpace,
}

impl CheckpointMedium {
    pub fn survives_power_loss(self) -> bool {
        self != CheckpointMedium::MemorySpace
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPolicy {
    pub interval_steps: u32,
    pub bytes_per_process: Bytes,
    pub medium: CheckpointMedium,
}

/// A job inside a workflow, with the node setup it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub id: String,
    pub profile: ApplicationProfile,
    pub nodes: u32,
    pub mode: PlatformMode,
    #[serde(default)]
    pub memory_space: Bytes,
    /// Output target; defaults to fsdax when the node has AppDirect space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointPolicy>,
}

/// `producer` writes `dataset`; `consumer` (if any) reads it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub producer: String,
    pub dataset: String,
    #[serde(default)]
    pub consumer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub jobs: Vec<JobSpec>,
    pub datasets: Vec<DatasetSpec>,
    pub edges: Vec<Edge>,
    /// Datasets to persist on the parallel file system when the workflow ends.
    #[serde(default)]
    pub keep_flags: BTreeMap<String, bool>,
}

impl WorkflowSpec {
    pub fn job(&self, id: &str) -> Option<&JobSpec> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn keep(&self, dataset: &str) -> bool {
        self.keep_flags.get(dataset).copied().unwrap_or(false)
    }

    pub fn producer_of(&self, dataset: &str) -> Option<&str> {
        self.edges
            .iter()
            .find(|e| e.dataset == dataset)
            .map(|e| e.producer.as_str())
    }

    /// Datasets each job must read before it can start.
    pub fn inputs_of(&self, job: &str) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .edges
            .iter()
            .filter(|e| e.consumer.as_deref() == Some(job))
            .map(|e| e.dataset.as_str())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn outputs_of(&self, job: &str) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .edges
            .iter()
            .filter(|e| e.producer == job)
            .map(|e| e.dataset.as_str())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Checks references and producers, then returns jobs in a topological order.
    ///
    /// Ties are broken by declaration order so the result is deterministic.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let mut errs = Vec::new();
        let mut ids = BTreeSet::new();
        for j in &self.jobs {
            if !ids.insert(j.id.as_str()) {
                errs.push(format!("duplicate job id `{}`", j.id));
            }
            if j.nodes < 1 {
                errs.push(format!("job `{}` needs at least one node", j.id));
            }
            errs.extend(j.profile.violations().into_iter().map(|e| format!("{}: {e}", j.id)));
        }
        let mut ds = BTreeSet::new();
        for d in &self.datasets {
            if !ds.insert(d.id.as_str()) {
                errs.push(format!("duplicate dataset id `{}`", d.id));
            }
        }
        let mut producers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for e in &self.edges {
            if !ids.contains(e.producer.as_str()) {
                errs.push(format!("edge names unknown producer `{}`", e.producer));
            }
            if let Some(c) = &e.consumer {
                if !ids.contains(c.as_str()) {
                    errs.push(format!("edge names unknown consumer `{c}`"));
                }
            }
            if !ds.contains(e.dataset.as_str()) {
                errs.push(format!("edge names unknown dataset `{}`", e.dataset));
            }
            producers
                .entry(e.dataset.as_str())
                .or_default()
                .insert(e.producer.as_str());
        }
        for d in &self.datasets {
            match producers.get(d.id.as_str()).map(|p| p.len()) {
                Some(1) => {}
                Some(n) => errs.push(format!("dataset `{}` has {n} producers", d.id)),
                None => errs.push(format!("dataset `{}` has no producer", d.id)),
            }
        }
        for k in self.keep_flags.keys() {
            if !ds.contains(k.as_str()) {
                errs.push(format!("keep flag for unknown dataset `{k}`"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidSpec(errs));
        }

        // Kahn's algorithm over job -> job dependencies.
        let index: BTreeMap<&str, usize> = self
            .jobs
            .iter()
            .enumerate()
            .map(|(i, j)| (j.id.as_str(), i))
            .collect();
        let n = self.jobs.len();
        let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            if let Some(c) = &e.consumer {
                let (p, c) = (index[e.producer.as_str()], index[c.as_str()]);
                if p == c {
                    return Err(Error::CyclicWorkflow(e.producer.clone()));
                }
                if succ[p].insert(c) {
                    indeg[c] += 1;
                }
            }
        }
        let mut ready: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push_back(s);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(Error::CyclicWorkflow(self.jobs[stuck].id.clone()));
        }
        Ok(order)
    }
}
