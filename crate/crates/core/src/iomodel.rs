//! Service-time models for node-local fsdax, the shared parallel file
//! system, an ephemeral distributed file system and a direct-access object
//! store.

use serde::{Deserialize, Serialize};

use crate::domain::ParallelFsSpec;
use crate::units::{de_bandwidth, Bytes, GIB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsdaxParams {
    #[serde(deserialize_with = "de_bandwidth")]
    pub bw_per_device: f64,
    /// seconds per file created
    pub meta_cost_per_file: f64,
    pub numa_cross_penalty: f64,
}

impl Default for FsdaxParams {
    fn default() -> Self {
        FsdaxParams {
            bw_per_device: 4.5 * GIB as f64,
            meta_cost_per_file: 0.0,
            numa_cross_penalty: 1.3,
        }
    }
}

/// Seconds to write `bytes_per_device` and create `files` on one fsdax device.
pub fn fsdax_write_time(bytes_per_device: f64, files: f64, cross_numa: bool, p: &FsdaxParams) -> f64 {
    let penalty = if cross_numa { p.numa_cross_penalty } else { 1.0 };
    bytes_per_device / (p.bw_per_device / penalty) + files * p.meta_cost_per_file
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EphemeralFsParams {
    pub chunk_size: Bytes,
    /// Device write bandwidth contributed by each server node.
    #[serde(deserialize_with = "de_bandwidth")]
    pub per_node_bw: f64,
    /// Network bandwidth of each client node.
    #[serde(deserialize_with = "de_bandwidth")]
    pub network_cap: f64,
    /// Device read bandwidth relative to write bandwidth.
    pub read_media_factor: f64,
    pub shared_file_serialization: f64,
    pub hard_read_factor: f64,
}

impl Default for EphemeralFsParams {
    fn default() -> Self {
        EphemeralFsParams {
            chunk_size: Bytes::kib(512),
            per_node_bw: 5.0 * GIB as f64,
            network_cap: 10.0 * GIB as f64,
            read_media_factor: 0.5 / 0.1,
            shared_file_serialization: 0.1,
            hard_read_factor: 0.5,
        }
    }
}

/// Node index holding each chunk of a file striped round-robin.
pub fn ephemeralfs_layout(file_size: Bytes, node_count: u32, p: &EphemeralFsParams) -> Vec<u32> {
    let node_count = node_count.max(1) as u64;
    let chunk = p.chunk_size.0.max(1);
    let chunks = file_size.0.div_ceil(chunk);
    (0..chunks).map(|i| (i % node_count) as u32).collect()
}

/// IOR-style access classes. "Hard" means every client hits one shared file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IorAccess {
    EasyRead,
    EasyWrite,
    HardRead,
    HardWrite,
}

impl IorAccess {
    pub const ALL: [IorAccess; 4] = [
        IorAccess::EasyRead,
        IorAccess::EasyWrite,
        IorAccess::HardRead,
        IorAccess::HardWrite,
    ];
}

/// Aggregate bandwidth of the ephemeral file system, bytes/s.
pub fn ephemeralfs_throughput(clients: u32, nodes: u32, access: IorAccess, p: &EphemeralFsParams) -> f64 {
    let nodes = nodes.max(1) as f64;
    let net = clients as f64 * p.network_cap;
    let write_base = (nodes * p.per_node_bw).min(net);
    let read_base = (nodes * p.per_node_bw * p.read_media_factor).min(net);
    match access {
        IorAccess::EasyWrite => write_base,
        IorAccess::EasyRead => read_base,
        IorAccess::HardWrite => write_base * p.shared_file_serialization,
        IorAccess::HardRead => read_base * p.hard_read_factor,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectStoreParams {
    #[serde(deserialize_with = "de_bandwidth")]
    pub per_server_bw: f64,
    pub scaling_efficiency: f64,
}

impl Default for ObjectStoreParams {
    fn default() -> Self {
        ObjectStoreParams {
            per_server_bw: 2.0 * GIB as f64,
            scaling_efficiency: 0.95,
        }
    }
}

/// Aggregate write bandwidth with `server_processes` servers. Each doubling
/// of the server count multiplies per-server throughput by the efficiency.
pub fn objectstore_write_throughput(server_processes: u32, p: &ObjectStoreParams) -> f64 {
    let s = server_processes.max(1) as f64;
    p.per_server_bw * s * p.scaling_efficiency.powf(s.log2())
}

/// Contention degradation: fraction of aggregate capacity the file system
/// still delivers with `n` concurrent requests.
pub fn contention_factor(n: usize, beta: f64) -> f64 {
    if n <= 1 {
        1.0
    } else {
        1.0 / (1.0 + beta * (n - 1) as f64)
    }
}

/// One request against the shared file system.
#[derive(Debug, Clone, PartialEq)]
pub struct FsRequest {
    pub owner: usize,
    pub tag: u64,
    pub bytes: f64,
    pub files: f64,
    /// Upper bound on this request's transfer rate (client network), bytes/s.
    pub cap: f64,
    /// Multiplier on the bandwidth demand (external interference).
    /// Metadata service is not jittered.
    pub slowdown: f64,
}

impl FsRequest {
    pub fn new(owner: usize, tag: u64, bytes: f64, files: f64) -> Self {
        FsRequest {
            owner,
            tag,
            bytes,
            files,
            cap: f64::INFINITY,
            slowdown: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Active {
    id: u64,
    req: FsRequest,
    submitted: f64,
    data_left: f64,
    meta_left: f64,
}

impl Active {
    /// The client cap in demand units; a lucky draw never beats the network.
    fn demand_cap(&self) -> f64 {
        self.req.cap * self.req.slowdown.min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsCompletion {
    pub id: u64,
    pub owner: usize,
    pub tag: u64,
    pub submitted: f64,
    pub completed: f64,
    pub bytes: f64,
    pub files: f64,
}

/// Interval during which the delivered payload rate was constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsSample {
    pub start: f64,
    pub end: f64,
    pub payload_rate: f64,
    pub active: usize,
}

/// The shared file system as a stateful resource.
///
/// Data transfers share `aggregate_bw * d(n)` fairly (water-filling under
/// per-request caps) where `n` counts every unfinished request. Metadata is
/// served first-come first-served at `metadata_ops_per_second * d(n)`. A
/// request completes once both its data and its metadata are done.
#[derive(Debug, Clone)]
pub struct SharedFs {
    aggregate_bw: f64,
    meta_rate: f64,
    beta: f64,
    now: f64,
    next_id: u64,
    active: Vec<Active>,
    samples: Vec<FsSample>,
    record: bool,
}

const REL_EPS: f64 = 1e-12;

impl SharedFs {
    pub fn new(spec: &ParallelFsSpec) -> Self {
        SharedFs {
            aggregate_bw: spec.aggregate_bw,
            meta_rate: spec.metadata_ops_per_second,
            beta: spec.contention_beta,
            now: 0.0,
            next_id: 0,
            active: Vec::new(),
            samples: Vec::new(),
            record: true,
        }
    }

    /// Stops collecting bandwidth samples (saves memory in long sweeps).
    pub fn without_samples(mut self) -> Self {
        self.record = false;
        self
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn active_requests(&self) -> usize {
        self.active.len()
    }

    pub fn samples(&self) -> &[FsSample] {
        &self.samples
    }

    /// Submits at the current time. Call [`advance`](Self::advance) first.
    pub fn submit(&mut self, req: FsRequest) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let s = req.slowdown;
        self.active.push(Active {
            id,
            data_left: req.bytes.max(0.0) * s,
            meta_left: req.files.max(0.0),
            submitted: self.now,
            req,
        });
        id
    }

    /// Removes every request of `owner` without completing it.
    pub fn cancel_owner(&mut self, owner: usize) -> Vec<u64> {
        let ids = self
            .active
            .iter()
            .filter(|a| a.req.owner == owner)
            .map(|a| a.id)
            .collect();
        self.active.retain(|a| a.req.owner != owner);
        ids
    }

    fn rates(&self) -> (Vec<f64>, f64) {
        let d = contention_factor(self.active.len(), self.beta);
        let mut rates = vec![0.0; self.active.len()];
        let mut open: Vec<usize> = (0..self.active.len())
            .filter(|&i| self.active[i].data_left > 0.0)
            .collect();
        let mut capacity = self.aggregate_bw * d;
        // water-filling: satisfy the smallest caps first
        open.sort_by(|&a, &b| {
            self.active[a]
                .demand_cap()
                .total_cmp(&self.active[b].demand_cap())
                .then(a.cmp(&b))
        });
        let mut remaining = open.len();
        for &i in &open {
            let share = capacity / remaining as f64;
            let r = share.min(self.active[i].demand_cap());
            rates[i] = r;
            capacity -= r;
            remaining -= 1;
        }
        (rates, self.meta_rate * d)
    }

    fn meta_head(&self) -> Option<usize> {
        self.active.iter().position(|a| a.meta_left > 0.0)
    }

    /// Time of the next internal state change, if any request is active.
    pub fn next_event(&self) -> Option<f64> {
        if self.active.is_empty() {
            return None;
        }
        if self.active.iter().any(|a| a.data_left <= 0.0 && a.meta_left <= 0.0) {
            return Some(self.now);
        }
        let (rates, meta_rate) = self.rates();
        let head = self.meta_head();
        let mut best = f64::INFINITY;
        for (i, a) in self.active.iter().enumerate() {
            if a.data_left > 0.0 && rates[i] > 0.0 {
                best = best.min(a.data_left / rates[i]);
            }
            if head == Some(i) && meta_rate > 0.0 {
                best = best.min(a.meta_left / meta_rate);
            }
        }
        best.is_finite().then_some(self.now + best)
    }

    fn progress(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let (rates, meta_rate) = self.rates();
        let head = self.meta_head();
        if self.record {
            let payload: f64 = self
                .active
                .iter()
                .zip(&rates)
                .map(|(a, r)| r / a.req.slowdown)
                .sum();
            if payload > 0.0 {
                self.samples.push(FsSample {
                    start: self.now,
                    end: self.now + dt,
                    payload_rate: payload,
                    active: self.active.len(),
                });
            }
        }
        for (i, a) in self.active.iter_mut().enumerate() {
            if a.data_left > 0.0 {
                let left = a.data_left - rates[i] * dt;
                a.data_left = if left <= a.req.bytes * a.req.slowdown * REL_EPS + 1e-9 {
                    0.0
                } else {
                    left
                };
            }
            if head == Some(i) {
                let left = a.meta_left - meta_rate * dt;
                a.meta_left = if left <= a.req.files * REL_EPS + 1e-12 {
                    0.0
                } else {
                    left
                };
            }
        }
        self.now += dt;
    }

    fn take_finished(&mut self, out: &mut Vec<FsCompletion>) {
        let now = self.now;
        let mut i = 0;
        while i < self.active.len() {
            let a = &self.active[i];
            if a.data_left <= 0.0 && a.meta_left <= 0.0 {
                let a = self.active.remove(i);
                out.push(FsCompletion {
                    id: a.id,
                    owner: a.req.owner,
                    tag: a.req.tag,
                    submitted: a.submitted,
                    completed: now,
                    bytes: a.req.bytes,
                    files: a.req.files,
                });
            } else {
                i += 1;
            }
        }
    }

    /// Moves the clock to `t`, returning the requests that completed on the way.
    pub fn advance(&mut self, t: f64) -> Vec<FsCompletion> {
        let mut done = Vec::new();
        loop {
            self.take_finished(&mut done);
            match self.next_event() {
                Some(te) if te <= t => {
                    // snap the component that defines `te` to exactly zero
                    let dt = te - self.now;
                    let finishing = self.finishing_within(dt);
                    self.progress(dt);
                    for (i, data, meta) in finishing {
                        if data {
                            self.active[i].data_left = 0.0;
                        }
                        if meta {
                            self.active[i].meta_left = 0.0;
                        }
                    }
                    self.now = te;
                }
                _ => {
                    let dt = t - self.now;
                    self.progress(dt);
                    self.now = self.now.max(t);
                    self.take_finished(&mut done);
                    return done;
                }
            }
        }
    }

    /// Components that finish within `dt` at current rates (within rounding),
    /// so floating residue never produces zero-length follow-up events.
    fn finishing_within(&self, dt: f64) -> Vec<(usize, bool, bool)> {
        let (rates, meta_rate) = self.rates();
        let head = self.meta_head();
        // steps below a few ulps of the clock vanish when added to it
        let tol = dt * 1e-9 + self.now.abs() * 8.0 * f64::EPSILON + 1e-12;
        self.active
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                let data = a.data_left > 0.0 && rates[i] > 0.0 && a.data_left / rates[i] <= dt + tol;
                let meta = head == Some(i) && meta_rate > 0.0 && a.meta_left / meta_rate <= dt + tol;
                (data || meta).then_some((i, data, meta))
            })
            .collect()
    }
}

/// A request for [`parallelfs_service`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub bytes: f64,
    pub files: f64,
    pub start: f64,
}

/// Seconds from each request's start until it completes, when all of them
/// share the file system.
pub fn parallelfs_service(requests: &[ServiceRequest], fs: &ParallelFsSpec) -> Vec<f64> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| requests[a].start.total_cmp(&requests[b].start).then(a.cmp(&b)));
    let mut sfs = SharedFs::new(fs).without_samples();
    let mut out = vec![0.0; requests.len()];
    let mut pending = order.into_iter().peekable();
    loop {
        let next_arrival = pending.peek().map(|&i| requests[i].start);
        let next_fs = sfs.next_event();
        let t = match (next_arrival, next_fs) {
            (None, None) => break,
            (Some(a), None) => a,
            (None, Some(f)) => f,
            (Some(a), Some(f)) => a.min(f),
        };
        for c in sfs.advance(t) {
            out[c.tag as usize] = c.completed - requests[c.tag as usize].start;
        }
        while let Some(&i) = pending.peek() {
            if requests[i].start <= sfs.now() {
                let r = &requests[i];
                sfs.submit(FsRequest::new(0, i as u64, r.bytes, r.files));
                pending.next();
            } else {
                break;
            }
        }
    }
    out
}

/// Lognormal service-time multiplier `exp(sigma * z)` for a standard normal `z`.
pub fn jitter_multiplier(sigma: f64, z: f64) -> f64 {
    if sigma <= 0.0 {
        1.0
    } else {
        (sigma * z).exp()
    }
}

/// One row of an I/O trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoRecord {
    pub job_id: String,
    pub step: u32,
    pub path: String,
    pub bytes: u64,
    pub files: u64,
    pub start_s: f64,
    pub end_s: f64,
}

impl IoRecord {
    pub fn delivered_bw(&self) -> f64 {
        let dt = self.end_s - self.start_s;
        if dt > 0.0 {
            self.bytes as f64 / dt
        } else {
            0.0
        }
    }
}

/// Nominal per-file size used when reporting metadata-heavy writes.
pub fn mean_file_size(bytes: f64, files: f64) -> f64 {
    if files > 0.0 {
        bytes / files
    } else {
        bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(bw: f64, meta: f64, beta: f64) -> ParallelFsSpec {
        ParallelFsSpec {
            capacity: Bytes::tib(270),
            aggregate_bw: bw,
            metadata_ops_per_second: meta,
            contention_beta: beta,
            jitter_sigma: 0.0,
        }
    }

    #[test]
    fn empty_fsdax_write() {
        assert_eq!(fsdax_write_time(0.0, 0.0, false, &FsdaxParams::default()), 0.0);
    }

    #[test]
    fn fsdax_cross_numa_penalty() {
        let p = FsdaxParams {
            bw_per_device: 1e9,
            meta_cost_per_file: 0.01,
            numa_cross_penalty: 2.0,
        };
        assert!((fsdax_write_time(1e9, 10.0, false, &p) - 1.1).abs() < 1e-12);
        assert!((fsdax_write_time(1e9, 10.0, true, &p) - 2.1).abs() < 1e-12);
    }

    #[test]
    fn single_writer_gets_everything() {
        let spec = fs(2e9, 1e6, 0.5);
        let t = parallelfs_service(&[ServiceRequest { bytes: 4e9, files: 0.0, start: 0.0 }], &spec);
        assert!((t[0] - 2.0).abs() < 1e-9);
        assert_eq!(contention_factor(1, 0.5), 1.0);
    }

    #[test]
    fn metadata_can_bind() {
        let spec = fs(2e9, 100.0, 0.0);
        let t = parallelfs_service(&[ServiceRequest { bytes: 1e9, files: 300.0, start: 0.0 }], &spec);
        assert!((t[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn metadata_is_first_come_first_served() {
        let spec = fs(1e12, 100.0, 0.0);
        let reqs = [
            ServiceRequest { bytes: 0.0, files: 100.0, start: 0.0 },
            ServiceRequest { bytes: 0.0, files: 100.0, start: 0.0 },
        ];
        let t = parallelfs_service(&reqs, &spec);
        assert!((t[0] - 1.0).abs() < 1e-9);
        assert!((t[1] - 2.0).abs() < 1e-9, "{t:?}");
    }

    #[test]
    fn two_equal_writers_share_with_degradation() {
        let spec = fs(2e9, 1e9, 0.25);
        let reqs = [
            ServiceRequest { bytes: 2e9, files: 0.0, start: 0.0 },
            ServiceRequest { bytes: 2e9, files: 0.0, start: 0.0 },
        ];
        let t = parallelfs_service(&reqs, &spec);
        // each gets 2e9 * 0.8 / 2 = 0.8e9
        assert!((t[0] - 2.5).abs() < 1e-9, "{t:?}");
        assert!((t[1] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn late_arrival_measured_from_own_start() {
        let spec = fs(1e9, 1e9, 0.0);
        let reqs = [
            ServiceRequest { bytes: 1e9, files: 0.0, start: 0.0 },
            ServiceRequest { bytes: 1e9, files: 0.0, start: 10.0 },
        ];
        let t = parallelfs_service(&reqs, &spec);
        assert!((t[0] - 1.0).abs() < 1e-9);
        assert!((t[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_request_is_instant() {
        let spec = fs(1e9, 1e3, 0.0);
        let t = parallelfs_service(&[ServiceRequest { bytes: 0.0, files: 0.0, start: 3.0 }], &spec);
        assert_eq!(t[0], 0.0);
    }

    #[test]
    fn caps_are_water_filled() {
        let spec = fs(10e9, 1e9, 0.0);
        let mut s = SharedFs::new(&spec);
        let mut a = FsRequest::new(0, 0, 1e9, 0.0);
        a.cap = 1e9;
        s.submit(a);
        s.submit(FsRequest::new(1, 1, 9e9, 0.0));
        let done = s.advance(1.0 + 1e-9);
        assert_eq!(done.len(), 2, "{done:?}");
        assert!(done.iter().all(|c| (c.completed - 1.0).abs() < 1e-6));
    }

    #[test]
    fn layout_examples() {
        let p = EphemeralFsParams {
            chunk_size: Bytes(10),
            ..EphemeralFsParams::default()
        };
        let l = ephemeralfs_layout(Bytes(100), 10, &p);
        assert_eq!(l, (0..10).collect::<Vec<_>>());
        let l = ephemeralfs_layout(Bytes(120), 10, &p);
        let mut counts = [0; 10];
        l.iter().for_each(|&n| counts[n as usize] += 1);
        assert_eq!(counts, [2, 2, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert!(ephemeralfs_layout(Bytes::ZERO, 4, &p).is_empty());
        // partial last chunk still occupies a node
        assert_eq!(ephemeralfs_layout(Bytes(11), 4, &p), vec![0, 1]);
    }

    #[test]
    fn single_node_easy_write_is_device_bound() {
        let p = EphemeralFsParams::default();
        assert_eq!(ephemeralfs_throughput(1, 1, IorAccess::EasyWrite, &p), p.per_node_bw);
    }

    #[test]
    fn hard_is_never_faster_than_easy() {
        let p = EphemeralFsParams::default();
        for n in 1..20 {
            let ew = ephemeralfs_throughput(n, n, IorAccess::EasyWrite, &p);
            let hw = ephemeralfs_throughput(n, n, IorAccess::HardWrite, &p);
            let er = ephemeralfs_throughput(n, n, IorAccess::EasyRead, &p);
            let hr = ephemeralfs_throughput(n, n, IorAccess::HardRead, &p);
            assert!(hw <= ew && hr <= er);
        }
    }

    #[test]
    fn objectstore_identity() {
        let p = ObjectStoreParams::default();
        assert_eq!(objectstore_write_throughput(1, &p), p.per_server_bw);
    }

    #[test]
    fn objectstore_doubling_never_hurts() {
        for eff in [0.5, 0.6, 0.8, 0.95, 1.0] {
            let p = ObjectStoreParams {
                per_server_bw: 1e9,
                scaling_efficiency: eff,
            };
            for s in 1..=32 {
                let a = objectstore_write_throughput(s, &p);
                let b = objectstore_write_throughput(2 * s, &p);
                assert!(b >= a * (1.0 - 1e-12), "eff {eff} s {s}");
            }
        }
    }

    #[test]
    fn jitter_is_lognormal() {
        assert_eq!(jitter_multiplier(0.0, 3.0), 1.0);
        assert!(jitter_multiplier(0.3, -2.0) < 1.0 && jitter_multiplier(0.3, -2.0) > 0.0);
        assert_eq!(jitter_multiplier(0.3, 0.0), 1.0);
    }
}
