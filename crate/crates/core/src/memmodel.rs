//! Latency and bandwidth of DRAM, Memory mode and AppDirect mode.
//!
//! Absolute latencies and bandwidths are parameters. Only the published
//! ratios (10% Memory-mode latency overhead, AppDirect at 50% of DRAM read and
//! 10% of DRAM write bandwidth) are baked into the defaults.

use serde::{Deserialize, Serialize};

use crate::domain::{effective_main_memory, ApplicationProfile, ClusterSpec, NodeConfiguration, PlatformMode, Reuse};
use crate::error::{Error, Result};
use crate::units::{Bytes, GIB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryParams {
    /// ns
    pub lat_dram_local: f64,
    /// ns
    pub lat_dram_remote: f64,
    pub mm_latency_factor: f64,
    /// ns
    pub ad_latency_local: f64,
    /// ns
    pub ad_latency_remote: f64,
    /// bytes/s per socket
    pub bw_dram_read: f64,
    /// bytes/s per socket
    pub bw_dram_write: f64,
    pub ad_read_ratio: f64,
    pub ad_write_ratio: f64,
    pub mm_cached_bw_factor: f64,
    /// bytes/s per socket when Memory mode misses the DRAM cache
    pub media_read_bw: f64,
    /// bytes/s per socket
    pub media_write_bw: f64,
    pub numa_bw_penalty: f64,
}

impl Default for MemoryParams {
    fn default() -> Self {
        let bw_dram_read = 100.0 * GIB as f64;
        let bw_dram_write = 70.0 * GIB as f64;
        MemoryParams {
            lat_dram_local: 80.0,
            lat_dram_remote: 135.0,
            mm_latency_factor: 1.10,
            ad_latency_local: 300.0,
            ad_latency_remote: 390.0,
            bw_dram_read,
            bw_dram_write,
            ad_read_ratio: 0.5,
            ad_write_ratio: 0.1,
            mm_cached_bw_factor: 0.97,
            media_read_bw: 0.5 * bw_dram_read,
            media_write_bw: 0.1 * bw_dram_write,
            numa_bw_penalty: 1.3,
        }
    }
}

impl MemoryParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let lat = [
            ("lat_dram_local", self.lat_dram_local),
            ("lat_dram_remote", self.lat_dram_remote),
            ("ad_latency_local", self.ad_latency_local),
            ("ad_latency_remote", self.ad_latency_remote),
        ];
        for (n, x) in lat {
            if !(x > 0.0) {
                v.push(format!("{n} must be positive"));
            }
        }
        let ratios = [
            ("ad_read_ratio", self.ad_read_ratio),
            ("ad_write_ratio", self.ad_write_ratio),
            ("mm_cached_bw_factor", self.mm_cached_bw_factor),
        ];
        for (n, x) in ratios {
            if !(x > 0.0 && x <= 1.0) {
                v.push(format!("{n} must lie in (0, 1]"));
            }
        }
        if !(self.mm_latency_factor >= 1.0) {
            v.push("mm_latency_factor must be at least 1".into());
        }
        if !(self.numa_bw_penalty >= 1.0) {
            v.push("numa_bw_penalty must be at least 1".into());
        }
        let bws = [
            ("bw_dram_read", self.bw_dram_read),
            ("bw_dram_write", self.bw_dram_write),
            ("media_read_bw", self.media_read_bw),
            ("media_write_bw", self.media_write_bw),
        ];
        for (n, x) in bws {
            if !(x > 0.0) {
                v.push(format!("{n} must be positive"));
            }
        }
        v
    }

    /// Like [`violations`](Self::violations), plus the 100-300 ns window for
    /// local AppDirect latency that holds unless the user overrides it.
    pub fn violations_strict(&self) -> Vec<String> {
        let mut v = self.violations();
        if !(100.0..=300.0).contains(&self.ad_latency_local) {
            v.push(format!(
                "ad_latency_local {} ns outside the 100-300 ns window",
                self.ad_latency_local
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v))
        }
    }

    fn dram_bw(&self, op: Op) -> f64 {
        match op {
            Op::Read => self.bw_dram_read,
            Op::Write => self.bw_dram_write,
        }
    }

    fn media_bw(&self, op: Op) -> f64 {
        match op {
            Op::Read => self.media_read_bw,
            Op::Write => self.media_write_bw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Medium {
    Dram,
    MemoryModeCached,
    MemoryModeUncached,
    AppDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Numa {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessKind {
    pub medium: Medium,
    pub op: Op,
    pub numa: Numa,
}

impl AccessKind {
    pub fn new(medium: Medium, op: Op, numa: Numa) -> Self {
        AccessKind { medium, op, numa }
    }
}

/// Unloaded access latency in nanoseconds.
///
/// The Memory-mode overhead factor is applied identically to local and
/// remote accesses.
pub fn idle_latency(kind: AccessKind, p: &MemoryParams) -> f64 {
    let dram = match kind.numa {
        Numa::Local => p.lat_dram_local,
        Numa::Remote => p.lat_dram_remote,
    };
    let ad = match kind.numa {
        Numa::Local => p.ad_latency_local,
        Numa::Remote => p.ad_latency_remote,
    };
    match kind.medium {
        Medium::Dram => dram,
        Medium::MemoryModeCached => dram * p.mm_latency_factor,
        Medium::AppDirect => ad,
        // miss: media access plus the DRAM-cache fill
        Medium::MemoryModeUncached => ad + dram,
    }
}

/// Fraction of accesses served by the direct-mapped DRAM cache in Memory mode.
///
/// * `Resident`: everything hits while the working set fits.
/// * `Streaming`: accesses land uniformly, so `cache / working_set` of them hit.
/// * `Sweep`: repeated sequential passes. Addresses that alias onto an
///   occupied cache line evict each other every pass, so only the
///   `2*cache - working_set` lines without an alias survive, and nothing
///   survives once the working set is twice the cache.
pub fn dram_cache_hit_fraction(working_set: Bytes, dram_cache: Bytes, reuse: Reuse) -> f64 {
    if working_set == Bytes::ZERO {
        return 1.0;
    }
    if dram_cache == Bytes::ZERO {
        return 0.0;
    }
    let w = working_set.as_f64();
    let c = dram_cache.as_f64();
    if w <= c {
        return 1.0;
    }
    match reuse {
        Reuse::Streaming | Reuse::Resident => (c / w).min(1.0),
        Reuse::Sweep => ((2.0 * c - w) / w).clamp(0.0, 1.0),
    }
}

/// How the node's main memory is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemorySystem {
    Dram,
    MemoryMode,
    AppDirect,
}

impl MemorySystem {
    pub fn for_mode(mode: PlatformMode) -> Self {
        match mode {
            PlatformMode::AppDirect => MemorySystem::Dram,
            PlatformMode::Memory => MemorySystem::MemoryMode,
        }
    }
}

/// Memory-mode bandwidth per node for a given DRAM-cache hit fraction.
pub fn memory_mode_bandwidth(op: Op, hit: f64, sockets: u32, p: &MemoryParams) -> f64 {
    let cached = p.dram_bw(op) * p.mm_cached_bw_factor;
    (hit * cached + (1.0 - hit) * p.media_bw(op)) * sockets as f64
}

/// Sustained bandwidth per node, bytes/s.
pub fn effective_bandwidth(
    system: MemorySystem,
    op: Op,
    working_set: Bytes,
    reuse: Reuse,
    cluster: &ClusterSpec,
    p: &MemoryParams,
) -> f64 {
    let sockets = cluster.sockets_per_node as f64;
    match system {
        MemorySystem::Dram => p.dram_bw(op) * sockets,
        MemorySystem::AppDirect => {
            let ratio = match op {
                Op::Read => p.ad_read_ratio,
                Op::Write => p.ad_write_ratio,
            };
            p.dram_bw(op) * ratio * sockets
        }
        MemorySystem::MemoryMode => {
            let h = dram_cache_hit_fraction(working_set, cluster.dram_per_node, reuse);
            memory_mode_bandwidth(op, h, cluster.sockets_per_node, p)
        }
    }
}

/// Per-node working set when the profile is spread over `nodes`.
pub fn working_set_per_node(profile: &ApplicationProfile, nodes: u32) -> Bytes {
    Bytes(profile.total_footprint().0.div_ceil(nodes.max(1) as u64))
}

/// Wall-clock seconds of one timestep: pure compute plus memory traffic
/// served at the node's effective read bandwidth.
pub fn step_compute_time(
    profile: &ApplicationProfile,
    config: &NodeConfiguration,
    cluster: &ClusterSpec,
    nodes: u32,
    p: &MemoryParams,
) -> Result<f64> {
    let nodes = nodes.max(1);
    let ws = working_set_per_node(profile, nodes);
    let available = effective_main_memory(config, cluster);
    if ws > available {
        return Err(Error::OutOfMemory {
            needed: ws,
            available,
        });
    }
    let traffic = profile.mem_traffic_per_step.as_f64() * profile.processes as f64 / nodes as f64;
    if traffic == 0.0 {
        return Ok(profile.compute_seconds_per_step);
    }
    let system = MemorySystem::for_mode(config.mode);
    let bw = if system == MemorySystem::MemoryMode && profile.aliasing_pathology {
        memory_mode_bandwidth(Op::Read, 0.0, cluster.sockets_per_node, p)
    } else {
        effective_bandwidth(system, Op::Read, ws, profile.reuse, cluster, p)
    };
    Ok(profile.compute_seconds_per_step + traffic / bw)
}
