//! Shared builders for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use bapmsim::domain::{
    ApplicationProfile, CheckpointMedium, CheckpointPolicy, ClusterSpec, DatasetHome, DatasetSpec, Edge,
    IoPattern, JobSpec, Modifiable, PlatformMode, WorkflowSpec,
};
use bapmsim::sim::{PowerLoss, StagingPolicy, WorkflowPolicy};
use bapmsim::units::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cluster() -> ClusterSpec {
    ClusterSpec::nextgenio()
}

pub fn profile(name: &str, steps: u32, compute: f64) -> ApplicationProfile {
    ApplicationProfile {
        name: name.into(),
        description: String::new(),
        processes: 48,
        mem_footprint_per_process: Bytes::gib(1),
        mem_traffic_per_step: Bytes::ZERO,
        compute_seconds_per_step: compute,
        steps,
        write_interval: 1,
        write_bytes_per_process: Bytes::ZERO,
        final_write_bytes_per_process: None,
        files_per_write_per_process: 0,
        io_pattern: IoPattern::None,
        shared_file: false,
        modifiable: Modifiable::Yes,
        io_perf_critical: false,
        memory_intensive: false,
        io_intensive: false,
        reuse: Default::default(),
        aliasing_pathology: false,
        async_io_servers: false,
    }
}

/// A random DAG of up to `max_jobs` small jobs. Every job reads at most two
/// datasets written by earlier jobs, so the result is always acyclic.
pub fn random_workflow(seed: u64, max_jobs: usize, with_power_loss: bool) -> (WorkflowSpec, WorkflowPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_jobs);
    let mut jobs = Vec::new();
    let mut datasets = Vec::new();
    let mut edges = Vec::new();
    let mut keep_flags = BTreeMap::new();
    for j in 0..n {
        let id = format!("j{j}");
        let mut p = profile(&id, rng.random_range(1..=4), rng.random_range(0.5..3.0));
        if rng.random_bool(0.3) {
            p.io_pattern = IoPattern::Local;
            p.write_interval = rng.random_range(1..=2);
            p.write_bytes_per_process = Bytes::mib(rng.random_range(1..=64));
            p.files_per_write_per_process = 1;
        }
        let (mode, memory_space) = match rng.random_range(0..3) {
            0 => (PlatformMode::AppDirect, Bytes::ZERO),
            1 => (PlatformMode::Memory, Bytes::tib(1)),
            _ => (PlatformMode::AppDirect, Bytes::tib(1)),
        };
        let checkpoint = if rng.random_bool(0.3) {
            let medium = match rng.random_range(0..3) {
                0 => CheckpointMedium::AppDirect,
                1 => CheckpointMedium::ParallelFs,
                _ => CheckpointMedium::MemorySpace,
            };
            Some(CheckpointPolicy {
                interval_steps: rng.random_range(1..=2),
                bytes_per_process: Bytes::mib(rng.random_range(1..=32)),
                medium,
            })
        } else {
            None
        };
        jobs.push(JobSpec {
            id: id.clone(),
            profile: p,
            nodes: rng.random_range(1..=2),
            mode,
            memory_space,
            storage: None,
            checkpoint,
        });
        // inputs from earlier outputs
        if !datasets.is_empty() {
            for _ in 0..rng.random_range(0..=2) {
                let d: &DatasetSpec = &datasets[rng.random_range(0..datasets.len())];
                let d = d.id.clone();
                if !edges
                    .iter()
                    .any(|e: &Edge| e.dataset == d && e.consumer.as_deref() == Some(id.as_str()))
                {
                    let producer = edges.iter().find(|e: &&Edge| e.dataset == d).unwrap().producer.clone();
                    edges.push(Edge {
                        producer,
                        dataset: d,
                        consumer: Some(id.clone()),
                    });
                }
            }
        }
        for k in 0..rng.random_range(0..=2) {
            let did = format!("d{j}_{k}");
            let home = if rng.random_bool(0.7) {
                DatasetHome::NodeLocal
            } else {
                DatasetHome::ParallelFs
            };
            datasets.push(DatasetSpec {
                id: did.clone(),
                size: Bytes::gib(rng.random_range(1..=200)),
                home,
            });
            edges.push(Edge {
                producer: id.clone(),
                dataset: did.clone(),
                consumer: None,
            });
            keep_flags.insert(did, rng.random_bool(0.5));
        }
    }
    let staging = if rng.random_bool(0.5) {
        StagingPolicy::PreferNodeLocal
    } else {
        StagingPolicy::ForceParallelFs
    };
    let power_losses = if with_power_loss && rng.random_bool(0.5) {
        let nodes: Vec<u32> = (0..4).filter(|_| rng.random_bool(0.5)).collect();
        vec![PowerLoss {
            time: rng.random_range(0.5..20.0),
            nodes,
        }]
    } else {
        Vec::new()
    };
    let wf = WorkflowSpec {
        jobs,
        datasets,
        edges,
        keep_flags,
    };
    let policy = WorkflowPolicy {
        staging,
        initial: None,
        power_losses,
    };
    (wf, policy)
}
