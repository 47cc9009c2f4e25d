mod common;

use bapmsim::calibrate::CalibrationParams;
use bapmsim::domain::{CheckpointMedium, CheckpointPolicy, IoPattern, NodeConfiguration, StorageTarget};
use bapmsim::error::Error;
use bapmsim::sim::{inject_power_loss, JobRun, ModelParams, Simulation};
use bapmsim::units::Bytes;

fn model() -> ModelParams {
    CalibrationParams::defaults(&common::cluster()).model()
}

fn appdirect_sim() -> Simulation {
    let c = common::cluster();
    let cfg = NodeConfiguration::app_direct(&c);
    Simulation::uniform(c, cfg, 7)
}

#[test]
fn compute_only_job_is_steps_times_step() {
    let p = common::profile("a", 7, 3.5);
    let r = appdirect_sim().with_job(JobRun::new("a", p, vec![0, 1])).run(&model()).unwrap();
    let j = r.job("a").unwrap();
    assert!((j.wallclock - 24.5).abs() < 1e-9);
    assert!((j.node_seconds - 49.0).abs() < 1e-9);
    assert!((j.core_seconds - 49.0 * 48.0).abs() < 1e-6);
    assert!(j.step_times.iter().all(|s| (s - 3.5).abs() < 1e-9));
    assert_eq!(r.makespan, j.end);
}

#[test]
fn delayed_start_shifts_the_job() {
    let p = common::profile("a", 4, 2.0);
    let r = appdirect_sim()
        .with_job(JobRun::new("a", p, vec![3]).start_at(10.0))
        .run(&model())
        .unwrap();
    let j = r.job("a").unwrap();
    assert_eq!(j.start, 10.0);
    assert!((j.end - 18.0).abs() < 1e-9);
}

#[test]
fn events_dispatch_in_time_order() {
    let mut p = common::profile("w", 6, 1.0);
    p.io_pattern = IoPattern::Global;
    p.write_bytes_per_process = Bytes::mib(256);
    p.files_per_write_per_process = 1;
    let mut sim = appdirect_sim();
    for k in 0..4u32 {
        sim = sim.with_job(JobRun::new(format!("w{k}"), p.clone(), vec![k]).storage(StorageTarget::ParallelFs));
    }
    let r = sim.run(&model()).unwrap();
    assert!(!r.events.is_empty());
    for w in r.events.windows(2) {
        assert!((w[0].time, w[0].seq) < (w[1].time, w[1].seq));
    }
    for rec in &r.io_trace {
        assert!(rec.end_s >= rec.start_s);
    }
}

#[test]
fn more_writers_never_speed_up_the_parallel_fs() {
    let mut p = common::profile("w", 5, 1.0);
    p.io_pattern = IoPattern::Global;
    p.write_bytes_per_process = Bytes::mib(512);
    p.files_per_write_per_process = 1;
    let mut prev = 0.0;
    for k in 1..=6u32 {
        let mut sim = appdirect_sim();
        for i in 0..k {
            sim = sim.with_job(JobRun::new(format!("w{i}"), p.clone(), vec![i]).storage(StorageTarget::ParallelFs));
        }
        let r = sim.run(&model()).unwrap();
        let mean = r.jobs.iter().map(|j| j.wallclock).sum::<f64>() / k as f64;
        assert!(mean >= prev * (1.0 - 1e-12), "{k} writers: {mean} < {prev}");
        prev = mean;
    }
}

#[test]
fn power_loss_restarts_from_last_surviving_checkpoint() {
    let p = common::profile("c", 100, 1.0);
    let job = JobRun::new("c", p, vec![0]).checkpoint(CheckpointPolicy {
        interval_steps: 10,
        bytes_per_process: Bytes::mib(10),
        medium: CheckpointMedium::AppDirect,
    });
    let sim = inject_power_loss(appdirect_sim().with_job(job), 45.5, vec![0]);
    let r = sim.run(&model()).unwrap();
    let pl = &r.power_losses[0];
    let a = &pl.aborted[0];
    assert_eq!((a.completed_steps, a.resume_step), (45, 40));
    assert_eq!(a.recomputed_steps, 5);
    let j = r.job("c").unwrap();
    assert_eq!(j.restarts, 1);
    assert_eq!(j.recomputed_steps, 5);
    let reboot = common::cluster().reboot_seconds;
    assert!(j.end > 100.0 + 5.0 + reboot);
}

#[test]
fn memory_space_checkpoints_do_not_survive() {
    let c = common::cluster();
    let cfg = NodeConfiguration::mixed(&c, bapmsim::domain::PlatformMode::Memory, Bytes::tib(2)).unwrap();
    let p = common::profile("v", 50, 1.0);
    let job = JobRun::new("v", p, vec![0]).checkpoint(CheckpointPolicy {
        interval_steps: 10,
        bytes_per_process: Bytes::mib(10),
        medium: CheckpointMedium::MemorySpace,
    });
    let sim = inject_power_loss(Simulation::uniform(c, cfg, 1).with_job(job), 25.5, vec![0]);
    let r = sim.run(&model()).unwrap();
    let a = &r.power_losses[0].aborted[0];
    assert_eq!(a.resume_step, 0);
    assert_eq!(a.recomputed_steps, a.completed_steps);
    assert!(r.job("v").unwrap().checkpoints.iter().any(|c| c.lost));
}

#[test]
fn overlapping_allocations_are_rejected() {
    let p = common::profile("a", 1, 1.0);
    let err = appdirect_sim()
        .with_job(JobRun::new("a", p.clone(), vec![0, 1]))
        .with_job(JobRun::new("b", p, vec![1]))
        .run(&model())
        .unwrap_err();
    assert!(matches!(err, Error::AllocationConflict { node: 1, .. }));
}

#[test]
fn oversized_job_on_dram_only_nodes_fails() {
    let mut p = common::profile("big", 1, 1.0);
    p.mem_footprint_per_process = Bytes::gib(5);
    let err = appdirect_sim().with_job(JobRun::new("big", p, vec![0])).run(&model()).unwrap_err();
    assert!(matches!(err, Error::OutOfMemory { .. }), "{err}");
}

#[test]
fn io_trace_csv_has_header_and_rows() {
    let mut p = common::profile("w", 2, 1.0);
    p.io_pattern = IoPattern::Local;
    p.write_bytes_per_process = Bytes::mib(8);
    p.files_per_write_per_process = 1;
    let r = appdirect_sim().with_job(JobRun::new("w", p, vec![0])).run(&model()).unwrap();
    let csv = r.io_trace_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("job_id,step,path,bytes,files,start_s,end_s"));
    assert_eq!(lines.count(), r.io_trace.len());
    assert!(!r.io_trace.is_empty());
}
