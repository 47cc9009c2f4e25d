//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use bapmsim::advisor::recommend;
use bapmsim::calibrate::{fit, CalibrationParams, FitTarget, FreeParam};
use bapmsim::domain::{IoPattern, Modifiable, StorageTarget};
use bapmsim::iomodel::{ephemeralfs_layout, EphemeralFsParams};
use bapmsim::scenarios::{bundled_calibration, bundled_profile, evaluate, run_scenario, Metrics};
use bapmsim::sim::{schedule_workflow, SimReport, TransferKind};
use bapmsim::units::{Bytes, GIB};

const SEED: u64 = 42;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    ((actual - expected) / expected).abs() <= tol
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let r = f()?;
    let took = t.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))?;
    Ok(format!("{r} in {:.2}s", took.as_secs_f64()))
}

fn advisor_oracle() -> Outcome {
    timed(Duration::from_secs(1), || {
        let expected = [
            ("castep", "MemoryMode"),
            ("snappyhexmesh", "MemoryMode"),
            ("simplefoam", "AppDirect + Fsdax"),
            ("io500", "AppDirect + DistributedEphemeralFs"),
            ("monc", "AppDirect + Fsdax"),
            ("fdb5", "AppDirect + DirectAccess"),
        ];
        for (name, want) in expected {
            let got = recommend(&bundled_profile(name).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?
                .to_string();
            ensure(got == want, format!("{name}: got {got}, want {want}"))?;
        }
        Ok("6/6 rows".into())
    })
}

fn table1() -> Outcome {
    let calib = bundled_calibration();
    timed(Duration::from_secs(10), || {
        let observed = [
            (100, [7.68, 7.70, 7.67, 7.70]),
            (10, [7.89, 7.87, 7.82, 7.84]),
            (1, [15.06, 9.50, 58.97, 9.32]),
        ];
        let out = run_scenario("table1", &common::cluster(), &calib, SEED).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for (iv, cells) in observed {
            let keys = ["lustre:single", "fsdax:single", "lustre:ensemble", "fsdax:ensemble"];
            for (k, obs) in keys.iter().zip(cells) {
                let key = format!("table1:{k}:{iv}");
                let v = out.metrics[&key];
                let err = (v / obs - 1.0).abs();
                worst = worst.max(err);
                ensure(err <= 0.10, format!("{key} = {v:.3}, observed {obs}"))?;
            }
        }
        Ok(format!("12/12 cells, worst relative error {:.2}%", worst * 100.0))
    })
}

/// Memory-mode sweep bandwidth from first principles: a direct-mapped DRAM
/// cache keeps `2C - W` of `W` bytes once the working set exceeds it.
fn stream_oracle(w_gib: f64, calib: &CalibrationParams) -> f64 {
    let m = &calib.memory;
    let c = 192.0;
    let h = if w_gib <= c { 1.0 } else { ((2.0 * c - w_gib) / w_gib).max(0.0) };
    2.0 * (h * m.bw_dram_read * m.mm_cached_bw_factor + (1.0 - h) * m.media_read_bw) / GIB as f64
}

fn stream_shape() -> Outcome {
    let calib = bundled_calibration();
    let out = run_scenario("stream", &common::cluster(), &calib, SEED).map_err(|e| e.to_string())?;
    let (_, t) = &out.tables[0];
    let mut prev = f64::INFINITY;
    let cached = stream_oracle(1.0, &calib);
    let mut series = Vec::new();
    for row in &t.rows {
        let w: f64 = row[0].parse().unwrap();
        let bw: f64 = row[1].parse().unwrap();
        ensure(bw <= prev + 1e-9, format!("bandwidth rises at {w} GiB"))?;
        ensure(
            (bw - stream_oracle(w, &calib)).abs() <= 1e-3,
            format!("{w} GiB: {bw} vs oracle {}", stream_oracle(w, &calib)),
        )?;
        if w <= 192.0 {
            ensure((bw - cached).abs() <= 1e-3, format!("{w} GiB below the cached level"))?;
        }
        series.push((w, bw));
        prev = bw;
    }
    let mut worst: f64 = 0.0;
    for &(w, b) in &series {
        if w >= 768.0 {
            if let Some(&(_, b2)) = series.iter().find(|(w2, _)| *w2 == 2.0 * w) {
                worst = worst.max((b2 / b - 1.0).abs());
            }
        }
    }
    ensure(worst < 0.02, format!("plateau changes {:.2}% per doubling", worst * 100.0))?;
    ensure(
        out.metrics["stream:monotone"] == 1.0 && out.metrics["stream:plateau_change"] < 0.02,
        "scenario metrics disagree with the table",
    )?;
    Ok(format!(
        "{} sizes monotone, cached level {cached:.1} GiB/s, plateau change {:.3}% per doubling",
        series.len(),
        worst * 100.0
    ))
}

fn monc() -> Outcome {
    let calib = bundled_calibration();
    timed(Duration::from_secs(10), || {
        let base = common::cluster();
        let m = Metrics::new(&base, &calib, SEED);
        let (lustre, _) = m.monc(StorageTarget::ParallelFs, SEED).map_err(|e| e.to_string())?;
        let (fsdax, _) = m.monc(StorageTarget::Fsdax, SEED).map_err(|e| e.to_string())?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (lm, fm) = (mean(&lustre), mean(&fsdax));
        ensure(lustre.len() == 10 && fsdax.len() == 10, "ten jobs per ensemble")?;
        ensure(within(lm, 626.0, 0.05), format!("Lustre mean {lm:.1}"))?;
        ensure(within(fm, 550.0, 0.05), format!("fsdax mean {fm:.1}"))?;
        let spread = |v: &[f64]| {
            let max = v.iter().copied().fold(f64::MIN, f64::max);
            let min = v.iter().copied().fold(f64::MAX, f64::min);
            (max - min) / (2.0 * mean(v))
        };
        let mut lustre_spreads = Vec::new();
        for s in SEED..SEED + 10 {
            let (l, _) = m.monc(StorageTarget::ParallelFs, s).map_err(|e| e.to_string())?;
            let (f, _) = m.monc(StorageTarget::Fsdax, s).map_err(|e| e.to_string())?;
            ensure(spread(&f) < spread(&l), format!("seed {s}: fsdax spread not below Lustre"))?;
            lustre_spreads.push(spread(&l));
        }
        Ok(format!(
            "Lustre mean {lm:.1}s, fsdax mean {fm:.1}s, fsdax spread below Lustre in 10/10 seeds (Lustre spread {:.1}% at seed {SEED})",
            lustre_spreads[0] * 100.0
        ))
    })
}

fn snappy() -> Outcome {
    let calib = bundled_calibration();
    let out = run_scenario("snappy", &common::cluster(), &calib, SEED).map_err(|e| e.to_string())?;
    let g = |k: &str| out.metrics[k];
    ensure(g("snappy:appdirect1:oom") == 1.0, "one DRAM node did not run out of memory")?;
    let (mm, d2) = (g("snappy:memory1:wallclock"), g("snappy:dram2:wallclock"));
    ensure(within(mm, 11637.0, 0.10), format!("Memory-mode run {mm:.0}s"))?;
    ensure(within(d2, 6566.0, 0.10), format!("2-node run {d2:.0}s"))?;
    let (ns_mm, ns_d2) = (mm, 2.0 * d2);
    ensure(ns_mm < ns_d2, format!("node-seconds {ns_mm:.0} vs {ns_d2:.0}"))?;
    ensure(
        (g("snappy:memory1:node_seconds") - ns_mm).abs() < 1e-6 && (g("snappy:dram2:node_seconds") - ns_d2).abs() < 1e-6,
        "reported node-seconds differ from nodes x wallclock",
    )?;
    Ok(format!(
        "1 node Memory {mm:.0}s, 2 nodes DRAM {d2:.0}s, node-seconds {ns_mm:.0} vs {ns_d2:.0}"
    ))
}

fn ior_and_objectstore() -> Outcome {
    let calib = bundled_calibration();
    let out = run_scenario("io500", &common::cluster(), &calib, SEED).map_err(|e| e.to_string())?;
    let observed = [
        ("easy_read", 71.968),
        ("easy_write", 63.305),
        ("hard_read", 25.546),
        ("hard_write", 3.310),
    ];
    let mut worst: f64 = 0.0;
    for (k, obs) in observed {
        let v = out.metrics[&format!("ior:{k}")];
        worst = worst.max((v / obs - 1.0).abs());
        ensure(within(v, obs, 0.05), format!("{k}: {v:.3} GiB/s vs {obs}"))?;
    }
    let o = &calib.objectstore;
    ensure(o.scaling_efficiency == 0.95, "scaling efficiency is not the pinned 0.95")?;
    // 32 servers are five doublings
    let per_server = 72.0 / (32.0 * 0.95f64.powi(5));
    ensure(
        within(o.per_server_bw / GIB as f64, per_server, 1e-9),
        format!("per-server bandwidth {} vs {per_server}", o.per_server_bw / GIB as f64),
    )?;
    let os = out.metrics["objectstore:32"];
    ensure(within(os, 72.0, 1e-9), format!("object store at 32 servers: {os}"))?;
    Ok(format!(
        "IOR worst error {:.2}%, object store {os:.9} GiB/s at 32 servers",
        worst * 100.0
    ))
}

fn events_sorted(r: &SimReport) -> bool {
    // brute force: every earlier-dispatched event precedes every later one
    let e = &r.events;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            let before = e[i].time < e[j].time || (e[i].time == e[j].time && e[i].seq < e[j].seq);
            if !before {
                return false;
            }
        }
    }
    true
}

fn property_suite() -> Outcome {
    let base = common::cluster();
    let calib = bundled_calibration();
    let model = calib.model();
    let cluster = calib.cluster(&base);

    // event ordering on every small workflow
    let mut small = 0;
    for seed in 0..400u64 {
        let (wf, policy) = common::random_workflow(seed, 3, true);
        let r = match schedule_workflow(&cluster, &wf, &policy, &model, seed) {
            Ok(o) => o.report,
            Err(e) => return Err(format!("workflow {seed}: {e}")),
        };
        if r.events.len() <= 20 {
            small += 1;
            ensure(events_sorted(&r), format!("workflow {seed}: dispatch order differs from (time, seq)"))?;
        }
    }
    ensure(small >= 50, format!("only {small} workflows with at most 20 events"))?;

    // conservation
    for seed in 0..1000u64 {
        let (wf, policy) = common::random_workflow(10_000 + seed, 5, true);
        let r = schedule_workflow(&cluster, &wf, &policy, &model, seed)
            .map_err(|e| format!("workflow {seed}: {e}"))?
            .report;
        for d in &r.datasets {
            ensure(d.local_balance() == 0, format!("workflow {seed}: {} does not balance", d.id))?;
            ensure(
                d.staged_out <= d.produced_local + d.staged_in,
                format!("workflow {seed}: {} staged out more than it held", d.id),
            )?;
            let moved: u64 = r
                .transfers
                .iter()
                .filter(|t| t.dataset == d.id && t.kind == TransferKind::StageOut)
                .map(|t| t.bytes)
                .sum();
            ensure(moved == d.staged_out, format!("workflow {seed}: stage-out records disagree"))?;
        }
    }

    // determinism
    for id in ["monc", "workflow-demo", "powerloss-demo"] {
        let a = run_scenario(id, &base, &calib, SEED).map_err(|e| e.to_string())?;
        let b = run_scenario(id, &base, &calib, SEED).map_err(|e| e.to_string())?;
        let ja = serde_json::to_string(&(&a, &a.reports)).unwrap();
        let jb = serde_json::to_string(&(&b, &b.reports)).unwrap();
        ensure(ja == jb, format!("{id} differs between identical runs"))?;
    }

    // advisor totality, checked against the published decision rules
    let mut combos = 0;
    for pattern in [IoPattern::None, IoPattern::Local, IoPattern::Global, IoPattern::Mixed] {
        for modifiable in [Modifiable::Yes, Modifiable::Undesirable, Modifiable::No] {
            for perf in [false, true] {
                for mem in [false, true] {
                    for io in [false, true] {
                        combos += 1;
                        let mut p = common::profile("p", 1, 1.0);
                        p.io_pattern = pattern;
                        p.modifiable = modifiable;
                        p.io_perf_critical = perf;
                        p.memory_intensive = mem;
                        p.io_intensive = io;
                        let platform = match (mem, io) {
                            (true, false) => "MemoryMode",
                            (false, true) => "AppDirect",
                            (true, true) => "Mixed",
                            (false, false) => "NoBapmNeeded",
                        };
                        let needs_strategy = io;
                        let strategy = match pattern {
                            IoPattern::None => None,
                            IoPattern::Local => Some("Fsdax"),
                            _ if modifiable != Modifiable::Yes => Some("DistributedEphemeralFs"),
                            _ if perf => Some("DirectAccess"),
                            _ => Some("DistributedEphemeralFs"),
                        };
                        match (recommend(&p), needs_strategy, strategy) {
                            (Err(_), true, None) => {}
                            (Ok(r), false, _) => ensure(
                                r.to_string() == platform && !r.rationale.is_empty(),
                                format!("{p:?} -> {r}"),
                            )?,
                            (Ok(r), true, Some(s)) => ensure(
                                r.to_string() == format!("{platform} + {s}"),
                                format!("{pattern:?}/{modifiable:?}/{perf}/{mem}/{io} -> {r}"),
                            )?,
                            (r, _, _) => return Err(format!("{pattern:?}/{modifiable:?}/{perf}/{mem}/{io} -> {r:?}")),
                        }
                    }
                }
            }
        }
    }
    ensure(combos == 96, "flag grid is not 96 combinations")?;

    // round-robin balance on every small instance
    let p = EphemeralFsParams {
        chunk_size: Bytes(4),
        ..EphemeralFsParams::default()
    };
    for nodes in 1..=8u32 {
        for size in 0..=200u64 {
            let layout = ephemeralfs_layout(Bytes(size), nodes, &p);
            ensure(layout.len() as u64 == size.div_ceil(4), "chunk count")?;
            let mut load = vec![0u64; nodes as usize];
            for (i, n) in layout.iter().enumerate() {
                ensure(*n as usize == i % nodes as usize, "placement is not round-robin")?;
                load[*n as usize] += 1;
            }
            let (mx, mn) = (load.iter().max().unwrap(), load.iter().min().unwrap());
            ensure(mx - mn <= 1, format!("{size} bytes over {nodes} nodes: loads {load:?}"))?;
        }
    }

    // calibration round trip: fit synthetic observations from known constants
    let mut truth = CalibrationParams::defaults(&base);
    truth.fsdax.bw_per_device = 3.7 * GIB as f64;
    truth.fsdax.meta_cost_per_file = 0.012;
    truth.set("profiles.simplefoam.compute_seconds_per_step", 6.9).unwrap();
    truth.ephemeral.per_node_bw = 4.2 * GIB as f64;
    truth.ephemeral.network_cap = 9.0 * GIB as f64;
    let exprs: Vec<&str> = [
        "table1:fsdax:single:100",
        "table1:fsdax:single:10",
        "table1:fsdax:single:1",
        "table1:fsdax:ensemble:1",
        "fsdax:node_ceiling",
        "ior:easy_write",
        "ior:easy_read",
        "ior:hard_write",
        "ior:hard_read",
    ]
    .to_vec();
    let mut targets: Vec<FitTarget> = exprs
        .iter()
        .map(|e| FitTarget {
            id: e.to_string(),
            observed: 0.0,
            units: String::new(),
            expression: e.to_string(),
            tolerance: 0.01,
            source: String::new(),
        })
        .collect();
    let eval = |c: &CalibrationParams, t: &[FitTarget]| evaluate(&base, SEED, c, t);
    let obs = eval(&truth, &targets).map_err(|e| e.to_string())?;
    for (t, o) in targets.iter_mut().zip(obs) {
        t.observed = o;
    }
    let free = [
        ("profiles.simplefoam.compute_seconds_per_step", 1.0, 20.0),
        ("fsdax.bw_per_device", 0.5 * GIB as f64, 50.0 * GIB as f64),
        ("fsdax.meta_cost_per_file", 1e-5, 1.0),
        ("ephemeral.per_node_bw", 0.5 * GIB as f64, 50.0 * GIB as f64),
        ("ephemeral.network_cap", 0.5 * GIB as f64, 50.0 * GIB as f64),
    ]
    .map(|(n, lo, hi)| FreeParam {
        name: n.into(),
        lo,
        hi,
    });
    let start = CalibrationParams::defaults(&base);
    let (fitted, _) = fit(&start, &targets, &free, "round-trip", &eval).map_err(|e| e.to_string())?;
    let mut recovered = BTreeMap::new();
    for f in &free {
        let (want, got) = (truth.get(&f.name).unwrap(), fitted.get(&f.name).unwrap());
        ensure(within(got, want, 0.01), format!("{}: recovered {got}, true {want}", f.name))?;
        recovered.insert(f.name.clone(), got / want - 1.0);
    }
    let worst = recovered.values().map(|e| e.abs()).fold(0.0, f64::max);

    Ok(format!(
        "{small} small workflows ordered, 1000 ledgers balanced, 3 scenarios deterministic, 96 advisor combinations, layouts balanced, round trip within {:.3}%",
        worst * 100.0
    ))
}

fn power_loss() -> Outcome {
    let calib = bundled_calibration();
    let out = run_scenario("powerloss-demo", &common::cluster(), &calib, SEED).map_err(|e| e.to_string())?;
    let (_, r) = out.reports.iter().find(|(n, _)| n == "powerloss").ok_or("no report")?;
    let pl = r.power_losses.first().ok_or("no power loss happened")?;
    let ledger = r.dataset("prep-data").ok_or("prep-data missing")?;
    ensure(ledger.lost == 0, "AppDirect dataset lost bytes")?;
    ensure(
        pl.datasets_survived.iter().any(|d| d == "prep-data"),
        "prep-data not reported as surviving",
    )?;
    let mut seen = BTreeMap::new();
    for a in &pl.aborted {
        let job = r.job(&a.job).ok_or("aborted job missing")?;
        let last = job
            .checkpoints
            .iter()
            .filter(|c| !c.lost && c.time <= pl.time)
            .map(|c| c.step)
            .max()
            .unwrap_or(0);
        ensure(a.resume_step == last, format!("{} resumes at {} not {last}", a.job, a.resume_step))?;
        ensure(
            a.recomputed_steps == a.completed_steps - last,
            format!("{} recomputes {} steps", a.job, a.recomputed_steps),
        )?;
        ensure(job.steps == 100 || job.id != "ckpt", "checkpointed job did not finish")?;
        seen.insert(a.job.clone(), (a.completed_steps, last));
    }
    let (done, kept) = *seen.get("ckpt").ok_or("AppDirect checkpointing job was not hit")?;
    ensure(kept > 0, "AppDirect checkpoints were lost")?;
    let (vdone, vkept) = *seen.get("volatile").ok_or("Memory-mode job was not hit")?;
    ensure(vkept == 0 && vdone > 0, "Memory-mode checkpoints survived")?;
    let volatile = r.job("volatile").unwrap();
    ensure(volatile.checkpoints.iter().any(|c| c.lost), "no Memory-space checkpoint marked lost")?;
    for k in ["powerloss:appdirect_survived", "powerloss:memory_state_lost", "powerloss:recompute_exact"] {
        ensure(out.metrics[k] == 1.0, format!("{k} is not set"))?;
    }
    Ok(format!(
        "prep-data survived; ckpt recomputed {} steps after checkpoint {kept}; Memory-mode job restarted from 0 after {vdone} steps",
        done - kept
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 advisor oracle", advisor_oracle),
        ("2 OpenFOAM output-interval grid", table1),
        ("3 Memory-mode bandwidth shape", stream_shape),
        ("4 MONC ensemble", monc),
        ("5 snappyHexMesh", snappy),
        ("6 IOR phases and object store", ior_and_objectstore),
        ("7 property suite", property_suite),
        ("8 power-loss semantics", power_loss),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
