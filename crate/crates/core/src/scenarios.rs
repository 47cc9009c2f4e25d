//! Bundled experiments, the metrics they report and the checks that judge them.
//!
//! Metric names are shared with calibration targets, so a fitted constant
//! is scored by exactly the simulation the scenario runs.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::assets;
use crate::calibrate::{CalibrationParams, FitTarget, TargetsFile};
use crate::domain::{ApplicationProfile, ClusterSpec, NodeConfiguration, PlatformMode, StorageTarget, WorkflowSpec};
use crate::error::{Error, Result};
use crate::iomodel::{ephemeralfs_layout, ephemeralfs_throughput, objectstore_write_throughput, IorAccess};
use crate::memmodel::{effective_bandwidth, MemorySystem, Op};
use crate::sim::{
    schedule_workflow, summarize_results, JobRun, ModelParams, PowerLoss, SimReport, Simulation, Spread,
    StagingPolicy, Stats, WorkflowOutcome, WorkflowPolicy,
};
use crate::units::{Bytes, GIB};

pub const SCENARIO_IDS: [&str; 7] = [
    "table1",
    "stream",
    "monc",
    "snappy",
    "io500",
    "workflow-demo",
    "powerloss-demo",
];

/// Seeds used to compare ensemble spreads beyond the run seed.
pub const SPREAD_SEEDS: u64 = 10;

pub fn bundled_profile(name: &str) -> Result<ApplicationProfile> {
    let text = assets::PROFILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Unknown {
            kind: "profile",
            name: name.to_string(),
        })?;
    Ok(serde_json::from_str(text)?)
}

pub fn bundled_targets() -> TargetsFile {
    TargetsFile::from_json(assets::TARGETS_JSON).expect("bundled targets parse")
}

pub fn bundled_calibration() -> CalibrationParams {
    CalibrationParams::from_json(assets::CALIBRATION_JSON).expect("bundled calibration parses")
}

/// How an expectation compares the measured value with `expected`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// `|actual / expected - 1| <= tolerance`
    #[default]
    Relative,
    /// `actual < expected`
    LessThan,
    /// `actual <= expected`
    AtMost,
    /// `actual >= expected`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub id: String,
    pub metric: String,
    pub expected: f64,
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub check: Check,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub inputs: Value,
    pub expectations: Vec<Expectation>,
}

pub fn scenario_doc(id: &str) -> Result<ScenarioDoc> {
    let text = assets::SCENARIOS
        .iter()
        .find(|(n, _)| *n == id)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::UnknownScenario {
            id: id.to_string(),
            valid: SCENARIO_IDS.iter().map(|s| s.to_string()).collect(),
        })?;
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: String,
    pub metric: String,
    pub expected: f64,
    pub actual: Option<f64>,
    pub check: Check,
    pub tolerance: f64,
    pub pass: bool,
    pub source: String,
}

pub fn check_expectations(doc: &ScenarioDoc, metrics: &BTreeMap<String, f64>) -> Vec<CheckResult> {
    doc.expectations
        .iter()
        .map(|e| {
            let actual = metrics.get(&e.metric).copied();
            let pass = actual.is_some_and(|a| match e.check {
                Check::Relative => e.expected != 0.0 && ((a / e.expected) - 1.0).abs() <= e.tolerance,
                Check::LessThan => a < e.expected,
                Check::AtMost => a <= e.expected,
                Check::AtLeast => a >= e.expected,
            });
            CheckResult {
                id: e.id.clone(),
                metric: e.metric.clone(),
                expected: e.expected,
                actual,
                check: e.check,
                tolerance: e.tolerance,
                pass,
                source: e.source.clone(),
            }
        })
        .collect()
}

/// A small table rendered as aligned text or CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_text(&self) -> String {
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate() {
                if i < width.len() {
                    width[i] = width[i].max(c.len());
                }
            }
        }
        let line = |cells: &[String]| -> String {
            let v: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:<w$}", c, w = width.get(i).copied().unwrap_or(0)))
                .collect();
            v.join("  ").trim_end().to_string()
        };
        let mut s = line(&self.headers);
        s.push('\n');
        s.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutput {
    pub id: String,
    pub description: String,
    pub seed: u64,
    /// Named tables; each is also written as `<name>.csv`.
    pub tables: Vec<(String, Table)>,
    pub notes: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckResult>,
    #[serde(skip)]
    pub reports: Vec<(String, SimReport)>,
}

impl ScenarioOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn gibs(bw: f64) -> f64 {
    bw / GIB as f64
}

/// Evaluates named metrics against one calibration and seed, memoising
/// shared simulation runs.
pub struct Metrics<'a> {
    calib: &'a CalibrationParams,
    cluster: ClusterSpec,
    model: ModelParams,
    seed: u64,
    cache: RefCell<BTreeMap<String, f64>>,
}

impl<'a> Metrics<'a> {
    pub fn new(base: &ClusterSpec, calib: &'a CalibrationParams, seed: u64) -> Self {
        Metrics {
            calib,
            cluster: calib.cluster(base),
            model: calib.model(),
            seed,
            cache: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn cluster(&self) -> &ClusterSpec {
        &self.cluster
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn profile(&self, name: &str) -> Result<ApplicationProfile> {
        Ok(self.calib.profile(&bundled_profile(name)?))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        if let Some(v) = self.cache.borrow().get(name) {
            return Ok(*v);
        }
        let computed = self.compute(name)?;
        let mut cache = self.cache.borrow_mut();
        cache.extend(computed);
        cache.get(name).copied().ok_or_else(|| Error::Unknown {
            kind: "metric",
            name: name.to_string(),
        })
    }

    fn compute(&self, name: &str) -> Result<BTreeMap<String, f64>> {
        let parts: Vec<&str> = name.split(':').collect();
        let mut out = BTreeMap::new();
        match parts.as_slice() {
            ["table1", target, size, interval] => {
                let t = parse_target(target)?;
                let jobs = match *size {
                    "single" => 1,
                    "ensemble" => 5,
                    _ => return Err(unknown_metric(name)),
                };
                let iv: u32 = interval.parse().map_err(|_| unknown_metric(name))?;
                out.insert(name.to_string(), self.table1_cell(t, iv, jobs)?.0);
            }
            ["fsdax", "node_ceiling"] => {
                let devices = NodeConfiguration::app_direct(&self.cluster).fsdax_devices(&self.cluster);
                out.insert(name.to_string(), gibs(devices as f64 * self.model.fsdax.bw_per_device));
            }
            ["monc", "spread_order"] => {
                let mut ok = 0;
                for s in self.seed..self.seed + SPREAD_SEEDS {
                    let l = Spread::of(&self.monc(StorageTarget::ParallelFs, s)?.0);
                    let f = Spread::of(&self.monc(StorageTarget::Fsdax, s)?.0);
                    if f.half_range_over_mean < l.half_range_over_mean {
                        ok += 1;
                    }
                }
                out.insert(name.to_string(), ok as f64 / SPREAD_SEEDS as f64);
            }
            ["monc", target, _] => {
                let t = parse_target(target)?;
                let (walls, _) = self.monc(t, self.seed)?;
                let st = Stats::of(&walls).expect("ten jobs");
                let sp = Spread::of(&walls);
                let p = format!("monc:{target}");
                out.insert(format!("{p}:mean"), st.mean);
                out.insert(format!("{p}:min"), st.min);
                out.insert(format!("{p}:max"), st.max);
                out.insert(format!("{p}:spread_half"), sp.half_range_over_mean);
                out.insert(format!("{p}:spread_range"), sp.range_over_mean);
                out.insert(format!("{p}:spread_max"), sp.max_over_mean);
            }
            ["snappy", ..] => out = self.snappy()?.0,
            ["ior", access] => {
                let a = parse_access(access).ok_or_else(|| unknown_metric(name))?;
                let v = ephemeralfs_throughput(10, 10, a, &self.model.ephemeral);
                out.insert(name.to_string(), gibs(v));
            }
            ["objectstore", servers] => {
                let s: u32 = servers.parse().map_err(|_| unknown_metric(name))?;
                out.insert(
                    name.to_string(),
                    gibs(objectstore_write_throughput(s, &self.model.objectstore)),
                );
            }
            ["stream", ..] => out = self.stream()?.0,
            _ => return Err(unknown_metric(name)),
        }
        Ok(out)
    }

    /// Mean seconds per step over the jobs of one Table-1 style run.
    pub fn table1_cell(&self, target: StorageTarget, interval: u32, jobs: u32) -> Result<(f64, SimReport)> {
        let mut p = self.profile("simplefoam")?;
        p.write_interval = interval;
        let nodes_per_job = 4;
        let mut sim = Simulation::uniform(self.cluster.clone(), NodeConfiguration::app_direct(&self.cluster), self.seed);
        sim.record_trace = false;
        for j in 0..jobs {
            let nodes = (j * nodes_per_job..(j + 1) * nodes_per_job).collect();
            sim = sim.with_job(JobRun::new(format!("foam{j}"), p.clone(), nodes).storage(target));
        }
        let r = sim.run(&self.model)?;
        let mean = r.jobs.iter().map(|j| j.mean_step()).sum::<f64>() / r.jobs.len() as f64;
        Ok((mean, r))
    }

    /// Wall-clock times of the ten-member ensemble.
    pub fn monc(&self, target: StorageTarget, seed: u64) -> Result<(Vec<f64>, SimReport)> {
        let p = self.profile("monc")?;
        let mut sim = Simulation::uniform(self.cluster.clone(), NodeConfiguration::app_direct(&self.cluster), seed);
        sim.record_trace = false;
        for j in 0..10u32 {
            sim = sim.with_job(JobRun::new(format!("monc{j}"), p.clone(), vec![j]).storage(target));
        }
        let r = sim.run(&self.model)?;
        Ok((r.jobs.iter().map(|j| j.wallclock).collect(), r))
    }

    fn snappy(&self) -> Result<(BTreeMap<String, f64>, Table)> {
        let p = self.profile("snappyhexmesh")?;
        let ad = NodeConfiguration::app_direct(&self.cluster);
        let mm = NodeConfiguration::memory(&self.cluster);
        let run = |config: &NodeConfiguration, nodes: u32| -> Result<SimReport> {
            Simulation::uniform(self.cluster.clone(), config.clone(), self.seed)
                .with_job(JobRun::new("snappy", p.clone(), (0..nodes).collect()))
                .run(&self.model)
        };
        let mut m = BTreeMap::new();
        let mut t = Table::new(&["setup", "nodes", "wallclock_s", "node_seconds", "core_seconds"]);
        let oom = matches!(run(&ad, 1), Err(Error::OutOfMemory { .. }));
        m.insert("snappy:appdirect1:oom".into(), if oom { 1.0 } else { 0.0 });
        t.push(vec![
            "1 node, DRAM only".into(),
            "1".into(),
            if oom { "out of memory".into() } else { "ran".into() },
            "-".into(),
            "-".into(),
        ]);
        for (key, label, config, nodes) in [
            ("dram2", "2 nodes, DRAM only", &ad, 2),
            ("memory1", "1 node, Memory mode", &mm, 1),
        ] {
            let r = run(config, nodes)?;
            let j = &r.jobs[0];
            m.insert(format!("snappy:{key}:wallclock"), j.wallclock);
            m.insert(format!("snappy:{key}:node_seconds"), j.node_seconds);
            m.insert(format!("snappy:{key}:core_seconds"), j.core_seconds);
            t.push(vec![
                label.into(),
                nodes.to_string(),
                f2(j.wallclock),
                f2(j.node_seconds),
                f2(j.core_seconds),
            ]);
        }
        let ratio = m["snappy:memory1:node_seconds"] / m["snappy:dram2:node_seconds"];
        m.insert("snappy:node_seconds_ratio".into(), ratio);
        Ok((m, t))
    }

    /// Memory-mode streaming bandwidth against working-set size.
    fn stream(&self) -> Result<(BTreeMap<String, f64>, Table)> {
        let base = self.profile("stream")?;
        let mm = NodeConfiguration::memory(&self.cluster);
        let ad = NodeConfiguration::app_direct(&self.cluster);
        let mut sizes: Vec<u64> = (1..=11).map(|k| 1u64 << k).collect();
        sizes.extend([192, 384, 768, 1536, 3072]);
        sizes.sort_unstable();
        sizes.dedup();
        let procs = base.processes as f64;
        let bandwidth = |config: &NodeConfiguration, gib: u64| -> Result<f64> {
            let mut p = base.clone();
            let per_proc = Bytes::from_f64((gib * GIB) as f64 / procs);
            p.mem_footprint_per_process = per_proc;
            p.mem_traffic_per_step = per_proc;
            p.compute_seconds_per_step = 0.0;
            let r = Simulation::uniform(self.cluster.clone(), config.clone(), self.seed)
                .lean()
                .with_job(JobRun::new("stream", p.clone(), vec![0]))
                .run(&self.model)?;
            let moved = per_proc.as_f64() * procs * p.steps as f64;
            Ok(moved / r.jobs[0].wallclock)
        };
        let mut t = Table::new(&["working_set_gib", "memory_mode_gibs", "dram_gibs", "appdirect_read_gibs"]);
        let mut series = Vec::new();
        let dram_gib = self.cluster.dram_per_node.as_gib();
        for &s in &sizes {
            let m = bandwidth(&mm, s)?;
            let d = if (s as f64) <= dram_gib {
                f3(gibs(bandwidth(&ad, s)?))
            } else {
                String::new()
            };
            let a = effective_bandwidth(
                MemorySystem::AppDirect,
                Op::Read,
                Bytes::gib(s),
                base.reuse,
                &self.cluster,
                &self.model.memory,
            );
            t.push(vec![s.to_string(), f3(gibs(m)), d, f3(gibs(a))]);
            series.push((s, m));
        }
        let mem = &self.model.memory;
        let cached = mem.bw_dram_read * mem.mm_cached_bw_factor * self.cluster.sockets_per_node as f64;
        let monotone = series.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12));
        let cached_dev = series
            .iter()
            .filter(|(s, _)| (*s as f64) <= dram_gib)
            .map(|(_, b)| (b / cached - 1.0).abs())
            .fold(0.0, f64::max);
        let mut plateau: f64 = 0.0;
        for &(s, b) in &series {
            if s < 768 {
                continue;
            }
            if let Some(&(_, b2)) = series.iter().find(|(s2, _)| *s2 == 2 * s) {
                plateau = plateau.max((b2 / b - 1.0).abs());
            }
        }
        let mut m = BTreeMap::new();
        m.insert("stream:monotone".into(), if monotone { 1.0 } else { 0.0 });
        m.insert("stream:cached_deviation".into(), cached_dev);
        m.insert("stream:plateau_change".into(), plateau);
        m.insert("stream:cached_gibs".into(), gibs(cached));
        m.insert("stream:largest_gibs".into(), gibs(series.last().map_or(0.0, |x| x.1)));
        Ok((m, t))
    }
}

fn unknown_metric(name: &str) -> Error {
    Error::Unknown {
        kind: "metric",
        name: name.to_string(),
    }
}

fn parse_target(s: &str) -> Result<StorageTarget> {
    match s {
        "lustre" | "parallel_fs" => Ok(StorageTarget::ParallelFs),
        "fsdax" => Ok(StorageTarget::Fsdax),
        _ => Err(Error::Unknown {
            kind: "storage target",
            name: s.to_string(),
        }),
    }
}

fn parse_access(s: &str) -> Option<IorAccess> {
    Some(match s {
        "easy_write" => IorAccess::EasyWrite,
        "easy_read" => IorAccess::EasyRead,
        "hard_write" => IorAccess::HardWrite,
        "hard_read" => IorAccess::HardRead,
        _ => return None,
    })
}

/// Model predictions for calibration targets.
pub fn evaluate(base: &ClusterSpec, seed: u64, calib: &CalibrationParams, targets: &[FitTarget]) -> Result<Vec<f64>> {
    let m = Metrics::new(base, calib, seed);
    targets.iter().map(|t| m.get(&t.expression)).collect()
}

/// Replaces `"profile": "<name>"` and `"profile": {"base": "<name>", ...}`
/// with the bundled profile, applying any overriding fields.
pub fn resolve_profiles(v: &mut Value, calib: &CalibrationParams) -> Result<()> {
    match v {
        Value::Object(map) => {
            if let Some(p) = map.get_mut("profile") {
                let resolved = match p {
                    Value::String(name) => Some(profile_value(name, None, calib)?),
                    Value::Object(o) => match o.get("base").and_then(Value::as_str) {
                        Some(name) => Some(profile_value(name, Some(o.clone()), calib)?),
                        None => None,
                    },
                    _ => None,
                };
                if let Some(r) = resolved {
                    *p = r;
                }
            }
            for (_, x) in map.iter_mut() {
                resolve_profiles(x, calib)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                resolve_profiles(x, calib)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn profile_value(
    name: &str,
    overrides: Option<serde_json::Map<String, Value>>,
    calib: &CalibrationParams,
) -> Result<Value> {
    let p = calib.profile(&bundled_profile(name)?);
    let mut v = serde_json::to_value(p)?;
    if let (Some(o), Value::Object(m)) = (overrides, &mut v) {
        for (k, x) in o {
            if k != "base" {
                m.insert(k, x);
            }
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkflowInputs {
    workflow: WorkflowSpec,
    #[serde(default)]
    policy: WorkflowPolicy,
}

fn workflow_inputs(doc: &ScenarioDoc, calib: &CalibrationParams) -> Result<WorkflowInputs> {
    let mut v = doc.inputs.clone();
    resolve_profiles(&mut v, calib)?;
    Ok(serde_json::from_value(v)?)
}

fn schedule_table(o: &WorkflowOutcome) -> Table {
    let mut t = Table::new(&["job", "nodes", "start_s", "end_s", "rebooted", "local_inputs", "staged_inputs"]);
    for s in &o.schedule {
        let list = |v: &[u32]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
        t.push(vec![
            s.id.clone(),
            list(&s.nodes),
            f2(s.start),
            f2(s.end),
            list(&s.rebooted),
            s.local_inputs.join(" "),
            s.staged_inputs.join(" "),
        ]);
    }
    t
}

fn timeline_table(r: &SimReport) -> Table {
    let mut t = Table::new(&["kind", "subject", "nodes", "start_s", "end_s", "bytes"]);
    let list = |v: &[u32]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
    for j in &r.jobs {
        t.push(vec!["job".into(), j.id.clone(), list(&j.nodes), f2(j.start), f2(j.end), j.bytes_written.to_string()]);
    }
    for x in &r.transfers {
        let kind = match x.kind {
            crate::sim::TransferKind::Write => "write",
            crate::sim::TransferKind::StageOut => "stage_out",
            crate::sim::TransferKind::StageIn => "stage_in",
        };
        t.push(vec![kind.into(), x.dataset.clone(), list(&x.nodes), f2(x.start), f2(x.end), x.bytes.to_string()]);
    }
    for b in &r.reboots {
        t.push(vec!["reboot".into(), b.reason.clone(), list(&b.nodes), f2(b.start), f2(b.end), "0".into()]);
    }
    t.rows.sort_by(|a, b| {
        let x: f64 = a[3].parse().unwrap_or(0.0);
        let y: f64 = b[3].parse().unwrap_or(0.0);
        x.total_cmp(&y)
    });
    t
}

fn ledger_balanced(r: &SimReport) -> bool {
    r.datasets.iter().all(|d| d.local_balance() == 0 && d.staged_out <= d.produced())
}

fn staged_bytes(r: &SimReport) -> f64 {
    r.transfers
        .iter()
        .filter(|t| t.kind != crate::sim::TransferKind::Write)
        .map(|t| t.bytes as f64)
        .sum()
}

fn staging_seconds(r: &SimReport) -> f64 {
    r.transfers
        .iter()
        .filter(|t| t.kind != crate::sim::TransferKind::Write)
        .map(|t| t.end - t.start)
        .sum()
}

/// Runs one bundled scenario and checks it against its expectations.
pub fn run_scenario(id: &str, base: &ClusterSpec, calib: &CalibrationParams, seed: u64) -> Result<ScenarioOutput> {
    let doc = scenario_doc(id)?;
    let m = Metrics::new(base, calib, seed);
    let mut out = ScenarioOutput {
        id: doc.id.clone(),
        description: doc.description.clone(),
        seed,
        tables: Vec::new(),
        notes: Vec::new(),
        metrics: BTreeMap::new(),
        checks: Vec::new(),
        reports: Vec::new(),
    };
    match id {
        "table1" => table1(&m, &mut out)?,
        "stream" => {
            let (metrics, t) = m.stream()?;
            out.metrics = metrics;
            out.tables.push(("stream".into(), t));
            out.notes.push(format!(
                "DRAM-cached level {:.3} GiB/s; largest working set {:.3} GiB/s",
                out.metrics["stream:cached_gibs"], out.metrics["stream:largest_gibs"]
            ));
        }
        "monc" => monc(&m, &mut out)?,
        "snappy" => {
            let (metrics, t) = m.snappy()?;
            out.metrics = metrics;
            out.tables.push(("snappy".into(), t));
            let r = out.metrics["snappy:node_seconds_ratio"];
            out.notes.push(format!(
                "Memory mode uses {:.1}% fewer node-seconds and {:.1}% fewer core-seconds than the 2-node run",
                (1.0 - r) * 100.0,
                (1.0 - out.metrics["snappy:memory1:core_seconds"] / out.metrics["snappy:dram2:core_seconds"]) * 100.0
            ));
        }
        "io500" => io500(&m, &mut out)?,
        "workflow-demo" => workflow_demo(&doc, &m, calib, &mut out)?,
        "powerloss-demo" => powerloss_demo(&doc, &m, calib, &mut out)?,
        _ => unreachable!("scenario_doc accepted `{id}`"),
    }
    out.checks = check_expectations(&doc, &out.metrics);
    Ok(out)
}

fn table1(m: &Metrics, out: &mut ScenarioOutput) -> Result<()> {
    let mut t = Table::new(&[
        "write_interval",
        "single_lustre_s",
        "single_fsdax_s",
        "single_volume_gb",
        "ensemble_lustre_s",
        "ensemble_fsdax_s",
        "ensemble_volume_gb",
    ]);
    for iv in [100u32, 10, 1] {
        let mut row = vec![iv.to_string()];
        for (size, jobs) in [("single", 1u32), ("ensemble", 5)] {
            for (name, target) in [("lustre", StorageTarget::ParallelFs), ("fsdax", StorageTarget::Fsdax)] {
                let (v, r) = m.table1_cell(target, iv, jobs)?;
                out.metrics.insert(format!("table1:{name}:{size}:{iv}"), v);
                row.push(f2(v));
                if name == "fsdax" {
                    let gb = r.jobs.iter().map(|j| j.bytes_written).sum::<u64>() as f64 / GIB as f64;
                    row.push(format!("{gb:.1}"));
                }
            }
        }
        t.push(row);
    }
    out.tables.push(("table1".into(), t));
    let p = m.profile("simplefoam")?;
    let fs = &m.cluster().parallel_fs;
    let data = p.write_bytes(0).as_f64() / fs.aggregate_bw;
    let meta = p.files_per_write() as f64 / fs.metadata_ops_per_second;
    out.notes.push(format!(
        "single-job Lustre write: data {:.2} s, metadata {:.2} s; the {} term binds",
        data,
        meta,
        if meta >= data { "metadata" } else { "bandwidth" }
    ));
    Ok(())
}

fn monc(m: &Metrics, out: &mut ScenarioOutput) -> Result<()> {
    let mut t = Table::new(&[
        "target",
        "mean_s",
        "min_s",
        "max_s",
        "range_over_mean",
        "max_minus_mean_over_mean",
        "half_range_over_mean",
    ]);
    let mut per_job = Table::new(&["job", "lustre_s", "fsdax_s"]);
    let mut walls = Vec::new();
    for (name, target) in [("lustre", StorageTarget::ParallelFs), ("fsdax", StorageTarget::Fsdax)] {
        for k in ["mean", "min", "max", "spread_half", "spread_range", "spread_max"] {
            let key = format!("monc:{name}:{k}");
            out.metrics.insert(key.clone(), m.get(&key)?);
        }
        let g = |k: &str| out.metrics[&format!("monc:{name}:{k}")];
        t.push(vec![
            name.into(),
            f2(g("mean")),
            f2(g("min")),
            f2(g("max")),
            f3(g("spread_range")),
            f3(g("spread_max")),
            f3(g("spread_half")),
        ]);
        let (w, r) = m.monc(target, m.seed)?;
        walls.push(w);
        out.reports.push((format!("monc-{name}"), r));
    }
    for j in 0..walls[0].len() {
        per_job.push(vec![format!("monc{j}"), f2(walls[0][j]), f2(walls[1][j])]);
    }
    out.metrics.insert("monc:spread_order".into(), m.get("monc:spread_order")?);
    out.tables.push(("monc".into(), t));
    out.tables.push(("monc_jobs".into(), per_job));
    out.notes.push(
        "spread is listed under three definitions; the calibration matches the half-range one".into(),
    );
    Ok(())
}

fn io500(m: &Metrics, out: &mut ScenarioOutput) -> Result<()> {
    let mut t = Table::new(&["phase", "gibs"]);
    for (name, _) in [
        ("easy_write", IorAccess::EasyWrite),
        ("easy_read", IorAccess::EasyRead),
        ("hard_write", IorAccess::HardWrite),
        ("hard_read", IorAccess::HardRead),
    ] {
        let key = format!("ior:{name}");
        let v = m.get(&key)?;
        out.metrics.insert(key, v);
        t.push(vec![name.into(), f3(v)]);
    }
    out.tables.push(("ior".into(), t));
    let mut s = Table::new(&["server_processes", "gibs"]);
    for k in 0..=6 {
        let n = 1u32 << k;
        let key = format!("objectstore:{n}");
        let v = m.get(&key)?;
        out.metrics.insert(key, v);
        s.push(vec![n.to_string(), f3(v)]);
    }
    out.tables.push(("objectstore".into(), s));
    // a 6 MiB file striped over the ten servers
    let layout = ephemeralfs_layout(Bytes::mib(6), 10, &m.model().ephemeral);
    let mut load = [0u32; 10];
    for n in &layout {
        load[*n as usize] += 1;
    }
    let spread = load.iter().max().unwrap() - load.iter().min().unwrap();
    out.metrics.insert("layout:imbalance".into(), spread as f64);
    out.notes.push(format!("{} chunks over 10 nodes, per-node load {:?}", layout.len(), load));
    Ok(())
}

fn workflow_demo(doc: &ScenarioDoc, m: &Metrics, calib: &CalibrationParams, out: &mut ScenarioOutput) -> Result<()> {
    let inputs = workflow_inputs(doc, calib)?;
    let local = schedule_workflow(m.cluster(), &inputs.workflow, &inputs.policy, m.model(), m.seed)?;
    let mut forced_policy = inputs.policy.clone();
    forced_policy.staging = StagingPolicy::ForceParallelFs;
    let forced = schedule_workflow(m.cluster(), &inputs.workflow, &forced_policy, m.model(), m.seed)?;
    let reconfigured: usize = local.schedule.iter().map(|s| s.rebooted.len()).sum();
    let reboot_nodes: usize = local.report.reboots.iter().map(|r| r.nodes.len()).sum();
    out.metrics.insert("workflow:reconfigured_nodes".into(), reconfigured as f64);
    out.metrics.insert("workflow:node_reboots".into(), reboot_nodes as f64);
    out.metrics.insert("workflow:makespan_local".into(), local.report.makespan);
    out.metrics.insert("workflow:makespan_forced".into(), forced.report.makespan);
    out.metrics.insert(
        "workflow:forced_over_local".into(),
        forced.report.makespan / local.report.makespan,
    );
    let (local_bytes, forced_bytes) = (staged_bytes(&local.report), staged_bytes(&forced.report));
    out.metrics.insert("workflow:staged_gib_local".into(), local_bytes / GIB as f64);
    out.metrics.insert("workflow:staged_gib_forced".into(), forced_bytes / GIB as f64);
    out.metrics.insert("workflow:traffic_local_over_forced".into(), local_bytes / forced_bytes);
    out.metrics.insert("workflow:staging_local_s".into(), staging_seconds(&local.report));
    out.metrics.insert("workflow:staging_forced_s".into(), staging_seconds(&forced.report));
    out.metrics.insert(
        "workflow:local_handoffs".into(),
        local.schedule.iter().map(|s| s.local_inputs.len()).sum::<usize>() as f64,
    );
    let balanced = ledger_balanced(&local.report) && ledger_balanced(&forced.report);
    out.metrics.insert("workflow:ledger_balanced".into(), if balanced { 1.0 } else { 0.0 });
    let kept = inputs
        .workflow
        .keep_flags
        .iter()
        .filter(|(_, k)| **k)
        .all(|(d, _)| local.report.dataset(d).is_some_and(|l| l.on_parallel_fs_at_end));
    out.metrics.insert("workflow:kept_on_parallel_fs".into(), if kept { 1.0 } else { 0.0 });
    out.tables.push(("schedule".into(), schedule_table(&local)));
    out.tables.push(("timeline".into(), timeline_table(&local.report)));
    out.tables.push(("timeline_forced".into(), timeline_table(&forced.report)));
    out.notes.push(format!(
        "makespan {:.1} s with node-local handoff, {:.1} s when all data goes through the parallel file system",
        local.report.makespan, forced.report.makespan
    ));
    out.reports.push(("workflow".into(), local.report));
    out.reports.push(("workflow-forced".into(), forced.report));
    Ok(())
}

fn powerloss_demo(doc: &ScenarioDoc, m: &Metrics, calib: &CalibrationParams, out: &mut ScenarioOutput) -> Result<()> {
    let inputs = workflow_inputs(doc, calib)?;
    let o = schedule_workflow(m.cluster(), &inputs.workflow, &inputs.policy, m.model(), m.seed)?;
    let r = &o.report;
    let mut t = Table::new(&[
        "job",
        "completed_steps",
        "resume_step",
        "recomputed_steps",
        "checkpoints_lost",
    ]);
    let mut exact = true;
    let mut volatile_lost = false;
    let mut survived = true;
    for pl in &r.power_losses {
        for a in &pl.aborted {
            let job = r.job(&a.job).expect("aborted job is reported");
            let last_kept = job
                .checkpoints
                .iter()
                .filter(|c| !c.lost && c.time <= pl.time && c.step <= a.completed_steps)
                .map(|c| c.step)
                .max()
                .unwrap_or(0);
            let lost = job.checkpoints.iter().filter(|c| c.lost).count();
            if a.recomputed_steps != a.completed_steps - last_kept || a.resume_step != last_kept {
                exact = false;
            }
            if lost > 0 && a.resume_step == 0 {
                volatile_lost = true;
            }
            t.push(vec![
                a.job.clone(),
                a.completed_steps.to_string(),
                a.resume_step.to_string(),
                a.recomputed_steps.to_string(),
                lost.to_string(),
            ]);
        }
        for d in &inputs.workflow.datasets {
            let on_hit = r
                .residency
                .iter()
                .any(|x| x.dataset == d.id && x.from <= pl.time && x.to.is_none_or(|e| e >= pl.time));
            if on_hit && r.dataset(&d.id).is_some_and(|l| l.lost > 0) {
                survived = false;
            }
        }
        if pl.datasets_survived.is_empty() {
            survived = false;
        }
    }
    if r.power_losses.is_empty() {
        exact = false;
        survived = false;
    }
    out.metrics.insert("powerloss:appdirect_survived".into(), if survived { 1.0 } else { 0.0 });
    out.metrics.insert("powerloss:memory_state_lost".into(), if volatile_lost { 1.0 } else { 0.0 });
    out.metrics.insert("powerloss:recompute_exact".into(), if exact { 1.0 } else { 0.0 });
    out.metrics.insert(
        "powerloss:ledger_balanced".into(),
        if ledger_balanced(r) { 1.0 } else { 0.0 },
    );
    out.tables.push(("aborted".into(), t));
    out.tables.push(("timeline".into(), timeline_table(r)));
    for pl in &r.power_losses {
        out.notes.push(format!(
            "power loss at {:.1} s on nodes {:?}; node-local datasets kept: {}",
            pl.time,
            pl.nodes,
            pl.datasets_survived.join(", ")
        ));
    }
    out.reports.push(("powerloss".into(), o.report));
    Ok(())
}

/// Platform mode and Memory-mode share of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSetup {
    pub mode: PlatformMode,
    /// Zero in Memory mode means all of the B-APM.
    #[serde(default)]
    pub memory_space: Bytes,
}

impl Default for NodeSetup {
    fn default() -> Self {
        NodeSetup {
            mode: PlatformMode::AppDirect,
            memory_space: Bytes::ZERO,
        }
    }
}

impl NodeSetup {
    pub fn config(&self, cluster: &ClusterSpec) -> Result<NodeConfiguration> {
        match (self.mode, self.memory_space) {
            (PlatformMode::Memory, Bytes::ZERO) => Ok(NodeConfiguration::memory(cluster)),
            (PlatformMode::AppDirect, Bytes::ZERO) => Ok(NodeConfiguration::app_direct(cluster)),
            (mode, space) => NodeConfiguration::mixed(cluster, mode, space),
        }
    }
}

/// A user-written simulation: either jobs on fixed nodes or a workflow DAG.
///
/// `profile` fields may name a bundled profile or extend one with
/// `{"base": "<name>", ...}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default)]
    pub cluster: Option<ClusterSpec>,
    #[serde(default)]
    pub nodes: NodeSetup,
    /// Per-node exceptions to `nodes`.
    #[serde(default)]
    pub node_overrides: BTreeMap<u32, NodeSetup>,
    #[serde(default)]
    pub jobs: Vec<JobRun>,
    #[serde(default)]
    pub power_losses: Vec<PowerLoss>,
    #[serde(default)]
    pub workflow: Option<WorkflowSpec>,
    #[serde(default)]
    pub policy: WorkflowPolicy,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SimSpec {
    pub fn from_json(text: &str, calib: &CalibrationParams) -> Result<Self> {
        let mut v: Value = serde_json::from_str(text)?;
        resolve_profiles(&mut v, calib)?;
        Ok(serde_json::from_value(v)?)
    }
}

/// Runs a user spec. The spec's own seed wins over `seed`.
pub fn run_spec(spec: &SimSpec, base: &ClusterSpec, calib: &CalibrationParams, seed: u64) -> Result<ScenarioOutput> {
    let seed = spec.seed.unwrap_or(seed);
    let base = spec.cluster.as_ref().unwrap_or(base);
    let cluster = calib.cluster(base);
    let model = calib.model();
    let mut out = ScenarioOutput {
        id: "spec".into(),
        description: String::new(),
        seed,
        tables: Vec::new(),
        notes: Vec::new(),
        metrics: BTreeMap::new(),
        checks: Vec::new(),
        reports: Vec::new(),
    };
    let report = match &spec.workflow {
        Some(wf) => {
            if !spec.jobs.is_empty() {
                return Err(Error::InvalidSpec(vec!["give either `jobs` or `workflow`, not both".into()]));
            }
            let mut policy = spec.policy.clone();
            policy.power_losses.extend(spec.power_losses.iter().cloned());
            let o = schedule_workflow(&cluster, wf, &policy, &model, seed)?;
            out.tables.push(("schedule".into(), schedule_table(&o)));
            o.report
        }
        None => {
            let default = spec.nodes.config(&cluster)?;
            let mut configs = vec![default; cluster.node_count as usize];
            for (n, s) in &spec.node_overrides {
                let slot = configs.get_mut(*n as usize).ok_or_else(|| {
                    Error::InvalidSpec(vec![format!("node {n} is outside the cluster")])
                })?;
                *slot = s.config(&cluster)?;
            }
            let mut sim = Simulation::new(cluster.clone(), configs, seed);
            sim.jobs = spec.jobs.clone();
            sim.power_losses = spec.power_losses.clone();
            sim.run(&model)?
        }
    };
    let summary = summarize_results(&report);
    let mut t = Table::new(&["job", "nodes", "wallclock_s", "mean_step_s", "node_seconds", "write_gibs"]);
    for j in &summary.jobs {
        t.push(vec![
            j.id.clone(),
            j.nodes.to_string(),
            f2(j.wallclock),
            f3(j.mean_step),
            f2(j.node_seconds),
            f3(gibs(j.write_bandwidth)),
        ]);
    }
    out.tables.insert(0, ("jobs".into(), t));
    out.tables.push(("timeline".into(), timeline_table(&report)));
    out.metrics.insert("makespan".into(), report.makespan);
    out.metrics.insert("node_seconds".into(), summary.node_seconds);
    if let Some(s) = summary.wallclock {
        out.metrics.insert("wallclock_mean".into(), s.mean);
        out.metrics.insert("spread_half".into(), summary.spread.half_range_over_mean);
    }
    out.notes.extend(report.warnings.iter().cloned());
    out.reports.push(("spec".into(), report));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_documents_parse() {
        for id in SCENARIO_IDS {
            let d = scenario_doc(id).unwrap();
            assert_eq!(d.id, id);
            assert!(!d.expectations.is_empty(), "{id} has no expectations");
        }
        for (name, _) in assets::PROFILES {
            assert_eq!(bundled_profile(name).unwrap().name, *name);
        }
        let t = bundled_targets();
        assert!(t.groups.iter().all(|g| g.targets.len() >= g.params.len()));
        bundled_calibration();
    }

    #[test]
    fn unknown_scenario_lists_valid_ids() {
        match scenario_doc("nope") {
            Err(Error::UnknownScenario { valid, .. }) => assert_eq!(valid.len(), 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_csv_has_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,\"x,y\"\n");
        assert!(t.to_text().starts_with("a  b"));
    }

    #[test]
    fn profile_references_resolve_with_overrides() {
        let calib = CalibrationParams::defaults(&ClusterSpec::nextgenio());
        let mut v = serde_json::json!({"jobs": [{"profile": {"base": "synthetic", "steps": 7}}, {"profile": "monc"}]});
        resolve_profiles(&mut v, &calib).unwrap();
        assert_eq!(v["jobs"][0]["profile"]["steps"], 7);
        assert_eq!(v["jobs"][0]["profile"]["name"], "synthetic");
        assert_eq!(v["jobs"][1]["profile"]["name"], "monc");
    }
}
