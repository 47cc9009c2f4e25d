//! Fitting free model constants to published measurements.
//!
//! Every constant lives in [`CalibrationParams`] under a dotted name such as
//! `parallel_fs.contention_beta` or `profiles.monc.compute_seconds_per_step`.
//! A group of free parameters is fitted by a deterministic compass search in
//! log space that minimises the sum of squared relative errors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{ApplicationProfile, ClusterSpec, ParallelFsSpec};
use crate::error::{Error, Result};
use crate::iomodel::{EphemeralFsParams, FsdaxParams, ObjectStoreParams};
use crate::memmodel::MemoryParams;
use crate::sim::ModelParams;
use crate::units::Bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// A published ratio; never changed by fitting.
    PaperRatio,
    Fitted,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamInfo {
    pub provenance: Provenance,
    pub source: String,
    /// Observations a fitted value was chosen to match.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
}

/// Fitted workload constants that override a bundled profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_seconds_per_step: Option<f64>,
    /// bytes per process
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_traffic_per_step: Option<f64>,
}

/// All model constants with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    pub memory: MemoryParams,
    pub fsdax: FsdaxParams,
    pub parallel_fs: ParallelFsSpec,
    pub ephemeral: EphemeralFsParams,
    pub objectstore: ObjectStoreParams,
    #[serde(default)]
    pub profiles: BTreeMap<String, ProfileFit>,
    #[serde(default)]
    pub provenance: BTreeMap<String, ParamInfo>,
}

const PAPER_RATIOS: [(&str, &str); 4] = [
    ("memory.mm_latency_factor", "10% latency overhead of Memory mode over DRAM"),
    ("memory.ad_read_ratio", "AppDirect sequential read at 50% of DRAM"),
    ("memory.ad_write_ratio", "AppDirect sequential write at 10% of DRAM"),
    (
        "ephemeral.read_media_factor",
        "device read/write asymmetry, 50% over 10% of DRAM",
    ),
];

impl CalibrationParams {
    /// Library defaults with the parallel file system taken from `cluster`.
    pub fn defaults(cluster: &ClusterSpec) -> Self {
        let mut c = CalibrationParams {
            memory: MemoryParams::default(),
            fsdax: FsdaxParams::default(),
            parallel_fs: cluster.parallel_fs.clone(),
            ephemeral: EphemeralFsParams::default(),
            objectstore: ObjectStoreParams::default(),
            profiles: BTreeMap::new(),
            provenance: BTreeMap::new(),
        };
        for name in c.param_names() {
            let info = match PAPER_RATIOS.iter().find(|(n, _)| *n == name) {
                Some((_, src)) => ParamInfo {
                    provenance: Provenance::PaperRatio,
                    source: (*src).to_string(),
                    targets: Vec::new(),
                },
                None => ParamInfo {
                    provenance: Provenance::User,
                    source: "default".into(),
                    targets: Vec::new(),
                },
            };
            c.provenance.insert(name, info);
        }
        c
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: CalibrationParams = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = self.memory.violations();
        let fs = &self.parallel_fs;
        if !(fs.aggregate_bw > 0.0) {
            v.push("parallel_fs.aggregate_bw must be positive".into());
        }
        if !(fs.metadata_ops_per_second > 0.0) {
            v.push("parallel_fs.metadata_ops_per_second must be positive".into());
        }
        if !(fs.contention_beta >= 0.0) || !(fs.jitter_sigma >= 0.0) {
            v.push("parallel_fs contention and jitter must be non-negative".into());
        }
        if !(self.fsdax.bw_per_device > 0.0) || !(self.fsdax.meta_cost_per_file >= 0.0) {
            v.push("fsdax bandwidth must be positive and file cost non-negative".into());
        }
        if !(self.fsdax.numa_cross_penalty >= 1.0) {
            v.push("fsdax.numa_cross_penalty must be at least 1".into());
        }
        let e = &self.ephemeral;
        if e.chunk_size == Bytes::ZERO || !(e.per_node_bw > 0.0) || !(e.network_cap > 0.0) {
            v.push("ephemeral chunk size and bandwidths must be positive".into());
        }
        if !(e.shared_file_serialization > 0.0 && e.shared_file_serialization <= 1.0) {
            v.push("ephemeral.shared_file_serialization must lie in (0, 1]".into());
        }
        let o = &self.objectstore;
        if !(o.per_server_bw > 0.0) || !(o.scaling_efficiency > 0.0 && o.scaling_efficiency <= 1.0) {
            v.push("objectstore bandwidth must be positive and efficiency in (0, 1]".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v))
        }
    }

    pub fn model(&self) -> ModelParams {
        ModelParams {
            memory: self.memory.clone(),
            fsdax: self.fsdax.clone(),
            ephemeral: self.ephemeral.clone(),
            objectstore: self.objectstore.clone(),
        }
    }

    /// `base` with the calibrated parallel file system swapped in.
    pub fn cluster(&self, base: &ClusterSpec) -> ClusterSpec {
        let mut c = base.clone();
        let capacity = c.parallel_fs.capacity;
        c.parallel_fs = self.parallel_fs.clone();
        c.parallel_fs.capacity = capacity;
        c
    }

    /// `base` with any fitted workload constants applied.
    pub fn profile(&self, base: &ApplicationProfile) -> ApplicationProfile {
        let mut p = base.clone();
        if let Some(f) = self.profiles.get(&base.name) {
            if let Some(c) = f.compute_seconds_per_step {
                p.compute_seconds_per_step = c;
            }
            if let Some(t) = f.mem_traffic_per_step {
                p.mem_traffic_per_step = Bytes::from_f64(t);
            }
        }
        p
    }

    /// Dotted names of every numeric model constant, excluding profiles.
    pub fn param_names(&self) -> Vec<String> {
        let v = self.tree();
        let mut names = Vec::new();
        for section in ["memory", "fsdax", "parallel_fs", "ephemeral", "objectstore"] {
            if let Some(Value::Object(m)) = v.get(section) {
                for (k, x) in m {
                    if x.is_number() && !(section == "parallel_fs" && k == "capacity") {
                        names.push(format!("{section}.{k}"));
                    }
                }
            }
        }
        names
    }

    fn tree(&self) -> Value {
        serde_json::to_value(self).expect("calibration serialises")
    }

    pub fn provenance_of(&self, name: &str) -> Provenance {
        match self.provenance.get(name) {
            Some(i) => i.provenance,
            None if PAPER_RATIOS.iter().any(|(n, _)| *n == name) => Provenance::PaperRatio,
            None => Provenance::User,
        }
    }

    /// Reads a constant by dotted name. Profile constants fall back to the
    /// bundled profile when no fit exists yet.
    pub fn get(&self, name: &str) -> Result<f64> {
        if let Some((profile, field)) = profile_param(name) {
            let fit = self.profiles.get(profile).cloned().unwrap_or_default();
            let fitted = match field {
                "compute_seconds_per_step" => fit.compute_seconds_per_step,
                "mem_traffic_per_step" => fit.mem_traffic_per_step,
                _ => return Err(unknown_param(name)),
            };
            if let Some(x) = fitted {
                return Ok(x);
            }
            let base = crate::scenarios::bundled_profile(profile)?;
            return Ok(match field {
                "compute_seconds_per_step" => base.compute_seconds_per_step,
                _ => base.mem_traffic_per_step.as_f64(),
            });
        }
        let v = self.tree();
        let (section, field) = name.split_once('.').ok_or_else(|| unknown_param(name))?;
        v.get(section)
            .and_then(|s| s.get(field))
            .and_then(Value::as_f64)
            .ok_or_else(|| unknown_param(name))
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if let Some((profile, field)) = profile_param(name) {
            let fit = self.profiles.entry(profile.to_string()).or_default();
            match field {
                "compute_seconds_per_step" => fit.compute_seconds_per_step = Some(value),
                "mem_traffic_per_step" => fit.mem_traffic_per_step = Some(value),
                _ => return Err(unknown_param(name)),
            }
            return Ok(());
        }
        let mut v = self.tree();
        let (section, field) = name.split_once('.').ok_or_else(|| unknown_param(name))?;
        let slot = v
            .get_mut(section)
            .and_then(|s| s.get_mut(field))
            .filter(|x| x.is_number())
            .ok_or_else(|| unknown_param(name))?;
        *slot = if slot.is_u64() {
            Value::from(value.round().max(0.0) as u64)
        } else {
            Value::from(value)
        };
        *self = serde_json::from_value(v)?;
        Ok(())
    }
}

fn profile_param(name: &str) -> Option<(&str, &str)> {
    let rest = name.strip_prefix("profiles.")?;
    rest.rsplit_once('.')
}

fn unknown_param(name: &str) -> Error {
    Error::Unknown {
        kind: "parameter",
        name: name.to_string(),
    }
}

/// One published observation and the model quantity that should match it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTarget {
    pub id: String,
    pub observed: f64,
    pub units: String,
    /// Metric name understood by the evaluator, e.g. `table1:lustre:single:1`.
    pub expression: String,
    /// Relative tolerance.
    pub tolerance: f64,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitGroup {
    pub name: String,
    pub params: Vec<FreeParam>,
    /// Ids of the targets this group is fitted against.
    pub targets: Vec<String>,
}

/// The bundled `targets.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsFile {
    pub targets: Vec<FitTarget>,
    pub groups: Vec<FitGroup>,
    /// Passes over all groups; coupled groups settle over repeated passes.
    #[serde(default = "one")]
    pub rounds: u32,
    /// Values pinned before fitting, e.g. a user-chosen efficiency.
    #[serde(default)]
    pub pinned: BTreeMap<String, f64>,
}

fn one() -> u32 {
    1
}

impl TargetsFile {
    pub fn from_json(s: &str) -> Result<Self> {
        let t: TargetsFile = serde_json::from_str(s)?;
        let mut errs = Vec::new();
        for x in &t.targets {
            if !(x.tolerance > 0.0) {
                errs.push(format!("target `{}` needs a positive tolerance", x.id));
            }
        }
        for g in &t.groups {
            for id in &g.targets {
                if !t.targets.iter().any(|x| &x.id == id) {
                    errs.push(format!("group `{}` names unknown target `{id}`", g.name));
                }
            }
            for p in &g.params {
                if !(p.lo > 0.0 && p.hi >= p.lo) {
                    errs.push(format!("bounds of `{}` must satisfy 0 < lo <= hi", p.name));
                }
            }
        }
        if errs.is_empty() {
            Ok(t)
        } else {
            Err(Error::InvalidSpec(errs))
        }
    }

    pub fn target(&self, id: &str) -> Option<&FitTarget> {
        self.targets.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: String,
    pub observed: f64,
    pub predicted: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub group: String,
    pub params: Vec<(String, f64)>,
    pub residuals: Vec<Residual>,
    pub max_error: f64,
    pub evaluations: usize,
}

/// Model predictions for `targets`, in order.
pub type Evaluator<'a> = dyn Fn(&CalibrationParams, &[FitTarget]) -> Result<Vec<f64>> + Sync + 'a;

fn rel_error(predicted: f64, observed: f64) -> f64 {
    if observed == 0.0 {
        predicted.abs()
    } else {
        ((predicted - observed) / observed).abs()
    }
}

/// Relative error of every target under `params`.
pub fn goodness_of_fit(params: &CalibrationParams, targets: &[FitTarget], eval: &Evaluator) -> Result<Vec<Residual>> {
    let predicted = eval(params, targets)?;
    Ok(targets
        .iter()
        .zip(predicted)
        .map(|(t, p)| {
            let e = rel_error(p, t.observed);
            Residual {
                id: t.id.clone(),
                observed: t.observed,
                predicted: p,
                rel_error: e,
                tolerance: t.tolerance,
                pass: e <= t.tolerance,
            }
        })
        .collect())
}

fn objective(params: &CalibrationParams, targets: &[FitTarget], eval: &Evaluator) -> f64 {
    match eval(params, targets) {
        Ok(p) => targets
            .iter()
            .zip(p)
            .map(|(t, p)| (rel_error(p, t.observed) / t.tolerance.max(1e-6)).powi(2))
            .sum::<f64>(),
        Err(_) => f64::INFINITY,
    }
}

/// Smallest log-space step before the search stops.
const MIN_STEP: f64 = 1e-10;
const MAX_EVALUATIONS: usize = 5_000;
/// A probe must lower the objective by this fraction to count as a move.
const MIN_GAIN: f64 = 1e-9;

/// Fits `free` so the model matches `targets`.
///
/// The search starts from the current values (clamped into bounds), probes
/// every coordinate up and down by a log-space step, moves to the best probe
/// if it lowers the objective and halves the step otherwise. The objective
/// sums squared relative errors, each scaled by its target's tolerance.
/// Probes with equal objectives are ranked by parameter vector, so the result
/// does not depend on evaluation order.
pub fn fit(
    base: &CalibrationParams,
    targets: &[FitTarget],
    free: &[FreeParam],
    group: &str,
    eval: &Evaluator,
) -> Result<(CalibrationParams, FitReport)> {
    for p in free {
        if base.provenance_of(&p.name) == Provenance::PaperRatio {
            return Err(Error::InvalidSpec(vec![format!(
                "`{}` is a published ratio and cannot be fitted",
                p.name
            )]));
        }
        if !(p.lo > 0.0 && p.hi >= p.lo) {
            return Err(Error::InvalidSpec(vec![format!("bad bounds for `{}`", p.name)]));
        }
    }
    if targets.len() < free.len() {
        return Err(Error::Unidentifiable {
            group: group.to_string(),
            targets: targets.len(),
            params: free.len(),
        });
    }

    let lo: Vec<f64> = free.iter().map(|p| p.lo.ln()).collect();
    let hi: Vec<f64> = free.iter().map(|p| p.hi.ln()).collect();
    let with = |x: &[f64]| -> Result<CalibrationParams> {
        let mut c = base.clone();
        for (p, v) in free.iter().zip(x) {
            c.set(&p.name, v.exp())?;
        }
        Ok(c)
    };
    let mut x = Vec::with_capacity(free.len());
    for (i, p) in free.iter().enumerate() {
        let v = base.get(&p.name)?;
        let v = if v > 0.0 { v.ln() } else { lo[i] };
        x.push(v.clamp(lo[i], hi[i]));
    }
    let mut best = objective(&with(&x)?, targets, eval);
    let mut evaluations = 1;
    let mut step = std::f64::consts::LN_2;
    while !free.is_empty() && step > MIN_STEP && evaluations < MAX_EVALUATIONS {
        let mut probes = Vec::new();
        for i in 0..free.len() {
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[i] = (y[i] + dir * step).clamp(lo[i], hi[i]);
                if y[i] != x[i] {
                    probes.push(y);
                }
            }
        }
        let scored: Vec<(f64, Vec<f64>)> = probes
            .into_par_iter()
            .map(|y| {
                let f = match with(&y) {
                    Ok(c) => objective(&c, targets, eval),
                    Err(_) => f64::INFINITY,
                };
                (f, y)
            })
            .collect();
        evaluations += scored.len();
        let winner = scored
            .into_iter()
            .filter(|(f, _)| f.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lex_cmp(&a.1, &b.1)));
        match winner {
            Some((f, y)) if f < best * (1.0 - MIN_GAIN) => {
                best = f;
                x = y;
            }
            _ => step /= 2.0,
        }
    }

    let mut fitted = with(&x)?;
    let residuals = goodness_of_fit(&fitted, targets, eval)?;
    let ids: Vec<String> = targets.iter().map(|t| t.id.clone()).collect();
    for p in free {
        fitted.provenance.insert(
            p.name.clone(),
            ParamInfo {
                provenance: Provenance::Fitted,
                source: format!("fitted in group `{group}`"),
                targets: ids.clone(),
            },
        );
    }
    for name in base.param_names() {
        if base.provenance_of(&name) == Provenance::PaperRatio {
            debug_assert_eq!(base.get(&name).ok(), fitted.get(&name).ok());
        }
    }
    let max_error = residuals.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    if !residuals.is_empty() && residuals.iter().all(|r| !r.pass) {
        return Err(Error::NoConvergence {
            group: group.to_string(),
            max_error,
        });
    }
    let report = FitReport {
        group: group.to_string(),
        params: free.iter().zip(&x).map(|(p, v)| (p.name.clone(), v.exp())).collect(),
        residuals,
        max_error,
        evaluations,
    };
    Ok((fitted, report))
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Runs every group of `file` for the configured number of rounds.
pub fn calibrate(
    start: &CalibrationParams,
    file: &TargetsFile,
    eval: &Evaluator,
) -> Result<(CalibrationParams, Vec<FitReport>)> {
    let mut params = start.clone();
    for (name, v) in &file.pinned {
        params.set(name, *v)?;
        params.provenance.insert(
            name.clone(),
            ParamInfo {
                provenance: Provenance::User,
                source: "pinned by the targets file".into(),
                targets: Vec::new(),
            },
        );
    }
    let mut reports = Vec::new();
    for round in 0..file.rounds.max(1) {
        let last = round + 1 == file.rounds.max(1);
        for g in &file.groups {
            let targets: Vec<FitTarget> = g
                .targets
                .iter()
                .map(|id| {
                    file.target(id).cloned().ok_or_else(|| Error::Unknown {
                        kind: "target",
                        name: id.clone(),
                    })
                })
                .collect::<Result<_>>()?;
            let (p, r) = fit(&params, &targets, &g.params, &g.name, eval)?;
            params = p;
            if last {
                reports.push(r);
            }
        }
    }
    Ok((params, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::GIB;

    fn base() -> CalibrationParams {
        CalibrationParams::defaults(&ClusterSpec::nextgenio())
    }

    fn target(id: &str, observed: f64) -> FitTarget {
        FitTarget {
            id: id.into(),
            observed,
            units: "".into(),
            expression: id.into(),
            tolerance: 0.01,
            source: String::new(),
        }
    }

    // a toy model: y1 = a * b, y2 = a / b
    fn toy(c: &CalibrationParams, t: &[FitTarget]) -> Result<Vec<f64>> {
        let a = c.fsdax.bw_per_device / GIB as f64;
        let b = c.fsdax.meta_cost_per_file;
        Ok(t.iter()
            .map(|t| if t.expression == "prod" { a * b } else { a / b })
            .collect())
    }

    fn free() -> Vec<FreeParam> {
        vec![
            FreeParam {
                name: "fsdax.bw_per_device".into(),
                lo: 0.1 * GIB as f64,
                hi: 100.0 * GIB as f64,
            },
            FreeParam {
                name: "fsdax.meta_cost_per_file".into(),
                lo: 1e-6,
                hi: 1.0,
            },
        ]
    }

    #[test]
    fn dotted_names_round_trip() {
        let mut c = base();
        c.set("parallel_fs.contention_beta", 0.25).unwrap();
        assert_eq!(c.parallel_fs.contention_beta, 0.25);
        assert_eq!(c.get("parallel_fs.contention_beta").unwrap(), 0.25);
        c.set("profiles.monc.compute_seconds_per_step", 0.5).unwrap();
        assert_eq!(c.get("profiles.monc.compute_seconds_per_step").unwrap(), 0.5);
        assert!(c.set("parallel_fs.nope", 1.0).is_err());
        assert!(!c.param_names().contains(&"parallel_fs.capacity".to_string()));
    }

    #[test]
    fn recovers_toy_parameters() {
        let t = vec![target("prod", 6.0 * 0.01), target("ratio", 6.0 / 0.01)];
        let (c, r) = fit(&base(), &t, &free(), "toy", &toy).unwrap();
        assert!((c.fsdax.bw_per_device / GIB as f64 / 6.0 - 1.0).abs() < 1e-6);
        assert!((c.fsdax.meta_cost_per_file / 0.01 - 1.0).abs() < 1e-6);
        assert!(r.max_error < 1e-8);
        assert_eq!(c.provenance_of("fsdax.meta_cost_per_file"), Provenance::Fitted);
    }

    #[test]
    fn too_few_targets_is_unidentifiable() {
        let t = vec![target("prod", 1.0)];
        match fit(&base(), &t, &free(), "toy", &toy) {
            Err(Error::Unidentifiable { group, targets, params }) => {
                assert_eq!((group.as_str(), targets, params), ("toy", 1, 2));
            }
            other => panic!("expected Unidentifiable, got {other:?}"),
        }
    }

    #[test]
    fn published_ratios_cannot_be_freed() {
        let t = vec![target("prod", 1.0)];
        let free = vec![FreeParam {
            name: "memory.ad_read_ratio".into(),
            lo: 0.1,
            hi: 1.0,
        }];
        assert!(matches!(fit(&base(), &t, &free, "bad", &toy), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn no_free_parameters_is_the_identity() {
        let b = base();
        let t = vec![target("prod", 0.0)];
        let (c, r) = fit(&b, &t, &[], "none", &toy).unwrap();
        assert_eq!(c, b);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn unreachable_targets_do_not_converge() {
        // the product can never be negative
        let t = vec![target("prod", -5.0), target("ratio", -5.0)];
        assert!(matches!(
            fit(&base(), &t, &free(), "toy", &toy),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let c = base();
        let back = CalibrationParams::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
