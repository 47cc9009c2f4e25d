use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bapmsim::advisor::recommend;
use bapmsim::calibrate::{calibrate, goodness_of_fit, CalibrationParams, FitTarget, Residual, TargetsFile};
use bapmsim::domain::{ApplicationProfile, ClusterSpec};
use bapmsim::scenarios::{
    bundled_calibration, bundled_profile, evaluate, run_scenario, run_spec, scenario_doc, ScenarioOutput, SimSpec,
    Table, SCENARIO_IDS,
};
use bapmsim::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Simulator and configuration advisor for clusters with byte-addressable
/// persistent memory.
#[derive(Parser)]
#[command(name = "bapmsim", version)]
struct Cli {
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Directory for machine-readable outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Calibration file, or `defaults` for the uncalibrated constants.
    #[arg(long, global = true)]
    calibration: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Recommend a platform mode and AppDirect strategy for a profile.
    Advise {
        /// Profile JSON file or bundled profile name.
        profile: String,
    },
    /// Run a bundled scenario or a simulation spec file.
    Simulate { scenario_or_spec: String },
    /// Fit model constants to published observations.
    Calibrate {
        /// Targets file; the bundled targets when omitted.
        targets: Option<PathBuf>,
        /// Report residuals of the current calibration without fitting or writing.
        #[arg(long)]
        check_only: bool,
    },
    /// Run scenarios and compare them with their expected outputs.
    Reproduce {
        /// Scenario id or `all`.
        which: String,
    },
}

/// An error carrying its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.exit_code() as u8,
            err: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = err.downcast_ref::<Error>().map_or(1, |e| e.exit_code() as u8);
        Failure { code, err }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Advise { profile } => advise(&cli, profile),
        Command::Simulate { scenario_or_spec } => simulate(&cli, scenario_or_spec),
        Command::Calibrate { targets, check_only } => cmd_calibrate(&cli, targets.as_deref(), *check_only),
        Command::Reproduce { which } => reproduce(&cli, which),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn base_cluster() -> ClusterSpec {
    ClusterSpec::nextgenio()
}

fn load_calibration(cli: &Cli) -> Result<CalibrationParams, Failure> {
    let from_file = |p: &Path| -> Result<CalibrationParams, Failure> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        CalibrationParams::from_json(&text)
            .with_context(|| format!("in {}", p.display()))
            .map_err(Failure::from)
    };
    match cli.calibration.as_deref() {
        Some("defaults") => {
            eprintln!("WARNING: running with uncalibrated default constants; published results will not be reproduced");
            Ok(CalibrationParams::defaults(&base_cluster()))
        }
        Some(p) => from_file(Path::new(p)),
        None if Path::new("calibration.json").is_file() => from_file(Path::new("calibration.json")),
        None => {
            eprintln!("note: no calibration.json found, using the calibration bundled with this build");
            Ok(bundled_calibration())
        }
    }
}

fn write_out(cli: &Cli, name: &str, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serialises");
    s.push('\n');
    s
}

fn advise(cli: &Cli, profile: &str) -> CmdResult {
    let p: ApplicationProfile = if Path::new(profile).is_file() {
        let text = fs::read_to_string(profile).with_context(|| format!("reading {profile}"))?;
        serde_json::from_str(&text)
            .map_err(Error::from)
            .with_context(|| format!("in {profile}"))?
    } else {
        bundled_profile(profile).map_err(|_| anyhow::anyhow!("`{profile}` is neither a file nor a bundled profile"))?
    };
    let rec = recommend(&p)?;
    let mut t = Table::new(&["question", "answer", "field"]);
    for s in &rec.rationale {
        t.push(vec![s.question.clone(), s.answer.clone(), s.field.clone()]);
    }
    match cli.format {
        Format::Json => print!("{}", to_json(&rec)),
        Format::Csv => print!("{}", t.to_csv()),
        Format::Text => {
            println!("{}: {rec}", p.name);
            print!("{}", t.to_text());
        }
    }
    write_out(cli, "recommendation.json", &to_json(&rec))?;
    write_out(cli, "rationale.csv", &t.to_csv())?;
    Ok(0)
}

fn emit_output(cli: &Cli, out: &ScenarioOutput) -> anyhow::Result<()> {
    match cli.format {
        Format::Json => print!("{}", to_json(out)),
        Format::Csv => {
            for (name, t) in &out.tables {
                println!("# {name}");
                print!("{}", t.to_csv());
            }
        }
        Format::Text => {
            if !out.description.is_empty() {
                println!("{}\n", out.description);
            }
            for (name, t) in &out.tables {
                println!("[{name}]");
                println!("{}", t.to_text());
            }
            for n in &out.notes {
                println!("* {n}");
            }
            if !out.checks.is_empty() {
                println!();
                print!("{}", checks_table(std::slice::from_ref(out)).to_text());
            }
        }
    }
    for (name, t) in &out.tables {
        write_out(cli, &format!("{name}.csv"), &t.to_csv())?;
    }
    write_out(cli, "summary.json", &to_json(out))?;
    for (name, r) in &out.reports {
        if !r.io_trace.is_empty() {
            write_out(cli, &format!("{name}-io.csv"), &r.io_trace_csv())?;
        }
        write_out(cli, &format!("{name}-report.json"), &to_json(r))?;
    }
    Ok(())
}

fn simulate(cli: &Cli, what: &str) -> CmdResult {
    let calib = load_calibration(cli)?;
    let out = if SCENARIO_IDS.contains(&what) {
        run_scenario(what, &base_cluster(), &calib, cli.seed)?
    } else if Path::new(what).is_file() {
        let text = fs::read_to_string(what).with_context(|| format!("reading {what}"))?;
        let spec = SimSpec::from_json(&text, &calib)?;
        run_spec(&spec, &base_cluster(), &calib, cli.seed)?
    } else {
        // reports the valid scenario ids
        scenario_doc(what)?;
        unreachable!()
    };
    emit_output(cli, &out)?;
    Ok(0)
}

fn residual_table(group: &str, rs: &[Residual], t: &mut Table) {
    for r in rs {
        t.push(vec![
            group.to_string(),
            r.id.clone(),
            format!("{}", r.observed),
            format!("{:.4}", r.predicted),
            format!("{:.4}", r.rel_error),
            format!("{}", r.tolerance),
            if r.pass { "pass" } else { "FAIL" }.into(),
        ]);
    }
}

fn cmd_calibrate(cli: &Cli, targets: Option<&Path>, check_only: bool) -> CmdResult {
    let file = match targets {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TargetsFile::from_json(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => bapmsim::scenarios::bundled_targets(),
    };
    let base = base_cluster();
    let seed = cli.seed;
    let eval = |c: &CalibrationParams, t: &[FitTarget]| evaluate(&base, seed, c, t);
    let mut table = Table::new(&["group", "target", "observed", "predicted", "rel_error", "tolerance", "result"]);
    let (params, groups) = if check_only {
        let params = load_calibration(cli)?;
        let mut groups = Vec::new();
        for g in &file.groups {
            let ts: Vec<FitTarget> = g.targets.iter().filter_map(|id| file.target(id).cloned()).collect();
            groups.push((g.name.clone(), goodness_of_fit(&params, &ts, &eval)?));
        }
        (params, groups)
    } else {
        let start = match cli.calibration {
            Some(_) => load_calibration(cli)?,
            None => CalibrationParams::defaults(&base),
        };
        let (params, reports) = calibrate(&start, &file, &eval)?;
        for r in &reports {
            eprintln!("group {}: {} evaluations, max relative error {:.4}", r.group, r.evaluations, r.max_error);
        }
        (params, reports.into_iter().map(|r| (r.group, r.residuals)).collect())
    };
    for (g, rs) in &groups {
        residual_table(g, rs, &mut table);
    }
    let failed = groups.iter().flat_map(|(_, r)| r).any(|r| !r.pass);
    match cli.format {
        Format::Json => print!(
            "{}",
            to_json(&json!({ "params": params, "residuals": groups }))
        ),
        Format::Csv => print!("{}", table.to_csv()),
        Format::Text => print!("{}", table.to_text()),
    }
    if !check_only {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("calibration.json");
        fs::write(&path, params.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
        fs::write(dir.join("residuals.csv"), table.to_csv()).context("writing residuals.csv")?;
        eprintln!("wrote {}", path.display());
    }
    if failed {
        eprintln!("error: some targets are outside their tolerance");
        return Ok(2);
    }
    Ok(0)
}

/// A tolerance as a short percentage, without float noise.
fn percent(fraction: f64) -> String {
    let s = format!("{:.6}", fraction * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn checks_table(outs: &[ScenarioOutput]) -> Table {
    let mut t = Table::new(&["scenario", "check", "expected", "actual", "result", "source"]);
    for o in outs {
        for c in &o.checks {
            let expected = match c.check {
                bapmsim::scenarios::Check::Relative => format!("{} ±{}%", c.expected, percent(c.tolerance)),
                bapmsim::scenarios::Check::LessThan => format!("< {}", c.expected),
                bapmsim::scenarios::Check::AtMost => format!("<= {}", c.expected),
                bapmsim::scenarios::Check::AtLeast => format!(">= {}", c.expected),
            };
            t.push(vec![
                o.id.clone(),
                c.id.clone(),
                expected,
                c.actual.map_or("-".into(), |a| format!("{a:.4}")),
                if c.pass { "pass" } else { "FAIL" }.into(),
                c.source.clone(),
            ]);
        }
    }
    t
}

fn reproduce(cli: &Cli, which: &str) -> CmdResult {
    let ids: Vec<&str> = if which == "all" {
        SCENARIO_IDS.to_vec()
    } else {
        scenario_doc(which)?;
        vec![which]
    };
    let calib = load_calibration(cli)?;
    let base = base_cluster();
    let results: Vec<Result<ScenarioOutput, Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = ids
            .iter()
            .map(|id| {
                let (base, calib) = (&base, &calib);
                s.spawn(move || run_scenario(id, base, calib, cli.seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread")).collect()
    });
    let outs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let t = checks_table(&outs);
    match cli.format {
        Format::Json => print!("{}", to_json(&outs)),
        Format::Csv => print!("{}", t.to_csv()),
        Format::Text => {
            print!("{}", t.to_text());
            for o in &outs {
                println!("{}: {}", o.id, if o.passed() { "PASS" } else { "FAIL" });
            }
        }
    }
    write_out(cli, "reproduce.csv", &t.to_csv())?;
    for o in &outs {
        for (name, table) in &o.tables {
            write_out(cli, &format!("{}-{name}.csv", o.id), &table.to_csv())?;
        }
    }
    Ok(if outs.iter().all(|o| o.passed()) { 0 } else { 3 })
}
