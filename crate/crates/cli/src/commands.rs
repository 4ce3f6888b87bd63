use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tbauc::datagen::{generate_trial, ScenarioConfig};
use tbauc::domain::{validate_dataset, TrialDataset};
use tbauc::endpoint::{compute_endpoints, kaplan_meier_from};
use tbauc::inference::{analyze_endpoints, AucKind, Direction};
use tbauc::io::{fmt12, read_dataset, read_draws, write_dataset, write_draws, write_scenario_echo, ScenarioEcho};
use tbauc::likelihood::PriorSpec;
use tbauc::montecarlo::{
    aggregate, emit_tables, load_replications, replication_path, run_study, summary_text, StudyConfig, StudyReport,
};
use tbauc::rng::replication_seed;
use tbauc::sampler::{diagnostics, run_chain, SamplerConfig};
use tbauc::{Error, Result};

use crate::config::{read_overrides, resolve};
use crate::manifest::Recorder;

const STUDY_FILE: &str = "study.json";
const REPORT_FILE: &str = "report.json";
const REPLICATIONS_DIR: &str = "replications";

fn overrides(path: Option<&Path>) -> Result<Option<Value>> {
    path.map(read_overrides).transpose()
}

fn origin(path: Option<&Path>) -> String {
    path.map_or_else(|| "defaults".to_string(), |p| p.display().to_string())
}

/// Directory that holds a file output, `.` for bare file names.
pub fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_valid_dataset(dir: &Path) -> Result<TrialDataset> {
    let ds = read_dataset(dir)?;
    let problems = validate_dataset(&ds);
    if !problems.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: {}",
            dir.display(),
            problems.join("; ")
        )));
    }
    Ok(ds)
}

pub struct SimulateArgs {
    pub scenario: u8,
    pub seed: u64,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

pub fn simulate(a: SimulateArgs, rec: &mut Recorder) -> Result<()> {
    let base = ScenarioConfig::scenario(a.scenario)?;
    let cfg: ScenarioConfig = resolve(
        &base,
        overrides(a.config.as_deref())?.as_ref(),
        &origin(a.config.as_deref()),
    )?;
    cfg.validate()?;
    rec.config = serde_json::to_value(&cfg)?;
    rec.seed("seed", a.seed);

    let ds = generate_trial(&cfg, a.seed)?;
    write_dataset(&a.out, &ds)?;
    write_scenario_echo(
        &a.out,
        &ScenarioEcho {
            scenario: Some(a.scenario),
            seed: a.seed,
            config: cfg,
        },
    )?;
    for f in ["subjects.csv", "visits.csv", "scenario.json"] {
        rec.artifact(a.out.join(f));
    }
    info!("{} subjects, {} events", ds.n(), ds.n_events());
    Ok(())
}

/// Contents of the `fit --config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
}

pub struct FitArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub q: Option<usize>,
    pub warmup: Option<usize>,
    pub chains: Option<usize>,
    pub seed: Option<u64>,
    pub no_random_effects: bool,
}

pub fn fit(a: FitArgs, rec: &mut Recorder) -> Result<()> {
    let mut cfg: FitConfig = resolve(
        &FitConfig::default(),
        overrides(a.config.as_deref())?.as_ref(),
        &origin(a.config.as_deref()),
    )?;
    if let Some(q) = a.q {
        cfg.sampler.q_total = q;
    }
    if a.warmup.is_some() {
        cfg.sampler.warmup = a.warmup;
    }
    if let Some(c) = a.chains {
        cfg.sampler.chains = c;
    }
    if let Some(s) = a.seed {
        cfg.sampler.seed = s;
    }
    cfg.sampler.validate()?;
    cfg.prior.validate()?;
    let mut echo = serde_json::to_value(&cfg)?;
    echo["sampler"]["warmup_resolved"] = cfg.sampler.effective_warmup().into();
    echo["data"] = a.data.display().to_string().into();
    echo["random_effect_columns"] = (!a.no_random_effects).into();
    rec.config = echo;
    rec.seed("sampler", cfg.sampler.seed);

    let ds = load_valid_dataset(&a.data)?;
    let draws = run_chain(&ds, &cfg.prior, &cfg.sampler)?;
    write_draws(&a.out, &ds, &draws, !a.no_random_effects)?;
    rec.artifact(&a.out);

    let dir = parent_dir(&a.out);
    let diag_path = dir.join("diagnostics.csv");
    let mut w = csv::Writer::from_path(&diag_path)?;
    w.write_record(["parameter", "mean", "sd", "rhat", "ess", "degenerate"])?;
    for s in diagnostics(&draws) {
        w.write_record([
            s.name.clone(),
            fmt12(s.mean),
            fmt12(s.sd),
            fmt12(s.rhat),
            fmt12(s.ess),
            u8::from(s.degenerate).to_string(),
        ])?;
    }
    w.flush()?;
    rec.artifact(diag_path);
    info!(
        "{} draws, acceptance {:.3}, {} divergences",
        draws.q(),
        draws.acceptance_rate(),
        draws.divergences()
    );
    Ok(())
}

pub struct AnalyzeArgs {
    pub draws: PathBuf,
    pub data: PathBuf,
    pub gamma: f64,
    pub alpha: f64,
    pub direction: Direction,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn analyze(a: AnalyzeArgs, rec: &mut Recorder) -> Result<()> {
    if !a.gamma.is_finite() {
        return Err(Error::InvalidConfig(format!("gamma must be finite, got {}", a.gamma)));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {}",
            a.alpha
        )));
    }
    rec.config = serde_json::json!({
        "draws": a.draws.display().to_string(),
        "data": a.data.display().to_string(),
        "gamma": a.gamma,
        "alpha": a.alpha,
        "direction": a.direction,
    });
    rec.seed("bootstrap", a.seed);

    let ds = load_valid_dataset(&a.data)?;
    let draws = read_draws(&a.draws, &ds)?;
    let ep = compute_endpoints(&ds, &draws, a.gamma)?;
    let tests = analyze_endpoints(&ep, &ds, a.alpha, a.direction, a.seed)?;
    let dir = parent_dir(&a.out);
    fs::create_dir_all(&dir)?;

    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["kind", "theta_hat", "se", "w", "p_value", "reject"])?;
    for t in &tests {
        w.write_record([
            t.kind.to_string(),
            fmt12(t.theta_hat),
            fmt12(t.se),
            fmt12(t.w),
            fmt12(t.p_value),
            u8::from(t.reject).to_string(),
        ])?;
        if t.degenerate {
            warn!(
                "{}: zero bootstrap standard error, test reported as not rejecting",
                t.kind
            );
        }
    }
    w.flush()?;
    rec.artifact(&a.out);

    let path = dir.join("endpoints.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["q", "id", "tbauc", "sauc", "u"])?;
    for q in 0..ep.q() {
        let (tb, sa, u) = (ep.row(AucKind::Tb, q), ep.row(AucKind::S, q), ep.row(AucKind::Total, q));
        for (i, s) in ds.subjects.iter().enumerate() {
            w.write_record([
                (q + 1).to_string(),
                s.id.to_string(),
                fmt12(tb[i]),
                fmt12(sa[i]),
                fmt12(u[i]),
            ])?;
        }
    }
    w.flush()?;
    rec.artifact(path);

    let path = dir.join("km.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["arm", "time", "survival", "at_risk", "events"])?;
    for arm in [0usize, 1] {
        let obs: Vec<(f64, bool)> = ds
            .subjects
            .iter()
            .filter(|s| s.arm() == arm)
            .map(|s| (s.s, s.delta))
            .collect();
        if obs.is_empty() {
            continue;
        }
        let km = kaplan_meier_from(&obs)?;
        for j in 0..km.time.len() {
            w.write_record([
                arm.to_string(),
                fmt12(km.time[j]),
                fmt12(km.survival[j]),
                km.at_risk[j].to_string(),
                km.events[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    rec.artifact(path);

    let path = dir.join("spaghetti.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["id", "arm", "t", "y"])?;
    for s in &ds.subjects {
        let points = std::iter::once((0.0, s.y0)).chain(s.visit_times.iter().copied().zip(s.y.iter().copied()));
        for (t, y) in points {
            w.write_record([s.id.to_string(), s.arm().to_string(), fmt12(t), fmt12(y)])?;
        }
    }
    w.flush()?;
    rec.artifact(path);

    for t in &tests {
        println!(
            "{:<5} theta_hat {:>12.4} se {:>10.4} w {:>8.3} p {:.4} {}",
            t.kind.as_str(),
            t.theta_hat,
            t.se,
            t.w,
            t.p_value,
            if t.reject { "reject" } else { "no rejection" }
        );
    }
    Ok(())
}

pub struct ReplicateArgs {
    pub scenarios: Vec<u8>,
    pub reps: Option<usize>,
    pub q: Option<usize>,
    pub warmup: Option<usize>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

fn scenario_dir(out: &Path, scenario: u8) -> PathBuf {
    out.join(format!("scenario{scenario}"))
}

/// Remove replication files left by an earlier run in `dir`.
fn clear_replications(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let stale = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("rep_") && n.ends_with(".json"));
        if stale {
            fs::remove_file(path)?;
        }
    }
    Ok(())
}

fn write_summary(reports: &[StudyReport], dir: &Path, rec: &mut Recorder) -> Result<()> {
    emit_tables(reports, dir)?;
    let text = summary_text(reports);
    fs::write(dir.join("summary.txt"), &text)?;
    print!("{text}");
    for f in ["table3.csv", "tableA.csv", "summary.txt"] {
        rec.artifact(dir.join(f));
    }
    Ok(())
}

pub fn replicate(mut a: ReplicateArgs, rec: &mut Recorder) -> Result<()> {
    a.scenarios.sort_unstable();
    a.scenarios.dedup();
    if a.scenarios.is_empty() {
        return Err(Error::InvalidConfig("at least one --scenario is required".into()));
    }
    let file = overrides(a.config.as_deref())?;
    let mut configs = Vec::new();
    for &s in &a.scenarios {
        let mut cfg: StudyConfig = resolve(&StudyConfig::new(s)?, file.as_ref(), &origin(a.config.as_deref()))?;
        cfg.scenario = s;
        if let Some(r) = a.reps {
            cfg.replications = r;
        }
        if let Some(q) = a.q {
            cfg.sampler.q_total = q;
        }
        if a.warmup.is_some() {
            cfg.sampler.warmup = a.warmup;
        }
        if let Some(seed) = a.seed {
            cfg.master_seed = seed;
        }
        cfg.validate()?;
        configs.push(cfg);
    }
    rec.config = serde_json::json!({ "workers": a.workers, "studies": configs });
    for cfg in &configs {
        let seeds: Vec<u64> = (0..cfg.replications)
            .map(|r| replication_seed(cfg.master_seed, r as u64))
            .collect();
        rec.seed(
            &format!("scenario{}", cfg.scenario),
            serde_json::json!({
                "master": cfg.master_seed,
                "replications": seeds,
            }),
        );
    }

    let mut reports = Vec::new();
    for cfg in configs {
        let dir = scenario_dir(&a.out, cfg.scenario);
        let rep_dir = dir.join(REPLICATIONS_DIR);
        clear_replications(&rep_dir)?;
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(STUDY_FILE), serde_json::to_string_pretty(&cfg)?)?;
        rec.artifact(dir.join(STUDY_FILE));
        let report = run_study(&cfg, a.workers, Some(&rep_dir))?;
        fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
        rec.artifact(dir.join(REPORT_FILE));
        for r in 0..cfg.replications {
            rec.artifact(replication_path(&rep_dir, r));
        }
        reports.push(report);
    }
    write_summary(&reports, &a.out, rec)?;
    Ok(())
}

pub fn report(input: &Path, out: &Path, rec: &mut Recorder) -> Result<()> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(STUDY_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no scenario*/{STUDY_FILE} found",
            input.display()
        )));
    }
    let mut reports = Vec::new();
    for dir in dirs {
        let text = fs::read_to_string(dir.join(STUDY_FILE))?;
        let cfg: StudyConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", dir.join(STUDY_FILE).display())))?;
        let reps = load_replications(&dir.join(REPLICATIONS_DIR))?;
        if reps.len() != cfg.replications {
            warn!(
                "scenario {}: {} of {} replication files present",
                cfg.scenario,
                reps.len(),
                cfg.replications
            );
        }
        reports.push(aggregate(&cfg, reps)?);
    }
    reports.sort_by_key(|r| r.config.scenario);
    rec.config = serde_json::json!({
        "in": input.display().to_string(),
        "studies": reports.iter().map(|r| &r.config).collect::<Vec<_>>(),
    });
    for r in &reports {
        rec.seed(&format!("scenario{}", r.config.scenario), r.config.master_seed);
    }
    fs::create_dir_all(out)?;
    write_summary(&reports, out, rec)?;
    Ok(())
}
