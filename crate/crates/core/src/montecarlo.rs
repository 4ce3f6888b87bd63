//! Monte Carlo study driver: simulate, fit and test many trials, then
//! summarize rejection rates and parameter recovery.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_trial, ScenarioConfig};
use crate::domain::PosteriorDraws;
use crate::error::{Error, Result};
use crate::inference::{full_analysis, Direction, TestResult};
use crate::io::fmt12;
use crate::likelihood::PriorSpec;
use crate::rng::replication_seed;
use crate::sampler::{run_chain, SamplerConfig};

/// Largest tolerated fraction of failed replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Reported parameters, in table order.
pub const PARAM_NAMES: [&str; 9] = [
    "sigma_error",
    "beta_a",
    "beta_x",
    "gamma_x",
    "gamma_a",
    "b_mu1",
    "b_mu2",
    "b_sd1",
    "b_sd2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Treatment-effect scenario 1-4.
    pub scenario: u8,
    /// Data-generating design; its effect sizes normally follow `scenario`.
    pub design: ScenarioConfig,
    pub replications: usize,
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    pub gamma_utility: f64,
    pub alpha: f64,
    pub direction: Direction,
    pub master_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig::new(1).expect("scenario 1 exists")
    }
}

impl StudyConfig {
    /// Defaults for `scenario`: 1000 replications of the reference design.
    pub fn new(scenario: u8) -> Result<Self> {
        Ok(StudyConfig {
            scenario,
            design: ScenarioConfig::scenario(scenario)?,
            replications: 1000,
            sampler: SamplerConfig::default(),
            prior: PriorSpec::default(),
            gamma_utility: 0.5,
            alpha: 0.025,
            direction: Direction::Left,
            master_seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario) {
            return Err(Error::InvalidConfig(format!(
                "scenario must be 1..4, got {}",
                self.scenario
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.gamma_utility.is_finite() {
            return Err(Error::InvalidConfig("gamma_utility must be finite".into()));
        }
        self.design.validate()?;
        self.sampler.validate()?;
        self.prior.validate()
    }

    /// True values of the reported parameters.
    pub fn truth(&self) -> [f64; 9] {
        let d = &self.design;
        [
            d.sigma2_eps.sqrt(),
            d.beta_a,
            d.beta_x,
            d.gamma_x,
            d.gamma_a,
            d.b1_mean,
            d.b2_mean,
            d.b1_var.sqrt(),
            d.b2_var.sqrt(),
        ]
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    /// `None` when the replication failed; see `error`.
    pub tests: Option<[TestResult; 3]>,
    /// Posterior means of the reported parameters, in [`PARAM_NAMES`] order.
    pub estimates: Option<[f64; 9]>,
    pub divergences: usize,
    pub acceptance: f64,
    pub n_events: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

impl ReplicationResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub parameter: String,
    pub truth: f64,
    pub estimate: f64,
    pub bias: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    /// Rejection rates for TB, S and Total.
    pub rejection_rates: [f64; 3],
    pub param_table: Vec<ParamRow>,
    pub completed: usize,
    pub failed: usize,
    pub replications: Vec<ReplicationResult>,
}

/// Posterior means of the reported parameters (first covariate for the
/// covariate effects).
pub fn posterior_means(draws: &PosteriorDraws) -> [f64; 9] {
    let q = draws.q() as f64;
    let k = draws.n_covariates;
    let mean = |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>() / q;
    [
        mean(&mut draws.sigma2.iter().map(|s| s.sqrt())),
        mean(&mut draws.beta_a.iter().copied()),
        mean(&mut draws.beta_x.iter().step_by(k.max(1)).copied()),
        mean(&mut draws.gamma_x.iter().step_by(k.max(1)).copied()),
        mean(&mut draws.gamma_a.iter().copied()),
        mean(&mut draws.b_mu.iter().map(|b| b[0])),
        mean(&mut draws.b_mu.iter().map(|b| b[1])),
        mean(&mut draws.sigma_b.iter().map(|b| b[0])),
        mean(&mut draws.sigma_b.iter().map(|b| b[1])),
    ]
}

/// Simulate, fit and test replication `r`.
pub fn run_replication(cfg: &StudyConfig, r: usize) -> ReplicationResult {
    let seed = replication_seed(cfg.master_seed, r as u64);
    let start = std::time::Instant::now();
    let mut out = ReplicationResult {
        index: r,
        seed,
        tests: None,
        estimates: None,
        divergences: 0,
        acceptance: 0.0,
        n_events: 0,
        seconds: 0.0,
        error: None,
    };
    let result = (|| -> Result<()> {
        let ds = generate_trial(&cfg.design, seed)?;
        out.n_events = ds.n_events();
        let sampler = SamplerConfig {
            seed,
            ..cfg.sampler.clone()
        };
        let draws = run_chain(&ds, &cfg.prior, &sampler)?;
        out.divergences = draws.divergences();
        out.acceptance = draws.acceptance_rate();
        out.estimates = Some(posterior_means(&draws));
        out.tests = Some(full_analysis(
            &ds,
            &draws,
            cfg.gamma_utility,
            cfg.alpha,
            cfg.direction,
            seed,
        )?);
        Ok(())
    })();
    if let Err(e) = result {
        warn!("replication {r} (seed {seed}) failed: {e}");
        out.error = Some(e.to_string());
        out.tests = None;
        out.estimates = None;
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

/// Summarize replication results. Fails when more than 5% failed or none
/// succeeded.
pub fn aggregate(cfg: &StudyConfig, mut reps: Vec<ReplicationResult>) -> Result<StudyReport> {
    reps.sort_by_key(|r| r.index);
    let total = reps.len();
    let failed = reps.iter().filter(|r| r.failed()).count();
    let limit = (MAX_FAILURE_FRACTION * total as f64).floor() as usize;
    if failed > limit || failed == total {
        return Err(Error::TooManyFailures { failed, total, limit });
    }
    if failed > 0 {
        warn!("{failed} of {total} replications failed and are excluded");
    }
    let ok: Vec<&ReplicationResult> = reps.iter().filter(|r| !r.failed()).collect();
    let n = ok.len() as f64;
    let mut rejection_rates = [0.0; 3];
    for r in &ok {
        let tests = r.tests.as_ref().expect("successful replication has tests");
        for (rate, t) in rejection_rates.iter_mut().zip(tests) {
            *rate += f64::from(u8::from(t.reject)) / n;
        }
    }
    let truth = cfg.truth();
    let param_table = PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let est: Vec<f64> = ok.iter().map(|r| r.estimates.expect("estimates")[p]).collect();
            let estimate = est.iter().sum::<f64>() / n;
            let bias = est.iter().map(|e| e - truth[p]).sum::<f64>() / n;
            let mse = est.iter().map(|e| (e - truth[p]).powi(2)).sum::<f64>() / n;
            ParamRow {
                parameter: name.to_string(),
                truth: truth[p],
                estimate,
                bias,
                mse,
            }
        })
        .collect();
    Ok(StudyReport {
        config: cfg.clone(),
        rejection_rates,
        param_table,
        completed: ok.len(),
        failed,
        replications: reps,
    })
}

/// File holding replication `r` under `dir`.
pub fn replication_path(dir: &Path, r: usize) -> PathBuf {
    dir.join(format!("rep_{r:05}.json"))
}

/// Run all replications on a pool of `workers` threads. When `rep_dir` is
/// given, each result is written there as soon as it completes. The report
/// does not depend on `workers`.
pub fn run_study(cfg: &StudyConfig, workers: usize, rep_dir: Option<&Path>) -> Result<StudyReport> {
    cfg.validate()?;
    if workers == 0 {
        return Err(Error::InvalidConfig("workers must be at least 1".into()));
    }
    if let Some(dir) = rep_dir {
        fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))?;
    let reps: Vec<Result<ReplicationResult>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let res = run_replication(cfg, r);
                info!(
                    "scenario {} replication {r}: {:.1}s{}",
                    cfg.scenario,
                    res.seconds,
                    if res.failed() { " (failed)" } else { "" }
                );
                if let Some(dir) = rep_dir {
                    fs::write(replication_path(dir, r), serde_json::to_vec_pretty(&res)?)?;
                }
                Ok(res)
            })
            .collect()
    });
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate(cfg, reps)
}

/// Load every `rep_*.json` in `dir`.
pub fn load_replications(dir: &Path) -> Result<Vec<ReplicationResult>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_rep = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("rep_") && n.ends_with(".json"));
        if is_rep {
            let text = fs::read_to_string(&path)?;
            out.push(serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
        }
    }
    out.sort_by_key(|r: &ReplicationResult| r.index);
    Ok(out)
}

/// Write `table3.csv` (one column per scenario) and `tableA.csv` (nine
/// parameter rows per scenario) into `dir`.
pub fn emit_tables(reports: &[StudyReport], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sorted: Vec<&StudyReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.config.scenario);

    let mut t3 = csv::Writer::from_path(dir.join("table3.csv"))?;
    let mut header = vec!["test".to_string()];
    header.extend(sorted.iter().map(|r| format!("scenario{}", r.config.scenario)));
    t3.write_record(&header)?;
    for (k, name) in ["TB", "S", "Total"].iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(sorted.iter().map(|r| fmt12(r.rejection_rates[k])));
        t3.write_record(&row)?;
    }
    t3.flush()?;

    let mut ta = csv::Writer::from_path(dir.join("tableA.csv"))?;
    ta.write_record(["SN", "parameter", "true", "estimate", "bias", "mse"])?;
    for r in &sorted {
        for p in &r.param_table {
            ta.write_record([
                r.config.scenario.to_string(),
                p.parameter.clone(),
                fmt12(p.truth),
                fmt12(p.estimate),
                fmt12(p.bias),
                fmt12(p.mse),
            ])?;
        }
    }
    ta.flush()?;
    Ok(())
}

/// Plain-text rendering of reports for terminals.
pub fn summary_text(reports: &[StudyReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "Scenario {} ({} of {} replications completed, Q = {})\n",
            r.config.scenario,
            r.completed,
            r.completed + r.failed,
            r.config.sampler.q_total
        ));
        s.push_str(&format!(
            "  rejection rates: TB {:.3}  S {:.3}  Total {:.3}\n",
            r.rejection_rates[0], r.rejection_rates[1], r.rejection_rates[2]
        ));
        s.push_str("  parameter      true   estimate      bias       mse\n");
        for p in &r.param_table {
            s.push_str(&format!(
                "  {:<11} {:>7.3} {:>10.4} {:>9.4} {:>9.5}\n",
                p.parameter, p.truth, p.estimate, p.bias, p.mse
            ));
        }
    }
    s
}
