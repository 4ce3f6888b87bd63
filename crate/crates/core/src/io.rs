//! CSV persistence for datasets and posterior draws.
//!
//! `subjects.csv`: `id, a, enroll_time, y0, s, delta, l, x_1..x_k` and, for
//! simulated data, `t_true, c_true, b1, b2`.
//! `visits.csv`: `id, j, t_ij, y_ij`.
//! Floats are written with 12 significant digits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::ScenarioConfig;
use crate::domain::{DrawStats, PosteriorDraws, SubjectRecord, TrialDataset, TrueState};
use crate::error::{Error, Result};

pub const SUBJECTS_FILE: &str = "subjects.csv";
pub const VISITS_FILE: &str = "visits.csv";
pub const SCENARIO_FILE: &str = "scenario.json";

/// Format `v` with `digits` significant digits, in the shortest of fixed or
/// exponent notation (like C's `%.{digits}g`).
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt12(v: f64) -> String {
    fmt_sig(v, 12)
}

/// Echo of the generating configuration stored next to a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub scenario: Option<u8>,
    pub seed: u64,
    pub config: ScenarioConfig,
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: cannot parse '{field}' as a number")))
}

fn parse_flag(field: &str, what: &str) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse(format!("{what}: expected 0 or 1, got '{other}'"))),
    }
}

pub fn write_dataset(dir: &Path, ds: &TrialDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let k = ds.n_covariates();
    let mut w = csv::Writer::from_path(dir.join(SUBJECTS_FILE))?;
    let mut header: Vec<String> = ["id", "a", "enroll_time", "y0", "s", "delta", "l"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=k).map(|j| format!("x_{j}")));
    if ds.truth.is_some() {
        header.extend(["t_true", "c_true", "b1", "b2"].iter().map(|s| s.to_string()));
    }
    w.write_record(&header)?;
    for (i, s) in ds.subjects.iter().enumerate() {
        let mut row = vec![
            s.id.to_string(),
            u8::from(s.a).to_string(),
            fmt12(s.enroll_time),
            fmt12(s.y0),
            fmt12(s.s),
            u8::from(s.delta).to_string(),
            fmt12(s.l),
        ];
        row.extend(s.x.iter().map(|&v| fmt12(v)));
        if let Some(t) = &ds.truth {
            row.extend([t.t_true[i], t.c_true[i], t.b[i][0], t.b[i][1]].map(fmt12));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(VISITS_FILE))?;
    w.write_record(["id", "j", "t_ij", "y_ij"])?;
    for s in &ds.subjects {
        for (j, (&t, &y)) in s.visit_times.iter().zip(&s.y).enumerate() {
            w.write_record([s.id.to_string(), (j + 1).to_string(), fmt12(t), fmt12(y)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_scenario_echo(dir: &Path, echo: &ScenarioEcho) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SCENARIO_FILE), serde_json::to_string_pretty(echo)?)?;
    Ok(())
}

/// Load a dataset written by [`write_dataset`]. `scenario.json`, if present,
/// supplies the configuration and seed; otherwise defaults are used.
pub fn read_dataset(dir: &Path) -> Result<TrialDataset> {
    let mut r = csv::Reader::from_path(dir.join(SUBJECTS_FILE))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("{SUBJECTS_FILE}: missing column '{name}'")));
    let (c_id, c_a, c_enroll, c_y0, c_s, c_delta, c_l) = (
        need("id")?,
        need("a")?,
        need("enroll_time")?,
        need("y0")?,
        need("s")?,
        need("delta")?,
        need("l")?,
    );
    let x_cols: Vec<usize> = (1..).map_while(|j| col(&format!("x_{j}"))).collect();
    let truth_cols = match (col("t_true"), col("c_true"), col("b1"), col("b2")) {
        (Some(a), Some(b), Some(c), Some(d)) => Some([a, b, c, d]),
        _ => None,
    };

    let mut subjects = Vec::new();
    let mut truth = truth_cols.map(|_| TrueState {
        t_true: vec![],
        c_true: vec![],
        b: vec![],
    });
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let what = format!("{SUBJECTS_FILE} row {}", line + 2);
        let f = |c: usize| rec.get(c).unwrap_or("");
        let id: u64 = f(c_id)
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{what}: bad id '{}'", f(c_id))))?;
        subjects.push(SubjectRecord {
            id,
            x: x_cols.iter().map(|&c| parse_f64(f(c), &what)).collect::<Result<_>>()?,
            a: parse_flag(f(c_a), &what)?,
            enroll_time: parse_f64(f(c_enroll), &what)?,
            y0: parse_f64(f(c_y0), &what)?,
            visit_times: vec![],
            y: vec![],
            s: parse_f64(f(c_s), &what)?,
            delta: parse_flag(f(c_delta), &what)?,
            l: parse_f64(f(c_l), &what)?,
        });
        if let (Some(t), Some([ct, cc, cb1, cb2])) = (truth.as_mut(), truth_cols) {
            t.t_true.push(parse_f64(f(ct), &what)?);
            t.c_true.push(parse_f64(f(cc), &what)?);
            t.b.push([parse_f64(f(cb1), &what)?, parse_f64(f(cb2), &what)?]);
        }
    }

    let index: HashMap<u64, usize> = subjects.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut visits: Vec<Vec<(u64, f64, f64)>> = vec![Vec::new(); subjects.len()];
    let mut r = csv::Reader::from_path(dir.join(VISITS_FILE))?;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let what = format!("{VISITS_FILE} row {}", line + 2);
        if rec.len() < 4 {
            return Err(Error::Parse(format!("{what}: expected 4 fields")));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{what}: bad id")))?;
        let j: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{what}: bad visit index")))?;
        let i = *index
            .get(&id)
            .ok_or_else(|| Error::Parse(format!("{what}: unknown subject id {id}")))?;
        visits[i].push((j, parse_f64(&rec[2], &what)?, parse_f64(&rec[3], &what)?));
    }
    for (s, mut v) in subjects.iter_mut().zip(visits) {
        v.sort_by_key(|e| e.0);
        s.visit_times = v.iter().map(|e| e.1).collect();
        s.y = v.iter().map(|e| e.2).collect();
    }

    let (scenario, seed) = match fs::read_to_string(dir.join(SCENARIO_FILE)) {
        Ok(text) => {
            let echo: ScenarioEcho = serde_json::from_str(&text)?;
            (echo.config, echo.seed)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (ScenarioConfig::default(), 0),
        Err(e) => return Err(e.into()),
    };
    Ok(TrialDataset {
        subjects,
        scenario,
        seed,
        truth,
    })
}

/// Write one row per retained draw. Random-effect columns (`b1_<id>`,
/// `b2_<id>`) are included when `with_random_effects`; augmented event-time
/// columns (`t_miss_<id>`) always are.
pub fn write_draws(path: &Path, ds: &TrialDataset, draws: &PosteriorDraws, with_random_effects: bool) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let k = draws.n_covariates;
    let with_b = with_random_effects && draws.has_random_effects() && !draws.b.is_empty();
    let mut header = vec!["iter".to_string(), "chain".to_string(), "gamma_a".to_string()];
    header.extend((1..=k).map(|j| format!("gamma_x_{j}")));
    header.push("beta_a".into());
    header.extend((1..=k).map(|j| format!("beta_x_{j}")));
    header.extend(
        [
            "b_mu_1",
            "b_mu_2",
            "sigma_b_1",
            "sigma_b_2",
            "rho_b",
            "sigma2",
            "accept_prob",
            "divergent",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    if with_b {
        for s in &ds.subjects {
            header.push(format!("b1_{}", s.id));
            header.push(format!("b2_{}", s.id));
        }
    }
    for &i in &draws.censored {
        header.push(format!("t_miss_{}", ds.subjects[i].id));
    }

    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for q in 0..draws.q() {
        let p = draws.draw(q);
        let st = draws.stats[q];
        let mut row = vec![q.to_string(), draws.chain[q].to_string(), fmt12(p.gamma_a)];
        row.extend(p.gamma_x.iter().map(|&v| fmt12(v)));
        row.push(fmt12(p.beta_a));
        row.extend(p.beta_x.iter().map(|&v| fmt12(v)));
        row.extend([p.b_mu[0], p.b_mu[1], p.sigma_b[0], p.sigma_b[1], p.rho_b, p.sigma2].map(fmt12));
        row.push(fmt12(st.accept_prob));
        row.push(u8::from(st.divergent).to_string());
        if with_b {
            for b in &p.b {
                row.push(fmt12(b[0]));
                row.push(fmt12(b[1]));
            }
        }
        row.extend(p.t_miss.iter().map(|&v| fmt12(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read draws written by [`write_draws`] for dataset `ds`.
pub fn read_draws(path: &Path, ds: &TrialDataset) -> Result<PosteriorDraws> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Parse(format!("draws: missing column '{name}'")));
    let k = ds.n_covariates();
    let gx: Vec<usize> = (1..=k).map(|j| need(&format!("gamma_x_{j}"))).collect::<Result<_>>()?;
    let bx: Vec<usize> = (1..=k).map(|j| need(&format!("beta_x_{j}"))).collect::<Result<_>>()?;
    let scal = [
        "chain",
        "gamma_a",
        "beta_a",
        "b_mu_1",
        "b_mu_2",
        "sigma_b_1",
        "sigma_b_2",
        "rho_b",
        "sigma2",
    ]
    .map(&need);
    let scal: Vec<usize> = scal.into_iter().collect::<Result<_>>()?;
    let acc = col("accept_prob");
    let div = col("divergent");
    let b_cols: Option<Vec<[usize; 2]>> = ds
        .subjects
        .iter()
        .map(|s| Some([col(&format!("b1_{}", s.id))?, col(&format!("b2_{}", s.id))?]))
        .collect();
    let censored = ds.censored_indices();
    let t_cols: Vec<usize> = censored
        .iter()
        .map(|&i| need(&format!("t_miss_{}", ds.subjects[i].id)))
        .collect::<Result<_>>()?;

    let mut draws = PosteriorDraws::new(ds.n(), k, censored);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let what = format!("draws row {}", line + 2);
        let g = |c: usize| parse_f64(rec.get(c).unwrap_or(""), &what);
        let v: Vec<f64> = scal.iter().map(|&c| g(c)).collect::<Result<_>>()?;
        let p = crate::domain::ModelParams {
            gamma_a: v[1],
            gamma_x: gx.iter().map(|&c| g(c)).collect::<Result<_>>()?,
            beta_a: v[2],
            beta_x: bx.iter().map(|&c| g(c)).collect::<Result<_>>()?,
            b: match &b_cols {
                Some(cols) => cols.iter().map(|c| Ok([g(c[0])?, g(c[1])?])).collect::<Result<_>>()?,
                None => Vec::new(),
            },
            b_mu: [v[3], v[4]],
            sigma_b: [v[5], v[6]],
            rho_b: v[7],
            sigma2: v[8],
            t_miss: t_cols.iter().map(|&c| g(c)).collect::<Result<_>>()?,
        };
        let stats = DrawStats {
            accept_prob: acc.map(g).transpose()?.unwrap_or(f64::NAN),
            divergent: div.map(g).transpose()?.is_some_and(|d| d != 0.0),
            ..Default::default()
        };
        draws.push(&p, stats, v[0] as u32);
    }
    Ok(draws)
}
