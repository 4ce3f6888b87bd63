//! Synthetic trial generator.
//!
//! Subjects enroll at a constant rate and are randomized in exact blocks.
//! Each subject gets an exponential event time with log-hazard
//! `gamma_x * x + gamma_a * a`, an independent exponential censoring time,
//! and a tumor-burden series measured every `visit_gap_days` until the
//! observed time. The study stops at the calendar time of the
//! `target_events`-th event, which fixes each subject's follow-up `L_i`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::domain::{SubjectRecord, TrialDataset, TrueState};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const DAYS_PER_MONTH: f64 = 30.0;

/// Time that visit times are divided by to get the scaled time of the
/// simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiReference {
    /// The observed time `S_i` (event or censoring).
    #[default]
    Observed,
    /// The latent event time `T_i`, matching the fitted model.
    Event,
}

/// Design constants and true parameter values for one simulated trial.
///
/// The second argument of every normal distribution is a variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub beta_a: f64,
    pub gamma_a: f64,
    pub beta_x: f64,
    pub gamma_x: f64,
    pub x_mean: f64,
    pub x_var: f64,
    pub y0_mean: f64,
    pub y0_var: f64,
    pub b1_mean: f64,
    pub b1_var: f64,
    pub b2_mean: f64,
    pub b2_var: f64,
    /// Residual variance of the tumor-burden measurements.
    pub sigma2_eps: f64,
    /// Censoring hazard per day.
    pub cens_rate: f64,
    pub enroll_per_month: f64,
    pub visit_gap_days: f64,
    pub max_visits: usize,
    pub target_events: usize,
    /// Post-event utility value.
    pub gamma_utility: f64,
    /// Allocation ratio `(treatment, control)`.
    pub randomization_ratio: (u32, u32),
    pub psi_reference: PsiReference,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 500,
            beta_a: 0.0,
            gamma_a: 0.0,
            beta_x: 1.5,
            gamma_x: -1.2,
            x_mean: 6.0,
            x_var: 0.25,
            y0_mean: 15.0,
            y0_var: 0.5,
            b1_mean: -10.0,
            b1_var: 1.0,
            b2_mean: 11.0,
            b2_var: 1.0,
            sigma2_eps: 0.0625,
            cens_rate: 0.00128,
            enroll_per_month: 50.0,
            visit_gap_days: 63.0,
            max_visits: 8,
            target_events: 120,
            gamma_utility: 0.5,
            randomization_ratio: (1, 1),
            psi_reference: PsiReference::Observed,
        }
    }
}

impl ScenarioConfig {
    /// Treatment-effect scenario 1-4: effects on tumor burden and/or survival.
    pub fn scenario(k: u8) -> Result<Self> {
        let (beta_a, gamma_a) = match k {
            1 => (-2.25, -0.75),
            2 => (-2.25, 0.0),
            3 => (0.0, -0.75),
            4 => (0.0, 0.0),
            _ => return Err(Error::InvalidConfig(format!("scenario must be 1..4, got {k}"))),
        };
        Ok(ScenarioConfig {
            beta_a,
            gamma_a,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("x_var", self.x_var),
            ("y0_var", self.y0_var),
            ("b1_var", self.b1_var),
            ("b2_var", self.b2_var),
            ("sigma2_eps", self.sigma2_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.cens_rate > 0.0 && self.cens_rate.is_finite()) {
            return bad(format!("cens_rate must be positive, got {}", self.cens_rate));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.target_events == 0 || self.target_events > self.n {
            return bad(format!("target_events must be in 1..=n, got {}", self.target_events));
        }
        if !(self.enroll_per_month > 0.0) {
            return bad("enroll_per_month must be positive".into());
        }
        if !(self.visit_gap_days > 0.0) {
            return bad("visit_gap_days must be positive".into());
        }
        let (r1, r0) = self.randomization_ratio;
        if r1 == 0 || r0 == 0 {
            return bad("randomization_ratio entries must be positive".into());
        }
        Ok(())
    }

    /// Event hazard for covariate value `x` and arm `a`.
    pub fn hazard(&self, x: f64, a: bool) -> f64 {
        (self.gamma_x * x + if a { self.gamma_a } else { 0.0 }).exp()
    }

    /// Number of subjects allocated to treatment under blocked randomization.
    pub fn n_treated(&self) -> usize {
        let (r1, r0) = self.randomization_ratio;
        let frac = f64::from(r1) / f64::from(r1 + r0);
        (self.n as f64 * frac).round() as usize
    }
}

/// Draw one exponential event time for covariate `x` and arm `a`.
pub fn sample_event_time<R: Rng + ?Sized>(cfg: &ScenarioConfig, x: f64, a: bool, rng: &mut R) -> f64 {
    Exp::new(cfg.hazard(x, a)).expect("positive hazard").sample(rng)
}

struct Latent {
    x: f64,
    b: [f64; 2],
    t: f64,
    c: f64,
    y0: f64,
    eps: Vec<f64>,
}

/// Simulate one trial from `cfg`. Identical `(cfg, seed)` give a
/// bitwise-identical dataset: allocation and each subject draw from their own
/// generator streams.
pub fn generate_trial(cfg: &ScenarioConfig, seed: u64) -> Result<TrialDataset> {
    cfg.validate()?;
    let n = cfg.n;

    let mut arms = vec![false; n];
    arms[..cfg.n_treated()].fill(true);
    arms.shuffle(&mut stream_rng(seed, "allocation", 0));

    let x_dist = Normal::new(cfg.x_mean, cfg.x_var.sqrt()).expect("validated");
    let b1_dist = Normal::new(cfg.b1_mean, cfg.b1_var.sqrt()).expect("validated");
    let b2_dist = Normal::new(cfg.b2_mean, cfg.b2_var.sqrt()).expect("validated");
    let y0_dist = Normal::new(cfg.y0_mean, cfg.y0_var.sqrt()).expect("validated");
    let eps_dist = Normal::new(0.0, cfg.sigma2_eps.sqrt()).expect("validated");
    let cens_dist = Exp::new(cfg.cens_rate).expect("validated");

    let latent: Vec<Latent> = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, "subject", i as u64);
            let x = x_dist.sample(&mut rng);
            let b = [b1_dist.sample(&mut rng), b2_dist.sample(&mut rng)];
            let t = sample_event_time(cfg, x, arms[i], &mut rng);
            let c = cens_dist.sample(&mut rng);
            let y0 = y0_dist.sample(&mut rng);
            let eps = (0..cfg.max_visits).map(|_| eps_dist.sample(&mut rng)).collect();
            Latent { x, b, t, c, y0, eps }
        })
        .collect();

    let gap = DAYS_PER_MONTH / cfg.enroll_per_month;
    let enroll: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();

    let mut event_calendar: Vec<f64> = latent
        .iter()
        .zip(&enroll)
        .filter(|(s, _)| s.t < s.c)
        .map(|(s, e)| e + s.t)
        .collect();
    if event_calendar.is_empty() {
        return Err(Error::NoEvents);
    }
    event_calendar.sort_by(f64::total_cmp);
    let stop = if event_calendar.len() >= cfg.target_events {
        event_calendar[cfg.target_events - 1]
    } else {
        latent
            .iter()
            .zip(&enroll)
            .map(|(s, e)| e + s.t.min(s.c))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut subjects = Vec::with_capacity(n);
    for (i, (lat, &e)) in latent.iter().zip(&enroll).enumerate() {
        let mut l = (stop - e).max(0.0);
        if lat.t < lat.c && e + lat.t <= stop {
            // Guard the triggering event against rounding in `stop - e`.
            l = l.max(lat.t);
        }
        let delta = lat.t < lat.c && lat.t <= l;
        let s = if delta { lat.t } else { lat.c.min(l) };
        let a = arms[i];
        let level = cfg.beta_x * lat.x + if a { cfg.beta_a } else { 0.0 };
        let (visit_times, y): (Vec<f64>, Vec<f64>) = (1..=cfg.max_visits)
            .map(|j| j as f64 * cfg.visit_gap_days)
            .take_while(|&t| t < s)
            .zip(&lat.eps)
            .map(|(t, eps)| {
                let psi = match cfg.psi_reference {
                    PsiReference::Observed => t / s,
                    PsiReference::Event => t / lat.t,
                };
                (t, level + lat.b[0] * psi + lat.b[1] * psi * psi + eps)
            })
            .unzip();
        subjects.push(SubjectRecord {
            id: i as u64 + 1,
            x: vec![lat.x],
            a,
            enroll_time: e,
            y0: lat.y0,
            visit_times,
            y,
            s,
            delta,
            l,
        });
    }

    Ok(TrialDataset {
        subjects,
        scenario: cfg.clone(),
        seed,
        truth: Some(TrueState {
            t_true: latent.iter().map(|s| s.t).collect(),
            c_true: latent.iter().map(|s| s.c).collect(),
            b: latent.iter().map(|s| s.b).collect(),
        }),
    })
}

/// Required number of events for a two-arm log-rank / proportional-hazards
/// comparison:
///
/// `ceil((z_{1-alpha/2} + z_power)^2 / (p1 * p0 * ln(hr)^2))`
///
/// where `p1`, `p0` are the allocation fractions.
pub fn schoenfeld_events(hr: f64, power: f64, alpha_two_sided: f64, alloc: (f64, f64)) -> Result<u64> {
    if !(hr > 0.0 && hr < 1.0) {
        return Err(Error::InvalidInput(format!("hazard ratio must be in (0, 1), got {hr}")));
    }
    if !(power > 0.0 && power < 1.0) {
        return Err(Error::InvalidInput(format!("power must be in (0, 1), got {power}")));
    }
    if !(alpha_two_sided > 0.0 && alpha_two_sided < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be in (0, 1), got {alpha_two_sided}"
        )));
    }
    let (w1, w0) = alloc;
    if !(w1 > 0.0 && w0 > 0.0) {
        return Err(Error::InvalidInput("allocation weights must be positive".into()));
    }
    let p1 = w1 / (w1 + w0);
    let p0 = 1.0 - p1;
    let z = StdNormal::standard();
    let za = z.inverse_cdf(1.0 - alpha_two_sided / 2.0);
    let zb = z.inverse_cdf(power);
    let d = (za + zb).powi(2) / (p1 * p0 * hr.ln().powi(2));
    if !d.is_finite() || d >= u64::MAX as f64 {
        return Err(Error::InvalidInput(format!(
            "required events overflow at hazard ratio {hr}"
        )));
    }
    Ok(d.ceil() as u64)
}
