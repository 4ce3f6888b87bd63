//! Utility-curve endpoints.
//!
//! Before its event time a subject's utility is the mean tumor-burden
//! trajectory; after it, a constant penalty `gamma_utility`. Integrating up
//! to the follow-up horizon `L` splits into a tumor-burden area (TBAUC) and a
//! survival area (SAUC), both in closed form. Kaplan-Meier curves and
//! restricted mean survival time are provided for descriptive output.

use crate::domain::{censored_positions, ModelParams, PosteriorDraws, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};

/// Fixed-effect level `beta_x . x + beta_a a` of a subject.
fn level(xi: &ModelParams, s: &SubjectRecord) -> f64 {
    xi.beta_x.iter().zip(&s.x).map(|(b, x)| b * x).sum::<f64>() + xi.beta_a * s.a_f64()
}

/// Mean trajectory of subject `i` at time `t` under draw `xi`:
/// `level + b1 psi + b2 psi^2` with `psi = t / T`, `T` the draw's event time.
pub fn mean_trajectory(xi: &ModelParams, ds: &TrialDataset, i: usize, t: f64) -> Result<f64> {
    let s = &ds.subjects[i];
    let t_event = xi.event_time(ds, &censored_positions(ds), i);
    if !(t >= 0.0 && t <= t_event) {
        return Err(Error::InvalidInput(format!(
            "trajectory time {t} outside [0, {t_event}] for subject {}",
            s.id
        )));
    }
    let psi = t / t_event;
    let b = xi.b[i];
    Ok(level(xi, s) + b[0] * psi + b[1] * psi * psi)
}

/// Area under `level + b1 (t/T) + b2 (t/T)^2` on `[0, min(L, T)]`.
pub fn tbauc_closed(level: f64, b: [f64; 2], t_event: f64, l: f64) -> Result<f64> {
    if !(t_event > 0.0) {
        return Err(Error::InvalidInput(format!(
            "event time must be positive, got {t_event}"
        )));
    }
    let m = l.min(t_event);
    Ok(m * level + b[0] * m * m / (2.0 * t_event) + b[1] * m * m * m / (3.0 * t_event * t_event))
}

/// Tumor-burden area of subject `i` under draw `xi`.
pub fn tbauc(xi: &ModelParams, ds: &TrialDataset, i: usize) -> Result<f64> {
    let s = &ds.subjects[i];
    let t_event = xi.event_time(ds, &censored_positions(ds), i);
    tbauc_closed(level(xi, s), xi.b[i], t_event, s.l)
}

/// Post-event penalty area `gamma (L - T)` when `T < L`, else 0.
pub fn sauc(t_event: f64, l: f64, gamma_utility: f64) -> f64 {
    if t_event < l {
        gamma_utility * (l - t_event)
    } else {
        0.0
    }
}

/// Per-draw, per-subject endpoint values, stored draw-major (`q * n + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDraws {
    pub n_subjects: usize,
    pub tbauc: Vec<f64>,
    pub sauc: Vec<f64>,
    pub u: Vec<f64>,
    pub gamma_utility: f64,
    pub l: Vec<f64>,
}

impl EndpointDraws {
    pub fn q(&self) -> usize {
        self.u.len().checked_div(self.n_subjects).unwrap_or(0)
    }

    /// Row of draw `q` for the requested area.
    pub fn row(&self, kind: crate::inference::AucKind, q: usize) -> &[f64] {
        use crate::inference::AucKind;
        let n = self.n_subjects;
        let m = match kind {
            AucKind::Tb => &self.tbauc,
            AucKind::S => &self.sauc,
            AucKind::Total => &self.u,
        };
        &m[q * n..(q + 1) * n]
    }
}

/// Evaluate TBAUC, SAUC and their sum for every draw and subject. Event
/// subjects keep their observed time; censored subjects use the draw's
/// augmented time.
pub fn compute_endpoints(ds: &TrialDataset, draws: &PosteriorDraws, gamma_utility: f64) -> Result<EndpointDraws> {
    let n = ds.n();
    let k = ds.n_covariates();
    if draws.n_subjects != n || draws.n_covariates != k {
        return Err(Error::InvalidInput(format!(
            "draws are for {} subjects / {} covariates, dataset has {n} / {k}",
            draws.n_subjects, draws.n_covariates
        )));
    }
    if draws.censored != ds.censored_indices() {
        return Err(Error::InvalidInput(
            "draws do not match the dataset's censored subjects".into(),
        ));
    }
    if draws.q() > 0 && draws.b.len() != draws.q() * n * 2 {
        return Err(Error::InvalidInput("draws lack per-subject random effects".into()));
    }
    if !gamma_utility.is_finite() {
        return Err(Error::InvalidInput(format!(
            "gamma_utility must be finite, got {gamma_utility}"
        )));
    }
    let cens = censored_positions(ds);
    let q_total = draws.q();
    let mut out = EndpointDraws {
        n_subjects: n,
        tbauc: Vec::with_capacity(q_total * n),
        sauc: Vec::with_capacity(q_total * n),
        u: Vec::with_capacity(q_total * n),
        gamma_utility,
        l: ds.subjects.iter().map(|s| s.l).collect(),
    };
    for q in 0..q_total {
        let beta_x = &draws.beta_x[q * k..(q + 1) * k];
        let beta_a = draws.beta_a[q];
        for (i, s) in ds.subjects.iter().enumerate() {
            let lv = beta_x.iter().zip(&s.x).map(|(b, x)| b * x).sum::<f64>() + beta_a * s.a_f64();
            let t_event = match cens[i] {
                Some(m) => draws.t_miss_at(q, m),
                None => s.s,
            };
            let tb = tbauc_closed(lv, draws.random_effect(q, i), t_event, s.l)?;
            let sa = sauc(t_event, s.l, gamma_utility);
            out.tbauc.push(tb);
            out.sauc.push(sa);
            out.u.push(tb + sa);
        }
    }
    Ok(out)
}

/// Replace each measurement by its relative change from baseline,
/// `(y - y0) / y0`. Applying it twice does not undo it.
pub fn percent_change_transform(ds: &TrialDataset) -> Result<TrialDataset> {
    let mut out = ds.clone();
    for s in &mut out.subjects {
        if s.y0 == 0.0 || !s.y0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "subject {}: baseline y0 = {} cannot be a divisor",
                s.id, s.y0
            )));
        }
        let y0 = s.y0;
        s.y.iter_mut().for_each(|y| *y = (*y - y0) / y0);
    }
    Ok(out)
}

/// Product-limit survival estimate. Entry `j` describes the distinct event
/// time `time[j]`; survival is right-continuous and equals 1 before the
/// first event.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeier {
    pub time: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub n: usize,
}

impl KaplanMeier {
    /// Survival probability at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        match self.time.iter().rposition(|&x| x <= t) {
            Some(j) => self.survival[j],
            None => 1.0,
        }
    }
}

/// Kaplan-Meier estimate from `(time, event)` pairs. Subjects censored at an
/// event time count as at risk at that time.
pub fn kaplan_meier_from(obs: &[(f64, bool)]) -> Result<KaplanMeier> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("Kaplan-Meier needs at least one subject".into()));
    }
    let mut sorted = obs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let mut km = KaplanMeier {
        time: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        n,
    };
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let at_risk = n - i;
        let mut d = 0;
        let mut j = i;
        while j < n && sorted[j].0 == t {
            d += usize::from(sorted[j].1);
            j += 1;
        }
        if d > 0 {
            surv *= 1.0 - d as f64 / at_risk as f64;
            km.time.push(t);
            km.survival.push(surv);
            km.at_risk.push(at_risk);
            km.events.push(d);
        }
        i = j;
    }
    Ok(km)
}

/// Kaplan-Meier estimate on the observed `(s, delta)` of `ds`.
pub fn kaplan_meier(ds: &TrialDataset) -> Result<KaplanMeier> {
    let obs: Vec<(f64, bool)> = ds.subjects.iter().map(|s| (s.s, s.delta)).collect();
    kaplan_meier_from(&obs)
}

/// Restricted mean survival time: area under the KM step function on
/// `[0, t_star]`.
pub fn rmst(km: &KaplanMeier, t_star: f64) -> Result<f64> {
    if !(t_star >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "t_star must be non-negative, got {t_star}"
        )));
    }
    let mut area = 0.0;
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    for (&t, &s) in km.time.iter().zip(&km.survival) {
        if t >= t_star {
            break;
        }
        area += prev_s * (t - prev_t);
        prev_t = t;
        prev_s = s;
    }
    Ok(area + prev_s * (t_star - prev_t))
}
