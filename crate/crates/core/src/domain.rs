//! Observed-data and parameter types shared across the crate.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::datagen::ScenarioConfig;

/// One patient's baseline data, tumor-burden series, and survival outcome.
///
/// Times are in days from randomization. `visit_times`/`y` hold the
/// post-baseline visits only; the baseline measurement lives in `y0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: u64,
    pub x: Vec<f64>,
    /// Treatment arm indicator.
    pub a: bool,
    pub enroll_time: f64,
    pub y0: f64,
    pub visit_times: Vec<f64>,
    pub y: Vec<f64>,
    /// Observed time: the event time when `delta`, otherwise a censoring time.
    pub s: f64,
    pub delta: bool,
    /// Follow-up from randomization to the analysis.
    pub l: f64,
}

impl SubjectRecord {
    pub fn arm(&self) -> usize {
        usize::from(self.a)
    }

    pub fn a_f64(&self) -> f64 {
        if self.a {
            1.0
        } else {
            0.0
        }
    }

    pub fn n_visits(&self) -> usize {
        self.visit_times.len()
    }
}

/// Latent simulation truth, present only for generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueState {
    pub t_true: Vec<f64>,
    pub c_true: Vec<f64>,
    pub b: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub subjects: Vec<SubjectRecord>,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub truth: Option<TrueState>,
}

impl TrialDataset {
    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Number of baseline covariates (0 for an empty dataset).
    pub fn n_covariates(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.x.len())
    }

    /// Indices of censored subjects, in dataset order. This is also the
    /// order of augmented event times in [`ModelParams::t_miss`].
    pub fn censored_indices(&self) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.delta)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.delta).count()
    }

    pub fn arm_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for s in &self.subjects {
            c[s.arm()] += 1;
        }
        c
    }
}

/// One point in the joint parameter space, on the constrained scale.
///
/// The random-effects covariance is held as two standard deviations and a
/// correlation so that it is positive definite whenever `|rho_b| < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma_a: f64,
    pub gamma_x: Vec<f64>,
    pub beta_a: f64,
    pub beta_x: Vec<f64>,
    /// Per-subject random effects `(b1, b2)`.
    pub b: Vec<[f64; 2]>,
    pub b_mu: [f64; 2],
    pub sigma_b: [f64; 2],
    pub rho_b: f64,
    /// Residual variance.
    pub sigma2: f64,
    /// Augmented event times, one per censored subject in dataset order.
    pub t_miss: Vec<f64>,
}

impl ModelParams {
    /// Check the parameter invariants against `ds`; returns one message per
    /// violation.
    pub fn violations(&self, ds: &TrialDataset) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.sigma2 > 0.0) {
            out.push(format!("sigma2 = {} is not positive", self.sigma2));
        }
        if !(self.sigma_b[0] > 0.0 && self.sigma_b[1] > 0.0) {
            out.push(format!("sigma_b = {:?} is not positive", self.sigma_b));
        }
        if !(self.rho_b.abs() < 1.0) {
            out.push(format!("rho_b = {} outside (-1, 1)", self.rho_b));
        }
        let cens = ds.censored_indices();
        if cens.len() != self.t_miss.len() {
            out.push(format!(
                "{} augmented event times for {} censored subjects",
                self.t_miss.len(),
                cens.len()
            ));
        } else {
            for (&i, &t) in cens.iter().zip(&self.t_miss) {
                if !(t > ds.subjects[i].s) {
                    out.push(format!(
                        "subject {}: augmented event time {} not above observed time {}",
                        ds.subjects[i].id, t, ds.subjects[i].s
                    ));
                }
            }
        }
        out
    }

    /// Event time used by this draw for subject `i`: the observed time for
    /// events, the augmented time for censored subjects.
    pub fn event_time(&self, ds: &TrialDataset, cens_pos: &[Option<usize>], i: usize) -> f64 {
        match cens_pos[i] {
            Some(m) => self.t_miss[m],
            None => ds.subjects[i].s,
        }
    }
}

/// Map from subject index to position in `t_miss` (None for event subjects).
pub fn censored_positions(ds: &TrialDataset) -> Vec<Option<usize>> {
    let mut m = 0;
    ds.subjects
        .iter()
        .map(|s| {
            if s.delta {
                None
            } else {
                m += 1;
                Some(m - 1)
            }
        })
        .collect()
}

/// Per-draw sampler metadata.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DrawStats {
    pub accept_prob: f64,
    pub accepted: bool,
    pub divergent: bool,
    pub energy: f64,
    pub step_size: f64,
}

/// Retained posterior draws, stored column-wise: each field holds the values
/// of one parameter block for every draw, draw-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub n_subjects: usize,
    pub n_covariates: usize,
    /// Subject indices matching the columns of `t_miss`.
    pub censored: Vec<usize>,
    pub gamma_a: Vec<f64>,
    pub gamma_x: Vec<f64>,
    pub beta_a: Vec<f64>,
    pub beta_x: Vec<f64>,
    /// `q * n_subjects * 2` values, or empty when random effects were not kept.
    pub b: Vec<f64>,
    pub b_mu: Vec<[f64; 2]>,
    pub sigma_b: Vec<[f64; 2]>,
    pub rho_b: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub t_miss: Vec<f64>,
    /// Chain index of each draw.
    pub chain: Vec<u32>,
    pub stats: Vec<DrawStats>,
}

impl PosteriorDraws {
    pub fn new(n_subjects: usize, n_covariates: usize, censored: Vec<usize>) -> Self {
        PosteriorDraws {
            n_subjects,
            n_covariates,
            censored,
            ..Default::default()
        }
    }

    pub fn q(&self) -> usize {
        self.gamma_a.len()
    }

    pub fn has_random_effects(&self) -> bool {
        self.q() == 0 || self.b.len() == self.q() * self.n_subjects * 2
    }

    pub fn push(&mut self, p: &ModelParams, stats: DrawStats, chain: u32) {
        self.gamma_a.push(p.gamma_a);
        self.gamma_x.extend_from_slice(&p.gamma_x);
        self.beta_a.push(p.beta_a);
        self.beta_x.extend_from_slice(&p.beta_x);
        for bi in &p.b {
            self.b.extend_from_slice(bi);
        }
        self.b_mu.push(p.b_mu);
        self.sigma_b.push(p.sigma_b);
        self.rho_b.push(p.rho_b);
        self.sigma2.push(p.sigma2);
        self.t_miss.extend_from_slice(&p.t_miss);
        self.chain.push(chain);
        self.stats.push(stats);
    }

    /// Append all draws of `other` (same model shape).
    pub fn append(&mut self, other: PosteriorDraws) {
        self.gamma_a.extend(other.gamma_a);
        self.gamma_x.extend(other.gamma_x);
        self.beta_a.extend(other.beta_a);
        self.beta_x.extend(other.beta_x);
        self.b.extend(other.b);
        self.b_mu.extend(other.b_mu);
        self.sigma_b.extend(other.sigma_b);
        self.rho_b.extend(other.rho_b);
        self.sigma2.extend(other.sigma2);
        self.t_miss.extend(other.t_miss);
        self.chain.extend(other.chain);
        self.stats.extend(other.stats);
    }

    /// Reassemble draw `q` as a [`ModelParams`].
    pub fn draw(&self, q: usize) -> ModelParams {
        let k = self.n_covariates;
        let n = self.n_subjects;
        let m = self.censored.len();
        let b = if self.b.is_empty() {
            Vec::new()
        } else {
            self.b[q * n * 2..(q + 1) * n * 2]
                .chunks_exact(2)
                .map(|c| [c[0], c[1]])
                .collect()
        };
        ModelParams {
            gamma_a: self.gamma_a[q],
            gamma_x: self.gamma_x[q * k..(q + 1) * k].to_vec(),
            beta_a: self.beta_a[q],
            beta_x: self.beta_x[q * k..(q + 1) * k].to_vec(),
            b,
            b_mu: self.b_mu[q],
            sigma_b: self.sigma_b[q],
            rho_b: self.rho_b[q],
            sigma2: self.sigma2[q],
            t_miss: self.t_miss[q * m..(q + 1) * m].to_vec(),
        }
    }

    pub fn random_effect(&self, q: usize, i: usize) -> [f64; 2] {
        let o = (q * self.n_subjects + i) * 2;
        [self.b[o], self.b[o + 1]]
    }

    pub fn t_miss_at(&self, q: usize, m: usize) -> f64 {
        self.t_miss[q * self.censored.len() + m]
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.stats.is_empty() {
            return 0.0;
        }
        self.stats.iter().map(|s| s.accept_prob).sum::<f64>() / self.stats.len() as f64
    }
}

/// Check every dataset invariant. Returns an empty list when the dataset is
/// well formed, otherwise one message per violation.
pub fn validate_dataset(ds: &TrialDataset) -> Vec<String> {
    const TOL: f64 = 1e-9;
    let mut out = Vec::new();
    let k = ds.n_covariates();
    let mut ids = HashSet::new();

    for s in &ds.subjects {
        let tag = |msg: &str| format!("subject {}: {msg}", s.id);
        if !ids.insert(s.id) {
            out.push(tag("duplicate id"));
        }
        if s.x.len() != k {
            out.push(tag(&format!("{} covariates, expected {k}", s.x.len())));
        }
        let finite = s.x.iter().chain(&s.y).chain(&s.visit_times).all(|v| v.is_finite())
            && [s.enroll_time, s.y0, s.s, s.l].iter().all(|v| v.is_finite());
        if !finite {
            out.push(tag("non-finite value"));
        }
        if s.visit_times.len() != s.y.len() {
            out.push(tag("visit times and measurements differ in length"));
        }
        if s.visit_times.windows(2).any(|w| !(w[1] > w[0])) {
            out.push(tag("visit times not strictly increasing"));
        }
        if s.visit_times.iter().any(|&t| !(t > 0.0)) {
            out.push(tag("visit time not positive"));
        }
        if s.visit_times.iter().any(|&t| !(t < s.s)) {
            out.push(tag("visit time not before s"));
        }
        if s.visit_times.iter().any(|&t| t > s.l) {
            out.push(tag("visit time exceeds l"));
        }
        if s.s < 0.0 {
            out.push(tag("s is negative"));
        }
        if s.l < 0.0 {
            out.push(tag("l is negative"));
        }
        if s.s > s.l {
            out.push(tag("s exceeds l"));
        }
    }
    let [n0, n1] = ds.arm_counts();
    if n0 + n1 != ds.n() {
        out.push("arm counts do not sum to N".to_string());
    }

    if let Some(tr) = &ds.truth {
        let n = ds.n();
        if tr.t_true.len() != n || tr.c_true.len() != n || tr.b.len() != n {
            out.push("truth vectors do not match subject count".to_string());
        } else {
            for (i, s) in ds.subjects.iter().enumerate() {
                let (t, c) = (tr.t_true[i], tr.c_true[i]);
                let m = t.min(c).min(s.l);
                if (s.s - m).abs() > TOL * (1.0 + m.abs()) {
                    out.push(format!("subject {}: s != min(T, C, L)", s.id));
                }
                // The subject whose event triggers the analysis has T == L.
                let event = t <= c.min(s.l);
                if event != s.delta {
                    out.push(format!("subject {}: event flag inconsistent with truth", s.id));
                }
            }
        }
    }
    out
}
