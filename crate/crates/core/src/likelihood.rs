//! Joint log-posterior of the survival and longitudinal sub-models.
//!
//! Survival: `T_i ~ Exponential(lambda_i)`, `log lambda_i = gamma_a a_i + gamma_x . x_i`.
//! Longitudinal, given `T_i`:
//! `Y_ij ~ Normal(beta_x . x_i + beta_a a_i + b1_i psi_ij + b2_i psi_ij^2, sigma2)`
//! with `psi_ij = t_ij / T_i` and `(b1_i, b2_i) ~ MVN(b_mu, Sigma)`.
//!
//! Censored subjects carry their event time as a parameter `t_miss_i > s_i`,
//! so the censored-subject integral is never evaluated; every subject
//! contributes a complete-data density.
//!
//! The sampler works on an unconstrained vector laid out as
//!
//! ```text
//! gamma_a | gamma_x[k] | beta_a | beta_x[k] | b[n][2] | b_mu[2]
//!   | log sigma_b[2] | atanh rho_b | log sigma2 | log(t_miss - s)[m]
//! ```

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::domain::{censored_positions, ModelParams, TrialDataset};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Flat unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedVector(pub Vec<f64>);

impl UnconstrainedVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Prior scales. Regression coefficients and hypermeans get zero-mean
/// normals, standard deviations get half-normals, and the random-effect
/// correlation is uniform on (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    /// SD of the normal prior on `gamma_a`, `gamma_x`, `beta_a`, `beta_x`.
    pub coef_sd: f64,
    /// SD of the normal prior on `b_mu`.
    pub b_mu_sd: f64,
    /// Half-normal scale for each random-effect SD.
    pub sigma_b_scale: f64,
    /// Half-normal scale for the residual SD `sqrt(sigma2)`.
    pub sigma_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            coef_sd: 10.0,
            b_mu_sd: 20.0,
            sigma_b_scale: 5.0,
            sigma_scale: 5.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("coef_sd", self.coef_sd),
            ("b_mu_sd", self.b_mu_sd),
            ("sigma_b_scale", self.sigma_b_scale),
            ("sigma_scale", self.sigma_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Offsets of each parameter block in the unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub k: usize,
    pub n: usize,
    /// Subject indices of censored subjects, in `t_miss` order.
    pub censored: Vec<usize>,
    /// Observed times of censored subjects (the lower bounds of `t_miss`).
    pub cens_s: Vec<f64>,
}

impl Layout {
    pub fn new(ds: &TrialDataset) -> Self {
        let censored = ds.censored_indices();
        let cens_s = censored.iter().map(|&i| ds.subjects[i].s).collect();
        Layout {
            k: ds.n_covariates(),
            n: ds.n(),
            censored,
            cens_s,
        }
    }

    pub fn gamma_a(&self) -> usize {
        0
    }
    pub fn gamma_x(&self) -> usize {
        1
    }
    pub fn beta_a(&self) -> usize {
        1 + self.k
    }
    pub fn beta_x(&self) -> usize {
        2 + self.k
    }
    pub fn b(&self) -> usize {
        2 + 2 * self.k
    }
    pub fn b_mu(&self) -> usize {
        self.b() + 2 * self.n
    }
    pub fn log_sigma_b(&self) -> usize {
        self.b_mu() + 2
    }
    pub fn atanh_rho(&self) -> usize {
        self.log_sigma_b() + 2
    }
    pub fn log_sigma2(&self) -> usize {
        self.atanh_rho() + 1
    }
    pub fn tau(&self) -> usize {
        self.log_sigma2() + 1
    }
    pub fn dim(&self) -> usize {
        self.tau() + self.censored.len()
    }

    /// Map constrained parameters to the unconstrained vector.
    pub fn pack(&self, p: &ModelParams) -> UnconstrainedVector {
        let mut v = Vec::with_capacity(self.dim());
        v.push(p.gamma_a);
        v.extend_from_slice(&p.gamma_x);
        v.push(p.beta_a);
        v.extend_from_slice(&p.beta_x);
        for b in &p.b {
            v.extend_from_slice(b);
        }
        v.extend_from_slice(&p.b_mu);
        v.push(p.sigma_b[0].ln());
        v.push(p.sigma_b[1].ln());
        v.push(p.rho_b.atanh());
        v.push(p.sigma2.ln());
        v.extend(p.t_miss.iter().zip(&self.cens_s).map(|(t, s)| (t - s).ln()));
        debug_assert_eq!(v.len(), self.dim());
        UnconstrainedVector(v)
    }

    /// Map an unconstrained vector back to constrained parameters.
    pub fn unpack(&self, theta: &[f64]) -> ModelParams {
        let k = self.k;
        ModelParams {
            gamma_a: theta[self.gamma_a()],
            gamma_x: theta[self.gamma_x()..self.gamma_x() + k].to_vec(),
            beta_a: theta[self.beta_a()],
            beta_x: theta[self.beta_x()..self.beta_x() + k].to_vec(),
            b: theta[self.b()..self.b_mu()]
                .chunks_exact(2)
                .map(|c| [c[0], c[1]])
                .collect(),
            b_mu: [theta[self.b_mu()], theta[self.b_mu() + 1]],
            sigma_b: [theta[self.log_sigma_b()].exp(), theta[self.log_sigma_b() + 1].exp()],
            rho_b: theta[self.atanh_rho()].tanh(),
            sigma2: theta[self.log_sigma2()].exp(),
            t_miss: theta[self.tau()..]
                .iter()
                .zip(&self.cens_s)
                .map(|(tau, s)| s + tau.exp())
                .collect(),
        }
    }

    /// Names of every unconstrained coordinate, for diagnostics output.
    pub fn names(&self, ds: &TrialDataset) -> Vec<String> {
        let mut v = vec!["gamma_a".to_string()];
        v.extend((1..=self.k).map(|j| format!("gamma_x_{j}")));
        v.push("beta_a".into());
        v.extend((1..=self.k).map(|j| format!("beta_x_{j}")));
        for s in &ds.subjects {
            v.push(format!("b1_{}", s.id));
            v.push(format!("b2_{}", s.id));
        }
        v.extend(
            [
                "b_mu_1",
                "b_mu_2",
                "log_sigma_b_1",
                "log_sigma_b_2",
                "atanh_rho_b",
                "log_sigma2",
            ]
            .map(String::from),
        );
        v.extend(
            self.censored
                .iter()
                .map(|&i| format!("log_excess_t_{}", ds.subjects[i].id)),
        );
        v
    }
}

/// `log(1 - tanh(w)^2)` without cancellation.
fn log_sech2(w: f64) -> f64 {
    let a = w.abs();
    -2.0 * (a + (-2.0 * a).exp().ln_1p() - LN_2)
}

/// Log-density of the complete data given constrained parameters.
///
/// Event subjects use their observed time; censored subjects use the
/// augmented time from `xi.t_miss`. Returns an error when the result is not
/// finite.
pub fn log_likelihood(ds: &TrialDataset, xi: &ModelParams) -> Result<f64> {
    let cens = censored_positions(ds);
    if xi.t_miss.len() != ds.n() - ds.n_events() {
        return Err(Error::InvalidInput(format!(
            "{} augmented times for {} censored subjects",
            xi.t_miss.len(),
            ds.n() - ds.n_events()
        )));
    }
    if xi.b.len() != ds.n() {
        return Err(Error::InvalidInput(
            "one random-effect pair per subject required".into(),
        ));
    }
    let half_log_2pi_s2 = 0.5 * (LN_2PI + xi.sigma2.ln());
    let mut total = 0.0;
    for (i, s) in ds.subjects.iter().enumerate() {
        let eta = xi.gamma_a * s.a_f64() + dot(&xi.gamma_x, &s.x);
        let lambda = eta.exp();
        let t_event = xi.event_time(ds, &cens, i);
        total += eta - lambda * t_event;
        let level = xi.beta_a * s.a_f64() + dot(&xi.beta_x, &s.x);
        let [b1, b2] = xi.b[i];
        for (&t, &y) in s.visit_times.iter().zip(&s.y) {
            let psi = t / t_event;
            let r = y - (level + b1 * psi + b2 * psi * psi);
            total += -half_log_2pi_s2 - r * r / (2.0 * xi.sigma2);
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("log-likelihood".into()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-posterior target on the unconstrained scale, with the dataset
/// flattened for repeated evaluation.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    layout: Layout,
    prior: PriorSpec,
    x: Vec<f64>,
    a: Vec<f64>,
    s: Vec<f64>,
    /// Position in `t_miss` for censored subjects.
    cens: Vec<Option<usize>>,
    visit_start: Vec<usize>,
    t: Vec<f64>,
    y: Vec<f64>,
}

impl JointPosterior {
    pub fn new(ds: &TrialDataset, prior: PriorSpec) -> Self {
        let mut visit_start = Vec::with_capacity(ds.n() + 1);
        let mut t = Vec::new();
        let mut y = Vec::new();
        for s in &ds.subjects {
            visit_start.push(t.len());
            t.extend_from_slice(&s.visit_times);
            y.extend_from_slice(&s.y);
        }
        visit_start.push(t.len());
        JointPosterior {
            layout: Layout::new(ds),
            prior,
            x: ds.subjects.iter().flat_map(|s| s.x.iter().copied()).collect(),
            a: ds.subjects.iter().map(|s| s.a_f64()).collect(),
            s: ds.subjects.iter().map(|s| s.s).collect(),
            cens: censored_positions(ds),
            visit_start,
            t,
            y,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Log-posterior density (up to the data-independent normalizer of the
    /// likelihood, which is included) at `theta`.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.eval(theta, None)
    }

    /// Log-posterior density and its gradient; `grad` is overwritten.
    pub fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(theta, Some(grad))
    }

    fn eval(&self, th: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let lay = &self.layout;
        let k = lay.k;
        assert_eq!(th.len(), lay.dim(), "parameter vector length");
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }

        let gamma_a = th[lay.gamma_a()];
        let gamma_x = &th[lay.gamma_x()..lay.gamma_x() + k];
        let beta_a = th[lay.beta_a()];
        let beta_x = &th[lay.beta_x()..lay.beta_x() + k];
        let mu = [th[lay.b_mu()], th[lay.b_mu() + 1]];
        let log_sb = [th[lay.log_sigma_b()], th[lay.log_sigma_b() + 1]];
        let sb = [log_sb[0].exp(), log_sb[1].exp()];
        let w = th[lay.atanh_rho()];
        let rho = w.tanh();
        let log_d = log_sech2(w);
        let d = log_d.exp();
        let inv_d = 1.0 / d;
        let log_s2 = th[lay.log_sigma2()];
        let sigma2 = log_s2.exp();
        let inv_s2 = 1.0 / sigma2;
        let tau0 = lay.tau();

        let mut lp = 0.0;
        let mut n_visits = 0usize;
        let mut sse = 0.0;
        let mut d_rho = 0.0;
        let re_norm = -LN_2PI - log_sb[0] - log_sb[1] - 0.5 * log_d;

        for i in 0..lay.n {
            let xi = &self.x[i * k..(i + 1) * k];
            let a = self.a[i];
            let eta = gamma_a * a + dot(gamma_x, xi);
            let lambda = eta.exp();
            let (t_event, excess) = match self.cens[i] {
                Some(m) => {
                    let e = th[tau0 + m].exp();
                    (self.s[i] + e, e)
                }
                None => (self.s[i], 0.0),
            };
            lp += eta - lambda * t_event;

            let level = beta_a * a + dot(beta_x, xi);
            let bi = lay.b() + 2 * i;
            let (b1, b2) = (th[bi], th[bi + 1]);
            let inv_t = 1.0 / t_event;
            let range = self.visit_start[i]..self.visit_start[i + 1];
            n_visits += range.len();

            let z1 = (b1 - mu[0]) / sb[0];
            let z2 = (b2 - mu[1]) / sb[1];
            let quad = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2;
            lp += re_norm - 0.5 * quad * inv_d;

            match grad.as_deref_mut() {
                None => {
                    for j in range {
                        let psi = self.t[j] * inv_t;
                        let r = self.y[j] - (level + b1 * psi + b2 * psi * psi);
                        sse += r * r;
                    }
                }
                Some(g) => {
                    let mut d_level = 0.0;
                    let mut d_b1 = 0.0;
                    let mut d_b2 = 0.0;
                    let mut d_t = -lambda;
                    for j in range {
                        let psi = self.t[j] * inv_t;
                        let psi2 = psi * psi;
                        let r = self.y[j] - (level + b1 * psi + b2 * psi2);
                        sse += r * r;
                        let wr = r * inv_s2;
                        d_level += wr;
                        d_b1 += wr * psi;
                        d_b2 += wr * psi2;
                        d_t -= wr * (b1 + 2.0 * b2 * psi) * psi * inv_t;
                    }
                    let d_eta = 1.0 - lambda * t_event;
                    g[lay.gamma_a()] += d_eta * a;
                    g[lay.beta_a()] += d_level * a;
                    for c in 0..k {
                        g[lay.gamma_x() + c] += d_eta * xi[c];
                        g[lay.beta_x() + c] += d_level * xi[c];
                    }
                    if let Some(m) = self.cens[i] {
                        // chain rule through t = s + exp(tau), plus log-Jacobian tau
                        g[tau0 + m] += d_t * excess + 1.0;
                    }
                    let u1 = (z1 - rho * z2) * inv_d;
                    let u2 = (z2 - rho * z1) * inv_d;
                    g[bi] += d_b1 - u1 / sb[0];
                    g[bi + 1] += d_b2 - u2 / sb[1];
                    g[lay.b_mu()] += u1 / sb[0];
                    g[lay.b_mu() + 1] += u2 / sb[1];
                    g[lay.log_sigma_b()] += -1.0 + z1 * u1;
                    g[lay.log_sigma_b() + 1] += -1.0 + z2 * u2;
                    d_rho += rho * inv_d + z1 * z2 * inv_d - rho * quad * inv_d * inv_d;
                }
            }
            if self.cens[i].is_some() {
                lp += excess.ln();
            }
        }
        lp += -0.5 * n_visits as f64 * (LN_2PI + log_s2) - 0.5 * sse * inv_s2;

        // Priors and remaining Jacobian terms.
        let pr = &self.prior;
        let coef_norm = -0.5 * LN_2PI - pr.coef_sd.ln();
        let coef_prec = 1.0 / (pr.coef_sd * pr.coef_sd);
        let coef_idx = std::iter::once(lay.gamma_a())
            .chain(lay.gamma_x()..lay.gamma_x() + k)
            .chain(std::iter::once(lay.beta_a()))
            .chain(lay.beta_x()..lay.beta_x() + k);
        for c in coef_idx {
            lp += coef_norm - 0.5 * th[c] * th[c] * coef_prec;
            if let Some(g) = grad.as_deref_mut() {
                g[c] -= th[c] * coef_prec;
            }
        }
        let mu_prec = 1.0 / (pr.b_mu_sd * pr.b_mu_sd);
        for c in 0..2 {
            let v = mu[c];
            lp += -0.5 * LN_2PI - pr.b_mu_sd.ln() - 0.5 * v * v * mu_prec;
            if let Some(g) = grad.as_deref_mut() {
                g[lay.b_mu() + c] -= v * mu_prec;
            }
        }
        let half_normal_norm = |scale: f64| LN_2 - 0.5 * LN_2PI - scale.ln();
        let sb_prec = 1.0 / (pr.sigma_b_scale * pr.sigma_b_scale);
        for c in 0..2 {
            lp += half_normal_norm(pr.sigma_b_scale) - 0.5 * sb[c] * sb[c] * sb_prec + log_sb[c];
            if let Some(g) = grad.as_deref_mut() {
                g[lay.log_sigma_b() + c] += -sb[c] * sb[c] * sb_prec + 1.0;
            }
        }
        let s_prec = 1.0 / (pr.sigma_scale * pr.sigma_scale);
        // sigma = exp(log_s2 / 2); Jacobian d sigma / d log_s2 = sigma / 2
        lp += half_normal_norm(pr.sigma_scale) - 0.5 * sigma2 * s_prec + 0.5 * log_s2 - LN_2;
        // uniform(-1, 1) on rho, Jacobian 1 - rho^2
        lp += -LN_2 + log_d;
        if let Some(g) = grad {
            g[lay.log_sigma2()] += -0.5 * n_visits as f64 + 0.5 * sse * inv_s2 - 0.5 * sigma2 * s_prec + 0.5;
            g[lay.atanh_rho()] += d_rho * d - 2.0 * rho;
        }
        lp
    }
}

/// Log-posterior at `theta_u` for dataset `ds`.
pub fn log_posterior(ds: &TrialDataset, theta_u: &UnconstrainedVector, prior: &PriorSpec) -> Result<f64> {
    let post = JointPosterior::new(ds, *prior);
    check_len(&post, theta_u)?;
    let lp = post.log_density(&theta_u.0);
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(Error::NonFinite("log-posterior".into()))
    }
}

/// Gradient of [`log_posterior`] with respect to `theta_u`.
pub fn grad_log_posterior(ds: &TrialDataset, theta_u: &UnconstrainedVector, prior: &PriorSpec) -> Result<Vec<f64>> {
    let post = JointPosterior::new(ds, *prior);
    check_len(&post, theta_u)?;
    let mut g = vec![0.0; post.dim()];
    let lp = post.log_density_and_grad(&theta_u.0, &mut g);
    if lp.is_finite() && g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(Error::NonFinite("log-posterior gradient".into()))
    }
}

fn check_len(post: &JointPosterior, theta: &UnconstrainedVector) -> Result<()> {
    if theta.0.len() != post.dim() {
        return Err(Error::InvalidInput(format!(
            "parameter vector has length {}, expected {}",
            theta.0.len(),
            post.dim()
        )));
    }
    if theta.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter vector".into()));
    }
    Ok(())
}
