//! Cheap moment fits used to start the sampler near the posterior bulk.

use nalgebra::{DMatrix, DVector};

use crate::domain::TrialDataset;

const MIN_SIGMA_B: f64 = 0.05;
const MIN_SIGMA2: f64 = 1e-4;

/// Point estimates from exponential regression and least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFit {
    pub gamma_a: f64,
    pub gamma_x: Vec<f64>,
    pub beta_a: f64,
    pub beta_x: Vec<f64>,
    pub b_mu: [f64; 2],
    /// Per-subject random-effect estimates; `b_mu` for subjects whose curve
    /// was not fitted (too few visits, or censored when event subjects
    /// suffice).
    pub b: Vec<[f64; 2]>,
    pub sigma_b: [f64; 2],
    pub sigma2: f64,
    /// Fitted event hazard of each subject.
    pub hazard: Vec<f64>,
    /// Starting latent event time of each censored subject, dataset order.
    pub t_miss: Vec<f64>,
}

/// Least-squares solution of `x b = y` (minimum norm when rank deficient).
fn lstsq(x: DMatrix<f64>, y: DVector<f64>) -> Option<DVector<f64>> {
    if x.nrows() == 0 {
        return None;
    }
    x.svd(true, true).solve(&y, 1e-12).ok()
}

/// Maximum-likelihood exponential regression of `(s, delta)` on `[a, x]`
/// by damped Newton iterations.
fn exp_regression(ds: &TrialDataset) -> (f64, Vec<f64>) {
    let k = ds.n_covariates();
    let p = k + 1;
    let d = ds.n_events() as f64;
    let total: f64 = ds.subjects.iter().map(|s| s.s).sum();
    let z: Vec<Vec<f64>> = ds
        .subjects
        .iter()
        .map(|s| std::iter::once(s.a_f64()).chain(s.x.iter().copied()).collect())
        .collect();

    // Start from a common hazard D / sum(s), spread over gamma_x along the
    // mean covariate direction.
    let mut g = vec![0.0; p];
    let xbar: Vec<f64> = (0..k)
        .map(|j| ds.subjects.iter().map(|s| s.x[j]).sum::<f64>() / ds.n() as f64)
        .collect();
    let norm2: f64 = xbar.iter().map(|v| v * v).sum();
    let log_rate = (d.max(0.5) / total.max(f64::MIN_POSITIVE)).ln();
    if norm2 > 0.0 {
        for j in 0..k {
            g[1 + j] = log_rate * xbar[j] / norm2;
        }
    }
    if ds.n_events() == 0 {
        return (g[0], g[1..].to_vec());
    }

    let loglik = |g: &[f64]| -> f64 {
        ds.subjects
            .iter()
            .zip(&z)
            .map(|(s, zi)| {
                let eta: f64 = zi.iter().zip(g).map(|(a, b)| a * b).sum();
                if s.delta {
                    eta - s.s * eta.exp()
                } else {
                    -s.s * eta.exp()
                }
            })
            .sum()
    };
    let mut ll = loglik(&g);
    for _ in 0..50 {
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (s, zi) in ds.subjects.iter().zip(&z) {
            let eta: f64 = zi.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mu = s.s * eta.exp();
            let r = if s.delta { 1.0 - mu } else { -mu };
            for a in 0..p {
                grad[a] += r * zi[a];
                for b in 0..p {
                    info[(a, b)] += mu * zi[a] * zi[b];
                }
            }
        }
        let Some(step) = lstsq(info, grad) else { break };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = g.iter().zip(step.iter()).map(|(g, s)| g + t * s).collect();
            let cl = loglik(&cand);
            if cl.is_finite() && cl >= ll {
                let gain = cl - ll;
                g = cand;
                ll = cl;
                improved = gain > 1e-12;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (g[0], g[1..].to_vec())
}

/// Fit survival and longitudinal moments on `ds`.
pub fn moment_fit(ds: &TrialDataset) -> MomentFit {
    let k = ds.n_covariates();
    let n = ds.n();
    if n == 0 {
        return MomentFit {
            gamma_a: 0.0,
            gamma_x: Vec::new(),
            beta_a: 0.0,
            beta_x: Vec::new(),
            b_mu: [0.0, 0.0],
            b: Vec::new(),
            sigma_b: [1.0, 1.0],
            sigma2: 1.0,
            hazard: Vec::new(),
            t_miss: Vec::new(),
        };
    }
    let (gamma_a, gamma_x) = exp_regression(ds);
    let hazard: Vec<f64> = ds
        .subjects
        .iter()
        .map(|s| {
            let eta = gamma_a * s.a_f64() + gamma_x.iter().zip(&s.x).map(|(g, x)| g * x).sum::<f64>();
            eta.exp()
        })
        .collect();

    // Scaled time is exact only for subjects with an observed event, so the
    // longitudinal moments come from them when they carry enough visits.
    let event_rows: usize = ds.subjects.iter().filter(|s| s.delta).map(|s| s.n_visits()).sum();
    let cols = k + 3;
    let use_events_only = event_rows >= 2 * cols;
    let included = |s: &crate::domain::SubjectRecord| s.delta || !use_events_only;
    let horizon: Vec<f64> = ds
        .subjects
        .iter()
        .zip(&hazard)
        .map(|(s, h)| if s.delta { s.s } else { s.s + 1.0 / h })
        .collect();

    let rows: usize = ds.subjects.iter().filter(|s| included(s)).map(|s| s.n_visits()).sum();
    let mut xm = DMatrix::zeros(rows, cols);
    let mut yv = DVector::zeros(rows);
    let mut r = 0;
    for (s, &h) in ds.subjects.iter().zip(&horizon).filter(|(s, _)| included(s)) {
        for (&t, &y) in s.visit_times.iter().zip(&s.y) {
            let psi = t / h;
            for j in 0..k {
                xm[(r, j)] = s.x[j];
            }
            xm[(r, k)] = s.a_f64();
            xm[(r, k + 1)] = psi;
            xm[(r, k + 2)] = psi * psi;
            yv[r] = y;
            r += 1;
        }
    }
    let coef = lstsq(xm, yv).unwrap_or_else(|| DVector::zeros(cols));
    let beta_x: Vec<f64> = coef.iter().take(k).copied().collect();
    let beta_a = coef[k];
    let b_mu = [coef[k + 1], coef[k + 2]];

    let mut b = Vec::with_capacity(n);
    let mut own = Vec::new();
    let mut rss = 0.0;
    let mut dof = 0usize;
    for (s, &h) in ds.subjects.iter().zip(&horizon) {
        let fixed = s.a_f64() * beta_a + s.x.iter().zip(&beta_x).map(|(x, b)| x * b).sum::<f64>();
        let m = s.n_visits();
        if m >= 3 && included(s) {
            let xs = DMatrix::from_fn(m, 2, |j, c| {
                let psi = s.visit_times[j] / h;
                if c == 0 {
                    psi
                } else {
                    psi * psi
                }
            });
            let ys = DVector::from_iterator(m, s.y.iter().map(|y| y - fixed));
            if let Some(bi) = lstsq(xs.clone(), ys.clone()) {
                let res = ys - xs * &bi;
                rss += res.norm_squared();
                dof += m - 2;
                let bi = [bi[0], bi[1]];
                own.push(bi);
                b.push(bi);
                continue;
            }
        }
        b.push(b_mu);
    }

    let sd = |c: usize| -> f64 {
        if own.len() < 2 {
            return 1.0;
        }
        let mean = own.iter().map(|b| b[c]).sum::<f64>() / own.len() as f64;
        let var = own.iter().map(|b| (b[c] - mean).powi(2)).sum::<f64>() / (own.len() - 1) as f64;
        var.sqrt().max(MIN_SIGMA_B)
    };
    let sigma2 = if dof > 0 {
        (rss / dof as f64).max(MIN_SIGMA2)
    } else {
        1.0
    };
    let sigma_b = [sd(0), sd(1)];
    let t_miss = ds
        .subjects
        .iter()
        .zip(&hazard)
        .filter(|(s, _)| !s.delta)
        .map(|(s, &h)| {
            let fixed = s.a_f64() * beta_a + s.x.iter().zip(&beta_x).map(|(x, b)| x * b).sum::<f64>();
            latent_time_mean(s, h, fixed, b_mu, sigma_b, sigma2)
        })
        .collect();

    MomentFit {
        gamma_a,
        gamma_x,
        beta_a,
        beta_x,
        b_mu,
        b,
        sigma_b,
        sigma2,
        hazard,
        t_miss,
    }
}

/// Mean of a censored subject's event time given the population curve: the
/// exponential tail beyond `s` weighted by the visits' fit, each visit
/// treated as independent with the random-effect spread added to the
/// residual variance. Integrated on a grid in `log(t - s)`; without visits
/// this is `s + 1 / hazard`.
fn latent_time_mean(
    s: &crate::domain::SubjectRecord,
    hazard: f64,
    fixed: f64,
    b_mu: [f64; 2],
    sigma_b: [f64; 2],
    sigma2: f64,
) -> f64 {
    if s.n_visits() == 0 || !(hazard > 0.0) {
        return s.s + 1.0 / hazard;
    }
    const POINTS: usize = 400;
    let lo = (1e-6 * (s.s + 1.0)).ln();
    let hi = (40.0 / hazard).ln().max(lo + 1.0);
    let step = (hi - lo) / (POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..POINTS)
        .map(|g| {
            let tau = lo + g as f64 * step;
            let e = tau.exp();
            let t = s.s + e;
            // exponential density of the excess on the tau scale
            let mut lw = tau - hazard * e;
            for (&v, &y) in s.visit_times.iter().zip(&s.y) {
                let psi = v / t;
                let var = sigma2 + (sigma_b[0] * psi).powi(2) + (sigma_b[1] * psi * psi).powi(2);
                let r = y - fixed - b_mu[0] * psi - b_mu[1] * psi * psi;
                lw -= 0.5 * (r * r / var + var.ln());
            }
            (t, lw)
        })
        .collect();
    let top = grid.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = grid.iter().fold((0.0, 0.0), |(n, d), &(t, lw)| {
        let w = (lw - top).exp();
        (n + w * t, d + w)
    });
    let mean = num / den;
    if mean.is_finite() && mean > s.s {
        mean
    } else {
        s.s + 1.0 / hazard
    }
}
