//! Hamiltonian Monte Carlo over the joint posterior of model parameters and
//! augmented event times.
//!
//! Each transition runs a fixed number of leapfrog steps under a diagonal
//! metric. During warmup the step size is tuned by dual averaging and the
//! metric is re-estimated over doubling windows; the step size is jittered
//! per transition to avoid resonance of fixed-length trajectories.

mod adapt;
pub mod diagnostics;
pub mod hmc;
mod init;

use log::{debug, warn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DrawStats, ModelParams, PosteriorDraws, TrialDataset};
use crate::error::{Error, Result};
use crate::likelihood::{JointPosterior, PriorSpec, UnconstrainedVector};
use crate::rng::stream_rng;

pub use adapt::{DualAveraging, Welford, WindowSchedule};
pub use diagnostics::{bulk_ess, diagnostics, split_rhat, ParamSummary};
pub use hmc::{Integrator, State, Transition};
pub use init::{moment_fit, MomentFit};

/// Post-warmup mean acceptance below which a run is rejected.
pub const MIN_ACCEPTANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Retained draws, summed over chains.
    pub q_total: usize,
    /// Warmup iterations per chain; `None` means a tenth of `q_total`, at
    /// least 500.
    pub warmup: Option<usize>,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    /// SD of the normal jitter added to moment-fit starting values.
    pub init_jitter: f64,
    /// Half-width of the uniform relative jitter applied to the step size.
    pub step_jitter: f64,
    pub seed: u64,
    pub chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            q_total: 25_000,
            warmup: None,
            leapfrog_steps: 32,
            target_accept: 0.8,
            init_jitter: 0.1,
            step_jitter: 0.2,
            seed: 0,
            chains: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.q_total == 0 {
            return bad("q_total must be at least 1");
        }
        if self.leapfrog_steps == 0 {
            return bad("leapfrog_steps must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return bad("init_jitter must be non-negative");
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad("step_jitter must lie in [0, 1)");
        }
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.chains > self.q_total {
            return bad("chains cannot exceed q_total");
        }
        Ok(())
    }

    pub fn effective_warmup(&self) -> usize {
        self.warmup.unwrap_or((self.q_total / 10).max(500))
    }

    /// Retained draws of chain `c`.
    fn chain_draws(&self, c: usize) -> usize {
        let base = self.q_total / self.chains;
        base + usize::from(c < self.q_total % self.chains)
    }
}

/// Starting point of chain 0.
pub fn init_state(ds: &TrialDataset, prior: &PriorSpec, cfg: &SamplerConfig) -> UnconstrainedVector {
    init_chain(ds, prior, cfg, 0)
}

fn init_chain(ds: &TrialDataset, _prior: &PriorSpec, cfg: &SamplerConfig, chain: u64) -> UnconstrainedVector {
    let fit = moment_fit(ds);
    let mut rng = stream_rng(cfg.seed, "init", chain);
    let mut jit = |v: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        v + cfg.init_jitter * z
    };
    let gamma_a = jit(fit.gamma_a);
    let gamma_x: Vec<f64> = fit.gamma_x.iter().map(|&g| jit(g)).collect();
    let beta_a = jit(fit.beta_a);
    let beta_x: Vec<f64> = fit.beta_x.iter().map(|&b| jit(b)).collect();
    let b_mu = [jit(fit.b_mu[0]), jit(fit.b_mu[1])];
    let params = ModelParams {
        gamma_a,
        gamma_x,
        beta_a,
        beta_x,
        b: fit.b,
        b_mu,
        sigma_b: fit.sigma_b,
        rho_b: 0.0,
        sigma2: fit.sigma2,
        t_miss: fit.t_miss,
    };
    crate::likelihood::Layout::new(ds).pack(&params)
}

/// Inverse diagonal of the negative Hessian by central differences of the
/// gradient, clamped to a sane range.
fn initial_inv_mass(post: &JointPosterior, q: &[f64]) -> Vec<f64> {
    let d = q.len();
    let mut x = q.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    (0..d)
        .map(|j| {
            let h = 1e-4 * (1.0 + q[j].abs());
            x[j] = q[j] + h;
            let lp = post.log_density_and_grad(&x, &mut gp);
            x[j] = q[j] - h;
            let lm = post.log_density_and_grad(&x, &mut gm);
            x[j] = q[j];
            let curv = -(gp[j] - gm[j]) / (2.0 * h);
            if lp.is_finite() && lm.is_finite() && curv > 0.0 {
                (1.0 / curv).clamp(1e-8, 1e4)
            } else {
                1.0
            }
        })
        .collect()
}

fn jittered<R: Rng + ?Sized>(eps: f64, jitter: f64, rng: &mut R) -> f64 {
    if jitter == 0.0 {
        eps
    } else {
        eps * (1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0))
    }
}

/// Run one chain and return its retained draws.
fn run_single(
    ds: &TrialDataset,
    post: &JointPosterior,
    cfg: &SamplerConfig,
    chain: usize,
    init: Option<&UnconstrainedVector>,
) -> Result<PosteriorDraws> {
    let layout = post.layout();
    let q0 = match init {
        Some(v) if v.0.len() == post.dim() => v.clone(),
        Some(v) => {
            return Err(Error::InvalidInput(format!(
                "initial state has {} entries, expected {}",
                v.0.len(),
                post.dim()
            )))
        }
        None => init_chain(ds, post.prior(), cfg, chain as u64),
    };
    let mut state = State::new(post, q0.0);
    if !state.is_finite() {
        return Err(Error::NonFinite(format!(
            "log posterior at the initial state of chain {chain}"
        )));
    }
    let mut rng = stream_rng(cfg.seed, "sampler", chain as u64);
    let steps = cfg.leapfrog_steps;
    let warmup = cfg.effective_warmup();
    let mut integ = Integrator::new(post, initial_inv_mass(post, &state.q));
    let eps0 = integ.find_reasonable_step(&state, 1.0 / steps as f64, &mut rng);
    let mut da = DualAveraging::new(eps0, cfg.target_accept);
    let windows = WindowSchedule::new(warmup);
    let mut welford = Welford::new(state.q.len());
    let mut warm_div = 0usize;

    for it in 0..warmup {
        let eps = jittered(da.current(), cfg.step_jitter, &mut rng);
        let tr = integ.transition(&mut state, eps, steps, &mut rng);
        warm_div += usize::from(tr.divergent);
        da.update(tr.accept_prob);
        if windows.in_slow_phase(it) {
            welford.add(&state.q);
            if windows.is_window_end(it) {
                integ.inv_mass = welford.regularized_variance();
                welford.reset();
                let eps = integ.find_reasonable_step(&state, da.current(), &mut rng);
                da.restart(eps);
            }
        }
    }
    let eps = if warmup > 0 { da.finalized() } else { eps0 };
    debug!("chain {chain}: step size {eps:.4e} after {warmup} warmup iterations ({warm_div} divergent)");

    let n_keep = cfg.chain_draws(chain);
    let mut out = PosteriorDraws::new(ds.n(), ds.n_covariates(), layout.censored.clone());
    let mut accept_sum = 0.0;
    for _ in 0..n_keep {
        let e = jittered(eps, cfg.step_jitter, &mut rng);
        let tr = integ.transition(&mut state, e, steps, &mut rng);
        accept_sum += tr.accept_prob;
        let stats = DrawStats {
            accept_prob: tr.accept_prob,
            accepted: tr.accepted,
            divergent: tr.divergent,
            energy: tr.energy,
            step_size: e,
        };
        out.push(&layout.unpack(&state.q), stats, chain as u32);
    }
    let rate = accept_sum / n_keep as f64;
    if rate < MIN_ACCEPTANCE {
        return Err(Error::LowAcceptance {
            rate,
            threshold: MIN_ACCEPTANCE,
        });
    }
    let div = out.divergences();
    if div > 0 {
        warn!("chain {chain}: {div} divergent transitions after warmup");
    }
    Ok(out)
}

/// Draw from the joint posterior. Chains run in parallel on independent
/// random streams and are concatenated in chain order.
pub fn run_chain(ds: &TrialDataset, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    run_chain_from(ds, prior, cfg, &[])
}

/// As [`run_chain`], with explicit starting points for the first
/// `inits.len()` chains; remaining chains use [`init_state`]-style starts.
pub fn run_chain_from(
    ds: &TrialDataset,
    prior: &PriorSpec,
    cfg: &SamplerConfig,
    inits: &[UnconstrainedVector],
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    prior.validate()?;
    let post = JointPosterior::new(ds, *prior);
    let results: Vec<Result<PosteriorDraws>> = if cfg.chains == 1 {
        vec![run_single(ds, &post, cfg, 0, inits.first())]
    } else {
        (0..cfg.chains)
            .into_par_iter()
            .map(|c| run_single(ds, &post, cfg, c, inits.get(c)))
            .collect()
    };
    let mut iter = results.into_iter();
    let mut all = iter.next().expect("at least one chain")?;
    for r in iter {
        all.append(r?);
    }
    Ok(all)
}
