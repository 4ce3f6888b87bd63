//! Convergence summaries: rank-normalized split-R-hat and bulk effective
//! sample size.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::PosteriorDraws;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess: f64,
    /// True when the draws have zero variance; R-hat and ESS are NaN then.
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Normal scores of the pooled ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let std = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = std.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

/// Split each chain in half (dropping the middle draw of odd lengths).
fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [c[..h].to_vec(), c[c.len() - h..].to_vec()]
        })
        .collect()
}

fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n * var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn is_constant(chains: &[&[f64]]) -> bool {
    let first = chains.iter().find_map(|c| c.first()).copied();
    match first {
        None => true,
        Some(f) => chains.iter().all(|c| c.iter().all(|&v| v == f)),
    }
}

/// Rank-normalized split-R-hat. NaN for constant input.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    rhat_raw(&rank_normalize(&split(chains)))
}

/// Autocovariance of `x` at `lag` (biased, divided by n).
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size of already split chains using Geyer's
/// initial monotone sequence.
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| var(c)).collect();
    let w = mean(&vars);
    let var_plus = if chains.len() > 1 {
        (n as f64 - 1.0) / n as f64 * w + var(&means)
    } else {
        (n as f64 - 1.0) / n as f64 * w
    };
    let rho = |t: usize| -> f64 {
        let ac = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).sum::<f64>() / m;
        1.0 - (w - ac) / var_plus
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        sum += pair;
        t += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / ((m * n as f64).log10()));
    m * n as f64 / tau
}

/// Bulk effective sample size on rank-normalized split chains. NaN for
/// constant input.
pub fn bulk_ess(chains: &[&[f64]]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    ess_raw(&rank_normalize(&split(chains)))
}

fn summarize(name: String, values: &[f64], chain: &[u32]) -> ParamSummary {
    let n_chains = chain.iter().copied().max().map_or(0, |c| c as usize + 1);
    let per: Vec<Vec<f64>> = (0..n_chains)
        .map(|c| {
            values
                .iter()
                .zip(chain)
                .filter(|(_, &k)| k as usize == c)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = per.iter().map(|v| v.as_slice()).filter(|v| !v.is_empty()).collect();
    let degenerate = is_constant(&refs);
    ParamSummary {
        name,
        mean: mean(values),
        sd: if values.len() > 1 { var(values).sqrt() } else { 0.0 },
        rhat: split_rhat(&refs),
        ess: bulk_ess(&refs),
        degenerate,
    }
}

/// Summaries of every scalar (non-subject-level) parameter.
pub fn diagnostics(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    let q = draws.q();
    let k = draws.n_covariates;
    let ch = &draws.chain;
    let mut out = vec![summarize("gamma_a".into(), &draws.gamma_a, ch)];
    for j in 0..k {
        let v: Vec<f64> = (0..q).map(|d| draws.gamma_x[d * k + j]).collect();
        out.push(summarize(format!("gamma_x_{}", j + 1), &v, ch));
    }
    out.push(summarize("beta_a".into(), &draws.beta_a, ch));
    for j in 0..k {
        let v: Vec<f64> = (0..q).map(|d| draws.beta_x[d * k + j]).collect();
        out.push(summarize(format!("beta_x_{}", j + 1), &v, ch));
    }
    for c in 0..2 {
        let v: Vec<f64> = draws.b_mu.iter().map(|b| b[c]).collect();
        out.push(summarize(format!("b_mu_{}", c + 1), &v, ch));
    }
    for c in 0..2 {
        let v: Vec<f64> = draws.sigma_b.iter().map(|b| b[c]).collect();
        out.push(summarize(format!("sigma_b_{}", c + 1), &v, ch));
    }
    out.push(summarize("rho_b".into(), &draws.rho_b, ch));
    out.push(summarize("sigma2".into(), &draws.sigma2, ch));
    out
}
