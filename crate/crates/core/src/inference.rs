//! Treatment-effect estimates on the endpoint areas and one-sided Wald
//! tests with Bayesian-bootstrap standard errors.

use std::fmt;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{PosteriorDraws, TrialDataset};
use crate::endpoint::{compute_endpoints, EndpointDraws};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, substream_seed};

/// Which area an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AucKind {
    #[serde(rename = "TB")]
    Tb,
    S,
    Total,
}

impl AucKind {
    pub const ALL: [AucKind; 3] = [AucKind::Tb, AucKind::S, AucKind::Total];

    pub fn as_str(self) -> &'static str {
        match self {
            AucKind::Tb => "TB",
            AucKind::S => "S",
            AucKind::Total => "Total",
        }
    }
}

impl fmt::Display for AucKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tail of the one-sided test. `Left` rejects for negative effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Left,
    Right,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            _ => Err(Error::InvalidConfig(format!(
                "direction must be left or right, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: AucKind,
    pub theta_hat: f64,
    pub se: f64,
    pub w: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub direction: Direction,
    /// Standard error was zero; the test is reported as not rejecting.
    pub degenerate: bool,
}

/// Subject indices of each arm, ordered by subject id.
fn arms(ds: &TrialDataset) -> Result<[Vec<usize>; 2]> {
    let mut out = [Vec::new(), Vec::new()];
    for (i, s) in ds.subjects.iter().enumerate() {
        out[s.arm()].push(i);
    }
    if out[0].is_empty() || out[1].is_empty() {
        return Err(Error::InvalidInput("both arms need at least one subject".into()));
    }
    for arm in &mut out {
        arm.sort_by_key(|&i| ds.subjects[i].id);
    }
    Ok(out)
}

fn check_shape(ep: &EndpointDraws, ds: &TrialDataset) -> Result<()> {
    if ep.n_subjects != ds.n() {
        return Err(Error::InvalidInput(format!(
            "endpoints cover {} subjects, dataset has {}",
            ep.n_subjects,
            ds.n()
        )));
    }
    Ok(())
}

/// Posterior mean over draws of the difference in arm means.
pub fn ate_point(ep: &EndpointDraws, ds: &TrialDataset, kind: AucKind) -> Result<f64> {
    check_shape(ep, ds)?;
    let arms = arms(ds)?;
    let q = ep.q();
    if q == 0 {
        return Err(Error::InvalidInput("no posterior draws".into()));
    }
    let mut total = 0.0;
    for d in 0..q {
        let row = ep.row(kind, d);
        let m1 = arms[1].iter().map(|&i| row[i]).sum::<f64>() / arms[1].len() as f64;
        let m0 = arms[0].iter().map(|&i| row[i]).sum::<f64>() / arms[0].len() as f64;
        total += m1 - m0;
    }
    Ok(total / q as f64)
}

/// Flat Dirichlet weights of length `n` from normalized unit exponentials.
pub fn dirichlet_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

/// Bayesian-bootstrap standard error: the SD over draws of the
/// Dirichlet-weighted difference in arm means. Each (draw, arm) gets its own
/// random stream derived from `seed`; subjects are visited in id order so
/// the result does not depend on dataset order.
pub fn bb_se(ep: &EndpointDraws, ds: &TrialDataset, kind: AucKind, seed: u64) -> Result<f64> {
    check_shape(ep, ds)?;
    let arms = arms(ds)?;
    let q = ep.q();
    if q < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap SE needs at least 2 draws, got {q}"
        )));
    }
    let ates: Vec<f64> = (0..q)
        .map(|d| {
            let row = ep.row(kind, d);
            let mut arm_mean = [0.0; 2];
            for (a, idx) in arms.iter().enumerate() {
                let mut rng = stream_rng(seed, "bootstrap", 2 * d as u64 + a as u64);
                let w = dirichlet_weights(idx.len(), &mut rng);
                arm_mean[a] = idx.iter().zip(&w).map(|(&i, w)| w * row[i]).sum();
            }
            arm_mean[1] - arm_mean[0]
        })
        .collect();
    let mean = ates.iter().sum::<f64>() / q as f64;
    let var = ates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (q - 1) as f64;
    Ok(var.sqrt())
}

/// One-sided Wald test of `theta_hat / se` against the standard normal.
pub fn wald_test(kind: AucKind, theta_hat: f64, se: f64, alpha: f64, direction: Direction) -> Result<TestResult> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::InvalidInput(format!(
            "standard error must be positive, got {se}"
        )));
    }
    validate_alpha(alpha)?;
    let z = Normal::standard();
    let w = theta_hat / se;
    let (p_value, reject) = match direction {
        Direction::Left => (z.cdf(w), w < z.inverse_cdf(alpha)),
        Direction::Right => (z.cdf(-w), w > z.inverse_cdf(1.0 - alpha)),
    };
    Ok(TestResult {
        kind,
        theta_hat,
        se,
        w,
        p_value,
        reject,
        alpha,
        direction,
        degenerate: false,
    })
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Tests for TB, S and Total on precomputed endpoints. Each kind draws its
/// bootstrap weights from its own sub-stream of `seed`.
pub fn analyze_endpoints(
    ep: &EndpointDraws,
    ds: &TrialDataset,
    alpha: f64,
    direction: Direction,
    seed: u64,
) -> Result<[TestResult; 3]> {
    validate_alpha(alpha)?;
    let run = |kind: AucKind| -> Result<TestResult> {
        let theta = ate_point(ep, ds, kind)?;
        let se = bb_se(ep, ds, kind, substream_seed(seed, kind.as_str()))?;
        if se > 0.0 {
            wald_test(kind, theta, se, alpha, direction)
        } else {
            Ok(TestResult {
                kind,
                theta_hat: theta,
                se: 0.0,
                w: 0.0,
                p_value: 1.0,
                reject: false,
                alpha,
                direction,
                degenerate: true,
            })
        }
    };
    Ok([run(AucKind::Tb)?, run(AucKind::S)?, run(AucKind::Total)?])
}

/// Endpoints from posterior draws followed by the three Wald tests.
pub fn full_analysis(
    ds: &TrialDataset,
    draws: &PosteriorDraws,
    gamma_utility: f64,
    alpha: f64,
    direction: Direction,
    seed: u64,
) -> Result<[TestResult; 3]> {
    let ep = compute_endpoints(ds, draws, gamma_utility)?;
    analyze_endpoints(&ep, ds, alpha, direction, seed)
}
