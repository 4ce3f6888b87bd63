use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbauc::datagen::{generate_trial, ScenarioConfig};
use tbauc::domain::{ModelParams, SubjectRecord, TrialDataset};
use tbauc::likelihood::{
    grad_log_posterior, log_likelihood, log_posterior, JointPosterior, Layout, PriorSpec, UnconstrainedVector,
};

// ---- independent scalar-density oracle ----

fn norm_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn exp_logpdf(t: f64, rate: f64) -> f64 {
    rate.ln() - rate * t
}

fn mvn2_logpdf(b: [f64; 2], mu: [f64; 2], sd: [f64; 2], rho: f64) -> f64 {
    let cov = [
        [sd[0] * sd[0], rho * sd[0] * sd[1]],
        [rho * sd[0] * sd[1], sd[1] * sd[1]],
    ];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let d = [b[0] - mu[0], b[1] - mu[1]];
    let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
}

fn oracle_loglik(ds: &TrialDataset, p: &ModelParams) -> f64 {
    let mut m = 0;
    let mut total = 0.0;
    for (i, s) in ds.subjects.iter().enumerate() {
        let a = if s.a { 1.0 } else { 0.0 };
        let rate = (p.gamma_a * a + p.gamma_x[0] * s.x[0]).exp();
        let t_event = if s.delta {
            s.s
        } else {
            m += 1;
            p.t_miss[m - 1]
        };
        total += exp_logpdf(t_event, rate);
        for (t, y) in s.visit_times.iter().zip(&s.y) {
            let psi = t / t_event;
            let mean = p.beta_x[0] * s.x[0] + p.beta_a * a + p.b[i][0] * psi + p.b[i][1] * psi * psi;
            total += norm_logpdf(*y, mean, p.sigma2);
        }
    }
    total
}

fn half_normal_logpdf(x: f64, scale: f64) -> f64 {
    2f64.ln() + norm_logpdf(x, 0.0, scale * scale)
}

/// Posterior density on the unconstrained scale, built from the constrained
/// density plus hand-derived Jacobians.
fn oracle_log_posterior(ds: &TrialDataset, theta: &[f64], prior: &PriorSpec) -> f64 {
    let lay = Layout::new(ds);
    let p = lay.unpack(theta);
    let mut lp = oracle_loglik(ds, &p);
    for b in &p.b {
        lp += mvn2_logpdf(*b, p.b_mu, p.sigma_b, p.rho_b);
    }
    let coef_var = prior.coef_sd.powi(2);
    for v in [p.gamma_a, p.gamma_x[0], p.beta_a, p.beta_x[0]] {
        lp += norm_logpdf(v, 0.0, coef_var);
    }
    for v in p.b_mu {
        lp += norm_logpdf(v, 0.0, prior.b_mu_sd.powi(2));
    }
    for s in p.sigma_b {
        lp += half_normal_logpdf(s, prior.sigma_b_scale) + s.ln();
    }
    let sigma = p.sigma2.sqrt();
    lp += half_normal_logpdf(sigma, prior.sigma_scale) + (sigma / 2.0).ln();
    lp += (0.5f64).ln() + (1.0 - p.rho_b * p.rho_b).ln();
    for (t, &i) in p.t_miss.iter().zip(&lay.censored) {
        lp += (t - ds.subjects[i].s).ln();
    }
    lp
}

fn small_dataset(n: usize, seed: u64) -> TrialDataset {
    let cfg = ScenarioConfig {
        n,
        target_events: n / 2,
        cens_rate: 0.002,
        gamma_x: -0.9,
        ..ScenarioConfig::scenario(1).unwrap()
    };
    generate_trial(&cfg, seed).unwrap()
}

fn random_theta(ds: &TrialDataset, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lay = Layout::new(ds);
    let p = ModelParams {
        gamma_a: rng.random_range(-1.0..0.5),
        gamma_x: vec![rng.random_range(-1.4..-1.0)],
        beta_a: rng.random_range(-3.0..1.0),
        beta_x: vec![rng.random_range(1.0..2.0)],
        b: (0..ds.n())
            .map(|_| [rng.random_range(-12.0..-8.0), rng.random_range(9.0..13.0)])
            .collect(),
        b_mu: [rng.random_range(-11.0..-9.0), rng.random_range(10.0..12.0)],
        sigma_b: [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)],
        rho_b: rng.random_range(-0.8..0.8),
        sigma2: rng.random_range(0.03..0.5),
        t_miss: lay.cens_s.iter().map(|s| s + rng.random_range(1.0..400.0)).collect(),
    };
    lay.pack(&p).0
}

#[test]
fn loglik_matches_scalar_oracle() {
    let ds = small_dataset(12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lay = Layout::new(&ds);
    for _ in 0..5 {
        let p = lay.unpack(&random_theta(&ds, &mut rng));
        let got = log_likelihood(&ds, &p).unwrap();
        let want = oracle_loglik(&ds, &p);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn log_posterior_matches_oracle_on_three_subjects() {
    let mut ds = small_dataset(12, 5);
    ds.subjects.truncate(3);
    ds.truth = None;
    let prior = PriorSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let th = random_theta(&ds, &mut rng);
        let got = log_posterior(&ds, &UnconstrainedVector(th.clone()), &prior).unwrap();
        let want = oracle_log_posterior(&ds, &th, &prior);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn empty_dataset_gives_prior_only() {
    let ds = TrialDataset {
        subjects: vec![],
        scenario: ScenarioConfig::default(),
        seed: 0,
        truth: None,
    };
    let prior = PriorSpec {
        coef_sd: 1.0,
        b_mu_sd: 1.0,
        sigma_b_scale: 1.0,
        sigma_scale: 1.0,
    };
    let lay = Layout::new(&ds);
    assert_eq!(lay.k, 0);
    // b_mu = 0, sigma_b = 1, rho = 0, sigma2 = 1
    let th = vec![0.0; lay.dim()];
    let lp = log_posterior(&ds, &UnconstrainedVector(th), &prior).unwrap();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let want = 2.0 * 1.0 * (-0.5 * ln2pi) // gamma_a, beta_a
        + 2.0 * (-0.5 * ln2pi) // b_mu
        + 2.0 * (2f64.ln() - 0.5 * ln2pi - 0.5) // sigma_b = 1
        + (2f64.ln() - 0.5 * ln2pi - 0.5) + (0.5f64).ln() // sigma = 1, Jacobian sigma/2
        + (0.5f64).ln(); // rho uniform, Jacobian 1
    assert!((lp - want).abs() < 1e-12, "{lp} vs {want}");
}

#[test]
fn prior_only_gradient_is_gaussian_score() {
    let ds = TrialDataset {
        subjects: vec![],
        scenario: ScenarioConfig::default(),
        seed: 0,
        truth: None,
    };
    let prior = PriorSpec::default();
    let lay = Layout::new(&ds);
    let mut th = vec![0.0; lay.dim()];
    th[lay.gamma_a()] = 3.0;
    th[lay.beta_a()] = -7.0;
    let g = grad_log_posterior(&ds, &UnconstrainedVector(th), &prior).unwrap();
    assert!((g[lay.gamma_a()] - (-3.0 / 100.0)).abs() < 1e-15);
    assert!((g[lay.beta_a()] - (7.0 / 100.0)).abs() < 1e-15);
}

fn fd_gradient(post: &JointPosterior, th: &[f64], h: f64) -> Vec<f64> {
    let mut x = th.to_vec();
    (0..th.len())
        .map(|i| {
            x[i] = th[i] + h;
            let up = post.log_density(&x);
            x[i] = th[i] - h;
            let dn = post.log_density(&x);
            x[i] = th[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let ds = small_dataset(10, 9);
    let post = JointPosterior::new(&ds, PriorSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = vec![0.0; post.dim()];
    for _ in 0..20 {
        let th = random_theta(&ds, &mut rng);
        post.log_density_and_grad(&th, &mut g);
        let fd = fd_gradient(&post, &th, 1e-5);
        for (i, (a, n)) in g.iter().zip(&fd).enumerate() {
            let err = (a - n).abs() / (1.0 + a.abs());
            assert!(err <= 1e-6, "coord {i}: analytic {a}, fd {n}, err {err}");
        }
    }
}

#[test]
fn censored_subject_time_gradient() {
    // one censored subject with three visits
    let ds = TrialDataset {
        subjects: vec![SubjectRecord {
            id: 1,
            x: vec![6.0],
            a: true,
            enroll_time: 0.0,
            y0: 15.0,
            visit_times: vec![63.0, 126.0, 189.0],
            y: vec![7.1, 5.9, 6.4],
            s: 200.0,
            delta: false,
            l: 400.0,
        }],
        scenario: ScenarioConfig::default(),
        seed: 0,
        truth: None,
    };
    let post = JointPosterior::new(&ds, PriorSpec::default());
    let lay = post.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let th = random_theta(&ds, &mut rng);
    let mut g = vec![0.0; post.dim()];
    post.log_density_and_grad(&th, &mut g);
    let fd = fd_gradient(&post, &th, 1e-5);
    let i = lay.tau();
    assert!(
        (g[i] - fd[i]).abs() / (1.0 + g[i].abs()) < 1e-6,
        "{} vs {}",
        g[i],
        fd[i]
    );
}

#[test]
fn perturbing_one_random_effect_is_local() {
    let ds = small_dataset(10, 2);
    let lay = Layout::new(&ds);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = lay.unpack(&random_theta(&ds, &mut rng));
    let mut q = p.clone();
    q.b[4][0] += 0.7;
    let per_subject = |p: &ModelParams, i: usize| {
        let mut one = ds.clone();
        one.subjects = vec![ds.subjects[i].clone()];
        let mut pp = p.clone();
        pp.b = vec![p.b[i]];
        pp.t_miss = if ds.subjects[i].delta {
            vec![]
        } else {
            let m = lay.censored.iter().position(|&c| c == i).unwrap();
            vec![p.t_miss[m]]
        };
        log_likelihood(&one, &pp).unwrap()
    };
    let diff = log_likelihood(&ds, &q).unwrap() - log_likelihood(&ds, &p).unwrap();
    let local = per_subject(&q, 4) - per_subject(&p, 4);
    assert!((diff - local).abs() < 1e-9);
}

#[test]
fn subject_reordering_invariance() {
    let ds = small_dataset(10, 6);
    let prior = PriorSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lay = Layout::new(&ds);
    let p = lay.unpack(&random_theta(&ds, &mut rng));
    let lp = log_posterior(&ds, &lay.pack(&p), &prior).unwrap();

    let order: Vec<usize> = (0..ds.n()).rev().collect();
    let mut ds2 = ds.clone();
    ds2.subjects = order.iter().map(|&i| ds.subjects[i].clone()).collect();
    ds2.truth = None;
    let mut p2 = p.clone();
    p2.b = order.iter().map(|&i| p.b[i]).collect();
    let cens_pos = |i: usize| lay.censored.iter().position(|&c| c == i);
    p2.t_miss = order.iter().filter_map(|&i| cens_pos(i).map(|m| p.t_miss[m])).collect();
    let lay2 = Layout::new(&ds2);
    let lp2 = log_posterior(&ds2, &lay2.pack(&p2), &prior).unwrap();
    assert!((lp - lp2).abs() <= 1e-12 * lp.abs(), "{lp} vs {lp2}");
}

#[test]
fn exact_fit_visit_adds_normalizer_only() {
    let ds = small_dataset(10, 7);
    let lay = Layout::new(&ds);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = lay.unpack(&random_theta(&ds, &mut rng));
    let i = ds.subjects.iter().position(|s| s.delta).unwrap();
    let mut ds2 = ds.clone();
    let s = &mut ds2.subjects[i];
    let t_new = s.s * 0.999;
    let psi = t_new / s.s;
    let a = if s.a { 1.0 } else { 0.0 };
    let mean = p.beta_x[0] * s.x[0] + p.beta_a * a + p.b[i][0] * psi + p.b[i][1] * psi * psi;
    s.visit_times.push(t_new);
    s.y.push(mean);
    let diff = log_likelihood(&ds2, &p).unwrap() - log_likelihood(&ds, &p).unwrap();
    let want = -0.5 * (2.0 * std::f64::consts::PI * p.sigma2).ln();
    assert!((diff - want).abs() < 1e-9, "{diff} vs {want}");
}

#[test]
fn no_censoring_uses_event_branch_only() {
    let mut ds = small_dataset(10, 8);
    for s in &mut ds.subjects {
        s.delta = true;
    }
    ds.truth = None;
    let lay = Layout::new(&ds);
    assert!(lay.censored.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = lay.unpack(&random_theta(&ds, &mut rng));
    assert!(p.t_miss.is_empty());
    let want = oracle_loglik(&ds, &p);
    let got = log_likelihood(&ds, &p).unwrap();
    assert!((got - want).abs() <= 1e-10 * want.abs());
}
