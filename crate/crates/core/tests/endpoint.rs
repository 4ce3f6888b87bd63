use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tbauc::datagen::ScenarioConfig;
use tbauc::domain::{DrawStats, ModelParams, PosteriorDraws, SubjectRecord, TrialDataset};
use tbauc::endpoint::{
    compute_endpoints, kaplan_meier, kaplan_meier_from, mean_trajectory, percent_change_transform, rmst, sauc, tbauc,
    tbauc_closed,
};

fn subject(id: u64, x: f64, a: bool, s: f64, delta: bool, l: f64) -> SubjectRecord {
    SubjectRecord {
        id,
        x: vec![x],
        a,
        enroll_time: 0.0,
        y0: 15.0,
        visit_times: vec![],
        y: vec![],
        s,
        delta,
        l,
    }
}

fn dataset(subjects: Vec<SubjectRecord>) -> TrialDataset {
    TrialDataset {
        subjects,
        scenario: ScenarioConfig::default(),
        seed: 0,
        truth: None,
    }
}

fn params(beta_x: f64, beta_a: f64, b: Vec<[f64; 2]>, t_miss: Vec<f64>) -> ModelParams {
    ModelParams {
        gamma_a: 0.0,
        gamma_x: vec![0.0],
        beta_a,
        beta_x: vec![beta_x],
        b,
        b_mu: [0.0, 0.0],
        sigma_b: [1.0, 1.0],
        rho_b: 0.0,
        sigma2: 1.0,
        t_miss,
    }
}

/// Adaptive Simpson quadrature.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[test]
fn trajectory_hand_values() {
    let ds = dataset(vec![subject(1, 6.0, true, 300.0, true, 540.0)]);
    let p = params(1.5, -2.25, vec![[-10.0, 11.0]], vec![]);
    assert!((mean_trajectory(&p, &ds, 0, 150.0).unwrap() - 4.5).abs() < 1e-12);
    assert!((mean_trajectory(&p, &ds, 0, 0.0).unwrap() - 6.75).abs() < 1e-12);
    assert!((mean_trajectory(&p, &ds, 0, 300.0).unwrap() - 7.75).abs() < 1e-12);
    assert!(mean_trajectory(&p, &ds, 0, 300.5).is_err());
}

#[test]
fn tbauc_hand_values() {
    let ds = dataset(vec![subject(1, 6.0, true, 300.0, true, 540.0)]);
    let p = params(1.5, -2.25, vec![[-10.0, 11.0]], vec![]);
    assert!((tbauc(&p, &ds, 0).unwrap() - 1625.0).abs() < 1e-9);
    let q = simpson(&|t| mean_trajectory(&p, &ds, 0, t).unwrap(), 0.0, 300.0, 1e-10);
    assert!((q - 1625.0).abs() < 1e-8);

    // constant integrand 9 truncated at L = 100
    assert!((tbauc_closed(9.0, [0.0, 0.0], 250.0, 100.0).unwrap() - 900.0).abs() < 1e-12);
}

#[test]
fn closed_form_matches_quadrature_on_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let level: f64 = rng.random_range(-20.0..20.0);
        let b = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        let t: f64 = rng.random_range(1.0..2000.0);
        let l: f64 = rng.random_range(1.0..2000.0);
        let closed = tbauc_closed(level, b, t, l).unwrap();
        let f = |s: f64| {
            let psi = s / t;
            level + b[0] * psi + b[1] * psi * psi
        };
        let quad = simpson(&f, 0.0, l.min(t), 1e-11 * (1.0 + closed.abs()));
        let rel = (closed - quad).abs() / closed.abs().max(1e-300);
        assert!(
            rel <= 1e-8 || (closed - quad).abs() < 1e-9,
            "closed {closed} quad {quad}"
        );
    }
}

#[test]
fn sauc_is_nonincreasing_in_event_time() {
    let mut prev = f64::INFINITY;
    for k in 0..200 {
        let v = sauc(k as f64 * 5.0, 540.0, 0.5);
        assert!(v <= prev);
        prev = v;
    }
}

/// Hand-built draws: three draws over an event subject and a censored one.
fn two_subject_draws() -> (TrialDataset, PosteriorDraws) {
    let ds = dataset(vec![
        subject(1, 2.0, false, 100.0, true, 200.0),
        subject(2, 4.0, true, 50.0, false, 120.0),
    ]);
    let mut draws = PosteriorDraws::new(2, 1, vec![1]);
    let rows = [
        (1.0, -1.0, [[2.0, 0.0], [0.0, 3.0]], 80.0),
        (0.5, 0.0, [[0.0, 0.0], [6.0, -6.0]], 240.0),
        (2.0, 1.0, [[-4.0, 4.0], [1.0, 1.0]], 120.0),
    ];
    for (bx, ba, b, tm) in rows {
        let p = params(bx, ba, b.to_vec(), vec![tm]);
        draws.push(&p, DrawStats::default(), 0);
    }
    (ds, draws)
}

#[test]
fn endpoints_match_hand_computation() {
    let (ds, draws) = two_subject_draws();
    let ep = compute_endpoints(&ds, &draws, 0.5).unwrap();
    // Subject 1: event at T = 100 < L = 200, level = 2 bx.
    // Subject 2: T = t_miss, L = 120, level = 4 bx + ba.
    #[rustfmt::skip]
    let tb = [
        // level 2, b = (2, 0), T = 100: 200 + 2*100/2 = 300
        300.0,
        // level 3, b = (0, 3), T = 80 < L: 240 + 3*80/3 = 320
        320.0,
        // level 1, b = 0: 100
        100.0,
        // level 2, b = (6, -6), T = 240, m = 120: 240 + 6*14400/480 - 6*1728000/172800 = 240 + 180 - 60 = 360
        360.0,
        // level 4, b = (-4, 4), T = 100: 400 - 200 + 400/3
        200.0 + 400.0 / 3.0,
        // level 9, b = (1, 1), T = 120 = L: 1080 + 60 + 40 = 1180
        1180.0,
    ];
    let sa = [50.0, 20.0, 50.0, 0.0, 50.0, 0.0];
    for j in 0..6 {
        assert!((ep.tbauc[j] - tb[j]).abs() < 1e-9, "tbauc[{j}] = {}", ep.tbauc[j]);
        assert_eq!(ep.sauc[j], sa[j], "sauc[{j}]");
        assert_eq!(ep.u[j], ep.tbauc[j] + ep.sauc[j]);
    }
}

#[test]
fn event_at_horizon_has_zero_survival_area() {
    let ds = dataset(vec![subject(1, 1.0, false, 300.0, true, 300.0)]);
    let mut draws = PosteriorDraws::new(1, 1, vec![]);
    for q in 0..4 {
        draws.push(
            &params(q as f64, 0.0, vec![[1.0, 1.0]], vec![]),
            DrawStats::default(),
            0,
        );
    }
    let ep = compute_endpoints(&ds, &draws, 0.5).unwrap();
    assert!(ep.sauc.iter().all(|&v| v == 0.0));
}

#[test]
fn endpoints_require_random_effects() {
    let (ds, mut draws) = two_subject_draws();
    draws.b.clear();
    assert!(compute_endpoints(&ds, &draws, 0.5).is_err());
}

#[test]
fn percent_change() {
    let mut s = subject(1, 1.0, false, 300.0, true, 300.0);
    s.visit_times = vec![63.0, 126.0];
    s.y = vec![12.0, 15.0];
    let ds = dataset(vec![s]);
    let pc = percent_change_transform(&ds).unwrap();
    assert!((pc.subjects[0].y[0] + 0.2).abs() < 1e-15);
    assert_eq!(pc.subjects[0].y[1], 0.0);
    let twice = percent_change_transform(&pc).unwrap();
    assert_ne!(twice.subjects[0].y, ds.subjects[0].y);

    let mut zero = ds.clone();
    zero.subjects[0].y0 = 0.0;
    assert!(percent_change_transform(&zero).is_err());
}

#[test]
fn kaplan_meier_five_subject_table() {
    // times 2, 3+, 5, 5, 8+ : at 2, 5 of 5 at risk, one event -> 0.8;
    // at 5, 3 at risk, two events -> 0.8 * 1/3.
    let obs = [(2.0, true), (3.0, false), (5.0, true), (5.0, true), (8.0, false)];
    let km = kaplan_meier_from(&obs).unwrap();
    assert_eq!(km.time, vec![2.0, 5.0]);
    assert_eq!(km.at_risk, vec![5, 3]);
    assert_eq!(km.events, vec![1, 2]);
    assert!((km.survival[0] - 0.8).abs() < 1e-15);
    assert!((km.survival[1] - 0.8 / 3.0).abs() < 1e-15);
    assert_eq!(km.at(1.9), 1.0);
    assert_eq!(km.at(4.0), 0.8);
    // 2 * 1 + 3 * 0.8 + 5 * 0.8 / 3
    assert!((rmst(&km, 10.0).unwrap() - (2.0 + 2.4 + 4.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn kaplan_meier_without_censoring_is_one_minus_ecdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let times: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..100.0)).collect();
    let subjects = times
        .iter()
        .enumerate()
        .map(|(i, &t)| subject(i as u64 + 1, 0.0, false, t, true, 100.0))
        .collect();
    let km = kaplan_meier(&dataset(subjects)).unwrap();
    for (&t, &s) in km.time.iter().zip(&km.survival) {
        let ecdf = times.iter().filter(|&&x| x <= t).count() as f64 / times.len() as f64;
        assert!((s - (1.0 - ecdf)).abs() < 1e-12);
    }
}
