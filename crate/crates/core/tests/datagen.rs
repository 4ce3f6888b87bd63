use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tbauc::datagen::{generate_trial, sample_event_time, ScenarioConfig};
use tbauc::domain::{validate_dataset, TrialDataset};
use tbauc::io::{read_dataset, write_dataset, write_scenario_echo, ScenarioEcho};

fn small(scenario: u8) -> ScenarioConfig {
    ScenarioConfig {
        n: 80,
        target_events: 30,
        ..ScenarioConfig::scenario(scenario).unwrap()
    }
}

/// Twelve significant digits: half a unit in the last place is 5e-12 relative.
fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-11 * a.abs().max(b.abs())
}

fn assert_close(a: &TrialDataset, b: &TrialDataset) {
    assert_eq!(a.n(), b.n());
    for (x, y) in a.subjects.iter().zip(&b.subjects) {
        assert_eq!((x.id, x.a, x.delta), (y.id, y.a, y.delta));
        let fx = [x.enroll_time, x.y0, x.s, x.l];
        let fy = [y.enroll_time, y.y0, y.s, y.l];
        assert!(fx.iter().zip(&fy).all(|(u, v)| rel_close(*u, *v)));
        assert_eq!(x.visit_times.len(), y.visit_times.len());
        for (u, v) in x
            .visit_times
            .iter()
            .chain(&x.y)
            .chain(&x.x)
            .zip(y.visit_times.iter().chain(&y.y).chain(&y.x))
        {
            assert!(rel_close(*u, *v), "{u} vs {v}");
        }
    }
    let (ta, tb) = (a.truth.as_ref().unwrap(), b.truth.as_ref().unwrap());
    for i in 0..a.n() {
        assert!(rel_close(ta.t_true[i], tb.t_true[i]) && rel_close(ta.c_true[i], tb.c_true[i]));
        assert!(rel_close(ta.b[i][0], tb.b[i][0]) && rel_close(ta.b[i][1], tb.b[i][1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_subjects_satisfy_invariants(seed in any::<u64>(), scenario in 1u8..=4) {
        let ds = generate_trial(&small(scenario), seed).unwrap();
        prop_assert!(validate_dataset(&ds).is_empty());
        let truth = ds.truth.as_ref().unwrap();
        for (i, s) in ds.subjects.iter().enumerate() {
            let (t, c) = (truth.t_true[i], truth.c_true[i]);
            prop_assert_eq!(s.s, t.min(c).min(s.l));
            prop_assert_eq!(s.delta, t == s.s);
            for &v in &s.visit_times {
                prop_assert!(v < s.s);
                let psi = v / s.s;
                prop_assert!(psi > 0.0 && psi < 1.0);
            }
        }
        prop_assert_eq!(ds.arm_counts(), [40, 40]);
    }

    #[test]
    fn same_seed_is_bitwise_identical(seed in any::<u64>()) {
        let cfg = small(1);
        prop_assert_eq!(generate_trial(&cfg, seed).unwrap(), generate_trial(&cfg, seed).unwrap());
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), scenario in 1u8..=4) {
        let cfg = small(scenario);
        let ds = generate_trial(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        write_scenario_echo(dir.path(), &ScenarioEcho { scenario: Some(scenario), seed, config: cfg.clone() }).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_close(&ds, &back);
        prop_assert_eq!(back.seed, seed);
        prop_assert_eq!(back.scenario, cfg);
    }
}

#[test]
fn event_time_mean_matches_hazard() {
    let cfg = ScenarioConfig::scenario(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (x, a) = (5.5, true);
    let draws = 100_000;
    let mean = (0..draws).map(|_| sample_event_time(&cfg, x, a, &mut rng)).sum::<f64>() / draws as f64;
    // exponential: sd equals the mean 1 / lambda
    let expect = 1.0 / (cfg.gamma_x * x + cfg.gamma_a).exp();
    assert!(
        (mean - expect).abs() < 3.0 * expect / (draws as f64).sqrt(),
        "{mean} vs {expect}"
    );
}

#[test]
fn different_seeds_differ() {
    let cfg = small(2);
    assert_ne!(
        generate_trial(&cfg, 1).unwrap().subjects,
        generate_trial(&cfg, 2).unwrap().subjects
    );
}
