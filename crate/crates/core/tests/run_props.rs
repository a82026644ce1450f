mod common;

use perfrig::run::backend::ReplayBackend;
use perfrig::run::{aggregate, execute, extrapolate, RunSet};
use proptest::prelude::*;
use rand::SeedableRng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn full_window_is_not_scaled(raw in any::<u64>(), window in 1u64..u64::MAX) {
        prop_assert_eq!(extrapolate(raw, window, window), raw as f64);
    }

    #[test]
    fn scaling_never_shrinks(raw in 0u64..1 << 50, enabled in 1u64..1 << 40, frac in 0.001f64..1.0) {
        let running = ((enabled as f64 * frac) as u64).max(1).min(enabled);
        prop_assert!(extrapolate(raw, enabled, running) >= raw as f64);
    }

    #[test]
    fn random_run_sets_round_trip_and_replay(
        seed in any::<u64>(),
        n_events in 1usize..40,
        budget in 1u32..=8,
        repeats in 2u32..7,
        discard_first in any::<bool>(),
    ) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let rs = common::random_run_set(&mut rng, n_events, budget, repeats, discard_first);

        let back = RunSet::from_json(&rs.to_json()).unwrap();
        prop_assert_eq!(&back, &rs);
        prop_assert_eq!(back.to_json(), rs.to_json());

        let replayed = execute(&rs.plan, &mut ReplayBackend::new(rs.clone()), None).unwrap();
        prop_assert_eq!(&replayed.records, &rs.records);
        prop_assert_eq!(&replayed.measurements, &rs.measurements);

        let kept = rs.kept();
        prop_assert_eq!(kept.len(), repeats as usize);
        prop_assert_eq!(rs.records.iter().filter(|r| r.discarded).count(), discard_first as usize);
        if discard_first {
            prop_assert!(rs.records[0].discarded);
            let tail: Vec<_> = rs.records[1..].iter().collect();
            prop_assert_eq!(aggregate(&tail).unwrap(), rs.measurements.clone());
        }

        for (name, m) in &rs.measurements {
            if let Some(first) = kept[0].events.get(name) {
                let values: Vec<f64> = kept.iter().map(|r| r.events[name].value).collect();
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m.mean >= lo * (1.0 - 1e-12) && m.mean <= hi * (1.0 + 1e-12), "{}", name);
                prop_assert_eq!(first.value, first.raw as f64);
            }
        }
    }
}

#[test]
fn fixtures_are_unscaled_and_round_trip() {
    for name in common::RUN_FIXTURES {
        let rs = common::run_fixture(name);
        for r in &rs.records {
            for (event, e) in &r.events {
                assert_eq!(e.running_ns, e.enabled_ns, "{name} {event}");
                assert_eq!(e.value, e.raw as f64, "{name} {event}");
            }
        }
        let back = RunSet::from_json(&rs.to_json()).unwrap();
        assert_eq!(back, rs, "{name}");
        let replayed = execute(&rs.plan, &mut ReplayBackend::new(rs.clone()), None).unwrap();
        assert_eq!(replayed.records, rs.records, "{name}");
        assert_eq!(replayed.measurements, rs.measurements, "{name}");
    }
}

#[test]
fn discarding_the_first_fixture_run_drops_one_record() {
    for name in common::RUN_FIXTURES {
        let rs = common::run_fixture(name);
        let mut plan = rs.plan.clone();
        plan.discard_first = true;
        plan.repeats -= 1;
        let mut records = rs.records.clone();
        for r in &mut records {
            r.discarded = false;
        }
        let warm = RunSet::new(plan, records, rs.snapshot_hash.clone(), rs.meta.clone()).unwrap();
        assert_eq!(warm.kept().len(), rs.records.len() - 1);
        assert!(warm.records[0].discarded);
        let rest: Vec<_> = rs.records[1..].iter().collect();
        assert_eq!(warm.measurements, aggregate(&rest).unwrap(), "{name}");
    }
}
