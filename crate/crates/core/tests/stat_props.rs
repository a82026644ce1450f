use std::collections::BTreeMap;

use perfrig::stat::{eval_expression, Measurement, PropagationPolicy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

const P: PropagationPolicy = PropagationPolicy::Independent;

fn measurement() -> impl Strategy<Value = Measurement> {
    (-1e6f64..1e6, 0f64..1e3, 2u32..50).prop_map(|(m, s, n)| Measurement::new(m, s, n).unwrap())
}

fn nonzero_mean() -> impl Strategy<Value = Measurement> {
    measurement().prop_filter("non-zero mean", |m| m.mean.abs() > 1e-3)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Monte Carlo spread of `f(a, b)` for independent Gaussian operands.
fn mc_sd(a: &Measurement, b: &Measurement, f: fn(f64, f64) -> f64, samples: usize, seed: u64) -> f64 {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let da = Normal::new(a.mean, a.sd).unwrap();
    let db = Normal::new(b.mean, b.sd).unwrap();
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..samples {
        let v = f(da.sample(&mut rng), db.sample(&mut rng));
        sum += v;
        sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    ((sq / n - mean * mean) * n / (n - 1.0)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn add_and_mul_commute(a in measurement(), b in measurement()) {
        let ab = a.add(&b, P).unwrap();
        let ba = b.add(&a, P).unwrap();
        prop_assert_eq!(ab.mean, ba.mean);
        prop_assert_eq!(ab.sd, ba.sd);
        let ab = a.mul(&b, P).unwrap();
        let ba = b.mul(&a, P).unwrap();
        prop_assert_eq!(ab.mean, ba.mean);
        prop_assert!(close(ab.sd, ba.sd));
    }

    #[test]
    fn scale_is_multiplication_by_exact(a in measurement(), k in -1e3f64..1e3) {
        let s = a.scale(k);
        let m = a.mul(&Measurement::exact(k), P).unwrap();
        prop_assert_eq!(s.mean, m.mean);
        prop_assert_eq!(s.sd, m.sd);
    }

    #[test]
    fn exact_inputs_give_exact_outputs(x in 1e-3f64..1e9, y in 1e-3f64..1e9, z in -1e9f64..1e9) {
        let vars = BTreeMap::from([
            ("x".to_string(), Measurement::exact(x)),
            ("y".to_string(), Measurement::exact(y)),
            ("z".to_string(), Measurement::exact(z)),
        ]);
        for src in ["x + y", "x - z", "x * y * z", "z / x", "(x + z) / (x * y) - 4", "-(z / y) * x"] {
            let v = eval_expression(src, &vars, P).unwrap();
            prop_assert_eq!(v.sd, 0.0, "{}", src);
            prop_assert!(v.mean.is_finite());
        }
    }

    #[test]
    fn spreads_are_never_negative(a in measurement(), b in nonzero_mean()) {
        for r in [a.add(&b, P), a.sub(&b, P), a.mul(&b, P), a.div(&b, P)] {
            let r = r.unwrap();
            prop_assert!(r.sd >= 0.0 && r.sd.is_finite());
        }
    }

    #[test]
    fn sample_count_is_the_smaller_one(a in measurement(), b in nonzero_mean()) {
        prop_assert_eq!(a.div(&b, P).unwrap().n, a.n.min(b.n));
    }

    #[test]
    fn sample_mean_inside_range(xs in prop::collection::vec(0f64..1e12, 1..20)) {
        let m = Measurement::from_samples(&xs).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m.mean >= lo * (1.0 - 1e-12) && m.mean <= hi * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn first_order_spread_matches_monte_carlo(
        ma in 10f64..1e4,
        mb in 10f64..1e4,
        ra in 0.001f64..0.05,
        rb in 0.001f64..0.05,
        seed in any::<u64>(),
    ) {
        let a = Measurement::new(ma, ma * ra, 5).unwrap();
        let b = Measurement::new(mb, mb * rb, 5).unwrap();
        let ops: [(Measurement, fn(f64, f64) -> f64); 4] = [
            (a.add(&b, P).unwrap(), |x, y| x + y),
            (a.sub(&b, P).unwrap(), |x, y| x - y),
            (a.mul(&b, P).unwrap(), |x, y| x * y),
            (a.div(&b, P).unwrap(), |x, y| x / y),
        ];
        for (i, (prop, f)) in ops.iter().enumerate() {
            let mc = mc_sd(&a, &b, *f, 200_000, seed.wrapping_add(i as u64));
            prop_assert!((prop.sd - mc).abs() / mc < 0.03, "op {} analytic {} mc {}", i, prop.sd, mc);
        }
    }
}
