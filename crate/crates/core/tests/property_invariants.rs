//! Property tests for the crate-wide invariants.

use proptest::prelude::*;

use sgdsim::oracles::{NoiseSpec, Oracle};
use sgdsim::problems::{
    block_separable_value_gradient, curvature_constants, quadratic_band_gradient,
    quadratic_band_value, BlockSeparableSpec, Problem, QuadraticBandSpec,
};
use sgdsim::schedulers::{degree_of_parallelism, ScheduleKind, ScheduleSpec, Simulator};
use sgdsim::theory;

fn fd_gradient(spec: &QuadraticBandSpec, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = quadratic_band_value(spec, &xp).unwrap();
        xp[i] = x[i] - h;
        let fm = quadratic_band_value(spec, &xp).unwrap();
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

proptest! {
    #[test]
    fn band_gradient_consistent_with_value(
        d in 2usize..24,
        lambda in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let spec = QuadraticBandSpec::new(d, lambda).unwrap();
        let mut rng = sgdsim::seedstream::stream(seed, &["prop"]);
        use rand::Rng;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = quadratic_band_gradient(&spec, &x).unwrap();
        let fd = fd_gradient(&spec, &x, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn block_gradient_is_blockwise_exact(
        d in 2usize..8,
        blocks in 1usize..6,
        lambda in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let inner = QuadraticBandSpec::new(d, lambda).unwrap();
        let spec = BlockSeparableSpec::new(inner, blocks).unwrap();
        let mut rng = sgdsim::seedstream::stream(seed, &["prop"]);
        use rand::Rng;
        let x: Vec<f64> = (0..spec.total_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (v, g) = block_separable_value_gradient(&spec, &x).unwrap();
        let mut vsum = 0.0;
        for i in 0..blocks {
            let r = spec.block_range(i);
            vsum += quadratic_band_value(&inner, &x[r.clone()]).unwrap();
            let gb = quadratic_band_gradient(&inner, &x[r.clone()]).unwrap();
            prop_assert_eq!(&g[r], gb.as_slice());
        }
        prop_assert!((v - vsum).abs() <= 1e-12 * vsum.abs().max(1.0));
    }

    #[test]
    fn curvature_brackets_rayleigh_quotients(
        d in 2usize..24,
        lambda in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let spec = QuadraticBandSpec::new(d, lambda).unwrap();
        let (l, mu) = curvature_constants(&spec);
        let mut rng = sgdsim::seedstream::stream(seed, &["prop"]);
        use rand::Rng;
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        v.iter_mut().for_each(|x| *x /= norm);
        let g = quadratic_band_gradient(&spec, &v).unwrap();
        let rayleigh: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(rayleigh >= mu - 1e-9);
        prop_assert!(rayleigh <= l + 1e-9);
    }

    #[test]
    fn speedup_and_normalized_time_are_reciprocal(
        b in 1.0f64..1e6,
        m in 0.0f64..1e5,
        sigma_star2 in 0.0f64..100.0,
        eps in 1e-9f64..10.0,
    ) {
        let s = theory::predicted_speedup(b, m, sigma_star2, eps);
        let n = theory::predicted_normalized_time(b, m, sigma_star2, eps);
        prop_assert!((s * n - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn critical_batch_size_at_least_one(
        sigma_star2 in 0.0f64..100.0,
        eps in 1e-9f64..10.0,
        m in 0.0f64..1e5,
    ) {
        let b = theory::critical_batch_size(sigma_star2, eps, m).unwrap();
        prop_assert!(b >= 1.0);
        let is_one = b == 1.0;
        let should_be_one = sigma_star2 == 0.0 && m == 0.0;
        prop_assert_eq!(is_one, should_be_one);
    }

    #[test]
    fn smj_bound_never_exceeds_sk_bound(
        l in 0.1f64..20.0,
        m in 0.0f64..100.0,
        tau in 1u64..64,
        sigma2 in 0.0f64..10.0,
        scale in 0.0f64..100.0,
        frac in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = sgdsim::seedstream::stream(seed, &["prop"]);
        use rand::Rng;
        let history: Vec<f64> = (0..tau).map(|_| rng.random_range(0.0..=scale.max(1e-12))).collect();
        let gamma = frac * theory::critical_stepsize(l, m, tau as f64).unwrap();
        let smj = theory::rt_bound_smj(&history, l, m, tau, gamma, sigma2).unwrap();
        let sk = theory::rt_bound_sk(&history, l, tau, gamma, sigma2).unwrap();
        let simplified = smj.simplified.unwrap();
        prop_assert!(simplified <= sk * (1.0 + 1e-12));
        prop_assert!(smj.general <= simplified * (1.0 + 1e-12));
    }

    #[test]
    fn lemma_trick_holds_for_compliant_distributions(
        values in proptest::collection::vec(-10.0f64..10.0, 1..6),
        weights in proptest::collection::vec(0.01f64..1.0, 1..6),
        delta_slack in 0.0f64..0.5,
    ) {
        let n = values.len().min(weights.len());
        // Normalize the nonzero mass to some delta <= 1, put the rest on 0.
        let wsum: f64 = weights[..n].iter().sum();
        let delta = (0.5 + delta_slack).min(1.0);
        let mass = delta * 0.9;
        let mut atoms: Vec<(f64, f64)> = values[..n]
            .iter()
            .zip(&weights[..n])
            .filter(|(v, _)| **v != 0.0)
            .map(|(v, w)| (*v, w / wsum * mass))
            .collect();
        let nonzero: f64 = atoms.iter().map(|(_, p)| p).sum();
        atoms.push((0.0, 1.0 - nonzero));
        let dist = theory::FiniteDistribution::new(atoms).unwrap();
        let report = theory::verify_lemma_trick(&dist, delta);
        prop_assert!(report.precondition_ok);
        prop_assert!(report.holds, "violation: {report:?}");
    }

    #[test]
    fn measured_parallelism_never_exceeds_configured(
        kind_pick in 0u8..3,
        parallelism in 1u64..12,
        seed in any::<u64>(),
    ) {
        let kind = match kind_pick {
            0 => ScheduleKind::MiniBatch,
            1 => ScheduleKind::ExactDelay,
            _ => ScheduleKind::RandomCoordinateDelay,
        };
        let problem = Problem::Band(QuadraticBandSpec::new(6, 0.2).unwrap());
        let oracle = Oracle::Gaussian(NoiseSpec::new(1.0, 0.1, None).unwrap());
        let spec = ScheduleSpec::new(kind, parallelism, 1e-3).unwrap();
        let mut sim = Simulator::new(problem, oracle, spec, vec![5.0; 6], seed)
            .unwrap()
            .with_recording();
        for _ in 0..25 {
            sim.advance().unwrap();
        }
        let trace = sim.trace().unwrap();
        prop_assert!(degree_of_parallelism(trace) <= parallelism);
        // No write lost or duplicated.
        let log = sim.gradient_log().unwrap();
        for (k, g) in log.iter().enumerate() {
            prop_assert_eq!(trace.coords_written_for(k as u64), g.support.len());
        }
    }
}
