mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streamsched::baseline::{baseline_schedule, evaluate_scheduler, random_schedule, BaselineError};
use streamsched::topology::{round_robin_schedule, Grouping};

use common::{chain, cluster, stochastic};

#[test]
fn random_placement_is_uniform_over_machines() {
    let spec = chain(10.0, &[(1, 0.001), (4, 0.001)], Grouping::Shuffle);
    let machines = 4;
    let c = cluster(machines, 0.001, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 10_000;
    let mut counts = vec![[0usize; 4]; spec.total_executors()];
    for _ in 0..draws {
        let s = random_schedule(&spec, &c, &mut rng);
        for (t, &m) in s.assignment().iter().enumerate() {
            counts[t][m] += 1;
        }
    }
    let p = 1.0 / machines as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for row in counts {
        for c in row {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }
}

#[test]
fn schedules_are_one_hot_rows() {
    let spec = chain(10.0, &[(2, 0.001), (5, 0.001), (3, 0.001)], Grouping::Shuffle);
    let c = cluster(3, 0.001, 4.0);
    for seed in 0..20 {
        for name in ["round-robin", "random"] {
            let s = baseline_schedule(name, &spec, &c, seed).unwrap();
            assert_eq!(s.threads(), 10);
            for row in s.to_rows() {
                assert_eq!(row.iter().map(|&x| x as u32).sum::<u32>(), 1);
            }
        }
    }
    assert_eq!(
        baseline_schedule("round-robin", &spec, &c, 0).unwrap(),
        round_robin_schedule(&spec, &c)
    );
}

#[test]
fn random_varies_at_least_as_much_as_round_robin() {
    let spec = chain(250.0, &[(1, 0.0005), (6, 0.003), (4, 0.001)], Grouping::Shuffle);
    let c = cluster(3, 0.002, 2.0);
    let sim = stochastic(0, 0.2, 0.5, 1);
    let seeds: Vec<u64> = (1..=20).collect();
    let rr = evaluate_scheduler("round-robin", &spec, &c, &sim, &seeds).unwrap();
    let random = evaluate_scheduler("random", &spec, &c, &sim, &seeds).unwrap();
    assert_eq!(rr.samples.len(), 20);
    assert!(random.variance >= rr.variance, "{} < {}", random.variance, rr.variance);
}

#[test]
fn evaluation_is_reproducible() {
    let spec = chain(100.0, &[(1, 0.0005), (3, 0.002)], Grouping::Shuffle);
    let c = cluster(2, 0.001, 2.0);
    let sim = stochastic(0, 0.1, 0.3, 2);
    let a = evaluate_scheduler("random", &spec, &c, &sim, &[4, 5, 6]).unwrap();
    let b = evaluate_scheduler("random", &spec, &c, &sim, &[4, 5, 6]).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        evaluate_scheduler("random", &spec, &c, &sim, &[]),
        Err(BaselineError::NoRepetitions)
    ));
}
