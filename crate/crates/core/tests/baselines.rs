use dpt_core::baselines::{abs_groups, abs_policy, AbsConfig, CriticWeights};
use dpt_core::netsim::{build_topology, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn critic_loss_never_rises_on_frozen_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 2 * 2 + 2 * 2;
    let batch: Vec<(Vec<f64>, f64)> = (0..100)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let y = x.iter().enumerate().map(|(i, v)| (v * (i + 1) as f64).sin()).sum::<f64>() / dim as f64;
            (x, y)
        })
        .collect();
    let mut critic = CriticWeights::init(dim, [64, 32], &mut rng);
    let mut prev = critic.loss(&batch);
    let first = prev;
    for epoch in 0..300 {
        critic.regression_step(&batch, 1e-3);
        let loss = critic.loss(&batch);
        assert!(loss <= prev, "epoch {epoch}: {prev} -> {loss}");
        prev = loss;
    }
    assert!(prev < first);
}

#[test]
fn neighbours_never_transmit_together() {
    for side in [2usize, 3, 5] {
        let top = build_topology(&ScenarioConfig {
            grid_side: side,
            num_users: 30,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let groups = abs_groups(&top);
        let alloc = abs_policy(&top, &AbsConfig::default(), 10).unwrap();
        for r in 0..side {
            for c in 0..side {
                let a = r * side + c;
                let mut neighbours = Vec::new();
                if r + 1 < side {
                    neighbours.push(a + side);
                }
                if c + 1 < side {
                    neighbours.push(a + 1);
                }
                for b in neighbours {
                    assert_ne!(groups[a], groups[b]);
                    for l in 0..10 {
                        assert!(alloc.get(a, l) == 0.0 || alloc.get(b, l) == 0.0, "{a} and {b} in subframe {l}");
                    }
                }
                let blanked = (0..10).filter(|&l| alloc.get(a, l) == 0.0).count();
                assert_eq!(blanked, 5);
            }
        }
    }
}
