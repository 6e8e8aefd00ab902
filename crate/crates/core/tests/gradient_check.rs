mod common;

use common::gradcheck::{check_bce, check_network, check_smooth_l1, layer_cases, MAX_REL_ERR};

const INSTANCES: u64 = 20;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, _, _, _) in layer_cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..INSTANCES {
            let (_, net, batch, avoid_zero) = layer_cases()
                .into_iter()
                .find(|c| c.0 == name)
                .unwrap();
            worst = worst.max(check_network(net, batch, seed, avoid_zero));
        }
        assert!(worst < MAX_REL_ERR, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn losses_match_finite_differences() {
    for seed in 0..INSTANCES {
        let e = check_bce(seed);
        assert!(e < MAX_REL_ERR, "bce seed {seed}: {e:e}");
        let e = check_smooth_l1(seed);
        assert!(e < MAX_REL_ERR, "smooth l1 seed {seed}: {e:e}");
    }
}
