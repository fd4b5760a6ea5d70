#![allow(clippy::needless_range_loop)]

mod common;

use common::{reward_oracle, RewardCase};
use loadadapt::rewards::{compute_reward, RewardConfig, TERM_COUNT};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_term_matches_the_table_oracle(seed in any::<u64>(), literal in any::<bool>()) {
        let case = RewardCase::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = RewardConfig { literal_smoothness: literal, ..RewardConfig::default() };
        let got = compute_reward(&cfg, &case.inputs());
        let want = reward_oracle(&cfg, &case);
        for i in 0..TERM_COUNT {
            prop_assert!(close(got.terms[i], want[i]), "term {i}: {} vs {}", got.terms[i], want[i]);
        }
        prop_assert!(close(got.total, want.iter().sum()));
    }

    #[test]
    fn penalties_are_never_positive_and_tracking_is_bounded(seed in any::<u64>()) {
        let case = RewardCase::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = RewardConfig::default();
        let r = compute_reward(&cfg, &case.inputs());
        let w = cfg.weights.as_array();
        for i in 0..TERM_COUNT {
            if w[i] < 0.0 {
                prop_assert!(r.terms[i] <= 0.0);
            }
        }
        prop_assert!(r.terms[0] > 0.0 && r.terms[0] <= 2.0);
        prop_assert!(r.terms[1] > 0.0 && r.terms[1] <= 0.5);
    }

    #[test]
    fn load_term_falls_with_load_speed(v in 0.0f64..5.0, dv in 1e-3f64..5.0) {
        let mut case = RewardCase::random(&mut ChaCha8Rng::seed_from_u64(1));
        let cfg = RewardConfig::default();
        case.load_velocity = Some(v);
        let slow = compute_reward(&cfg, &case.inputs()).terms[14];
        case.load_velocity = Some(-(v + dv));
        let fast = compute_reward(&cfg, &case.inputs()).terms[14];
        prop_assert!(fast < slow);
    }
}
