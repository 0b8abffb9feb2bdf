use dpfed_core::dp::{clip_update, dp_average, mean_update, ClientUpdate};
use dpfed_core::rng;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_bound(
        v in prop::collection::vec(-1e3f64..1e3, 1..64),
        s in 1e-3f64..1e3,
    ) {
        let u = ClientUpdate::new(v.clone());
        let c = clip_update(&u, s).unwrap();
        prop_assert!(norm(&c) <= s * (1.0 + 1e-12));
        if u.norm <= s {
            prop_assert_eq!(&c, &v);
        } else if u.norm > 0.0 {
            let cos = v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (u.norm * norm(&c));
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_bound_without_noise_is_exact_mean(
        rows in prop::collection::vec(prop::collection::vec(-10f64..10.0, 5), 1..12),
    ) {
        let ups: Vec<ClientUpdate> = rows.into_iter().map(ClientUpdate::new).collect();
        let max = ups.iter().map(|u| u.norm).fold(0.0, f64::max);
        let mut r = rng::stream(0, 0, 0);
        let a = dp_average(&ups, max.max(1e-9), 0.0, &mut r).unwrap();
        let b = mean_update(&ups).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregate_is_order_independent(
        rows in prop::collection::vec(prop::collection::vec(-10f64..10.0, 4), 2..10),
        seed in any::<u64>(),
    ) {
        let ups: Vec<ClientUpdate> = rows.into_iter().map(ClientUpdate::new).collect();
        let mut rev = ups.clone();
        rev.reverse();
        let s = ups.iter().map(|u| u.norm).sum::<f64>() / ups.len() as f64 + 1e-6;
        let a = dp_average(&ups, s, 0.7, &mut rng::stream(seed, 1, 1)).unwrap();
        let b = dp_average(&rev, s, 0.7, &mut rng::stream(seed, 1, 1)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }
}
