use proptest::prelude::*;
use w2s_core::losses::{ce_soft, conf_loss, conf_target, evaluate, js_loss, prod_target, rkl_loss, ConfParams, LossId};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn hand_evaluated_values() {
    assert!(close(ce_soft(0.5, 0.5).value, std::f64::consts::LN_2, 1e-12));
    assert!(close(ce_soft(0.8, 0.8).value, 0.5004, 1e-4));
    assert_eq!(conf_target(0.8, 0.6, 0.5, 0.5), 0.8);
    assert!(close(conf_loss(0.8, 0.6, 0.5, 0.5).value, 0.5004, 1e-4));
    assert!(close(prod_target(0.8, 0.6), 0.48 / 0.56, 1e-12));
    assert_eq!(prod_target(0.5, 0.5), 0.5);
    assert!(close(rkl_loss(0.8, 0.6).value, 0.0915, 1e-4));
}

proptest! {
    #[test]
    fn losses_are_nonnegative_and_bounded(p in 0.0f64..=1.0, w in 0.0f64..=1.0) {
        let conf = ConfParams::default();
        for id in LossId::ALL {
            prop_assert!(evaluate(id, conf, p, w).value >= -1e-12, "{} negative", id.as_str());
        }
        prop_assert!(js_loss(p, w).value <= std::f64::consts::LN_2 + 1e-12);
    }

    #[test]
    fn divergences_vanish_only_on_the_diagonal(p in 0.001f64..0.999, w in 0.001f64..0.999) {
        prop_assert!(rkl_loss(p, p).value.abs() < 1e-12);
        prop_assert!(js_loss(p, p).value.abs() < 1e-12);
        if (p - w).abs() > 1e-3 {
            prop_assert!(rkl_loss(p, w).value > 0.0);
            prop_assert!(js_loss(p, w).value > 0.0);
        }
    }

    #[test]
    fn cross_entropy_is_minimized_at_the_target(p in 0.001f64..0.999, t in 0.0f64..=1.0) {
        prop_assert!(ce_soft(p, t).value >= ce_soft(t.clamp(1e-7, 1.0 - 1e-7), t).value - 1e-12);
    }

    #[test]
    fn js_is_symmetric(p in 0.0f64..=1.0, w in 0.0f64..=1.0) {
        prop_assert!((js_loss(p, w).value - js_loss(w, p).value).abs() < 1e-12);
    }

    #[test]
    fn conf_without_mixing_is_plain_cross_entropy(p in 0.0f64..=1.0, w in 0.0f64..=1.0, t in 0.01f64..0.99) {
        prop_assert_eq!(conf_loss(p, w, 0.0, t).value, ce_soft(p, w).value);
    }

    #[test]
    fn certain_weak_label_dominates_the_product(p in 0.001f64..0.999) {
        prop_assert_eq!(prod_target(p, 1.0), 1.0);
        prop_assert!(close(evaluate(LossId::Prod, ConfParams::default(), p, 1.0).value, -p.ln(), 1e-12));
    }
}
