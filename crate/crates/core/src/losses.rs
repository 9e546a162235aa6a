//! Binary training objectives expressed through the class-1 probability.
//!
//! Every loss returns its value, the derivative with respect to the
//! predicted probability, and the derivative with respect to the two class
//! logits of the head that produced it. Constructed targets (hardened
//! confidence targets, product targets) are constants: no gradient flows
//! through them.

use serde::{Deserialize, Serialize};

use crate::scalar::{clamp_prob, Scalar};

/// Value and gradient of a loss at one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval<F> {
    pub value: F,
    /// d value / d p1.
    pub d_pred: F,
    /// d value / d [logit0, logit1], assuming p1 = softmax(logits)[1].
    pub d_logits: [F; 2],
}

impl<F: Scalar> LossEval<F> {
    fn new(value: F, d_pred: F, pred: F) -> Self {
        let g = d_pred * pred * (F::one() - pred);
        Self {
            value,
            d_pred,
            d_logits: [-g, g],
        }
    }
}

/// Loss selector as it appears in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossId {
    Ce,
    Conf,
    Prod,
    Rkl,
    Js,
}

impl LossId {
    pub const ALL: [LossId; 5] = [LossId::Ce, LossId::Conf, LossId::Prod, LossId::Rkl, LossId::Js];

    pub fn as_str(self) -> &'static str {
        match self {
            LossId::Ce => "ce",
            LossId::Conf => "conf",
            LossId::Prod => "prod",
            LossId::Rkl => "rkl",
            LossId::Js => "js",
        }
    }
}

/// Confidence-loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfParams {
    /// Mixing weight of the hardened prediction.
    pub alpha: f64,
    /// Hardening threshold.
    pub t: f64,
}

impl Default for ConfParams {
    fn default() -> Self {
        Self { alpha: 0.5, t: 0.5 }
    }
}

/// Cross-entropy between the predicted and the target binary distribution.
pub fn ce_soft<F: Scalar>(pred: F, target: F) -> LossEval<F> {
    let p = clamp_prob(pred);
    let q = target;
    let one = F::one();
    let value = -(q * p.ln() + (one - q) * (one - p).ln());
    let d_pred = -q / p + (one - q) / (one - p);
    LossEval::new(value, d_pred, pred)
}

/// Target of the auxiliary confidence loss.
pub fn conf_target<F: Scalar>(pred: F, weak: F, alpha: F, t: F) -> F {
    let hard = if pred > t { F::one() } else { F::zero() };
    (F::one() - alpha) * weak + alpha * hard
}

/// Cross-entropy against a mix of the weak label and the hardened prediction.
pub fn conf_loss<F: Scalar>(pred: F, weak: F, alpha: F, t: F) -> LossEval<F> {
    ce_soft(pred, conf_target(pred, weak, alpha, t))
}

/// Renormalized product of weak label and prediction; falls back to the
/// weak label when both products vanish.
pub fn prod_target<F: Scalar>(pred: F, weak: F) -> F {
    let one = F::one();
    let a = weak * pred;
    let b = (one - weak) * (one - pred);
    let z = a + b;
    if z > F::zero() {
        a / z
    } else {
        weak
    }
}

pub fn prod_loss<F: Scalar>(pred: F, weak: F) -> LossEval<F> {
    ce_soft(pred, prod_target(pred, weak))
}

/// Reverse KL: D_KL(pred ‖ weak).
pub fn rkl_loss<F: Scalar>(pred: F, weak: F) -> LossEval<F> {
    let p = clamp_prob(pred);
    let w = clamp_prob(weak);
    let one = F::one();
    let value = p * (p / w).ln() + (one - p) * ((one - p) / (one - w)).ln();
    let d_pred = (p / w).ln() - ((one - p) / (one - w)).ln();
    LossEval::new(value, d_pred, pred)
}

/// Jensen-Shannon divergence with the midpoint distribution.
pub fn js_loss<F: Scalar>(pred: F, weak: F) -> LossEval<F> {
    let p = clamp_prob(pred);
    let w = clamp_prob(weak);
    let one = F::one();
    let half = F::lit(0.5);
    let m = half * (p + w);
    let kl = |a: F| a * (a / m).ln() + (one - a) * ((one - a) / (one - m)).ln();
    let value = half * (kl(p) + kl(w));
    // Terms from differentiating m cancel.
    let d_pred = half * ((p / m).ln() - ((one - p) / (one - m)).ln());
    LossEval::new(value.max(F::zero()), d_pred, pred)
}

/// Dispatches a configured loss against a weak (or gold) target.
pub fn evaluate<F: Scalar>(id: LossId, conf: ConfParams, pred: F, target: F) -> LossEval<F> {
    match id {
        LossId::Ce => ce_soft(pred, target),
        LossId::Conf => conf_loss(pred, target, F::lit(conf.alpha), F::lit(conf.t)),
        LossId::Prod => prod_loss(pred, target),
        LossId::Rkl => rkl_loss(pred, target),
        LossId::Js => js_loss(pred, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_fixtures() {
        assert!((ce_soft(0.5f64, 0.5).value - std::f64::consts::LN_2).abs() < 1e-12);
        let v = ce_soft(0.8f64, 0.8).value;
        let expected = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.5004).abs() < 5e-5);
    }

    #[test]
    fn ce_logit_gradient_is_p_minus_target() {
        let e = ce_soft(0.3f64, 0.9);
        assert!((e.d_logits[1] - (0.3 - 0.9)).abs() < 1e-12);
        assert!((e.d_logits[0] + e.d_logits[1]).abs() < 1e-15);
    }

    #[test]
    fn conf_fixtures() {
        let e = conf_loss(0.8f64, 0.6, 0.5, 0.5);
        assert!((conf_target(0.8f64, 0.6, 0.5, 0.5) - 0.8).abs() < 1e-12);
        assert!((e.value - ce_soft(0.8, 0.8).value).abs() < 1e-12);
        assert_eq!(conf_target(0.7f64, 0.2, 1.0, 0.5), 1.0);
        assert_eq!(conf_loss(0.37f64, 0.81, 0.0, 0.5), ce_soft(0.37, 0.81));
    }

    #[test]
    fn prod_fixtures() {
        assert_eq!(prod_target(0.3f64, 1.0), 1.0);
        assert!((prod_loss(0.3f64, 1.0).value + 0.3f64.ln()).abs() < 1e-12);
        assert_eq!(prod_target(0.5f64, 0.5), 0.5);
        assert!((prod_target(0.8f64, 0.6) - 0.48 / 0.56).abs() < 1e-12);
        assert!((prod_target(0.8f64, 0.6) - 0.8571).abs() < 1e-4);
        // both products zero
        assert_eq!(prod_target(1.0f64, 0.0), 0.0);
    }

    #[test]
    fn rkl_fixtures() {
        assert!(rkl_loss(0.42f64, 0.42).value.abs() < 1e-15);
        let expected = 0.8 * (0.8f64 / 0.6).ln() + 0.2 * (0.2f64 / 0.4).ln();
        assert!((rkl_loss(0.8f64, 0.6).value - expected).abs() < 1e-12);
        assert!((expected - 0.0915).abs() < 1e-4);
    }

    #[test]
    fn js_fixtures() {
        assert!(js_loss(0.3f64, 0.3).value.abs() < 1e-15);
        assert!(js_loss(1.0f64, 0.0).value <= std::f64::consts::LN_2);
        let a = js_loss(0.2f64, 0.7).value;
        let b = js_loss(0.7f64, 0.2).value;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let c = ConfParams::default();
        assert_eq!(evaluate(LossId::Ce, c, 0.3f64, 0.6), ce_soft(0.3, 0.6));
        assert_eq!(evaluate(LossId::Conf, c, 0.3f64, 0.6), conf_loss(0.3, 0.6, 0.5, 0.5));
        assert_eq!(evaluate(LossId::Js, c, 0.3f64, 0.6), js_loss(0.3, 0.6));
    }

    #[test]
    fn loss_ids_round_trip_through_serde() {
        for id in LossId::ALL {
            let s = serde_json::to_string(&id).unwrap();
            assert_eq!(s, format!("\"{}\"", id.as_str()));
        }
    }
}
