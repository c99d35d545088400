//! Cost-function securities market backing PPS refunds.
//!
//! The market uses the liquidity-parameterised softplus cost
//! `C0(q) = b * ln(1 + exp(q / b))`, which is strictly increasing and convex
//! with slope in `(0, 1)`. A contributor paying `x` while `q` securities are
//! outstanding receives `C0^-1(x + C0(q)) - q` securities; each pays one unit
//! if the project fails, so the refund bonus is that count minus `x`.

use crate::error::{Error, Result};

/// `ln(1 - e^-z)` for `z > 0`, accurate at both ends.
pub(crate) fn log1mexp(z: f64) -> f64 {
    if z > std::f64::consts::LN_2 {
        (-(-z).exp()).ln_1p()
    } else {
        (-(-z).exp_m1()).ln()
    }
}

fn check_liquidity(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLiquidity(b))
    }
}

/// Market cost `C0(q)`. Evaluated through the softplus identity so large
/// `q / b` does not overflow.
pub fn pps_cost(q: f64, b: f64) -> Result<f64> {
    check_liquidity(b)?;
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Domain(format!(
            "outstanding quantity must be finite and non-negative, got {q}"
        )));
    }
    Ok(q + b * (-q / b).exp().ln_1p())
}

/// Inverse cost: the quantity `q >= 0` with `C0(q) = c`.
///
/// `c` must be at least `C0(0) = b ln 2`.
pub fn pps_cost_inverse(c: f64, b: f64) -> Result<f64> {
    check_liquidity(b)?;
    let min = b * std::f64::consts::LN_2;
    if !c.is_finite() || c < min * (1.0 - 4.0 * f64::EPSILON) {
        return Err(Error::OutOfRange { cost: c, min });
    }
    // q = b ln(e^{c/b} - 1) = c + b ln(1 - e^{-c/b})
    let q = c + b * log1mexp(c / b);
    Ok(q.max(0.0))
}

/// Securities issued to a payment of `x` at market state `q`.
pub fn securities_issued(x: f64, q: f64, b: f64) -> Result<f64> {
    let target = x + pps_cost(q, b)?;
    Ok(pps_cost_inverse(target, b)? - q)
}

/// Refund bonus `C0^-1(x + C0(q)) - q - x` for a payment of `x` at state `q`.
pub fn pps_refund(x: f64, q: f64, b: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "contribution must be finite and non-negative, got {x}"
        )));
    }
    let cost_before = pps_cost(q, b)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let cost_after = cost_before + x;
    // Checks the inverse's domain; the value itself comes from the algebraic
    // form below, which avoids subtracting nearly equal quantities:
    // C0^-1(c) - q - x = (C0(q) - q) + b ln(1 - e^{-c/b}).
    pps_cost_inverse(cost_after, b)?;
    let premium = b * (-q / b).exp().ln_1p();
    let refund = premium + b * log1mexp(cost_after / b);
    Ok(refund.max(0.0))
}

/// Outstanding quantity after contributions totalling `paid` have entered a
/// market that started at `q = 0`. Each purchase raises the cost by exactly
/// its payment, so the state depends only on the running total.
pub fn outstanding_after(paid: f64, b: f64) -> Result<f64> {
    pps_cost_inverse(b * std::f64::consts::LN_2 + paid, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn naive_cost(q: f64, b: f64) -> f64 {
        b * (1.0 + (q / b).exp()).ln()
    }

    #[test]
    fn cost_at_origin_is_b_ln2() {
        assert!((pps_cost(0.0, 1.0).unwrap() - LN_2).abs() < 1e-15);
        assert!((pps_cost(0.0, 3.0).unwrap() - 3.0 * LN_2).abs() < 1e-14);
    }

    #[test]
    fn cost_matches_naive_form_at_moderate_q() {
        let stable = pps_cost(10.0, 1.0).unwrap();
        assert!((stable - naive_cost(10.0, 1.0)).abs() < 1e-12);
        assert!((stable - 10.000_045_398_899_218).abs() < 1e-12);
        assert!(pps_cost(5.0, 1.0).unwrap() < pps_cost(6.0, 1.0).unwrap());
    }

    #[test]
    fn cost_does_not_overflow() {
        let c = pps_cost(1.0e4, 1.0).unwrap();
        assert!((c - 1.0e4).abs() < 1e-9);
    }

    #[test]
    fn inverse_at_minimum_is_zero() {
        assert_eq!(pps_cost_inverse(LN_2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn inverse_round_trips() {
        let c = pps_cost(7.3, 2.0).unwrap();
        let q = pps_cost_inverse(c, 2.0).unwrap();
        assert!((q - 7.3).abs() < 1e-9);
    }

    #[test]
    fn inverse_below_range_is_rejected() {
        assert!(matches!(
            pps_cost_inverse(0.5 * LN_2, 1.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn non_positive_liquidity_is_rejected() {
        assert_eq!(pps_cost(1.0, 0.0), Err(Error::InvalidLiquidity(0.0)));
        assert_eq!(pps_cost_inverse(1.0, -2.0), Err(Error::InvalidLiquidity(-2.0)));
    }

    #[test]
    fn refund_closed_form_at_origin() {
        // ln(2e - 1) - 1
        let expected = (2.0 * std::f64::consts::E - 1.0).ln() - 1.0;
        let r = pps_refund(1.0, 0.0, 1.0).unwrap();
        assert!((r - expected).abs() < 1e-14);
        assert!((r - 0.489_880_125_644_749_8).abs() < 1e-12);
    }

    #[test]
    fn refund_matches_inverse_route() {
        for &(x, q, b) in &[(1.0, 0.0, 1.0), (2.5, 3.0, 1.5), (0.3, 8.0, 0.7)] {
            let via_inverse = securities_issued(x, q, b).unwrap() - x;
            let r = pps_refund(x, q, b).unwrap();
            assert!((r - via_inverse).abs() < 1e-10, "{x} {q} {b}");
        }
    }

    #[test]
    fn refund_decreases_with_outstanding_quantity() {
        assert!(pps_refund(1.0, 0.0, 1.0).unwrap() > pps_refund(1.0, 5.0, 1.0).unwrap());
    }

    #[test]
    fn refund_vanishes_for_tiny_payment() {
        assert!(pps_refund(1e-12, 2.0, 1.0).unwrap() < 1e-11);
        assert_eq!(pps_refund(0.0, 2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn outstanding_tracks_sequential_purchases() {
        let b = 1.3;
        let mut q = 0.0;
        let mut paid = 0.0;
        for x in [2.0, 0.5, 4.0, 1.25] {
            q += securities_issued(x, q, b).unwrap();
            paid += x;
            assert!((outstanding_after(paid, b).unwrap() - q).abs() < 1e-9);
        }
    }
}
