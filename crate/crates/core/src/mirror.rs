//! Mirror maps, Bregman divergences and the dual updates shared by all policies.

use serde::{Deserialize, Serialize};

use crate::error::MirrorError;

/// Bounds applied to `exp(log_lambda)`. The accumulator itself is never clamped.
pub const LAMBDA_MIN: f64 = 1e-300;
pub const LAMBDA_MAX: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorMap {
    /// `h(u) = u·ln u − u`
    GeneralizedNegEntropy,
    /// `h(u) = u²/2`
    HalfSquared,
}

/// `V_h(y, x) = h(y) − h(x) − h'(x)(y − x)`.
pub fn bregman(map: MirrorMap, y: f64, x: f64) -> Result<f64, MirrorError> {
    let in_domain = x > 0.0 && y >= 0.0 && x.is_finite() && y.is_finite();
    if !in_domain {
        return Err(MirrorError::Domain { y, x });
    }
    Ok(match map {
        MirrorMap::GeneralizedNegEntropy => {
            if y == 0.0 {
                x
            } else {
                // y·ln(y/x) − (y − x), with ln_1p for accuracy when y ≈ x.
                let diff = y - x;
                (y * (diff / x).ln_1p() - diff).max(0.0)
            }
        }
        MirrorMap::HalfSquared => 0.5 * (y - x) * (y - x),
    })
}

/// Dual variables of the return-on-spend (`lambda`) and budget (`mu`)
/// constraints together with their step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub eta: f64,
    /// Running sum of `−alpha·g`; `lambda = exp(log_lambda)` under the entropy map.
    pub log_lambda: f64,
    // Neumaier compensation for `log_lambda`.
    #[serde(skip)]
    compensation: f64,
}

impl DualState {
    /// `lambda = 1`, `mu = 0`.
    pub fn new(alpha: f64, eta: f64) -> Self {
        Self {
            lambda: 1.0,
            mu: 0.0,
            alpha,
            eta,
            log_lambda: 0.0,
            compensation: 0.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self.log_lambda = lambda.ln();
        self.compensation = 0.0;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Multiplicative update from the negative-entropy mirror map:
    /// `lambda ← lambda·exp(−alpha·g)`.
    pub fn update_ros_dual(mut self, g: f64) -> Self {
        let term = -self.alpha * g;
        let sum = self.log_lambda + term;
        if self.log_lambda.abs() >= term.abs() {
            self.compensation += (self.log_lambda - sum) + term;
        } else {
            self.compensation += (term - sum) + self.log_lambda;
        }
        self.log_lambda = sum;
        self.lambda = (self.log_lambda + self.compensation)
            .exp()
            .clamp(LAMBDA_MIN, LAMBDA_MAX);
        self
    }

    /// Projected update from the half-squared mirror map:
    /// `lambda ← max(0, lambda − alpha·g)`.
    pub fn update_ros_dual_squared(mut self, g: f64) -> Self {
        self.lambda = (self.lambda - self.alpha * g).max(0.0);
        self.log_lambda = self.lambda.ln();
        self.compensation = 0.0;
        self
    }

    /// Projected gradient step on the budget dual with `g_prime = rho − price`.
    pub fn update_budget_dual(mut self, g_prime: f64) -> Self {
        self.mu = (self.mu - self.eta * g_prime).max(0.0);
        self
    }

    /// Compensated value of the log-dual accumulator.
    pub fn log_lambda_exact(&self) -> f64 {
        self.log_lambda + self.compensation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_bregman_examples() {
        let e = MirrorMap::GeneralizedNegEntropy;
        assert_eq!(bregman(e, 1.0, 1.0).unwrap(), 0.0);
        let v = bregman(e, 2.0, 1.0).unwrap();
        assert!((v - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((v - 0.386294).abs() < 1e-6);
        assert_eq!(bregman(e, 0.0, 3.0).unwrap(), 3.0);
    }

    #[test]
    fn squared_bregman_example() {
        assert_eq!(bregman(MirrorMap::HalfSquared, 3.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn bregman_rejects_nonpositive_reference() {
        for x in [0.0, -1.0, f64::NAN] {
            assert!(bregman(MirrorMap::GeneralizedNegEntropy, 1.0, x).is_err());
            assert!(bregman(MirrorMap::HalfSquared, 1.0, x).is_err());
        }
        assert!(bregman(MirrorMap::GeneralizedNegEntropy, -0.5, 1.0).is_err());
    }

    #[test]
    fn ros_dual_examples() {
        let s = DualState::new(0.1, 0.0);
        assert_eq!(s.update_ros_dual(0.0).lambda, 1.0);
        assert!((s.update_ros_dual(1.0).lambda - 0.904837).abs() < 1e-6);
        assert!((s.update_ros_dual(1.0).lambda - (-0.1f64).exp()).abs() < 1e-16);
        assert!((s.update_ros_dual(-2.0).lambda - 1.221403).abs() < 1e-6);
    }

    #[test]
    fn squared_dual_examples() {
        let s = DualState::new(0.1, 0.0);
        assert_eq!(s.with_lambda(0.05).update_ros_dual_squared(1.0).lambda, 0.0);
        assert_eq!(s.update_ros_dual_squared(0.0).lambda, 1.0);
        assert!((s.update_ros_dual_squared(-2.0).lambda - 1.2).abs() < 1e-15);
    }

    #[test]
    fn budget_dual_examples() {
        let s = DualState::new(0.1, 0.01);
        assert_eq!(s.update_budget_dual(0.5).mu, 0.0);
        assert!((s.with_mu(0.1).update_budget_dual(-1.0).mu - 0.11).abs() < 1e-15);
        assert_eq!(s.with_mu(0.005).update_budget_dual(1.0).mu, 0.0);
    }

    #[test]
    fn lambda_clamps_without_losing_accumulator() {
        let mut s = DualState::new(1.0, 0.0);
        for _ in 0..800 {
            s = s.update_ros_dual(-1.0);
        }
        assert_eq!(s.lambda, LAMBDA_MAX);
        assert!((s.log_lambda_exact() - 800.0).abs() < 1e-9);
        for _ in 0..800 {
            s = s.update_ros_dual(1.0);
        }
        assert!((s.lambda - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bregman_nonnegative(y in 0.0f64..10.0, x in 1e-6f64..10.0) {
            for map in [MirrorMap::GeneralizedNegEntropy, MirrorMap::HalfSquared] {
                let v = bregman(map, y, x).unwrap();
                prop_assert!(v >= 0.0);
                if (y - x).abs() > 1e-3 {
                    prop_assert!(v > 0.0);
                }
            }
        }

        #[test]
        fn budget_dual_stays_nonnegative(mu in 0.0f64..5.0, eta in 1e-4f64..1.0, gp in -1.0f64..1.0) {
            let s = DualState::new(0.1, eta).with_mu(mu).update_budget_dual(gp);
            prop_assert!(s.mu >= 0.0);
        }

        #[test]
        fn lambda_tracks_its_log(gs in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
            let mut s = DualState::new(0.05, 0.0);
            for g in gs {
                s = s.update_ros_dual(g);
                let expect = s.log_lambda.exp();
                prop_assert!((s.lambda - expect).abs() <= 1e-13 * expect);
            }
        }
    }
}
