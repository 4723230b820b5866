//! Queries and truthful single-slot auction models.
//!
//! Every model is described by a non-decreasing allocation rule `x(b)`; the
//! payment is the Myerson payment `p(b) = b·x(b) − ∫₀ᵇ x(z) dz`. Built-in models
//! use closed forms, custom allocations are integrated numerically.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::AuctionError;
use crate::quadrature;

/// Absolute tolerance for the numerical payment integral of custom allocations.
pub const PAYMENT_TOLERANCE: f64 = 1e-9;

/// Residual below which an auction is considered truthful by [`check_truthful`].
pub const TRUTHFUL_TOLERANCE: f64 = 1e-6;

/// Upper end of the bid grid used by [`check_truthful`].
pub const CHECK_GRID_MAX_BID: f64 = 2.0;

type AllocationFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A user-supplied allocation rule.
#[derive(Clone)]
pub struct CustomAllocation {
    name: String,
    allocation: Arc<AllocationFn>,
    breakpoints: Vec<f64>,
}

impl CustomAllocation {
    pub fn new(
        name: impl Into<String>,
        allocation: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            allocation: Arc::new(allocation),
            breakpoints: Vec::new(),
        }
    }

    /// Known discontinuities of the allocation, used to split the payment integral.
    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for CustomAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomAllocation")
            .field("name", &self.name)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

/// A truthful auction as seen by a single bidder.
#[derive(Debug, Clone)]
pub enum AuctionModel {
    /// Single-item second-price auction against the highest competing bid.
    /// Ties are won by the bidder.
    SecondPrice {
        competing_bid: f64,
    },
    /// `x(b) = min(1, b)`.
    LinearAllocation,
    Custom(CustomAllocation),
}

impl AuctionModel {
    pub fn second_price(competing_bid: f64) -> Self {
        AuctionModel::SecondPrice { competing_bid }
    }

    /// Returns the competing bid for second-price auctions.
    pub fn competing_bid(&self) -> Option<f64> {
        match self {
            AuctionModel::SecondPrice { competing_bid } => Some(*competing_bid),
            _ => None,
        }
    }

    pub fn allocation(&self, bid: f64) -> f64 {
        match self {
            AuctionModel::SecondPrice { competing_bid } => {
                if bid >= *competing_bid {
                    1.0
                } else {
                    0.0
                }
            }
            AuctionModel::LinearAllocation => bid.min(1.0),
            AuctionModel::Custom(c) => (c.allocation)(bid),
        }
    }

    pub fn payment(&self, bid: f64) -> Result<f64, AuctionError> {
        match self {
            AuctionModel::SecondPrice { competing_bid } => Ok(if bid >= *competing_bid {
                *competing_bid
            } else {
                0.0
            }),
            AuctionModel::LinearAllocation => Ok(if bid <= 1.0 { 0.5 * bid * bid } else { 0.5 }),
            AuctionModel::Custom(_) => {
                let x = self.allocation(bid);
                if x == 0.0 {
                    return Ok(0.0);
                }
                let area = self.allocation_integral(bid)?;
                Ok(bid * x - area)
            }
        }
    }

    /// `∫₀ᵇ x(z) dz` by adaptive quadrature, split at the model's known
    /// discontinuities.
    pub fn allocation_integral(&self, bid: f64) -> Result<f64, AuctionError> {
        let bp = self.breakpoints();
        quadrature::integrate(|z| self.allocation(z), 0.0, bid, PAYMENT_TOLERANCE, &bp).map_err(
            |e| AuctionError::QuadratureFailure {
                bid,
                error: e.error,
            },
        )
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            AuctionModel::SecondPrice { competing_bid } => vec![*competing_bid],
            AuctionModel::LinearAllocation => vec![1.0],
            AuctionModel::Custom(c) => c.breakpoints.clone(),
        }
    }

    pub fn kind_name(&self) -> &str {
        match self {
            AuctionModel::SecondPrice { .. } => "second_price",
            AuctionModel::LinearAllocation => "linear_allocation",
            AuctionModel::Custom(c) => c.name(),
        }
    }
}

/// One ad request: the bidder's value and the auction it will be sold in.
#[derive(Debug, Clone)]
pub struct Query {
    pub value: f64,
    pub auction: AuctionModel,
}

impl Query {
    pub fn new(value: f64, auction: AuctionModel) -> Self {
        Self { value, auction }
    }

    pub fn second_price(value: f64, competing_bid: f64) -> Self {
        Self::new(value, AuctionModel::second_price(competing_bid))
    }
}

/// Outcome of [`check_truthful`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthfulnessReport {
    pub max_monotonicity_violation: f64,
    pub max_myerson_residual: f64,
}

impl TruthfulnessReport {
    pub fn passes(&self) -> bool {
        self.max_monotonicity_violation <= TRUTHFUL_TOLERANCE
            && self.max_myerson_residual <= TRUTHFUL_TOLERANCE
    }
}

/// Checks monotonicity of the allocation and the Myerson payment identity on
/// a uniform grid of `grid_size` bids over `[0, 2]`.
///
/// The integral term is always computed by quadrature, independently of the
/// closed-form payments of the built-in models.
pub fn check_truthful(
    model: &AuctionModel,
    grid_size: usize,
) -> Result<TruthfulnessReport, AuctionError> {
    if grid_size < 2 {
        return Err(AuctionError::InvalidGrid(grid_size));
    }
    let step = CHECK_GRID_MAX_BID / (grid_size - 1) as f64;
    let mut report = TruthfulnessReport {
        max_monotonicity_violation: 0.0,
        max_myerson_residual: 0.0,
    };
    let mut prev_x: Option<f64> = None;
    for i in 0..grid_size {
        let b = i as f64 * step;
        let x = model.allocation(b);
        if let Some(px) = prev_x {
            report.max_monotonicity_violation = report.max_monotonicity_violation.max(px - x);
        }
        prev_x = Some(x);
        let expected = b * x - model.allocation_integral(b)?;
        let residual = (model.payment(b)? - expected).abs();
        report.max_myerson_residual = report.max_myerson_residual.max(residual);
    }
    Ok(report)
}
