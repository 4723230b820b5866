//! Offline benchmarks: the best reward achievable with hindsight on a realized
//! query stream, subject to the RoS constraint and optionally a budget.
//!
//! For second-price auctions a bid only decides win or lose, so the optimum is
//! a subset-selection problem. It is solved exactly by branch and bound for
//! short streams and bounded from above by its fractional relaxation
//! otherwise. Other auction models are bounded by a Lagrangian dual.

use serde::{Deserialize, Serialize};

use crate::auction::{AuctionModel, Query};
use crate::error::OracleError;

/// Largest stream solved by exhaustive search.
pub const MAX_EXACT_QUERIES: usize = 25;

/// Largest tolerated difference between the LP dual and primal values.
pub const LP_GAP_TOLERANCE: f64 = 1e-7;

const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OfflineInstance {
    pub queries: Vec<Query>,
    /// Budget rate; the budget is `rho·T`.
    pub rho: Option<f64>,
}

impl OfflineInstance {
    pub fn new(queries: Vec<Query>, rho: Option<f64>) -> Self {
        Self { queries, rho }
    }

    /// Builds a second-price instance from `(value, competing_bid)` pairs.
    pub fn second_price(pairs: &[(f64, f64)], rho: Option<f64>) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|&(v, d)| Query::second_price(v, d))
                .collect(),
            rho,
        )
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn budget(&self) -> Option<f64> {
        self.rho.map(|r| r * self.queries.len() as f64)
    }

    fn second_price_pairs(&self) -> Result<Vec<(f64, f64)>, OracleError> {
        self.queries
            .iter()
            .enumerate()
            .map(|(i, q)| match q.auction {
                AuctionModel::SecondPrice { competing_bid } => Ok((q.value, competing_bid)),
                _ => Err(OracleError::UnsupportedAuction(i)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ExactEnumeration,
    FractionalLp,
    LagrangianDual,
}

impl OracleMethod {
    pub fn name(self) -> &'static str {
        match self {
            OracleMethod::ExactEnumeration => "exact_enumeration",
            OracleMethod::FractionalLp => "fractional_lp",
            OracleMethod::LagrangianDual => "lagrangian_dual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub opt_value: f64,
    pub method: OracleMethod,
    pub is_upper_bound: bool,
    /// Winning rounds (0-based) for exact solutions.
    pub chosen_set: Option<Vec<usize>>,
}

/// Exact optimum over all subsets of rounds.
///
/// Partial sums are accumulated in ascending round order, so the feasibility
/// test of each subset sees the same floating-point sums as a plain
/// enumeration would.
pub fn opt_exact(instance: &OfflineInstance) -> Result<OracleResult, OracleError> {
    let n = instance.len();
    if n > MAX_EXACT_QUERIES {
        return Err(OracleError::TooLarge {
            got: n,
            max: MAX_EXACT_QUERIES,
        });
    }
    let pairs = instance.second_price_pairs()?;
    let budget = instance.budget().unwrap_or(f64::INFINITY);

    // Suffix bounds for pruning.
    let mut rest_value = vec![0.0; n + 1];
    let mut rest_surplus = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let (v, d) = pairs[i];
        rest_value[i] = rest_value[i + 1] + v;
        rest_surplus[i] = rest_surplus[i + 1] + (v - d).max(0.0);
    }

    let mut search = Search {
        pairs: &pairs,
        budget,
        rest_value: &rest_value,
        rest_surplus: &rest_surplus,
        best: 0.0,
        best_set: Vec::new(),
        current: Vec::with_capacity(n),
    };
    search.visit(0, 0.0, 0.0);

    Ok(OracleResult {
        opt_value: search.best,
        method: OracleMethod::ExactEnumeration,
        is_upper_bound: false,
        chosen_set: Some(search.best_set),
    })
}

struct Search<'a> {
    pairs: &'a [(f64, f64)],
    budget: f64,
    rest_value: &'a [f64],
    rest_surplus: &'a [f64],
    best: f64,
    best_set: Vec<usize>,
    current: Vec<usize>,
}

impl Search<'_> {
    fn visit(&mut self, i: usize, value: f64, spend: f64) {
        if spend > self.budget {
            return;
        }
        if value + self.rest_value[i] + PRUNE_SLACK <= self.best {
            return;
        }
        if spend - value > self.rest_surplus[i] + PRUNE_SLACK {
            return;
        }
        if i == self.pairs.len() {
            if spend <= value && value > self.best {
                self.best = value;
                self.best_set.clone_from(&self.current);
            }
            return;
        }
        let (v, d) = self.pairs[i];
        self.current.push(i);
        self.visit(i + 1, value + v, spend + d);
        self.current.pop();
        self.visit(i + 1, value, spend);
    }
}

/// Solution of the relaxation for a fixed budget multiplier.
#[derive(Debug, Clone, Copy)]
struct Relaxed {
    value: f64,
    spend: f64,
}

/// Maximizes `Σ (v − μd)·x` subject to `Σ (d − v)·x ≤ 0`, `x ∈ [0,1]ᵀ`.
///
/// With a single constraint the dual is one-dimensional: as its multiplier
/// grows, profitable rounds that consume RoS slack leave the solution and
/// unprofitable rounds that supply slack enter it, each at its own ratio.
/// Sweeping those events in order until the constraint is met gives the
/// optimum with at most one fractional round.
fn solve_ros_only(pairs: &[(f64, f64)], mu: f64) -> Relaxed {
    struct Event {
        ratio: f64,
        value: f64,
        spend: f64,
        delta: f64,
        entering: bool,
    }

    let mut value = 0.0;
    let mut spend = 0.0;
    let mut slack_use = 0.0; // Σ (d − v)·x
    let mut events = Vec::new();
    for &(v, d) in pairs {
        let c = v - mu * d;
        let w = d - v;
        if c > 0.0 && w <= 0.0 {
            value += v;
            spend += d;
            slack_use += w;
        } else if c > 0.0 {
            value += v;
            spend += d;
            slack_use += w;
            events.push(Event {
                ratio: c / w,
                value: v,
                spend: d,
                delta: w,
                entering: false,
            });
        } else if w < 0.0 {
            if c == 0.0 {
                value += v;
                spend += d;
                slack_use += w;
            } else {
                events.push(Event {
                    ratio: -c / -w,
                    value: v,
                    spend: d,
                    delta: -w,
                    entering: true,
                });
            }
        }
    }
    if slack_use <= 0.0 {
        return Relaxed { value, spend };
    }
    events.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let last = events.len().saturating_sub(1);
    for (k, e) in events.iter().enumerate() {
        if slack_use <= e.delta || k == last {
            let f = (slack_use / e.delta).min(1.0);
            let x = if e.entering { f } else { 1.0 - f };
            // Undo the full-inclusion bookkeeping for leaving rounds.
            let shift = if e.entering { x } else { x - 1.0 };
            value += shift * e.value;
            spend += shift * e.spend;
            break;
        }
        let sign = if e.entering { 1.0 } else { -1.0 };
        value += sign * e.value;
        spend += sign * e.spend;
        slack_use -= e.delta;
    }
    Relaxed { value, spend }
}

/// Upper bound from the fractional relaxation
/// `max Σ v·x  s.t.  Σ d·x ≤ Σ v·x,  Σ d·x ≤ ρT,  x ∈ [0,1]ᵀ`.
///
/// The budget multiplier is found by bisection on the spend of the RoS-only
/// solution. The two bracketing solutions are mixed into a primal point that
/// spends the budget exactly, and the reported value is the smaller of the
/// two dual values, which is always a valid upper bound.
pub fn opt_lp_upper_bound(instance: &OfflineInstance) -> Result<OracleResult, OracleError> {
    let pairs = instance.second_price_pairs()?;
    let result = |opt_value: f64| OracleResult {
        opt_value: opt_value.max(0.0),
        method: OracleMethod::FractionalLp,
        is_upper_bound: true,
        chosen_set: None,
    };

    let free = solve_ros_only(&pairs, 0.0);
    let budget = match instance.budget() {
        Some(b) if free.spend > b => b,
        _ => return Ok(result(free.value)),
    };

    let mut lo = 0.0;
    let mut hi = pairs
        .iter()
        .filter(|&&(_, d)| d > 0.0)
        .map(|&(v, d)| v / d)
        .fold(0.0, f64::max)
        + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if solve_ros_only(&pairs, mid).spend > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_lo = solve_ros_only(&pairs, lo);
    let x_hi = solve_ros_only(&pairs, hi);
    let dual = |mu: f64, s: Relaxed| s.value + mu * (budget - s.spend);
    let upper = dual(lo, x_lo).min(dual(hi, x_hi));

    let primal = if x_lo.spend > x_hi.spend {
        let theta = ((budget - x_hi.spend) / (x_lo.spend - x_hi.spend)).clamp(0.0, 1.0);
        theta * x_lo.value + (1.0 - theta) * x_hi.value
    } else {
        x_hi.value
    };
    let gap = upper - primal;
    if gap > LP_GAP_TOLERANCE {
        return Err(OracleError::NumericalFailure { gap });
    }
    Ok(result(upper))
}

const LOG_LAMBDA_RANGE: (f64, f64) = (-13.815_510_557_964_274, 13.815_510_557_964_274); // ln 1e∓6
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizes a unimodal function on `[a, b]` by golden-section search and
/// returns the smallest value seen, including both endpoints.
fn golden_min<F: FnMut(f64) -> Result<f64, OracleError>>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    iterations: usize,
) -> Result<f64, OracleError> {
    let mut best = f(a)?.min(f(b)?);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iterations {
        best = best.min(fc).min(fd);
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d)?;
        }
    }
    Ok(best.min(fc).min(fd))
}

/// `μB + Σ max_b [(1+λ)·v·x(b) − (λ+μ)·p(b)]`, maximized per round by the
/// truthful bid for the value `(1+λ)v/(λ+μ)`.
fn lagrangian(queries: &[Query], budget: f64, lambda: f64, mu: f64) -> Result<f64, OracleError> {
    let mut total = if mu > 0.0 { mu * budget } else { 0.0 };
    for q in queries {
        let bid = (1.0 + lambda) * q.value / (lambda + mu);
        let x = q.auction.allocation(bid);
        let p = q.auction.payment(bid)?;
        total += ((1.0 + lambda) * q.value * x - (lambda + mu) * p).max(0.0);
    }
    Ok(total)
}

/// Lagrangian dual upper bound for arbitrary truthful auctions.
///
/// Every multiplier pair yields a valid bound by weak duality; the search only
/// tightens it.
pub fn opt_dual_upper_bound(instance: &OfflineInstance) -> Result<OracleResult, OracleError> {
    let queries = &instance.queries;
    let (ll_lo, ll_hi) = LOG_LAMBDA_RANGE;
    let over_lambda = |budget: f64, mu: f64| {
        golden_min(
            |ll| lagrangian(queries, budget, ll.exp(), mu),
            ll_lo,
            ll_hi,
            60,
        )
    };
    let value = match instance.budget() {
        None => over_lambda(0.0, 0.0)?,
        Some(budget) => {
            let rho = instance.rho.unwrap_or(1.0);
            let mu_hi = 4.0 / rho + 4.0;
            golden_min(|mu| over_lambda(budget, mu), 0.0, mu_hi, 40)?
        }
    };
    Ok(OracleResult {
        opt_value: value,
        method: OracleMethod::LagrangianDual,
        is_upper_bound: true,
        chosen_set: None,
    })
}

/// Benchmark used for regret: exact for short second-price streams, the LP
/// bound for longer ones and the Lagrangian dual bound for other auctions.
pub fn reference_opt(instance: &OfflineInstance) -> Result<OracleResult, OracleError> {
    let all_second_price = instance
        .queries
        .iter()
        .all(|q| matches!(q.auction, AuctionModel::SecondPrice { .. }));
    if !all_second_price {
        opt_dual_upper_bound(instance)
    } else if instance.len() <= MAX_EXACT_QUERIES {
        opt_exact(instance)
    } else {
        opt_lp_upper_bound(instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_examples() {
        let inst = OfflineInstance::second_price(&[(0.8, 0.5), (0.3, 0.6)], None);
        let r = opt_exact(&inst).unwrap();
        assert!((r.opt_value - 1.1).abs() < 1e-15);
        assert_eq!(r.chosen_set, Some(vec![0, 1]));
        assert!(!r.is_upper_bound);

        let r = opt_exact(&OfflineInstance::second_price(&[(0.3, 0.6)], None)).unwrap();
        assert_eq!(r.opt_value, 0.0);
        assert_eq!(r.chosen_set, Some(vec![]));
    }

    #[test]
    fn exact_with_budget() {
        // rho·T = 0.25·2 = 0.5
        let inst = OfflineInstance::second_price(&[(0.8, 0.5), (0.3, 0.6)], Some(0.25));
        let r = opt_exact(&inst).unwrap();
        assert_eq!(r.opt_value, 0.8);
        assert_eq!(r.chosen_set, Some(vec![0]));
    }

    #[test]
    fn exact_rejects_large_and_non_second_price() {
        let big = OfflineInstance::second_price(&[(0.5, 0.5); 26], None);
        assert!(matches!(
            opt_exact(&big),
            Err(OracleError::TooLarge { got: 26, max: 25 })
        ));
        let lin = OfflineInstance::new(vec![Query::new(0.5, AuctionModel::LinearAllocation)], None);
        assert!(matches!(
            opt_exact(&lin),
            Err(OracleError::UnsupportedAuction(0))
        ));
        assert!(matches!(
            opt_lp_upper_bound(&lin),
            Err(OracleError::UnsupportedAuction(0))
        ));
    }

    #[test]
    fn lp_examples() {
        let inst = OfflineInstance::second_price(&[(0.8, 0.5), (0.3, 0.6)], None);
        let r = opt_lp_upper_bound(&inst).unwrap();
        assert!((r.opt_value - 1.1).abs() < 1e-12);
        assert!(r.is_upper_bound);

        let inst = OfflineInstance::second_price(&[(0.3, 0.6), (0.8, 0.2)], None);
        let lp = opt_lp_upper_bound(&inst).unwrap().opt_value;
        let exact = opt_exact(&inst).unwrap().opt_value;
        assert!((exact - 1.1).abs() < 1e-15);
        assert!(lp >= exact - 1e-9);

        let empty = OfflineInstance::second_price(&[], Some(0.5));
        assert_eq!(opt_lp_upper_bound(&empty).unwrap().opt_value, 0.0);
        assert_eq!(opt_exact(&empty).unwrap().opt_value, 0.0);
    }

    #[test]
    fn lp_fractional_ros_solution() {
        // Round 1 supplies 0.4 of slack, round 2 needs 0.8: half of round 2 fits.
        let inst = OfflineInstance::second_price(&[(0.6, 0.2), (0.1, 0.9)], None);
        let lp = opt_lp_upper_bound(&inst).unwrap().opt_value;
        assert!((lp - 0.65).abs() < 1e-12, "{lp}");
        assert_eq!(opt_exact(&inst).unwrap().opt_value, 0.6);
    }

    #[test]
    fn lp_fractional_budget_solution() {
        // Budget 0.5·2 = 1: all of round 1 (cost 0.6) and half of round 2 (cost 0.8).
        let inst = OfflineInstance::second_price(&[(0.9, 0.6), (1.0, 0.8)], Some(0.5));
        let lp = opt_lp_upper_bound(&inst).unwrap().opt_value;
        assert!((lp - 1.4).abs() < 1e-9, "{lp}");
        assert!((opt_exact(&inst).unwrap().opt_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dual_bound_matches_lp_on_second_price() {
        let inst = OfflineInstance::second_price(
            &[(0.6, 0.2), (0.1, 0.9), (0.9, 0.6), (1.0, 0.8), (0.4, 0.5)],
            Some(0.3),
        );
        let lp = opt_lp_upper_bound(&inst).unwrap().opt_value;
        let dual = opt_dual_upper_bound(&inst).unwrap().opt_value;
        assert!(dual >= lp - 1e-9);
        assert!(dual - lp < 1e-4, "dual {dual} lp {lp}");
    }

    #[test]
    fn dual_bound_linear_allocation() {
        // Truthful bidding gives value·min(1,v) with RoS slack; the bound must
        // dominate the reward of any feasible bid vector, e.g. bidding 2v.
        let qs: Vec<Query> = [0.2, 0.5, 0.9]
            .iter()
            .map(|&v| Query::new(v, AuctionModel::LinearAllocation))
            .collect();
        let inst = OfflineInstance::new(qs.clone(), None);
        let bound = opt_dual_upper_bound(&inst).unwrap();
        assert_eq!(bound.method, OracleMethod::LagrangianDual);
        for scale in [1.0, 1.5, 2.0] {
            let mut reward = 0.0;
            let mut spend = 0.0;
            for q in &qs {
                let b = scale * q.value;
                reward += q.value * q.auction.allocation(b);
                spend += q.auction.payment(b).unwrap();
            }
            if spend <= reward {
                assert!(bound.opt_value >= reward - 1e-9, "scale {scale}");
            }
        }
        assert_eq!(
            reference_opt(&inst).unwrap().method,
            OracleMethod::LagrangianDual
        );
    }

    #[test]
    fn reference_selects_by_length() {
        let short = OfflineInstance::second_price(&[(0.5, 0.2); 25], None);
        assert_eq!(
            reference_opt(&short).unwrap().method,
            OracleMethod::ExactEnumeration
        );
        let long = OfflineInstance::second_price(&[(0.5, 0.2); 26], None);
        let r = reference_opt(&long).unwrap();
        assert_eq!(r.method, OracleMethod::FractionalLp);
        assert!((r.opt_value - 13.0).abs() < 1e-12);
    }
}
