//! Built-in numerical property suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{check_truthful, AuctionModel, CustomAllocation, TRUTHFUL_TOLERANCE};
use crate::mirror::{bregman, DualState, MirrorMap};
use crate::oracle::{opt_exact, opt_lp_upper_bound, OfflineInstance};

pub const TRUTHFUL_GRID: usize = 2001;
pub const BREGMAN_PAIRS: usize = 10_000;
pub const LAMBDA_STEPS: usize = 10_000;
pub const LAMBDA_TOLERANCE: f64 = 1e-12;
pub const ORACLE_INSTANCES: usize = 500;
pub const ORACLE_MAX_LEN: usize = 15;
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

const SEED: u64 = 0x5EED_C0DE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Truthfulness,
    Bregman,
    Lambda,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Truthfulness,
        Suite::Bregman,
        Suite::Lambda,
        Suite::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Truthfulness => "truthfulness",
            Suite::Bregman => "bregman",
            Suite::Lambda => "lambda",
            Suite::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!("unknown suite `{s}`, expected truthfulness, bregman, lambda or oracle")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    /// Largest observed residual; each suite documents its meaning.
    pub max_residual: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub failures: Vec<String>,
}

/// Auction models covered by the truthfulness suite.
pub fn builtin_auctions() -> Vec<AuctionModel> {
    let mut models: Vec<AuctionModel> = [0.0, 0.25, 0.5, 0.999, 1.0]
        .into_iter()
        .map(AuctionModel::second_price)
        .collect();
    models.push(AuctionModel::LinearAllocation);
    models.push(AuctionModel::Custom(
        CustomAllocation::new("quadratic", |b: f64| (b * b).min(1.0)).with_breakpoints(vec![1.0]),
    ));
    models
}

/// An allocation that decreases in the bid, which no truthful auction has.
pub fn broken_auction() -> AuctionModel {
    AuctionModel::Custom(CustomAllocation::new("broken_decreasing", |b: f64| {
        (1.0 - 0.5 * b).clamp(0.0, 1.0)
    }))
}

/// Monotonicity and payment-identity residuals on a bid grid.
pub fn truthfulness_suite(extra: &[AuctionModel]) -> SuiteReport {
    let mut report = SuiteReport {
        suite: Suite::Truthfulness,
        passed: true,
        max_residual: 0.0,
        tolerance: TRUTHFUL_TOLERANCE,
        cases: 0,
        failures: Vec::new(),
    };
    for model in builtin_auctions().iter().chain(extra) {
        report.cases += 1;
        let label = match model.competing_bid() {
            Some(d) => format!("second_price(d={d})"),
            None => model.kind_name().to_string(),
        };
        match check_truthful(model, TRUTHFUL_GRID) {
            Ok(r) => {
                let worst = r.max_monotonicity_violation.max(r.max_myerson_residual);
                report.max_residual = report.max_residual.max(worst);
                if !r.passes() {
                    report.failures.push(format!(
                        "{label}: monotonicity {:e}, payment residual {:e}",
                        r.max_monotonicity_violation, r.max_myerson_residual
                    ));
                }
            }
            Err(e) => report.failures.push(format!("{label}: {e}")),
        }
    }
    report.passed = report.failures.is_empty();
    report
}

/// Local strong convexity of the entropy divergence,
/// `V(y, x) ≥ (y − x)²/(2·max(x, y))`, on random pairs in `(0, 10]²`.
/// The residual is the largest relative shortfall.
pub fn bregman_suite() -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let tolerance = 1e-12;
    let mut report = SuiteReport {
        suite: Suite::Bregman,
        passed: true,
        max_residual: 0.0,
        tolerance,
        cases: BREGMAN_PAIRS,
        failures: Vec::new(),
    };
    for _ in 0..BREGMAN_PAIRS {
        let x = 10.0 * (1.0 - rng.random::<f64>());
        let y = 10.0 * (1.0 - rng.random::<f64>());
        let v = match bregman(MirrorMap::GeneralizedNegEntropy, y, x) {
            Ok(v) => v,
            Err(e) => {
                report.failures.push(e.to_string());
                continue;
            }
        };
        let bound = (y - x) * (y - x) / (2.0 * x.max(y));
        let shortfall = (bound - v) / bound.max(f64::MIN_POSITIVE);
        report.max_residual = report.max_residual.max(shortfall.max(0.0));
        if shortfall > tolerance && report.failures.len() < 5 {
            report
                .failures
                .push(format!("V({y}, {x}) = {v:e} < {bound:e}"));
        }
    }
    report.passed = report.failures.is_empty() && report.max_residual <= tolerance;
    report
}

/// Exact sum of numbers that are integer multiples of `2⁻⁵³`.
fn exact_sum_2_53(xs: &[f64]) -> f64 {
    let scale = 2f64.powi(53);
    let units: i128 = xs
        .iter()
        .map(|&x| {
            let u = x * scale;
            debug_assert_eq!(u.fract(), 0.0);
            u as i128
        })
        .sum();
    units as f64 / scale
}

/// After `n` multiplicative updates, `λ = exp(−α·Σ g)`. Gradients are drawn
/// on the `2⁻⁵³` grid so the reference sum is exact. The residual is the
/// largest relative error in `λ`.
pub fn lambda_suite() -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    let alpha = 1.0 / (LAMBDA_STEPS as f64).sqrt();
    let mut report = SuiteReport {
        suite: Suite::Lambda,
        passed: true,
        max_residual: 0.0,
        tolerance: LAMBDA_TOLERANCE,
        cases: 0,
        failures: Vec::new(),
    };
    // Unbiased, drifting down, drifting up and a narrow band.
    for (lo, hi) in [(-1.0, 1.0), (-1.0, 0.0), (0.0, 1.0), (-0.5, 0.5)] {
        report.cases += 1;
        let gs: Vec<f64> = (0..LAMBDA_STEPS)
            .map(|_| {
                let k = (rng.random::<u64>() >> 11) as f64;
                // (hi − lo)·u + lo on the 2⁻⁵³ grid, exact for these endpoints.
                lo + (hi - lo) * (k / 2f64.powi(53))
            })
            .collect();
        let mut state = DualState::new(alpha, 0.0);
        let mut worst: f64 = 0.0;
        for (i, &g) in gs.iter().enumerate() {
            state = state.update_ros_dual(g);
            if (i + 1) % 1000 == 0 || i + 1 == gs.len() {
                let expect = (-alpha * exact_sum_2_53(&gs[..=i])).exp();
                worst = worst.max(((state.lambda - expect) / expect).abs());
            }
        }
        report.max_residual = report.max_residual.max(worst);
        if worst > LAMBDA_TOLERANCE {
            report.failures.push(format!(
                "gradients in [{lo}, {hi}]: relative error {worst:e}"
            ));
        }
    }
    report.passed = report.failures.is_empty();
    report
}

/// Plain enumeration of every subset, used as the reference for the oracle.
pub fn enumerate_subsets(pairs: &[(f64, f64)], budget: Option<f64>) -> f64 {
    let n = pairs.len();
    let budget = budget.unwrap_or(f64::INFINITY);
    let mut best = 0.0;
    for mask in 0u32..(1u32 << n) {
        let mut value = 0.0;
        let mut spend = 0.0;
        for (i, &(v, d)) in pairs.iter().enumerate() {
            if mask >> i & 1 == 1 {
                value += v;
                spend += d;
            }
        }
        if spend <= value && spend <= budget && value > best {
            best = value;
        }
    }
    best
}

/// Random second-price instance of length `1..=max_len`; about half carry a budget.
pub fn random_instance(rng: &mut ChaCha8Rng, max_len: usize) -> OfflineInstance {
    let n = rng.random_range(1..=max_len);
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let rho = if rng.random::<bool>() {
        Some(rng.random_range(0.05..0.6))
    } else {
        None
    };
    OfflineInstance::second_price(&pairs, rho)
}

/// Exact oracle against plain enumeration, and LP dominance. The residual
/// is the largest shortfall of the LP bound below the exact optimum.
pub fn oracle_suite() -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    let mut report = SuiteReport {
        suite: Suite::Oracle,
        passed: true,
        max_residual: 0.0,
        tolerance: DOMINANCE_TOLERANCE,
        cases: ORACLE_INSTANCES,
        failures: Vec::new(),
    };
    for k in 0..ORACLE_INSTANCES {
        let inst = random_instance(&mut rng, ORACLE_MAX_LEN);
        let pairs: Vec<(f64, f64)> = inst
            .queries
            .iter()
            .map(|q| (q.value, q.auction.competing_bid().expect("second price")))
            .collect();
        let reference = enumerate_subsets(&pairs, inst.budget());
        let exact = match opt_exact(&inst) {
            Ok(r) => r.opt_value,
            Err(e) => {
                report.failures.push(format!("instance {k}: {e}"));
                continue;
            }
        };
        if exact != reference {
            report.failures.push(format!(
                "instance {k}: exact {exact} vs enumeration {reference}"
            ));
        }
        match opt_lp_upper_bound(&inst) {
            Ok(lp) => {
                let shortfall = exact - lp.opt_value;
                report.max_residual = report.max_residual.max(shortfall.max(0.0));
                if shortfall > DOMINANCE_TOLERANCE {
                    report.failures.push(format!(
                        "instance {k}: LP {} below exact {exact}",
                        lp.opt_value
                    ));
                }
            }
            Err(e) => report.failures.push(format!("instance {k}: {e}")),
        }
    }
    report.passed = report.failures.is_empty();
    report
}

/// Runs the selected suites (all if `only` is `None`). `extra_auctions` are
/// added to the truthfulness suite.
pub fn run_checks(only: Option<Suite>, extra_auctions: &[AuctionModel]) -> Vec<SuiteReport> {
    Suite::ALL
        .into_iter()
        .filter(|s| only.is_none_or(|o| o == *s))
        .map(|s| match s {
            Suite::Truthfulness => truthfulness_suite(extra_auctions),
            Suite::Bregman => bregman_suite(),
            Suite::Lambda => lambda_suite(),
            Suite::Oracle => oracle_suite(),
        })
        .collect()
}
