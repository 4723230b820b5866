//! Online bidding policies behind a single observe → bid → settle interface.
//!
//! | kind | bid | dual update |
//! |------|-----|-------------|
//! | `ApproxRos` | `(1+λ)/λ · v` | multiplicative (entropy map) |
//! | `SquaredApproxRos` | `v/λ + v` | projected additive (squared map) |
//! | `StrictRos` | `v` until the buffer exceeds `2√T ln T`, then `ApproxRos` restarted | |
//! | `ApproxRosStrictBudget` | `(1+λ)/(μ+λ) · v` while one unit of budget remains | multiplicative λ, projected μ |
//! | `StrictBoth` | buffer phase with budget exit, then `ApproxRosStrictBudget` restarted | |
//! | `TruthfulBaseline` | `v` | none |

use serde::{Deserialize, Serialize};

use crate::auction::Query;
use crate::error::PolicyError;
use crate::mirror::{DualState, MirrorMap};

/// Bid used by the squared-map policy when its dual variable sits at zero.
pub const DEFAULT_BID_CAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ApproxRos,
    StrictRos,
    ApproxRosStrictBudget,
    StrictBoth,
    SquaredApproxRos,
    TruthfulBaseline,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::ApproxRos,
        PolicyKind::StrictRos,
        PolicyKind::ApproxRosStrictBudget,
        PolicyKind::StrictBoth,
        PolicyKind::SquaredApproxRos,
        PolicyKind::TruthfulBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::ApproxRos => "approx_ros",
            PolicyKind::StrictRos => "strict_ros",
            PolicyKind::ApproxRosStrictBudget => "approx_ros_strict_budget",
            PolicyKind::StrictBoth => "strict_both",
            PolicyKind::SquaredApproxRos => "squared_approx_ros",
            PolicyKind::TruthfulBaseline => "truthful_baseline",
        }
    }

    /// Policies that enforce the budget `rho·T` and therefore need `rho`.
    pub fn needs_budget(self) -> bool {
        matches!(
            self,
            PolicyKind::ApproxRosStrictBudget | PolicyKind::StrictBoth
        )
    }

    /// Policies with a truthful buffer-building first phase.
    pub fn has_buffer_phase(self) -> bool {
        matches!(self, PolicyKind::StrictRos | PolicyKind::StrictBoth)
    }

    pub fn mirror_map(self) -> MirrorMap {
        match self {
            PolicyKind::SquaredApproxRos => MirrorMap::HalfSquared,
            _ => MirrorMap::GeneralizedNegEntropy,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown policy `{s}`, expected one of {}", names.join(", "))
            })
    }
}

/// Tunables shared by all policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOptions {
    /// Replaces the default RoS dual step size (in every phase).
    pub alpha_override: Option<f64>,
    /// Replaces the default budget dual step size (in every phase).
    pub eta_override: Option<f64>,
    pub bid_cap: f64,
    /// `StrictRos` only: interleave short truthful chunks with the main loop
    /// instead of one up-front buffer phase.
    pub intermingled: bool,
    /// Buffer to rebuild before resuming in intermingled mode (default `√T`).
    pub intermingle_chunk: Option<f64>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            alpha_override: None,
            eta_override: None,
            bid_cap: DEFAULT_BID_CAP,
            intermingled: false,
            intermingle_chunk: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BufferBuilding,
    MainLoop,
    Exited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub duals: DualState,
    pub horizon: usize,
    /// `rho·T` for budgeted policies.
    pub initial_budget: Option<f64>,
    /// Sum of payments, accumulated in round order.
    pub spent: f64,
    /// Sum of `g` over the buffer-building rounds.
    pub buffer: f64,
    /// Sum of `g` over all rounds.
    pub slack: f64,
    pub phase: Phase,
    pub v_ros_threshold: f64,
    pub rho: Option<f64>,
    /// Budget rate used by the budget dual; differs from `rho` after a restart.
    pub rho_effective: Option<f64>,
    /// Rounds completed.
    pub t: usize,
    pub first_phase_length: Option<usize>,
    /// Intermingled mode: currently bidding truthfully to rebuild the buffer.
    pub on_hold: bool,
    pub held_rounds: usize,
}

impl PolicyState {
    pub fn budget_remaining(&self) -> Option<f64> {
        self.initial_budget.map(|b| b - self.spent)
    }

    /// At least one unit of budget remains, i.e. the next payment (at most 1)
    /// cannot overdraw. Evaluated as `spent + 1 ≤ B` so that the bound carries
    /// over to the floating-point running sum.
    fn budget_gate_open(&self) -> bool {
        match self.initial_budget {
            Some(b) => self.spent + 1.0 <= b,
            None => true,
        }
    }
}

/// Per-round record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// 1-based round index.
    pub t: usize,
    pub value: f64,
    pub bid: f64,
    pub allocation: f64,
    pub price: f64,
    /// `value·allocation − price`.
    pub g: f64,
    /// `rho − price` for budgeted policies.
    pub g_prime: Option<f64>,
    /// Dual values used to form this round's bid.
    pub lambda: f64,
    pub mu: f64,
    pub budget_remaining: Option<f64>,
}

/// `(1 + λ)/λ · v`.
pub fn bid_approx_ros(lambda: f64, value: f64) -> f64 {
    (1.0 + lambda) / lambda * value
}

/// `(1 + λ)/(μ + λ) · v` if at least one unit of budget remains, else 0.
pub fn bid_combined(lambda: f64, mu: f64, value: f64, budget_remaining: f64) -> f64 {
    if budget_remaining >= 1.0 {
        combined_candidate(lambda, mu, value)
    } else {
        0.0
    }
}

fn combined_candidate(lambda: f64, mu: f64, value: f64) -> f64 {
    (1.0 + lambda) / (mu + lambda) * value
}

/// `v/λ + v`, or `cap` when `λ = 0`.
pub fn bid_squared(lambda: f64, value: f64, cap: f64) -> f64 {
    if lambda > 0.0 {
        let b = value / lambda + value;
        if b.is_finite() {
            return b;
        }
    }
    cap
}

/// Gradient bounds `max(−1, −1/λ) ≤ g ≤ v·x` for a round whose bid did not
/// exceed `(1+λ)/λ · v`. The `−1` part assumes payments of at most 1.
pub fn gradient_bounds_hold(o: &StepOutcome, tol: f64) -> bool {
    let upper = o.g <= o.value * o.allocation + tol;
    let mut lower = o.g >= -1.0 - tol;
    if o.lambda > 0.0 && o.bid <= bid_approx_ros(o.lambda, o.value) * (1.0 + 1e-12) {
        lower &= o.g >= -1.0 / o.lambda - tol;
    }
    upper && lower
}

fn ros_violation_bound(horizon: usize) -> f64 {
    let t = horizon as f64;
    2.0 * t.sqrt() * t.ln()
}

/// A bidding policy and its mutable state.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    options: PolicyOptions,
    state: PolicyState,
}

impl Policy {
    pub fn new(
        kind: PolicyKind,
        horizon: usize,
        rho: Option<f64>,
        options: PolicyOptions,
    ) -> Result<Self, PolicyError> {
        if horizon == 0 {
            return Err(PolicyError::InvalidParameter(
                "horizon must be positive".into(),
            ));
        }
        if let Some(r) = rho {
            if !(r > 0.0 && r.is_finite()) {
                return Err(PolicyError::InvalidParameter(format!(
                    "rho must be positive, got {r}"
                )));
            }
        }
        for (name, v) in [
            ("alpha", options.alpha_override),
            ("eta", options.eta_override),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(PolicyError::InvalidParameter(format!(
                        "{name} must be positive, got {v}"
                    )));
                }
            }
        }
        if !(options.bid_cap > 0.0 && options.bid_cap.is_finite()) {
            return Err(PolicyError::InvalidParameter(
                "bid_cap must be positive".into(),
            ));
        }
        if kind.needs_budget() && rho.is_none() {
            return Err(PolicyError::MissingRho(kind.name()));
        }

        let t = horizon as f64;
        let alpha = options.alpha_override.unwrap_or(match kind {
            PolicyKind::SquaredApproxRos => t.powf(-1.0 / 3.0),
            _ => 1.0 / t.sqrt(),
        });
        let eta = match (kind.needs_budget(), rho) {
            (true, Some(r)) => options
                .eta_override
                .unwrap_or(1.0 / ((1.0 + r * r) * t.sqrt())),
            _ => options.eta_override.unwrap_or(0.0),
        };
        let initial_budget = if kind.needs_budget() {
            rho.map(|r| r * t)
        } else {
            None
        };

        let mut phase = if kind.has_buffer_phase() {
            Phase::BufferBuilding
        } else {
            Phase::MainLoop
        };
        let intermingled = kind == PolicyKind::StrictRos && options.intermingled;
        if intermingled {
            phase = Phase::MainLoop;
        }

        let mut state = PolicyState {
            duals: DualState::new(alpha, eta),
            horizon,
            initial_budget,
            spent: 0.0,
            buffer: 0.0,
            slack: 0.0,
            phase,
            v_ros_threshold: if kind.has_buffer_phase() {
                ros_violation_bound(horizon)
            } else {
                0.0
            },
            rho: if kind.needs_budget() { rho } else { None },
            rho_effective: if kind.needs_budget() { rho } else { None },
            t: 0,
            first_phase_length: None,
            on_hold: intermingled,
            held_rounds: 0,
        };
        // Even a single truthful round could overdraw a budget below one unit.
        if kind == PolicyKind::StrictBoth && !state.budget_gate_open() {
            state.phase = Phase::Exited;
            state.first_phase_length = Some(0);
        }
        Ok(Self {
            kind,
            options,
            state,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn options(&self) -> &PolicyOptions {
        &self.options
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.phase == Phase::Exited || self.state.t >= self.state.horizon
    }

    /// Bids on `query`, observes the auction outcome and updates the state.
    pub fn step(&mut self, query: &Query) -> Result<StepOutcome, PolicyError> {
        if self.state.phase == Phase::Exited {
            return Err(PolicyError::StateExhausted("policy has exited"));
        }
        if self.state.t >= self.state.horizon {
            return Err(PolicyError::StateExhausted("horizon reached"));
        }
        let v = query.value;
        let duals = self.state.duals;
        let phase = self.state.phase;

        let bid = match (self.kind, phase) {
            (PolicyKind::TruthfulBaseline, _) | (_, Phase::BufferBuilding) => v,
            (PolicyKind::StrictRos, _) if self.options.intermingled => {
                if !self.state.on_hold && self.state.slack < 1.0 {
                    self.state.on_hold = true;
                }
                if self.state.on_hold {
                    v
                } else {
                    bid_approx_ros(duals.lambda, v)
                }
            }
            (PolicyKind::ApproxRos | PolicyKind::StrictRos, _) => bid_approx_ros(duals.lambda, v),
            (PolicyKind::SquaredApproxRos, _) => bid_squared(duals.lambda, v, self.options.bid_cap),
            (PolicyKind::ApproxRosStrictBudget | PolicyKind::StrictBoth, _) => {
                if self.state.budget_gate_open() {
                    combined_candidate(duals.lambda, duals.mu, v)
                } else {
                    0.0
                }
            }
        };

        let allocation = query.auction.allocation(bid);
        let price = query.auction.payment(bid)?;
        let g = v * allocation - price;

        self.state.t += 1;
        self.state.slack += g;
        if self.kind.needs_budget() {
            self.state.spent += price;
        }
        let g_prime = self.state.rho_effective.map(|r| r - price);

        match (self.kind, phase) {
            (PolicyKind::TruthfulBaseline, _) => {}
            (PolicyKind::StrictRos, Phase::BufferBuilding) => {
                self.state.buffer += g;
                if self.state.buffer > self.state.v_ros_threshold {
                    self.start_main_loop();
                } else if self.state.t == self.state.horizon {
                    self.state.first_phase_length = Some(self.state.t);
                }
            }
            (PolicyKind::StrictBoth, Phase::BufferBuilding) => {
                self.state.buffer += g;
                // The exit test uses the next round's 1-based index.
                let rho_t = self.state.initial_budget.expect("budgeted policy");
                if (self.state.t + 1) as f64 >= rho_t {
                    self.state.phase = Phase::Exited;
                    self.state.first_phase_length = Some(self.state.t);
                } else if self.state.buffer > self.state.v_ros_threshold {
                    self.start_main_loop();
                } else if self.state.t == self.state.horizon {
                    self.state.first_phase_length = Some(self.state.t);
                }
            }
            (PolicyKind::StrictRos, _) if self.options.intermingled => {
                if self.state.on_hold {
                    self.state.held_rounds += 1;
                    self.state.first_phase_length = Some(self.state.held_rounds);
                    let chunk = self
                        .options
                        .intermingle_chunk
                        .unwrap_or_else(|| (self.state.horizon as f64).sqrt())
                        .max(1.0);
                    if self.state.slack >= chunk {
                        self.state.on_hold = false;
                    }
                } else {
                    self.state.duals = duals.update_ros_dual(g);
                }
            }
            (PolicyKind::ApproxRos | PolicyKind::StrictRos, _) => {
                self.state.duals = duals.update_ros_dual(g);
            }
            (PolicyKind::SquaredApproxRos, _) => {
                self.state.duals = duals.update_ros_dual_squared(g);
            }
            (PolicyKind::ApproxRosStrictBudget | PolicyKind::StrictBoth, _) => {
                let gp = g_prime.expect("budgeted policy has rho");
                self.state.duals = duals.update_ros_dual(g).update_budget_dual(gp);
            }
        }

        let outcome = StepOutcome {
            t: self.state.t,
            value: v,
            bid,
            allocation,
            price,
            g,
            g_prime,
            lambda: duals.lambda,
            mu: duals.mu,
            budget_remaining: self.state.budget_remaining(),
        };
        debug_assert!(price <= bid || price == 0.0, "{outcome:?}");
        debug_assert!(allocation > 0.0 || price == 0.0, "{outcome:?}");
        Ok(outcome)
    }

    /// Restarts the main algorithm on the remaining `T − t` rounds.
    fn start_main_loop(&mut self) {
        let s = &mut self.state;
        s.first_phase_length = Some(s.t);
        s.phase = Phase::MainLoop;
        let remaining = s.horizon - s.t;
        if remaining == 0 {
            return;
        }
        let rem = remaining as f64;
        let alpha = self.options.alpha_override.unwrap_or(1.0 / rem.sqrt());
        let mut eta = 0.0;
        if self.kind.needs_budget() {
            let rho_hat = s.budget_remaining().expect("budgeted policy") / rem;
            s.rho_effective = Some(rho_hat);
            eta = self
                .options
                .eta_override
                .unwrap_or(1.0 / ((1.0 + rho_hat * rho_hat) * rem.sqrt()));
        }
        s.duals = DualState::new(alpha, eta);
    }
}
