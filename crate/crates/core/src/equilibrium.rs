//! Budget bounds and sub-game perfect equilibrium contributions.
//!
//! In the sequential game induced by a scheme that satisfies both
//! monotonicity conditions, an arriving player contributes at once the
//! amount that leaves it indifferent between the provisioned payoff
//! `theta - x` and the refund it would get at `C = H`:
//!
//! ```text
//! theta - x = (x + g) B / (H + K)   =>   x* = (theta (H + K) - g B) / (H + K + B)
//! ```
//!
//! where `g` is the scheme's bonus term for the player's position and `K` its
//! convergence constant (`g = K = 0` for PPR). A player never gives more than
//! what is still missing.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{Bid, Mechanism, Player, SchemeParams, StrategyProfile};

/// Largest bonus budget for which an equilibrium with `C = H` exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetBound {
    /// `((H + K) theta_sum - H^2 - H K) / (H + K)`.
    pub max_budget: f64,
    /// `theta_sum - H`, the same quantity after cancelling `K`.
    pub simplified: f64,
}

impl BudgetBound {
    /// Whether `budget` lies in `(0, max_budget]`.
    pub fn admits(&self, budget: f64) -> bool {
        budget > 0.0 && budget <= self.max_budget
    }
}

/// Upper bound on the budget for the decaying schemes.
pub fn max_budget(scheme: &SchemeParams, provision_point: f64, theta_sum: f64) -> Result<BudgetBound> {
    scheme.validate()?;
    let k = match scheme.mechanism() {
        Mechanism::Pprg | Mechanism::Ppre | Mechanism::Pprp => scheme.convergence_constant().expect("decaying scheme"),
        mechanism => {
            return Err(Error::UnsupportedScheme {
                mechanism,
                operation: "max_budget",
            })
        }
    };
    let h = provision_point;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidProject(format!(
            "provision point must be positive, got {h}"
        )));
    }
    if !(theta_sum >= 0.0) || !theta_sum.is_finite() {
        return Err(Error::Domain(format!(
            "total valuation must be non-negative, got {theta_sum}"
        )));
    }
    let max_budget = ((h + k) * theta_sum - h * h - h * k) / (h + k);
    if theta_sum <= h || max_budget <= 0.0 {
        return Err(Error::NoValidBudget {
            theta_sum,
            provision_point: h,
        });
    }
    Ok(BudgetBound {
        max_budget,
        simplified: theta_sum - h,
    })
}

fn check_cap_inputs(scheme: &SchemeParams, theta: f64, provision_point: f64, budget: f64) -> Result<f64> {
    scheme.validate()?;
    let k = match scheme.mechanism() {
        Mechanism::Ppr => 0.0,
        Mechanism::Pprg | Mechanism::Ppre | Mechanism::Pprp => scheme.convergence_constant().expect("decaying scheme"),
        mechanism => {
            return Err(Error::UnsupportedScheme {
                mechanism,
                operation: "equilibrium_cap",
            })
        }
    };
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("valuation must be non-negative, got {theta}")));
    }
    if !(provision_point > 0.0) || !provision_point.is_finite() {
        return Err(Error::InvalidProject(format!(
            "provision point must be positive, got {provision_point}"
        )));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidProject(format!("budget must be positive, got {budget}")));
    }
    Ok(k)
}

/// Equilibrium contribution cap of a player with valuation `theta`.
///
/// PPRG and PPRP read the player's position `seq` (1-based, in arrival
/// order); PPRE reads its arrival time; PPR reads neither. Negative values
/// clamp to zero.
pub fn equilibrium_cap(
    scheme: &SchemeParams,
    theta: f64,
    seq: usize,
    arrival: f64,
    provision_point: f64,
    budget: f64,
) -> Result<f64> {
    let k = check_cap_inputs(scheme, theta, provision_point, budget)?;
    if seq == 0 {
        return Err(Error::InvalidSeq { seq, len: 0 });
    }
    let h = provision_point;
    let g = scheme.bonus_term(seq, arrival);
    Ok(((theta * (h + k) - g * budget) / (h + k + budget)).max(0.0))
}

/// Why a player's equilibrium contribution has the value it has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// The formula cap, which is below what remains.
    Interior,
    /// Only the remaining amount `h^y` was missing.
    CappedByRemaining,
    /// Nothing remained when the player arrived.
    ZeroRemaining,
}

/// One player's equilibrium contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumCap {
    pub player_id: usize,
    /// Contribution `x_i*` made at the arrival time.
    pub cap: f64,
    /// The clamped cap formula, before limiting by the remaining amount.
    pub formula_cap: f64,
    /// Amount missing when the player arrived.
    pub remaining: f64,
    pub binding: Binding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub profile: StrategyProfile,
    /// In arrival order.
    pub caps: Vec<EquilibriumCap>,
}

/// Plays the equilibrium strategies in arrival order.
///
/// Every player bids at its arrival time, so positions match arrival order;
/// ties in arrival go by player id. The budget is not checked against
/// [`max_budget`]: above the bound the result may fall short of `H`.
pub fn solve(
    scheme: &SchemeParams,
    players: &[Player],
    provision_point: f64,
    budget: f64,
) -> Result<EquilibriumSolution> {
    check_cap_inputs(scheme, 0.0, provision_point, budget)?;
    let mut order: Vec<Player> = players.to_vec();
    order.sort_by(|p, q| p.arrival.total_cmp(&q.arrival).then(p.id.cmp(&q.id)));

    let mut remaining = provision_point;
    let mut caps = Vec::with_capacity(order.len());
    let mut bids = Vec::with_capacity(order.len());
    for (k, p) in order.iter().enumerate() {
        let formula_cap = equilibrium_cap(scheme, p.valuation, k + 1, p.arrival, provision_point, budget)?;
        let (cap, binding) = if remaining <= 0.0 {
            (0.0, Binding::ZeroRemaining)
        } else if formula_cap >= remaining {
            (remaining, Binding::CappedByRemaining)
        } else {
            (formula_cap, Binding::Interior)
        };
        caps.push(EquilibriumCap {
            player_id: p.id,
            cap,
            formula_cap,
            remaining,
            binding,
        });
        bids.push(Bid::new(p.id, cap, p.arrival));
        remaining = match binding {
            Binding::Interior => (remaining - cap).max(0.0),
            _ => 0.0,
        };
    }
    let profile = StrategyProfile::new(order, bids)?;
    Ok(EquilibriumSolution { profile, caps })
}

/// The equilibrium strategy profile; see [`solve`].
pub fn equilibrium_profile(
    scheme: &SchemeParams,
    players: &[Player],
    provision_point: f64,
    budget: f64,
) -> Result<StrategyProfile> {
    Ok(solve(scheme, players, provision_point, budget)?.profile)
}
