//! Project and game data model, refund bonus schemes, and payoffs.
//!
//! A project announces a provision point `H`, a deadline `T` and a bonus
//! budget `B`. Players arrive over time and make at most one contribution
//! each. At the deadline the project is provisioned when the total `C`
//! reaches `H`; otherwise contributions are returned and each contributor
//! receives a share of `B` determined by the mechanism's refund scheme.

mod pps;

pub(crate) use pps::log1mexp;
pub use pps::{outstanding_after, pps_cost, pps_cost_inverse, pps_refund, securities_issued};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing a total against the provision point.
pub const PROVISION_TOLERANCE: f64 = 1e-9;

/// The six provision point mechanisms, without their parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Ppm,
    Ppr,
    Pps,
    Pprg,
    Ppre,
    Pprp,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::Ppm,
        Mechanism::Ppr,
        Mechanism::Pps,
        Mechanism::Pprg,
        Mechanism::Ppre,
        Mechanism::Pprp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Ppm => "PPM",
            Mechanism::Ppr => "PPR",
            Mechanism::Pps => "PPS",
            Mechanism::Pprg => "PPRG",
            Mechanism::Ppre => "PPRE",
            Mechanism::Pprp => "PPRP",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidScheme(format!("unknown mechanism {s:?}")))
    }
}

/// Refund scheme together with its announced parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchemeParams {
    /// No refund bonus.
    Ppm,
    /// Bonus proportional to the contribution.
    Ppr,
    /// Bonus decays geometrically with contribution order; ratio `1 / gamma`.
    Pprg { a: f64, gamma: f64 },
    /// Bonus decays exponentially with contribution time.
    Ppre { k2: f64 },
    /// Bonus decays as `1 / (i (i + 1))` in contribution order.
    Pprp { k3: f64 },
    /// Bonus from a cost-function securities market with liquidity `b`.
    Pps { liquidity: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScheme(format!("{name} must be positive, got {v}")))
    }
}

impl SchemeParams {
    pub fn mechanism(&self) -> Mechanism {
        match self {
            SchemeParams::Ppm => Mechanism::Ppm,
            SchemeParams::Ppr => Mechanism::Ppr,
            SchemeParams::Pprg { .. } => Mechanism::Pprg,
            SchemeParams::Ppre { .. } => Mechanism::Ppre,
            SchemeParams::Pprp { .. } => Mechanism::Pprp,
            SchemeParams::Pps { .. } => Mechanism::Pps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchemeParams::Ppm | SchemeParams::Ppr => Ok(()),
            SchemeParams::Pprg { a, gamma } => {
                positive("a", a)?;
                if !(gamma > 1.0) || !gamma.is_finite() {
                    return Err(Error::InvalidScheme(format!("gamma must exceed 1, got {gamma}")));
                }
                Ok(())
            }
            SchemeParams::Ppre { k2 } => positive("k2", k2),
            SchemeParams::Pprp { k3 } => positive("k3", k3),
            SchemeParams::Pps { liquidity } => {
                if liquidity > 0.0 && liquidity.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidLiquidity(liquidity))
                }
            }
        }
    }

    /// The constant `K` the bonus terms sum to over infinitely many
    /// contributors (`K1`, `K2` or `K3`). `None` for schemes without one.
    pub fn convergence_constant(&self) -> Option<f64> {
        match *self {
            SchemeParams::Pprg { a, gamma } => Some(a * gamma / (gamma - 1.0)),
            SchemeParams::Ppre { k2 } => Some(k2),
            SchemeParams::Pprp { k3 } => Some(k3),
            _ => None,
        }
    }

    /// The additive bonus term of the decaying schemes: `a (1/gamma)^(i-1)`,
    /// `K2 e^-t` or `K3 / (i (i + 1))`. Zero for the other schemes.
    pub fn bonus_term(&self, seq: usize, at: f64) -> f64 {
        match *self {
            SchemeParams::Pprg { a, gamma } => a * gamma.powi(-(seq as i32 - 1)),
            SchemeParams::Ppre { k2 } => k2 * (-at).exp(),
            SchemeParams::Pprp { k3 } => {
                let i = seq as f64;
                k3 / (i * (i + 1.0))
            }
            _ => 0.0,
        }
    }

    /// Refund share for one contribution, from the statistics every scheme
    /// depends on.
    pub fn refund(&self, point: &RefundPoint, budget: f64) -> Result<f64> {
        let value = match *self {
            SchemeParams::Ppm => 0.0,
            SchemeParams::Ppr => {
                if point.total <= 0.0 {
                    return Err(Error::EmptyProfile);
                }
                point.amount / point.total * budget
            }
            SchemeParams::Pprg { .. } | SchemeParams::Ppre { .. } | SchemeParams::Pprp { .. } => {
                let k = self.convergence_constant().expect("decaying scheme");
                (point.amount + self.bonus_term(point.seq, point.at)) / (point.total + k) * budget
            }
            SchemeParams::Pps { liquidity } => pps_refund(point.amount, point.outstanding, liquidity)?,
        };
        Ok(value.max(0.0))
    }
}

/// Everything a refund scheme may look at for one contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefundPoint {
    /// The contribution `x_i`.
    pub amount: f64,
    /// 1-based position in contribution order.
    pub seq: usize,
    /// Contribution time `t_i`.
    pub at: f64,
    /// Total contribution `C`, including this one.
    pub total: f64,
    /// Securities outstanding before this contribution (PPS only).
    pub outstanding: f64,
}

/// Provision point, deadline, bonus budget and scheme of one project.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectSpec {
    pub provision_point: f64,
    pub deadline: f64,
    pub budget: f64,
    pub scheme: SchemeParams,
}

impl ProjectSpec {
    pub fn new(provision_point: f64, deadline: f64, budget: f64, scheme: SchemeParams) -> Result<Self> {
        let spec = ProjectSpec {
            provision_point,
            deadline,
            budget,
            scheme,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.provision_point > 0.0) || !self.provision_point.is_finite() {
            return Err(Error::InvalidProject(format!(
                "provision point must be positive, got {}",
                self.provision_point
            )));
        }
        if !(self.deadline > 0.0) || !self.deadline.is_finite() {
            return Err(Error::InvalidProject(format!(
                "deadline must be positive, got {}",
                self.deadline
            )));
        }
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return Err(Error::InvalidProject(format!(
                "budget must be non-negative, got {}",
                self.budget
            )));
        }
        self.scheme.validate()
    }

    /// Whether `total` meets the provision point, up to [`PROVISION_TOLERANCE`].
    pub fn is_provisioned(&self, total: f64) -> bool {
        total >= self.provision_point * (1.0 - PROVISION_TOLERANCE)
    }

    pub fn with_scheme(self, scheme: SchemeParams) -> Self {
        ProjectSpec { scheme, ..self }
    }

    pub fn with_budget(self, budget: f64) -> Self {
        ProjectSpec { budget, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub id: usize,
    /// Value `theta_i` the player gets if the project is provisioned.
    pub valuation: f64,
    /// Arrival time `y_i`.
    pub arrival: f64,
}

/// A requested contribution, before ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bid {
    pub player_id: usize,
    pub amount: f64,
    pub at: f64,
}

impl Bid {
    pub fn new(player_id: usize, amount: f64, at: f64) -> Self {
        Bid { player_id, amount, at }
    }
}

/// A contribution placed in the profile's contribution order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub player_id: usize,
    pub amount: f64,
    pub at: f64,
    /// 1-based position in contribution order.
    pub seq: usize,
}

/// Players and their (at most one) contribution each, ordered by time.
///
/// A bid of zero is still a contribution: it takes a position in the
/// contribution order. Players without a bid are non-contributors.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    players: Vec<Player>,
    contributions: Vec<Contribution>,
}

impl StrategyProfile {
    pub fn new(players: Vec<Player>, bids: impl IntoIterator<Item = Bid>) -> Result<Self> {
        for (k, p) in players.iter().enumerate() {
            if !(p.valuation >= 0.0) || !p.valuation.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "player {} has invalid valuation {}",
                    p.id, p.valuation
                )));
            }
            if !(p.arrival >= 0.0) || !p.arrival.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "player {} has invalid arrival {}",
                    p.id, p.arrival
                )));
            }
            if players[..k].iter().any(|q| q.id == p.id) {
                return Err(Error::InvalidProfile(format!("duplicate player id {}", p.id)));
            }
        }

        let mut placed: Vec<Contribution> = Vec::new();
        let mut seen: Vec<usize> = Vec::new();
        for bid in bids {
            let player = players
                .iter()
                .find(|p| p.id == bid.player_id)
                .ok_or_else(|| Error::InvalidProfile(format!("unknown player id {}", bid.player_id)))?;
            if seen.contains(&bid.player_id) {
                return Err(Error::InvalidProfile(format!(
                    "player {} contributes more than once",
                    bid.player_id
                )));
            }
            seen.push(bid.player_id);
            if !(bid.amount >= 0.0) || !bid.amount.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "player {} bids invalid amount {}",
                    bid.player_id, bid.amount
                )));
            }
            if !bid.at.is_finite() || bid.at < player.arrival {
                return Err(Error::InvalidProfile(format!(
                    "player {} contributes at {} before arriving at {}",
                    bid.player_id, bid.at, player.arrival
                )));
            }
            placed.push(Contribution {
                player_id: bid.player_id,
                amount: bid.amount,
                at: bid.at,
                seq: 0,
            });
        }
        // Stable: equal times keep insertion order.
        placed.sort_by(|a, b| a.at.total_cmp(&b.at));
        for (k, c) in placed.iter_mut().enumerate() {
            c.seq = k + 1;
        }
        Ok(StrategyProfile {
            players,
            contributions: placed,
        })
    }

    /// Checks amounts and times against the project's `H` and `T`.
    pub fn validate_for(&self, spec: &ProjectSpec) -> Result<()> {
        for p in &self.players {
            if p.arrival > spec.deadline {
                return Err(Error::InvalidProfile(format!(
                    "player {} arrives at {} after the deadline {}",
                    p.id, p.arrival, spec.deadline
                )));
            }
        }
        for c in &self.contributions {
            if c.amount > spec.provision_point {
                return Err(Error::InvalidProfile(format!(
                    "player {} contributes {} above the provision point {}",
                    c.player_id, c.amount, spec.provision_point
                )));
            }
            if c.at > spec.deadline {
                return Err(Error::InvalidProfile(format!(
                    "player {} contributes at {} after the deadline {}",
                    c.player_id, c.at, spec.deadline
                )));
            }
        }
        Ok(())
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn contributions(&self) -> &[Contribution] {
        &self.contributions
    }

    /// Total contribution `C`. Summed in ascending order of amount, so it
    /// does not depend on who contributed when.
    pub fn total(&self) -> f64 {
        let mut amounts: Vec<f64> = self.contributions.iter().map(|c| c.amount).collect();
        amounts.sort_by(f64::total_cmp);
        amounts.iter().sum()
    }

    /// Total valuation of all players.
    pub fn theta_sum(&self) -> f64 {
        self.players.iter().map(|p| p.valuation).sum()
    }

    pub fn contribution_of(&self, player_id: usize) -> Option<&Contribution> {
        self.contributions.iter().find(|c| c.player_id == player_id)
    }

    /// Amount contributed up to and including time `t`.
    pub fn paid_by(&self, t: f64) -> f64 {
        self.contributions.iter().filter(|c| c.at <= t).map(|c| c.amount).sum()
    }

    fn point(&self, scheme: &SchemeParams, seq: usize) -> Result<RefundPoint> {
        let len = self.contributions.len();
        if seq == 0 || seq > len {
            return Err(Error::InvalidSeq { seq, len });
        }
        let c = &self.contributions[seq - 1];
        let outstanding = match *scheme {
            SchemeParams::Pps { liquidity } => {
                let paid: f64 = self.contributions[..seq - 1].iter().map(|c| c.amount).sum();
                outstanding_after(paid, liquidity)?
            }
            _ => 0.0,
        };
        Ok(RefundPoint {
            amount: c.amount,
            seq,
            at: c.at,
            total: self.total(),
            outstanding,
        })
    }
}

/// Provision flag with per-player refunds and payoffs, in player order.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub provisioned: bool,
    pub refunds: Vec<f64>,
    pub payoffs: Vec<f64>,
}

/// Refund share `R_i` of the contribution at position `seq`.
pub fn refund_share(scheme: &SchemeParams, profile: &StrategyProfile, budget: f64, seq: usize) -> Result<f64> {
    if !(budget >= 0.0) {
        return Err(Error::InvalidProject(format!(
            "budget must be non-negative, got {budget}"
        )));
    }
    if matches!(scheme, SchemeParams::Ppr) && profile.total() <= 0.0 {
        return Err(Error::EmptyProfile);
    }
    let point = profile.point(scheme, seq)?;
    scheme.refund(&point, budget)
}

/// Payoff of every player at the deadline.
///
/// Provisioned: contributors get `theta_i - x_i`, free riders `theta_i`.
/// Not provisioned: contributors get their refund share, others nothing.
pub fn payoffs(spec: &ProjectSpec, profile: &StrategyProfile) -> Result<Outcome> {
    spec.validate()?;
    profile.validate_for(spec)?;

    let provisioned = spec.is_provisioned(profile.total());
    let mut refunds = vec![0.0; profile.players.len()];
    let mut payoffs = vec![0.0; profile.players.len()];

    for (k, player) in profile.players.iter().enumerate() {
        let contribution = profile.contribution_of(player.id);
        if provisioned {
            payoffs[k] = player.valuation - contribution.map_or(0.0, |c| c.amount);
        } else if let Some(c) = contribution {
            let r = refund_share(&spec.scheme, profile, spec.budget, c.seq)?;
            refunds[k] = r;
            payoffs[k] = r;
        }
    }
    Ok(Outcome {
        provisioned,
        refunds,
        payoffs,
    })
}

/// Amount still missing at time `t`: `max(H - paid_by(t), 0)`.
pub fn remaining_amount(spec: &ProjectSpec, profile: &StrategyProfile, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= spec.deadline) {
        return Err(Error::TimeOutOfRange {
            t,
            deadline: spec.deadline,
        });
    }
    Ok((spec.provision_point - profile.paid_by(t)).max(0.0))
}
