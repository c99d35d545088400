//! Numerical checks of contribution monotonicity, time monotonicity and the
//! race condition for any refund scheme.
//!
//! Every check draws sample profiles from a seeded generator: a focal
//! contribution `(x, t)` surrounded by other contributions before and after
//! it. Slopes are estimated on the literal scheme, where the total `C`
//! moves with the focal contribution, and cross-checked against closed
//! forms where one exists.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{
    pps_cost_inverse, refund_share, Bid, Mechanism, Player, ProjectSpec, RefundPoint, SchemeParams, StrategyProfile,
};

/// Slopes at or below this magnitude count as zero.
pub const SLOPE_TOLERANCE: f64 = 1e-12;
/// Refund changes at or below this magnitude count as payoff invariance.
pub const RACE_TOLERANCE: f64 = 1e-12;
/// Allowed relative gap between finite-difference and closed-form slopes.
pub const ANALYTIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub num_points: usize,
    /// Focal contribution range, inside `(0, H)`.
    pub x_range: (f64, f64),
    /// Focal contribution time range, inside `(0, T)`.
    pub t_range: (f64, f64),
    pub seed: u64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Players per population in the race-condition check.
    pub population: usize,
}

impl SampleSpec {
    /// Defaults scaled to a project: 1000 points, `x` in `[H/100, H/2]`,
    /// `t` in `[T/100, 99T/100]`.
    pub fn for_project(spec: &ProjectSpec, seed: u64) -> Self {
        SampleSpec {
            num_points: 1000,
            x_range: (spec.provision_point * 0.01, spec.provision_point * 0.5),
            t_range: (spec.deadline * 0.01, spec.deadline * 0.99),
            seed,
            fd_step: 1e-6,
            population: 5,
        }
    }

    pub fn validate(&self, spec: &ProjectSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSample(m));
        if self.num_points == 0 {
            return bad("num_points must be at least 1".into());
        }
        let (x0, x1) = self.x_range;
        if !(x0 > 0.0 && x0 < x1 && x1 < spec.provision_point) {
            return bad(format!(
                "x_range ({x0}, {x1}) must be a non-degenerate interval inside (0, {})",
                spec.provision_point
            ));
        }
        let (t0, t1) = self.t_range;
        if !(t0 > 0.0 && t0 < t1 && t1 < spec.deadline) {
            return bad(format!(
                "t_range ({t0}, {t1}) must be a non-degenerate interval inside (0, {})",
                spec.deadline
            ));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return bad(format!("fd_step must lie in (0, 1), got {}", self.fd_step));
        }
        if self.population < 2 {
            return bad("population must be at least 2".into());
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    ContributionMonotonicity,
    TimeMonotonicity,
}

/// What a violation was measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordinate {
    /// Own contribution `x_i`.
    Contribution,
    /// Own contribution time `t_i` (one step later in contribution order).
    Time,
    /// Finite difference disagreed with the closed-form slope.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: usize,
    pub coordinate: Coordinate,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub mechanism: Mechanism,
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub points_checked: usize,
    /// Smallest and largest measured slope.
    pub slope_range: (f64, f64),
    /// Largest relative gap between the literal-scheme finite difference and
    /// its closed form, when the scheme has one.
    pub max_analytic_error: Option<f64>,
    /// Largest relative gap between the fixed-`C` finite difference and the
    /// fixed-`C` closed form (`B / (C + K)` for the contribution slope).
    pub max_fixed_total_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceReport {
    pub mechanism: Mechanism,
    pub race_detected: bool,
    /// Largest set of players whose refund does not drop when they delay to
    /// the latest arrival time.
    pub witness_set_size: usize,
    pub populations_checked: usize,
}

/// A sampled profile with one focal contribution.
#[derive(Debug, Clone)]
struct SamplePoint {
    players: Vec<Player>,
    before: Vec<Bid>,
    after: Vec<Bid>,
    x: f64,
    t: f64,
}

const FOCAL: usize = 0;

impl SamplePoint {
    fn draw(spec: &ProjectSpec, sample: &SampleSpec, index: usize) -> Self {
        let mut rng = sample.rng(index as u64);
        let x = rng.random_range(sample.x_range.0..=sample.x_range.1);
        let t = rng.random_range(sample.t_range.0..=sample.t_range.1);
        let n_before = rng.random_range(0..=4usize);
        let n_after = rng.random_range(1..=4usize);

        let mut players = vec![Player {
            id: FOCAL,
            valuation: spec.provision_point,
            arrival: t,
        }];
        let mut draw_bids = |n: usize, lo: f64, hi: f64, players: &mut Vec<Player>| {
            let mut times: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
            times.sort_by(f64::total_cmp);
            times
                .into_iter()
                .map(|at| {
                    let id = players.len();
                    players.push(Player {
                        id,
                        valuation: spec.provision_point,
                        arrival: at,
                    });
                    let amount = rng.random_range(sample.x_range.0..=sample.x_range.1);
                    Bid::new(id, amount, at)
                })
                .collect::<Vec<_>>()
        };
        let before = draw_bids(n_before, 0.0, t, &mut players);
        // strictly after t so the focal player keeps its position
        let after = draw_bids(n_after, t + (spec.deadline - t) * 1e-3, spec.deadline, &mut players);
        SamplePoint {
            players,
            before,
            after,
            x,
            t,
        }
    }

    /// Profile with the focal contribution at `(x, t)`; the focal bid is
    /// listed last so that ties in time place it after the others.
    fn profile(&self, x: f64, t: f64) -> StrategyProfile {
        let bids = self
            .before
            .iter()
            .chain(self.after.iter())
            .copied()
            .chain(std::iter::once(Bid::new(FOCAL, x, t)));
        StrategyProfile::new(self.players.clone(), bids).expect("sampled profile is valid")
    }

    fn others_total(&self) -> f64 {
        self.before.iter().chain(self.after.iter()).map(|b| b.amount).sum()
    }

    fn focal_seq(&self) -> usize {
        self.before.len() + 1
    }

    fn refund(&self, scheme: &SchemeParams, budget: f64, x: f64, t: f64) -> Result<f64> {
        let profile = self.profile(x, t);
        let seq = profile.contribution_of(FOCAL).expect("focal bid").seq;
        refund_share(scheme, &profile, budget, seq)
    }

    fn fixed_point(&self, scheme: &SchemeParams) -> Result<RefundPoint> {
        let outstanding = match *scheme {
            SchemeParams::Pps { liquidity } => {
                let paid: f64 = self.before.iter().map(|b| b.amount).sum();
                pps_cost_inverse(liquidity * std::f64::consts::LN_2 + paid, liquidity)?
            }
            _ => 0.0,
        };
        Ok(RefundPoint {
            amount: self.x,
            seq: self.focal_seq(),
            at: self.t,
            total: self.others_total() + self.x,
            outstanding,
        })
    }
}

fn rel_err(measured: f64, expected: f64) -> f64 {
    (measured - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
}

fn draw_points(spec: &ProjectSpec, sample: &SampleSpec) -> Vec<SamplePoint> {
    (0..sample.num_points)
        .into_par_iter()
        .map(|k| SamplePoint::draw(spec, sample, k))
        .collect()
}

struct PointResult {
    slope: f64,
    violations: Vec<Violation>,
    analytic_error: Option<f64>,
    fixed_error: Option<f64>,
}

fn merge(condition: Condition, mechanism: Mechanism, results: Vec<PointResult>) -> ConditionReport {
    let mut violations = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut analytic: Option<f64> = None;
    let mut fixed: Option<f64> = None;
    let points_checked = results.len();
    for r in results {
        lo = lo.min(r.slope);
        hi = hi.max(r.slope);
        violations.extend(r.violations);
        if let Some(e) = r.analytic_error {
            analytic = Some(analytic.map_or(e, |a| a.max(e)));
        }
        if let Some(e) = r.fixed_error {
            fixed = Some(fixed.map_or(e, |a| a.max(e)));
        }
    }
    ConditionReport {
        condition,
        mechanism,
        passed: violations.is_empty(),
        violations,
        points_checked,
        slope_range: (lo, hi),
        max_analytic_error: analytic,
        max_fixed_total_error: fixed,
    }
}

/// Closed-form derivative of the literal scheme in `x`, where `C` includes `x`.
fn analytic_contribution_slope(scheme: &SchemeParams, point: &RefundPoint, budget: f64) -> Option<f64> {
    match *scheme {
        SchemeParams::Ppm => None,
        SchemeParams::Ppr => {
            let others = point.total - point.amount;
            Some(budget * others / (point.total * point.total))
        }
        SchemeParams::Pprg { .. } | SchemeParams::Ppre { .. } | SchemeParams::Pprp { .. } => {
            let k = scheme.convergence_constant()?;
            let g = scheme.bonus_term(point.seq, point.at);
            let others = point.total - point.amount;
            let denom = point.total + k;
            Some(budget * (others + k - g) / (denom * denom))
        }
        SchemeParams::Pps { liquidity } => {
            // d/dx C0^-1(x + C0(q)) = 1 / C0'(q'), and 1 / sigmoid(z) - 1 = e^-z
            let q_after = pps_cost_inverse(
                point.amount + crate::mechanisms::pps_cost(point.outstanding, liquidity).ok()?,
                liquidity,
            )
            .ok()?;
            Some((-q_after / liquidity).exp())
        }
    }
}

/// Fixed-`C` partial derivative `B / (C + K)` (or `B / C` for PPR).
fn fixed_total_slope(scheme: &SchemeParams, point: &RefundPoint, budget: f64) -> Option<f64> {
    match *scheme {
        SchemeParams::Ppr => Some(budget / point.total),
        SchemeParams::Pprg { .. } | SchemeParams::Ppre { .. } | SchemeParams::Pprp { .. } => {
            Some(budget / (point.total + scheme.convergence_constant()?))
        }
        _ => None,
    }
}

/// Checks that the refund strictly increases with the player's own
/// contribution at every sampled point.
pub fn check_contribution_monotonicity(
    scheme: &SchemeParams,
    spec: &ProjectSpec,
    sample: &SampleSpec,
) -> Result<ConditionReport> {
    scheme.validate()?;
    spec.validate()?;
    sample.validate(spec)?;
    let budget = spec.budget;

    let results = draw_points(spec, sample)
        .into_par_iter()
        .enumerate()
        .map(|(k, p)| -> Result<PointResult> {
            // step relative to max(x, 1), kept below x so x - h stays positive
            let h = (sample.fd_step * p.x.max(1.0)).min(0.5 * p.x);
            let up = p.refund(scheme, budget, p.x + h, p.t)?;
            let down = p.refund(scheme, budget, p.x - h, p.t)?;
            let slope = (up - down) / (2.0 * h);

            let mut violations = Vec::new();
            if !(slope > SLOPE_TOLERANCE) {
                violations.push(Violation {
                    point: k,
                    coordinate: Coordinate::Contribution,
                    slope,
                });
            }

            let point = p.fixed_point(scheme)?;
            let analytic_error = match analytic_contribution_slope(scheme, &point, budget) {
                Some(expected) => {
                    let measured = match *scheme {
                        // Only the market term moves with x; differencing it
                        // alone keeps tiny slopes above rounding noise.
                        SchemeParams::Pps { liquidity: b } => {
                            let c0 = crate::mechanisms::pps_cost(point.outstanding, b)?;
                            let term = |x: f64| b * crate::mechanisms::log1mexp((c0 + x) / b);
                            (term(p.x + h) - term(p.x - h)) / (2.0 * h)
                        }
                        _ => slope,
                    };
                    Some(rel_err(measured, expected))
                }
                None => None,
            };
            if let Some(e) = analytic_error {
                if e > ANALYTIC_TOLERANCE {
                    violations.push(Violation {
                        point: k,
                        coordinate: Coordinate::Analytic,
                        slope,
                    });
                }
            }

            let fixed_error = match fixed_total_slope(scheme, &point, budget) {
                Some(expected) => {
                    let eval = |x: f64| scheme.refund(&RefundPoint { amount: x, ..point }, budget);
                    let measured = (eval(p.x + h)? - eval(p.x - h)?) / (2.0 * h);
                    let e = rel_err(measured, expected);
                    if e > ANALYTIC_TOLERANCE {
                        violations.push(Violation {
                            point: k,
                            coordinate: Coordinate::Analytic,
                            slope: measured,
                        });
                    }
                    Some(e)
                }
                None => None,
            };

            Ok(PointResult {
                slope,
                violations,
                analytic_error,
                fixed_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(merge(Condition::ContributionMonotonicity, scheme.mechanism(), results))
}

/// Bonus term with the contribution position relaxed to a real number.
fn relaxed_bonus(scheme: &SchemeParams, position: f64) -> Option<f64> {
    match *scheme {
        SchemeParams::Pprg { a, gamma } => Some(a * gamma.powf(-(position - 1.0))),
        SchemeParams::Pprp { k3 } => Some(k3 / (position * (position + 1.0))),
        _ => None,
    }
}

/// Closed-form time (or position) derivative at fixed `C`.
fn analytic_time_slope(scheme: &SchemeParams, point: &RefundPoint, budget: f64) -> Option<f64> {
    let k = scheme.convergence_constant()?;
    let scale = budget / (point.total + k);
    match *scheme {
        SchemeParams::Pprg { a, gamma } => Some(-scale * a * gamma.ln() * gamma.powf(-(point.seq as f64 - 1.0))),
        SchemeParams::Ppre { k2 } => Some(-scale * k2 * (-point.at).exp()),
        SchemeParams::Pprp { k3 } => {
            let i = point.seq as f64;
            Some(scale * k3 * (1.0 / ((i + 1.0) * (i + 1.0)) - 1.0 / (i * i)))
        }
        _ => None,
    }
}

/// Checks that delaying a contribution never raises the refund and lowers it
/// somewhere.
///
/// The focal player is delayed until just after the next contribution, which
/// moves it one position later and raises the outstanding PPS quantity.
/// PPRG and PPRP must drop strictly at every point; PPRE and PPS must never
/// rise and must drop somewhere. PPR and PPM are time-invariant and fail.
pub fn check_time_monotonicity(
    scheme: &SchemeParams,
    spec: &ProjectSpec,
    sample: &SampleSpec,
) -> Result<ConditionReport> {
    scheme.validate()?;
    spec.validate()?;
    sample.validate(spec)?;
    let budget = spec.budget;
    let strict_everywhere = matches!(scheme, SchemeParams::Pprg { .. } | SchemeParams::Pprp { .. });

    let results = draw_points(spec, sample)
        .into_par_iter()
        .enumerate()
        .map(|(k, p)| -> Result<(PointResult, bool)> {
            let next = p.after.first().expect("at least one later contribution").at;
            let now = p.refund(scheme, budget, p.x, p.t)?;
            let later = p.refund(scheme, budget, p.x, next)?;
            let delta = later - now;
            let slope = delta / (next - p.t);
            let strict = delta < -SLOPE_TOLERANCE;

            let mut violations = Vec::new();
            if delta > SLOPE_TOLERANCE || (strict_everywhere && !strict) {
                violations.push(Violation {
                    point: k,
                    coordinate: Coordinate::Time,
                    slope,
                });
            }

            let point = p.fixed_point(scheme)?;
            let analytic_error = match analytic_time_slope(scheme, &point, budget) {
                Some(expected) => {
                    let measured = match *scheme {
                        SchemeParams::Ppre { .. } => {
                            // R = scale * (x + bonus(t)); only the bonus moves with t
                            let h = sample.fd_step * p.t.max(1.0);
                            let k_const = scheme.convergence_constant().expect("decaying scheme");
                            let scale = budget / (point.total + k_const);
                            let bonus = |at: f64| scheme.bonus_term(point.seq, at);
                            scale * (bonus(p.t + h) - bonus(p.t - h)) / (2.0 * h)
                        }
                        _ => {
                            let pos = point.seq as f64;
                            let h = sample.fd_step * pos;
                            let k_const = scheme.convergence_constant().expect("decaying scheme");
                            let scale = budget / (point.total + k_const);
                            let up = relaxed_bonus(scheme, pos + h).expect("positional scheme");
                            let down = relaxed_bonus(scheme, pos - h).expect("positional scheme");
                            scale * (up - down) / (2.0 * h)
                        }
                    };
                    let e = rel_err(measured, expected);
                    if e > ANALYTIC_TOLERANCE {
                        violations.push(Violation {
                            point: k,
                            coordinate: Coordinate::Analytic,
                            slope: measured,
                        });
                    }
                    Some(e)
                }
                None => None,
            };

            Ok((
                PointResult {
                    slope,
                    violations,
                    analytic_error,
                    fixed_error: None,
                },
                strict,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let any_strict = results.iter().any(|(_, strict)| *strict);
    let results: Vec<PointResult> = results
        .into_iter()
        .enumerate()
        .map(|(k, (mut r, strict))| {
            if !any_strict && !strict && !r.violations.iter().any(|v| v.coordinate == Coordinate::Time) {
                r.violations.push(Violation {
                    point: k,
                    coordinate: Coordinate::Time,
                    slope: r.slope,
                });
            }
            r
        })
        .collect();
    Ok(merge(Condition::TimeMonotonicity, scheme.mechanism(), results))
}

/// Looks for a set of more than one player whose refund is unaffected by
/// delaying their contribution to the latest arrival time.
///
/// Populations of `sample.population` players contribute on arrival; each
/// player is then moved, alone, to the latest arrival time (behind the last
/// arrival) and the change in its refund is measured.
pub fn detect_race_condition(scheme: &SchemeParams, spec: &ProjectSpec, sample: &SampleSpec) -> Result<RaceReport> {
    scheme.validate()?;
    spec.validate()?;
    sample.validate(spec)?;
    let n = sample.population;
    let populations = (sample.num_points / n).max(1);

    let sizes = (0..populations)
        .into_par_iter()
        .map(|k| -> Result<usize> {
            // streams above the condition checks' point streams
            let mut rng = sample.rng((1u64 << 32) + k as u64);
            let mut arrivals: Vec<f64> = (0..n)
                .map(|_| rng.random_range(sample.t_range.0..=sample.t_range.1))
                .collect();
            arrivals.sort_by(f64::total_cmp);
            let players: Vec<Player> = arrivals
                .iter()
                .enumerate()
                .map(|(id, &arrival)| Player {
                    id,
                    valuation: spec.provision_point,
                    arrival,
                })
                .collect();
            let amounts: Vec<f64> = (0..n)
                .map(|_| rng.random_range(sample.x_range.0..=sample.x_range.1))
                .collect();
            let latest = arrivals[n - 1];
            let bids: Vec<Bid> = players
                .iter()
                .map(|p| Bid::new(p.id, amounts[p.id], p.arrival))
                .collect();

            let base = StrategyProfile::new(players.clone(), bids.clone())?;
            let mut invariant = 0;
            for p in &players {
                let own = refund_share(scheme, &base, spec.budget, base.contribution_of(p.id).expect("bid").seq)?;
                let delayed_bids = bids
                    .iter()
                    .filter(|b| b.player_id != p.id)
                    .copied()
                    .chain(std::iter::once(Bid::new(p.id, amounts[p.id], latest)));
                let delayed = StrategyProfile::new(players.clone(), delayed_bids)?;
                let seq = delayed.contribution_of(p.id).expect("bid").seq;
                let moved = refund_share(scheme, &delayed, spec.budget, seq)?;
                if (moved - own).abs() <= RACE_TOLERANCE {
                    invariant += 1;
                }
            }
            Ok(invariant)
        })
        .collect::<Result<Vec<_>>>()?;

    let witness_set_size = sizes.iter().copied().max().unwrap_or(0);
    Ok(RaceReport {
        mechanism: scheme.mechanism(),
        race_detected: witness_set_size > 1,
        witness_set_size,
        populations_checked: populations,
    })
}
