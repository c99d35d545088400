use proptest::prelude::*;
use refund_bonus::equilibrium::{max_budget, solve};
use refund_bonus::mechanisms::{
    payoffs, pps_cost, pps_cost_inverse, pps_refund, refund_share, remaining_amount, Bid, Player, ProjectSpec,
    SchemeParams, StrategyProfile,
};

const H: f64 = 100.0;
const T: f64 = 10.0;

fn decaying() -> impl Strategy<Value = SchemeParams> {
    prop_oneof![
        (0.1..5.0f64, 1.05..4.0f64).prop_map(|(a, gamma)| SchemeParams::Pprg { a, gamma }),
        (0.1..10.0f64).prop_map(|k3| SchemeParams::Pprp { k3 }),
    ]
}

fn any_scheme() -> impl Strategy<Value = SchemeParams> {
    prop_oneof![
        Just(SchemeParams::Ppm),
        Just(SchemeParams::Ppr),
        decaying(),
        (0.1..10.0f64).prop_map(|k2| SchemeParams::Ppre { k2 }),
        (0.1..20.0f64).prop_map(|liquidity| SchemeParams::Pps { liquidity }),
    ]
}

/// Up to 25 contributions, all below the provision point in total.
fn unfunded_bids() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.01..1.0f64, 0.0..T), 1..25).prop_map(|raw| {
        let sum: f64 = raw.iter().map(|(w, _)| w).sum();
        raw.into_iter().map(|(w, t)| (w / sum * 0.95 * H, t)).collect()
    })
}

fn profile_of(bids: &[(f64, f64)]) -> StrategyProfile {
    let players = bids
        .iter()
        .enumerate()
        .map(|(id, &(_, t))| Player {
            id,
            valuation: 50.0,
            arrival: t,
        })
        .collect();
    StrategyProfile::new(players, bids.iter().enumerate().map(|(id, &(x, t))| Bid::new(id, x, t))).unwrap()
}

fn total_refund(scheme: &SchemeParams, profile: &StrategyProfile, budget: f64) -> f64 {
    (1..=profile.contributions().len())
        .map(|seq| refund_share(scheme, profile, budget, seq).unwrap())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The unspent part is `B tail / (C + K)`, where `tail` is the bonus mass
    /// beyond position `n`. It can fall below one ulp of `B` for long
    /// profiles, so the strict gap is checked on the closed form.
    #[test]
    fn positional_schemes_stay_within_budget(scheme in decaying(), bids in unfunded_bids(), budget in 0.1..500.0f64) {
        let profile = profile_of(&bids);
        let n = profile.contributions().len();
        let k = scheme.convergence_constant().unwrap();
        let tail = match scheme {
            SchemeParams::Pprg { a, gamma } => a * gamma / (gamma - 1.0) * gamma.powi(-(n as i32)),
            SchemeParams::Pprp { k3 } => k3 / (n as f64 + 1.0),
            _ => unreachable!(),
        };
        let unspent = budget * tail / (profile.total() + k);
        prop_assert!(unspent > 0.0);
        let total = total_refund(&scheme, &profile, budget);
        prop_assert!((budget - total - unspent).abs() <= 1e-12 * budget);
        prop_assert!(total <= budget * (1.0 + 1e-12));
    }

    #[test]
    fn ppr_spends_exactly_the_budget(bids in unfunded_bids(), budget in 0.1..500.0f64) {
        let profile = profile_of(&bids);
        let total = total_refund(&SchemeParams::Ppr, &profile, budget);
        prop_assert!((total - budget).abs() <= 1e-12 * budget);
    }

    /// PPRE pays `B (C + K2 S) / (C + K2)` with `S = sum e^-t`, which stays
    /// within `B` exactly when `S <= 1`.
    #[test]
    fn ppre_total_follows_time_mass(k2 in 0.1..10.0f64, bids in unfunded_bids(), budget in 0.1..500.0f64) {
        let scheme = SchemeParams::Ppre { k2 };
        let profile = profile_of(&bids);
        let c = profile.total();
        let s: f64 = profile.contributions().iter().map(|c| (-c.at).exp()).sum();
        let expected = budget * (c + k2 * s) / (c + k2);
        let total = total_refund(&scheme, &profile, budget);
        prop_assert!((total - expected).abs() <= 1e-10 * expected);
        if s < 1.0 {
            prop_assert!(total < budget);
        }
    }

    #[test]
    fn refunds_are_non_negative(scheme in any_scheme(), bids in unfunded_bids(), budget in 0.0..500.0f64) {
        let profile = profile_of(&bids);
        for seq in 1..=profile.contributions().len() {
            prop_assert!(refund_share(&scheme, &profile, budget, seq).unwrap() >= 0.0);
        }
    }

    #[test]
    fn exactly_one_payoff_branch_applies(
        scheme in any_scheme(),
        bids in prop::collection::vec((0.0..60.0f64, 0.0..T), 1..10),
        free_riders in 0usize..4,
        budget in 0.0..200.0f64,
    ) {
        let n = bids.len();
        let players: Vec<Player> = (0..n + free_riders)
            .map(|id| Player { id, valuation: 10.0 + id as f64, arrival: 0.0 })
            .collect();
        let profile = StrategyProfile::new(
            players.clone(),
            bids.iter().enumerate().map(|(id, &(x, t))| Bid::new(id, x, t)),
        ).unwrap();
        let spec = ProjectSpec::new(H, T, budget, scheme).unwrap();
        let out = payoffs(&spec, &profile).unwrap();
        prop_assert_eq!(out.provisioned, spec.is_provisioned(profile.total()));
        for (k, p) in players.iter().enumerate() {
            let x = profile.contribution_of(p.id).map(|c| c.amount);
            if out.provisioned {
                prop_assert_eq!(out.refunds[k], 0.0);
                prop_assert_eq!(out.payoffs[k], p.valuation - x.unwrap_or(0.0));
            } else {
                prop_assert_eq!(out.payoffs[k], out.refunds[k]);
                if x.is_none() {
                    prop_assert_eq!(out.payoffs[k], 0.0);
                }
            }
        }
    }

    #[test]
    fn remaining_never_increases(bids in unfunded_bids(), t1 in 0.0..T, t2 in 0.0..T) {
        let spec = ProjectSpec::new(H, T, 10.0, SchemeParams::Ppr).unwrap();
        let profile = profile_of(&bids);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(remaining_amount(&spec, &profile, hi).unwrap() <= remaining_amount(&spec, &profile, lo).unwrap());
    }

    #[test]
    fn cost_is_convex_and_increasing(b in 0.05..20.0f64, q0 in 0.0..50.0f64, step in 0.01..2.0f64) {
        let c = |q: f64| pps_cost(q, b).unwrap();
        let (c0, c1, c2) = (c(q0), c(q0 + step), c(q0 + 2.0 * step));
        prop_assert!(c1 > c0);
        prop_assert!(c2 - 2.0 * c1 + c0 >= -1e-12 * c2.abs().max(1.0));
    }

    #[test]
    fn cost_inverse_round_trips(b in 0.05..20.0f64, q in 0.0..200.0f64) {
        let c = pps_cost(q, b).unwrap();
        let back = pps_cost(pps_cost_inverse(c, b).unwrap(), b).unwrap();
        prop_assert!((back - c).abs() <= 1e-9 * c.max(1.0));
    }

    #[test]
    fn pps_refund_positive_and_decreasing(b in 0.1..10.0f64, x in 0.01..20.0f64, q in 0.0..20.0f64, dq in 0.01..5.0f64) {
        let r = pps_refund(x, q, b).unwrap();
        prop_assert!(r > 0.0);
        prop_assert!(pps_refund(x, q + dq, b).unwrap() < r);
    }

    /// Moving coordinates a scheme ignores leaves its refund bit-identical.
    #[test]
    fn refunds_ignore_irrelevant_coordinates(
        x in 1.0..30.0f64,
        others in prop::collection::vec(1.0..10.0f64, 3..6),
        shift in 0.1..3.0f64,
        budget in 1.0..100.0f64,
    ) {
        // The focal contribution stays at position 2 with the same total;
        // only times (and, for PPR, the position) move.
        let build = |focal_at: f64, order_shift: f64| {
            let mut bids = vec![(others[0], 0.0), (x, focal_at)];
            for (k, &o) in others[1..].iter().enumerate() {
                bids.push((o, focal_at + order_shift + k as f64 * 0.1));
            }
            profile_of(&bids)
        };
        let a = build(1.0, 0.5);
        let b = build(1.0 + shift, 0.5 + shift);
        let seq = |p: &StrategyProfile| p.contributions().iter().find(|c| c.player_id == 1).unwrap().seq;
        prop_assert_eq!(seq(&a), seq(&b));
        for scheme in [SchemeParams::Pprg { a: 1.0, gamma: 2.0 }, SchemeParams::Pprp { k3: 2.0 }, SchemeParams::Ppr] {
            prop_assert_eq!(
                refund_share(&scheme, &a, budget, seq(&a)).unwrap().to_bits(),
                refund_share(&scheme, &b, budget, seq(&b)).unwrap().to_bits()
            );
        }
        // PPRE reads the time but not the position: the focal player (id 1)
        // ties with another contributor and is placed before or after it.
        let before = profile_of(&[(others[0], 0.0), (x, 1.0), (others[1], 1.0)]);
        let after = profile_of(&[(others[0], 0.0), (others[1], 1.0), (x, 1.0)]);
        let seq_of = |p: &StrategyProfile, id: usize| p.contribution_of(id).unwrap().seq;
        prop_assert_eq!(seq_of(&before, 1), 2);
        prop_assert_eq!(seq_of(&after, 2), 3);
        for scheme in [SchemeParams::Ppre { k2: 2.0 }, SchemeParams::Ppr] {
            prop_assert_eq!(
                refund_share(&scheme, &before, budget, 2).unwrap().to_bits(),
                refund_share(&scheme, &after, budget, 3).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn bound_simplifies_to_surplus(scheme in decaying(), h in 1.0..1000.0f64, ratio in 1.01..50.0f64) {
        let theta = h * ratio;
        let bound = max_budget(&scheme, h, theta).unwrap();
        prop_assert!((bound.max_budget - (theta - h)).abs() <= 1e-9 * (theta - h));
    }

    #[test]
    fn positional_equilibria_provision(
        scheme in decaying(),
        raw in prop::collection::vec((0.0..1.0f64, 0.0..T), 2..30),
        ratio in 1.2..20.0f64,
        fraction in 0.01..1.0f64,
    ) {
        let sum: f64 = raw.iter().map(|(w, _)| w).sum();
        prop_assume!(sum > 0.0);
        let players: Vec<Player> = raw.iter().enumerate()
            .map(|(id, &(w, y))| Player { id, valuation: w / sum * ratio * H, arrival: y })
            .collect();
        let bound = max_budget(&scheme, H, ratio * H).unwrap();
        let budget = fraction * bound.max_budget;
        let sol = solve(&scheme, &players, H, budget).unwrap();
        prop_assert!((sol.profile.total() - H).abs() <= 1e-9 * H);
        let k = scheme.convergence_constant().unwrap();
        for c in sol.profile.contributions() {
            let p = sol.profile.players().iter().find(|p| p.id == c.player_id).unwrap();
            prop_assert_eq!(c.at, p.arrival);
            if c.amount > 0.0 {
                let refund = (c.amount + scheme.bonus_term(c.seq, c.at)) / (H + k) * budget;
                prop_assert!(p.valuation - c.amount >= refund - 1e-9);
            }
        }
    }
}
