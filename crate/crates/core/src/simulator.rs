//! Monte-Carlo crowdfunding games and provision-accuracy sweeps.
//!
//! A run draws `n` players with random valuations and uniform arrivals on
//! `[0, T]`, lets each decide on arrival how much to give and when, and
//! evaluates the outcome at the deadline. Agents observe only the project
//! announcement, the amount still missing, the elapsed time, the history of
//! contributions so far and their own valuation.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the seed, the
//! sweep point, the phase (training or evaluation) and the episode, so
//! results do not depend on thread scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::equilibrium_cap;
use crate::error::{Error, Result};
use crate::format::csv_number;
use crate::mechanisms::{
    outstanding_after, payoffs, Bid, Mechanism, Outcome, Player, ProjectSpec, SchemeParams, StrategyProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationDistribution {
    /// Uniform on `[0, 2 mean]`.
    #[default]
    Uniform,
    Exponential,
}

/// How the players of a run behave.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    /// Everyone plays the equilibrium strategy.
    Equilibrium,
    /// Tabular epsilon-greedy learners, trained before evaluation.
    #[default]
    Learner,
    /// Each player free rides with probability `p`, otherwise plays the
    /// equilibrium strategy.
    FreeRiderMix { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            episodes: 5000,
            alpha: 0.1,
            epsilon_start: 0.3,
            epsilon_end: 0.01,
        }
    }
}

impl LearnerConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Exploration rate in training episode `episode`, linear from start to end.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_end;
        }
        let f = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// One accuracy sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_players: usize,
    pub provision_point: f64,
    pub deadline: f64,
    /// `m` in `E[total valuation] = m H`.
    pub expected_valuation_multiplier: f64,
    pub valuation_distribution: ValuationDistribution,
    /// Budgets as fractions of `total valuation - H`, the largest budget with
    /// an equilibrium.
    pub budget_fractions: Vec<f64>,
    pub runs_per_point: usize,
    pub seed: u64,
    pub policy: Policy,
    pub learner: LearnerConfig,
    pub schemes: Vec<SchemeParams>,
    /// Replace each PPS liquidity by [`calibrate_liquidity`] for the run's budget.
    pub calibrate_pps: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_players: 25,
            provision_point: 100.0,
            deadline: 10.0,
            expected_valuation_multiplier: 5.0,
            valuation_distribution: ValuationDistribution::Uniform,
            budget_fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            runs_per_point: 100,
            seed: 0,
            policy: Policy::Learner,
            learner: LearnerConfig::default(),
            schemes: default_schemes().to_vec(),
            calibrate_pps: true,
        }
    }
}

/// PPRG, PPRE, PPRP and PPS with `K1 = K2 = K3 = 2`.
pub fn default_schemes() -> [SchemeParams; 4] {
    [
        SchemeParams::Pprg { a: 1.0, gamma: 2.0 },
        SchemeParams::Ppre { k2: 2.0 },
        SchemeParams::Pprp { k3: 2.0 },
        SchemeParams::Pps { liquidity: 1.0 },
    ]
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_players == 0 {
            return bad("n_players must be at least 1".into());
        }
        if !(self.provision_point > 0.0) || !self.provision_point.is_finite() {
            return bad(format!(
                "provision_point must be positive, got {}",
                self.provision_point
            ));
        }
        if !(self.deadline > 0.0) || !self.deadline.is_finite() {
            return bad(format!("deadline must be positive, got {}", self.deadline));
        }
        let m = self.expected_valuation_multiplier;
        if !(m > 0.0) || !m.is_finite() {
            return bad(format!("expected_valuation_multiplier must be positive, got {m}"));
        }
        if self.budget_fractions.is_empty() {
            return bad("budget_fractions is empty".into());
        }
        if let Some(f) = self.budget_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("budget fractions must lie in (0, 1], got {f}"));
        }
        if self.runs_per_point == 0 {
            return bad("runs_per_point must be at least 1".into());
        }
        if let Policy::FreeRiderMix { p } = self.policy {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("free rider probability must lie in [0, 1], got {p}"));
            }
        }
        if self.schemes.is_empty() {
            return bad("schemes is empty".into());
        }
        for s in &self.schemes {
            s.validate()?;
            if self.policy != Policy::Learner && matches!(s.mechanism(), Mechanism::Ppm | Mechanism::Pps) {
                return Err(Error::UnsupportedScheme {
                    mechanism: s.mechanism(),
                    operation: "equilibrium strategy",
                });
            }
        }
        self.learner.validate()
    }

    /// Mean valuation of one player, `m H / n`.
    pub fn mean_valuation(&self) -> f64 {
        self.expected_valuation_multiplier * self.provision_point / self.n_players as f64
    }

    fn project(&self, scheme: SchemeParams, budget: f64) -> Result<ProjectSpec> {
        ProjectSpec::new(self.provision_point, self.deadline, budget, scheme)
    }
}

/// Random stream for one (point, phase, episode) of a sweep.
pub fn stream_rng(seed: u64, point: usize, phase: u8, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 34) | (u64::from(phase & 3) << 32) | (episode as u64 & 0xFFFF_FFFF));
    rng
}

const TRAIN: u8 = 0;
const EVALUATE: u8 = 1;

/// Draws the players of one run, sorted by arrival.
pub fn sample_players(config: &SimConfig, rng: &mut impl Rng) -> Vec<Player> {
    let mean = config.mean_valuation();
    let exp = Exp::new(1.0 / mean).expect("positive rate");
    let mut players: Vec<Player> = (0..config.n_players)
        .map(|id| {
            let valuation = match config.valuation_distribution {
                ValuationDistribution::Uniform => rng.random_range(0.0..=2.0 * mean),
                ValuationDistribution::Exponential => exp.sample(rng),
            };
            let arrival = rng.random_range(0.0..=config.deadline);
            Player { id, valuation, arrival }
        })
        .collect();
    players.sort_by(|p, q| p.arrival.total_cmp(&q.arrival).then(p.id.cmp(&q.id)));
    players
}

/// `n` players whose valuations sum to `total_valuation`: uniform weights
/// rescaled, arrivals uniform on `[0, deadline]`, sorted by arrival.
pub fn players_with_total(n: usize, total_valuation: f64, deadline: f64, rng: &mut impl Rng) -> Vec<Player> {
    let raw: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..=deadline)))
        .collect();
    let sum: f64 = raw.iter().map(|(w, _)| w).sum();
    let mut players: Vec<Player> = raw
        .into_iter()
        .enumerate()
        .map(|(id, (w, arrival))| Player {
            id,
            valuation: if sum > 0.0 {
                w / sum * total_valuation
            } else {
                total_valuation / n as f64
            },
            arrival,
        })
        .collect();
    players.sort_by(|p, q| p.arrival.total_cmp(&q.arrival).then(p.id.cmp(&q.id)));
    players
}

/// Liquidity `b` at which the PPS bonus paid when contributions reach `H`
/// equals `budget`.
///
/// The bonus at `C = H` is `b ln(2 e^(H/b) - 1) - H`, increasing in `b` and
/// bounded by `H`. Budgets at or above `H` saturate at the upper end of the
/// search, `1e6 H`.
pub fn calibrate_liquidity(provision_point: f64, budget: f64) -> f64 {
    let h = provision_point;
    let bonus = |b: f64| outstanding_after(h, b).map_or(f64::NAN, |q| q - h);
    let (mut lo, mut hi) = (1e-9 * h, 1e6 * h);
    if budget >= bonus(hi) {
        return hi;
    }
    if budget <= bonus(lo) {
        return lo;
    }
    // Bisect on log b; the bonus spans many orders of magnitude of b.
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if bonus(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// A learner's move: give `fraction` of its cap after waiting `delay` of the
/// time left until the deadline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub fraction: f64,
    pub delay: f64,
}

const FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const DELAYS: [f64; 3] = [0.0, 0.5, 1.0];
const H_BUCKETS: usize = 5;
const Y_BUCKETS: usize = 4;

pub const NUM_ACTIONS: usize = FRACTIONS.len() * DELAYS.len();
pub const NUM_STATES: usize = H_BUCKETS * Y_BUCKETS;

/// Action `k` of the grid; fraction-major.
pub fn action(k: usize) -> Action {
    Action {
        fraction: FRACTIONS[k / DELAYS.len()],
        delay: DELAYS[k % DELAYS.len()],
    }
}

/// State bucket from the remaining share `h / H` and elapsed share `y / T`.
pub fn state_index(remaining_share: f64, elapsed_share: f64) -> usize {
    let bucket = |v: f64, n: usize| ((v.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1);
    bucket(remaining_share, H_BUCKETS) * Y_BUCKETS + bucket(elapsed_share, Y_BUCKETS)
}

/// Value table shared by all learners of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    /// `NUM_STATES * NUM_ACTIONS` values, state-major.
    pub q_table: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
}

impl LearnerState {
    pub fn new(config: &LearnerConfig) -> Self {
        LearnerState {
            q_table: vec![0.0; NUM_STATES * NUM_ACTIONS],
            epsilon: config.epsilon_start,
            alpha: config.alpha,
        }
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.q_table[state * NUM_ACTIONS + action]
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, state: usize) -> usize {
        let row = &self.q_table[state * NUM_ACTIONS..(state + 1) * NUM_ACTIONS];
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        best
    }

    fn choose(&self, state: usize, rng: &mut impl Rng) -> usize {
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            rng.random_range(0..NUM_ACTIONS)
        } else {
            self.greedy(state)
        }
    }

    /// `q <- (1 - alpha) q + alpha reward`.
    pub fn update(&mut self, state: usize, action: usize, reward: f64) {
        let q = &mut self.q_table[state * NUM_ACTIONS + action];
        *q = (1.0 - self.alpha) * *q + self.alpha * reward;
    }
}

/// Behaviour of every player in one run.
#[derive(Debug, Clone, Copy)]
pub enum GamePolicy<'a> {
    Equilibrium,
    FreeRiderMix { p: f64 },
    Learner(&'a LearnerState),
}

/// What a player sees when it arrives.
struct Observation {
    remaining: f64,
    placed: usize,
}

/// Equilibrium contribution on arrival. With no budget (total valuation at
/// most `H`) the cap formula degenerates to the valuation.
fn equilibrium_amount(spec: &ProjectSpec, player: &Player, obs: &Observation) -> Result<f64> {
    let cap = if spec.budget <= 0.0 {
        player.valuation
    } else {
        equilibrium_cap(
            &spec.scheme,
            player.valuation,
            obs.placed + 1,
            player.arrival,
            spec.provision_point,
            spec.budget,
        )?
    };
    Ok(cap.min(obs.remaining))
}

/// One learner decision, for the value update after the run.
#[derive(Debug, Clone, Copy)]
struct Step {
    player: usize,
    state: usize,
    action: usize,
}

struct Played {
    outcome: Outcome,
    steps: Vec<Step>,
}

fn play(spec: &ProjectSpec, players: &[Player], policy: GamePolicy<'_>, rng: &mut impl Rng) -> Result<Played> {
    let mut order = players.to_vec();
    order.sort_by(|p, q| p.arrival.total_cmp(&q.arrival).then(p.id.cmp(&q.id)));
    let h = spec.provision_point;
    let horizon = spec.deadline;

    let mut paid = 0.0;
    let mut bids: Vec<Bid> = Vec::with_capacity(order.len());
    // (time, amount, player id), kept sorted by time; equal times keep the
    // order they were planned in. Amounts are fixed when planned: a player
    // sees the remaining amount only on arrival.
    let mut pending: Vec<(f64, f64, usize)> = Vec::new();
    let mut steps = Vec::new();

    let execute_until = |t: f64, pending: &mut Vec<(f64, f64, usize)>, bids: &mut Vec<Bid>, paid: &mut f64| {
        let due = pending.iter().take_while(|(at, _, _)| *at <= t).count();
        for (at, amount, id) in pending.drain(..due) {
            *paid += amount;
            bids.push(Bid::new(id, amount, at));
        }
    };

    for (k, player) in order.iter().enumerate() {
        execute_until(player.arrival, &mut pending, &mut bids, &mut paid);
        let obs = Observation {
            remaining: (h - paid).max(0.0),
            placed: bids.len(),
        };
        let plan = match policy {
            GamePolicy::Equilibrium => Some((equilibrium_amount(spec, player, &obs)?, player.arrival)),
            GamePolicy::FreeRiderMix { p } => {
                if rng.random::<f64>() < p {
                    None
                } else {
                    Some((equilibrium_amount(spec, player, &obs)?, player.arrival))
                }
            }
            GamePolicy::Learner(state) => {
                let s = state_index(obs.remaining / h, player.arrival / horizon);
                let a = state.choose(s, rng);
                steps.push(Step {
                    player: k,
                    state: s,
                    action: a,
                });
                let act = action(a);
                if act.fraction == 0.0 {
                    None
                } else {
                    let at = player.arrival + act.delay * (horizon - player.arrival);
                    Some(((act.fraction * player.valuation).min(obs.remaining), at))
                }
            }
        };
        if let Some((amount, at)) = plan {
            let pos = pending.partition_point(|(t, _, _)| *t <= at);
            pending.insert(pos, (at, amount, player.id));
        }
        execute_until(player.arrival, &mut pending, &mut bids, &mut paid);
    }
    execute_until(f64::INFINITY, &mut pending, &mut bids, &mut paid);

    let profile = StrategyProfile::new(order, bids)?;
    let outcome = payoffs(spec, &profile)?;
    Ok(Played { outcome, steps })
}

/// Plays one run and evaluates it at the deadline. The outcome lists players
/// in arrival order.
pub fn run_game(spec: &ProjectSpec, players: &[Player], policy: GamePolicy<'_>, rng: &mut impl Rng) -> Result<Outcome> {
    Ok(play(spec, players, policy, rng)?.outcome)
}

/// Project for one run: budget `fraction (total valuation - H)`, and the
/// PPS liquidity calibrated to it when requested.
fn run_project(config: &SimConfig, scheme: SchemeParams, fraction: f64, players: &[Player]) -> Result<ProjectSpec> {
    let theta: f64 = players.iter().map(|p| p.valuation).sum();
    let budget = fraction * (theta - config.provision_point).max(0.0);
    let scheme = match scheme {
        SchemeParams::Pps { .. } if config.calibrate_pps && budget > 0.0 => SchemeParams::Pps {
            liquidity: calibrate_liquidity(config.provision_point, budget),
        },
        other => other,
    };
    config.project(scheme, budget)
}

/// Trains a shared value table for one sweep point.
pub fn train(config: &SimConfig, scheme: SchemeParams, fraction: f64, point: usize) -> Result<LearnerState> {
    let mut state = LearnerState::new(&config.learner);
    for episode in 0..config.learner.episodes {
        let mut rng = stream_rng(config.seed, point, TRAIN, episode);
        let players = sample_players(config, &mut rng);
        let spec = run_project(config, scheme, fraction, &players)?;
        state.epsilon = config.learner.epsilon_at(episode);
        let played = play(&spec, &players, GamePolicy::Learner(&state), &mut rng)?;
        for step in played.steps {
            state.update(step.state, step.action, played.outcome.payoffs[step.player]);
        }
    }
    state.epsilon = 0.0;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub mechanism: Mechanism,
    pub budget_fraction: f64,
    /// Provisioned runs over runs.
    pub accuracy: f64,
    pub provisioned: usize,
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyResult {
    pub rows: Vec<AccuracyRow>,
}

pub const CSV_HEADER: &str = "mechanism,budget_fraction,accuracy,runs,seed";

impl AccuracyResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.mechanism,
                csv_number(r.budget_fraction),
                csv_number(r.accuracy),
                r.runs,
                r.seed
            ));
        }
        out
    }

    /// Rows of one mechanism, in sweep order.
    pub fn series(&self, mechanism: Mechanism) -> Vec<&AccuracyRow> {
        self.rows.iter().filter(|r| r.mechanism == mechanism).collect()
    }
}

fn evaluate_point(config: &SimConfig, scheme: SchemeParams, fraction: f64, point: usize) -> Result<AccuracyRow> {
    let learner = match config.policy {
        Policy::Learner => Some(train(config, scheme, fraction, point)?),
        _ => None,
    };
    let mut provisioned = 0;
    for run in 0..config.runs_per_point {
        let mut rng = stream_rng(config.seed, point, EVALUATE, run);
        let players = sample_players(config, &mut rng);
        let spec = run_project(config, scheme, fraction, &players)?;
        let policy = match (&learner, config.policy) {
            (Some(state), _) => GamePolicy::Learner(state),
            (None, Policy::FreeRiderMix { p }) => GamePolicy::FreeRiderMix { p },
            (None, _) => GamePolicy::Equilibrium,
        };
        if run_game(&spec, &players, policy, &mut rng)?.provisioned {
            provisioned += 1;
        }
    }
    Ok(AccuracyRow {
        mechanism: scheme.mechanism(),
        budget_fraction: fraction,
        accuracy: provisioned as f64 / config.runs_per_point as f64,
        provisioned,
        runs: config.runs_per_point,
        seed: config.seed,
    })
}

/// Provision accuracy for every (scheme, budget fraction) of the sweep.
/// Points run in parallel; rows come out scheme-major in config order.
pub fn train_and_evaluate(config: &SimConfig) -> Result<AccuracyResult> {
    config.validate()?;
    let points: Vec<(SchemeParams, f64)> = config
        .schemes
        .iter()
        .flat_map(|s| config.budget_fractions.iter().map(move |f| (*s, *f)))
        .collect();
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(k, (scheme, fraction))| evaluate_point(config, *scheme, *fraction, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyResult { rows })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. A constant series
/// has no ordering to agree with and gives 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "series lengths differ");
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
