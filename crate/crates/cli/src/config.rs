//! Run configuration document (TOML).
//!
//! Every section is optional; a command fails with a validation error when
//! a section it needs is missing. Unknown keys are rejected everywhere.

use std::path::Path;

use serde::Deserialize;

use refund_bonus::conditions::SampleSpec;
use refund_bonus::mechanisms::{Mechanism, Player, ProjectSpec, SchemeParams};
use refund_bonus::simulator::SimConfig;

use crate::Failure;

/// Environment variable supplying the seed when a config leaves it out.
pub const SEED_ENV: &str = "REFUND_BONUS_SEED";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub project: Option<ProjectSection>,
    #[serde(default)]
    pub schemes: SchemeSection,
    pub check: Option<CheckSection>,
    pub equilibrium: Option<EquilibriumSection>,
    pub simulation: Option<SimConfig>,
    pub sweep: Option<SweepSection>,
    pub plot: Option<PlotSection>,
    /// Set after parsing: whether `[simulation]` named a seed.
    #[serde(skip)]
    pub simulation_has_seed: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSection {
    pub provision_point: f64,
    pub deadline: f64,
    pub budget: f64,
}

/// Parameters per mechanism; omitted ones take the defaults below.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub pprg: PprgParams,
    pub ppre: PpreParams,
    pub pprp: PprpParams,
    pub pps: PpsParams,
}

impl Default for SchemeSection {
    fn default() -> Self {
        SchemeSection {
            pprg: PprgParams { a: 1.0, gamma: 2.0 },
            ppre: PpreParams { k2: 2.0 },
            pprp: PprpParams { k3: 2.0 },
            pps: PpsParams { liquidity: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PprgParams {
    pub a: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpreParams {
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PprpParams {
    pub k3: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpsParams {
    pub liquidity: f64,
}

impl SchemeSection {
    pub fn params(&self, mechanism: Mechanism) -> SchemeParams {
        match mechanism {
            Mechanism::Ppm => SchemeParams::Ppm,
            Mechanism::Ppr => SchemeParams::Ppr,
            Mechanism::Pprg => SchemeParams::Pprg {
                a: self.pprg.a,
                gamma: self.pprg.gamma,
            },
            Mechanism::Ppre => SchemeParams::Ppre { k2: self.ppre.k2 },
            Mechanism::Pprp => SchemeParams::Pprp { k3: self.pprp.k3 },
            Mechanism::Pps => SchemeParams::Pps {
                liquidity: self.pps.liquidity,
            },
        }
    }
}

/// Sampling for `check`; omitted fields scale with the project.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    pub num_points: Option<usize>,
    pub x_range: Option<(f64, f64)>,
    pub t_range: Option<(f64, f64)>,
    pub seed: Option<u64>,
    pub fd_step: Option<f64>,
    pub population: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSection {
    pub scheme: Mechanism,
    /// Explicit players; takes precedence over `random`.
    pub players: Option<Vec<Player>>,
    pub random: Option<RandomPlayers>,
}

/// Players drawn uniformly: arrivals on `[0, T]`, valuations scaled to sum
/// to `total_valuation`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPlayers {
    pub n_players: usize,
    pub total_valuation: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Values of `m` in `E[total valuation] = m H`, one output file each.
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    /// The plotted player's contribution `x_i`, the same for every scheme.
    pub contribution: f64,
    /// Total contribution `C` the shares are computed against.
    pub total: f64,
    /// Positions (and epochs) on the horizontal axis.
    pub positions: usize,
    /// Shared convergence constant `K1 = K2 = K3`.
    pub k: f64,
    pub gamma: f64,
    pub liquidity: f64,
    /// Securities each earlier contributor holds in the PPS market.
    pub securities_per_player: f64,
}

impl Default for PlotSection {
    fn default() -> Self {
        PlotSection {
            contribution: 10.0,
            total: 100.0,
            positions: 15,
            k: 10.0,
            gamma: 1.5,
            liquidity: 10.0,
            securities_per_player: 10.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Failure::Invalid(format!("invalid config: {e}")))?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| Failure::Invalid(format!("invalid config: {e}")))?;
        config.simulation_has_seed = raw
            .get("simulation")
            .and_then(|s| s.as_table())
            .is_some_and(|s| s.contains_key("seed"));
        Ok(config)
    }

    pub fn project(&self, scheme: SchemeParams) -> Result<ProjectSpec, Failure> {
        let p = self
            .project
            .ok_or_else(|| Failure::Invalid("config has no [project] section".into()))?;
        Ok(ProjectSpec::new(p.provision_point, p.deadline, p.budget, scheme)?)
    }

    pub fn sample(&self, spec: &ProjectSpec) -> Result<SampleSpec, Failure> {
        let c = self.check.unwrap_or_default();
        let seed = match c.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let defaults = SampleSpec::for_project(spec, seed);
        let sample = SampleSpec {
            num_points: c.num_points.unwrap_or(defaults.num_points),
            x_range: c.x_range.unwrap_or(defaults.x_range),
            t_range: c.t_range.unwrap_or(defaults.t_range),
            seed,
            fd_step: c.fd_step.unwrap_or(defaults.fd_step),
            population: c.population.unwrap_or(defaults.population),
        };
        sample.validate(spec)?;
        Ok(sample)
    }

    pub fn simulation(&self) -> Result<SimConfig, Failure> {
        let mut sim = self
            .simulation
            .clone()
            .ok_or_else(|| Failure::Invalid("config has no [simulation] section".into()))?;
        if !self.simulation_has_seed {
            if let Some(seed) = env_seed()? {
                sim.seed = seed;
            }
        }
        Ok(sim)
    }
}

/// Seed from [`SEED_ENV`], if set.
pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Invalid(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
