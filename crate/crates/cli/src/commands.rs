use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use refund_bonus::conditions::{
    check_contribution_monotonicity, check_time_monotonicity, detect_race_condition, ConditionReport, RaceReport,
};
use refund_bonus::equilibrium::{max_budget, solve, Binding};
use refund_bonus::format::csv_number;
use refund_bonus::gascost::{all_reports, ExpMode, Op, OpCostTable};
use refund_bonus::mechanisms::{pps_refund, Mechanism, Player, RefundPoint, SchemeParams, PROVISION_TOLERANCE};
use refund_bonus::simulator::{players_with_total, stream_rng, train_and_evaluate};

use crate::config::{env_seed, RunConfig};
use crate::plot::{render_svg, Series};
use crate::Failure;

/// (Condition 1 passes, Condition 2 passes, race detected) for a scheme.
fn expected_pattern(m: Mechanism) -> (bool, bool, bool) {
    match m {
        Mechanism::Ppm => (false, false, true),
        Mechanism::Ppr => (true, false, true),
        _ => (true, true, false),
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn check(mechanism: Mechanism, path: &Path) -> Result<(), Failure> {
    let config = RunConfig::load(path)?;
    let scheme = config.schemes.params(mechanism);
    let spec = config.project(scheme)?;
    let sample = config.sample(&spec)?;

    let c1 = check_contribution_monotonicity(&scheme, &spec, &sample)?;
    let c2 = check_time_monotonicity(&scheme, &spec, &sample)?;
    let race = detect_race_condition(&scheme, &spec, &sample)?;
    print!("{}", check_table(&c1, &c2, &race));
    println!();
    print!("{}", check_csv(&c1, &c2, &race));

    let got = (c1.passed, c2.passed, race.race_detected);
    let want = expected_pattern(mechanism);
    if got != want {
        return Err(Failure::Invalid(format!(
            "{mechanism}: unexpected result (condition 1 {}, condition 2 {}, race {}); expected ({}, {}, {})",
            verdict(got.0),
            verdict(got.1),
            yes_no(got.2),
            verdict(want.0),
            verdict(want.1),
            yes_no(want.2),
        )));
    }
    Ok(())
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "YES"
    } else {
        "NO"
    }
}

fn check_table(c1: &ConditionReport, c2: &ConditionReport, race: &RaceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scheme {}", c1.mechanism);
    let _ = writeln!(
        out,
        "{:<12} {:<6} {:>8} {:>10} {:>14} {:>14}",
        "check", "result", "points", "violations", "slope_min", "slope_max"
    );
    for (name, r) in [("condition 1", c1), ("condition 2", c2)] {
        let _ = writeln!(
            out,
            "{:<12} {:<6} {:>8} {:>10} {:>14.6e} {:>14.6e}",
            name,
            verdict(r.passed),
            r.points_checked,
            r.violations.len(),
            r.slope_range.0,
            r.slope_range.1
        );
    }
    let _ = writeln!(
        out,
        "{:<12} {:<6} {:>8} {:>10}",
        "race",
        yes_no(race.race_detected),
        race.populations_checked,
        race.witness_set_size
    );
    out
}

/// Columns: mechanism,check,result,points,violations,slope_min,slope_max.
/// For the race row `points` counts populations and `violations` is the
/// largest witness set.
fn check_csv(c1: &ConditionReport, c2: &ConditionReport, race: &RaceReport) -> String {
    let mut out = String::from("mechanism,check,result,points,violations,slope_min,slope_max\n");
    for (name, r) in [("condition_1", c1), ("condition_2", c2)] {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.mechanism,
            name,
            verdict(r.passed),
            r.points_checked,
            r.violations.len(),
            csv_number(r.slope_range.0),
            csv_number(r.slope_range.1)
        );
    }
    let _ = writeln!(
        out,
        "{},race,{},{},{},,",
        race.mechanism,
        yes_no(race.race_detected),
        race.populations_checked,
        race.witness_set_size
    );
    out
}

pub fn equilibrium(path: &Path) -> Result<(), Failure> {
    let config = RunConfig::load(path)?;
    let section = config
        .equilibrium
        .clone()
        .ok_or_else(|| Failure::Invalid("config has no [equilibrium] section".into()))?;
    let scheme = config.schemes.params(section.scheme);
    let spec = config.project(scheme)?;
    let players = equilibrium_players(&section, spec.deadline)?;
    print!(
        "{}",
        equilibrium_csv(&scheme, &players, spec.provision_point, spec.budget)?
    );
    Ok(())
}

fn equilibrium_players(section: &crate::config::EquilibriumSection, deadline: f64) -> Result<Vec<Player>, Failure> {
    if let Some(players) = &section.players {
        return Ok(players.clone());
    }
    let random = section
        .random
        .ok_or_else(|| Failure::Invalid("[equilibrium] needs `players` or `random`".into()))?;
    if random.n_players == 0 || !(random.total_valuation > 0.0) {
        return Err(Failure::Invalid(
            "[equilibrium.random] needs n_players > 0 and total_valuation > 0".into(),
        ));
    }
    let seed = match random.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut rng = stream_rng(seed, 0, 0, 0);
    Ok(players_with_total(
        random.n_players,
        random.total_valuation,
        deadline,
        &mut rng,
    ))
}

/// Columns: player_id,arrival,valuation,formula_cap,contribution,binding,
/// then one `total` row with the realised `C` and whether it reaches `H`.
pub(crate) fn equilibrium_csv(
    scheme: &SchemeParams,
    players: &[Player],
    provision_point: f64,
    budget: f64,
) -> Result<String, Failure> {
    let theta_sum: f64 = players.iter().map(|p| p.valuation).sum();
    if matches!(scheme, SchemeParams::Ppr) {
        if theta_sum <= provision_point {
            return Err(Failure::Invalid(format!(
                "no valid budget: total valuation {theta_sum} does not exceed provision point {provision_point}"
            )));
        }
    } else {
        let bound = max_budget(scheme, provision_point, theta_sum)?;
        if !bound.admits(budget) {
            eprintln!(
                "warning: budget {budget} exceeds the equilibrium bound {}; provision is not guaranteed",
                bound.max_budget
            );
        }
    }

    let solution = solve(scheme, players, provision_point, budget)?;
    let mut out = String::from("player_id,arrival,valuation,formula_cap,contribution,binding\n");
    for cap in &solution.caps {
        let player = players
            .iter()
            .find(|p| p.id == cap.player_id)
            .expect("cap for a known player");
        let binding = match cap.binding {
            Binding::Interior => "interior",
            Binding::CappedByRemaining => "capped_by_remaining",
            Binding::ZeroRemaining => "zero_remaining",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            cap.player_id,
            csv_number(player.arrival),
            csv_number(player.valuation),
            csv_number(cap.formula_cap),
            csv_number(cap.cap),
            binding
        );
    }
    let total = solution.profile.total();
    let provisioned = total >= provision_point * (1.0 - PROVISION_TOLERANCE);
    let _ = writeln!(
        out,
        "total,,{},,{},{}",
        csv_number(theta_sum),
        csv_number(total),
        if provisioned { "provisioned" } else { "not_provisioned" }
    );
    Ok(out)
}

pub fn simulate(path: &Path, out: &Path) -> Result<(), Failure> {
    let config = RunConfig::load(path)?;
    let base = config.simulation()?;
    let multipliers = match &config.sweep {
        Some(s) if s.multipliers.is_empty() => {
            return Err(Failure::Invalid("[sweep] multipliers is empty".into()));
        }
        Some(s) => s.multipliers.clone(),
        None => vec![base.expected_valuation_multiplier],
    };
    for &m in &multipliers {
        let mut sim = base.clone();
        sim.expected_valuation_multiplier = m;
        let result = train_and_evaluate(&sim)?;
        let target = if multipliers.len() > 1 {
            suffixed(out, &format!("_m{}", csv_number(m)))
        } else {
            out.to_path_buf()
        };
        write_file(&target, &result.to_csv())?;
        println!(
            "wrote {} ({} rows, m = {})",
            target.display(),
            result.rows.len(),
            csv_number(m)
        );
    }
    Ok(())
}

/// `dir/name.ext` with `suffix` inserted before the extension.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn gas(mode: ExpMode, exp_operand: u64, log_bytes: u64) -> Result<(), Failure> {
    let table = OpCostTable::default().with_exp_mode(mode);
    let mut rows = Vec::new();
    for report in all_reports() {
        let priced = report.total_with(&table, exp_operand, log_bytes)?;
        let status = if report.inconsistent() {
            "inconsistent"
        } else if report.paper_total_at_least {
            "at_least"
        } else {
            "ok"
        };
        rows.push((report, priced, status));
    }

    print!("{:<6}", "scheme");
    for op in Op::ALL {
        print!(" {:>4}", op.name());
    }
    println!(" {:>9} {:>11} {:>7}  status", "floor", "published", "priced");
    for (r, priced, status) in &rows {
        print!("{:<6}", r.mechanism.name());
        for op in Op::ALL {
            print!(" {:>4}", r.count(op));
        }
        let published = if r.paper_total_at_least {
            format!(">={}", r.paper_total)
        } else {
            r.paper_total.to_string()
        };
        println!(" {:>9} {:>11} {:>7}  {status}", r.total_min, published, priced);
    }
    println!();

    let mut header = String::from("mechanism");
    for op in Op::ALL {
        header.push(',');
        header.push_str(op.name());
    }
    println!("{header},total_min,paper_total,total_priced,status");
    for (r, priced, status) in &rows {
        let counts: Vec<String> = Op::ALL.iter().map(|&op| r.count(op).to_string()).collect();
        println!(
            "{},{},{},{},{},{}",
            r.mechanism,
            counts.join(","),
            r.total_min,
            r.paper_total,
            priced,
            status
        );
    }
    Ok(())
}

pub fn plot_refund_evolution(path: &Path, out: &Path) -> Result<(), Failure> {
    let config = RunConfig::load(path)?;
    let plot = config.plot.unwrap_or_default();
    let budget = config
        .project
        .ok_or_else(|| Failure::Invalid("config has no [project] section".into()))?
        .budget;
    let series = refund_series(&plot, budget)?;
    let svg = render_svg(
        "Refund share by contribution position",
        "position k (PPRE: time t = k - 1)",
        "refund share",
        &series,
    );
    write_file(out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Refund of one fixed contribution placed at positions `1..=positions`,
/// every scheme sharing `x`, `C`, `B` and the convergence constant.
pub(crate) fn refund_series(plot: &crate::config::PlotSection, budget: f64) -> Result<Vec<Series>, Failure> {
    if plot.positions == 0 || !(plot.total > 0.0) || !(plot.contribution >= 0.0) || !(budget >= 0.0) {
        return Err(Failure::Invalid(
            "[plot] needs positions > 0, total > 0, contribution >= 0 and a non-negative budget".into(),
        ));
    }
    let k = plot.k;
    let schemes = [
        SchemeParams::Ppr,
        SchemeParams::Pprg {
            a: k * (plot.gamma - 1.0) / plot.gamma,
            gamma: plot.gamma,
        },
        SchemeParams::Ppre { k2: k },
        SchemeParams::Pprp { k3: k },
    ];
    let mut series = Vec::new();
    for scheme in schemes {
        scheme.validate()?;
        let mut values = Vec::with_capacity(plot.positions);
        for pos in 1..=plot.positions {
            let point = RefundPoint {
                amount: plot.contribution,
                seq: pos,
                at: (pos - 1) as f64,
                total: plot.total,
                outstanding: 0.0,
            };
            values.push(scheme.refund(&point, budget)?);
        }
        series.push(Series {
            name: scheme.mechanism().name().to_string(),
            values,
        });
    }
    let mut pps = Vec::with_capacity(plot.positions);
    for pos in 1..=plot.positions {
        let q = (pos - 1) as f64 * plot.securities_per_player;
        pps.push(pps_refund(plot.contribution, q, plot.liquidity)?);
    }
    series.push(Series {
        name: Mechanism::Pps.name().to_string(),
        values: pps,
    });
    Ok(series)
}
