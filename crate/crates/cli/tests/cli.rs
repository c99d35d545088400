use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_refund-bonus"));
    c.env_remove("REFUND_BONUS_SEED");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config(name: &str, body: &str) -> PathBuf {
    let p = scratch(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn check(scheme: &str) -> Output {
    let cfg = configs().join("check.toml");
    run(&["check", "--scheme", scheme, "--config", cfg.to_str().unwrap()])
}

fn csv_rows(out: &str, header_prefix: &str) -> Vec<Vec<String>> {
    let mut lines = out.lines().skip_while(|l| !l.starts_with(header_prefix));
    lines.next().expect("csv header");
    lines
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn check_pprg_passes_both_without_race() {
    let o = check("pprg");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o), "mechanism,check");
    assert_eq!(rows[0][2], "PASS");
    assert_eq!(rows[1][2], "PASS");
    assert_eq!(rows[2][1], "race");
    assert_eq!(rows[2][2], "NO");
}

#[test]
fn check_ppr_is_time_invariant_and_races() {
    let o = check("ppr");
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&stdout(&o), "mechanism,check");
    assert_eq!(rows[0][2], "PASS");
    assert_eq!(rows[1][2], "FAIL");
    assert_eq!((rows[1][5].as_str(), rows[1][6].as_str()), ("0", "0"));
    assert_eq!(rows[2][2], "YES");
    assert_eq!(rows[2][4], "5");
}

#[test]
fn check_every_scheme_matches_its_pattern() {
    for s in ["ppm", "pps", "ppre", "pprp"] {
        let o = check(s);
        assert_eq!(o.status.code(), Some(0), "{s}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn check_unexpected_result_exits_one() {
    // liquidity 1 against H = 100: refunds of large contributions fall
    // below the slope tolerance, so Condition 1 reports violations
    let cfg = write_config(
        "pps_small_liquidity.toml",
        "[project]\nprovision_point = 100.0\ndeadline = 10.0\nbudget = 20.0\n\n[schemes]\npps = { liquidity = 1.0 }\n\n[check]\nnum_points = 200\n",
    );
    let o = run(&["check", "--scheme", "pps", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unexpected result"));
}

#[test]
fn missing_config_exits_two() {
    let o = run(&["check", "--scheme", "ppr", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read config"));
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_keys_are_rejected() {
    let cfg = write_config(
        "unknown_key.toml",
        "[project]\nprovision_point = 100.0\ndeadline = 10.0\nbudget = 20.0\nbugdet = 1.0\n",
    );
    let o = run(&["check", "--scheme", "ppr", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn equilibrium_total_row_reaches_provision_point() {
    let cfg = configs().join("equilibrium.toml");
    let o = run(&["equilibrium", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("player_id,arrival,valuation,formula_cap,contribution,binding\n"));
    let last: Vec<&str> = out.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "total");
    let c: f64 = last[4].parse().unwrap();
    assert!((c - 100.0).abs() <= 1e-9 * 100.0);
    assert_eq!(last[5], "provisioned");
    assert_eq!(out.lines().count(), 1 + 25 + 1);
}

#[test]
fn equilibrium_without_valid_budget_exits_one() {
    let cfg = write_config(
        "poor.toml",
        "[project]\nprovision_point = 100.0\ndeadline = 10.0\nbudget = 5.0\n\n[equilibrium]\nscheme = \"pprg\"\nplayers = [{ id = 0, valuation = 40.0, arrival = 1.0 }, { id = 1, valuation = 60.0, arrival = 2.0 }]\n",
    );
    let o = run(&["equilibrium", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no valid budget"));
}

#[test]
fn equilibrium_above_bound_warns_and_proceeds() {
    // theta - H = 80, so B = 200 is above the bound
    let cfg = write_config(
        "rich_budget.toml",
        "[project]\nprovision_point = 100.0\ndeadline = 10.0\nbudget = 200.0\n\n[equilibrium]\nscheme = \"pprp\"\nplayers = [{ id = 0, valuation = 80.0, arrival = 1.0 }, { id = 1, valuation = 100.0, arrival = 2.0 }]\n",
    );
    let o = run(&["equilibrium", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(stdout(&o).lines().last().unwrap().starts_with("total,"));
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let cfg = write_config(
        "sim_small.toml",
        "[simulation]\nbudget_fractions = [0.2, 0.6, 1.0]\nruns_per_point = 20\nseed = 11\n\n[simulation.learner]\nepisodes = 300\nalpha = 0.1\nepsilon_start = 0.3\nepsilon_end = 0.01\n",
    );
    let (a, b) = (scratch("sim_a.csv"), scratch("sim_b.csv"));
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("mechanism,budget_fraction,accuracy,runs,seed\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 3);
}

#[test]
fn simulate_seed_from_environment() {
    let cfg = write_config(
        "sim_env.toml",
        "[simulation]\npolicy = { kind = \"equilibrium\" }\nbudget_fractions = [0.5]\nruns_per_point = 5\nschemes = [{ kind = \"pprg\", a = 1.0, gamma = 2.0 }]\n",
    );
    let out = scratch("sim_env.csv");
    let o = bin()
        .env("REFUND_BONUS_SEED", "42")
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        "mechanism,budget_fraction,accuracy,runs,seed\nPPRG,0.5,1,5,42\n"
    );
}

#[test]
fn simulate_equilibrium_policy_always_provisions() {
    let cfg = configs().join("simulate_equilibrium.toml");
    let out = scratch("eq.csv");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(out).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("1"), "{line}");
    }
}

#[test]
fn sweep_writes_one_file_per_multiplier() {
    let cfg = write_config(
        "sweep.toml",
        "[simulation]\npolicy = { kind = \"equilibrium\" }\nbudget_fractions = [0.5, 1.0]\nruns_per_point = 5\nschemes = [{ kind = \"pprp\", k3 = 2.0 }]\n\n[sweep]\nmultipliers = [5.0, 10.0, 20.0]\n",
    );
    let out = scratch("sweep/acc.csv");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for m in ["5", "10", "20"] {
        let p = scratch(&format!("sweep/acc_m{m}.csv"));
        assert!(p.exists(), "{}", p.display());
    }
}

#[test]
fn gas_rows() {
    let o = run(&["gas"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&stdout(&o), "mechanism,ADD");
    let row = |m: &str| rows.iter().find(|r| r[0] == m).unwrap().clone();
    assert_eq!(row("PPRG")[1..].join(","), "2,0,2,1,0,0,21,21,21,ok");
    assert_eq!(row("PPRE")[1..].join(","), "2,0,2,1,1,0,31,31,31,at_least");
    assert_eq!(row("PPRP")[1..].join(","), "2,0,3,2,0,0,31,31,31,ok");
    let pps = row("PPS");
    assert_eq!(pps[7], "782");
    assert_eq!(pps[8], "407");
    assert_eq!(pps[10], "inconsistent");
}

#[test]
fn gas_priced_total_follows_exp_mode() {
    let o = run(&["gas", "--exp-mode", "log2", "--exp-operand", "256"]);
    let rows = csv_rows(&stdout(&o), "mechanism,ADD");
    let ppre = rows.iter().find(|r| r[0] == "PPRE").unwrap();
    // one EXP at 10 + 10 * log2(256)
    assert_eq!(ppre[9], (31 - 10 + 90).to_string());
    let o = run(&["gas", "--exp-operand", "256"]);
    let rows = csv_rows(&stdout(&o), "mechanism,ADD");
    let ppre = rows.iter().find(|r| r[0] == "PPRE").unwrap();
    assert_eq!(ppre[9], (31 - 10 + 20).to_string());
}

fn polyline(doc: &roxmltree::Document, scheme: &str) -> Vec<(f64, f64)> {
    let node = doc
        .descendants()
        .find(|n| n.has_tag_name("polyline") && n.attribute("data-scheme") == Some(scheme))
        .unwrap_or_else(|| panic!("no polyline for {scheme}"));
    node.attribute("points")
        .unwrap()
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn refund_evolution_svg() {
    let cfg = configs().join("plot.toml");
    let out = scratch("refund.svg");
    let o = run(&[
        "plot",
        "refund-evolution",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("well-formed svg");
    assert_eq!(doc.root_element().tag_name().name(), "svg");

    // SVG y grows downwards, so a falling refund is a rising y
    let largest_step = |pts: &[(f64, f64)]| pts.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::MIN, f64::max);
    let pprg = polyline(&doc, "PPRG");
    let ppre = polyline(&doc, "PPRE");
    let pprp = polyline(&doc, "PPRP");
    for pts in [&pprg, &ppre, &pprp] {
        assert_eq!(pts.len(), 15);
        assert!(pts.windows(2).all(|w| w[1].1 >= w[0].1));
    }
    assert!(largest_step(&pprg) < largest_step(&ppre));
    assert!(largest_step(&pprg) < largest_step(&pprp));
    let ppr = polyline(&doc, "PPR");
    assert!(ppr.iter().all(|p| (p.1 - ppr[0].1).abs() < 1e-9));
}
