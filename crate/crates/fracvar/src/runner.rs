//! Task dispatch: builds library objects from a validated configuration,
//! runs the requested task, writes artifacts under the output directory,
//! and reports per-check outcomes plus an overall pass flag.
//!
//! Orchestration is single-threaded; data parallelism stays inside the
//! assembly and operator kernels. Artifacts contain no timestamps or
//! absolute paths, so identical configuration and seed reproduce them byte
//! for byte.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{RunConfig, Task};
use crate::discretization::{CoefficientField, P1Space, GAUSS3};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{build_mesh, interpolate, Grading, RayGrid};
use crate::report;
use crate::variational::{
    assemble_form, assemble_load, certify_lax_milgram, solve_assembled, ProblemSpec,
};
use crate::verification::{
    adjoint_test, embedding_scan, greens_test, manufactured_convergence, random_h10_family,
    sbp_random_suite, ConvergenceTable, IdentityResidual, ScanReport, SmoothFunction,
};

/// One named check with its outcome and a short human-readable detail.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    fn from_residual(r: &IdentityResidual) -> Self {
        CheckLine {
            name: r.name.clone(),
            pass: r.pass,
            detail: format!("residual {:.3e}, tolerance {:.3e}", r.residual, r.tolerance),
        }
    }
}

/// Outcome of a dispatched run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Conjunction of every check flag.
    pub pass: bool,
    pub checks: Vec<CheckLine>,
    /// File names written under the output directory.
    pub artifacts: Vec<PathBuf>,
}

/// Dispatches the configured task and writes its artifacts into `out_dir`
/// (which must exist).
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate_task_requirements()?;
    match config.task {
        Task::Solve => run_solve(config, out_dir),
        Task::Verify => run_verify(config, out_dir),
        Task::Convergence => run_convergence(config, out_dir),
        Task::Scan => run_scan(config, out_dir),
    }
}

fn differentiated(name: &str, expr: &Expr) -> Result<Expr> {
    expr.differentiate()
        .map(|d| d.simplified())
        .map_err(|e| Error::Config(format!("field \"{name}\": {e}")))
}

fn uniform_space(config: &RunConfig, coeffs: &CoefficientField) -> Result<P1Space> {
    let grid = Arc::new(build_mesh(config.d, config.n_cells, Grading::Uniform)?);
    coeffs.validate_on(&grid)?;
    P1Space::new(grid)
}

fn run_solve(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let coeffs = config.coefficient_field()?;
    let space = uniform_space(config, &coeffs)?;
    let form = assemble_form(&space, &coeffs, config.alpha, config.n)?;
    let rhs = config.rhs();
    let b = assemble_load(&space, &*rhs)?;
    let (z, residual) = solve_assembled(&form, &b)?;
    let certificate = certify_lax_milgram(&form, config.lambda_used)?;
    let solution = space.from_interior(z.as_slice())?;

    let grid = space.grid();
    let rows: Vec<Vec<String>> = grid
        .nodes()
        .iter()
        .zip(solution.values())
        .map(|(&x, &v)| vec![report::number(x), report::number(v)])
        .collect();
    report::write_csv(&out_dir.join("solution.csv"), &["node", "value"], &rows)?;
    report::write_json(&out_dir.join("certificate.json"), &certificate)?;

    let checks = vec![
        CheckLine {
            name: "galerkin_residual".into(),
            pass: true,
            detail: format!("residual {residual:.3e}"),
        },
        CheckLine {
            name: "coercivity".into(),
            pass: certificate.k2_estimate > 0.0,
            detail: format!(
                "k2_estimate {:.6e}, k2_predicted {:.6e}",
                certificate.k2_estimate, certificate.k2_predicted
            ),
        },
        CheckLine {
            name: "accretivity".into(),
            pass: certificate.accretivity_margin >= -1e-10,
            detail: format!("margin {:.3e}", certificate.accretivity_margin),
        },
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(RunOutcome {
        pass,
        checks,
        artifacts: vec!["solution.csv".into(), "certificate.json".into()],
    })
}

fn run_verify(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let coeffs = config.coefficient_field()?;
    let space = uniform_space(config, &coeffs)?;
    let grid = space.grid().clone();
    let d = config.d;
    let alpha = config.alpha.value();

    let sbp = sbp_random_suite(&grid, 100, config.seed)?;

    let greens = {
        let a_prime = differentiated("a", &config.a)?;
        let pi_d = std::f64::consts::PI / d;
        let u = SmoothFunction::new(
            move |x| (pi_d * x).sin(),
            move |x| pi_d * (pi_d * x).cos(),
            move |x| -pi_d * pi_d * (pi_d * x).sin(),
        );
        let v = interpolate(move |x| x * x * (d - x) / (d * d * d), &grid)?;
        let mut a_max: f64 = 0.0;
        let mut a1_max: f64 = 0.0;
        for e in 0..grid.cell_count() {
            let xa = grid.nodes()[e];
            let h = grid.cell_width(e);
            for (t, _) in GAUSS3 {
                let x = xa + t * h;
                a_max = a_max.max(coeffs.a_at(x).abs());
                a1_max = a1_max.max(a_prime.eval_raw(x).abs());
            }
        }
        let spacing = grid.spacing().expect("uniform grid by construction");
        let tol = 100.0 * (spacing / d).powi(2) * (a_max + a1_max * d) * pi_d.powi(3) * d * 0.15;
        greens_test(&u, &v, &coeffs, &|x| a_prime.eval_raw(x), tol)
    };

    // epsilon small enough that the eps^(1-alpha) bias is visible to the
    // extrapolated pairing without destabilizing the truncated rows
    let adjoint = adjoint_test(
        &space,
        &coeffs,
        config.alpha,
        d * (0.5f64).powi(16),
        10,
        config.seed,
        1e-2,
        true,
    )?;

    let form = assemble_form(&space, &coeffs, config.alpha, config.n)?;
    let cert = certify_lax_milgram(&form, config.lambda_used)?;
    let accretivity =
        IdentityResidual::new("accretivity", (-cert.accretivity_margin).max(0.0), 1e-10);

    let entries = [
        ("sbp", &sbp),
        ("greens", &greens),
        ("adjoint", &adjoint),
        ("accretivity", &accretivity),
    ];
    let pass = entries.iter().all(|(_, r)| r.pass);
    let summary = serde_json::json!({
        "task": "verify",
        "d": d,
        "alpha": alpha,
        "n": config.n,
        "N": config.n_cells,
        "a0": config.a0,
        "p0": config.p0,
        "seed": config.seed,
        "sbp": sbp,
        "greens": greens,
        "adjoint": adjoint,
        "accretivity": accretivity,
        "pass": pass,
    });
    report::write_json(&out_dir.join("verify.json"), &summary)?;

    Ok(RunOutcome {
        pass,
        checks: entries
            .iter()
            .map(|(_, r)| CheckLine::from_residual(r))
            .collect(),
        artifacts: vec!["verify.json".into()],
    })
}

/// Observed-rate floor for the manufactured convergence check.
const RATE_FLOOR: f64 = 1.8;

fn convergence_rows(table: &ConvergenceTable) -> Vec<Vec<String>> {
    let blank = String::new();
    (0..table.n_values.len())
        .map(|i| {
            let rate = |rates: &[f64]| {
                if i == 0 {
                    blank.clone()
                } else {
                    report::number(rates[i - 1])
                }
            };
            vec![
                table.n_values[i].to_string(),
                report::number(table.l2_errors[i]),
                rate(&table.l2_rates),
                table
                    .h1_errors
                    .as_ref()
                    .map_or(blank.clone(), |e| report::number(e[i])),
                table.h1_rates.as_ref().map_or(blank.clone(), |r| rate(r)),
            ]
        })
        .collect()
}

fn run_convergence(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let coeffs = config.coefficient_field()?;
    let spec = ProblemSpec::new(config.d, config.alpha, config.n, coeffs, config.rhs())?;
    let z_expr = config
        .z_star
        .clone()
        .expect("validated by task requirements");
    let z1 = differentiated("z_star", &z_expr)?;
    let z2 = differentiated("z_star", &z1)?;
    let a_prime = differentiated("a", &config.a)?;
    let (ze, z1e, z2e) = (z_expr.clone(), z1.clone(), z2.clone());
    let z_star = SmoothFunction::new(
        move |x| ze.eval_raw(x),
        move |x| z1e.eval_raw(x),
        move |x| z2e.eval_raw(x),
    );
    let table = manufactured_convergence(
        &spec,
        &|x| a_prime.eval_raw(x),
        &z_star,
        &config.n_list,
        1 << 12,
    )?;

    report::write_csv(
        &out_dir.join("convergence.csv"),
        &["N", "l2_error", "l2_rate", "h1_error", "h1_rate"],
        &convergence_rows(&table),
    )?;

    let last_rate = table.l2_rates.last().copied().unwrap_or(f64::NAN);
    let pass = last_rate >= RATE_FLOOR;
    let summary = serde_json::json!({
        "task": "convergence",
        "d": config.d,
        "alpha": config.alpha.value(),
        "n": config.n,
        "a0": config.a0,
        "p0": config.p0,
        "rate_floor": RATE_FLOOR,
        "observed_l2_rate": last_rate,
        "table": table,
        "pass": pass,
    });
    report::write_json(&out_dir.join("convergence.json"), &summary)?;

    Ok(RunOutcome {
        pass,
        checks: vec![CheckLine {
            name: "l2_rate".into(),
            pass,
            detail: format!("observed {last_rate:.3}, floor {RATE_FLOOR}"),
        }],
        artifacts: vec!["convergence.csv".into(), "convergence.json".into()],
    })
}

fn run_scan(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let grid: Arc<RayGrid> = Arc::new(build_mesh(config.d, config.n_cells, Grading::Uniform)?);
    let family = random_h10_family(&grid, config.family_size, config.seed);
    let mut scan: ScanReport = embedding_scan(
        &family,
        config.alpha,
        config.q,
        config.beta,
        &config.delta_grid,
    )?;
    scan.seed = Some(config.seed);

    let rows: Vec<Vec<String>> = scan
        .delta_grid
        .iter()
        .zip(&scan.per_delta_ratio)
        .map(|(&delta, &ratio)| vec![report::number(delta), report::number(ratio)])
        .collect();
    report::write_csv(&out_dir.join("scan.csv"), &["delta", "worst_ratio"], &rows)?;
    report::write_json(&out_dir.join("scan.json"), &scan)?;

    let pass = scan.fitted_k.is_finite() && scan.fitted_k >= 0.0 && scan.worst_ratio <= 1.0 + 1e-12;
    Ok(RunOutcome {
        pass,
        checks: vec![CheckLine {
            name: "embedding_fit".into(),
            pass,
            detail: format!(
                "fitted_K {:.6e}, worst ratio {:.6}",
                scan.fitted_k, scan.worst_ratio
            ),
        }],
        artifacts: vec!["scan.csv".into(), "scan.json".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn run_in_temp(text: &str) -> (RunOutcome, tempfile::TempDir) {
        let cfg = parse_config(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run(&cfg, dir.path()).unwrap();
        (outcome, dir)
    }

    #[test]
    fn solve_task_writes_solution_and_certificate() {
        let (outcome, dir) = run_in_temp(
            "{\"task\": \"solve\", \"alpha\": 0.5, \"a\": \"1\", \"p\": \"1\", \
             \"f\": \"1\", \"N\": 64}",
        );
        assert!(outcome.pass);
        let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
        assert!(csv.starts_with("node,value\n"));
        assert_eq!(csv.lines().count(), 66);
        let cert: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("certificate.json")).unwrap(),
        )
        .unwrap();
        assert!(cert["k2_estimate"].as_f64().unwrap() > 0.0);
        assert!(cert["k1_estimate"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn zero_rhs_solve_emits_zero_solution() {
        let (outcome, dir) =
            run_in_temp("{\"task\": \"solve\", \"alpha\": 0.5, \"f\": \"0\", \"N\": 32}");
        assert!(outcome.pass);
        let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn verify_task_passes_at_defaults() {
        let (outcome, dir) = run_in_temp(
            "{\"task\": \"verify\", \"alpha\": 0.5, \"a\": \"1\", \"p\": \"1\", \
             \"f\": \"0\", \"N\": 128}",
        );
        assert!(outcome.pass, "checks: {:?}", outcome.checks);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap())
                .unwrap();
        for key in ["sbp", "greens", "adjoint", "accretivity"] {
            assert_eq!(v[key]["pass"], true, "{key}: {}", v[key]);
        }
        assert_eq!(v["pass"], true);
    }

    #[test]
    fn scan_task_is_deterministic() {
        let text = "{\"task\": \"scan\", \"alpha\": 0.5, \"N\": 64, \"beta\": 0.001, \
                    \"q\": 2.5, \"delta_grid\": [0.25, 0.0625, 0.015625, 0.00390625], \
                    \"seed\": 3}";
        let (o1, d1) = run_in_temp(text);
        let (o2, d2) = run_in_temp(text);
        assert!(o1.pass && o2.pass);
        let c1 = std::fs::read(d1.path().join("scan.csv")).unwrap();
        let c2 = std::fs::read(d2.path().join("scan.csv")).unwrap();
        assert_eq!(c1, c2);
        let j: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d1.path().join("scan.json")).unwrap())
                .unwrap();
        assert_eq!(j["seed"], 3);
        assert!(j["fitted_k"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn convergence_task_reaches_the_rate_floor() {
        let (outcome, dir) = run_in_temp(
            "{\"task\": \"convergence\", \"alpha\": 0.5, \"a\": \"1\", \"p\": \"1\", \
             \"f\": \"0\", \"z_star\": \"x*(1-x)\", \"N_list\": [16, 32, 64]}",
        );
        assert!(outcome.pass, "checks: {:?}", outcome.checks);
        let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "N,l2_error,l2_rate,h1_error,h1_rate");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "16");
        assert_eq!(first[2], "");
    }
}
