//! Strict JSON run configuration: schema, defaults, and load-time
//! validation down to the library invariants.
//!
//! Coefficient fields arrive as expression strings and are parsed, sampled
//! on a fine probe grid, and bounded before any task runs: the ellipticity
//! floor a0 and potential floor p0 reported in the run header come from that
//! sampling, and p0 <= 0 is rejected here even though the library accepts a
//! vanishing potential. Unknown keys are schema errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretization::CoefficientField;
use crate::error::{Error, Result};
use crate::expr::{parse_expression, Expr};
use crate::frac_ops::FractionalOrder;

/// Probe cells for load-time sampling of the expression fields.
const PROBE_CELLS: usize = 2048;

/// Relative slack applied to sampled coefficient floors, so that the
/// per-run validators (which sample different quadrature points) do not
/// trip on values between probe points.
const FLOOR_SLACK: f64 = 1e-9;

/// What the run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Assemble, solve, and certify one boundary value problem.
    Solve,
    /// Run the operator identity checks on the configured data.
    Verify,
    /// Manufactured-solution convergence study over a mesh family.
    Convergence,
    /// Embedding-inequality scan over a random function family.
    Scan,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Solve => "solve",
            Task::Verify => "verify",
            Task::Convergence => "convergence",
            Task::Scan => "scan",
        }
    }
}

fn default_d() -> f64 {
    1.0
}

fn default_n() -> u32 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: Task,
    #[serde(default = "default_d")]
    d: f64,
    alpha: f64,
    #[serde(default = "default_n")]
    n: u32,
    #[serde(rename = "N")]
    n_cells: Option<usize>,
    #[serde(rename = "N_list")]
    n_list: Option<Vec<usize>>,
    a: Option<String>,
    p: Option<String>,
    f: Option<String>,
    z_star: Option<String>,
    beta: Option<f64>,
    q: Option<f64>,
    delta_grid: Option<Vec<f64>>,
    family_size: Option<usize>,
    lambda_used: Option<f64>,
    seed: Option<u64>,
    out: Option<String>,
}

/// Validated run description, ready for dispatch.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub d: f64,
    pub alpha: FractionalOrder,
    pub n: u32,
    pub n_cells: usize,
    pub n_list: Vec<usize>,
    pub a: Expr,
    pub p: Expr,
    pub f: Expr,
    pub z_star: Option<Expr>,
    pub beta: f64,
    pub q: f64,
    pub delta_grid: Vec<f64>,
    pub family_size: usize,
    pub lambda_used: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Sampled lower bound of the diffusion coefficient.
    pub a0: f64,
    /// Sampled lower bound of the potential.
    pub p0: f64,
}

fn parse_field(name: &str, text: &str) -> Result<Expr> {
    parse_expression(text).map_err(|e| Error::Config(format!("field \"{name}\" = \"{text}\": {e}")))
}

/// Sampled minimum and maximum of an expression over nodes and interior
/// quadrature points of a uniform probe grid on [0, d]. Errors on any
/// non-finite sample.
fn sample_range(name: &str, expr: &Expr, d: f64) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let h = d / PROBE_CELLS as f64;
    for e in 0..PROBE_CELLS {
        let base = e as f64 * h;
        for t in [0.0, 0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7] {
            let x = (base + t * h).min(d);
            let v = expr
                .eval(x)
                .map_err(|err| Error::Config(format!("field \"{name}\": {err}")))?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let v = expr
        .eval(d)
        .map_err(|err| Error::Config(format!("field \"{name}\": {err}")))?;
    Ok((lo.min(v), hi.max(v)))
}

impl RunConfig {
    /// Coefficient field backed by the parsed expressions, with sampled
    /// floors shrunk by a relative slack.
    pub fn coefficient_field(&self) -> Result<CoefficientField> {
        let a = self.a.clone();
        let p = self.p.clone();
        let slack = |v: f64| v - FLOOR_SLACK * (1.0 + v.abs());
        CoefficientField::new(
            Arc::new(move |x| a.eval_raw(x)),
            Arc::new(move |x| p.eval_raw(x)),
            slack(self.a0),
            slack(self.p0).max(0.0),
            1.0,
        )
    }

    /// Right-hand-side closure from the parsed expression.
    pub fn rhs(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        let f = self.f.clone();
        Arc::new(move |x| f.eval_raw(x))
    }

    /// Task-conditional requirements. Ran at load and again after a
    /// command-line task override.
    pub fn validate_task_requirements(&self) -> Result<()> {
        match self.task {
            Task::Convergence => {
                let z = self.z_star.as_ref().ok_or_else(|| {
                    Error::Config(
                        "field \"z_star\": the convergence task needs a \
                         manufactured solution expression"
                            .into(),
                    )
                })?;
                let (zlo, zhi) = sample_range("z_star", z, self.d)?;
                let scale = 1.0 + zlo.abs().max(zhi.abs());
                for (end, label) in [(0.0, "0"), (self.d, "d")] {
                    let v = z
                        .eval(end)
                        .map_err(|e| Error::Config(format!("field \"z_star\": {e}")))?;
                    if v.abs() > 1e-9 * scale {
                        return Err(Error::Config(format!(
                            "field \"z_star\": manufactured solution must \
                             vanish at the boundary, got {v} at r = {label}"
                        )));
                    }
                }
            }
            Task::Scan => {
                if self.delta_grid.is_empty() {
                    return Err(Error::Config(
                        "field \"delta_grid\": the scan task needs a nonempty \
                         delta grid"
                            .into(),
                    ));
                }
                if self.family_size == 0 {
                    return Err(Error::Config(
                        "field \"family_size\": the scan family must be nonempty".into(),
                    ));
                }
            }
            Task::Solve | Task::Verify => {}
        }
        Ok(())
    }
}

fn validate(raw: RawConfig) -> Result<RunConfig> {
    if !(raw.d.is_finite() && raw.d > 0.0) {
        return Err(Error::Config(format!(
            "field \"d\": segment length must be a positive real, got {}",
            raw.d
        )));
    }
    let alpha = FractionalOrder::new(raw.alpha)
        .map_err(|e| Error::Config(format!("field \"alpha\": {e}")))?;
    if raw.n < 1 {
        return Err(Error::Config(
            "field \"n\": dimension parameter must be at least 1".into(),
        ));
    }

    let a = parse_field("a", raw.a.as_deref().unwrap_or("1"))?;
    let p = parse_field("p", raw.p.as_deref().unwrap_or("1"))?;
    let f = parse_field("f", raw.f.as_deref().unwrap_or("0"))?;
    let z_star = raw
        .z_star
        .as_deref()
        .map(|s| parse_field("z_star", s))
        .transpose()?;

    let (a0, _) = sample_range("a", &a, raw.d)?;
    if a0 <= 0.0 {
        return Err(Error::Ellipticity(format!(
            "field \"a\": sampled lower bound {a0} violates the uniform \
             ellipticity requirement a(x) > 0"
        )));
    }
    let (p0, _) = sample_range("p", &p, raw.d)?;
    if p0 <= 0.0 {
        return Err(Error::Ellipticity(format!(
            "field \"p\": sampled lower bound {p0} violates the positivity \
             requirement p(x) > 0"
        )));
    }
    sample_range("f", &f, raw.d)?;

    let n_cells = raw.n_cells.unwrap_or(256);
    if n_cells < 2 {
        return Err(Error::Config(format!(
            "field \"N\": need at least 2 cells, got {n_cells}"
        )));
    }
    let n_list = raw.n_list.unwrap_or_else(|| vec![64, 128, 256, 512]);
    if n_list.len() < 2 {
        return Err(Error::Config(
            "field \"N_list\": a convergence study needs at least 2 mesh sizes".into(),
        ));
    }
    for pair in n_list.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "field \"N_list\": mesh sizes must increase strictly, got {:?}",
                pair
            )));
        }
    }

    let beta = raw.beta.unwrap_or(0.0);
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Config(format!(
            "field \"beta\": must be a nonnegative real, got {beta}"
        )));
    }
    let q = raw.q.unwrap_or(2.0);
    let delta_grid = raw.delta_grid.unwrap_or_default();

    if let Some(l) = raw.lambda_used {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::Config(format!(
                "field \"lambda_used\": override must be a positive real, got {l}"
            )));
        }
    }
    let family_size = raw.family_size.unwrap_or(8);

    let cfg = RunConfig {
        task: raw.task,
        d: raw.d,
        alpha,
        n: raw.n,
        n_cells,
        n_list,
        a,
        p,
        f,
        z_star,
        beta,
        q,
        delta_grid,
        family_size,
        lambda_used: raw.lambda_used,
        seed: raw.seed.unwrap_or(0),
        out: raw.out.map(PathBuf::from),
        a0,
        p0,
    };
    cfg.validate_task_requirements()?;
    Ok(cfg)
}

/// Parses and validates a JSON run configuration from `text`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schema violation: {e}")))?;
    validate(raw)
}

/// Loads and validates a JSON run configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read config {}: {e}", path.display()),
        ))
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            "{{\"task\": \"solve\", \"alpha\": 0.5, \"a\": \"1\", \"p\": \"1\", \
             \"f\": \"1\", \"N\": 256{extra}}}"
        )
    }

    #[test]
    fn minimal_solve_config_loads() {
        let cfg = parse_config(&minimal("")).unwrap();
        assert_eq!(cfg.task, Task::Solve);
        assert_eq!(cfg.n_cells, 256);
        assert_eq!(cfg.d, 1.0);
        assert_eq!(cfg.n, 1);
        assert_eq!(cfg.seed, 0);
        assert!((cfg.a0 - 1.0).abs() < 1e-15);
        assert!((cfg.p0 - 1.0).abs() < 1e-15);
        let field = cfg.coefficient_field().unwrap();
        assert!(field.a0() > 0.99 && field.a0() <= 1.0);
    }

    #[test]
    fn alpha_outside_unit_interval_is_rejected() {
        let text = minimal("").replace("0.5", "1.5");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha"), "{msg}");
        assert!(msg.contains("(0,1)"), "{msg}");
    }

    #[test]
    fn nonpositive_potential_is_rejected_by_sampling() {
        let text = minimal("").replace("\"p\": \"1\"", "\"p\": \"x-1\"");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, Error::Ellipticity(_)), "{err}");
        assert!(err.to_string().contains("\"p\""), "{err}");

        let text = minimal("").replace("\"a\": \"1\"", "\"a\": \"cos(4*x)\"");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, Error::Ellipticity(_)), "{err}");
        assert!(err.to_string().contains("\"a\""), "{err}");
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let err = parse_config(&minimal(", \"Nn\": 3")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn malformed_expression_reports_the_field() {
        let text = minimal("").replace("\"f\": \"1\"", "\"f\": \"2*^x\"");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"f\""), "{msg}");
        assert!(msg.contains("byte 2"), "{msg}");
    }

    #[test]
    fn scan_task_requires_its_fields() {
        let text = minimal("").replace("solve", "scan");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("delta_grid"), "{err}");

        let ok = parse_config(
            &minimal(", \"beta\": 0.001, \"q\": 2.5, \"delta_grid\": [0.5, 0.25]")
                .replace("solve", "scan"),
        )
        .unwrap();
        assert_eq!(ok.task, Task::Scan);
        assert_eq!(ok.delta_grid, vec![0.5, 0.25]);
        assert_eq!(ok.family_size, 8);
    }

    #[test]
    fn convergence_task_requires_a_vanishing_manufactured_solution() {
        let base = minimal("").replace("solve", "convergence");
        let err = parse_config(&base).unwrap_err();
        assert!(err.to_string().contains("z_star"), "{err}");

        let ok =
            parse_config(&minimal(", \"z_star\": \"x*(1-x)\"").replace("solve", "convergence"))
                .unwrap();
        assert_eq!(ok.n_list, vec![64, 128, 256, 512]);

        let bad = parse_config(&minimal(", \"z_star\": \"x\"").replace("solve", "convergence"))
            .unwrap_err();
        assert!(bad.to_string().contains("vanish"), "{bad}");
    }

    #[test]
    fn nonfinite_samples_are_load_errors() {
        let text = minimal("").replace("\"f\": \"1\"", "\"f\": \"1/(x-0.5)\"");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("\"f\""), "{err}");
    }
}
