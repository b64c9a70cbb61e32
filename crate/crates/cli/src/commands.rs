//! Command implementations. Each command renders its primary output as a
//! string (CSV or a human-readable verdict) so the binary entry point owns
//! all I/O and exit-code mapping.

use crate::config::RunConfig;
use neumann_mc::allocation::{
    abel_allocation, fredholm_allocation, volterra_allocation, AllocationPlan, CostModel,
};
use neumann_mc::estimator::{estimate_field, EstimateReport, EstimatorConfig};
use neumann_mc::oracle::{abel_oracle, nystrom_fredholm, picard_volterra, OracleSolution};
use neumann_mc::problem::{compute_norms, validate_problem, Family, NormReport};
use neumann_mc::Error;

/// Command failure: `Usage` maps to exit 2 (configuration or invocation
/// problems), `Run` to exit 1 (the computation itself failed or reported a
/// negative verdict).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Run(m) => m,
        }
    }
}

/// What a command wants written where.
pub struct Outcome {
    /// Primary output (CSV or verdict text), written to the output target.
    pub output: String,
    /// Diagnostics for standard error (never part of the CSV contract).
    pub notes: Vec<String>,
    pub exit: i32,
}

impl Outcome {
    fn ok(output: String) -> Self {
        Outcome {
            output,
            notes: Vec::new(),
            exit: 0,
        }
    }
}

fn norms_for(cfg: &RunConfig) -> Result<NormReport, CliError> {
    compute_norms(&cfg.spec, cfg.grid_per_axis)
        .map_err(|e| CliError::Run(format!("norm computation failed: {e}")))
}

fn require_theta(cfg: &RunConfig) -> Result<f64, CliError> {
    cfg.theta_target
        .ok_or_else(|| CliError::Usage("missing required key `theta_target`".to_string()))
}

fn require_points(cfg: &RunConfig) -> Result<&[Vec<f64>], CliError> {
    if cfg.eval_points.is_empty() {
        return Err(CliError::Usage(
            "missing required key `eval_points`".to_string(),
        ));
    }
    Ok(&cfg.eval_points)
}

/// Time argument at which Volterra/Abel allocations are built: the first
/// evaluation point when given, otherwise the horizon.
fn reference_time(cfg: &RunConfig) -> f64 {
    cfg.eval_points
        .first()
        .map(|p| p[0])
        .unwrap_or_else(|| cfg.spec.horizon())
}

fn build_plan(cfg: &RunConfig, norms: &NormReport) -> Result<AllocationPlan, CliError> {
    let theta = require_theta(cfg)?;
    let cost = CostModel::new(cfg.z_outer, cfg.per_node_cost, theta)
        .map_err(|e| CliError::Usage(format!("cost model: {e}")))?;
    let plan = match cfg.spec.family() {
        Family::Volterra => volterra_allocation(&cfg.spec, norms, reference_time(cfg), &cost),
        Family::Fredholm => fredholm_allocation(&cfg.spec, norms, &cost),
        Family::AbelVolterra => abel_allocation(&cfg.spec, norms, reference_time(cfg), &cost),
    };
    let plan = match plan {
        Ok(p) => p,
        Err(Error::BudgetTooSmall {
            m,
            required,
            minimal_theta,
        }) => {
            return Err(CliError::Run(format!(
                "infeasible budget: M = {m} cannot afford one inner replicate per stratum \
                 (requires {required}); minimal feasible theta_target = {minimal_theta}"
            )))
        }
        Err(e) => return Err(CliError::Run(format!("allocation failed: {e}"))),
    };
    let plan = if cfg.zero_threshold > 0 {
        plan.with_zero_threshold(cfg.zero_threshold)
    } else {
        plan
    };
    Ok(plan.with_tail_policy(cfg.tail_policy))
}

fn fmt_point(point: &[f64]) -> String {
    point
        .iter()
        .map(|c| format!("{c}"))
        .collect::<Vec<_>>()
        .join(":")
}

/// Validate the configured problem: print the norm report and the verdict.
/// Exit 0 iff valid.
pub fn cmd_validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let norms = norms_for(cfg)?;
    let verdict = validate_problem(&cfg.spec, &norms);
    let mut out = String::new();
    out.push_str(&format!("family = {}\n", cfg.spec.family()));
    out.push_str(&format!("sup_norm_k = {}\n", norms.sup_norm_k));
    out.push_str(&format!("op_norm_k = {}\n", norms.op_norm_k));
    out.push_str(&format!("op_norm_k2 = {}\n", norms.op_norm_k2));
    out.push_str(&format!("sup_norm_f = {}\n", norms.sup_norm_f));
    out.push_str(&format!("grid_per_axis = {}\n", norms.grid_per_axis));
    if verdict.is_valid() {
        out.push_str("all conditions pass\n");
        out.push_str("verdict: valid\n");
        Ok(Outcome::ok(out))
    } else {
        for failure in verdict.failures() {
            out.push_str(&format!("fail: {failure}\n"));
        }
        out.push_str("verdict: invalid\n");
        Ok(Outcome {
            output: out,
            notes: Vec::new(),
            exit: 1,
        })
    }
}

/// Emit the allocation table as CSV (`n,n0,n_rounded,pmf`) preceded by
/// comment lines with the predicted objective and expected cost.
pub fn cmd_allocate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let norms = norms_for(cfg)?;
    let plan = build_plan(cfg, &norms)?;
    let theta = plan
        .expected_cost_theta()
        .map_err(|e| CliError::Run(format!("expected-cost evaluation failed: {e}")))?;
    let mut out = String::new();
    out.push_str(&format!("# predicted_D = {}\n", plan.predicted_d()));
    out.push_str(&format!("# expected_theta = {}\n", theta));
    out.push_str("n,n0,n_rounded,pmf\n");
    for n in 0..=plan.n_max() {
        let pmf = plan
            .law()
            .pmf(n)
            .map_err(|e| CliError::Run(format!("pmf evaluation failed: {e}")))?;
        out.push_str(&format!(
            "{n},{},{},{}\n",
            plan.n0()[n as usize],
            plan.table()[n as usize],
            pmf
        ));
    }
    Ok(Outcome::ok(out))
}

fn run_field(cfg: &RunConfig) -> Result<(Vec<EstimateReport>, f64), CliError> {
    // Usage-level checks (missing keys) come before run-level failures.
    let points = require_points(cfg)?;
    let norms = norms_for(cfg)?;
    let plan = build_plan(cfg, &norms)?;
    let est_cfg = EstimatorConfig::new(cfg.z_outer, plan, cfg.seed)
        .and_then(|c| c.with_confidence_level(cfg.confidence_level))
        .map_err(|e| CliError::Usage(format!("estimator configuration: {e}")))?;
    let field = estimate_field(&cfg.spec, points, &est_cfg)
        .map_err(|e| CliError::Run(format!("estimation failed: {e}")))?;
    Ok((field.reports, field.uniform_band_halfwidth))
}

const SOLVE_HEADER: &str = "point,scaled,unscaled,stderr,ci_lo,ci_hi,R,theta";

fn solve_row(report: &EstimateReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        fmt_point(&report.eval_point),
        report.scaled_estimate,
        report.unscaled_estimate,
        report.std_error,
        report.ci_low,
        report.ci_high,
        report.realized_cost_r,
        report.expected_cost_theta
    )
}

/// Estimate at every evaluation point; one CSV row per point.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (reports, band) = run_field(cfg)?;
    let mut out = String::from(SOLVE_HEADER);
    out.push('\n');
    for report in &reports {
        out.push_str(&solve_row(report));
        out.push('\n');
    }
    let mut outcome = Outcome::ok(out);
    outcome
        .notes
        .push(format!("uniform_band_halfwidth = {band}"));
    Ok(outcome)
}

fn comparison_oracle(cfg: &RunConfig) -> Result<OracleSolution, CliError> {
    match cfg.spec.family() {
        Family::Volterra => picard_volterra(&cfg.spec, 4096, 200)
            .map_err(|e| CliError::Run(format!("volterra oracle failed: {e}"))),
        Family::Fredholm => {
            if cfg.spec.domain_dim() != 1 {
                return Err(CliError::Run(
                    "comparison oracle supports fredholm problems with domain_dim = 1 only"
                        .to_string(),
                ));
            }
            nystrom_fredholm(&cfg.spec, 1024)
                .map_err(|e| CliError::Run(format!("fredholm oracle failed: {e}")))
        }
        Family::AbelVolterra => {
            abel_oracle(&cfg.spec).map_err(|e| CliError::Run(format!("abel oracle failed: {e}")))
        }
    }
}

/// Solve and append oracle comparison columns per point.
pub fn cmd_compare(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let oracle = comparison_oracle(cfg)?;
    let (reports, band) = run_field(cfg)?;
    let mut out = String::from(SOLVE_HEADER);
    out.push_str(",oracle,abs_diff,diff_over_stderr");
    out.push('\n');
    for report in &reports {
        let truth = oracle
            .eval(report.eval_point[0])
            .map_err(|e| CliError::Run(format!("oracle evaluation failed: {e}")))?;
        let abs_diff = (report.unscaled_estimate - truth).abs();
        let stderr_unscaled = report.scale_factor * report.std_error;
        let ratio = if abs_diff == 0.0 {
            0.0
        } else {
            abs_diff / stderr_unscaled
        };
        out.push_str(&solve_row(report));
        out.push_str(&format!(",{truth},{abs_diff},{ratio}\n"));
    }
    let mut outcome = Outcome::ok(out);
    outcome
        .notes
        .push(format!("uniform_band_halfwidth = {band}"));
    Ok(outcome)
}

/// Re-estimate at the first evaluation point for each requested outer
/// replication count; the allocation plan stays fixed so standard errors
/// isolate the 1/sqrt(Z) rate.
pub fn cmd_bench(cfg: &RunConfig, z_list: &[u64]) -> Result<Outcome, CliError> {
    if z_list.is_empty() {
        return Err(CliError::Usage("--z-list must not be empty".to_string()));
    }
    if let Some(&bad) = z_list.iter().find(|&&z| z < 2) {
        return Err(CliError::Usage(format!(
            "--z-list entries must be at least 2, got {bad}"
        )));
    }
    let points = require_points(cfg)?;
    let point = points[0].clone();
    let norms = norms_for(cfg)?;
    let plan = build_plan(cfg, &norms)?;
    let mut out = String::from("Z,stderr,R,wall_time\n");
    for &z in z_list {
        let est_cfg = EstimatorConfig::new(z, plan.clone(), cfg.seed)
            .and_then(|c| c.with_confidence_level(cfg.confidence_level))
            .map_err(|e| CliError::Usage(format!("estimator configuration: {e}")))?;
        let start = std::time::Instant::now();
        let field = estimate_field(&cfg.spec, std::slice::from_ref(&point), &est_cfg)
            .map_err(|e| CliError::Run(format!("estimation failed: {e}")))?;
        let wall = start.elapsed().as_secs_f64();
        let report = &field.reports[0];
        out.push_str(&format!(
            "{z},{},{},{wall}\n",
            report.std_error, report.realized_cost_r
        ));
    }
    Ok(Outcome::ok(out))
}
