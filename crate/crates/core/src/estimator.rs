//! The unbiased Monte Carlo engine.
//!
//! Each outer replicate `i` owns RNG stream `i`: it draws a truncation depth
//! `n_i` from the family law by inverting a single uniform, then averages
//! `N(n_i)` independent path weights evaluated at freshly sampled inner
//! nodes (uniform simplex points for Volterra, independent domain points for
//! Fredholm, polygonal Beta points for Abel-Volterra). The mean of the `Z`
//! replicate values estimates the scaled solution; multiplying by the
//! deterministic scale factor (`e^(lambda t)`, `1/(1-lambda)`, or
//! `E_beta(mu)`) recovers the solution itself. When the plan assigns zero
//! inner replicates to a depth, the replicate contributes zero by
//! definition, which preserves unbiasedness of the nonzero strata at the
//! cost of the truncated tail.
//!
//! Standard errors come from the sample variance of the replicate values,
//! and confidence intervals use normal quantiles (the classical CLT regime:
//! `Z` is large by construction). Field estimation over a grid re-uses each
//! replicate's randomness across grid points — the truncation uniform is
//! shared and inverted through each point's law, and inner nodes are shared
//! per depth — producing the correlated replicate curves that feed the
//! uniform confidence band. The band halfwidth is an empirical batch-mean
//! surrogate for the limiting Gaussian field's sup-quantile: an explicit
//! approximation, not an exact construction.
//!
//! Replicates are embarrassingly parallel; results are reduced in replicate
//! index order so reports are bit-identical regardless of worker count.

use crate::allocation::{expected_cost, AllocationPlan, CostModel};
use crate::error::{Error, Result};
use crate::problem::{path_weight_fredholm, path_weight_volterra, Family, ProblemSpec};
use crate::sampling::{
    sample_polygonal_beta, sample_simplex_uniform, RngStream, SimplexPoint, TruncationLaw,
    TruncationSampler,
};
use crate::specfun::{ln_gamma, mittag_leffler, normal_quantile, SeriesTolerance};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Largest number of replicate batches used for the uniform band.
const MAX_BAND_BATCHES: u64 = 50;

/// Outer-replication settings for one estimation run.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    z_outer: u64,
    plan: AllocationPlan,
    seed: u64,
    confidence_level: f64,
}

impl EstimatorConfig {
    /// Confidence level defaults to 0.95.
    pub fn new(z_outer: u64, plan: AllocationPlan, seed: u64) -> Result<Self> {
        if z_outer < 2 {
            return Err(Error::InvalidConfig(format!(
                "z_outer must be at least 2 (sample variance requires it), got {z_outer}"
            )));
        }
        Ok(EstimatorConfig {
            z_outer,
            plan,
            seed,
            confidence_level: 0.95,
        })
    }

    pub fn with_confidence_level(mut self, confidence_level: f64) -> Result<Self> {
        if !(confidence_level > 0.0 && confidence_level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence_level must lie in (0,1), got {confidence_level}"
            )));
        }
        self.confidence_level = confidence_level;
        Ok(self)
    }

    pub fn z_outer(&self) -> u64 {
        self.z_outer
    }

    pub fn plan(&self) -> &AllocationPlan {
        &self.plan
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn confidence_level(&self) -> f64 {
        self.confidence_level
    }
}

/// Point-estimate summary. `std_error` is the standard error of the scaled
/// estimate; the confidence interval is reported on the unscaled (solution)
/// scale, `scale_factor * (scaled ± q * std_error)`.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub eval_point: Vec<f64>,
    pub scaled_estimate: f64,
    pub unscaled_estimate: f64,
    pub scale_factor: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub realized_cost_r: u64,
    pub expected_cost_theta: f64,
    pub z_used: u64,
}

/// Estimates over a grid of points sharing replicate randomness, plus a
/// uniform confidence-band halfwidth on the unscaled solution.
#[derive(Debug, Clone)]
pub struct FieldReport {
    pub grid: Vec<Vec<f64>>,
    pub reports: Vec<EstimateReport>,
    pub uniform_band_halfwidth: f64,
}

/// Diagnostic pair (realized cost `R`, expected cost `Theta`).
pub fn realized_vs_expected_cost(report: &EstimateReport) -> (u64, f64) {
    (report.realized_cost_r, report.expected_cost_theta)
}

/// Estimate the solution at a single point.
pub fn estimate_point(
    spec: &ProblemSpec,
    point: &[f64],
    config: &EstimatorConfig,
) -> Result<EstimateReport> {
    let field = estimate_field(spec, &[point.to_vec()], config)?;
    Ok(field.reports.into_iter().next().expect("one report per grid point"))
}

/// Estimate the solution over a grid of points with shared replicate
/// randomness (common random numbers across the grid).
pub fn estimate_field(
    spec: &ProblemSpec,
    grid: &[Vec<f64>],
    config: &EstimatorConfig,
) -> Result<FieldReport> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("grid must be nonempty".to_string()));
    }
    if config.plan.family() != spec.family() {
        return Err(Error::FamilyMismatch {
            plan: config.plan.family().as_str(),
            problem: spec.family().as_str(),
        });
    }
    for point in grid {
        validate_point(spec, point)?;
    }
    let laws: Vec<TruncationLaw> = grid
        .iter()
        .map(|point| law_at(spec, point))
        .collect::<Result<_>>()?;
    let samplers: Vec<TruncationSampler> = laws
        .iter()
        .map(TruncationSampler::new)
        .collect::<Result<_>>()?;
    let scales: Vec<f64> = grid
        .iter()
        .map(|point| scale_at(spec, point))
        .collect::<Result<_>>()?;

    let z = config.z_outer;
    let replicates: Vec<(Vec<f64>, Vec<u64>)> = (0..z)
        .into_par_iter()
        .map(|i| run_replicate(spec, grid, config, &samplers, i))
        .collect::<Result<_>>()?;

    let p_count = grid.len();
    let per_node = config.plan.cost().per_node_cost;
    let q = normal_quantile(0.5 + config.confidence_level / 2.0)?;
    let run_cost = CostModel {
        z_outer: z,
        per_node_cost: per_node,
        theta_target: config.plan.cost().theta_target,
    };

    // Mean per point; constant replicate values short-circuit to the value
    // itself so zero-variance problems are reproduced bit-exactly.
    let mut means = vec![0.0f64; p_count];
    for p in 0..p_count {
        let first = replicates[0].0[p];
        if replicates.iter().all(|(values, _)| values[p] == first) {
            means[p] = first;
        } else {
            let sum: f64 = replicates.iter().map(|(values, _)| values[p]).sum();
            means[p] = sum / z as f64;
        }
    }

    let mut reports = Vec::with_capacity(p_count);
    for p in 0..p_count {
        let mean = means[p];
        let mut ss = 0.0f64;
        let mut cost_units = 0u64;
        for (values, costs) in &replicates {
            let d = values[p] - mean;
            ss += d * d;
            cost_units += costs[p];
        }
        let variance = ss / (z - 1) as f64;
        let std_error = (variance / z as f64).sqrt();
        let scale = scales[p];
        let theta = expected_cost(&config.plan, &laws[p], &run_cost)?;
        reports.push(EstimateReport {
            eval_point: grid[p].clone(),
            scaled_estimate: mean,
            unscaled_estimate: scale * mean,
            scale_factor: scale,
            std_error,
            ci_low: scale * (mean - q * std_error),
            ci_high: scale * (mean + q * std_error),
            realized_cost_r: per_node * cost_units,
            expected_cost_theta: theta,
            z_used: z,
        });
    }

    let band = uniform_band(&replicates, &means, &scales, config.confidence_level);
    Ok(FieldReport {
        grid: grid.to_vec(),
        reports,
        uniform_band_halfwidth: band,
    })
}

/// One outer replicate: shared truncation uniform inverted through each
/// point's law, inner nodes sampled once per distinct depth and re-used
/// across grid points. Returns per-point replicate values and per-point
/// depth-cost units `n * N(n)`.
fn run_replicate(
    spec: &ProblemSpec,
    grid: &[Vec<f64>],
    config: &EstimatorConfig,
    samplers: &[TruncationSampler],
    replicate: u64,
) -> Result<(Vec<f64>, Vec<u64>)> {
    let mut stream = RngStream::new(config.seed, replicate);
    let u = stream.uniform();
    let plan = &config.plan;
    let depths: Vec<u32> = samplers.iter().map(|s| s.invert(u)).collect();

    // Sample inner nodes per distinct depth, ascending, so the draw order
    // is independent of the grid ordering.
    let mut needed: BTreeMap<u32, u32> = BTreeMap::new();
    for &n in &depths {
        let reps = plan.inner_replicates(n);
        if n > 0 && reps > 0 {
            needed.insert(n, reps);
        }
    }

    let mut values = vec![0.0f64; grid.len()];
    let mut costs = vec![0u64; grid.len()];
    match spec.family() {
        Family::Volterra | Family::AbelVolterra => {
            let mut nodes: BTreeMap<u32, Vec<SimplexPoint>> = BTreeMap::new();
            for (&n, &reps) in &needed {
                let mut sets = Vec::with_capacity(reps as usize);
                for _ in 0..reps {
                    let pt = match spec.family() {
                        Family::Volterra => sample_simplex_uniform(n as usize, &mut stream)?,
                        _ => sample_polygonal_beta(spec.alpha(), n as usize, &mut stream)?,
                    };
                    sets.push(pt);
                }
                nodes.insert(n, sets);
            }
            let empty = SimplexPoint::empty();
            for (p, point) in grid.iter().enumerate() {
                let n = depths[p];
                let reps = plan.inner_replicates(n);
                costs[p] = n as u64 * reps as u64;
                if reps == 0 {
                    continue;
                }
                let t = point[0];
                if n == 0 {
                    values[p] = path_weight_volterra(spec, t, &empty)?;
                    continue;
                }
                let sets = &nodes[&n];
                let mut acc = 0.0f64;
                for set in sets {
                    acc += path_weight_volterra(spec, t, set)?;
                }
                values[p] = acc / reps as f64;
            }
        }
        Family::Fredholm => {
            let d = spec.domain_dim();
            let mut nodes: BTreeMap<u32, Vec<Vec<Vec<f64>>>> = BTreeMap::new();
            for (&n, &reps) in &needed {
                let mut sets = Vec::with_capacity(reps as usize);
                for _ in 0..reps {
                    let mut chain = Vec::with_capacity(n as usize);
                    for _ in 0..n {
                        let node: Vec<f64> = (0..d).map(|_| stream.uniform()).collect();
                        chain.push(node);
                    }
                    sets.push(chain);
                }
                nodes.insert(n, sets);
            }
            let empty: Vec<Vec<f64>> = Vec::new();
            for (p, point) in grid.iter().enumerate() {
                let n = depths[p];
                let reps = plan.inner_replicates(n);
                costs[p] = n as u64 * reps as u64;
                if reps == 0 {
                    continue;
                }
                if n == 0 {
                    values[p] = path_weight_fredholm(spec, point, &empty)?;
                    continue;
                }
                let sets = &nodes[&n];
                let mut acc = 0.0f64;
                for set in sets {
                    acc += path_weight_fredholm(spec, point, set)?;
                }
                values[p] = acc / reps as f64;
            }
        }
    }
    Ok((values, costs))
}

/// Empirical uniform-band halfwidth from batch means: split replicates into
/// `B = min(50, Z)` equal batches of size `s`, take per-batch
/// `sqrt(s) * sup over the grid` of the unscaled deviation from the overall
/// mean, and return the configured quantile of those sup values divided by
/// `sqrt(Z)`. Replicates beyond `B*s` (division remainder) are not batched.
fn uniform_band(
    replicates: &[(Vec<f64>, Vec<u64>)],
    means: &[f64],
    scales: &[f64],
    confidence_level: f64,
) -> f64 {
    let z = replicates.len() as u64;
    let batches = z.min(MAX_BAND_BATCHES);
    let size = z / batches;
    let mut sups = Vec::with_capacity(batches as usize);
    for b in 0..batches {
        let start = (b * size) as usize;
        let end = start + size as usize;
        let mut sup = 0.0f64;
        for (p, (&mean, &scale)) in means.iter().zip(scales).enumerate() {
            let mut batch_mean = 0.0f64;
            for (values, _) in &replicates[start..end] {
                batch_mean += values[p];
            }
            batch_mean /= size as f64;
            sup = sup.max(scale * (batch_mean - mean).abs());
        }
        sups.push((size as f64).sqrt() * sup);
    }
    sups.sort_by(|a, b| a.partial_cmp(b).expect("finite sups"));
    let idx = ((confidence_level * batches as f64).ceil() as usize)
        .clamp(1, batches as usize)
        - 1;
    sups[idx] / (z as f64).sqrt()
}

fn validate_point(spec: &ProblemSpec, point: &[f64]) -> Result<()> {
    match spec.family() {
        Family::Volterra | Family::AbelVolterra => {
            if point.len() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "{} evaluation points are scalar, got {} coordinates",
                    spec.family(),
                    point.len()
                )));
            }
            let t = point[0];
            if !(0.0..=spec.horizon()).contains(&t) {
                return Err(Error::InvalidConfig(format!(
                    "evaluation point {t} outside [0, {}]",
                    spec.horizon()
                )));
            }
        }
        Family::Fredholm => {
            if point.len() != spec.domain_dim() {
                return Err(Error::InvalidConfig(format!(
                    "fredholm evaluation points have {} coordinates, got {}",
                    spec.domain_dim(),
                    point.len()
                )));
            }
            for &c in point {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::InvalidConfig(format!(
                        "evaluation coordinate {c} outside [0, 1]"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Truncation law of the outer draw at this evaluation point.
fn law_at(spec: &ProblemSpec, point: &[f64]) -> Result<TruncationLaw> {
    Ok(match spec.family() {
        Family::Volterra => TruncationLaw::Poisson {
            rate: spec.lambda() * point[0],
        },
        Family::Fredholm => TruncationLaw::Geometric {
            ratio: spec.lambda(),
        },
        Family::AbelVolterra => {
            let beta = spec.beta();
            TruncationLaw::MittagLeffler {
                beta,
                mu: spec.lambda() * point[0].powf(beta) * ln_gamma(beta)?.exp(),
            }
        }
    })
}

/// Deterministic factor connecting the scaled estimate to the solution.
fn scale_at(spec: &ProblemSpec, point: &[f64]) -> Result<f64> {
    match spec.family() {
        Family::Volterra => Ok((spec.lambda() * point[0]).exp()),
        Family::Fredholm => {
            let denom = 1.0 - spec.lambda();
            if denom <= 0.0 {
                return Err(Error::InvalidProblem("lambda not in (0,1)".to_string()));
            }
            Ok(1.0 / denom)
        }
        Family::AbelVolterra => {
            let beta = spec.beta();
            let mu = spec.lambda() * point[0].powf(beta) * ln_gamma(beta)?.exp();
            mittag_leffler(beta, mu, &SeriesTolerance::default())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{
        abel_allocation, fredholm_allocation, volterra_allocation, TailPolicy,
    };
    use crate::oracle::{nystrom_fredholm, picard_volterra};
    use crate::problem::{compute_norms, parse_expression};

    fn volterra(kernel: &str, rhs: &str, lambda: f64, horizon: f64) -> ProblemSpec {
        ProblemSpec::volterra(
            parse_expression(kernel).unwrap(),
            parse_expression(rhs).unwrap(),
            lambda,
            horizon,
        )
        .unwrap()
    }

    fn fredholm(kernel: &str, rhs: &str, lambda: f64, d: usize) -> ProblemSpec {
        ProblemSpec::fredholm(
            parse_expression(kernel).unwrap(),
            parse_expression(rhs).unwrap(),
            lambda,
            d,
        )
        .unwrap()
    }

    fn abel(kernel: &str, rhs: &str, lambda: f64, horizon: f64, alpha: f64) -> ProblemSpec {
        ProblemSpec::abel(
            parse_expression(kernel).unwrap(),
            parse_expression(rhs).unwrap(),
            lambda,
            horizon,
            alpha,
        )
        .unwrap()
    }

    fn plan_for(spec: &ProblemSpec, t: f64, z: u64, theta: f64) -> AllocationPlan {
        let norms = compute_norms(spec, 201).unwrap();
        let d = if spec.family() == Family::Fredholm {
            spec.domain_dim() as u64
        } else {
            1u64
        };
        let cost = CostModel::new(z, d, theta).unwrap();
        match spec.family() {
            Family::Volterra => volterra_allocation(spec, &norms, t, &cost).unwrap(),
            Family::Fredholm => fredholm_allocation(spec, &norms, &cost).unwrap(),
            Family::AbelVolterra => abel_allocation(spec, &norms, t, &cost).unwrap(),
        }
    }

    #[test]
    fn constant_volterra_is_exact_with_zero_variance() {
        let spec = volterra("1", "1", 1.0, 1.0);
        let plan = plan_for(&spec, 1.0, 64, 500.0);
        let config = EstimatorConfig::new(64, plan, 7).unwrap();
        let report = estimate_point(&spec, &[1.0], &config).unwrap();
        assert_eq!(report.scaled_estimate, 1.0);
        assert_eq!(report.std_error, 0.0);
        assert!((report.unscaled_estimate - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(report.ci_low, report.ci_high);
        assert!(report.realized_cost_r > 0);
        assert_eq!(report.z_used, 64);
        assert_eq!(
            report.unscaled_estimate,
            report.scale_factor * report.scaled_estimate
        );
    }

    #[test]
    fn constant_fredholm_is_exact() {
        let spec = fredholm("1", "1", 0.5, 1);
        let plan = plan_for(&spec, 0.0, 32, 200.0);
        let config = EstimatorConfig::new(32, plan, 3).unwrap();
        let report = estimate_point(&spec, &[0.25], &config).unwrap();
        assert_eq!(report.scaled_estimate, 1.0);
        assert_eq!(report.std_error, 0.0);
        assert!((report.unscaled_estimate - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_abel_validates_scale_end_to_end() {
        // Every path weight is 1, so the unscaled estimate equals the
        // Mittag-Leffler closed form exactly.
        let spec = abel("1", "1", 0.5, 1.0, 0.5);
        let plan = plan_for(&spec, 1.0, 32, 500.0);
        let config = EstimatorConfig::new(32, plan, 11).unwrap();
        let report = estimate_point(&spec, &[1.0], &config).unwrap();
        assert_eq!(report.scaled_estimate, 1.0);
        assert_eq!(report.std_error, 0.0);
        let tol = SeriesTolerance::default();
        let expected = mittag_leffler(0.5, 0.5 * std::f64::consts::PI.sqrt(), &tol).unwrap();
        assert!((report.unscaled_estimate - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_lambda_volterra_returns_rhs_exactly() {
        let spec = volterra("t*s", "1 + t*t", 0.0, 1.0);
        let plan = plan_for(&spec, 0.7, 16, 100.0);
        let config = EstimatorConfig::new(16, plan, 5).unwrap();
        let report = estimate_point(&spec, &[0.7], &config).unwrap();
        assert_eq!(report.scaled_estimate, 1.0 + 0.7 * 0.7);
        assert_eq!(report.std_error, 0.0);
        assert_eq!(report.scale_factor, 1.0);
    }

    #[test]
    fn reports_are_identical_across_worker_counts() {
        let spec = volterra("t*s", "1", 0.5, 1.0);
        let plan = plan_for(&spec, 1.0, 500, 3000.0);
        let config = EstimatorConfig::new(500, plan, 42).unwrap();
        let run = |threads: usize| -> EstimateReport {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| estimate_point(&spec, &[1.0], &config).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.scaled_estimate.to_bits(), four.scaled_estimate.to_bits());
        assert_eq!(one.std_error.to_bits(), four.std_error.to_bits());
        assert_eq!(one.ci_low.to_bits(), four.ci_low.to_bits());
        assert_eq!(one.realized_cost_r, four.realized_cost_r);
    }

    #[test]
    fn different_seeds_decorrelate() {
        let spec = volterra("t*s", "1", 0.5, 1.0);
        let plan = plan_for(&spec, 1.0, 100, 600.0);
        let a = estimate_point(
            &spec,
            &[1.0],
            &EstimatorConfig::new(100, plan.clone(), 1).unwrap(),
        )
        .unwrap();
        let b =
            estimate_point(&spec, &[1.0], &EstimatorConfig::new(100, plan, 2).unwrap()).unwrap();
        assert_ne!(a.scaled_estimate.to_bits(), b.scaled_estimate.to_bits());
    }

    #[test]
    fn volterra_unbiased_against_picard_oracle() {
        let spec = volterra("t*s", "1", 0.5, 1.0);
        let oracle = picard_volterra(&spec, 2048, 100).unwrap();
        let truth_scaled = oracle.eval(1.0).unwrap() * (-0.5f64).exp();
        let plan = plan_for(&spec, 1.0, 200, 1200.0);
        let seeds = 200u64;
        let mut mean = 0.0f64;
        let mut se_sq = 0.0f64;
        for seed in 0..seeds {
            let config = EstimatorConfig::new(200, plan.clone(), seed).unwrap();
            let r = estimate_point(&spec, &[1.0], &config).unwrap();
            mean += r.scaled_estimate;
            se_sq += r.std_error * r.std_error;
        }
        mean /= seeds as f64;
        let combined_se = (se_sq / (seeds * seeds) as f64).sqrt();
        let tolerance = 4.0 * combined_se + 5.0 * oracle.est_accuracy();
        assert!(
            (mean - truth_scaled).abs() <= tolerance,
            "mean {mean} vs oracle {truth_scaled} (tol {tolerance})"
        );
    }

    #[test]
    fn fredholm_unbiased_against_rank_one_solution() {
        // x(u) = 1.2 u; scaled solution is (1 - lambda) x(u) = 0.6 at u = 1.
        let spec = fredholm("u*v", "u", 0.5, 1);
        let plan = plan_for(&spec, 0.0, 400, 500.0);
        let seeds = 100u64;
        let mut mean = 0.0f64;
        let mut se_sq = 0.0f64;
        for seed in 0..seeds {
            let config = EstimatorConfig::new(400, plan.clone(), seed).unwrap();
            let r = estimate_point(&spec, &[1.0], &config).unwrap();
            mean += r.scaled_estimate;
            se_sq += r.std_error * r.std_error;
        }
        mean /= seeds as f64;
        let combined_se = (se_sq / (seeds * seeds) as f64).sqrt();
        assert!(
            (mean - 0.6).abs() <= 4.0 * combined_se,
            "mean {mean} vs 0.6 (4se = {})",
            4.0 * combined_se
        );
    }

    #[test]
    fn abel_unbiased_against_product_quadrature() {
        let spec = abel("exp(-s)", "1", 0.5, 1.0, 0.5);
        let truth = crate::oracle::abel_reference(&spec, 1.0).unwrap();
        let plan = plan_for(&spec, 1.0, 200, 1500.0);
        let seeds = 150u64;
        let mut mean = 0.0f64;
        let mut se_sq = 0.0f64;
        for seed in 0..seeds {
            let config = EstimatorConfig::new(200, plan.clone(), seed).unwrap();
            let r = estimate_point(&spec, &[1.0], &config).unwrap();
            mean += r.unscaled_estimate;
            se_sq += (r.scale_factor * r.std_error).powi(2);
        }
        mean /= seeds as f64;
        let combined_se = (se_sq / (seeds * seeds) as f64).sqrt();
        assert!(
            (mean - truth).abs() <= 4.0 * combined_se + 1e-4,
            "mean {mean} vs {truth} (4se = {})",
            4.0 * combined_se
        );
    }

    #[test]
    fn realized_cost_follows_poisson_mean() {
        let spec = volterra("t*s", "1", 1.0, 1.0);
        // Plan with N = 1 everywhere, assembled directly.
        let law = TruncationLaw::Poisson { rate: 1.0 };
        let len = law.tail_cutoff(1e-12).unwrap() as usize + 1;
        let cost = CostModel::new(10_000, 1, 10_000.0).unwrap();
        let plan = AllocationPlan::from_parts(
            Family::Volterra,
            law,
            vec![1; len],
            vec![1.0; len],
            vec![1.0; len],
            1.0,
            1.0,
            0.0,
            0,
            TailPolicy::One,
            cost,
        )
        .unwrap();
        let config = EstimatorConfig::new(10_000, plan, 9).unwrap();
        let report = estimate_point(&spec, &[1.0], &config).unwrap();
        let (r, theta) = realized_vs_expected_cost(&report);
        let per_z = r as f64 / 10_000.0;
        assert!((per_z - 1.0).abs() < 0.03, "R/Z = {per_z}");
        assert!((theta - 10_000.0).abs() / 10_000.0 < 0.01, "theta {theta}");
    }

    #[test]
    fn zero_replication_plan_costs_nothing() {
        let spec = fredholm("u*v", "u", 0.5, 1);
        let base = plan_for(&spec, 0.0, 100, 200.0);
        let law = base.law().clone();
        let len = base.table().len();
        let zeros = AllocationPlan::from_parts(
            Family::Fredholm,
            law,
            vec![0; len],
            vec![0.0; len],
            vec![0.0; len],
            0.0,
            1.0,
            0.0,
            0,
            TailPolicy::Zero,
            *base.cost(),
        )
        .unwrap();
        let config = EstimatorConfig::new(100, zeros, 4).unwrap();
        let report = estimate_point(&spec, &[0.5], &config).unwrap();
        assert_eq!(report.realized_cost_r, 0);
        assert_eq!(report.scaled_estimate, 0.0);
    }

    #[test]
    fn doubling_per_node_cost_doubles_realized_cost() {
        let spec1 = fredholm("u*v", "u", 0.5, 1);
        let norms = compute_norms(&spec1, 201).unwrap();
        let z = 300u64;
        let plan1 = fredholm_allocation(&spec1, &norms, &CostModel::new(z, 1, 400.0).unwrap())
            .unwrap();
        let plan2 = fredholm_allocation(&spec1, &norms, &CostModel::new(z, 2, 800.0).unwrap())
            .unwrap();
        assert_eq!(plan1.table(), plan2.table());
        let r1 = estimate_point(&spec1, &[0.5], &EstimatorConfig::new(z, plan1, 21).unwrap())
            .unwrap();
        let r2 = estimate_point(&spec1, &[0.5], &EstimatorConfig::new(z, plan2, 21).unwrap())
            .unwrap();
        assert_eq!(r2.realized_cost_r, 2 * r1.realized_cost_r);
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let vspec = volterra("t*s", "1", 0.5, 1.0);
        let fspec = fredholm("u*v", "u", 0.5, 1);
        let plan = plan_for(&vspec, 1.0, 50, 300.0);
        let config = EstimatorConfig::new(50, plan, 1).unwrap();
        let err = estimate_point(&fspec, &[0.5], &config).unwrap_err();
        assert!(matches!(err, Error::FamilyMismatch { .. }));
    }

    #[test]
    fn points_are_validated() {
        let spec = volterra("t*s", "1", 0.5, 1.0);
        let plan = plan_for(&spec, 1.0, 50, 300.0);
        let config = EstimatorConfig::new(50, plan, 1).unwrap();
        assert!(estimate_point(&spec, &[1.5], &config).is_err());
        assert!(estimate_point(&spec, &[0.5, 0.5], &config).is_err());

        let fspec = fredholm("u*v", "u", 0.5, 2);
        let fplan = plan_for(&fspec, 0.0, 50, 300.0);
        let fconfig = EstimatorConfig::new(50, fplan, 1).unwrap();
        assert!(estimate_point(&fspec, &[0.5], &fconfig).is_err());
        assert!(estimate_point(&fspec, &[0.5, 1.2], &fconfig).is_err());
    }

    #[test]
    fn config_validation() {
        let spec = volterra("1", "1", 0.5, 1.0);
        let plan = plan_for(&spec, 1.0, 50, 300.0);
        assert!(EstimatorConfig::new(1, plan.clone(), 0).is_err());
        let config = EstimatorConfig::new(2, plan, 0).unwrap();
        assert!(config.clone().with_confidence_level(0.0).is_err());
        assert!(config.clone().with_confidence_level(1.0).is_err());
        assert!((config.with_confidence_level(0.9).unwrap().confidence_level() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn constant_field_has_zero_band() {
        let spec = fredholm("1", "1", 0.5, 1);
        let plan = plan_for(&spec, 0.0, 100, 300.0);
        let config = EstimatorConfig::new(100, plan, 13).unwrap();
        let grid: Vec<Vec<f64>> = (0..=10).map(|i| vec![i as f64 / 10.0]).collect();
        let field = estimate_field(&spec, &grid, &config).unwrap();
        assert_eq!(field.uniform_band_halfwidth, 0.0);
        assert_eq!(field.reports.len(), 11);
        for r in &field.reports {
            assert!((r.unscaled_estimate - 2.0).abs() < 1e-15);
            assert_eq!(r.std_error, 0.0);
        }
    }

    #[test]
    fn single_point_band_tracks_pointwise_ci() {
        let spec = volterra("t*s", "1", 0.5, 1.0);
        let plan = plan_for(&spec, 1.0, 2000, 6000.0);
        let mut band_sum = 0.0f64;
        let mut ci_sum = 0.0f64;
        for seed in 0..50u64 {
            let config = EstimatorConfig::new(2000, plan.clone(), seed).unwrap();
            let field = estimate_field(&spec, &[vec![1.0]], &config).unwrap();
            let r = &field.reports[0];
            band_sum += field.uniform_band_halfwidth;
            ci_sum += (r.ci_high - r.ci_low) / 2.0;
        }
        let ratio = band_sum / ci_sum;
        assert!(
            (0.8..=1.2).contains(&ratio),
            "band/CI ratio over 50 repetitions: {ratio}"
        );
    }

    #[test]
    fn field_reports_align_with_oracle_curve() {
        let spec = fredholm("u*v", "u", 0.5, 1);
        let oracle = nystrom_fredholm(&spec, 512).unwrap();
        let plan = plan_for(&spec, 0.0, 4000, 6000.0);
        let config = EstimatorConfig::new(4000, plan, 2024).unwrap();
        let grid: Vec<Vec<f64>> = (0..=10).map(|i| vec![i as f64 / 10.0]).collect();
        let field = estimate_field(&spec, &grid, &config).unwrap();
        for (point, report) in grid.iter().zip(&field.reports) {
            let truth = oracle.eval(point[0]).unwrap();
            let halfwidth = (report.ci_high - report.ci_low) / 2.0;
            // 99.99%-style sanity margin: 5 half-widths plus oracle error.
            assert!(
                (report.unscaled_estimate - truth).abs()
                    <= 5.0 * halfwidth.max(report.scale_factor * 1e-12)
                        + oracle.est_accuracy() * 5.0,
                "point {point:?}: estimate {} vs {truth}",
                report.unscaled_estimate
            );
        }
        assert!(field.uniform_band_halfwidth > 0.0);
    }
}
