//! Inner-replicate allocation: how many path-weight samples to average when
//! the truncation draw lands on depth `n`.
//!
//! The core is a constrained optimizer: minimize the variance surrogate
//! `sum_n A(n)/N(n)` subject to the cost constraint
//! `sum_n B(n) N(n) <= M`. By Lagrange multipliers the continuous optimum is
//!
//! ```text
//! N_0(n) = M / S * sqrt(A(n)/B(n)),   S = sum_n sqrt(A(n) B(n)),
//! ```
//!
//! with minimized objective `D = S^2 / M`; the constraint is tight at the
//! optimum. Integer tables take `N(n) = floor(N_0(n)) + 1` (optionally
//! zeroing strata whose continuous value falls below a threshold, which
//! trades a small bias for cost).
//!
//! Each family instantiates `A`, `B`, `M` from its variance bound and cost
//! accounting; depth 0 is excluded from the optimization (its path weight
//! is the deterministic right-hand-side value, so it has neither cost nor
//! within-stratum variance) and is pinned at `N(0) = 1`:
//!
//! * Volterra at time `t` with `Lam = lambda*t` and `Q = Lam*supK^2`:
//!   `A(n) = Q^n/(n!)^2`, `B(n) = n*Lam^n/n!`, `M = e^Lam*Theta/(Z*d)`.
//! * Fredholm with `k2` the squared-kernel operator norm:
//!   `A(n) = (lambda*k2)^n`, `B(n) = n*lambda^n`,
//!   `M = Theta/((1-lambda)*Z*d)`.
//! * Abel-Volterra with `beta = 1 - alpha`, `Lam_b = lambda*t^beta`, and
//!   the simplex masses `W_n(beta)`: `A(n) = W_n^2*supK^(2n)*Lam_b^n`,
//!   `B(n) = n*W_n*Lam_b^n`, `M = E_beta(mu)*Theta/(Z*d)` where
//!   `mu = Gamma(beta)*Lam_b` is the truncation-law parameter. At
//!   `beta = 1` everything collapses to the Volterra sequences.
//!
//! The induced closed forms have per-depth shapes `supK^n/sqrt(n*n!)`,
//! `k2^(n/2)/sqrt(n)` and `sqrt(W_n)*supK^n/sqrt(n)`, with normalizers
//! expressible through the special-function module; unit tests pin these
//! identities.

use crate::error::{Error, Result};
use crate::problem::{Family, NormReport, ProblemSpec};
use crate::sampling::TruncationLaw;
use crate::specfun::{ln_gamma, mittag_leffler, SeriesTolerance};

/// Truncation-law tail mass ignored when sizing allocation tables.
const TAIL_MASS: f64 = 1e-12;

/// Behavior for truncation draws deeper than the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailPolicy {
    /// Evaluate one path weight for depths beyond the table. Keeps the
    /// estimator exactly unbiased; the extra cost is bounded by the ignored
    /// tail mass.
    One,
    /// Contribute zero for depths beyond the table (introduces a bias of
    /// the order of the ignored tail mass).
    Zero,
}

impl TailPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TailPolicy::One => "one",
            TailPolicy::Zero => "zero",
        }
    }
}

/// Sampling-cost model: `z_outer` outer replicates, `per_node_cost` base
/// variates per chain node, and the total variate budget `theta_target`.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    pub z_outer: u64,
    pub per_node_cost: u64,
    pub theta_target: f64,
}

impl CostModel {
    pub fn new(z_outer: u64, per_node_cost: u64, theta_target: f64) -> Result<Self> {
        if z_outer == 0 {
            return Err(Error::domain("cost_model", "z_outer must be positive".to_string()));
        }
        if per_node_cost == 0 {
            return Err(Error::domain(
                "cost_model",
                "per_node_cost must be positive".to_string(),
            ));
        }
        if !(theta_target > 0.0 && theta_target.is_finite()) {
            return Err(Error::domain(
                "cost_model",
                format!("theta_target must be positive and finite, got {theta_target}"),
            ));
        }
        Ok(CostModel {
            z_outer,
            per_node_cost,
            theta_target,
        })
    }
}

/// Continuous optimum of `min sum A(n)/N(n)` under `sum B(n) N(n) <= M`.
///
/// Returns the per-entry optimum `N_0` and the minimized objective
/// `D = (sum sqrt(A B))^2 / M`. The constraint is tight at the optimum.
pub fn solve_allocation(a: &[f64], b: &[f64], m: f64) -> Result<(Vec<f64>, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::domain(
            "solve_allocation",
            format!(
                "A and B must be nonempty sequences of equal length, got {} and {}",
                a.len(),
                b.len()
            ),
        ));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::domain(
            "solve_allocation",
            format!("budget M must be positive and finite, got {m}"),
        ));
    }
    for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
        if !(ai > 0.0 && ai.is_finite()) || !(bi > 0.0 && bi.is_finite()) {
            return Err(Error::domain(
                "solve_allocation",
                format!("entries must be positive and finite, got A[{i}] = {ai}, B[{i}] = {bi}"),
            ));
        }
    }
    let s: f64 = a.iter().zip(b).map(|(&ai, &bi)| (ai * bi).sqrt()).sum();
    let n0: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| m / s * (ai / bi).sqrt())
        .collect();
    Ok((n0, s * s / m))
}

/// Integer rounding of a continuous allocation: `floor(N_0) + 1` per entry,
/// except entries with `N_0 <= zero_threshold` become 0 when the threshold
/// is positive (`zero_threshold = 0` disables zeroing).
pub fn round_allocation(n0: &[f64], zero_threshold: u32) -> Vec<u32> {
    n0.iter()
        .map(|&x| {
            if zero_threshold > 0 && x <= zero_threshold as f64 {
                0
            } else {
                x.floor() as u32 + 1
            }
        })
        .collect()
}

/// An integer inner-replication table together with the data needed to
/// predict its variance and cost. Index `n` of the table is the truncation
/// depth; `table[0] = 1` always (the depth-0 path weight is deterministic).
#[derive(Debug, Clone)]
pub struct AllocationPlan {
    family: Family,
    law: TruncationLaw,
    table: Vec<u32>,
    n0: Vec<f64>,
    a_seq: Vec<f64>,
    var_prefactor: f64,
    budget_m: f64,
    predicted_d: f64,
    zero_threshold: u32,
    tail_policy: TailPolicy,
    cost: CostModel,
}

impl AllocationPlan {
    /// Assemble a plan from explicit parts. Intended for tests and tools
    /// that need full control; the family allocators are the normal
    /// constructors.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        family: Family,
        law: TruncationLaw,
        table: Vec<u32>,
        n0: Vec<f64>,
        a_seq: Vec<f64>,
        var_prefactor: f64,
        budget_m: f64,
        predicted_d: f64,
        zero_threshold: u32,
        tail_policy: TailPolicy,
        cost: CostModel,
    ) -> Result<Self> {
        if table.is_empty() || table.len() != n0.len() || table.len() != a_seq.len() {
            return Err(Error::domain(
                "allocation_plan",
                "table, n0 and a_seq must be nonempty and equally long".to_string(),
            ));
        }
        Ok(AllocationPlan {
            family,
            law,
            table,
            n0,
            a_seq,
            var_prefactor,
            budget_m,
            predicted_d,
            zero_threshold,
            tail_policy,
            cost,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Truncation law at the allocation's build point (the estimator derives
    /// the law for each evaluation point from the problem itself; this copy
    /// serves cost prediction and reporting).
    pub fn law(&self) -> &TruncationLaw {
        &self.law
    }

    /// Integer replication table indexed by depth, `0..=n_max`.
    pub fn table(&self) -> &[u32] {
        &self.table
    }

    /// Continuous optimum per depth (1 by convention at depth 0).
    pub fn n0(&self) -> &[f64] {
        &self.n0
    }

    pub fn n_max(&self) -> u32 {
        (self.table.len() - 1) as u32
    }

    pub fn budget_m(&self) -> f64 {
        self.budget_m
    }

    /// Minimized objective `D = (sum sqrt(A B))^2 / M` of the continuous
    /// optimization over depths `n >= 1`.
    pub fn predicted_d(&self) -> f64 {
        self.predicted_d
    }

    pub fn zero_threshold(&self) -> u32 {
        self.zero_threshold
    }

    pub fn tail_policy(&self) -> TailPolicy {
        self.tail_policy
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    /// Replicates to average when the truncation draw equals `n`; depths
    /// beyond the table follow the tail policy.
    pub fn inner_replicates(&self, n: u32) -> u32 {
        match self.table.get(n as usize) {
            Some(&v) => v,
            None => match self.tail_policy {
                TailPolicy::One => 1,
                TailPolicy::Zero => 0,
            },
        }
    }

    /// Re-round the stored continuous optimum with a new zeroing threshold.
    /// Depth 0 stays pinned at one replicate.
    pub fn with_zero_threshold(mut self, zero_threshold: u32) -> Self {
        let rounded = round_allocation(&self.n0[1..], zero_threshold);
        self.table.truncate(1);
        self.table.extend(rounded);
        self.zero_threshold = zero_threshold;
        self
    }

    pub fn with_tail_policy(mut self, tail_policy: TailPolicy) -> Self {
        self.tail_policy = tail_policy;
        self
    }

    /// A-priori bound on `Z * Var(replicate value)`: the family variance
    /// prefactor times `sum a(n)/N(n)` over strata with at least one
    /// replicate. Depths beyond the table carry tail mass below the table
    /// tolerance and are ignored.
    pub fn variance_bound(&self) -> f64 {
        let sum: f64 = self
            .a_seq
            .iter()
            .zip(&self.table)
            .filter(|(_, &n)| n > 0)
            .map(|(&a, &n)| a / n as f64)
            .sum();
        self.var_prefactor * sum
    }

    /// Expected realized cost of this plan under its stored law and cost
    /// model.
    pub fn expected_cost_theta(&self) -> Result<f64> {
        expected_cost(self, &self.law, &self.cost)
    }
}

/// Expected number of elapsed base variates:
/// `Z * d * sum_n pmf(n) * n * N(n)`, including the tail beyond the table
/// under the plan's tail policy.
pub fn expected_cost(plan: &AllocationPlan, law: &TruncationLaw, cost: &CostModel) -> Result<f64> {
    let law_top = law.tail_cutoff(1e-13)?;
    let top = law_top.max(plan.n_max());
    let mut sum = 0.0f64;
    for n in 0..=top {
        let reps = plan.inner_replicates(n);
        if reps == 0 || n == 0 {
            continue;
        }
        sum += law.pmf(n)? * n as f64 * reps as f64;
    }
    Ok(cost.z_outer as f64 * cost.per_node_cost as f64 * sum)
}

/// Shared assembly once a family has produced its `A`, `B`, `M`, law and
/// variance-bound data. `a_bound0` is the depth-0 numerator of the
/// variance bound (1 for every family).
#[allow(clippy::too_many_arguments)]
fn build_plan(
    family: Family,
    law: TruncationLaw,
    a: Vec<f64>,
    b: Vec<f64>,
    m: f64,
    var_prefactor: f64,
    cost: &CostModel,
    minimal_theta_per_unit_b: f64,
) -> Result<AllocationPlan> {
    if a.is_empty() {
        // Degenerate law: every draw is depth 0.
        return AllocationPlan::from_parts(
            family,
            law,
            vec![1],
            vec![1.0],
            vec![1.0],
            var_prefactor,
            m,
            0.0,
            0,
            TailPolicy::One,
            *cost,
        );
    }
    let b_total: f64 = b.iter().sum();
    if m < b_total {
        return Err(Error::BudgetTooSmall {
            m,
            required: b_total,
            minimal_theta: b_total * minimal_theta_per_unit_b,
        });
    }
    let (n0_tail, d) = solve_allocation(&a, &b, m)?;
    let mut table = vec![1u32];
    table.extend(round_allocation(&n0_tail, 0));
    let mut n0 = vec![1.0f64];
    n0.extend(n0_tail);
    let mut a_seq = vec![1.0f64];
    a_seq.extend(a);
    AllocationPlan::from_parts(
        family,
        law,
        table,
        n0,
        a_seq,
        var_prefactor,
        m,
        d,
        0,
        TailPolicy::One,
        *cost,
    )
}

/// Allocation for a Volterra problem at evaluation time `t`.
pub fn volterra_allocation(
    spec: &ProblemSpec,
    norms: &NormReport,
    t: f64,
    cost: &CostModel,
) -> Result<AllocationPlan> {
    if spec.family() != Family::Volterra {
        return Err(Error::InvalidProblem(format!(
            "volterra_allocation requires a Volterra problem, got {}",
            spec.family()
        )));
    }
    if spec.lambda() < 0.0 {
        return Err(Error::InvalidProblem("lambda not positive".to_string()));
    }
    if !(0.0..=spec.horizon()).contains(&t) {
        return Err(Error::domain(
            "volterra_allocation",
            format!("t = {t} outside [0, {}]", spec.horizon()),
        ));
    }
    let lam = spec.lambda() * t;
    let law = TruncationLaw::Poisson { rate: lam };
    let z = cost.z_outer as f64 * cost.per_node_cost as f64;
    let m = lam.exp() * cost.theta_target / z;
    let prefactor = norms.sup_norm_f * norms.sup_norm_f * (-lam).exp();
    let q = lam * norms.sup_norm_k * norms.sup_norm_k;
    let n_max = law.tail_cutoff(TAIL_MASS)?;
    if n_max == 0 || q == 0.0 {
        return build_plan(Family::Volterra, law, Vec::new(), Vec::new(), m, prefactor, cost, 0.0);
    }
    let ln_q = q.ln();
    let ln_lam = lam.ln();
    let mut a = Vec::with_capacity(n_max as usize);
    let mut b = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let nf = n as f64;
        let ln_fact = ln_gamma(nf + 1.0)?;
        a.push((nf * ln_q - 2.0 * ln_fact).exp());
        b.push((nf.ln() + nf * ln_lam - ln_fact).exp());
    }
    // Theta that makes the budget exactly afford N = 1 on every stratum.
    let theta_per_b = z / lam.exp();
    build_plan(Family::Volterra, law, a, b, m, prefactor, cost, theta_per_b)
}

/// Allocation for a Fredholm problem (the law and table are independent of
/// the evaluation point).
pub fn fredholm_allocation(
    spec: &ProblemSpec,
    norms: &NormReport,
    cost: &CostModel,
) -> Result<AllocationPlan> {
    if spec.family() != Family::Fredholm {
        return Err(Error::InvalidProblem(format!(
            "fredholm_allocation requires a Fredholm problem, got {}",
            spec.family()
        )));
    }
    let verdict = crate::problem::validate_problem(spec, norms);
    if !verdict.is_valid() {
        return Err(Error::InvalidProblem(verdict.failures().join("; ")));
    }
    let lambda = spec.lambda();
    let k2 = norms.op_norm_k2;
    let law = TruncationLaw::Geometric { ratio: lambda };
    let z = cost.z_outer as f64 * cost.per_node_cost as f64;
    let m = cost.theta_target / ((1.0 - lambda) * z);
    let prefactor = (1.0 - lambda) * norms.sup_norm_f * norms.sup_norm_f;
    let n_max = law.tail_cutoff(TAIL_MASS)?;
    if n_max == 0 || k2 == 0.0 {
        return build_plan(Family::Fredholm, law, Vec::new(), Vec::new(), m, prefactor, cost, 0.0);
    }
    let mut a = Vec::with_capacity(n_max as usize);
    let mut b = Vec::with_capacity(n_max as usize);
    let ln_lk2 = (lambda * k2).ln();
    let ln_lambda = lambda.ln();
    for n in 1..=n_max {
        let nf = n as f64;
        a.push((nf * ln_lk2).exp());
        b.push((nf.ln() + nf * ln_lambda).exp());
    }
    let theta_per_b = (1.0 - lambda) * z;
    build_plan(Family::Fredholm, law, a, b, m, prefactor, cost, theta_per_b)
}

/// Allocation for an Abel-Volterra problem at evaluation time `t`.
/// `alpha = 0` is accepted and degenerates to the plain Volterra
/// sequences (a cross-family consistency check).
pub fn abel_allocation(
    spec: &ProblemSpec,
    norms: &NormReport,
    t: f64,
    cost: &CostModel,
) -> Result<AllocationPlan> {
    if spec.family() != Family::AbelVolterra {
        return Err(Error::InvalidProblem(format!(
            "abel_allocation requires an Abel-Volterra problem, got {}",
            spec.family()
        )));
    }
    if spec.lambda() < 0.0 {
        return Err(Error::InvalidProblem("lambda not positive".to_string()));
    }
    if !(spec.alpha() >= 0.0 && spec.alpha() < 1.0) {
        return Err(Error::InvalidProblem("alpha not in (0,1)".to_string()));
    }
    if !(0.0..=spec.horizon()).contains(&t) {
        return Err(Error::domain(
            "abel_allocation",
            format!("t = {t} outside [0, {}]", spec.horizon()),
        ));
    }
    let beta = spec.beta();
    let lam_b = spec.lambda() * t.powf(beta);
    let ln_gamma_beta = ln_gamma(beta)?;
    let mu = ln_gamma_beta.exp() * lam_b;
    let law = TruncationLaw::MittagLeffler { beta, mu };
    let z = cost.z_outer as f64 * cost.per_node_cost as f64;
    let norm_e = mittag_leffler(beta, mu, &SeriesTolerance::default())?;
    let m = norm_e * cost.theta_target / z;
    let prefactor = norms.sup_norm_f * norms.sup_norm_f;
    let sup_k = norms.sup_norm_k;
    let n_max = law.tail_cutoff(TAIL_MASS)?;
    if n_max == 0 || sup_k == 0.0 {
        return build_plan(Family::AbelVolterra, law, Vec::new(), Vec::new(), m, prefactor, cost, 0.0);
    }
    let ln_lam_b = lam_b.ln();
    let ln_sup_k = sup_k.ln();
    let mut a = Vec::with_capacity(n_max as usize);
    let mut b = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let nf = n as f64;
        // ln W_n(beta) = n ln Gamma(beta) - ln Gamma(1 + n beta).
        let ln_w = nf * ln_gamma_beta - ln_gamma(1.0 + nf * beta)?;
        a.push((2.0 * ln_w + 2.0 * nf * ln_sup_k + nf * ln_lam_b).exp());
        b.push((nf.ln() + ln_w + nf * ln_lam_b).exp());
    }
    let theta_per_b = z / norm_e;
    build_plan(Family::AbelVolterra, law, a, b, m, prefactor, cost, theta_per_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{compute_norms, parse_expression, ProblemSpec};
    use crate::specfun::{mittag_leffler_gen, polygonal_beta_mass, power_geometric_series};

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn solve_allocation_simple_cases() {
        let (n0, d) = solve_allocation(&[1.0, 1.0], &[1.0, 1.0], 4.0).unwrap();
        assert_eq!(n0, vec![2.0, 2.0]);
        assert_eq!(d, 1.0);

        // Single term: N_0 = M/b, D = a*b/M.
        let (n0, d) = solve_allocation(&[3.0], &[0.5], 7.0).unwrap();
        assert!((n0[0] - 14.0).abs() < 1e-12);
        assert!((d - 3.0 * 0.5 / 7.0).abs() < 1e-15);

        // Doubling M halves D.
        let a = [0.2, 1.0, 5.0];
        let b = [5.0, 1.0, 0.2];
        let (_, d1) = solve_allocation(&a, &b, 8.0).unwrap();
        let (_, d2) = solve_allocation(&a, &b, 16.0).unwrap();
        assert!(rel_close(d1, 2.0 * d2, 1e-14));
    }

    #[test]
    fn solve_allocation_rejects_bad_input() {
        assert!(solve_allocation(&[], &[], 1.0).is_err());
        assert!(solve_allocation(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(solve_allocation(&[1.0, -1.0], &[1.0, 1.0], 1.0).is_err());
        assert!(solve_allocation(&[1.0], &[0.0], 1.0).is_err());
        assert!(solve_allocation(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn solve_allocation_kkt_and_identities() {
        // Pseudo-random positive sequences; KKT proportionality, the
        // D-identity, and constraint tightness at the continuous optimum.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            0.05 + (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0
        };
        for _ in 0..50 {
            let len = 1 + (next() * 2.0) as usize;
            let a: Vec<f64> = (0..len).map(|_| next()).collect();
            let b: Vec<f64> = (0..len).map(|_| next()).collect();
            let m = 1.0 + next() * 10.0;
            let (n0, d) = solve_allocation(&a, &b, m).unwrap();
            let c0 = n0[0] * (b[0] / a[0]).sqrt();
            let mut objective = 0.0;
            let mut spent = 0.0;
            for i in 0..len {
                let ci = n0[i] * (b[i] / a[i]).sqrt();
                assert!(rel_close(ci, c0, 1e-12), "KKT ratio varies: {ci} vs {c0}");
                objective += a[i] / n0[i];
                spent += b[i] * n0[i];
            }
            assert!(rel_close(objective, d, 1e-12), "D identity: {objective} vs {d}");
            assert!(rel_close(spent, m, 1e-12), "constraint not tight: {spent} vs {m}");
        }
    }

    #[test]
    fn round_allocation_contract() {
        assert_eq!(round_allocation(&[2.3, 0.4], 0), vec![3, 1]);
        assert_eq!(round_allocation(&[2.3, 0.4], 10), vec![0, 0]);
        assert_eq!(round_allocation(&[12.0], 10), vec![13]);
    }

    #[test]
    fn rounded_plan_near_brute_force_optimum() {
        // Exhaustive check on a small instance: the floor+1 rounding of the
        // continuous optimum is within 25% of the best integer allocation.
        let a = [1.0, 5.0, 0.2];
        let b = [0.2, 1.0, 5.0];
        let m = 8.0;
        let (n0, _) = solve_allocation(&a, &b, m).unwrap();
        let rounded = round_allocation(&n0, 0);
        let objective = |n: &[u32]| -> f64 {
            a.iter()
                .zip(n)
                .map(|(&ai, &ni)| ai / ni as f64)
                .sum::<f64>()
        };
        let spent = |n: &[u32]| -> f64 {
            b.iter()
                .zip(n)
                .map(|(&bi, &ni)| bi * ni as f64)
                .sum::<f64>()
        };
        let mut best = f64::INFINITY;
        for i in 1..=6u32 {
            for j in 1..=6u32 {
                for k in 1..=6u32 {
                    let cand = [i, j, k];
                    if spent(&cand) <= m {
                        best = best.min(objective(&cand));
                    }
                }
            }
        }
        assert!(best.is_finite());
        // The rounded plan may exceed the (floor-constraint) budget by at
        // most sum B; compare objectives only.
        assert!(
            objective(&rounded) <= 1.25 * best,
            "rounded {:?} objective {} vs brute {}",
            rounded,
            objective(&rounded),
            best
        );
    }

    fn volterra_spec(kernel: &str, lambda: f64) -> (ProblemSpec, NormReport) {
        let spec = ProblemSpec::volterra(
            parse_expression(kernel).unwrap(),
            parse_expression("1").unwrap(),
            lambda,
            1.0,
        )
        .unwrap();
        let norms = compute_norms(&spec, 401).unwrap();
        (spec, norms)
    }

    #[test]
    fn volterra_allocation_degenerate_at_zero_rate() {
        let (spec, norms) = volterra_spec("t*s", 0.0);
        let cost = CostModel::new(100, 1, 1e4).unwrap();
        let plan = volterra_allocation(&spec, &norms, 1.0, &cost).unwrap();
        assert_eq!(plan.table(), &[1]);
        assert_eq!(plan.n_max(), 0);
        assert_eq!(plan.predicted_d(), 0.0);

        // t = 0 with positive lambda degenerates the same way.
        let (spec, norms) = volterra_spec("t*s", 0.5);
        let plan = volterra_allocation(&spec, &norms, 0.0, &cost).unwrap();
        assert_eq!(plan.table(), &[1]);
    }

    #[test]
    fn volterra_allocation_matches_closed_form() {
        // N_0(n) = (M / S) * supK^n / sqrt(n * n!) with the normalizer
        // S = sum_{n>=1} sqrt(n) (Lam supK)^n / (n!)^(3/2) from specfun.
        let (spec, norms) = volterra_spec("(t+s)/2+0.5", 0.7);
        let cost = CostModel::new(50, 1, 2e4).unwrap();
        let t = 0.9;
        let plan = volterra_allocation(&spec, &norms, t, &cost).unwrap();
        let lam = 0.7 * t;
        let sup_k = norms.sup_norm_k;
        let m = lam.exp() * cost.theta_target / (cost.z_outer as f64 * cost.per_node_cost as f64);
        let tol = SeriesTolerance::default();
        let s = mittag_leffler_gen(1.0, 1.5, -0.5, lam * sup_k, &tol).unwrap();
        assert!(rel_close(plan.budget_m(), m, 1e-12));
        for n in 1..=plan.n_max() {
            let nf = n as f64;
            let shape =
                (nf * sup_k.ln() - 0.5 * (nf.ln() + ln_gamma(nf + 1.0).unwrap())).exp();
            let expected = m / s * shape;
            assert!(
                rel_close(plan.n0()[n as usize], expected, 1e-10),
                "n = {n}: {} vs {expected}",
                plan.n0()[n as usize]
            );
        }
        // Predicted D equals S^2/M and the direct objective sum.
        assert!(rel_close(plan.predicted_d(), s * s / m, 1e-10));
        let direct: f64 = (1..=plan.n_max())
            .map(|n| {
                let nf = n as f64;
                let a = (nf * (lam * sup_k * sup_k).ln()
                    - 2.0 * ln_gamma(nf + 1.0).unwrap())
                .exp();
                a / plan.n0()[n as usize]
            })
            .sum();
        assert!(rel_close(plan.predicted_d(), direct, 1e-10));
    }

    #[test]
    fn volterra_allocation_budget_error_reports_minimal_theta() {
        let (spec, norms) = volterra_spec("t*s", 0.5);
        let cost = CostModel::new(1000, 1, 1e-3).unwrap();
        let err = volterra_allocation(&spec, &norms, 1.0, &cost).unwrap_err();
        let Error::BudgetTooSmall { minimal_theta, .. } = err else {
            panic!("expected BudgetTooSmall, got {err:?}");
        };
        // Just feasible at the reported minimal theta.
        let ok_cost = CostModel::new(1000, 1, minimal_theta * 1.0001).unwrap();
        assert!(volterra_allocation(&spec, &norms, 1.0, &ok_cost).is_ok());
        let bad_cost = CostModel::new(1000, 1, minimal_theta * 0.9999).unwrap();
        assert!(volterra_allocation(&spec, &norms, 1.0, &bad_cost).is_err());
    }

    fn fredholm_spec(kernel: &str, lambda: f64) -> (ProblemSpec, NormReport) {
        let spec = ProblemSpec::fredholm(
            parse_expression(kernel).unwrap(),
            parse_expression("u").unwrap(),
            lambda,
            1,
        )
        .unwrap();
        let norms = compute_norms(&spec, 401).unwrap();
        (spec, norms)
    }

    #[test]
    fn fredholm_allocation_matches_closed_form() {
        // N_0(n) = (M / G_{1/2}(lambda sqrt(k2))) * k2^(n/2)/sqrt(n).
        let (spec, norms) = fredholm_spec("u*v", 0.5);
        let cost = CostModel::new(100, 1, 5e3).unwrap();
        let plan = fredholm_allocation(&spec, &norms, &cost).unwrap();
        let k2 = norms.op_norm_k2;
        let m = cost.theta_target / ((1.0 - 0.5) * cost.z_outer as f64);
        let tol = SeriesTolerance::default();
        let g = power_geometric_series(0.5, 0.5 * k2.sqrt(), &tol).unwrap();
        for n in 1..=plan.n_max() {
            let nf = n as f64;
            let expected = m / g * k2.powf(nf / 2.0) / nf.sqrt();
            assert!(
                rel_close(plan.n0()[n as usize], expected, 1e-10),
                "n = {n}: {} vs {expected}",
                plan.n0()[n as usize]
            );
        }
        assert!(rel_close(plan.predicted_d(), g * g / m, 1e-10));
    }

    #[test]
    fn fredholm_allocation_concentrates_at_zero_for_tiny_lambda() {
        let (spec, norms) = fredholm_spec("u*v", 1e-6);
        let cost = CostModel::new(10, 1, 1.0).unwrap();
        let plan = fredholm_allocation(&spec, &norms, &cost).unwrap();
        assert!(plan.n_max() <= 2);
        assert!(plan.law().pmf(0).unwrap() > 0.999998);
    }

    #[test]
    fn fredholm_allocation_rejects_invalid_problem() {
        let (spec, norms) = fredholm_spec("u*v", 1.2);
        let cost = CostModel::new(10, 1, 100.0).unwrap();
        let err = fredholm_allocation(&spec, &norms, &cost).unwrap_err();
        assert!(matches!(err, Error::InvalidProblem(_)));
    }

    fn abel_spec(kernel: &str, lambda: f64, alpha: f64) -> (ProblemSpec, NormReport) {
        let spec = ProblemSpec::abel(
            parse_expression(kernel).unwrap(),
            parse_expression("1").unwrap(),
            lambda,
            1.0,
            alpha,
        )
        .unwrap();
        let norms = compute_norms(&spec, 401).unwrap();
        (spec, norms)
    }

    #[test]
    fn abel_allocation_matches_closed_form() {
        // N_0(n) = (M / S) * sqrt(W_n) supK^n / sqrt(n) with
        // S = sum sqrt(n) z^n / Gamma(1+n beta)^(3/2),
        // z = Lam_b supK Gamma(beta)^(3/2).
        let (spec, norms) = abel_spec("1", 0.5, 0.5);
        let cost = CostModel::new(100, 1, 1e4).unwrap();
        let plan = abel_allocation(&spec, &norms, 1.0, &cost).unwrap();
        let beta = 0.5f64;
        let lam_b = 0.5;
        let sup_k = norms.sup_norm_k;
        let gamma_beta = ln_gamma(beta).unwrap().exp();
        let mu = gamma_beta * lam_b;
        let tol = SeriesTolerance::default();
        let m = mittag_leffler(beta, mu, &tol).unwrap() * cost.theta_target
            / cost.z_outer as f64;
        let z_arg = lam_b * sup_k * gamma_beta.powf(1.5);
        let s = mittag_leffler_gen(beta, 1.5, -0.5, z_arg, &tol).unwrap();
        assert!(rel_close(plan.budget_m(), m, 1e-12));
        for n in 1..=plan.n_max() {
            let nf = n as f64;
            let w_n = polygonal_beta_mass(beta, n).unwrap();
            let expected = m / s * w_n.sqrt() * sup_k.powf(nf) / nf.sqrt();
            assert!(
                rel_close(plan.n0()[n as usize], expected, 1e-10),
                "n = {n}: {} vs {expected}",
                plan.n0()[n as usize]
            );
        }
        assert!(rel_close(plan.predicted_d(), s * s / m, 1e-10));
    }

    #[test]
    fn abel_allocation_at_beta_one_collapses_to_volterra() {
        let (vspec, vnorms) = volterra_spec("(t+s)/2", 0.6);
        let aspec = ProblemSpec::abel(
            parse_expression("(t+s)/2").unwrap(),
            parse_expression("1").unwrap(),
            0.6,
            1.0,
            0.0,
        )
        .unwrap();
        let anorms = compute_norms(&aspec, 401).unwrap();
        let cost = CostModel::new(200, 1, 4e4).unwrap();
        let vplan = volterra_allocation(&vspec, &vnorms, 1.0, &cost).unwrap();
        let aplan = abel_allocation(&aspec, &anorms, 1.0, &cost).unwrap();
        assert_eq!(vplan.table(), aplan.table());
        assert_eq!(vplan.n_max(), aplan.n_max());
        assert!(rel_close(vplan.predicted_d(), aplan.predicted_d(), 1e-10));
        assert!(rel_close(vplan.budget_m(), aplan.budget_m(), 1e-10));
        for (x, y) in vplan.n0().iter().zip(aplan.n0()) {
            assert!(rel_close(*x, *y, 1e-10));
        }
    }

    #[test]
    fn abel_allocation_degenerate_at_zero_time() {
        let (spec, norms) = abel_spec("1", 0.5, 0.5);
        let cost = CostModel::new(100, 1, 1e4).unwrap();
        let plan = abel_allocation(&spec, &norms, 0.0, &cost).unwrap();
        assert_eq!(plan.table(), &[1]);
    }

    #[test]
    fn expected_cost_contract() {
        let cost = CostModel::new(10, 3, 100.0).unwrap();
        let law = TruncationLaw::Geometric { ratio: 0.5 };
        let n_max = law.tail_cutoff(1e-13).unwrap() as usize;
        // N = 0 everywhere: zero cost.
        let zeros = AllocationPlan::from_parts(
            Family::Fredholm,
            law,
            vec![0; n_max + 1],
            vec![0.0; n_max + 1],
            vec![0.0; n_max + 1],
            0.0,
            1.0,
            0.0,
            0,
            TailPolicy::Zero,
            cost,
        )
        .unwrap();
        assert_eq!(expected_cost(&zeros, &law, &cost).unwrap(), 0.0);

        // Geometric(0.5) has mean 1; N = 2, Z = 10, d = 3 gives 60.
        let twos = AllocationPlan::from_parts(
            Family::Fredholm,
            law,
            vec![2; n_max + 1],
            vec![2.0; n_max + 1],
            vec![0.0; n_max + 1],
            0.0,
            1.0,
            0.0,
            0,
            TailPolicy::Zero,
            cost,
        )
        .unwrap();
        let got = expected_cost(&twos, &law, &cost).unwrap();
        assert!((got - 60.0).abs() < 1e-6, "{got}");

        // Poisson(1) with N = 1, Z = 1, d = 1: expected depth 1.
        let cost1 = CostModel::new(1, 1, 100.0).unwrap();
        let poisson = TruncationLaw::Poisson { rate: 1.0 };
        let p_max = poisson.tail_cutoff(1e-13).unwrap() as usize;
        let ones = AllocationPlan::from_parts(
            Family::Volterra,
            poisson,
            vec![1; p_max + 1],
            vec![1.0; p_max + 1],
            vec![0.0; p_max + 1],
            0.0,
            1.0,
            0.0,
            0,
            TailPolicy::One,
            cost1,
        )
        .unwrap();
        let got = expected_cost(&ones, &poisson, &cost1).unwrap();
        assert!((got - 1.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn rounded_budget_overshoot_is_bounded_on_comfortable_instances() {
        // With M at least 20x the cost of N = 1, floor+1 rounding overspends
        // by at most 5%.
        let (spec, norms) = volterra_spec("t*s", 0.5);
        let cost = CostModel::new(10, 1, 1e4).unwrap();
        let plan = volterra_allocation(&spec, &norms, 1.0, &cost).unwrap();
        let lam = 0.5f64;
        let mut spent = 0.0;
        for n in 1..=plan.n_max() {
            let nf = n as f64;
            let b = (nf.ln() + nf * lam.ln() - ln_gamma(nf + 1.0).unwrap()).exp();
            spent += b * plan.table()[n as usize] as f64;
        }
        assert!(spent <= plan.budget_m() * 1.05, "{spent} vs {}", plan.budget_m());
    }

    #[test]
    fn zero_threshold_and_tail_policy_builders() {
        let (spec, norms) = fredholm_spec("u*v", 0.5);
        let cost = CostModel::new(100, 1, 500.0).unwrap();
        let plan = fredholm_allocation(&spec, &norms, &cost).unwrap();
        assert_eq!(plan.inner_replicates(0), 1);
        assert_eq!(plan.inner_replicates(plan.n_max() + 5), 1);
        let zeroed = plan.clone().with_zero_threshold(10).with_tail_policy(TailPolicy::Zero);
        assert_eq!(zeroed.inner_replicates(0), 1);
        assert_eq!(zeroed.inner_replicates(zeroed.n_max() + 5), 0);
        // Deep strata have tiny N_0 and get zeroed in paper mode.
        assert_eq!(zeroed.table()[zeroed.n_max() as usize], 0);
        // Re-rounding with threshold 0 restores the original table.
        let restored = zeroed.with_zero_threshold(0);
        assert_eq!(restored.table(), plan.table());
    }

    #[test]
    fn variance_bound_skips_zeroed_strata() {
        let cost = CostModel::new(10, 1, 100.0).unwrap();
        let law = TruncationLaw::Geometric { ratio: 0.5 };
        let plan = AllocationPlan::from_parts(
            Family::Fredholm,
            law,
            vec![1, 2, 0],
            vec![1.0, 1.5, 0.2],
            vec![1.0, 0.5, 0.25],
            2.0,
            1.0,
            0.0,
            10,
            TailPolicy::Zero,
            cost,
        )
        .unwrap();
        // 2.0 * (1/1 + 0.5/2), skipping the zeroed stratum.
        assert!((plan.variance_bound() - 2.0 * 1.25).abs() < 1e-15);
    }
}
