//! Exact instance modeling and learnability diagnostics.
//!
//! An instance is a pair `(P, c)`: a joint distribution `P` over the hidden
//! label `Y` and the `K` sensor outputs `Y^1..Y^K`, plus a cost profile with
//! cumulative query costs `C_1 <= .. <= C_K`. Stopping at sensor `j` incurs
//! total cost `C_j + gamma_j` with `gamma_j = P{Y != Y^j}`.
//!
//! Everything in this module is computed by exact enumeration of the pmf
//! support, so the outputs are reference values rather than estimates. The
//! two structural properties that decide label-free learnability are:
//!
//! * strong dominance: on every sample, once some sensor is correct all
//!   later sensors are correct (sample-wise nesting of error events);
//! * weak dominance: `C_j - C_{i*} > p_{i*j}` for every `j > i*`, where
//!   `p_ij = P{Y^i != Y^j}` and `i*` is the optimal sensor. Equivalently
//!   `xi > 0` for the margin computed by [`diagnose`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Serialize, Serializer};

use crate::error::{Result, UssError};

/// Largest supported cascade size; enumeration touches up to `2^(K+1)` outcomes.
pub const MAX_SENSORS: usize = 20;

/// Absolute tolerance for pmf normalization and boundary membership tests.
pub const PROB_TOL: f64 = 1e-12;

/// One joint realization `(y, y^1, .., y^K)` packed into a bitmask: bit 0
/// holds the label, bit `j` holds sensor `j`'s output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Outcome(u32);

impl Outcome {
    pub fn pack(label: bool, sensors: &[bool]) -> Outcome {
        debug_assert!(sensors.len() <= MAX_SENSORS);
        let mut bits = label as u32;
        for (idx, &s) in sensors.iter().enumerate() {
            bits |= (s as u32) << (idx + 1);
        }
        Outcome(bits)
    }

    pub fn from_bits(bits: u32) -> Outcome {
        Outcome(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn label(self) -> bool {
        self.0 & 1 == 1
    }

    /// Output of sensor `j` (1-based).
    pub fn sensor(self, j: usize) -> bool {
        debug_assert!(j >= 1);
        (self.0 >> j) & 1 == 1
    }

    /// Outputs of sensors `1..=len`, in cascade order.
    pub fn sensor_prefix(self, len: usize) -> Vec<bool> {
        (1..=len).map(|j| self.sensor(j)).collect()
    }

    pub fn sensor_correct(self, j: usize) -> bool {
        self.sensor(j) == self.label()
    }

    /// Whether sensors `i` and `j` disagree on this sample.
    pub fn disagree(self, i: usize, j: usize) -> bool {
        self.sensor(i) != self.sensor(j)
    }
}

/// Joint pmf over `(Y, Y^1..Y^K)`, stored sparsely by outcome bitmask.
///
/// Construction validates that all mass is nonnegative and sums to one
/// within [`PROB_TOL`]. Zero-mass entries are dropped, so `support` only
/// yields outcomes that can actually occur.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    k: usize,
    pmf: BTreeMap<u32, f64>,
}

impl JointDistribution {
    pub fn from_pmf(k: usize, entries: impl IntoIterator<Item = (Outcome, f64)>) -> Result<Self> {
        if k == 0 {
            return Err(UssError::InvalidInstance("need at least one sensor".into()));
        }
        if k > MAX_SENSORS {
            return Err(UssError::Capacity(format!(
                "K = {k} exceeds the enumerable limit {MAX_SENSORS}"
            )));
        }
        let mut pmf = BTreeMap::new();
        let limit = 1u32 << (k + 1);
        // compensated summation: empirical pmfs can have ~2^(K+1) entries,
        // and naive accumulation would eat most of the 1e-12 budget
        let mut total = 0.0f64;
        let mut comp = 0.0f64;
        for (outcome, p) in entries {
            if outcome.bits() >= limit {
                return Err(UssError::InvalidInstance(format!(
                    "outcome bits {:#b} out of range for K = {k}",
                    outcome.bits()
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(UssError::InvalidInstance(format!(
                    "probability {p} for outcome {:#b} is not in [0, 1]",
                    outcome.bits()
                )));
            }
            let y = p - comp;
            let t = total + y;
            comp = (t - total) - y;
            total = t;
            if p > 0.0 {
                *pmf.entry(outcome.bits()).or_insert(0.0) += p;
            }
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(UssError::InvalidInstance(format!(
                "pmf sums to {total}, expected 1 within {PROB_TOL}"
            )));
        }
        Ok(JointDistribution { k, pmf })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Positive-mass outcomes in ascending bitmask order.
    pub fn support(&self) -> impl Iterator<Item = (Outcome, f64)> + '_ {
        self.pmf.iter().map(|(&bits, &p)| (Outcome(bits), p))
    }

    pub fn mass(&self, outcome: Outcome) -> f64 {
        self.pmf.get(&outcome.bits()).copied().unwrap_or(0.0)
    }

    /// Total mass of outcomes satisfying `pred`.
    pub fn prob_where(&self, pred: impl Fn(Outcome) -> bool) -> f64 {
        self.support()
            .filter(|&(o, _)| pred(o))
            .map(|(_, p)| p)
            .sum()
    }

    /// Marginal error rates `gamma_j = P{Y != Y^j}` for `j = 1..=K`
    /// (element `j-1` of the returned vector).
    pub fn error_rates(&self) -> Vec<f64> {
        (1..=self.k)
            .map(|j| self.prob_where(|o| !o.sensor_correct(j)))
            .collect()
    }

    /// Pairwise disagreement matrix `p_ij = P{Y^i != Y^j}`, `K x K`,
    /// symmetric with zero diagonal (`[i-1][j-1]` addressing).
    pub fn disagreement_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.k;
        let mut m = vec![vec![0.0; k]; k];
        for i in 1..=k {
            for j in (i + 1)..=k {
                let p = self.prob_where(|o| o.disagree(i, j));
                m[i - 1][j - 1] = p;
                m[j - 1][i - 1] = p;
            }
        }
        m
    }

    /// Exact decomposition of an error-rate gap into disagreement terms:
    /// returns `(gamma_i - gamma_j, p_ij - 2 * P{Y^i = Y, Y^j != Y})`.
    /// The two components are equal for every joint distribution, which is
    /// what makes disagreement a usable label-free proxy: it always upper
    /// bounds `max(0, gamma_j - gamma_i)`.
    pub fn error_gap_decomposition(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        if i == j || i < 1 || j < 1 || i > self.k || j > self.k {
            return Err(UssError::InvalidArgument(format!(
                "need distinct sensor indices in 1..={}, got ({i}, {j})",
                self.k
            )));
        }
        let gap = self.prob_where(|o| !o.sensor_correct(i)) - self.prob_where(|o| !o.sensor_correct(j));
        let p_ij = self.prob_where(|o| o.disagree(i, j));
        let i_right_j_wrong = self.prob_where(|o| o.sensor_correct(i) && !o.sensor_correct(j));
        Ok((gap, p_ij - 2.0 * i_right_j_wrong))
    }

    /// Sample-wise nesting check: on every positive-mass outcome, once some
    /// sensor agrees with the label all deeper sensors agree too.
    pub fn is_strongly_dominant(&self) -> bool {
        self.support().all(|(o, _)| {
            let mut seen_correct = false;
            for j in 1..=self.k {
                let correct = o.sensor_correct(j);
                if seen_correct && !correct {
                    return false;
                }
                seen_correct |= correct;
            }
            true
        })
    }
}

/// Per-stage sensor costs plus the scale `lambda` that converts them into
/// the cumulative query costs used by every diagnostic:
/// `C_j = lambda * (c_1 + .. + c_j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostProfile {
    per_stage: Vec<f64>,
    lambda: f64,
    cumulative: Vec<f64>,
}

impl CostProfile {
    pub fn from_per_stage(per_stage: Vec<f64>, lambda: f64) -> Result<Self> {
        Self::validate_lambda(lambda)?;
        if per_stage.is_empty() {
            return Err(UssError::InvalidInstance("empty cost profile".into()));
        }
        if per_stage.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(UssError::InvalidInstance(
                "per-stage costs must be finite and nonnegative".into(),
            ));
        }
        let mut cumulative = Vec::with_capacity(per_stage.len());
        let mut running = 0.0;
        for &c in &per_stage {
            running += c;
            cumulative.push(lambda * running);
        }
        Ok(CostProfile {
            per_stage,
            lambda,
            cumulative,
        })
    }

    /// Builds a profile from raw cumulative costs (pre-`lambda`); they must
    /// be nonnegative and nondecreasing.
    pub fn from_cumulative(cumulative_raw: Vec<f64>, lambda: f64) -> Result<Self> {
        Self::validate_lambda(lambda)?;
        if cumulative_raw.is_empty() {
            return Err(UssError::InvalidInstance("empty cost profile".into()));
        }
        if cumulative_raw.iter().any(|c| !c.is_finite()) {
            return Err(UssError::InvalidInstance("cumulative costs must be finite".into()));
        }
        if cumulative_raw[0] < 0.0 {
            return Err(UssError::InvalidInstance("cumulative costs must be nonnegative".into()));
        }
        if cumulative_raw.windows(2).any(|w| w[1] < w[0]) {
            return Err(UssError::InvalidInstance(
                "cumulative costs must be nondecreasing".into(),
            ));
        }
        let mut per_stage = Vec::with_capacity(cumulative_raw.len());
        let mut prev = 0.0;
        for &c in &cumulative_raw {
            per_stage.push(c - prev);
            prev = c;
        }
        let cumulative = cumulative_raw.iter().map(|c| lambda * c).collect();
        Ok(CostProfile {
            per_stage,
            lambda,
            cumulative,
        })
    }

    fn validate_lambda(lambda: f64) -> Result<()> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(UssError::InvalidInstance(format!(
                "lambda must be a positive real, got {lambda}"
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.per_stage.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn per_stage(&self) -> &[f64] {
        &self.per_stage
    }

    /// `lambda`-scaled cumulative costs `C_1..C_K`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

fn ser_maybe_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// Everything exactly computable about an instance: marginals, pairwise
/// disagreements, the optimal sensor, per-arm gaps, and the two dominance
/// verdicts. Vectors are indexed by `sensor - 1`; the 1-based accessors
/// avoid off-by-one mistakes at call sites.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceDiagnostics {
    pub k: usize,
    /// `gamma_j = P{Y != Y^j}`.
    pub gamma: Vec<f64>,
    /// `p_ij = P{Y^i != Y^j}` (symmetric, zero diagonal).
    pub disagreement: Vec<Vec<f64>>,
    /// `lambda`-scaled cumulative costs `C_j`.
    pub cumulative_costs: Vec<f64>,
    /// `C_j + gamma_j`.
    pub total_cost: Vec<f64>,
    /// Optimal sensor: the largest index attaining the minimum total cost.
    pub i_star: usize,
    /// Total-cost gaps `Delta_j = C_j + gamma_j - (C_i* + gamma_i*)`.
    pub delta: Vec<f64>,
    /// Slack of the disagreement proxy over the true error gap for the pair
    /// `(i*, j)`; zero at `j = i*` and on sample-wise nested pairs.
    pub kappa: Vec<f64>,
    /// Effective per-arm margins: `Delta_j + kappa_j` below `i*`,
    /// `Delta_j - kappa_j` above (the latter equals `C_j - C_i* - p_i*j`).
    pub xi_per_arm: Vec<f64>,
    /// `min_{j > i*} (C_j - C_i* - p_i*j)`; `+inf` when `i* = K`.
    #[serde(serialize_with = "ser_maybe_inf")]
    pub xi: f64,
    /// `min_{j > i*} (C_j - C_i*) / p_i*j`; ratios with zero denominator
    /// count as `+inf`, and `i* = K` gives `+inf`.
    #[serde(serialize_with = "ser_maybe_inf")]
    pub rho: f64,
    pub sd_holds: bool,
    /// Strict margin test `xi > 0`; holds vacuously when `i* = K`.
    pub wd_holds: bool,
}

impl InstanceDiagnostics {
    pub fn gamma_of(&self, j: usize) -> f64 {
        self.gamma[j - 1]
    }

    pub fn disagreement_of(&self, i: usize, j: usize) -> f64 {
        self.disagreement[i - 1][j - 1]
    }

    pub fn cumulative_cost_of(&self, j: usize) -> f64 {
        self.cumulative_costs[j - 1]
    }

    pub fn total_cost_of(&self, j: usize) -> f64 {
        self.total_cost[j - 1]
    }

    pub fn delta_of(&self, j: usize) -> f64 {
        self.delta[j - 1]
    }

    pub fn kappa_of(&self, j: usize) -> f64 {
        self.kappa[j - 1]
    }

    pub fn xi_of(&self, j: usize) -> f64 {
        self.xi_per_arm[j - 1]
    }

    /// Candidate brackets computed from the true disagreement matrix: the
    /// lower set keeps sensors whose cost increments over every shallower
    /// sensor are covered by disagreement, the upper set keeps sensors whose
    /// increments to every deeper sensor strictly exceed it. On weakly
    /// dominant instances the intersection is exactly `{i_star}`.
    pub fn bracket_sets(&self) -> (BTreeSet<usize>, BTreeSet<usize>) {
        bracket_sets(&self.cumulative_costs, &self.disagreement)
    }

    /// Learnability test that does not assume sensors are ordered by error
    /// rate: for every `j > i*` the cost gap `C_j - C_i*` must avoid the
    /// ambiguous interval `(max(0, gamma_i* - gamma_j), p_i*j]`. Membership
    /// at the right endpoint is decided with tolerance [`PROB_TOL`]. On
    /// instances whose error rates decrease along the cascade this agrees
    /// with `wd_holds`.
    pub fn learnable_without_order(&self) -> bool {
        let i = self.i_star;
        ((i + 1)..=self.k).all(|j| {
            let x = self.cumulative_cost_of(j) - self.cumulative_cost_of(i);
            let lo = (self.gamma_of(i) - self.gamma_of(j)).max(0.0);
            let hi = self.disagreement_of(i, j);
            !(x > lo && x <= hi + PROB_TOL)
        })
    }

    /// Whether every sensor before the optimal one errs at least as often
    /// as it: `gamma_j >= gamma_i*` for all `j < i*`. Guaranteed whenever
    /// costs are nondecreasing, so a failure indicates an inconsistent
    /// instance rather than an unlucky one.
    pub fn prefix_errors_dominate(&self) -> bool {
        (1..self.i_star).all(|j| self.gamma_of(j) >= self.gamma_of(self.i_star) - PROB_TOL)
    }
}

/// Largest index attaining the minimum of `total_cost` (1-based). Breaking
/// ties toward the deeper sensor is the risk-averse choice: among equals it
/// prefers the one whose optimality is certifiable from disagreements.
pub fn optimal_sensor(total_cost: &[f64]) -> Result<usize> {
    if total_cost.is_empty() {
        return Err(UssError::InvalidArgument("empty total-cost list".into()));
    }
    if total_cost.iter().any(|c| !c.is_finite()) {
        return Err(UssError::InvalidArgument("total costs must be finite".into()));
    }
    let mut best = 0;
    for (idx, &c) in total_cost.iter().enumerate() {
        if c <= total_cost[best] {
            best = idx;
        }
    }
    Ok(best + 1)
}

/// Candidate brackets from cumulative costs and a pairwise probability
/// matrix; see [`InstanceDiagnostics::bracket_sets`]. Sensor 1 always sits
/// in the lower set and sensor `K` in the upper set.
pub fn bracket_sets(cumulative: &[f64], p: &[Vec<f64>]) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let k = cumulative.len();
    let mut low = BTreeSet::new();
    let mut high = BTreeSet::new();
    low.insert(1);
    high.insert(k);
    for i in 1..=k {
        if i > 1
            && (1..i).all(|j| cumulative[i - 1] - cumulative[j - 1] <= p[j - 1][i - 1])
        {
            low.insert(i);
        }
        if i < k
            && ((i + 1)..=k).all(|j| cumulative[j - 1] - cumulative[i - 1] > p[i - 1][j - 1])
        {
            high.insert(i);
        }
    }
    (low, high)
}

/// Runs the full exact analysis of `(dist, costs)`.
pub fn diagnose(dist: &JointDistribution, costs: &CostProfile) -> Result<InstanceDiagnostics> {
    let k = dist.k();
    if costs.k() != k {
        return Err(UssError::InvalidInstance(format!(
            "cost profile has {} stages but the distribution has {k} sensors",
            costs.k()
        )));
    }
    let gamma = dist.error_rates();
    let disagreement = dist.disagreement_matrix();
    let cumulative = costs.cumulative().to_vec();
    let total_cost: Vec<f64> = (0..k).map(|j| cumulative[j] + gamma[j]).collect();
    let i_star = optimal_sensor(&total_cost)?;

    let mut delta = vec![0.0; k];
    let mut kappa = vec![0.0; k];
    let mut xi_per_arm = vec![0.0; k];
    for j in 1..=k {
        if j == i_star {
            continue;
        }
        let d = total_cost[j - 1] - total_cost[i_star - 1];
        let p = disagreement[i_star - 1][j - 1];
        let kap = if j < i_star {
            p - (gamma[j - 1] - gamma[i_star - 1])
        } else {
            p - (gamma[i_star - 1] - gamma[j - 1])
        };
        delta[j - 1] = d;
        kappa[j - 1] = kap;
        xi_per_arm[j - 1] = if j < i_star { d + kap } else { d - kap };
    }

    let mut xi = f64::INFINITY;
    let mut rho = f64::INFINITY;
    for j in (i_star + 1)..=k {
        let gap = cumulative[j - 1] - cumulative[i_star - 1];
        let p = disagreement[i_star - 1][j - 1];
        xi = xi.min(gap - p);
        let ratio = if p > 0.0 { gap / p } else { f64::INFINITY };
        rho = rho.min(ratio);
    }
    let wd_holds = xi > 0.0;

    Ok(InstanceDiagnostics {
        k,
        gamma,
        disagreement,
        cumulative_costs: cumulative,
        total_cost,
        i_star,
        delta,
        kappa,
        xi_per_arm,
        xi,
        rho,
        sd_holds: dist.is_strongly_dominant(),
        wd_holds,
    })
}
