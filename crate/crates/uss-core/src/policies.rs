//! Online selection policies over a sensor cascade.
//!
//! The main policy selects by bracketing the optimal sensor with optimistic
//! pairwise disagreement estimates. Querying up to sensor `I_t` reveals the
//! outputs `Y^1..Y^{I_t}` (never the label), so exactly the pairs
//! `i < j <= I_t` get a new disagreement observation each round; shallower
//! selections freeze the deeper pairs.
//!
//! Round 1 always queries the full cascade, which puts one observation on
//! every pair. From round 2 on, with `p_hat` the relative disagreement
//! frequency and `Psi = sqrt(alpha * ln f(t) / N)`:
//!
//! * lower set: sensor `i` stays a candidate while its cost increment over
//!   every shallower `j` is covered by the optimistic disagreement,
//!   `C_i - C_j <= p_hat_ji + Psi_ji`, with sensor 1 always included;
//! * upper set: sensor `i` is a candidate once every deeper increment
//!   strictly exceeds it, `C_j - C_i > p_hat_ij + Psi_ij`, with sensor `K`
//!   always included;
//! * play the smallest sensor in the intersection, or `K` when empty.
//!
//! The [`ConfidenceSide::Lower`] ablation uses `p_hat - Psi` in the upper
//! set. That variant can latch onto a cheap suboptimal sensor: once it
//! stops querying a pair, the pair's estimate is frozen while its bonus
//! grows, so the erroneous strict inequality can never be falsified.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UssError};
use crate::model::MAX_SENSORS;

/// Confidence-bonus growth function `f(t)`; only `f(t) = t` is offered,
/// which keeps the exploration constant `sum_t f(t)^(-2 alpha)` finite for
/// every `alpha > 0.5`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    #[default]
    #[serde(rename = "t")]
    Identity,
}

impl Growth {
    pub fn value(self, t: u64) -> f64 {
        match self {
            Growth::Identity => t as f64,
        }
    }

    pub fn ln(self, t: u64) -> f64 {
        match self {
            Growth::Identity => (t as f64).ln(),
        }
    }
}

/// Which side of the confidence interval feeds the upper bracket set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceSide {
    /// Standard optimistic test (`p_hat + Psi`).
    Upper,
    /// Ablation (`p_hat - Psi`); not consistent, kept for comparison runs.
    Lower,
}

/// Symmetric pairwise disagreement counters for `i < j <= K`, stored as a
/// flat triangle. Queries canonicalize index order, so `p_hat(i, j)` and
/// `p_hat(j, i)` are the same number.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    k: usize,
    n: Vec<u64>,
    d: Vec<u64>,
}

impl PairStats {
    pub fn new(k: usize) -> Self {
        let len = k * (k - 1) / 2;
        PairStats {
            k,
            n: vec![0; len],
            d: vec![0; len],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= 1 && j >= 1 && i != j && i <= self.k && j <= self.k);
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        (lo - 1) * self.k - lo * (lo - 1) / 2 + (hi - lo - 1)
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.n[self.idx(i, j)]
    }

    pub fn disagreements(&self, i: usize, j: usize) -> u64 {
        self.d[self.idx(i, j)]
    }

    /// Relative disagreement frequency; `None` before any observation.
    pub fn p_hat(&self, i: usize, j: usize) -> Option<f64> {
        let idx = self.idx(i, j);
        if self.n[idx] == 0 {
            None
        } else {
            Some(self.d[idx] as f64 / self.n[idx] as f64)
        }
    }

    pub fn record(&mut self, i: usize, j: usize, disagree: bool) {
        let idx = self.idx(i, j);
        self.n[idx] += 1;
        self.d[idx] += disagree as u64;
    }

    /// Records the disagreement indicators of all pairs within a revealed
    /// prefix `Y^1..Y^len`.
    pub fn record_prefix(&mut self, outputs: &[bool]) {
        for i in 1..outputs.len() {
            for j in (i + 1)..=outputs.len() {
                self.record(i, j, outputs[i - 1] != outputs[j - 1]);
            }
        }
    }
}

fn validate_costs(costs: &[f64]) -> Result<()> {
    if costs.is_empty() || costs.len() > MAX_SENSORS {
        return Err(UssError::InvalidArgument(format!(
            "need between 1 and {MAX_SENSORS} cumulative costs, got {}",
            costs.len()
        )));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(UssError::InvalidArgument("costs must be finite".into()));
    }
    if costs.windows(2).any(|w| w[1] < w[0]) {
        return Err(UssError::InvalidArgument(
            "cumulative costs must be nondecreasing".into(),
        ));
    }
    Ok(())
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.5) || !alpha.is_finite() {
        return Err(UssError::InvalidArgument(format!(
            "alpha must be a finite real > 0.5, got {alpha}"
        )));
    }
    Ok(())
}

/// Disagreement-UCB cascade selection state.
#[derive(Debug, Clone)]
pub struct UssUcbState {
    costs: Vec<f64>,
    alpha: f64,
    growth: Growth,
    side: ConfidenceSide,
    pairs: PairStats,
    completed: u64,
    pending: Option<usize>,
}

impl UssUcbState {
    pub fn new(costs: &[f64], alpha: f64, growth: Growth, side: ConfidenceSide) -> Result<Self> {
        validate_costs(costs)?;
        validate_alpha(alpha)?;
        Ok(UssUcbState {
            costs: costs.to_vec(),
            alpha,
            growth,
            side,
            pairs: PairStats::new(costs.len()),
            completed: 0,
            pending: None,
        })
    }

    pub fn k(&self) -> usize {
        self.costs.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn side(&self) -> ConfidenceSide {
        self.side
    }

    /// Completed select/update rounds.
    pub fn rounds(&self) -> u64 {
        self.completed
    }

    pub fn pair_stats(&self) -> &PairStats {
        &self.pairs
    }

    pub fn p_hat(&self, i: usize, j: usize) -> Option<f64> {
        self.pairs.p_hat(i, j)
    }

    /// Confidence bonus the upcoming round would use for pair `(i, j)`.
    pub fn psi(&self, i: usize, j: usize) -> Option<f64> {
        let n = self.pairs.count(i, j);
        if n == 0 {
            return None;
        }
        let t = self.completed + 1;
        Some((self.alpha * self.growth.ln(t) / n as f64).sqrt())
    }

    /// Bracket sets the upcoming selection will intersect; `None` during
    /// the forced full-cascade round.
    pub fn selection_sets(&self) -> Option<(BTreeSet<usize>, BTreeSet<usize>)> {
        if self.completed == 0 {
            return None;
        }
        let k = self.k();
        let optimistic = |i: usize, j: usize| {
            let p = self.pairs.p_hat(i, j).expect("all pairs seeded in round 1");
            p + self.psi(i, j).expect("all pairs seeded in round 1")
        };
        let upper_term = |i: usize, j: usize| match self.side {
            ConfidenceSide::Upper => optimistic(i, j),
            ConfidenceSide::Lower => {
                let p = self.pairs.p_hat(i, j).expect("all pairs seeded in round 1");
                p - self.psi(i, j).expect("all pairs seeded in round 1")
            }
        };
        let mut low = BTreeSet::new();
        let mut high = BTreeSet::new();
        low.insert(1);
        high.insert(k);
        for i in 1..=k {
            if i > 1 && (1..i).all(|j| self.costs[i - 1] - self.costs[j - 1] <= optimistic(j, i)) {
                low.insert(i);
            }
            if i < k && ((i + 1)..=k).all(|j| self.costs[j - 1] - self.costs[i - 1] > upper_term(i, j))
            {
                high.insert(i);
            }
        }
        Some((low, high))
    }

    pub fn select(&mut self) -> Result<usize> {
        if self.pending.is_some() {
            return Err(UssError::InvalidArgument(
                "select called twice without an update".into(),
            ));
        }
        let arm = match self.selection_sets() {
            None => self.k(),
            Some((low, high)) => low
                .intersection(&high)
                .next()
                .copied()
                .unwrap_or(self.k()),
        };
        self.pending = Some(arm);
        Ok(arm)
    }

    /// Consumes the revealed prefix `Y^1..Y^{I_t}` for the pending round.
    pub fn update(&mut self, outputs: &[bool]) -> Result<()> {
        let arm = self.pending.ok_or_else(|| {
            UssError::InvalidArgument("update called without a pending selection".into())
        })?;
        if outputs.len() != arm {
            return Err(UssError::InvalidArgument(format!(
                "selected sensor {arm} but observed a prefix of length {}",
                outputs.len()
            )));
        }
        self.pairs.record_prefix(outputs);
        self.pending = None;
        self.completed += 1;
        Ok(())
    }
}

/// Baseline with revealed labels: same bracket construction, but the
/// disagreement proxy is replaced by the clipped difference of estimated
/// marginal error rates, `max(0, gamma_hat_a - gamma_hat_b)` for `a < b`,
/// with the bonus built on `min(n_a, n_b)` label observations.
#[derive(Debug, Clone)]
pub struct SupervisedState {
    costs: Vec<f64>,
    alpha: f64,
    growth: Growth,
    n: Vec<u64>,
    errors: Vec<u64>,
    completed: u64,
    pending: Option<usize>,
}

impl SupervisedState {
    pub fn new(costs: &[f64], alpha: f64, growth: Growth) -> Result<Self> {
        validate_costs(costs)?;
        validate_alpha(alpha)?;
        let k = costs.len();
        Ok(SupervisedState {
            costs: costs.to_vec(),
            alpha,
            growth,
            n: vec![0; k],
            errors: vec![0; k],
            completed: 0,
            pending: None,
        })
    }

    pub fn k(&self) -> usize {
        self.costs.len()
    }

    pub fn rounds(&self) -> u64 {
        self.completed
    }

    /// Estimated marginal error rates; `None` before any observation.
    pub fn gamma_hat(&self, j: usize) -> Option<f64> {
        if self.n[j - 1] == 0 {
            None
        } else {
            Some(self.errors[j - 1] as f64 / self.n[j - 1] as f64)
        }
    }

    fn proxy(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let ga = self.gamma_hat(a).expect("all sensors seeded in round 1");
        let gb = self.gamma_hat(b).expect("all sensors seeded in round 1");
        (ga - gb).max(0.0)
    }

    fn psi(&self, i: usize, j: usize) -> f64 {
        let n = self.n[i - 1].min(self.n[j - 1]);
        debug_assert!(n > 0);
        let t = self.completed + 1;
        (self.alpha * self.growth.ln(t) / n as f64).sqrt()
    }

    pub fn selection_sets(&self) -> Option<(BTreeSet<usize>, BTreeSet<usize>)> {
        if self.completed == 0 {
            return None;
        }
        let k = self.k();
        let term = |i: usize, j: usize| self.proxy(i, j) + self.psi(i, j);
        let mut low = BTreeSet::new();
        let mut high = BTreeSet::new();
        low.insert(1);
        high.insert(k);
        for i in 1..=k {
            if i > 1 && (1..i).all(|j| self.costs[i - 1] - self.costs[j - 1] <= term(j, i)) {
                low.insert(i);
            }
            if i < k && ((i + 1)..=k).all(|j| self.costs[j - 1] - self.costs[i - 1] > term(i, j)) {
                high.insert(i);
            }
        }
        Some((low, high))
    }

    pub fn select(&mut self) -> Result<usize> {
        if self.pending.is_some() {
            return Err(UssError::InvalidArgument(
                "select called twice without an update".into(),
            ));
        }
        let arm = match self.selection_sets() {
            None => self.k(),
            Some((low, high)) => low
                .intersection(&high)
                .next()
                .copied()
                .unwrap_or(self.k()),
        };
        self.pending = Some(arm);
        Ok(arm)
    }

    /// Consumes the revealed prefix plus the true label for the pending
    /// round; every queried sensor gets a labeled observation.
    pub fn update(&mut self, outputs: &[bool], label: bool) -> Result<()> {
        let arm = self.pending.ok_or_else(|| {
            UssError::InvalidArgument("update called without a pending selection".into())
        })?;
        if outputs.len() != arm {
            return Err(UssError::InvalidArgument(format!(
                "selected sensor {arm} but observed a prefix of length {}",
                outputs.len()
            )));
        }
        for (j, &out) in outputs.iter().enumerate() {
            self.n[j] += 1;
            self.errors[j] += (out != label) as u64;
        }
        self.pending = None;
        self.completed += 1;
        Ok(())
    }
}

/// Plays one sensor unconditionally (also used for the oracle reference,
/// with the arm resolved to the true optimum).
#[derive(Debug, Clone)]
pub struct FixedArm {
    arm: usize,
    k: usize,
    pending: bool,
}

impl FixedArm {
    pub fn new(arm: usize, k: usize) -> Result<Self> {
        if k == 0 || k > MAX_SENSORS {
            return Err(UssError::InvalidArgument(format!(
                "need between 1 and {MAX_SENSORS} sensors, got {k}"
            )));
        }
        if arm < 1 || arm > k {
            return Err(UssError::InvalidArgument(format!(
                "fixed arm {arm} outside 1..={k}"
            )));
        }
        Ok(FixedArm {
            arm,
            k,
            pending: false,
        })
    }

    pub fn arm(&self) -> usize {
        self.arm
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Uniform stepping interface over the concrete policies. Labels are only
/// handed to the baseline that declares it needs them.
#[derive(Debug, Clone)]
pub enum Policy {
    UssUcb(UssUcbState),
    Supervised(SupervisedState),
    Fixed(FixedArm),
}

impl Policy {
    pub fn k(&self) -> usize {
        match self {
            Policy::UssUcb(s) => s.k(),
            Policy::Supervised(s) => s.k(),
            Policy::Fixed(f) => f.k(),
        }
    }

    pub fn needs_label(&self) -> bool {
        matches!(self, Policy::Supervised(_))
    }

    pub fn select(&mut self) -> Result<usize> {
        match self {
            Policy::UssUcb(s) => s.select(),
            Policy::Supervised(s) => s.select(),
            Policy::Fixed(f) => {
                if f.pending {
                    return Err(UssError::InvalidArgument(
                        "select called twice without an update".into(),
                    ));
                }
                f.pending = true;
                Ok(f.arm)
            }
        }
    }

    pub fn update(&mut self, outputs: &[bool], label: Option<bool>) -> Result<()> {
        match self {
            Policy::UssUcb(s) => s.update(outputs),
            Policy::Supervised(s) => {
                let label = label.ok_or_else(|| {
                    UssError::InvalidArgument(
                        "supervised baseline requires the revealed label".into(),
                    )
                })?;
                s.update(outputs, label)
            }
            Policy::Fixed(f) => {
                if !f.pending {
                    return Err(UssError::InvalidArgument(
                        "update called without a pending selection".into(),
                    ));
                }
                if outputs.len() != f.arm {
                    return Err(UssError::InvalidArgument(format!(
                        "selected sensor {} but observed a prefix of length {}",
                        f.arm,
                        outputs.len()
                    )));
                }
                f.pending = false;
                Ok(())
            }
        }
    }

    pub fn pair_stats(&self) -> Option<&PairStats> {
        match self {
            Policy::UssUcb(s) => Some(s.pair_stats()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(state: &mut UssUcbState, outputs: &[bool]) -> usize {
        let arm = state.select().unwrap();
        state.update(&outputs[..arm]).unwrap();
        arm
    }

    #[test]
    fn first_round_queries_full_cascade() {
        let mut s =
            UssUcbState::new(&[0.0, 0.3, 0.5], 1.0, Growth::Identity, ConfidenceSide::Upper)
                .unwrap();
        assert!(s.selection_sets().is_none());
        assert_eq!(s.select().unwrap(), 3);
        s.update(&[true, false, true]).unwrap();
        for (i, j) in [(1, 2), (1, 3), (2, 3)] {
            assert_eq!(s.pair_stats().count(i, j), 1);
        }
        assert_eq!(s.pair_stats().disagreements(1, 2), 1);
        assert_eq!(s.pair_stats().disagreements(1, 3), 0);
    }

    #[test]
    fn single_sensor_always_selects_it() {
        let mut s = UssUcbState::new(&[0.2], 0.51, Growth::Identity, ConfidenceSide::Upper).unwrap();
        for _ in 0..5 {
            assert_eq!(step(&mut s, &[true]), 1);
        }
    }

    #[test]
    fn contract_violations_are_reported() {
        let mut s =
            UssUcbState::new(&[0.0, 0.5], 1.0, Growth::Identity, ConfidenceSide::Upper).unwrap();
        assert!(s.update(&[true, true]).is_err());
        let arm = s.select().unwrap();
        assert!(s.select().is_err());
        assert!(s.update(&[true]).is_err()); // wrong prefix length
        s.update(&vec![true; arm]).unwrap();

        assert!(UssUcbState::new(&[0.0, 0.5], 0.5, Growth::Identity, ConfidenceSide::Upper).is_err());
        assert!(UssUcbState::new(&[0.5, 0.0], 1.0, Growth::Identity, ConfidenceSide::Upper).is_err());
        assert!(UssUcbState::new(&[], 1.0, Growth::Identity, ConfidenceSide::Upper).is_err());
    }

    /// Two sensors, costs [0, 0.5], alpha = 1, f(t) = t. After round 1
    /// disagrees and rounds 2..=9 agree, round 10 sees p_hat = 1/9 and
    /// Psi = sqrt(ln 10 / 9), so the optimistic disagreement 0.617 still
    /// covers the cost gap 0.5: sensor 1 stays uncertified and the policy
    /// keeps querying the full cascade.
    #[test]
    fn hand_computed_round_ten_selection() {
        let mut s =
            UssUcbState::new(&[0.0, 0.5], 1.0, Growth::Identity, ConfidenceSide::Upper).unwrap();
        assert_eq!(step(&mut s, &[true, false]), 2);
        for _ in 0..8 {
            assert_eq!(step(&mut s, &[true, true]), 2);
        }
        assert_eq!(s.rounds(), 9);
        assert_eq!(s.pair_stats().count(1, 2), 9);
        assert_eq!(s.pair_stats().disagreements(1, 2), 1);

        let p_hat = s.p_hat(1, 2).unwrap();
        let psi = s.psi(1, 2).unwrap();
        assert!((p_hat - 1.0 / 9.0).abs() < 1e-15);
        assert!((psi - (10f64.ln() / 9.0).sqrt()).abs() < 1e-15);

        let (low, high) = s.selection_sets().unwrap();
        assert_eq!(low.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(high.iter().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(s.select().unwrap(), 2);
    }

    /// Once the optimistic disagreement drops below the cost gap, sensor 1
    /// joins the upper set and the intersection selects it.
    #[test]
    fn certification_moves_selection_to_cheap_sensor() {
        let mut s =
            UssUcbState::new(&[0.0, 0.5], 1.0, Growth::Identity, ConfidenceSide::Upper).unwrap();
        // all-agree rounds: p_hat stays 0, Psi shrinks as counts grow
        let mut arm = step(&mut s, &[true, true]);
        for _ in 0..200 {
            arm = {
                let a = s.select().unwrap();
                s.update(&vec![true; a]).unwrap();
                a
            };
        }
        assert_eq!(arm, 1);
        let (low, high) = s.selection_sets().unwrap();
        assert!(high.contains(&1));
        assert_eq!(low.intersection(&high).next(), Some(&1));
    }

    #[test]
    fn lower_side_flips_upper_set_test() {
        // identical histories, different sides: with one disagreement in
        // one observation, p_hat = 1; the upper side sees 1 + Psi, the
        // lower side 1 - Psi, so only the latter can certify sensor 1
        let mk = |side| {
            let mut s = UssUcbState::new(&[0.0, 0.9], 1.0, Growth::Identity, side).unwrap();
            s.select().unwrap();
            s.update(&[true, false]).unwrap();
            s
        };
        let upper = mk(ConfidenceSide::Upper);
        let lower = mk(ConfidenceSide::Lower);
        let (_, high_u) = upper.selection_sets().unwrap();
        let (_, high_l) = lower.selection_sets().unwrap();
        // Psi(t=2, n=1) = sqrt(ln 2) ~ 0.833: upper term 1.833, lower 0.167
        assert!(!high_u.contains(&1));
        assert!(high_l.contains(&1));
    }

    #[test]
    fn frozen_pairs_have_monotone_lower_terms() {
        let mut s =
            UssUcbState::new(&[0.0, 0.05], 0.51, Growth::Identity, ConfidenceSide::Lower).unwrap();
        s.select().unwrap();
        s.update(&[true, true]).unwrap();
        let mut prev: Option<f64> = None;
        for _ in 0..50 {
            let arm = s.select().unwrap();
            // the stuck regime: arm 1 keeps the (1,2) pair frozen
            assert_eq!(arm, 1);
            let term = s.p_hat(1, 2).unwrap() - s.psi(1, 2).unwrap();
            if let Some(p) = prev {
                assert!(term <= p, "frozen-pair term increased: {term} > {p}");
            }
            prev = Some(term);
            s.update(&[true]).unwrap();
        }
    }

    #[test]
    fn supervised_tracks_marginal_error_rates() {
        let mut s = SupervisedState::new(&[0.1, 0.2], 1.0, Growth::Identity).unwrap();
        assert_eq!(s.select().unwrap(), 2);
        // sensor 1 wrong, sensor 2 right under label = true
        s.update(&[false, true], true).unwrap();
        assert_eq!(s.gamma_hat(1), Some(1.0));
        assert_eq!(s.gamma_hat(2), Some(0.0));
    }

    #[test]
    fn supervised_with_perfect_sensors_prefers_cheapest() {
        let costs = [0.1, 0.2, 0.3];
        let mut s = SupervisedState::new(&costs, 0.51, Growth::Identity).unwrap();
        let mut pulls = [0u64; 3];
        for round in 0..1500 {
            let arm = s.select().unwrap();
            if round >= 1200 {
                pulls[arm - 1] += 1;
            }
            s.update(&vec![true; arm], true).unwrap();
        }
        assert!(pulls[0] > pulls[1] + pulls[2], "pulls: {pulls:?}");
        assert_eq!(s.gamma_hat(1), Some(0.0));
    }

    #[test]
    fn fixed_and_policy_wrapper_behave() {
        let mut p = Policy::Fixed(FixedArm::new(2, 3).unwrap());
        assert!(!p.needs_label());
        assert_eq!(p.select().unwrap(), 2);
        assert!(p.update(&[true], None).is_err()); // wrong prefix length
        p.update(&[true, false], None).unwrap();
        assert!(FixedArm::new(0, 3).is_err());
        assert!(FixedArm::new(4, 3).is_err());

        let s = SupervisedState::new(&[0.1, 0.2], 1.0, Growth::Identity).unwrap();
        let mut p = Policy::Supervised(s);
        assert!(p.needs_label());
        let arm = p.select().unwrap();
        assert!(p.update(&vec![true; arm], None).is_err());
        p.update(&vec![true; arm], Some(true)).unwrap();
    }

    #[test]
    fn pair_counts_depend_only_on_depth() {
        // counts for (i, j) equal the number of rounds whose selection
        // reached depth j, regardless of i
        let mut s =
            UssUcbState::new(&[0.0, 0.2, 0.4, 0.6], 0.51, Growth::Identity, ConfidenceSide::Upper)
                .unwrap();
        let outputs = [true, true, false, true];
        let mut depth_reached = [0u64; 5];
        for _ in 0..100 {
            let arm = s.select().unwrap();
            for j in 1..=arm {
                depth_reached[j] += 1;
            }
            s.update(&outputs[..arm]).unwrap();
        }
        for j in 2..=4 {
            for i in 1..j {
                assert_eq!(s.pair_stats().count(i, j), depth_reached[j]);
            }
        }
    }
}
