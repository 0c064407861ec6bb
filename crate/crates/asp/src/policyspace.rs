//! How much of the policy space an adversary prunes away.
//!
//! For a single-step MDP with `S` equally likely states and `A` actions
//! there are `A^S` deterministic policies. Matching a convention's action
//! marginal `p` restricts them to the multinomial coefficient
//! `S! / prod_i (p_i * S)!`. This module computes that count exactly, its
//! log-ratio against `A^S`, a Stirling-series estimate of the ratio, and an
//! exhaustive enumeration oracle that validates the closed form.

use num_bigint::BigUint;
use num_traits::One;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Tolerance for probability vectors summing to one and for cell
/// integrality checks.
const PROB_TOL: f64 = 1e-9;

/// A single-step discrete MDP: `S` states, `A` actions, and an initial
/// state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMdpSpec {
    num_states: usize,
    num_actions: usize,
    state_distribution: Vec<f64>,
}

impl DiscreteMdpSpec {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        state_distribution: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Domain("S and A must be positive".into()));
        }
        if state_distribution.len() != num_states {
            return Err(Error::InvalidInput(format!(
                "state distribution has {} entries for {} states",
                state_distribution.len(),
                num_states
            )));
        }
        check_probability_vector(&state_distribution)?;
        Ok(Self {
            num_states,
            num_actions,
            state_distribution,
        })
    }

    /// Uniform initial states, the assumption behind the closed-form count.
    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        let p = vec![1.0 / num_states as f64; num_states];
        Self::new(num_states, num_actions, p)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn state_distribution(&self) -> &[f64] {
        &self.state_distribution
    }
}

/// Probability vector over the `A` discrete actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMarginal {
    probs: Vec<f64>,
}

impl ActionMarginal {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty action marginal".into()));
        }
        check_probability_vector(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(num_actions: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::Domain("A must be positive".into()));
        }
        Self::new(vec![1.0 / num_actions as f64; num_actions])
    }

    /// All mass on a single action.
    pub fn delta(num_actions: usize, action: usize) -> Result<Self> {
        if action >= num_actions {
            return Err(Error::InvalidInput(format!(
                "action {action} >= A {num_actions}"
            )));
        }
        let mut p = vec![0.0; num_actions];
        p[action] = 1.0;
        Self::new(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_actions(&self) -> usize {
        self.probs.len()
    }
}

fn check_probability_vector(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(
            "probabilities must be finite and >= 0".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidInput(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// `A^S`, the number of deterministic policies, exactly.
pub fn count_all_policies(num_states: usize, num_actions: usize) -> Result<BigUint> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Domain("S and A must be positive".into()));
    }
    Ok(BigUint::from(num_actions).pow(num_states as u32))
}

/// Integer cell sizes `p_i * S`, or an infeasible-marginal error if any
/// cell is not integral. The exact count only holds for integral cells.
pub fn marginal_cells(num_states: usize, marginal: &ActionMarginal) -> Result<Vec<u64>> {
    let s = num_states as f64;
    let mut cells = Vec::with_capacity(marginal.num_actions());
    let mut total = 0u64;
    for (i, p) in marginal.probs().iter().enumerate() {
        let raw = p * s;
        let cell = raw.round();
        if (raw - cell).abs() > PROB_TOL * s.max(1.0) {
            return Err(Error::InfeasibleMarginal(format!(
                "p_{i} * S = {raw} is not integral"
            )));
        }
        cells.push(cell as u64);
        total += cell as u64;
    }
    if total != num_states as u64 {
        return Err(Error::InfeasibleMarginal(format!(
            "cells sum to {total}, expected {num_states}"
        )));
    }
    Ok(cells)
}

fn factorial(n: u64) -> BigUint {
    let mut acc = BigUint::one();
    for k in 2..=n {
        acc *= BigUint::from(k);
    }
    acc
}

/// Number of policies consistent with the action marginal under uniform
/// states: the multinomial coefficient `S! / prod_i (p_i S)!`.
pub fn count_allowed_policies(
    num_states: usize,
    num_actions: usize,
    marginal: &ActionMarginal,
) -> Result<BigUint> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Domain("S and A must be positive".into()));
    }
    if marginal.num_actions() != num_actions {
        return Err(Error::InvalidInput(format!(
            "marginal has {} entries for A = {num_actions}",
            marginal.num_actions()
        )));
    }
    let cells = marginal_cells(num_states, marginal)?;
    let mut denom = BigUint::one();
    for c in &cells {
        denom *= factorial(*c);
    }
    Ok(factorial(num_states as u64) / denom)
}

/// `ln(count_allowed / count_all)`, computed with log-gamma so large `S`
/// never overflows. Always <= 0.
pub fn log_ratio(num_states: usize, num_actions: usize, marginal: &ActionMarginal) -> Result<f64> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Domain("S and A must be positive".into()));
    }
    if marginal.num_actions() != num_actions {
        return Err(Error::InvalidInput(format!(
            "marginal has {} entries for A = {num_actions}",
            marginal.num_actions()
        )));
    }
    let cells = marginal_cells(num_states, marginal)?;
    let s = num_states as f64;
    let mut lr = ln_gamma(s + 1.0);
    for c in &cells {
        lr -= ln_gamma(*c as f64 + 1.0);
    }
    lr -= s * (num_actions as f64).ln();
    Ok(lr)
}

/// Stirling-series approximation of `ln(n!)`.
///
/// Leading terms `n ln n - n + 0.5 ln(2 pi n)` plus the next three series
/// corrections. The corrections keep the worst case (cells of size one,
/// `A = S`) inside the 0.05 band the pruning table is tested against; the
/// `0.5 ln(2 pi n)` term alone is off by ~0.08 per unit cell.
pub fn stirling_ln_factorial(n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n)
        - 1.0 / (360.0 * n.powi(3))
        + 1.0 / (1260.0 * n.powi(5))
}

/// Stirling estimate of the worst-case (uniform marginal) log ratio:
/// `stirling(S) - A * stirling(S/A) - S ln A`. Requires `A | S`.
pub fn log_ratio_stirling_estimate(num_states: usize, num_actions: usize) -> Result<f64> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::Domain("S and A must be positive".into()));
    }
    if num_actions > num_states || num_states % num_actions != 0 {
        return Err(Error::Domain(format!(
            "S = {num_states} must be divisible by A = {num_actions}"
        )));
    }
    let s = num_states as f64;
    let a = num_actions as f64;
    Ok(stirling_ln_factorial(s) - a * stirling_ln_factorial(s / a) - s * a.ln())
}

/// Enumeration guard: refuse searches beyond this many candidate policies.
pub const ENUMERATION_GUARD: u64 = 10_000_000;

/// Brute-force oracle: walk every `state -> action` map and count those
/// whose induced action marginal matches the target within `1e-9`.
///
/// Uniform state distribution; see [`enumerate_matching_policies_weighted`]
/// for the general case.
pub fn enumerate_matching_policies(
    num_states: usize,
    num_actions: usize,
    marginal: &ActionMarginal,
) -> Result<BigUint> {
    let spec = DiscreteMdpSpec::uniform(num_states, num_actions)?;
    enumerate_matching_policies_weighted(&spec, marginal)
}

/// Enumeration oracle for an arbitrary initial state distribution: the
/// induced marginal of action `a_i` is the total probability of the states
/// mapped to it. No closed form is attempted for non-uniform states.
pub fn enumerate_matching_policies_weighted(
    spec: &DiscreteMdpSpec,
    marginal: &ActionMarginal,
) -> Result<BigUint> {
    let s = spec.num_states();
    let a = spec.num_actions();
    if marginal.num_actions() != a {
        return Err(Error::InvalidInput(format!(
            "marginal has {} entries for A = {a}",
            marginal.num_actions()
        )));
    }
    let total = (a as f64).powi(s as i32);
    if total > ENUMERATION_GUARD as f64 {
        return Err(Error::Capacity(format!(
            "A^S = {a}^{s} exceeds the {ENUMERATION_GUARD} enumeration guard"
        )));
    }
    let total = (a as u64).pow(s as u32);
    let weights = spec.state_distribution().to_vec();
    let target = marginal.probs().to_vec();

    // The search space partitions cleanly over policy indices.
    let count = (0..total)
        .into_par_iter()
        .filter(|idx| {
            let mut induced = vec![0.0f64; a];
            let mut rest = *idx;
            for w in &weights {
                induced[(rest % a as u64) as usize] += w;
                rest /= a as u64;
            }
            induced
                .iter()
                .zip(&target)
                .all(|(got, want)| (got - want).abs() <= PROB_TOL)
        })
        .count();
    Ok(BigUint::from(count))
}

/// One row of the pruning table: exact and Stirling-estimated log ratios at
/// the uniform (worst-case) marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningRow {
    pub num_states: usize,
    pub num_actions: usize,
    pub exact_lr: f64,
    pub stirling_lr: f64,
}

/// Exact vs. Stirling log ratios over a grid of `(S, A)` pairs with `A | S`,
/// sorted by `(S, A)`.
pub fn pruning_table(s_values: &[usize], a_values: &[usize]) -> Result<Vec<PruningRow>> {
    let mut rows = Vec::new();
    for &s in s_values {
        for &a in a_values {
            if a > s || s % a != 0 {
                return Err(Error::Domain(format!(
                    "S = {s} must be divisible by A = {a}"
                )));
            }
            let marginal = ActionMarginal::uniform(a)?;
            let exact = log_ratio(s, a, &marginal)?;
            let estimate = log_ratio_stirling_estimate(s, a)?;
            if !exact.is_finite() || !estimate.is_finite() {
                return Err(Error::NumericalHealth(format!(
                    "non-finite log ratio at S={s} A={a}"
                )));
            }
            rows.push(PruningRow {
                num_states: s,
                num_actions: a,
                exact_lr: exact,
                stirling_lr: estimate,
            });
        }
    }
    rows.sort_by_key(|r| (r.num_states, r.num_actions));
    Ok(rows)
}

/// All integral cell vectors for `S` states over `A` actions, as marginals.
/// Test helper for sweeping every feasible marginal at small sizes.
pub fn feasible_marginals(num_states: usize, num_actions: usize) -> Vec<ActionMarginal> {
    let mut out = Vec::new();
    let mut cells = vec![0u64; num_actions];
    fn recurse(
        cells: &mut Vec<u64>,
        idx: usize,
        remaining: u64,
        s: usize,
        out: &mut Vec<ActionMarginal>,
    ) {
        if idx == cells.len() - 1 {
            cells[idx] = remaining;
            let probs: Vec<f64> = cells.iter().map(|c| *c as f64 / s as f64).collect();
            out.push(ActionMarginal::new(probs).expect("integral cells form a marginal"));
            return;
        }
        for c in 0..=remaining {
            cells[idx] = c;
            recurse(cells, idx + 1, remaining - c, s, out);
        }
    }
    recurse(&mut cells, 0, num_states as u64, num_states, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn count_all_examples() {
        assert_eq!(count_all_policies(4, 2).unwrap(), BigUint::from(16u32));
        assert_eq!(count_all_policies(3, 1).unwrap(), BigUint::from(1u32));
        assert_eq!(count_all_policies(6, 3).unwrap(), BigUint::from(729u32));
        assert!(count_all_policies(0, 2).is_err());
    }

    #[test]
    fn count_allowed_examples() {
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        assert_eq!(
            count_allowed_policies(4, 2, &uniform2).unwrap(),
            BigUint::from(6u32)
        );

        let delta = ActionMarginal::delta(2, 0).unwrap();
        assert_eq!(
            count_allowed_policies(5, 2, &delta).unwrap(),
            BigUint::from(1u32)
        );

        let uniform3 = ActionMarginal::uniform(3).unwrap();
        // 6! / (2! 2! 2!)
        assert_eq!(
            count_allowed_policies(6, 3, &uniform3).unwrap(),
            BigUint::from(90u32)
        );
    }

    #[test]
    fn non_integral_cells_are_rejected() {
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        assert!(matches!(
            count_allowed_policies(5, 2, &uniform2),
            Err(Error::InfeasibleMarginal(_))
        ));
        assert!(matches!(
            log_ratio(5, 2, &uniform2),
            Err(Error::InfeasibleMarginal(_))
        ));
    }

    #[test]
    fn log_ratio_examples() {
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        assert_relative_eq!(
            log_ratio(4, 2, &uniform2).unwrap(),
            (6.0f64 / 16.0).ln(),
            epsilon = 1e-12
        );

        let single = ActionMarginal::uniform(1).unwrap();
        assert_relative_eq!(log_ratio(1, 1, &single).unwrap(), 0.0, epsilon = 1e-12);

        let delta = ActionMarginal::delta(2, 1).unwrap();
        assert_relative_eq!(
            log_ratio(5, 2, &delta).unwrap(),
            -5.0 * 2.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn stirling_examples() {
        // Within 0.05 of the exact value at S=4, A=2.
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        let exact = log_ratio(4, 2, &uniform2).unwrap();
        let est = log_ratio_stirling_estimate(4, 2).unwrap();
        assert!((est - exact).abs() <= 0.05, "est {est} vs exact {exact}");

        // S = A = 3: exact value is ln 6 - 3 ln 3.
        let exact = 6.0f64.ln() - 3.0 * 3.0f64.ln();
        let est = log_ratio_stirling_estimate(3, 3).unwrap();
        assert!((est - exact).abs() <= 0.05, "est {est} vs exact {exact}");
        assert_relative_eq!(exact, -1.50408, epsilon = 1e-5);

        // S = A = 1: exact zero after correction terms.
        assert!(log_ratio_stirling_estimate(1, 1).unwrap().abs() < 1e-6);

        assert!(log_ratio_stirling_estimate(5, 2).is_err());
    }

    #[test]
    fn enumeration_examples() {
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        assert_eq!(
            enumerate_matching_policies(4, 2, &uniform2).unwrap(),
            BigUint::from(6u32)
        );

        let delta = ActionMarginal::delta(2, 0).unwrap();
        assert_eq!(
            enumerate_matching_policies(2, 2, &delta).unwrap(),
            BigUint::from(1u32)
        );

        let uniform3 = ActionMarginal::uniform(3).unwrap();
        assert_eq!(
            enumerate_matching_policies(3, 3, &uniform3).unwrap(),
            BigUint::from(6u32)
        );
    }

    #[test]
    fn enumeration_guard_trips() {
        let uniform = ActionMarginal::uniform(10).unwrap();
        assert!(matches!(
            enumerate_matching_policies(10, 10, &uniform),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn weighted_enumeration_handles_non_uniform_states() {
        // Two states with probabilities 0.25 / 0.75, two actions. The only
        // policies inducing marginal (0.25, 0.75) map s0->a0, s1->a1.
        let spec = DiscreteMdpSpec::new(2, 2, vec![0.25, 0.75]).unwrap();
        let marginal = ActionMarginal::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(
            enumerate_matching_policies_weighted(&spec, &marginal).unwrap(),
            BigUint::from(1u32)
        );
    }

    #[test]
    fn oracle_matches_closed_form_at_small_sizes() {
        for s in 1..=8usize {
            for a in 1..=3usize {
                for marginal in feasible_marginals(s, a) {
                    let counted = count_allowed_policies(s, a, &marginal).unwrap();
                    let enumerated = enumerate_matching_policies(s, a, &marginal).unwrap();
                    assert_eq!(counted, enumerated, "S={s} A={a} p={:?}", marginal.probs());
                }
            }
        }
    }

    #[test]
    fn uniform_maximizes_and_delta_minimizes() {
        for s in [4usize, 6, 8] {
            for a in [2usize, 3] {
                if s % a != 0 {
                    continue;
                }
                let uniform = ActionMarginal::uniform(a).unwrap();
                let max = count_allowed_policies(s, a, &uniform).unwrap();
                for marginal in feasible_marginals(s, a) {
                    let c = count_allowed_policies(s, a, &marginal).unwrap();
                    assert!(c <= max);
                    assert!(c <= count_all_policies(s, a).unwrap());
                }
                let delta = ActionMarginal::delta(a, 0).unwrap();
                assert_eq!(
                    count_allowed_policies(s, a, &delta).unwrap(),
                    BigUint::one()
                );
            }
        }
    }

    #[test]
    fn log_ratio_monotonicity() {
        // Non-increasing in S at fixed A (uniform marginal).
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        let mut prev = 0.0f64;
        for s in [2usize, 4, 6, 8, 16, 32] {
            let lr = log_ratio(s, 2, &uniform2).unwrap();
            assert!(lr <= prev + 1e-12, "lr({s}, 2) = {lr} > {prev}");
            prev = lr;
        }
        // Non-increasing in A over divisors of S at fixed S: every extra
        // action shrinks allowed/total further (lr(6,2) = ln(20/64) is
        // closer to 0 than lr(6,3) = ln(90/729)).
        let s = 12;
        let mut prev = 0.0f64;
        for a in [1usize, 2, 3, 4, 6, 12] {
            let lr = log_ratio(s, a, &ActionMarginal::uniform(a).unwrap()).unwrap();
            assert!(lr <= prev + 1e-12, "lr({s}, {a}) = {lr} > {prev}");
            prev = lr;
        }
    }

    #[test]
    fn stirling_within_band_up_to_64() {
        for s in [2usize, 4, 8, 16, 32, 64] {
            for a in 1..=s {
                if s % a != 0 {
                    continue;
                }
                let exact = log_ratio(s, a, &ActionMarginal::uniform(a).unwrap()).unwrap();
                let est = log_ratio_stirling_estimate(s, a).unwrap();
                assert!(
                    (est - exact).abs() <= 0.05,
                    "S={s} A={a}: est {est} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn pruning_table_rows() {
        let rows = pruning_table(&[4], &[2]).unwrap();
        assert_eq!(rows.len(), 1);
        let uniform2 = ActionMarginal::uniform(2).unwrap();
        assert_relative_eq!(rows[0].exact_lr, log_ratio(4, 2, &uniform2).unwrap());

        assert!(pruning_table(&[], &[]).unwrap().is_empty());

        let rows = pruning_table(&[6], &[2, 3]).unwrap();
        // ln(90/729) < ln(20/64): the third action prunes harder.
        assert!(rows[1].exact_lr < rows[0].exact_lr);
    }
}
