//! Shared mathematical vocabulary: episode traces, discounted returns, and
//! the mixed-team reward averaged over team compositions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One recorded multi-agent episode: states, per-agent actions, and the
/// shared scalar reward at every timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<usize>>,
    rewards: Vec<f64>,
}

impl EpisodeTrace {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<usize>>, rewards: Vec<f64>) -> Result<Self> {
        if states.len() != actions.len() || actions.len() != rewards.len() {
            return Err(Error::InvalidInput(format!(
                "trace lengths disagree: {} states, {} actions, {} rewards",
                states.len(),
                actions.len(),
                rewards.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite reward {r}")));
        }
        Ok(Self {
            states,
            actions,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

/// Discount factor gamma in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountConfig {
    gamma: f64,
}

impl DiscountConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidInput(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// A team of `team_size` roles filled by `new_count` copies of the new agent
/// and the remainder by the base agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TeamComposition {
    team_size: usize,
    new_count: usize,
}

impl TeamComposition {
    pub fn new(team_size: usize, new_count: usize) -> Result<Self> {
        if team_size < 2 {
            return Err(Error::Composition(format!("team size {team_size} < 2")));
        }
        if new_count == 0 || new_count >= team_size {
            return Err(Error::Composition(format!(
                "new count {new_count} outside [1, {}]",
                team_size - 1
            )));
        }
        Ok(Self {
            team_size,
            new_count,
        })
    }

    pub fn team_size(&self) -> usize {
        self.team_size
    }

    pub fn new_count(&self) -> usize {
        self.new_count
    }

    pub fn base_count(&self) -> usize {
        self.team_size - self.new_count
    }
}

/// Mean rewards per composition index, plus their average.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTeamResult {
    pub per_composition_rewards: BTreeMap<usize, f64>,
    pub r_bar_m: f64,
}

/// Discounted return `sum_t gamma^(t-1) r_t`. Empty sequences return 0.
///
/// Accumulation is in f64 regardless of where the rewards came from.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside [0, 1]")));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite reward {r}")));
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Mean reward over all mixed-team compositions `i = 1..N-1`.
///
/// The map must contain exactly the keys `1..=N-1`.
pub fn mixed_team_reward_bar(
    per_composition_rewards: &BTreeMap<usize, f64>,
    team_size: usize,
) -> Result<MixedTeamResult> {
    if team_size < 2 {
        return Err(Error::Composition(format!("team size {team_size} < 2")));
    }
    for i in 1..team_size {
        if !per_composition_rewards.contains_key(&i) {
            return Err(Error::IncompleteInput(format!(
                "missing composition key {i}"
            )));
        }
    }
    if per_composition_rewards.len() != team_size - 1 {
        return Err(Error::IncompleteInput(format!(
            "expected exactly {} composition keys, got {}",
            team_size - 1,
            per_composition_rewards.len()
        )));
    }
    let sum: f64 = per_composition_rewards.values().sum();
    Ok(MixedTeamResult {
        per_composition_rewards: per_composition_rewards.clone(),
        r_bar_m: sum / (team_size - 1) as f64,
    })
}

/// Which of the two agents fills a given role in a mixed team.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySource {
    New,
    Base,
}

/// A single-agent view of the joint policy: given an observation for one
/// role, produce that role's action.
pub trait Policy {
    type Obs;
    type Action;
    fn act(&self, obs: &Self::Obs) -> Self::Action;
}

/// A joint policy that routes each role's observation to either the new or
/// the base policy. The first `new_count` roles are filled by the new agent.
pub struct JointPolicy<P> {
    roles: Vec<(String, PolicySource)>,
    new_policy: P,
    base_policy: P,
}

impl<P> JointPolicy<P> {
    pub fn roles(&self) -> &[(String, PolicySource)] {
        &self.roles
    }

    pub fn source_for(&self, role_index: usize) -> PolicySource {
        self.roles[role_index].1
    }
}

impl<P: Policy> JointPolicy<P> {
    /// Route one role's observation to its assigned policy.
    pub fn act(&self, role_index: usize, obs: &P::Obs) -> Result<P::Action> {
        let (_, source) = self
            .roles
            .get(role_index)
            .ok_or_else(|| Error::Composition(format!("no role at index {role_index}")))?;
        Ok(match source {
            PolicySource::New => self.new_policy.act(obs),
            PolicySource::Base => self.base_policy.act(obs),
        })
    }
}

/// Build the joint policy for a composition: the first `new_count` roles go
/// to the new policy, the rest to the base policy.
pub fn compose_team<P>(
    new_policy: P,
    base_policy: P,
    composition: &TeamComposition,
    role_names: &[&str],
) -> Result<JointPolicy<P>> {
    if role_names.len() != composition.team_size() {
        return Err(Error::Composition(format!(
            "{} roles given for a team of {}",
            role_names.len(),
            composition.team_size()
        )));
    }
    let roles = role_names
        .iter()
        .enumerate()
        .map(|(idx, name)| {
            let source = if idx < composition.new_count() {
                PolicySource::New
            } else {
                PolicySource::Base
            };
            (name.to_string(), source)
        })
        .collect();
    Ok(JointPolicy {
        roles,
        new_policy,
        base_policy,
    })
}
