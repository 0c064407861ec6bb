//! Three-agent lever game: agents with distinct ids 0–9 must pull the three
//! levers in the ascending order of their ids.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LEVER_AGENTS, NUM_LEVER_IDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeverGameState {
    pub agent_ids: [usize; LEVER_AGENTS],
    pub pulls: Option<[usize; LEVER_AGENTS]>,
}

/// Deal three distinct ids uniformly without replacement from 0–9.
pub fn lever_deal(rng: &mut ChaCha8Rng) -> LeverGameState {
    let mut ids: Vec<usize> = (0..NUM_LEVER_IDS).collect();
    ids.shuffle(rng);
    LeverGameState {
        agent_ids: [ids[0], ids[1], ids[2]],
        pulls: None,
    }
}

/// All 720 ordered deals of three distinct ids.
pub fn all_deals() -> Vec<[usize; LEVER_AGENTS]> {
    let mut deals = Vec::with_capacity(720);
    for a in 0..NUM_LEVER_IDS {
        for b in 0..NUM_LEVER_IDS {
            for c in 0..NUM_LEVER_IDS {
                if a != b && b != c && a != c {
                    deals.push([a, b, c]);
                }
            }
        }
    }
    deals
}

/// Fraction of agents whose pull matches their rank in the ascending id
/// order: the convention is "k-th smallest id pulls lever k".
pub fn lever_score(ids: [usize; LEVER_AGENTS], pulls: [usize; LEVER_AGENTS]) -> Result<f64> {
    if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
        return Err(Error::Contract(format!("duplicate agent ids {ids:?}")));
    }
    for v in ids {
        if v >= NUM_LEVER_IDS {
            return Err(Error::Contract(format!(
                "agent id {v} outside 0..{NUM_LEVER_IDS}"
            )));
        }
    }
    for p in pulls {
        if p >= LEVER_AGENTS {
            return Err(Error::Contract(format!(
                "pull {p} outside 0..{LEVER_AGENTS}"
            )));
        }
    }
    let mut sorted = ids;
    sorted.sort_unstable();
    let matches = (0..LEVER_AGENTS)
        .filter(|&k| {
            let rank = sorted.iter().position(|v| *v == ids[k]).unwrap();
            pulls[k] == rank
        })
        .count();
    Ok(matches as f64 / LEVER_AGENTS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use rand::Rng;

    #[test]
    fn deal_is_deterministic_and_distinct() {
        let d1 = lever_deal(&mut stream_rng(9, "lever"));
        let d2 = lever_deal(&mut stream_rng(9, "lever"));
        assert_eq!(d1, d2);
        let [a, b, c] = d1.agent_ids;
        assert!(a != b && b != c && a != c);
        assert!(d1.pulls.is_none());
    }

    #[test]
    fn deal_marginal_frequency() {
        let mut rng = stream_rng(10, "lever-freq");
        let mut counts = [0usize; NUM_LEVER_IDS];
        let n = 10_000;
        for _ in 0..n {
            for id in lever_deal(&mut rng).agent_ids {
                counts[id] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.3).abs() <= 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(lever_score([8, 3, 5], [0, 1, 1]).unwrap(), 1.0 / 3.0);
        assert_eq!(lever_score([0, 1, 2], [0, 1, 2]).unwrap(), 1.0);
        assert_eq!(lever_score([9, 0, 5], [2, 0, 1]).unwrap(), 1.0);
        assert!(lever_score([1, 1, 2], [0, 1, 2]).is_err());
        assert!(lever_score([0, 1, 2], [0, 1, 3]).is_err());
    }

    #[test]
    fn score_is_permutation_invariant() {
        let ids = [7usize, 2, 4];
        let pulls = [2usize, 0, 1];
        let base = lever_score(ids, pulls).unwrap();
        for perm in [
            [0usize, 1, 2],
            [1, 2, 0],
            [2, 0, 1],
            [0, 2, 1],
            [1, 0, 2],
            [2, 1, 0],
        ] {
            let ids_p = [ids[perm[0]], ids[perm[1]], ids[perm[2]]];
            let pulls_p = [pulls[perm[0]], pulls[perm[1]], pulls[perm[2]]];
            assert_eq!(lever_score(ids_p, pulls_p).unwrap(), base);
        }
    }

    #[test]
    fn random_pulls_score_one_third_on_average() {
        let mut rng = stream_rng(11, "lever-mc");
        let n = 60_000;
        let mut total = 0.0;
        for _ in 0..n {
            let deal = lever_deal(&mut rng);
            let pulls = [
                rng.random_range(0..LEVER_AGENTS),
                rng.random_range(0..LEVER_AGENTS),
                rng.random_range(0..LEVER_AGENTS),
            ];
            total += lever_score(deal.agent_ids, pulls).unwrap();
        }
        let mean = total / n as f64;
        assert!((mean - 1.0 / 3.0).abs() <= 0.01, "mean {mean}");
    }

    #[test]
    fn all_deals_enumerates_720() {
        let deals = all_deals();
        assert_eq!(deals.len(), 720);
        let unique: std::collections::HashSet<_> = deals.iter().collect();
        assert_eq!(unique.len(), 720);
    }
}
