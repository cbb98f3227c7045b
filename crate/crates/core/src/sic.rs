//! Received-power levels for power-domain NOMA and the SIC decode rule.
//!
//! With levels `l_j = γ(γ+1)^(L-j)`, a device at level `j` sees SINR exactly
//! `γ` when every lower level is occupied once and noise has unit power.
//! Decoding can therefore be tracked on level indices alone: scan from the
//! strongest level down and stop at the first level with a collision.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// The `L` SIC power levels, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLevelSet {
    target_sinr: f64,
    levels: Vec<f64>,
}

impl PowerLevelSet {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn target_sinr(&self) -> f64 {
        self.target_sinr
    }

    /// Received powers `l_1 > l_2 > ... > l_L`.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Power of 1-based level `j`.
    pub fn level(&self, j: usize) -> f64 {
        self.levels[j - 1]
    }
}

/// Builds `l_j = γ(γ+1)^(L-j)` for `j = 1..=L`.
pub fn build_levels(level_count: usize, gamma: f64) -> Result<PowerLevelSet> {
    if level_count < 2 {
        return Err(invalid(format!(
            "at least two power levels are required, got {level_count}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!(
            "target SINR must be positive, got {gamma}"
        )));
    }
    let levels = (1..=level_count)
        .map(|j| gamma * (gamma + 1.0).powi((level_count - j) as i32))
        .collect();
    Ok(PowerLevelSet {
        target_sinr: gamma,
        levels,
    })
}

/// Symbolic SIC over one resource block.
///
/// `assignments` pairs a device with its 1-based level. Levels are scanned
/// from 1 downwards; a sole occupant is decoded and cancelled, and the first
/// level holding two or more devices halts decoding for it and every level
/// below.
pub fn sic_decode<I: Copy + Ord>(assignments: &[(I, usize)]) -> BTreeSet<I> {
    let mut by_level: Vec<(usize, I)> = assignments.iter().map(|&(id, l)| (l, id)).collect();
    by_level.sort_unstable();
    let mut decoded = BTreeSet::new();
    let mut i = 0;
    while i < by_level.len() {
        let level = by_level[i].0;
        debug_assert!(level >= 1, "power levels are 1-based");
        let mut j = i + 1;
        while j < by_level.len() && by_level[j].0 == level {
            j += 1;
        }
        if j - i > 1 {
            break;
        }
        decoded.insert(by_level[i].1);
        i = j;
    }
    decoded
}

/// SIC driven by received powers instead of level indices: repeatedly take
/// the strongest remaining signal, decode it if its SINR against everything
/// still present plus unit noise reaches the target, cancel it, and halt at
/// the first failure.
pub fn sic_decode_by_sinr<I: Copy + Ord>(
    levels: &PowerLevelSet,
    assignments: &[(I, usize)],
) -> BTreeSet<I> {
    let mut remaining: Vec<(I, f64)> = assignments
        .iter()
        .map(|&(id, l)| (id, levels.level(l)))
        .collect();
    // strongest last so pop() takes it
    remaining.sort_by(|a, b| a.1.total_cmp(&b.1));
    let gamma = levels.target_sinr();
    let mut decoded = BTreeSet::new();
    while let Some((id, power)) = remaining.pop() {
        let interference: f64 = remaining.iter().map(|&(_, p)| p).sum();
        let sinr = power / (interference + 1.0);
        if sinr < gamma * (1.0 - 1e-9) {
            break;
        }
        decoded.insert(id);
    }
    decoded
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn level_examples() {
        assert_eq!(build_levels(3, 1.0).unwrap().levels(), &[4.0, 2.0, 1.0]);
        assert_eq!(build_levels(2, 2.0).unwrap().levels(), &[6.0, 2.0]);
        let p = build_levels(3, 1.0).unwrap();
        assert_eq!(p.level(1) / (p.level(2) + p.level(3) + 1.0), 1.0);
    }

    #[test]
    fn level_preconditions() {
        assert!(build_levels(1, 1.0).is_err());
        assert!(build_levels(3, 0.0).is_err());
        assert!(build_levels(3, -1.0).is_err());
    }

    #[test]
    fn sinr_identity_holds() {
        for l in 2..=7 {
            for gamma in [0.5, 1.0, 2.0] {
                let p = build_levels(l, gamma).unwrap();
                for j in 0..l {
                    let below: f64 = p.levels()[j + 1..].iter().sum();
                    let sinr = p.levels()[j] / (below + 1.0);
                    assert!((sinr - gamma).abs() < 1e-12);
                    if j > 0 {
                        assert!(p.levels()[j - 1] > p.levels()[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(sic_decode(&[('a', 1)]), BTreeSet::from(['a']));
        assert_eq!(
            sic_decode(&[('a', 2), ('b', 3)]),
            BTreeSet::from(['a', 'b'])
        );
        assert!(sic_decode(&[('a', 2), ('b', 2), ('c', 3)]).is_empty());
        assert!(sic_decode::<u32>(&[]).is_empty());
        // collision below a decoded level leaves the upper device intact
        assert_eq!(
            sic_decode(&[('a', 1), ('b', 3), ('c', 3)]),
            BTreeSet::from(['a'])
        );
    }

    /// Every assignment of up to 5 devices onto up to 5 levels.
    ///
    /// The SINR identity budgets one interferer per lower level, so the two
    /// rules coincide whenever no level holds more than one device. A
    /// collision below a decoded level adds interference beyond that budget,
    /// which the power-driven rule can punish and the symbolic rule ignores.
    /// For `γ >= 1` a collided level can never reach the target, so the
    /// power-driven rule is never more permissive; below 1 it can capture
    /// one of two colliding devices.
    #[test]
    fn symbolic_rule_against_signal_level_sic() {
        let mut disagreements = 0usize;
        for gamma in [0.5, 1.0, 3.0] {
            for levels in 2..=5usize {
                let p = build_levels(levels, gamma).unwrap();
                for devices in 0..=5usize {
                    let total = levels.pow(devices as u32);
                    for code in 0..total {
                        let mut c = code;
                        let assignment: Vec<(usize, usize)> = (0..devices)
                            .map(|d| {
                                let l = c % levels + 1;
                                c /= levels;
                                (d, l)
                            })
                            .collect();
                        let symbolic = sic_decode(&assignment);
                        let signal = sic_decode_by_sinr(&p, &assignment);
                        if gamma >= 1.0 {
                            assert!(
                                signal.is_subset(&symbolic),
                                "L={levels} gamma={gamma} {assignment:?}"
                            );
                        }
                        let distinct: BTreeSet<usize> =
                            assignment.iter().map(|&(_, l)| l).collect();
                        if distinct.len() == assignment.len() {
                            assert_eq!(symbolic, signal, "L={levels} gamma={gamma} {assignment:?}");
                        } else if symbolic != signal {
                            disagreements += 1;
                        }
                    }
                }
            }
        }
        // e.g. L = 2: [level 1, level 2, level 2] gives l_1 / (2 l_2 + 1) < γ
        assert!(disagreements > 0);
    }

    fn assignment_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec(1usize..=6, 0..8)
            .prop_map(|levels| levels.into_iter().enumerate().collect())
    }

    proptest! {
        #[test]
        fn distinct_levels_all_decode(mut levels in prop::collection::btree_set(1usize..=10, 0..8)) {
            let a: Vec<(usize, usize)> = std::mem::take(&mut levels).into_iter().enumerate().collect();
            prop_assert_eq!(sic_decode(&a).len(), a.len());
        }

        #[test]
        fn decoded_devices_sit_under_singleton_levels(a in assignment_strategy()) {
            let decoded = sic_decode(&a);
            for &(id, l) in &a {
                if decoded.contains(&id) {
                    for upper in 1..=l {
                        let n = a.iter().filter(|&&(_, m)| m == upper).count();
                        prop_assert!(n <= 1);
                    }
                }
            }
        }

        #[test]
        fn lowest_level_newcomer_does_not_disturb_upper_levels(a in assignment_strategy()) {
            let lowest = a.iter().map(|&(_, l)| l).max().unwrap_or(1);
            let before = sic_decode(&a);
            let mut extended = a.clone();
            extended.push((usize::MAX, lowest));
            let after = sic_decode(&extended);
            for &(id, l) in &a {
                if l < lowest {
                    prop_assert_eq!(before.contains(&id), after.contains(&id));
                }
            }
        }
    }
}
