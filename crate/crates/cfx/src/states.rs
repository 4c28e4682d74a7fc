//! The finite state set of the digit transducer.
//!
//! For a fixed `D >= 1` the states are the 2x2 integer matrices with
//! `|det| = D` that match one of six sign/ordering patterns. Every entry
//! of such a matrix is bounded by `D` in absolute value, so the set is
//! finite and can be enumerated outright.

use std::collections::HashMap;
use std::fmt;

use num_traits::Zero;

use crate::error::{CfError, Result};
use crate::mat::Mat2;

/// The six state patterns. A matrix can match several patterns (the
/// identity matches both I and IV); classification reports the
/// lowest-numbered match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum StateType {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl fmt::Display for StateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StateType::I => "I",
            StateType::II => "II",
            StateType::III => "III",
            StateType::IV => "IV",
            StateType::V => "V",
            StateType::VI => "VI",
        };
        f.write_str(name)
    }
}

/// Pattern match on a compact matrix. `None` means the matrix is not a
/// state (the determinant is *not* inspected here).
pub fn classify_small(m: [i128; 4]) -> Option<StateType> {
    let [a, b, c, d] = m;
    if c == 0 && b >= 0 && a > 0 && d > 0 && b < d {
        Some(StateType::I)
    } else if d == 0 && a >= 0 && b > 0 && c > 0 && a < c {
        Some(StateType::II)
    } else if a == 0 && d >= 0 && b > 0 && c > 0 && d < b {
        Some(StateType::III)
    } else if b == 0 && c >= 0 && a > 0 && d > 0 && c < a {
        Some(StateType::IV)
    } else if a < 0 && b > 0 && c > 0 && d > 0 && -a < c {
        Some(StateType::V)
    } else if b < 0 && a > 0 && c > 0 && d > 0 && -b < d {
        Some(StateType::VI)
    } else {
        None
    }
}

/// Classifies a matrix, or errors when it is singular. `Ok(None)` means
/// "nonsingular but not a state".
pub fn classify(m: &Mat2) -> Result<Option<StateType>> {
    if m.det().is_zero() {
        return Err(CfError::ZeroDeterminant(m.to_string()));
    }
    let small = match m.to_small() {
        Some(s) => s,
        // A state matrix always fits; anything so large it does not is
        // certainly not one.
        None => return Ok(None),
    };
    Ok(classify_small(small))
}

/// All states of a given determinant magnitude, in a canonical order.
#[derive(Debug, Clone)]
pub struct StateSet {
    pub d: u64,
    pub members: Vec<(Mat2, StateType)>,
    index: HashMap<[i128; 4], usize>,
}

impl StateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, m: &Mat2) -> bool {
        self.index_of(m).is_some()
    }

    pub fn index_of(&self, m: &Mat2) -> Option<usize> {
        m.to_small().and_then(|s| self.index.get(&s).copied())
    }

    pub fn index_of_small(&self, m: [i128; 4]) -> Option<usize> {
        self.index.get(&m).copied()
    }
}

/// Enumerates every state with `|det| = d`. Entries of a state are
/// bounded by `d` in absolute value (each pattern forces the product of
/// one diagonal to vanish or the two products to have opposite signs,
/// so each surviving entry divides into the determinant bound), which
/// makes the scan over `[-d, d]^4` exhaustive.
///
/// ```
/// use cfx::mat::Mat2;
/// use cfx::states::enumerate;
///
/// // |det| = 1 admits exactly the identity and the flip.
/// let m1 = enumerate(1).unwrap();
/// assert_eq!(m1.len(), 2);
/// assert!(m1.contains(&Mat2::identity()));
/// assert!(m1.contains(&Mat2::gen_j()));
/// // |det| = 2 has the eight doubling/halving states.
/// assert_eq!(enumerate(2).unwrap().len(), 8);
/// ```
pub fn enumerate(d: u64) -> Result<StateSet> {
    if d == 0 {
        return Err(CfError::ZeroDeterminant("D = 0".into()));
    }
    let bound = d as i128;
    let mut members = Vec::new();
    for a in -bound..=bound {
        for b in -bound..=bound {
            for c in -bound..=bound {
                for dd in -bound..=bound {
                    if (a * dd - b * c).abs() != bound {
                        continue;
                    }
                    if let Some(ty) = classify_small([a, b, c, dd]) {
                        members.push(([a, b, c, dd], ty));
                    }
                }
            }
        }
    }
    members.sort();
    let index = members
        .iter()
        .enumerate()
        .map(|(i, (m, _))| (*m, i))
        .collect();
    Ok(StateSet {
        d,
        members: members
            .into_iter()
            .map(|(m, ty)| (Mat2::from_small(m), ty))
            .collect(),
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_prefers_type_one() {
        assert_eq!(classify(&Mat2::identity()).unwrap(), Some(StateType::I));
    }

    #[test]
    fn flip_is_type_two() {
        assert_eq!(classify(&Mat2::gen_j()).unwrap(), Some(StateType::II));
    }

    #[test]
    fn classify_examples() {
        // (2,0;1,1) absorbs into type IV.
        assert_eq!(classify(&Mat2::new(2, 0, 1, 1)).unwrap(), Some(StateType::IV));
        // (0,2;1,1) is type III.
        assert_eq!(classify(&Mat2::new(0, 2, 1, 1)).unwrap(), Some(StateType::III));
        // (1,-2;1,3) is type VI.
        assert_eq!(classify(&Mat2::new(1, -2, 1, 3)).unwrap(), Some(StateType::VI));
        // (-1,2;3,1) is type V.
        assert_eq!(classify(&Mat2::new(-1, 2, 3, 1)).unwrap(), Some(StateType::V));
        // All-positive matrices are not states.
        assert_eq!(classify(&Mat2::new(1, 1, 1, 2)).unwrap(), None);
        // Singular matrices are an error, not "not a state".
        assert!(classify(&Mat2::new(1, 2, 2, 4)).is_err());
    }

    #[test]
    fn unit_determinant_states_are_identity_and_flip() {
        let set = enumerate(1).unwrap();
        let members: Vec<&Mat2> = set.members.iter().map(|(m, _)| m).collect();
        assert_eq!(set.len(), 2);
        assert!(members.contains(&&Mat2::identity()));
        assert!(members.contains(&&Mat2::gen_j()));
    }

    #[test]
    fn entries_bounded_by_determinant() {
        for d in 1..=6u64 {
            let set = enumerate(d).unwrap();
            for (m, _) in &set.members {
                let small = m.to_small().unwrap();
                assert!(small.iter().all(|e| e.abs() <= d as i128), "{m} for D={d}");
                assert_eq!(m.det().magnitude(), &d.into());
            }
        }
    }

    #[test]
    fn set_lookup_roundtrip() {
        let set = enumerate(4).unwrap();
        for (i, (m, _)) in set.members.iter().enumerate() {
            assert_eq!(set.index_of(m), Some(i));
        }
        assert!(!set.contains(&Mat2::new(9, 0, 0, 9)));
    }
}
