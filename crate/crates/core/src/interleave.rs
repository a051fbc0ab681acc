//! Seeded global shuffling of a payload before grid mapping.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::Cplx;

/// Identifier recorded in every seeded plan and run manifest.
pub const SHUFFLE_ALGORITHM: &str = "fisher-yates-lemire/splitmix64-v1";

/// A permutation of `[0, length)`; `shuffle` emits `input[permutation[i]]`
/// at position `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShufflePlan {
    seed: Option<u64>,
    algorithm: &'static str,
    permutation: Vec<usize>,
}

/// Fisher-Yates over `[0, length)` driven by [`SplitMix64`].
pub fn make_plan(seed: u64, length: usize) -> Result<ShufflePlan> {
    if length == 0 {
        return Err(Error::invalid("shuffle plan length must be positive"));
    }
    let mut rng = SplitMix64::new(seed);
    let mut permutation: Vec<usize> = (0..length).collect();
    for i in (1..length).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        permutation.swap(i, j);
    }
    Ok(ShufflePlan {
        seed: Some(seed),
        algorithm: SHUFFLE_ALGORITHM,
        permutation,
    })
}

impl ShufflePlan {
    pub fn identity(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("shuffle plan length must be positive"));
        }
        Ok(Self {
            seed: None,
            algorithm: "identity",
            permutation: (0..length).collect(),
        })
    }

    /// `None` for the identity plan.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        self.algorithm
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// Slot at which input position `p` is transmitted.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (slot, &p) in self.permutation.iter().enumerate() {
            inv[p] = slot;
        }
        inv
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.permutation.len() {
            return Err(Error::SizeMismatch {
                expected: self.permutation.len(),
                got: len,
            });
        }
        Ok(())
    }
}

pub fn shuffle(symbols: &[Cplx], plan: &ShufflePlan) -> Result<Vec<Cplx>> {
    plan.check(symbols.len())?;
    Ok(plan.permutation.iter().map(|&p| symbols[p]).collect())
}

pub fn deshuffle(symbols: &[Cplx], plan: &ShufflePlan) -> Result<Vec<Cplx>> {
    plan.check(symbols.len())?;
    let mut out = vec![Cplx::new(0.0, 0.0); symbols.len()];
    for (&value, &p) in symbols.iter().zip(&plan.permutation) {
        out[p] = value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_is_trivial() {
        let plan = make_plan(99, 1).unwrap();
        assert_eq!(plan.permutation(), &[0]);
        let x = [Cplx::new(1.5, -2.0)];
        assert_eq!(shuffle(&x, &plan).unwrap(), x);
        assert_eq!(deshuffle(&x, &plan).unwrap(), x);
    }

    #[test]
    fn zero_length_rejected() {
        assert!(make_plan(1, 0).is_err());
        assert!(ShufflePlan::identity(0).is_err());
    }

    #[test]
    fn deterministic_and_bijective() {
        let a = make_plan(1, 32768).unwrap();
        assert_eq!(a, make_plan(1, 32768).unwrap());
        assert_eq!(a.algorithm(), SHUFFLE_ALGORITHM);
        let mut sorted = a.permutation().to_vec();
        sorted.sort_unstable();
        assert!(sorted.iter().enumerate().all(|(i, &v)| i == v));
        assert!(!a.is_identity());
        assert_ne!(a, make_plan(2, 32768).unwrap());
    }

    #[test]
    fn identity_plan_is_noop() {
        let plan = ShufflePlan::identity(5).unwrap();
        let x: Vec<Cplx> = (0..5).map(|i| Cplx::new(i as f64, 0.0)).collect();
        assert_eq!(shuffle(&x, &plan).unwrap(), x);
        assert_eq!(deshuffle(&x, &plan).unwrap(), x);
        assert_eq!(plan.seed(), None);
    }

    #[test]
    fn follows_gather_convention() {
        let plan = make_plan(4, 10).unwrap();
        let x: Vec<Cplx> = (0..10).map(|i| Cplx::new(i as f64, 0.0)).collect();
        let y = shuffle(&x, &plan).unwrap();
        for (i, &p) in plan.permutation().iter().enumerate() {
            assert_eq!(y[i], x[p]);
        }
        let inv = plan.inverse();
        for p in 0..10 {
            assert_eq!(y[inv[p]], x[p]);
        }
    }

    #[test]
    fn length_mismatch() {
        let plan = make_plan(4, 10).unwrap();
        let x = vec![Cplx::new(0.0, 0.0); 9];
        assert!(matches!(shuffle(&x, &plan), Err(Error::SizeMismatch { .. })));
        assert!(deshuffle(&x, &plan).is_err());
    }
}
