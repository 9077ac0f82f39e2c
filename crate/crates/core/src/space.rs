//! Shrunk per-dimension channel-count spaces and the neighbour geometry used
//! by the colony.

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchitectureSpec;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("alpha must be one of 0.1, 0.2, ..., 1.0 (got {0})")]
    InvalidAlpha(f64),
    #[error("candidate list for dimension {0} must be non-empty, positive and strictly increasing")]
    InvalidCandidates(usize),
    #[error("structure has {got} entries, space has {expected} dimensions")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {dim}: {value} is not a candidate")]
    NotACandidate { dim: usize, value: usize },
}

/// The preserved channel count per searchable dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrunedStructure(Vec<usize>);

impl PrunedStructure {
    pub fn new(channels: Vec<usize>) -> Self {
        PrunedStructure(channels)
    }

    pub fn channels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl fmt::Display for PrunedStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Upper bound on the preserved fraction, stored in tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alpha(u8);

impl Alpha {
    pub fn from_tenths(tenths: u8) -> Result<Self, SpaceError> {
        if (1..=10).contains(&tenths) {
            Ok(Alpha(tenths))
        } else {
            Err(SpaceError::InvalidAlpha(f64::from(tenths) / 10.0))
        }
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = SpaceError;

    fn try_from(alpha: f64) -> Result<Self, Self::Error> {
        let scaled = alpha * 10.0;
        let k = scaled.round();
        if !alpha.is_finite() || (scaled - k).abs() > 1e-9 || !(1.0..=10.0).contains(&k) {
            return Err(SpaceError::InvalidAlpha(alpha));
        }
        Ok(Alpha(k as u8))
    }
}

/// Candidate channel counts per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    candidates: Vec<Vec<usize>>,
    alpha: Option<Alpha>,
}

/// `round(k/10 · base)` with halves rounded up, floored at one channel.
fn integerize(k: usize, base: usize) -> usize {
    ((k * base + 5) / 10).max(1)
}

impl SearchSpace {
    pub fn build(spec: &ArchitectureSpec, alpha: f64) -> Result<Self, SpaceError> {
        let alpha = Alpha::try_from(alpha)?;
        Ok(Self::from_bases(&spec.base_channels(), alpha))
    }

    pub fn from_bases(bases: &[usize], alpha: Alpha) -> Self {
        let candidates = bases
            .iter()
            .map(|&c| {
                let mut list: Vec<usize> = (1..=usize::from(alpha.tenths())).map(|k| integerize(k, c)).collect();
                list.dedup();
                list
            })
            .collect();
        SearchSpace {
            candidates,
            alpha: Some(alpha),
        }
    }

    /// A space with explicit candidate lists, e.g. rebuilt from a history.
    pub fn from_candidates(candidates: Vec<Vec<usize>>) -> Result<Self, SpaceError> {
        for (i, list) in candidates.iter().enumerate() {
            let increasing = list.windows(2).all(|w| w[0] < w[1]);
            if list.is_empty() || list[0] == 0 || !increasing {
                return Err(SpaceError::InvalidCandidates(i));
            }
        }
        Ok(SearchSpace { candidates, alpha: None })
    }

    pub fn alpha(&self) -> Option<Alpha> {
        self.alpha
    }

    pub fn dimensions(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self, dim: usize) -> &[usize] {
        &self.candidates[dim]
    }

    pub fn all_candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    /// Number of structures: the product of the candidate-list lengths.
    pub fn size(&self) -> BigUint {
        self.candidates
            .iter()
            .fold(BigUint::from(1u32), |acc, list| acc * BigUint::from(list.len()))
    }

    pub fn contains(&self, structure: &PrunedStructure) -> bool {
        self.check(structure).is_ok()
    }

    pub fn check(&self, structure: &PrunedStructure) -> Result<(), SpaceError> {
        if structure.len() != self.dimensions() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dimensions(),
                got: structure.len(),
            });
        }
        for (dim, (&value, list)) in structure.channels().iter().zip(&self.candidates).enumerate() {
            if list.binary_search(&value).is_err() {
                return Err(SpaceError::NotACandidate { dim, value });
            }
        }
        Ok(())
    }

    /// Closest candidate to `value`; equidistant values go to the smaller one.
    pub fn snap(&self, value: f64, dim: usize) -> usize {
        let list = &self.candidates[dim];
        if value.is_nan() {
            return list[0];
        }
        // first candidate >= value
        let upper = list.partition_point(|&c| (c as f64) < value);
        if upper == 0 {
            return list[0];
        }
        if upper == list.len() {
            return list[list.len() - 1];
        }
        let (lo, hi) = (list[upper - 1], list[upper]);
        if hi as f64 - value < value - lo as f64 {
            hi
        } else {
            lo
        }
    }

    /// `snap(c_i + r_i · (c_i − p_i))` per element, one `r_i ∈ [−1, 1]` each.
    pub fn neighbor<R: Rng + ?Sized>(
        &self,
        source: &PrunedStructure,
        partner: &PrunedStructure,
        rng: &mut R,
    ) -> PrunedStructure {
        let factors: Vec<f64> = (0..self.dimensions()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        self.neighbor_with(source, partner, &factors)
    }

    /// [`neighbor`](Self::neighbor) with the perturbation factors supplied.
    pub fn neighbor_with(&self, source: &PrunedStructure, partner: &PrunedStructure, factors: &[f64]) -> PrunedStructure {
        let channels = source
            .channels()
            .iter()
            .zip(partner.channels())
            .zip(factors)
            .enumerate()
            .map(|(dim, ((&c, &p), &r))| {
                let (c, p) = (c as f64, p as f64);
                self.snap(c + r * (c - p), dim)
            })
            .collect();
        PrunedStructure(channels)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> PrunedStructure {
        PrunedStructure(
            self.candidates
                .iter()
                .map(|list| list[rng.gen_range(0..list.len())])
                .collect(),
        )
    }
}

/// Size of the unshrunk space: Π c_i over the searchable dimensions.
pub fn unshrunk_size(spec: &ArchitectureSpec) -> BigUint {
    spec.base_channels()
        .into_iter()
        .fold(BigUint::from(1u32), |acc, c| acc * BigUint::from(c))
}
