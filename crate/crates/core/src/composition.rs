//! Exact and rescaled state representations.
//!
//! A [`Composition`] is the integer state of the chain: the number `n_k` of
//! coalitions of each size `k`, together with the scale `h`. The rescaled
//! state is `x = h * n`. Its mass norm `sum_k k x_k = h N` is conserved by
//! every merge and split, where `N` is the number of small players.
//!
//! A [`MeanFieldState`] is a dense, truncated, nonnegative real sequence used
//! by the Smoluchowski integrator.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer coalition counts by size, with rescaling parameter `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CompositionRepr", into = "CompositionRepr")]
pub struct Composition {
    h: f64,
    counts: BTreeMap<usize, u64>,
    mass: u64,
    coalitions: u64,
}

#[derive(Serialize, Deserialize)]
struct CompositionRepr {
    h: f64,
    counts: BTreeMap<usize, u64>,
}

impl TryFrom<CompositionRepr> for Composition {
    type Error = Error;

    fn try_from(repr: CompositionRepr) -> Result<Self> {
        Composition::new(repr.h, repr.counts)
    }
}

impl From<Composition> for CompositionRepr {
    fn from(c: Composition) -> Self {
        CompositionRepr {
            h: c.h,
            counts: c.counts,
        }
    }
}

impl Composition {
    /// Builds a composition from `(size, count)` pairs. Zero counts are
    /// dropped; repeated sizes accumulate.
    pub fn new(h: f64, counts: impl IntoIterator<Item = (usize, u64)>) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidState(format!("scale h must be positive, got {h}")));
        }
        let mut map = BTreeMap::new();
        for (k, n) in counts {
            if k == 0 {
                return Err(Error::InvalidState("coalition size 0 is not allowed".into()));
            }
            if n > 0 {
                *map.entry(k).or_insert(0) += n;
            }
        }
        let mass = map.iter().map(|(&k, &n)| k as u64 * n).sum();
        let coalitions = map.values().sum();
        Ok(Composition {
            h,
            counts: map,
            mass,
            coalitions,
        })
    }

    /// `n` isolated players with scale `h`.
    pub fn singletons(n: u64, h: f64) -> Result<Self> {
        Composition::new(h, [(1, n)])
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total number of players `N = sum_k k n_k`.
    pub fn players(&self) -> u64 {
        self.mass
    }

    /// Total number of coalitions `sum_k n_k`.
    pub fn coalitions(&self) -> u64 {
        self.coalitions
    }

    pub fn count(&self, size: usize) -> u64 {
        self.counts.get(&size).copied().unwrap_or(0)
    }

    /// Occupied sizes in increasing order with their counts.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().map(|(&k, &n)| (k, n))
    }

    pub fn occupied_sizes(&self) -> usize {
        self.counts.len()
    }

    pub fn largest_size(&self) -> usize {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `||x||_{l1(L)} = h N`.
    pub fn mass_norm(&self) -> f64 {
        self.h * self.mass as f64
    }

    /// `m(x) = sum_k x_k = h * (number of coalitions)`.
    pub fn m(&self) -> f64 {
        self.h * self.coalitions as f64
    }

    /// Rejects states whose mass norm exceeds `radius`.
    pub fn ensure_within(&self, radius: f64) -> Result<()> {
        let mass = self.mass_norm();
        if mass > radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBall { mass, radius });
        }
        Ok(())
    }

    pub fn component(&self, size: usize) -> f64 {
        self.h * self.count(size) as f64
    }

    /// Dense rescaled vector `x_1..x_{k_max}` (index 0 holds size 1).
    pub fn dense(&self, k_max: usize) -> Result<Vec<f64>> {
        let largest = self.largest_size();
        if largest > k_max {
            return Err(Error::Truncation { k_max, largest });
        }
        let mut x = vec![0.0; k_max];
        for (k, n) in self.iter() {
            x[k - 1] = self.h * n as f64;
        }
        Ok(x)
    }

    pub fn to_mean_field(&self, k_max: usize) -> Result<MeanFieldState> {
        if k_max == 0 {
            return Err(Error::Truncation {
                k_max,
                largest: self.largest_size(),
            });
        }
        Ok(MeanFieldState { x: self.dense(k_max)? })
    }

    pub fn norms(&self) -> NormReport {
        let l1 = self.m();
        let l1_mass = self.mass_norm();
        let l2 = self
            .iter()
            .map(|(_, n)| {
                let v = self.h * n as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt();
        NormReport { l1, l1_mass, l2 }
    }

    /// `l2` distance between the rescaled states.
    pub fn distance(&self, other: &Composition) -> f64 {
        let sizes: BTreeSet<usize> = self.counts.keys().chain(other.counts.keys()).copied().collect();
        sizes
            .into_iter()
            .map(|k| {
                let d = self.component(k) - other.component(k);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Discrete key identifying the integer state.
    pub fn key(&self) -> Vec<(usize, u64)> {
        self.iter().collect()
    }

    /// `n - e_i - e_j + e_{i+j}`. Requires two distinct coalitions.
    pub(crate) fn apply_merge(&mut self, i: usize, j: usize) {
        self.remove_one(i);
        self.remove_one(j);
        *self.counts.entry(i + j).or_insert(0) += 1;
        self.coalitions -= 1;
        self.debug_check();
    }

    /// `n - e_i + e_j + e_{i-j}`.
    pub(crate) fn apply_split(&mut self, i: usize, j: usize) {
        debug_assert!(j >= 1 && j < i);
        self.remove_one(i);
        *self.counts.entry(j).or_insert(0) += 1;
        *self.counts.entry(i - j).or_insert(0) += 1;
        self.coalitions += 1;
        self.debug_check();
    }

    fn remove_one(&mut self, k: usize) {
        let n = self
            .counts
            .get_mut(&k)
            .unwrap_or_else(|| panic!("no coalition of size {k} to remove"));
        *n -= 1;
        if *n == 0 {
            self.counts.remove(&k);
        }
    }

    fn debug_check(&self) {
        debug_assert_eq!(self.mass, self.counts.iter().map(|(&k, &n)| k as u64 * n).sum::<u64>());
        debug_assert_eq!(self.coalitions, self.counts.values().sum::<u64>());
    }
}

/// Truncated nonnegative sequence `x_1..x_{K_max}` (stored 0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MeanFieldState {
    x: Vec<f64>,
}

impl TryFrom<Vec<f64>> for MeanFieldState {
    type Error = Error;

    fn try_from(x: Vec<f64>) -> Result<Self> {
        MeanFieldState::new(x)
    }
}

impl From<MeanFieldState> for Vec<f64> {
    fn from(s: MeanFieldState) -> Self {
        s.x
    }
}

impl MeanFieldState {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidState("truncation index must be at least 1".into()));
        }
        if let Some((k, v)) = x.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidState(format!(
                "component x_{} = {v} must be finite and nonnegative",
                k + 1
            )));
        }
        Ok(MeanFieldState { x })
    }

    pub fn zeros(k_max: usize) -> Result<Self> {
        MeanFieldState::new(vec![0.0; k_max])
    }

    /// Pads or checks a sequence against `k_max`.
    pub fn with_k_max(mut x: Vec<f64>, k_max: usize) -> Result<Self> {
        if let Some(largest) = x.iter().rposition(|&v| v != 0.0).map(|p| p + 1) {
            if largest > k_max {
                return Err(Error::Truncation { k_max, largest });
            }
        }
        x.resize(k_max, 0.0);
        MeanFieldState::new(x)
    }

    pub fn ensure_within(&self, radius: f64) -> Result<()> {
        let mass = self.mass_norm();
        if mass > radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBall { mass, radius });
        }
        Ok(())
    }

    pub fn k_max(&self) -> usize {
        self.x.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.x
    }

    /// Component for size `k` (1-based); zero beyond the truncation.
    pub fn get(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.x.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn m(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn mass_norm(&self) -> f64 {
        mass_norm(&self.x)
    }

    pub fn norms(&self) -> NormReport {
        norms(&self.x)
    }
}

/// The three norms of a rescaled state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l1: f64,
    #[serde(rename = "l1L")]
    pub l1_mass: f64,
    pub l2: f64,
}

/// `sum_k k |x_k|` with `x[0]` holding size 1.
pub fn mass_norm(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(idx, v)| (idx + 1) as f64 * v.abs()).sum()
}

/// Norms of a dense sequence with `x[0]` holding size 1.
pub fn norms(x: &[f64]) -> NormReport {
    NormReport {
        l1: x.iter().map(|v| v.abs()).sum(),
        l1_mass: mass_norm(x),
        l2: x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// `l2` distance between two dense sequences of possibly different length.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| {
            let d = a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Read-only view of a state handed to rate kernels and rewards.
///
/// The `l1` norm `m(x)` is computed once at construction.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    m: f64,
    repr: Repr<'a>,
}

#[derive(Debug, Clone, Copy)]
enum Repr<'a> {
    Dense(&'a [f64]),
    Sparse(&'a Composition),
}

impl<'a> StateView<'a> {
    pub fn dense(x: &'a [f64]) -> Self {
        StateView {
            m: x.iter().sum(),
            repr: Repr::Dense(x),
        }
    }

    pub fn sparse(c: &'a Composition) -> Self {
        StateView {
            m: c.m(),
            repr: Repr::Sparse(c),
        }
    }

    /// `m(x) = sum_k x_k`.
    pub fn m(&self) -> f64 {
        self.m
    }

    /// `x_k` for 1-based size `k`.
    pub fn component(&self, k: usize) -> f64 {
        match self.repr {
            Repr::Dense(x) => {
                if k == 0 {
                    0.0
                } else {
                    x.get(k - 1).copied().unwrap_or(0.0)
                }
            }
            Repr::Sparse(c) => c.component(k),
        }
    }

    pub fn mass_norm(&self) -> f64 {
        match self.repr {
            Repr::Dense(x) => mass_norm(x),
            Repr::Sparse(c) => c.mass_norm(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        match self.repr {
            Repr::Dense(x) => norms(x).l2,
            Repr::Sparse(c) => c.norms().l2,
        }
    }
}
