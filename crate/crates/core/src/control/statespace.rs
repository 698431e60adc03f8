//! Enumerated finite state space `S(h)` and its transition operators.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::composition::Composition;
use crate::ctmc::{Chain, MergeConvention};
use crate::error::{Error, Result};
use crate::kernels::{ControlPoint, RateKernel};

/// Number of integer partitions of `n`.
pub fn partition_count(n: usize) -> u128 {
    let mut p = vec![0u128; n + 1];
    p[0] = 1;
    for part in 1..=n {
        for total in part..=n {
            p[total] += p[total - part];
        }
    }
    p[n]
}

fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, max: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(prefix.clone());
            return;
        }
        for part in (1..=rest.min(max)).rev() {
            prefix.push(part);
            rec(rest - part, part, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// All compositions of `N` players at scale `h`: integer partitions of `N`
/// in lexicographic order of their non-increasing part lists.
#[derive(Debug, Clone)]
pub struct StateSpace {
    players: u64,
    h: f64,
    states: Vec<Composition>,
    index: HashMap<Vec<(usize, u64)>, usize>,
}

impl StateSpace {
    pub const DEFAULT_CAP: usize = 2000;

    pub fn enumerate(players: u64, h: f64, cap: usize) -> Result<Self> {
        let count = partition_count(players as usize);
        if count > cap as u128 {
            return Err(Error::StateSpaceTooLarge {
                count: usize::try_from(count).unwrap_or(usize::MAX),
                cap,
            });
        }
        let states = partitions(players as usize)
            .into_iter()
            .map(|parts| {
                let mut counts: Vec<(usize, u64)> = Vec::new();
                for p in parts.into_iter().rev() {
                    match counts.last_mut() {
                        Some((k, n)) if *k == p => *n += 1,
                        _ => counts.push((p, 1)),
                    }
                }
                Composition::new(h, counts)
            })
            .collect::<Result<Vec<_>>>()?;
        let index = states.iter().enumerate().map(|(i, s)| (s.key(), i)).collect();
        Ok(StateSpace {
            players,
            h,
            states,
            index,
        })
    }

    pub fn players(&self) -> u64 {
        self.players
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Composition] {
        &self.states
    }

    pub fn index_of(&self, x: &Composition) -> Option<usize> {
        if (x.h() - self.h).abs() > 1e-12 * self.h {
            return None;
        }
        self.index.get(&x.key()).copied()
    }

    /// Generator matrix `Q_b` with rows summing to zero.
    pub fn generator(&self, kernel: &dyn RateKernel, b: ControlPoint, convention: MergeConvention) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        let mut chain = Chain::new(kernel, convention);
        for (row, x) in self.states.iter().enumerate() {
            for (event, rate) in chain.rate_table(x, b) {
                let mut y = x.clone();
                event.apply(&mut y);
                let col = self.index[&y.key()];
                q[(row, col)] += rate;
                q[(row, row)] -= rate;
            }
        }
        q
    }

    /// One-step transition matrix `exp(tau Q_b)`.
    pub fn transition(
        &self,
        kernel: &dyn RateKernel,
        b: ControlPoint,
        convention: MergeConvention,
        tau: f64,
    ) -> DMatrix<f64> {
        expm(&(self.generator(kernel, b, convention) * tau))
    }
}

/// Matrix exponential by scaling and squaring of a Taylor series, with the
/// series truncated once terms fall below `1e-17` relative to the partial sum.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..60 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() <= 1e-17 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::constant_example_kernel;

    #[test]
    fn partition_counts() {
        assert_eq!(partition_count(0), 1);
        assert_eq!(partition_count(4), 5);
        assert_eq!(partition_count(12), 77);
        assert_eq!(partition_count(30), 5604);
    }

    #[test]
    fn lexicographic_enumeration() {
        let s = StateSpace::enumerate(4, 0.25, 100).unwrap();
        let keys: Vec<_> = s.states().iter().map(Composition::key).collect();
        assert_eq!(
            keys,
            vec![
                vec![(1, 4)],
                vec![(1, 2), (2, 1)],
                vec![(2, 2)],
                vec![(1, 1), (3, 1)],
                vec![(4, 1)],
            ]
        );
        for (i, x) in s.states().iter().enumerate() {
            assert_eq!(s.index_of(x), Some(i));
            assert_eq!(x.players(), 4);
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            StateSpace::enumerate(30, 1.0 / 30.0, 100),
            Err(Error::StateSpaceTooLarge { count: 5604, cap: 100 })
        ));
    }

    #[test]
    fn generator_rows_and_stochastic_transition() {
        let s = StateSpace::enumerate(5, 0.2, 100).unwrap();
        let k = constant_example_kernel();
        for conv in [MergeConvention::Combinatorial, MergeConvention::Literal] {
            let q = s.generator(&k, ControlPoint::new(0.3).unwrap(), conv);
            for r in 0..s.len() {
                assert!(q.row(r).sum().abs() < 1e-12);
            }
            let p = s.transition(&k, ControlPoint::new(0.3).unwrap(), conv, 0.7);
            for r in 0..s.len() {
                assert!((p.row(r).sum() - 1.0).abs() < 1e-12);
                assert!(p.row(r).iter().all(|v| *v >= -1e-15));
            }
        }
    }

    #[test]
    fn expm_matches_nalgebra() {
        let s = StateSpace::enumerate(6, 1.0 / 6.0, 100).unwrap();
        let k = constant_example_kernel();
        let q = s.generator(&k, ControlPoint::new(0.6).unwrap(), MergeConvention::Combinatorial) * 2.5;
        let ours = expm(&q);
        let theirs = q.clone().exp();
        assert!((ours - theirs).amax() < 1e-10);
    }
}
