//! Permutations and their 0/1 matrix form.
//!
//! A permutation matrix `P` has `P[i, mapping[i]] = 1`. Applied to a stacked
//! scrambled object `X̃` it reconstructs `X_rec = Pᵀ X̃`, so item `i` of the
//! scrambled input lands in slot `mapping[i]`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(Error::Domain(format!(
                    "{mapping:?} is not a permutation of 0..{n}"
                )));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn reversed(n: usize) -> Self {
        Self {
            mapping: (0..n).rev().collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    /// Permutation that sorts `values` ascending: `mapping[i]` is the rank of
    /// `values[i]`. Ties keep input order.
    pub fn sorting<T: Scalar>(values: &[T]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
        let mut mapping = vec![0; values.len()];
        for (rank, &i) in order.iter().enumerate() {
            mapping[i] = rank;
        }
        Self { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// `self ∘ other`: `i ↦ self[other[i]]`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_len(self.len(), other.len())?;
        Ok(Self {
            mapping: other.mapping.iter().map(|&k| self.mapping[k]).collect(),
        })
    }

    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.mapping.iter().enumerate() {
            m[(i, j)] = T::one();
        }
        m
    }

    /// Inverse of [`to_matrix`](Self::to_matrix); entries must be exactly 0 or 1.
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("{:?} is not square", m.shape())));
        }
        let mut mapping = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row(i);
            if row.iter().any(|&v| v != T::zero() && v != T::one()) {
                return Err(Error::Domain(format!("row {i} is not 0/1")));
            }
            let ones: Vec<usize> = (0..row.len()).filter(|&j| row[j] == T::one()).collect();
            if ones.len() != 1 {
                return Err(Error::Domain(format!("row {i} has {} ones", ones.len())));
            }
            mapping.push(ones[0]);
        }
        Self::new(mapping)
    }

    /// `Σᵢ X[i, mapping[i]]`
    pub fn objective<T: Scalar>(&self, x: &Matrix<T>) -> T {
        self.mapping
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &j)| acc + x[(i, j)])
    }

    /// `Pᵀ X̃`: item `i` moves to slot `mapping[i]`.
    pub fn reconstruct<V: Clone>(&self, scrambled: &[V]) -> Result<Vec<V>> {
        check_len(self.len(), scrambled.len())?;
        let mut out: Vec<Option<V>> = vec![None; scrambled.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            out[m] = Some(scrambled[i].clone());
        }
        Ok(out.into_iter().map(|v| v.expect("bijection")).collect())
    }

    /// Inverse of [`reconstruct`](Self::reconstruct): the scrambled object
    /// `X̃` with `Pᵀ X̃ = original`.
    pub fn scramble<V: Clone>(&self, original: &[V]) -> Result<Vec<V>> {
        check_len(self.len(), original.len())?;
        Ok(self.mapping.iter().map(|&m| original[m].clone()).collect())
    }

    /// Number of positions where the two permutations disagree.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        check_len(self.len(), other.len())?;
        Ok(self
            .mapping
            .iter()
            .zip(&other.mapping)
            .filter(|(a, b)| a != b)
            .count())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.mapping
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.mapping)
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("sizes {a} and {b} differ")));
    }
    Ok(())
}

/// Kendall tau-a between two rankings of the same items.
///
/// Computed from the inversion count of `q ∘ p⁻¹` by merge sort. Returns 1
/// for fewer than two items.
pub fn kendall_tau(p: &Permutation, q: &Permutation) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let n = p.len();
    if n < 2 {
        return Ok(1.0);
    }
    // sequence of q-ranks listed in p-rank order
    let mut seq = q.compose(&p.inverse())?.mapping;
    let mut buf = vec![0; n];
    let discordant = count_inversions(&mut seq, &mut buf);
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(1.0 - 2.0 * discordant as f64 / pairs)
}

fn count_inversions(v: &mut [usize], buf: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut inv = count_inversions(left, &mut buf[..mid]) + count_inversions(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            buf[k] = right[j];
            inv += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    k += left.len() - i;
    buf[k..k + right.len() - j].copy_from_slice(&right[j..]);
    v.copy_from_slice(&buf[..n]);
    inv
}
