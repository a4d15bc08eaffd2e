use crate::error::{Error, Result};

/// Truncated set of integer frequencies `n` with `|n_j| <= bound` on every axis.
///
/// Frequencies are stored in lexicographic order with the last axis varying
/// fastest, so the position of `n` in a full set is
/// `sum_j (n_j + bound) * (2 bound + 1)^(dim - 1 - j)`. Every Fourier series in
/// the crate uses coefficient arrays laid out over this full box; a set that
/// excludes zero simply carries a zero coefficient at the centre.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencySet {
    bound: usize,
    dim: usize,
    exclude_zero: bool,
    indices: Vec<i32>,
}

impl FrequencySet {
    pub fn new(bound: i64, dim: usize, exclude_zero: bool) -> Result<Self> {
        if bound < 0 {
            return Err(Error::Input(format!(
                "frequency bound must be >= 0, got {bound}"
            )));
        }
        if dim == 0 {
            return Err(Error::Input("dimension must be at least 1".into()));
        }
        let bound = bound as usize;
        let width = 2 * bound + 1;
        let total = width
            .checked_pow(dim as u32)
            .filter(|t| *t <= i32::MAX as usize)
            .ok_or_else(|| Error::Input("frequency set too large".into()))?;
        let mut indices = Vec::with_capacity(total * dim);
        let mut n = vec![-(bound as i32); dim];
        for _ in 0..total {
            if !(exclude_zero && n.iter().all(|&c| c == 0)) {
                indices.extend_from_slice(&n);
            }
            for j in (0..dim).rev() {
                if n[j] < bound as i32 {
                    n[j] += 1;
                    break;
                }
                n[j] = -(bound as i32);
            }
        }
        Ok(Self {
            bound,
            dim,
            exclude_zero,
            indices,
        })
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn excludes_zero(&self) -> bool {
        self.exclude_zero
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[i32]> + '_ {
        self.indices.chunks_exact(self.dim)
    }

    /// Number of entries in the full box `(2 bound + 1)^dim`.
    pub fn box_len(&self) -> usize {
        (2 * self.bound + 1).pow(self.dim as u32)
    }

    /// Same truncation with zero included.
    pub fn with_zero(&self) -> Self {
        Self::new(self.bound as i64, self.dim, false).expect("valid set")
    }

    /// Iterate every frequency of the full box (zero included) in layout order.
    pub(crate) fn box_iter(&self) -> BoxIter {
        BoxIter::new(self.bound, self.dim)
    }

    /// Rank of every box position in a truncation-independent enumeration of
    /// `Z^dim`: shells of growing max-norm, lexicographic inside a shell.
    ///
    /// A frequency keeps its rank when the bound grows, which is what lets
    /// random coefficients be addressed by frequency rather than by position.
    pub(crate) fn shell_ranks(&self) -> Vec<u64> {
        let dim = self.dim as u32;
        let mut counters = vec![0u64; self.bound + 1];
        let mut ranks = Vec::with_capacity(self.box_len());
        for n in self.box_iter() {
            let r = n.iter().map(|c| c.unsigned_abs() as u64).max().unwrap_or(0);
            let inner = if r == 0 { 0 } else { (2 * r - 1).pow(dim) };
            let k = &mut counters[r as usize];
            ranks.push(inner + *k);
            *k += 1;
        }
        ranks
    }
}

pub(crate) struct BoxIter {
    bound: i32,
    current: Vec<i32>,
    remaining: usize,
}

impl BoxIter {
    fn new(bound: usize, dim: usize) -> Self {
        Self {
            bound: bound as i32,
            current: vec![-(bound as i32); dim],
            remaining: (2 * bound + 1).pow(dim as u32),
        }
    }
}

impl Iterator for BoxIter {
    type Item = Vec<i32>;

    fn next(&mut self) -> Option<Vec<i32>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = self.current.clone();
        for j in (0..self.current.len()).rev() {
            if self.current[j] < self.bound {
                self.current[j] += 1;
                break;
            }
            self.current[j] = -self.bound;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for BoxIter {}
