//! Dense bit-packed matrices over GF(2), full-rank probability bounds for
//! sparse random matrices, and a Monte Carlo estimator to check them against.

use std::fmt;

use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::rng::{self, tags};
use crate::stats::wilson_interval;

const WORD: usize = 64;

/// Row-major GF(2) matrix; each row occupies `stride` 64-bit words and
/// the padding bits past `cols` are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = cols.div_ceil(WORD);
        Self {
            rows,
            cols,
            stride,
            words: vec![0; rows * stride],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Parses rows written as strings of `0`/`1`, e.g. `["110", "011"]`.
    pub fn from_strs(rows: &[&str]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut m = Self::zeros(rows.len(), cols);
        for (r, line) in rows.iter().enumerate() {
            if line.len() != cols {
                return Err(invalid(format!("row {r} has {} columns, expected {cols}", line.len())));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => m.set(r, c, true),
                    other => return Err(invalid(format!("unexpected character {other:?} in row {r}"))),
                }
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of range");
        (self.words[r * self.stride + c / WORD] >> (c % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of range");
        let w = &mut self.words[r * self.stride + c / WORD];
        let bit = 1u64 << (c % WORD);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.stride..(r + 1) * self.stride]
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Adds row `src` into row `dst` (XOR).
    pub fn add_row(&mut self, dst: usize, src: usize) {
        assert_ne!(dst, src);
        for w in 0..self.stride {
            let v = self.words[src * self.stride + w];
            self.words[dst * self.stride + w] ^= v;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.words.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    /// Row rank over GF(2).
    pub fn rank(&self) -> usize {
        let mut m = self.words.clone();
        let stride = self.stride;
        let mut rank = 0;
        for col in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let w = col / WORD;
            let bit = 1u64 << (col % WORD);
            let Some(pivot) = (rank..self.rows).find(|&r| m[r * stride + w] & bit != 0) else {
                continue;
            };
            if pivot != rank {
                for i in w..stride {
                    m.swap(pivot * stride + i, rank * stride + i);
                }
            }
            // Rows at or below `rank` are zero left of `col`, so only words
            // from `w` onwards need updating.
            for r in rank + 1..self.rows {
                if m[r * stride + w] & bit != 0 {
                    for i in w..stride {
                        m[r * stride + i] ^= m[rank * stride + i];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// True iff the rows are linearly independent. A matrix with more rows
    /// than columns can never be, and simply yields `false`.
    pub fn is_full_row_rank(&self) -> bool {
        self.rows <= self.cols && self.rank() == self.rows
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: String = (0..self.cols).map(|c| if self.get(r, c) { '1' } else { '0' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// I.i.d. Bernoulli(`p`) entries.
pub fn sample_bernoulli_matrix<R: RngCore + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> BitMatrix {
    BitMatrix::from_fn(rows, cols, |_, _| rng::bernoulli(rng, p))
}

/// Parameters of the full-rank lower bound for an `l x m` matrix whose
/// entries are 1 with probability `p`, with Chernoff slack `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankBoundParams {
    pub p: f64,
    pub l: usize,
    pub m: f64,
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 0.5;

impl RankBoundParams {
    pub fn new(p: f64, l: usize, m: f64, epsilon: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("entry probability p={p} must lie in (0, 1)")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid(format!("epsilon={epsilon} must lie in (0, 1)")));
        }
        if (1.0 + epsilon) * p >= 1.0 {
            return Err(invalid(format!("(1+epsilon)*p = {} must be below 1; epsilon too large for p={p}", (1.0 + epsilon) * p)));
        }
        if !(m >= l as f64) {
            return Err(invalid(format!("column count m={m} must be at least the row count l={l}")));
        }
        Ok(Self { p, l, m, epsilon })
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    pub fn p_tilde(&self) -> f64 {
        (1.0 + self.epsilon) * self.p
    }

    pub fn q_tilde(&self) -> f64 {
        1.0 - self.p_tilde()
    }

    /// `(p q)^q̃`
    pub fn s(&self) -> f64 {
        (self.p * self.q()).powf(self.q_tilde())
    }

    /// Exponent `E` of the closed form, so that the bound is `exp(-E)`.
    pub fn closed_form_exponent(&self) -> f64 {
        if self.l == 0 {
            return 0.0;
        }
        let (p, q, l, m) = (self.p, self.q(), self.l as f64, self.m);
        let (pt, qt, s) = (self.p_tilde(), self.q_tilde(), self.s());
        let zero_tail = q.powf(m + 1.0) * (q.powf(-l) - 1.0) / p;
        let collision = s * p.powf(qt * m + 1.0) * q.powf(pt * m - 1.0) / (1.0 - s).powi(2);
        zero_tail + collision
    }
}

/// Closed-form lower bound on the full-rank probability,
/// `exp(-q^{m+1}(q^{-l}-1)/p - s p^{q̃m+1} q^{p̃m-1}/(1-s)^2)`.
///
/// Stated for `p <= 1/4` and large `l`; evaluated as written elsewhere.
/// An empty matrix (`l = 0`) is full rank with probability 1.
pub fn full_rank_probability_bound(params: &RankBoundParams) -> f64 {
    (-params.closed_form_exponent()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SequentialBound {
    pub value: f64,
    /// False when some factor went negative (possible only when `m < l`,
    /// outside the regime the estimate is meant for); `value` is then 0.
    pub valid: bool,
}

/// Row-by-row product `Π_{r<l} (1 - q^{m-r} - r p^{q̃(m-r)+1} q^{p̃m+q̃r-1})`,
/// the form the closed bound is derived from.
pub fn full_rank_probability_sequential(params: &RankBoundParams) -> SequentialBound {
    let (p, q, m) = (params.p, params.q(), params.m);
    let (pt, qt) = (params.p_tilde(), params.q_tilde());
    let mut value = 1.0;
    let mut valid = true;
    for r in 0..params.l {
        let r = r as f64;
        let factor = 1.0 - q.powf(m - r) - r * p.powf(qt * (m - r) + 1.0) * q.powf(pt * m + qt * r - 1.0);
        if factor < 0.0 {
            valid = false;
        }
        value *= factor.clamp(0.0, 1.0);
    }
    SequentialBound { value, valid }
}

/// Chernoff tail `Pr[weight > (1+ε) m p] <= exp(-ε² m p / (2+ε))`.
pub fn chernoff_row_weight_bound(m: f64, p: f64, epsilon: f64) -> f64 {
    (-epsilon * epsilon * m * p / (2.0 + epsilon)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FullRankEstimate {
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub successes: u64,
    pub trials: u64,
}

impl FullRankEstimate {
    pub fn half_width(&self) -> f64 {
        (self.ci_hi - self.ci_lo) / 2.0
    }
}

/// Fraction of `trials` Bernoulli(`p`) matrices that have full row rank,
/// with a Wilson 95% interval. Trial `i` draws from stream `(seed, "matrix", i)`.
pub fn monte_carlo_full_rank(rows: usize, cols: usize, p: f64, trials: u64, seed: u64) -> Result<FullRankEstimate> {
    if trials == 0 {
        return Err(invalid("monte carlo needs at least one trial"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("entry probability p={p} must lie in [0, 1]")));
    }
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = rng::stream(seed, tags::MATRIX, i);
            sample_bernoulli_matrix(rows, cols, p, &mut rng).is_full_row_rank()
        })
        .count() as u64;
    let (ci_lo, ci_hi) = wilson_interval(successes, trials);
    Ok(FullRankEstimate {
        estimate: successes as f64 / trials as f64,
        ci_lo,
        ci_hi,
        successes,
        trials,
    })
}
