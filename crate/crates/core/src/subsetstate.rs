//! Exact subset phase states and their `t`-th moments.
//!
//! A subset phase state on `n` qubits is `2^{-k/2} sum_b (-1)^{f(b)} |p(b)>`
//! where `p` maps the `2^k` strings `b` to distinct `n`-bit images. The
//! state is stored as that table; a statevector index is the image read as
//! an integer with site `j` at bit `j - 1`.

use nalgebra::DMatrix;
use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::algorithms::{self, Algorithm, GenParams};
use crate::circuit::Circuit;
use crate::copysim::{compile_circuit, sample_initial_copies};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tags};

/// Largest `n` for which images fit in one word.
pub const MAX_TABLE_N: u32 = 64;
/// Largest `k`; the table holds `2^k` entries.
pub const MAX_TABLE_K: u32 = 24;
/// Largest `n` accepted by [`SubsetState::to_statevector`].
pub const MAX_STATEVECTOR_N: u32 = 24;
/// Largest moment dimension `2^{nt}`.
pub const MAX_MOMENT_DIM: u128 = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetState {
    n: u32,
    k: u32,
    images: Vec<u64>,
    negative: Vec<bool>,
}

fn check_table(n: u32, k: u32) -> Result<()> {
    if n == 0 || n > MAX_TABLE_N {
        return Err(invalid(format!("subset states need 1 <= n <= {MAX_TABLE_N}, got {n}")));
    }
    if k > n {
        return Err(invalid(format!("k={k} exceeds n={n}")));
    }
    if k > MAX_TABLE_K {
        return Err(Error::DimensionGuard {
            what: "subset table size",
            requested: 1u128 << k,
            limit: 1u128 << MAX_TABLE_K,
            hint: format!("use k <= {MAX_TABLE_K}"),
        });
    }
    Ok(())
}

/// `|+>^k |0>^(n-k)`: every `b` maps to itself with sign +1.
pub fn initial_subset_state(n: u32, k: u32) -> Result<SubsetState> {
    check_table(n, k)?;
    Ok(SubsetState {
        n,
        k,
        images: (0..1u64 << k).collect(),
        negative: vec![false; 1 << k],
    })
}

impl SubsetState {
    /// Builds a state from an explicit table; images must be distinct.
    pub fn from_table(n: u32, k: u32, images: Vec<u64>, negative: Vec<bool>) -> Result<Self> {
        check_table(n, k)?;
        if images.len() != 1 << k || negative.len() != images.len() {
            return Err(Error::DimensionMismatch(images.len(), 1 << k));
        }
        if n < 64 && images.iter().any(|&x| x >> n != 0) {
            return Err(invalid(format!("image outside {{0,1}}^{n}")));
        }
        let mut sorted = images.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("images are not distinct"));
        }
        Ok(Self { n, k, images, negative })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn images(&self) -> &[u64] {
        &self.images
    }

    pub fn negatives(&self) -> &[bool] {
        &self.negative
    }

    /// `(image, sign)` of entry `b`.
    pub fn entry(&self, b: usize) -> (u64, i8) {
        (self.images[b], if self.negative[b] { -1 } else { 1 })
    }

    /// Evolves every entry as a one-copy ensemble.
    pub fn apply_circuit(&mut self, c: &Circuit) -> Result<()> {
        if c.n != self.n {
            return Err(Error::DimensionMismatch(c.n as usize, self.n as usize));
        }
        for g in compile_circuit(c)? {
            g.run(&mut self.images, 1, &mut self.negative);
        }
        Ok(())
    }

    pub fn to_statevector(&self) -> Result<Vec<f64>> {
        if self.n > MAX_STATEVECTOR_N {
            return Err(Error::DimensionGuard {
                what: "statevector length",
                requested: 1u128 << self.n,
                limit: 1u128 << MAX_STATEVECTOR_N,
                hint: format!("use n <= {MAX_STATEVECTOR_N}"),
            });
        }
        let amp = (-f64::from(self.k) / 2.0).exp2();
        let mut v = vec![0.0; 1 << self.n];
        for (&x, &neg) in self.images.iter().zip(&self.negative) {
            v[x as usize] = if neg { -amp } else { amp };
        }
        Ok(v)
    }

    /// Nonzero entries of `psi^{(x)t}` as `(index, negative)`; all share the
    /// magnitude `2^{-kt/2}`.
    fn tensor_support(&self, t: u32) -> Vec<(u32, bool)> {
        let mut out: Vec<(u32, bool)> = vec![(0, false)];
        for _ in 0..t {
            out = out
                .iter()
                .flat_map(|&(idx, neg)| {
                    self.images
                        .iter()
                        .zip(&self.negative)
                        .map(move |(&x, &s)| ((idx << self.n) | x as u32, neg ^ s))
                })
                .collect();
        }
        out.sort_unstable();
        out
    }
}

/// A uniformly random subset phase state: `2^k` distinct uniform images
/// with independent fair signs.
pub fn sample_oracle_state<R: RngCore + ?Sized>(n: u32, k: u32, rng: &mut R) -> Result<SubsetState> {
    check_table(n, k)?;
    let e = sample_initial_copies(n, n, 1 << k, rng)?;
    let images = (0..e.t()).map(|i| e.copy_words(i)[0]).collect();
    let negative = (0..e.t()).map(|_| rng::coin(rng)).collect();
    SubsetState::from_table(n, k, images, negative)
}

/// Circuit family used to prepare states from the initial subset: a bit
/// thermalizer followed by a sign thermalizer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreparationParams {
    pub bits: Algorithm,
    pub gen: GenParams,
    pub sign_m: u32,
    pub sign_p: u32,
}

impl PreparationParams {
    /// Parameters that thermalize the `2t` strings a `t`-th moment entry
    /// involves.
    pub fn for_moment(n: u32, k: u32, t: u32, alpha: f64, m: u32) -> Self {
        Self {
            bits: Algorithm::GateOpt,
            gen: GenParams { n, k, t: 2 * t, alpha, m, p: None },
            sign_m: m,
            sign_p: n / m.max(1),
        }
    }
}

/// `samples` algorithm-prepared states; sample `i` uses generator stream `i`.
pub fn sample_algorithm_states(params: &PreparationParams, samples: usize, seed: u64) -> Result<Vec<SubsetState>> {
    let (n, k) = (params.gen.n, params.gen.k);
    check_table(n, k)?;
    (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, tags::GENERATE, i);
            let c = algorithms::phase_state_circuit(params.bits, &params.gen, params.sign_m, params.sign_p, &mut r)?;
            let mut s = initial_subset_state(n, k)?;
            s.apply_circuit(&c)?;
            Ok(s)
        })
        .collect()
}

/// `samples` oracle states; sample `i` uses oracle stream `i`.
pub fn sample_oracle_states(n: u32, k: u32, samples: usize, seed: u64) -> Result<Vec<SubsetState>> {
    (0..samples as u64)
        .into_par_iter()
        .map(|i| sample_oracle_state(n, k, &mut rng::stream(seed, tags::ORACLE, i)))
        .collect()
}

/// A real symmetric `t`-fold moment matrix of dimension `2^{nt}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentMatrix {
    pub n: u32,
    pub t: u32,
    pub data: DMatrix<f64>,
}

/// `2^{nt}` if it is within the dense guard.
pub fn moment_dimension(n: u32, t: u32) -> Result<usize> {
    let bits = u64::from(n) * u64::from(t);
    let requested = if bits >= 127 { u128::MAX } else { 1u128 << bits };
    if t == 0 || requested > MAX_MOMENT_DIM {
        return Err(Error::DimensionGuard {
            what: "moment dimension 2^(n t)",
            requested,
            limit: MAX_MOMENT_DIM,
            hint: "try n=6 with t=2, n=4 with t=3, or n=12 with t=1".into(),
        });
    }
    Ok(requested as usize)
}

impl MomentMatrix {
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.data.clone().symmetric_eigenvalues().iter().copied().collect()
    }

    /// Smallest eigenvalue is at least `-tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.eigenvalues().into_iter().all(|l| l >= -tol)
    }
}

/// Average of `(|psi><psi|)^{(x)t}` over the samples.
pub fn empirical_moment(samples: &[SubsetState], t: u32) -> Result<MomentMatrix> {
    let first = samples.first().ok_or_else(|| invalid("no samples"))?;
    let (n, k) = (first.n, first.k);
    if samples.iter().any(|s| s.n != n || s.k != k) {
        return Err(invalid("samples have mixed (n, k)"));
    }
    let dim = moment_dimension(n, t)?;
    let supports: Vec<Vec<(u32, bool)>> = samples.par_iter().map(|s| s.tensor_support(t)).collect();

    // Every sample contributes +-1 times a common factor, so integer sums
    // keep the accumulation exact and independent of thread count.
    let mut sums = vec![0i32; dim * dim];
    sums.par_chunks_mut(dim).enumerate().for_each(|(col, column)| {
        let col = col as u32;
        for sup in &supports {
            if let Ok(j) = sup.binary_search_by_key(&col, |e| e.0) {
                let sj = sup[j].1;
                for &(i, si) in sup {
                    column[i as usize] += if si ^ sj { -1 } else { 1 };
                }
            }
        }
    });
    let scale = (-f64::from(k * t)).exp2() / samples.len() as f64;
    Ok(MomentMatrix {
        n,
        t,
        data: DMatrix::from_iterator(dim, dim, sums.into_iter().map(|s| f64::from(s) * scale)),
    })
}

/// Normalized projector onto the symmetric subspace of `t` copies of
/// `2^n` dimensions: the average of all tensor-factor permutations, divided
/// by its trace.
pub fn haar_moment(n: u32, t: u32) -> Result<MomentMatrix> {
    if t == 0 || t > 3 {
        return Err(invalid(format!("haar_moment supports 1 <= t <= 3, got {t}")));
    }
    let dim = moment_dimension(n, t)?;
    let d = 1usize << n;
    let perms: &[&[usize]] = match t {
        1 => &[&[0]],
        2 => &[&[0, 1], &[1, 0]],
        _ => &[&[0, 1, 2], &[0, 2, 1], &[1, 0, 2], &[1, 2, 0], &[2, 0, 1], &[2, 1, 0]],
    };
    let mut data = DMatrix::<f64>::zeros(dim, dim);
    let mut digits = vec![0usize; t as usize];
    for idx in 0..dim {
        let mut rest = idx;
        for slot in digits.iter_mut().rev() {
            *slot = rest % d;
            rest /= d;
        }
        for perm in perms {
            let image = perm.iter().fold(0, |acc, &p| acc * d + digits[p]);
            data[(image, idx)] += 1.0;
        }
    }
    let tr = data.trace();
    data /= tr;
    Ok(MomentMatrix { n, t, data })
}

/// Half the sum of absolute eigenvalues of `a - b`.
pub fn trace_distance(a: &MomentMatrix, b: &MomentMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let diff = &a.data - &b.data;
    let td = 0.5 * diff.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>();
    Ok(td.clamp(0.0, 1.0))
}

/// Trace distance of a mixture that fails with probability `p_fail` and
/// otherwise lands within `td_sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixedBound {
    /// `p_fail + (1 - p_fail) td_sigma`.
    pub bound: f64,
    /// `p_fail + td_sigma`.
    pub simplified: f64,
}

pub fn mixed_bound(p_fail: f64, td_sigma: f64) -> Result<MixedBound> {
    if !(0.0..=1.0).contains(&p_fail) || !(0.0..=1.0).contains(&td_sigma) {
        return Err(invalid(format!("p_fail={p_fail} and td={td_sigma} must lie in [0, 1]")));
    }
    Ok(MixedBound {
        bound: p_fail + (1.0 - p_fail) * td_sigma,
        simplified: p_fail + td_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{ControlTerm, Gate, Layer};
    use crate::copysim::CopyEnsemble;

    #[test]
    fn initial_state_table() {
        let s = initial_subset_state(4, 2).unwrap();
        assert_eq!(s.images(), &[0, 1, 2, 3]);
        assert!(s.negatives().iter().all(|&x| !x));
        let v = s.to_statevector().unwrap();
        assert_eq!(v.iter().filter(|&&a| a != 0.0).count(), 4);
        assert!(v[..4].iter().all(|&a| (a - 0.5).abs() < 1e-15));
    }

    #[test]
    fn guards() {
        assert!(initial_subset_state(4, 5).is_err());
        assert!(matches!(initial_subset_state(40, 30), Err(Error::DimensionGuard { .. })));
        assert!(initial_subset_state(30, 2).unwrap().to_statevector().is_err());
        assert!(moment_dimension(6, 2).is_ok());
        assert!(matches!(moment_dimension(7, 2), Err(Error::DimensionGuard { .. })));
        assert!(haar_moment(2, 4).is_err());
        assert!(SubsetState::from_table(3, 1, vec![1, 1], vec![false, false]).is_err());
    }

    #[test]
    fn x_gate_flips_every_image() {
        let mut s = initial_subset_state(5, 3).unwrap();
        let mut c = Circuit::new(5);
        c.layers.push(Layer::single(Gate::mcx(vec![], 2)));
        s.apply_circuit(&c).unwrap();
        assert_eq!(s.images(), &[2, 3, 0, 1, 6, 7, 4, 5]);
    }

    #[test]
    fn entrywise_equals_singleton_ensembles() {
        let gp = GenParams { n: 8, k: 3, t: 2, alpha: 2.0, m: 2, p: None };
        for i in 0..10 {
            let c = algorithms::phase_state_circuit(Algorithm::DepthOpt, &gp, 2, 4, &mut rng::stream(1, "t", i)).unwrap();
            let mut s = initial_subset_state(8, 3).unwrap();
            s.apply_circuit(&c).unwrap();
            for b in 0..8u64 {
                let mut e = CopyEnsemble::from_u64s(8, &[b]).unwrap();
                e.apply_circuit(&c).unwrap();
                assert_eq!(s.entry(b as usize), (e.copy_words(0)[0], e.sign(0)));
            }
        }
    }

    #[test]
    fn statevector_is_normalized() {
        let gp = GenParams { n: 10, k: 5, t: 2, alpha: 2.0, m: 2, p: None };
        let params = PreparationParams { bits: Algorithm::GateOpt, gen: gp, sign_m: 2, sign_p: 5 };
        for s in sample_algorithm_states(&params, 5, 3).unwrap() {
            let v = s.to_statevector().unwrap();
            assert!((v.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(v.iter().filter(|&&a| a != 0.0).count(), 32);
        }
    }

    #[test]
    fn haar_moment_small_cases() {
        let h = haar_moment(3, 1).unwrap();
        assert_eq!(h.data, DMatrix::identity(8, 8) / 8.0);

        // d=2, t=2: (I + SWAP) / 2 normalized by binom(3, 2) = 3.
        let h = haar_moment(1, 2).unwrap();
        let mut swap = DMatrix::<f64>::zeros(4, 4);
        for (a, b) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
            swap[(a, b)] = 1.0;
        }
        let expected = (DMatrix::identity(4, 4) + swap) / 2.0 / 3.0;
        assert!((h.data - expected).abs().max() < 1e-15);

        for (n, t) in [(2, 2), (2, 3), (3, 2)] {
            let h = haar_moment(n, t).unwrap();
            assert!((h.trace() - 1.0).abs() < 1e-12);
            assert!(h.is_psd(1e-9));
            // A projector scaled by 1/rank: H^2 = H / rank.
            let rank = (h.trace() / (&h.data * &h.data).trace()).round();
            let d = f64::from(1u32 << n);
            let binom = (0..t).map(|i| d + f64::from(i)).product::<f64>() / (1..=t).map(f64::from).product::<f64>();
            assert_eq!(rank, binom);
        }
    }

    #[test]
    fn single_sample_moment_is_a_pure_projector() {
        let s = sample_oracle_state(4, 2, &mut rng::stream(2, "t", 0)).unwrap();
        let m = empirical_moment(std::slice::from_ref(&s), 1).unwrap();
        assert!((m.trace() - 1.0).abs() < 1e-12);
        let v = nalgebra::DVector::from_vec(s.to_statevector().unwrap());
        assert!((&m.data - &v * v.transpose()).abs().max() < 1e-15);
        let m2 = empirical_moment(std::slice::from_ref(&s), 2).unwrap();
        let v2 = v.kronecker(&v);
        assert!((&m2.data - &v2 * v2.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn uniform_states_average_to_identity() {
        let samples = sample_oracle_states(3, 2, 20_000, 4).unwrap();
        let m = empirical_moment(&samples, 1).unwrap();
        assert!((m.trace() - 1.0).abs() < 1e-12);
        let diff = (&m.data - DMatrix::identity(8, 8) / 8.0).abs().max();
        assert!(diff < 0.01, "{diff}");
        assert!(m.is_psd(1e-9));
    }

    #[test]
    fn trace_distance_extremes() {
        let h = haar_moment(2, 1).unwrap();
        assert!(trace_distance(&h, &h).unwrap().abs() < 1e-12);
        let a = initial_subset_state(2, 0).unwrap();
        let mut b = a.clone();
        let mut c = Circuit::new(2);
        c.layers.push(Layer::single(Gate::mcx(vec![ControlTerm::new(2, false)], 1)));
        b.apply_circuit(&c).unwrap();
        let ma = empirical_moment(&[a], 1).unwrap();
        let mb = empirical_moment(&[b], 1).unwrap();
        assert!((trace_distance(&ma, &mb).unwrap() - 1.0).abs() < 1e-12);
        assert!(trace_distance(&ma, &haar_moment(2, 2).unwrap()).is_err());
    }

    #[test]
    fn mixed_bound_arithmetic() {
        assert_eq!(mixed_bound(0.0, 0.3).unwrap().bound, 0.3);
        assert_eq!(mixed_bound(0.2, 0.0).unwrap().bound, 0.2);
        let b = mixed_bound(0.01, 0.02).unwrap();
        assert!((b.bound - 0.0298).abs() < 1e-15);
        assert!((b.simplified - 0.03).abs() < 1e-15);
        assert!(mixed_bound(1.5, 0.0).is_err());
    }
}
