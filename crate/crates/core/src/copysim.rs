//! Exact evolution of `t` distinct bit strings (with a sign each) under a
//! circuit, and the condition matrices used to argue about them.
//!
//! Site `j` lives in bit `(j - 1) % 64` of word `(j - 1) / 64`.

use std::collections::HashSet;

use rand_chacha::rand_core::RngCore;

use crate::circuit::{Circuit, ControlTerm, Gate, GateKind};
use crate::error::{invalid, Error, Result};
use crate::f2linalg::BitMatrix;
use crate::rng;

#[inline]
fn locate(site: u32) -> (usize, u64) {
    let i = site as usize - 1;
    (i / 64, 1u64 << (i % 64))
}

pub(crate) fn stride_for(n: u32) -> usize {
    (n as usize).div_ceil(64).max(1)
}

/// `t` bit strings of length `n`, packed, plus one sign per string.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CopyEnsemble {
    n: u32,
    stride: usize,
    words: Vec<u64>,
    negative: Vec<bool>,
}

impl CopyEnsemble {
    /// Builds an ensemble from packed copies; all signs start at +1.
    pub fn from_words(n: u32, words: Vec<u64>) -> Result<Self> {
        let stride = stride_for(n);
        if words.len() % stride != 0 {
            return Err(Error::DimensionMismatch(words.len(), stride));
        }
        let t = words.len() / stride;
        Ok(Self {
            n,
            stride,
            words,
            negative: vec![false; t],
        })
    }

    /// Convenience constructor for `n <= 64`.
    pub fn from_u64s(n: u32, copies: &[u64]) -> Result<Self> {
        if n > 64 {
            return Err(invalid(format!("from_u64s needs n <= 64, got {n}")));
        }
        Self::from_words(n, copies.to_vec())
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn t(&self) -> usize {
        self.negative.len()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn copy_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }

    pub fn bit(&self, copy: usize, site: u32) -> bool {
        let (w, mask) = locate(site);
        self.copy_words(copy)[w] & mask != 0
    }

    /// +1 or -1.
    pub fn sign(&self, copy: usize) -> i8 {
        if self.negative[copy] {
            -1
        } else {
            1
        }
    }

    pub fn is_negative(&self, copy: usize) -> bool {
        self.negative[copy]
    }

    pub fn negatives(&self) -> &[bool] {
        &self.negative
    }

    pub fn set_negative(&mut self, copy: usize, negative: bool) {
        self.negative[copy] = negative;
    }

    /// True when no two copies coincide.
    pub fn is_distinct(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.t());
        (0..self.t()).all(|i| seen.insert(self.copy_words(i)))
    }

    /// The ensemble restricted to the given copies, in that order.
    pub fn subsample(&self, copies: &[usize]) -> Self {
        let mut words = Vec::with_capacity(copies.len() * self.stride);
        for &i in copies {
            words.extend_from_slice(self.copy_words(i));
        }
        Self {
            n: self.n,
            stride: self.stride,
            words,
            negative: copies.iter().map(|&i| self.negative[i]).collect(),
        }
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        let g = CompiledGate::new(gate, self.n)?;
        g.run(&mut self.words, self.stride, &mut self.negative);
        Ok(())
    }

    /// Runs every layer of `c`, in order.
    pub fn apply_circuit(&mut self, c: &Circuit) -> Result<()> {
        self.check_circuit(c)?;
        for g in compile_circuit(c)? {
            g.run(&mut self.words, self.stride, &mut self.negative);
        }
        Ok(())
    }

    /// Runs `c` and records, for every condition group of the circuit, the
    /// matrix `X[p][q] = 1` iff copy `p` met round `q`'s condition at the
    /// time that round was drawn.
    pub fn apply_circuit_with_diagnostics(&mut self, c: &Circuit) -> Result<Vec<(String, BitMatrix)>> {
        self.check_circuit(c)?;
        let t = self.t();
        let mut matrices: Vec<BitMatrix> = c.condition_groups.iter().map(|g| BitMatrix::zeros(t, g.rounds.len())).collect();
        let mut events = Vec::new();
        for (gi, group) in c.condition_groups.iter().enumerate() {
            for (col, round) in group.rounds.iter().enumerate() {
                if round.layer > c.layers.len() {
                    return Err(invalid(format!("round in group {:?} refers to layer {} of {}", group.name, round.layer, c.layers.len())));
                }
                events.push((round.layer, gi, col, Condition::new(&round.controls, self.n)?));
            }
        }
        events.sort_by_key(|e| e.0);
        let mut next = 0;
        for layer in 0..=c.layers.len() {
            while next < events.len() && events[next].0 == layer {
                let (_, gi, col, ref cond) = events[next];
                for p in 0..t {
                    if cond.holds(self.copy_words(p)) {
                        matrices[gi].set(p, col, true);
                    }
                }
                next += 1;
            }
            if let Some(l) = c.layers.get(layer) {
                for g in &l.gates {
                    CompiledGate::new(g, self.n)?.run(&mut self.words, self.stride, &mut self.negative);
                }
            }
        }
        Ok(c.condition_groups.iter().map(|g| g.name.clone()).zip(matrices).collect())
    }

    fn check_circuit(&self, c: &Circuit) -> Result<()> {
        if c.n != self.n {
            return Err(Error::DimensionMismatch(c.n as usize, self.n as usize));
        }
        Ok(())
    }
}

/// `t` distinct strings drawn uniformly from `{0,1}^k x 0^(n-k)`, in random
/// order, all with sign +1.
pub fn sample_initial_copies<R: RngCore + ?Sized>(n: u32, k: u32, t: usize, rng: &mut R) -> Result<CopyEnsemble> {
    if k > n {
        return Err(invalid(format!("k={k} exceeds n={n}")));
    }
    if k < 64 && t as u128 > 1u128 << k {
        return Err(invalid(format!("cannot draw t={t} distinct strings from 2^{k}")));
    }
    let stride = stride_for(n);
    let mut words = vec![0u64; t * stride];
    if k <= 127 {
        // Floyd's algorithm: exactly t draws, no rejection.
        let space = 1u128 << k;
        let mut chosen = HashSet::with_capacity(t);
        let mut order = Vec::with_capacity(t);
        for j in (space - t as u128)..space {
            let r = rng::below_u128(rng, j + 1);
            let v = if chosen.insert(r) { r } else { chosen.insert(j); j };
            order.push(v);
        }
        rng::shuffle(rng, &mut order);
        for (i, v) in order.into_iter().enumerate() {
            let copy = &mut words[i * stride..(i + 1) * stride];
            copy[0] = v as u64;
            if stride > 1 {
                copy[1] = (v >> 64) as u64;
            }
        }
    } else {
        // Collisions among 2^k strings with k > 127 are practically absent;
        // redraw on the rare hit.
        let full = (k / 64) as usize;
        let rest = k % 64;
        let mut seen = HashSet::with_capacity(t);
        let mut i = 0;
        while i < t {
            let mut copy = vec![0u64; stride];
            for w in copy.iter_mut().take(full) {
                *w = rng.next_u64();
            }
            if rest > 0 {
                copy[full] = rng.next_u64() >> (64 - rest);
            }
            if seen.insert(copy.clone()) {
                words[i * stride..(i + 1) * stride].copy_from_slice(&copy);
                i += 1;
            }
        }
    }
    CopyEnsemble::from_words(n, words)
}

/// A conjunction of `site == value` requirements as per-word masks.
#[derive(Clone, Debug)]
pub(crate) struct Condition {
    terms: Vec<(usize, u64, u64)>,
}

impl Condition {
    pub(crate) fn new(controls: &[ControlTerm], n: u32) -> Result<Self> {
        let mut terms: Vec<(usize, u64, u64)> = Vec::new();
        for c in controls {
            if !(1..=n).contains(&c.pos) {
                return Err(invalid(format!("site {} outside [1, {n}]", c.pos)));
            }
            let (w, bit) = locate(c.pos);
            let value = if c.val { bit } else { 0 };
            match terms.iter_mut().find(|t| t.0 == w) {
                Some(t) => {
                    t.1 |= bit;
                    t.2 |= value;
                }
                None => terms.push((w, bit, value)),
            }
        }
        Ok(Self { terms })
    }

    #[inline]
    pub(crate) fn holds(&self, copy: &[u64]) -> bool {
        self.terms.iter().all(|&(w, mask, value)| copy[w] & mask == value)
    }
}

/// A gate lowered to word masks.
#[derive(Clone, Debug)]
pub(crate) struct CompiledGate {
    condition: Condition,
    kind: GateKind,
    target_word: usize,
    target_bit: u64,
}

impl CompiledGate {
    pub(crate) fn new(gate: &Gate, n: u32) -> Result<Self> {
        if !(1..=n).contains(&gate.target) {
            return Err(invalid(format!("target {} outside [1, {n}]", gate.target)));
        }
        let (target_word, target_bit) = locate(gate.target);
        let condition = match gate.kind {
            GateKind::Mcx => Condition::new(&gate.controls, n)?,
            GateKind::SignedMcz => {
                if gate.target_value.is_none() {
                    return Err(invalid("signed MCZ without a target value"));
                }
                Condition::new(&gate.condition(), n)?
            }
        };
        Ok(Self {
            condition,
            kind: gate.kind,
            target_word,
            target_bit,
        })
    }

    pub(crate) fn run(&self, words: &mut [u64], stride: usize, negative: &mut [bool]) {
        for (copy, neg) in words.chunks_exact_mut(stride).zip(negative.iter_mut()) {
            if self.condition.holds(copy) {
                match self.kind {
                    GateKind::Mcx => copy[self.target_word] ^= self.target_bit,
                    GateKind::SignedMcz => *neg = !*neg,
                }
            }
        }
    }
}

pub(crate) fn compile_circuit(c: &Circuit) -> Result<Vec<CompiledGate>> {
    c.gates().map(|g| CompiledGate::new(g, c.n)).collect()
}

/// `X[p][q] = 1` iff copy `p` currently meets condition `q`.
pub fn condition_matrix(e: &CopyEnsemble, rounds: &[Vec<ControlTerm>]) -> Result<BitMatrix> {
    let mut x = BitMatrix::zeros(e.t(), rounds.len());
    for (q, controls) in rounds.iter().enumerate() {
        let cond = Condition::new(controls, e.n())?;
        for p in 0..e.t() {
            if cond.holds(e.copy_words(p)) {
                x.set(p, q, true);
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{generate, Algorithm, GenParams};
    use crate::circuit::Layer;
    use crate::rng::{stream, tags};

    fn t(pos: u32, val: bool) -> ControlTerm {
        ControlTerm::new(pos, val)
    }

    #[test]
    fn toffoli_on_second_and_third_bits() {
        // All 32 strings on 5 sites; bit 5 flips exactly when bits 2 and 3 are set.
        let all: Vec<u64> = (0..32).collect();
        let mut e = CopyEnsemble::from_u64s(5, &all).unwrap();
        e.apply_gate(&Gate::mcx(vec![t(2, true), t(3, true)], 5)).unwrap();
        for (i, &x) in all.iter().enumerate() {
            let expected = if x & 0b110 == 0b110 { x ^ 0b10000 } else { x };
            assert_eq!(e.copy_words(i)[0], expected);
        }
    }

    #[test]
    fn polarized_controls() {
        let mut e = CopyEnsemble::from_u64s(3, &[0b000, 0b001, 0b010, 0b011]).unwrap();
        e.apply_gate(&Gate::mcx(vec![t(1, true), t(2, false)], 3)).unwrap();
        let got: Vec<u64> = (0..4).map(|i| e.copy_words(i)[0]).collect();
        assert_eq!(got, vec![0b000, 0b101, 0b010, 0b011]);
    }

    #[test]
    fn mcx_is_an_involution_and_signed_mcz_keeps_bits() {
        let mut r = stream(1, "t", 0);
        let e0 = sample_initial_copies(70, 70, 50, &mut r).unwrap();
        let g = Gate::mcx(vec![t(3, true), t(66, false)], 68);
        let mut e = e0.clone();
        e.apply_gate(&g).unwrap();
        e.apply_gate(&g).unwrap();
        assert_eq!(e, e0);

        let z = Gate::signed_mcz(vec![t(1, true)], 2, false);
        let mut e = e0.clone();
        e.apply_gate(&z).unwrap();
        for i in 0..e.t() {
            assert_eq!(e.copy_words(i), e0.copy_words(i));
            let hit = e0.bit(i, 1) && !e0.bit(i, 2);
            assert_eq!(e.sign(i), if hit { -1 } else { 1 });
        }
    }

    #[test]
    fn zero_control_gates() {
        let mut e = CopyEnsemble::from_u64s(4, &[0, 5, 9]).unwrap();
        e.apply_gate(&Gate::mcx(vec![], 2)).unwrap();
        assert_eq!((0..3).map(|i| e.copy_words(i)[0]).collect::<Vec<_>>(), vec![2, 7, 11]);
        e.apply_gate(&Gate::signed_mcz(vec![], 1, true)).unwrap();
        assert_eq!((0..3).map(|i| e.sign(i)).collect::<Vec<_>>(), vec![1, -1, -1]);
    }

    #[test]
    fn initial_copies() {
        let mut r = stream(2, tags::COPIES, 0);
        let e = sample_initial_copies(12, 4, 16, &mut r).unwrap();
        let mut got: Vec<u64> = (0..16).map(|i| e.copy_words(i)[0]).collect();
        got.sort_unstable();
        assert_eq!(got, (0..16).collect::<Vec<_>>());
        assert!(sample_initial_copies(12, 4, 17, &mut r).is_err());

        let e = sample_initial_copies(200, 150, 30, &mut r).unwrap();
        assert!(e.is_distinct());
        assert!((0..30).all(|i| (151..=200).all(|s| !e.bit(i, s))));
        let e = sample_initial_copies(200, 100, 30, &mut r).unwrap();
        assert!((0..30).all(|i| (101..=200).all(|s| !e.bit(i, s))));
    }

    #[test]
    fn initial_marginals_are_fair() {
        let mut ones = [0u32; 10];
        let draws = 2000;
        for i in 0..draws {
            let e = sample_initial_copies(16, 10, 8, &mut stream(3, tags::COPIES, i)).unwrap();
            for c in 0..8 {
                for s in 1..=10 {
                    ones[s as usize - 1] += u32::from(e.bit(c, s));
                }
            }
        }
        let n = f64::from(draws as u32 * 8);
        for o in ones {
            assert!((f64::from(o) / n - 0.5).abs() < 4.0 * (0.25 / n).sqrt(), "{ones:?}");
        }
    }

    #[test]
    fn empty_circuit_and_layer_order() {
        let mut r = stream(4, "t", 0);
        let e0 = sample_initial_copies(20, 20, 64, &mut r).unwrap();
        let mut e = e0.clone();
        e.apply_circuit(&Circuit::new(20)).unwrap();
        assert_eq!(e, e0);

        let gates = vec![
            Gate::mcx(vec![t(1, true), t(2, false)], 3),
            Gate::mcx(vec![t(4, true)], 5),
            Gate::signed_mcz(vec![t(6, false)], 7, true),
        ];
        let mut fwd = Circuit::new(20);
        fwd.layers.push(Layer::new(gates.clone()).unwrap());
        let mut rev = Circuit::new(20);
        rev.layers.push(Layer::new(gates.into_iter().rev().collect()).unwrap());
        let (mut a, mut b) = (e0.clone(), e0);
        a.apply_circuit(&fwd).unwrap();
        b.apply_circuit(&rev).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn circuits_are_bijections_on_small_spaces() {
        for n in [4u32, 7, 12] {
            let all: Vec<u64> = (0..1u64 << n).collect();
            let k = n / 2;
            for (i, alg) in [Algorithm::GateOpt, Algorithm::DepthOpt, Algorithm::Sign].into_iter().enumerate() {
                let gp = GenParams { n, k, t: 2, alpha: 2.0, m: 2, p: Some(n / 2) };
                let c = generate(alg, &gp, 11, i as u64).unwrap();
                let mut e = CopyEnsemble::from_u64s(n, &all).unwrap();
                e.apply_circuit(&c).unwrap();
                assert!(e.is_distinct(), "n={n} {alg}");
            }
        }
    }

    #[test]
    fn distinctness_survives_gate_opt() {
        let gp = GenParams { n: 64, k: 24, t: 8, alpha: 6.0, m: 2, p: None };
        for i in 0..50 {
            let c = generate(Algorithm::GateOpt, &gp, 5, i).unwrap();
            let mut e = sample_initial_copies(64, 24, 8, &mut stream(5, tags::COPIES, i)).unwrap();
            e.apply_circuit(&c).unwrap();
            assert!(e.is_distinct());
        }
    }

    #[test]
    fn condition_matrix_shapes() {
        let e = CopyEnsemble::from_u64s(4, &[0b0001, 0b0011, 0b1000]).unwrap();
        let x = condition_matrix(&e, &[vec![], vec![t(1, true)], vec![t(2, false), t(4, false)]]).unwrap();
        assert_eq!(x, BitMatrix::from_strs(&["111", "110", "100"]).unwrap());

        let one = e.subsample(&[1]);
        let x = condition_matrix(&one, &[vec![t(1, true)], vec![t(3, true)]]).unwrap();
        assert_eq!(x, BitMatrix::from_strs(&["10"]).unwrap());
    }

    #[test]
    fn condition_entry_frequency() {
        // Polarized m-controls against uniform copies hold with probability 2^-m.
        let m = 3;
        let mut r = stream(6, "t", 0);
        let e = sample_initial_copies(32, 32, 4096, &mut r).unwrap();
        let rounds: Vec<Vec<ControlTerm>> = (0..64)
            .map(|_| crate::algorithms::rmc(32, 1, 32, m, &mut r).unwrap().controls)
            .collect();
        let x = condition_matrix(&e, &rounds).unwrap();
        let n = (4096 * 64) as f64;
        let freq = x.count_ones() as f64 / n;
        assert!((freq - 0.125).abs() < 0.005, "{freq}");
    }

    #[test]
    fn diagnostics_match_replay() {
        let gp = GenParams { n: 40, k: 12, t: 6, alpha: 2.0, m: 2, p: None };
        let c = generate(Algorithm::GateOpt, &gp, 8, 0).unwrap();
        let e0 = sample_initial_copies(40, 12, 6, &mut stream(8, tags::COPIES, 0)).unwrap();
        let mut e = e0.clone();
        let mats = e.apply_circuit_with_diagnostics(&c).unwrap();
        assert_eq!(mats.len(), 2);

        // Stage-one controls never change during stage one, so the matrix
        // equals the conditions evaluated on the initial copies.
        let rounds: Vec<_> = c.condition_group("stage1").unwrap().rounds.iter().map(|r| r.controls.clone()).collect();
        assert_eq!(mats[0].1, condition_matrix(&e0, &rounds).unwrap());

        let mut plain = e0;
        plain.apply_circuit(&c).unwrap();
        assert_eq!(plain, e);
    }
}
