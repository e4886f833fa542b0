//! Random circuit generators: the gate-count optimized and depth optimized
//! bit thermalizers, the depth optimized sign thermalizer, and the random
//! control draws they are built from.
//!
//! Generators only build circuits; nothing here touches a state.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, ConditionGroup, ControlTerm, Gate, Layer, Round, Stage};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tags};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    GateOpt,
    DepthOpt,
    Sign,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::GateOpt => "gate-opt",
            Self::DepthOpt => "depth-opt",
            Self::Sign => "sign",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gate-opt" => Ok(Self::GateOpt),
            "depth-opt" => Ok(Self::DepthOpt),
            "sign" => Ok(Self::Sign),
            other => Err(invalid(format!("unknown algorithm {other:?} (expected gate-opt, depth-opt or sign)"))),
        }
    }
}

/// Generator parameters. `alpha * t` rounds are rounded up; `p` is only
/// used by the sign thermalizer (gates per layer) and defaults to `n / m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n: u32,
    pub k: u32,
    pub t: u32,
    pub alpha: f64,
    pub m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<u32>,
}

/// `ceil(2 ln n)`, large enough that `alpha * t` grows faster than `log n`.
pub fn default_alpha(n: u32) -> f64 {
    (2.0 * f64::from(n).ln()).ceil()
}

/// `ceil(log2 t)`, at least 1.
pub fn ceil_log2(t: u32) -> u32 {
    if t <= 1 {
        1
    } else {
        32 - (t - 1).leading_zeros()
    }
}

impl GenParams {
    /// Rounds per stage, `ceil(alpha * t)`.
    pub fn rounds(&self) -> usize {
        (self.alpha * f64::from(self.t)).ceil() as usize
    }

    pub fn sign_groups(&self) -> u32 {
        self.p.unwrap_or(self.n / self.m.max(1))
    }

    fn check_common(&self) -> Result<()> {
        if self.t == 0 {
            return Err(invalid("t must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha={} must be positive", self.alpha)));
        }
        Ok(())
    }

    fn check_bit_thermalizer(&self) -> Result<()> {
        self.check_common()?;
        if !(self.k > 1 && self.k < self.n) {
            return Err(invalid(format!("need 1 < k < n, got k={} n={}", self.k, self.n)));
        }
        if self.m > self.k {
            return Err(invalid(format!("m={} exceeds the initial control region k={}", self.m, self.k)));
        }
        if self.m > self.n - self.k {
            return Err(invalid(format!("m={} exceeds the complementary region n-k={}", self.m, self.n - self.k)));
        }
        Ok(())
    }
}

fn check_window(n: u32, x1: u32, x2: u32, needed: u64) -> Result<()> {
    if !(1 <= x1 && x1 <= x2 && x2 <= n) {
        return Err(invalid(format!("control window [{x1}, {x2}] must lie inside [1, {n}]")));
    }
    let width = u64::from(x2 - x1 + 1);
    if needed > width {
        return Err(invalid(format!("{needed} control positions do not fit in window [{x1}, {x2}]")));
    }
    Ok(())
}

fn polarize<R: RngCore + ?Sized>(positions: &[u32], rng: &mut R) -> Vec<ControlTerm> {
    positions.iter().map(|&pos| ControlTerm::new(pos, rng::coin(rng))).collect()
}

/// One random multi-controlled draw.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RmcDraw {
    /// `m` distinct positions from the window, sorted, each with a random
    /// required value.
    pub controls: Vec<ControlTerm>,
    /// One fair bit per site outside the window; the caller indexes it by
    /// target offset.
    pub mask: Vec<bool>,
}

pub fn rmc<R: RngCore + ?Sized>(n: u32, x1: u32, x2: u32, m: u32, rng: &mut R) -> Result<RmcDraw> {
    check_window(n, x1, x2, u64::from(m))?;
    let mut positions = rng::choose_distinct(rng, x1, x2, m as usize);
    positions.sort_unstable();
    let controls = polarize(&positions, rng);
    let outside = (n - (x2 - x1 + 1)) as usize;
    let mask = (0..outside).map(|_| rng::coin(rng)).collect();
    Ok(RmcDraw { controls, mask })
}

/// `p` disjoint control groups drawn at once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrmcDraw {
    pub groups: Vec<Vec<ControlTerm>>,
    pub apply: Vec<bool>,
}

/// Samples `m * p` distinct positions from `[x1, x2]`, splits them uniformly
/// into `p` groups of `m`, and pairs each group with a fair apply bit.
pub fn prmc<R: RngCore + ?Sized>(n: u32, x1: u32, x2: u32, m: u32, p: u32, rng: &mut R) -> Result<PrmcDraw> {
    check_window(n, x1, x2, u64::from(m) * u64::from(p))?;
    // The partial shuffle returns the sample in uniformly random order, so
    // consecutive chunks form a uniform partition.
    let positions = rng::choose_distinct(rng, x1, x2, (m * p) as usize);
    let terms = polarize(&positions, rng);
    let groups = terms.chunks(m.max(1) as usize).map(<[ControlTerm]>::to_vec).collect();
    let apply = (0..p).map(|_| rng::coin(rng)).collect();
    Ok(PrmcDraw { groups, apply })
}

fn params_json(algorithm: Algorithm, gp: &GenParams) -> serde_json::Value {
    let mut v = serde_json::to_value(gp).expect("params serialize");
    v["algorithm"] = serde_json::Value::from(algorithm.name());
    v
}

/// Gate-count optimized bit thermalizer. Each round shares one control
/// draw across all its targets, so every gate gets its own layer.
pub fn gate_opt_thermalizer<R: RngCore + ?Sized>(gp: &GenParams, rng: &mut R) -> Result<Circuit> {
    gp.check_bit_thermalizer()?;
    let (n, k, m) = (gp.n, gp.k, gp.m);
    let mut c = Circuit::new(n);
    c.generator = Algorithm::GateOpt.name().into();
    c.params = params_json(Algorithm::GateOpt, gp);

    let phases = [("stage1", (1, k), (k + 1, n)), ("stage2", (k + 1, n), (1, k))];
    for (name, (c1, c2), (t1, t2)) in phases {
        let start = c.layers.len();
        let mut group = ConditionGroup {
            name: name.into(),
            rounds: Vec::with_capacity(gp.rounds()),
        };
        for _ in 0..gp.rounds() {
            let draw = rmc(n, c1, c2, m, rng)?;
            group.rounds.push(Round {
                layer: c.layers.len(),
                controls: draw.controls.clone(),
            });
            for target in t1..=t2 {
                if draw.mask[(target - t1) as usize] {
                    c.layers.push(Layer::single(Gate::mcx(draw.controls.clone(), target)));
                }
            }
        }
        c.stages.push(Stage {
            phase: name.into(),
            controls: (c1, c2),
            targets: (t1, t2),
            groups: 1,
            layers: (start, c.layers.len()),
        });
        c.condition_groups.push(group);
    }
    Ok(c)
}

/// Number of growth stages of the depth optimized thermalizer: starting at
/// `s = k`, each stage adds `floor(s / m)` controllable sites until `s >= n`.
pub fn growth_stage_count(n: u32, k: u32, m: u32) -> usize {
    let mut s = k;
    let mut stages = 0;
    while s < n {
        s += s / m;
        stages += 1;
    }
    stages
}

/// Closing sweeps needed to cover the first `k` sites with
/// `floor((n - k) / m)` disjoint groups per layer; 1 whenever that many
/// groups reach all `k` targets at once.
pub fn closing_sweeps(n: u32, k: u32, m: u32) -> usize {
    let per_layer = (n - k) / m;
    k.div_ceil(per_layer) as usize
}

/// Depth optimized bit thermalizer. Growth stages use the already
/// thermalized prefix `[1, s]` as controls for `floor(s/m)` parallel gates
/// on the next sites; the closing phase uses `[k+1, n]` to control the
/// first `k` sites.
pub fn depth_opt_thermalizer<R: RngCore + ?Sized>(gp: &GenParams, rng: &mut R) -> Result<Circuit> {
    gp.check_bit_thermalizer()?;
    let (n, k, m) = (gp.n, gp.k, gp.m);
    let rounds = gp.rounds();
    let mut c = Circuit::new(n);
    c.generator = Algorithm::DepthOpt.name().into();
    c.params = params_json(Algorithm::DepthOpt, gp);

    let mut run_phase = |c: &mut Circuit, phase: String, controls: (u32, u32), groups: u32, first_target: u32, targets: u32| -> Result<()> {
        let start = c.layers.len();
        let mut diag: Vec<ConditionGroup> = (0..targets)
            .map(|x| ConditionGroup {
                name: format!("{phase}/site{}", first_target + x),
                rounds: Vec::with_capacity(rounds),
            })
            .collect();
        for _ in 0..rounds {
            let draw = prmc(n, controls.0, controls.1, m, groups, rng)?;
            let layer_index = c.layers.len();
            let mut gates = Vec::new();
            for x in 0..targets as usize {
                diag[x].rounds.push(Round {
                    layer: layer_index,
                    controls: draw.groups[x].clone(),
                });
                if draw.apply[x] {
                    gates.push(Gate::mcx(draw.groups[x].clone(), first_target + x as u32));
                }
            }
            c.layers.push(Layer::new(gates)?);
        }
        c.stages.push(Stage {
            phase,
            controls,
            targets: (first_target, first_target + targets - 1),
            groups,
            layers: (start, c.layers.len()),
        });
        c.condition_groups.extend(diag);
        Ok(())
    };

    let mut s = k;
    let mut stage = 0;
    while s < n {
        let p = s / m;
        // The last stage may overshoot n; its surplus groups have no target.
        let targets = p.min(n - s);
        run_phase(&mut c, format!("grow{stage}"), (1, s), p, s + 1, targets)?;
        s += p;
        stage += 1;
    }

    let per_layer = (n - k) / m;
    for sweep in 0..closing_sweeps(n, k, m) as u32 {
        let first = sweep * per_layer + 1;
        let targets = per_layer.min(k - (first - 1));
        run_phase(&mut c, format!("close{sweep}"), (k + 1, n), per_layer, first, targets)?;
    }
    Ok(c)
}

/// Depth optimized sign thermalizer: `ceil(alpha t / p)` layers of up to
/// `p` signed MCZ gates on disjoint groups drawn from `[1, m p]`. The last
/// position of each group is the signed target, and its drawn polarity is
/// the target value.
pub fn sign_thermalizer<R: RngCore + ?Sized>(n: u32, p: u32, alpha: f64, t: u32, m: u32, rng: &mut R) -> Result<Circuit> {
    let gp = GenParams {
        n,
        k: n,
        t,
        alpha,
        m,
        p: Some(p),
    };
    gp.check_common()?;
    if p == 0 {
        return Err(invalid("p must be at least 1"));
    }
    if u64::from(m) * u64::from(p) > u64::from(n) {
        return Err(invalid(format!("m*p = {} exceeds n = {n}", u64::from(m) * u64::from(p))));
    }
    let layers = (alpha * f64::from(t) / f64::from(p)).ceil() as usize;
    let mut c = Circuit::new(n);
    c.generator = Algorithm::Sign.name().into();
    c.params = params_json(Algorithm::Sign, &gp);
    let mut group = ConditionGroup {
        name: "signs".into(),
        rounds: Vec::with_capacity(layers * p as usize),
    };
    for _ in 0..layers {
        let draw = prmc(n, 1, m * p, m, p, rng)?;
        let layer_index = c.layers.len();
        let mut gates = Vec::new();
        for (terms, &apply) in draw.groups.iter().zip(&draw.apply) {
            group.rounds.push(Round {
                layer: layer_index,
                controls: terms.clone(),
            });
            if apply {
                let (target, controls) = terms.split_last().expect("groups are non-empty");
                gates.push(Gate::signed_mcz(controls.to_vec(), target.pos, target.val));
            }
        }
        c.layers.push(Layer::new(gates)?);
    }
    c.stages.push(Stage {
        phase: "signs".into(),
        controls: (1, m * p),
        targets: (1, m * p),
        groups: p,
        layers: (0, c.layers.len()),
    });
    c.condition_groups.push(group);
    Ok(c)
}

pub fn generate_with<R: RngCore + ?Sized>(algorithm: Algorithm, gp: &GenParams, rng: &mut R) -> Result<Circuit> {
    match algorithm {
        Algorithm::GateOpt => gate_opt_thermalizer(gp, rng),
        Algorithm::DepthOpt => depth_opt_thermalizer(gp, rng),
        Algorithm::Sign => sign_thermalizer(gp.n, gp.sign_groups(), gp.alpha, gp.t, gp.m, rng),
    }
}

/// Generates the circuit for trial `index` of master seed `seed`.
pub fn generate(algorithm: Algorithm, gp: &GenParams, seed: u64, index: u64) -> Result<Circuit> {
    let mut rng = rng::stream(seed, tags::GENERATE, index);
    let mut c = generate_with(algorithm, gp, &mut rng)?;
    c.seed = seed;
    c.params["stream"] = serde_json::Value::from(index);
    Ok(c)
}

/// Bit thermalizer followed by a sign thermalizer: one sample of the
/// circuit family that prepares a subset phase state.
pub fn phase_state_circuit<R: RngCore + ?Sized>(bits: Algorithm, gp: &GenParams, sign_m: u32, sign_p: u32, rng: &mut R) -> Result<Circuit> {
    if bits == Algorithm::Sign {
        return Err(invalid("the bit stage needs gate-opt or depth-opt"));
    }
    let mut c = generate_with(bits, gp, rng)?;
    let signs = sign_thermalizer(gp.n, sign_p, gp.alpha, gp.t, sign_m, rng)?;
    c.append(&signs)?;
    c.generator = format!("{}+sign", bits.name());
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{depth, validate, CostModel, GateKind};

    fn gp(n: u32, k: u32, t: u32, alpha: f64, m: u32) -> GenParams {
        GenParams { n, k, t, alpha, m, p: None }
    }

    #[test]
    fn rmc_full_window_covers_it() {
        let mut r = rng::stream(1, "t", 0);
        let d = rmc(10, 3, 7, 5, &mut r).unwrap();
        assert_eq!(d.controls.iter().map(|c| c.pos).collect::<Vec<_>>(), vec![3, 4, 5, 6, 7]);
        assert_eq!(d.mask.len(), 5);
    }

    #[test]
    fn rmc_is_deterministic() {
        let a = rmc(30, 1, 20, 4, &mut rng::stream(5, "t", 2)).unwrap();
        let b = rmc(30, 1, 20, 4, &mut rng::stream(5, "t", 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rmc_rejects_oversized_draws() {
        let mut r = rng::stream(1, "t", 0);
        assert!(rmc(10, 1, 4, 5, &mut r).is_err());
        assert!(rmc(10, 0, 4, 2, &mut r).is_err());
        assert!(rmc(10, 5, 11, 2, &mut r).is_err());
        assert!(prmc(10, 1, 6, 3, 3, &mut r).is_err());
    }

    #[test]
    fn rmc_position_frequencies() {
        // Each of 20 positions is picked with probability m/20.
        let (m, draws) = (5u32, 10_000u32);
        let mut r = rng::stream(2, "t", 0);
        let mut counts = [0u32; 20];
        for _ in 0..draws {
            for c in rmc(40, 1, 20, m, &mut r).unwrap().controls {
                counts[(c.pos - 1) as usize] += 1;
            }
        }
        let p = f64::from(m) / 20.0;
        let mean = f64::from(draws) * p;
        let sigma = (f64::from(draws) * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((f64::from(c) - mean).abs() <= 3.0 * sigma + 1.0, "{counts:?}");
        }
    }

    #[test]
    fn prmc_groups_disjoint_and_apply_bits_fair() {
        let mut r = rng::stream(3, "t", 0);
        let mut ones = 0;
        for _ in 0..10_000 {
            let d = prmc(64, 1, 30, 3, 10, &mut r).unwrap();
            assert_eq!(d.groups.len(), 10);
            let mut all: Vec<u32> = d.groups.iter().flatten().map(|c| c.pos).collect();
            assert!(d.groups.iter().all(|g| g.len() == 3));
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 30);
            ones += d.apply.iter().filter(|&&b| b).count();
        }
        let mean = ones as f64 / 100_000.0;
        assert!((mean - 0.5).abs() < 3.0 * (0.25f64 / 100_000.0).sqrt() * 2.0, "{mean}");
    }

    #[test]
    fn prmc_single_group_matches_rmc_shape() {
        let d = prmc(20, 1, 8, 4, 1, &mut rng::stream(4, "t", 0)).unwrap();
        assert_eq!(d.groups.len(), 1);
        assert_eq!(d.apply.len(), 1);
        assert_eq!(d.groups[0].len(), 4);
    }

    #[test]
    fn gate_opt_structure() {
        let params = gp(40, 12, 4, 3.0, 2);
        let c = generate(Algorithm::GateOpt, &params, 9, 0).unwrap();
        assert!(validate(&c).is_empty());
        assert_eq!(c.condition_group("stage1").unwrap().rounds.len(), 12);
        assert_eq!(c.condition_group("stage2").unwrap().rounds.len(), 12);
        assert!(c.gates().all(|g| g.kind == GateKind::Mcx && g.controls.len() == 2));
        assert_eq!(depth(&c, CostModel::Unit) as usize, c.gate_count());
        let s1 = &c.stages[0];
        for layer in &c.layers[s1.layers.0..s1.layers.1] {
            let g = &layer.gates[0];
            assert!(g.controls.iter().all(|t| t.pos <= 12) && g.target > 12);
        }
    }

    #[test]
    fn gate_opt_expected_gate_count() {
        // Each of the R*(n-k) + R*k potential gates is emitted with probability 1/2.
        let params = gp(32, 10, 3, 2.0, 2);
        let trials = 400;
        let total: usize = (0..trials).map(|i| generate(Algorithm::GateOpt, &params, 1, i).unwrap().gate_count()).sum();
        let slots = params.rounds() as f64 * 32.0;
        let mean = total as f64 / trials as f64;
        let sigma = (slots * 0.25 / trials as f64).sqrt();
        assert!((mean - slots / 2.0).abs() < 3.0 * sigma, "mean {mean}, expected {}", slots / 2.0);
    }

    #[test]
    fn gate_opt_parameter_checks() {
        let mut r = rng::stream(1, "t", 0);
        assert!(gate_opt_thermalizer(&gp(10, 1, 2, 2.0, 1), &mut r).is_err());
        assert!(gate_opt_thermalizer(&gp(10, 4, 2, 2.0, 5), &mut r).is_err());
        assert!(gate_opt_thermalizer(&gp(10, 8, 2, 2.0, 3), &mut r).is_err());
        assert!(gate_opt_thermalizer(&gp(10, 4, 0, 2.0, 2), &mut r).is_err());
        assert!(gate_opt_thermalizer(&gp(10, 4, 2, 0.0, 2), &mut r).is_err());
    }

    #[test]
    fn depth_opt_layer_count_is_construction_determined() {
        for (n, k, t, m) in [(64, 8, 4, 2), (200, 20, 8, 3), (100, 30, 16, 4), (50, 12, 3, 3)] {
            let params = gp(n, k, t, 2.0, m);
            let expected = (growth_stage_count(n, k, m) + closing_sweeps(n, k, m)) * params.rounds();
            for seed in 0..5 {
                let c = generate(Algorithm::DepthOpt, &params, seed, 0).unwrap();
                assert_eq!(depth(&c, CostModel::Unit) as usize, expected);
                assert!(validate(&c).is_empty());
            }
        }
    }

    #[test]
    fn depth_opt_stage_regions() {
        let params = gp(120, 10, 4, 2.0, 2);
        let c = generate(Algorithm::DepthOpt, &params, 3, 0).unwrap();
        for st in &c.stages {
            for layer in &c.layers[st.layers.0..st.layers.1] {
                for g in &layer.gates {
                    assert!(g.controls.iter().all(|t| (st.controls.0..=st.controls.1).contains(&t.pos)));
                    assert!((st.targets.0..=st.targets.1).contains(&g.target));
                }
            }
        }
        let grow: Vec<_> = c.stages.iter().filter(|s| s.phase.starts_with("grow")).collect();
        assert_eq!(grow.len(), growth_stage_count(120, 10, 2));
        assert_eq!(grow.last().unwrap().targets.1, 120);
        let close = c.stages.last().unwrap();
        assert_eq!(close.targets, (1, 10));
        assert_eq!(close.controls, (11, 120));
    }

    #[test]
    fn depth_opt_multiple_closing_sweeps() {
        // floor((n-k)/m) = 3 < k = 8 needs three sweeps.
        let params = gp(20, 8, 2, 1.0, 4);
        assert_eq!(closing_sweeps(20, 8, 4), 3);
        let c = generate(Algorithm::DepthOpt, &params, 1, 0).unwrap();
        let close: Vec<_> = c.stages.iter().filter(|s| s.phase.starts_with("close")).map(|s| s.targets).collect();
        assert_eq!(close, vec![(1, 3), (4, 6), (7, 8)]);
    }

    #[test]
    fn stage_count_grows_geometrically() {
        assert_eq!(growth_stage_count(64, 64, 2), 0);
        // 8 -> 12 -> 18 -> 27 -> 40 -> 60 -> 90
        assert_eq!(growth_stage_count(64, 8, 2), 6);
    }

    #[test]
    fn sign_unit_depth_one_for_small_t() {
        let mut r = rng::stream(7, "t", 0);
        let c = sign_thermalizer(64, 64, 8.0, 8, 1, &mut r).unwrap();
        assert_eq!(c.layers.len(), 1);
        assert!(validate(&c).is_empty());
        assert!(c.gates().all(|g| g.controls.is_empty() && g.kind == GateKind::SignedMcz));
        assert_eq!(c.condition_group("signs").unwrap().rounds.len(), 64);
    }

    #[test]
    fn sign_layer_count() {
        let mut r = rng::stream(8, "t", 0);
        let p = 64 / 6;
        let c = sign_thermalizer(64, p, 9.0, 256, 6, &mut r).unwrap();
        assert_eq!(c.layers.len(), (9.0f64 * 256.0 / f64::from(p)).ceil() as usize);
        assert!(validate(&c).is_empty());
        assert!(c.gates().all(|g| g.controls.len() == 5 && g.target <= 60));
        assert!(sign_thermalizer(64, 11, 9.0, 256, 6, &mut r).is_err());
    }

    #[test]
    fn generation_is_byte_identical_per_seed() {
        for alg in [Algorithm::GateOpt, Algorithm::DepthOpt, Algorithm::Sign] {
            let params = GenParams { p: Some(5), ..gp(30, 8, 3, 2.0, 2) };
            let a = generate(alg, &params, 42, 3).unwrap().to_json();
            let b = generate(alg, &params, 42, 3).unwrap().to_json();
            assert_eq!(a, b);
            assert_ne!(a, generate(alg, &params, 43, 3).unwrap().to_json());
        }
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 1);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(default_alpha(64), 9.0);
    }
}
