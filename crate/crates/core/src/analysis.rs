//! Success-probability bounds, predicted costs, premise checks and
//! log-log fits used by the sweeps.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::algorithms::{ceil_log2, closing_sweeps, Algorithm, GenParams};
use crate::circuit::ccx_cost;
use crate::error::{invalid, Error, Result};
use crate::f2linalg::{full_rank_probability_bound, RankBoundParams};

/// Lower bound on the full-rank probability of the `t x alpha t` condition
/// matrix of Toffoli rounds (entries non-trivial with probability 1/4).
pub fn pt_ccx_bound(alpha: f64, t: u32, epsilon: f64) -> Result<f64> {
    let m = alpha * f64::from(t);
    if m < 1.0 {
        return Err(invalid(format!("alpha*t = {m} must be at least 1")));
    }
    let params = RankBoundParams::new(0.25, t as usize, m, epsilon)?;
    Ok(full_rank_probability_bound(&params))
}

/// The large-`t` approximation of the full-rank bound for `ceil(log2 t)`
/// controls:
/// `exp(-(t-1) e^{-alpha} (e-1)) * exp(-(t-1)^{(1+eps) alpha - 1} / t^{alpha t} * s/(1-s)^2)`
/// with `s` evaluated at `p = 1/t`.
pub fn pt_mcx_bound(alpha: f64, t: u32, epsilon: f64) -> Result<f64> {
    if t < 2 {
        return Err(invalid("the multi-controlled bound needs t >= 2"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) || !(alpha > 0.0) {
        return Err(invalid(format!("need alpha > 0 and 0 < epsilon < 1, got {alpha}, {epsilon}")));
    }
    let tf = f64::from(t);
    let p = 1.0 / tf;
    let q_tilde = 1.0 - (1.0 + epsilon) * p;
    if q_tilde <= 0.0 {
        return Err(invalid(format!("(1+epsilon)/t = {} must stay below 1", (1.0 + epsilon) * p)));
    }
    let s = (p * (1.0 - p)).powf(q_tilde);
    let lead = -(tf - 1.0) * (-alpha).exp() * (std::f64::consts::E - 1.0);
    // (t-1)^a / t^b in log space; both powers overflow for realistic sizes.
    let log_ratio = ((1.0 + epsilon) * alpha - 1.0) * (tf - 1.0).ln() - alpha * tf * tf.ln();
    let tail = -log_ratio.exp() * s / (1.0 - s).powi(2);
    Ok((lead + tail).exp())
}

/// Predicted size of a generated circuit. Counts that depend on random
/// apply bits are expectations; `depth_exact` marks depths fixed by
/// construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictedCost {
    pub gates: f64,
    pub ccx: f64,
    pub unit_depth: f64,
    pub decomposed_depth: f64,
    pub depth_exact: bool,
    /// Growth stages of the depth optimized thermalizer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
}

/// Expected contribution of `layers` layers of `targets` fair-coin gates,
/// each costing `cost`: `(gates, ccx, decomposed depth)`.
fn parallel_layers(layers: f64, targets: u32, cost: u64) -> (f64, f64, f64) {
    let gates = layers * f64::from(targets) / 2.0;
    let empty = 0.5f64.powi(targets as i32);
    let depth = layers * ((1.0 - empty) * cost as f64 + empty);
    (gates, gates * cost as f64, depth)
}

pub fn predicted_cost(algorithm: Algorithm, gp: &GenParams) -> Result<PredictedCost> {
    let rounds = gp.rounds() as f64;
    match algorithm {
        Algorithm::GateOpt => {
            let gates = rounds * f64::from(gp.n) / 2.0;
            let ccx = gates * ccx_cost(gp.m as usize) as f64;
            Ok(PredictedCost {
                gates,
                ccx,
                unit_depth: gates,
                decomposed_depth: ccx,
                depth_exact: false,
                stages: None,
            })
        }
        Algorithm::DepthOpt => {
            if !(gp.k > 1 && gp.k < gp.n && gp.m >= 1 && gp.m <= gp.k && gp.m <= gp.n - gp.k) {
                return Err(invalid("depth-opt needs 1 < k < n and 1 <= m <= min(k, n-k)"));
            }
            let cost = ccx_cost(gp.m as usize);
            let (mut gates, mut ccx, mut depth, mut layers) = (0.0, 0.0, 0.0, 0.0);
            let mut add = |targets: u32| {
                let (g, c, d) = parallel_layers(rounds, targets, cost);
                gates += g;
                ccx += c;
                depth += d;
                layers += rounds;
            };
            let (mut s, mut stages) = (gp.k, 0);
            while s < gp.n {
                let p = s / gp.m;
                add(p.min(gp.n - s));
                s += p;
                stages += 1;
            }
            let per_layer = (gp.n - gp.k) / gp.m;
            for sweep in 0..closing_sweeps(gp.n, gp.k, gp.m) as u32 {
                add(per_layer.min(gp.k - sweep * per_layer));
            }
            Ok(PredictedCost {
                gates,
                ccx,
                unit_depth: layers,
                decomposed_depth: depth,
                depth_exact: true,
                stages: Some(stages),
            })
        }
        Algorithm::Sign => {
            let p = gp.sign_groups();
            if p == 0 || gp.m == 0 {
                return Err(invalid("sign thermalizer needs m >= 1 and p >= 1"));
            }
            let layers = (gp.alpha * f64::from(gp.t) / f64::from(p)).ceil();
            let (gates, ccx, depth) = parallel_layers(layers, p, ccx_cost(gp.m as usize - 1));
            Ok(PredictedCost {
                gates,
                ccx,
                unit_depth: layers,
                decomposed_depth: depth,
                depth_exact: true,
                stages: None,
            })
        }
    }
}

/// `ln(n/k) / ln(1 + 1/m)`: growth stages if every stage multiplied the
/// controllable region by exactly `1 + 1/m`.
pub fn asymptotic_stage_count(n: u32, k: u32, m: u32) -> f64 {
    (f64::from(n) / f64::from(k)).ln() / (1.0 / f64::from(m)).ln_1p()
}

/// `ceil(alpha t) * log2(n) * (log2 t)^2`, the shape the depth optimized
/// thermalizer's decomposed depth should follow with `m = ceil(log2 t)`.
pub fn depth_template(n: u32, t: u32, alpha: f64) -> f64 {
    (alpha * f64::from(t)).ceil() * f64::from(n).log2() * f64::from(t).log2().powi(2)
}

/// Parameter regimes with distinct premises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Gate-count optimized, Toffoli gates, few copies.
    CcxGates,
    /// Gate-count optimized, `ceil(log2 t)` controls, polynomially many copies.
    McxGates,
    /// Depth optimized, Toffoli gates, few copies.
    CcxDepth,
    /// Depth optimized, `ceil(log2 t)` controls.
    McxDepth,
    /// Sign thermalizer with single-site conditions, `t <= n`.
    SignFew,
    /// Sign thermalizer with `ceil(log2 n)`-site conditions.
    SignMany,
}

impl Regime {
    pub const ALL: [Regime; 6] = [Self::CcxGates, Self::McxGates, Self::CcxDepth, Self::McxDepth, Self::SignFew, Self::SignMany];

    pub fn name(self) -> &'static str {
        match self {
            Self::CcxGates => "ccx-gates",
            Self::McxGates => "mcx-gates",
            Self::CcxDepth => "ccx-depth",
            Self::McxDepth => "mcx-depth",
            Self::SignFew => "sign-few",
            Self::SignMany => "sign-many",
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            Self::CcxGates | Self::McxGates => Algorithm::GateOpt,
            Self::CcxDepth | Self::McxDepth => Algorithm::DepthOpt,
            Self::SignFew | Self::SignMany => Algorithm::Sign,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| invalid(format!("unknown regime {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Premise {
    pub name: String,
    pub satisfied: bool,
    pub detail: String,
}

fn premise(name: &str, satisfied: bool, detail: String) -> Premise {
    Premise {
        name: name.into(),
        satisfied,
        detail,
    }
}

/// Mechanical finite-size reading of each regime's premises. Growth
/// conditions use proxies: "omega(log n)" means at least `log2 n`, and
/// "poly(n)" means at most `n^3`.
pub fn premise_check(regime: Regime, gp: &GenParams) -> Vec<Premise> {
    let (n, k, t, m) = (gp.n, gp.k, gp.t, gp.m);
    let log_n = f64::from(n).log2();
    let at = gp.rounds() as f64;
    let half_k = f64::from(k) / 2.0;
    let few = |out: &mut Vec<Premise>| {
        out.push(premise("k >= log2 n", f64::from(k) >= log_n, format!("k={k}, log2 n={log_n:.2}")));
        out.push(premise("t <= k/2", f64::from(t) <= half_k, format!("t={t}, k/2={half_k}")));
        out.push(premise("alpha t >= log2 n", at >= log_n, format!("ceil(alpha t)={at}, log2 n={log_n:.2}")));
        out.push(premise("alpha t <= k/2", at <= half_k, format!("ceil(alpha t)={at}, k/2={half_k}")));
        out.push(premise("m = 2", m == 2, format!("m={m}")));
    };
    let many = |out: &mut Vec<Premise>| {
        out.push(premise("k >= log2 n", f64::from(k) >= log_n, format!("k={k}, log2 n={log_n:.2}")));
        let poly = u64::from(n).pow(3);
        out.push(premise("t <= n^3", u64::from(t) <= poly, format!("t={t}, n^3={poly}")));
        out.push(premise("alpha >= log2 n", gp.alpha >= log_n, format!("alpha={}, log2 n={log_n:.2}", gp.alpha)));
        let want = ceil_log2(t);
        out.push(premise("m = ceil(log2 t)", m == want, format!("m={m}, ceil(log2 t)={want}")));
    };
    let mut out = Vec::new();
    match regime {
        Regime::CcxGates => {
            few(&mut out);
            out.push(premise("alpha >> 1", gp.alpha >= 2.0, format!("alpha={} (proxy: alpha >= 2)", gp.alpha)));
        }
        Regime::CcxDepth => few(&mut out),
        Regime::McxGates | Regime::McxDepth => many(&mut out),
        Regime::SignFew => {
            let p = gp.sign_groups();
            out.push(premise("t <= n", t <= n, format!("t={t}, n={n}")));
            out.push(premise("p = n", p == n, format!("p={p}")));
            out.push(premise("alpha t >= log2 n", at >= log_n, format!("ceil(alpha t)={at}, log2 n={log_n:.2}")));
            out.push(premise("alpha t <= n", at <= f64::from(n), format!("ceil(alpha t)={at}, n={n}")));
            out.push(premise("m = 1", m == 1, format!("m={m}")));
        }
        Regime::SignMany => {
            let p = gp.sign_groups();
            let want_m = ceil_log2(n);
            let poly = u64::from(n).pow(3);
            out.push(premise("t <= n^3", u64::from(t) <= poly, format!("t={t}, n^3={poly}")));
            out.push(premise("p = floor(n / ceil(log2 n))", p == n / want_m, format!("p={p}, expected {}", n / want_m)));
            out.push(premise("alpha >= log2 n", gp.alpha >= log_n, format!("alpha={}, log2 n={log_n:.2}", gp.alpha)));
            out.push(premise("m = ceil(log2 n)", m == want_m, format!("m={m}, ceil(log2 n)={want_m}")));
        }
    }
    out
}

pub fn violated(premises: &[Premise]) -> Vec<&Premise> {
    premises.iter().filter(|p| !p.satisfied).collect()
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(invalid("log-log fit needs at least two positive points"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("log-log fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{generate, growth_stage_count};
    use crate::circuit::{ccx_equivalent_count, depth, CostModel};

    #[test]
    fn ccx_bound_frozen_value() {
        // 1 - bound at alpha=8, t=16, eps=1/2, evaluated with 50-digit mpmath.
        // 1 - exp(-x) is x to 1e-14 relative here, so compare exponents.
        let x = RankBoundParams::new(0.25, 16, 128.0, 0.5).unwrap().closed_form_exponent();
        assert!((x / 3.017227357e-14 - 1.0).abs() < 1e-6, "{x}");
        assert_eq!(pt_ccx_bound(8.0, 16, 0.5).unwrap(), (-x).exp());
    }

    #[test]
    fn ccx_bound_limits() {
        let mut last = 0.0;
        for alpha in [1.0, 1.5, 2.0, 4.0, 8.0, 16.0] {
            let v = pt_ccx_bound(alpha, 8, 0.5).unwrap();
            assert!(v >= last && v <= 1.0);
            last = v;
        }
        assert!(1.0 - pt_ccx_bound(40.0, 8, 0.5).unwrap() < 1e-40);
    }

    #[test]
    fn mcx_bound_frozen_values() {
        // Frozen with 50-digit mpmath evaluation of the same expression.
        let v = pt_mcx_bound(10.0, 2, 0.5).unwrap();
        assert!((v - 0.9999141330177335).abs() < 1e-14, "{v}");
        let lead = (-(std::f64::consts::E - 1.0) * (-10.0f64).exp()).exp();
        assert!((lead - 0.9999219931683669).abs() < 1e-15);
        assert!(v <= lead);
        let v = pt_mcx_bound(8.0, 16, 0.5).unwrap();
        assert!((v - 0.9913909816032566).abs() < 1e-13, "{v}");
        assert!(1.0 - pt_mcx_bound(60.0, 16, 0.5).unwrap() < 1e-20);
        assert!(pt_mcx_bound(8.0, 1, 0.5).is_err());
    }

    #[test]
    fn gate_opt_prediction_is_the_mean() {
        let gp = GenParams { n: 48, k: 16, t: 4, alpha: 3.0, m: 2, p: None };
        let pred = predicted_cost(Algorithm::GateOpt, &gp).unwrap();
        assert_eq!(pred.gates, 12.0 * 48.0 / 2.0);
        let trials = 300;
        let mean = (0..trials).map(|i| ccx_equivalent_count(&generate(Algorithm::GateOpt, &gp, 2, i).unwrap()) as f64).sum::<f64>() / trials as f64;
        let sigma = (12.0 * 48.0 * 0.25 / trials as f64).sqrt();
        assert!((mean - pred.ccx).abs() < 4.0 * sigma, "{mean} vs {}", pred.ccx);
    }

    #[test]
    fn depth_opt_unit_depth_is_exact() {
        for (n, k, t, m) in [(256u32, 16u32, 4u32, 2u32), (300, 18, 8, 3), (64, 8, 16, 4)] {
            let gp = GenParams { n, k, t, alpha: 2.0, m, p: None };
            let pred = predicted_cost(Algorithm::DepthOpt, &gp).unwrap();
            assert_eq!(pred.stages, Some(growth_stage_count(n, k, m)));
            for seed in 0..4 {
                let c = generate(Algorithm::DepthOpt, &gp, seed, 0).unwrap();
                assert_eq!(depth(&c, CostModel::Unit) as f64, pred.unit_depth);
                assert!(depth(&c, CostModel::Decomposed) as f64 <= pred.unit_depth * ccx_cost(m as usize) as f64);
            }
        }
    }

    #[test]
    fn sign_constant_depth() {
        let gp = GenParams { n: 64, k: 64, t: 8, alpha: 8.0, m: 1, p: Some(64) };
        let pred = predicted_cost(Algorithm::Sign, &gp).unwrap();
        assert_eq!(pred.unit_depth, 1.0);
        assert_eq!(pred.gates, 32.0);
    }

    #[test]
    fn stage_count_asymptotics() {
        let (n, k, m) = (1u32 << 20, 32u32, 4u32);
        let exact = growth_stage_count(n, k, m) as f64;
        let approx = asymptotic_stage_count(n, k, m);
        assert!((exact - approx).abs() / approx < 0.1, "{exact} {approx}");
    }

    #[test]
    fn premises() {
        let gp = GenParams { n: 64, k: 24, t: 8, alpha: 1.0, m: 2, p: None };
        assert!(violated(&premise_check(Regime::CcxGates, &gp)).iter().any(|p| p.name == "alpha >> 1"));
        let compliant = GenParams { n: 64, k: 32, t: 4, alpha: 2.0, m: 2, p: None };
        assert!(violated(&premise_check(Regime::CcxGates, &compliant)).is_empty());
        let crowded = GenParams { t: 20, ..compliant.clone() };
        assert!(violated(&premise_check(Regime::CcxGates, &crowded)).iter().any(|p| p.name == "t <= k/2"));

        let mcx = GenParams { n: 64, k: 16, t: 64, alpha: 9.0, m: 6, p: None };
        assert!(violated(&premise_check(Regime::McxGates, &mcx)).is_empty());
        let wrong_m = GenParams { m: 5, ..mcx };
        assert_eq!(violated(&premise_check(Regime::McxGates, &wrong_m)).len(), 1);

        let sign = GenParams { n: 64, k: 64, t: 8, alpha: 8.0, m: 1, p: Some(64) };
        assert!(violated(&premise_check(Regime::SignFew, &sign)).is_empty());
        let sign_many = GenParams { n: 64, k: 64, t: 256, alpha: 9.0, m: 6, p: Some(10) };
        assert!(violated(&premise_check(Regime::SignMany, &sign_many)).is_empty());
        assert_eq!("sign-many".parse::<Regime>().unwrap(), Regime::SignMany);
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let xs = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 1.7).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_loglog(&[1.0], &[1.0]).is_err());
    }
}
