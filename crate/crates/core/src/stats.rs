//! Statistical checks that sampled copies, signs and subsets look
//! thermalized: per-cell z tests with a Bonferroni cut, chi-square
//! goodness of fit, total variation, and a collision count.

use std::collections::HashMap;

use rand_chacha::rand_core::RngCore;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Normal, Poisson};
use statrs::function::erf::erfc;

use crate::copysim::CopyEnsemble;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tags};

/// Per-test significance level.
pub const DEFAULT_LEVEL: f64 = 1e-3;
/// Cells are never flagged below this many standard deviations.
pub const MIN_Z_THRESHOLD: f64 = 4.0;
/// Below this expected count per cell the chi-square tail is simulated.
pub const MIN_EXPECTED: f64 = 5.0;
/// Replicas used for simulated tails.
pub const NULL_REPLICAS: usize = 2000;
pub const MIN_BIT_TRIALS: usize = 1000;
pub const MIN_SIGN_TRIALS: usize = 10_000;
pub const MAX_SIGN_T: usize = 16;
/// Largest number of `t`-subsets tallied cell by cell.
pub const MAX_SUBSET_DOMAIN: u128 = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flagged: Option<u64>,
    pub samples: u64,
    pub cells: u64,
    pub level: f64,
    pub method: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TestReport {
    fn new(test: &str, samples: u64, cells: u64, level: f64) -> Self {
        Self {
            test: test.into(),
            statistic: 0.0,
            p_value: None,
            tv: None,
            max_abs_z: None,
            z_threshold: None,
            flagged: None,
            samples,
            cells,
            level,
            method: String::new(),
            pass: false,
            seed: None,
        }
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    const Z: f64 = 1.959963984540054;
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = Z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `(1/2) sum |hist/N - reference|`.
pub fn tv_distance(hist: &[u64], reference: &[f64]) -> Result<f64> {
    if hist.len() != reference.len() {
        return Err(Error::DimensionMismatch(hist.len(), reference.len()));
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(invalid("empty histogram"));
    }
    let n = total as f64;
    let tv = 0.5 * hist.iter().zip(reference).map(|(&c, &r)| (c as f64 / n - r).abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

/// Two-sided normal tail `P(|Z| >= |z|)`.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// `|z|` cut giving family-wise level `level` over `cells` two-sided tests.
pub fn bonferroni_z(level: f64, cells: u64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    -std.inverse_cdf(level / (2.0 * cells.max(1) as f64))
}

/// Result of a chi-square goodness-of-fit test against the uniform law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
    pub simulated: bool,
}

fn chi_square_statistic(counts: &[u64], expected: f64) -> f64 {
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Chi-square test of `counts` against the uniform distribution over its
/// cells. Uses the asymptotic law when every cell expects at least
/// [`MIN_EXPECTED`] hits and a seeded simulation of the multinomial null
/// otherwise.
pub fn chi_square_uniform(counts: &[u64], seed: u64) -> Result<ChiSquare> {
    let cells = counts.len();
    if cells < 2 {
        return Err(invalid("chi-square needs at least two cells"));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / cells as f64;
    let statistic = chi_square_statistic(counts, expected);
    let dof = (cells - 1) as f64;
    if expected >= MIN_EXPECTED {
        let p_value = ChiSquared::new(dof).expect("positive dof").sf(statistic);
        return Ok(ChiSquare {
            statistic,
            dof,
            p_value,
            simulated: false,
        });
    }
    let mut r = rng::stream(seed, tags::NULL, cells as u64);
    let mut hist = vec![0u64; cells];
    let mut at_least = 0usize;
    for _ in 0..NULL_REPLICAS {
        hist.iter_mut().for_each(|h| *h = 0);
        for _ in 0..total {
            hist[rng::below(&mut r, cells as u64) as usize] += 1;
        }
        // Ties count as at least as extreme.
        if chi_square_statistic(&hist, expected) >= statistic - 1e-9 * statistic.abs() {
            at_least += 1;
        }
    }
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: (1 + at_least) as f64 / (1 + NULL_REPLICAS) as f64,
        simulated: true,
    })
}

fn check_ensembles(ensembles: &[CopyEnsemble], min_trials: usize) -> Result<(u32, usize)> {
    let first = ensembles.first().ok_or_else(|| invalid("no ensembles"))?;
    if ensembles.len() < min_trials {
        return Err(invalid(format!("{} trials given, at least {min_trials} required", ensembles.len())));
    }
    let (n, t) = (first.n(), first.t());
    if ensembles.iter().any(|e| e.n() != n || e.t() != t) {
        return Err(invalid("ensembles differ in n or t"));
    }
    Ok((n, t))
}

/// Adds one to `counts[site - 1]` for every set site of `words`.
#[inline]
fn tally_bits(words: &[u64], counts: &mut [u32]) {
    for (w, &word) in words.iter().enumerate() {
        let mut x = word;
        while x != 0 {
            counts[w * 64 + x.trailing_zeros() as usize] += 1;
            x &= x - 1;
        }
    }
}

/// z scores of `counts` against `Binomial(trials, 1/2)`.
fn z_scores(counts: &[u32], trials: usize) -> impl Iterator<Item = f64> + '_ {
    let n = trials as f64;
    let sd = (n / 4.0).sqrt();
    counts.iter().map(move |&c| (f64::from(c) - n / 2.0) / sd)
}

fn z_summary(report: &mut TestReport, zs: impl Iterator<Item = f64>) -> (f64, u64) {
    let threshold = MIN_Z_THRESHOLD.max(bonferroni_z(report.level, report.cells));
    let (mut max_z, mut flagged) = (0.0f64, 0u64);
    for z in zs {
        max_z = max_z.max(z.abs());
        if z.abs() > threshold {
            flagged += 1;
        }
    }
    report.max_abs_z = Some(max_z);
    report.z_threshold = Some(threshold);
    report.flagged = Some(flagged);
    (max_z, flagged)
}

/// Every (copy, site) bit should be 1 half of the time. A cell is flagged
/// when its z score exceeds `max(4, Bonferroni cut)`; the test passes when
/// nothing is flagged.
pub fn marginal_bias_test(ensembles: &[CopyEnsemble], level: f64) -> Result<TestReport> {
    let (n, t) = check_ensembles(ensembles, MIN_BIT_TRIALS)?;
    let width = ensembles[0].stride() * 64;
    let mut counts = vec![0u32; t * width];
    for e in ensembles {
        for p in 0..t {
            tally_bits(e.copy_words(p), &mut counts[p * width..(p + 1) * width]);
        }
    }
    let cells: Vec<u32> = counts.chunks(width).flat_map(|c| c[..n as usize].iter().copied()).collect();
    let mut report = TestReport::new("marginal_bias", ensembles.len() as u64, cells.len() as u64, level);
    let (max_z, flagged) = z_summary(&mut report, z_scores(&cells, ensembles.len()));
    report.statistic = max_z;
    report.p_value = Some((report.cells as f64 * two_sided_p(max_z)).min(1.0));
    report.method = "per-cell z, bonferroni".into();
    report.pass = flagged == 0;
    Ok(report)
}

/// For every pair of copies and every site, the XOR of the two bits should
/// be uniform. Passes when the aggregate chi-square over all cells has
/// p-value at least `level` and no cell is flagged.
pub fn pairwise_xor_test(ensembles: &[CopyEnsemble], level: f64) -> Result<TestReport> {
    let (n, t) = check_ensembles(ensembles, MIN_BIT_TRIALS)?;
    if t < 2 {
        return Err(invalid("pairwise test needs t >= 2"));
    }
    let stride = ensembles[0].stride();
    let width = stride * 64;
    let pairs = t * (t - 1) / 2;
    let mut counts = vec![0u32; pairs * width];
    let mut xor = vec![0u64; stride];
    for e in ensembles {
        let mut pair = 0;
        for a in 0..t {
            for b in a + 1..t {
                for (x, (u, v)) in xor.iter_mut().zip(e.copy_words(a).iter().zip(e.copy_words(b))) {
                    *x = u ^ v;
                }
                tally_bits(&xor, &mut counts[pair * width..(pair + 1) * width]);
                pair += 1;
            }
        }
    }
    let cells: Vec<u32> = counts.chunks(width).flat_map(|c| c[..n as usize].iter().copied()).collect();
    let mut report = TestReport::new("pairwise_xor", ensembles.len() as u64, cells.len() as u64, level);
    let chi: f64 = z_scores(&cells, ensembles.len()).map(|z| z * z).sum();
    let p_chi = ChiSquared::new(cells.len() as f64).expect("positive dof").sf(chi);
    let (_, flagged) = z_summary(&mut report, z_scores(&cells, ensembles.len()));
    report.statistic = chi;
    report.p_value = Some(p_chi);
    report.method = "aggregate chi-square + per-cell z, bonferroni".into();
    report.pass = p_chi >= level && flagged == 0;
    Ok(report)
}

/// The vector of `t` signs should be uniform over `{+1,-1}^t`.
pub fn sign_vector_test(ensembles: &[CopyEnsemble], level: f64, seed: u64) -> Result<TestReport> {
    let (_, t) = check_ensembles(ensembles, MIN_SIGN_TRIALS)?;
    if t == 0 || t > MAX_SIGN_T {
        return Err(invalid(format!("sign vector test needs 1 <= t <= {MAX_SIGN_T}, got {t}")));
    }
    let mut hist = vec![0u64; 1 << t];
    for e in ensembles {
        let idx = e.negatives().iter().enumerate().fold(0usize, |acc, (i, &neg)| acc | (usize::from(neg) << i));
        hist[idx] += 1;
    }
    let cells = hist.len();
    let chi = chi_square_uniform(&hist, seed)?;
    let mut report = TestReport::new("sign_vector", ensembles.len() as u64, cells as u64, level);
    report.statistic = chi.statistic;
    report.p_value = Some(chi.p_value);
    report.tv = Some(tv_distance(&hist, &vec![1.0 / cells as f64; cells])?);
    report.method = method_name(&chi);
    report.pass = chi.p_value >= level;
    report.seed = chi.simulated.then_some(seed);
    Ok(report)
}

fn method_name(chi: &ChiSquare) -> String {
    if chi.simulated {
        format!("chi-square, simulated multinomial tail ({NULL_REPLICAS} replicas)")
    } else {
        "chi-square, asymptotic".into()
    }
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    (0..k).try_fold(1u128, |acc, i| acc.checked_mul(n - i).map(|x| x / (i + 1)))
}

/// Number of `t`-subsets of `{0,1}^n`, or `None` past `u128`.
pub fn subset_domain_size(n: u32, t: u32) -> Option<u128> {
    if n >= 127 {
        return None;
    }
    let universe = 1u128 << n;
    if u128::from(t) > universe {
        return Some(0);
    }
    binomial(universe, u128::from(t))
}

/// Rank of a sorted `t`-subset in colexicographic order.
fn colex_rank(sorted: &[u64]) -> u128 {
    sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| binomial(u128::from(c), i as u128 + 1).unwrap_or(0))
        .sum()
}

fn canonical_subset(sample: &[u64], n: u32, t: u32) -> Result<Vec<u64>> {
    if sample.len() != t as usize {
        return Err(Error::DimensionMismatch(sample.len(), t as usize));
    }
    let mut s = sample.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("subset sample has repeated elements"));
    }
    if n < 64 && s.iter().any(|&x| x >> n != 0) {
        return Err(invalid(format!("subset element outside {{0,1}}^{n}")));
    }
    Ok(s)
}

/// Tallies sampled `t`-subsets of `{0,1}^n` over every possible subset and
/// compares with the uniform distribution.
pub fn subset_uniformity_test(samples: &[Vec<u64>], n: u32, t: u32, level: f64, seed: u64) -> Result<TestReport> {
    if samples.is_empty() {
        return Err(invalid("no subset samples"));
    }
    let domain = subset_domain_size(n, t).unwrap_or(u128::MAX);
    if domain > MAX_SUBSET_DOMAIN || domain < 2 {
        return Err(Error::DimensionGuard {
            what: "number of t-subsets",
            requested: domain,
            limit: MAX_SUBSET_DOMAIN,
            hint: "use collision_test for larger domains".into(),
        });
    }
    let mut hist = vec![0u64; domain as usize];
    for s in samples {
        hist[colex_rank(&canonical_subset(s, n, t)?) as usize] += 1;
    }
    let chi = chi_square_uniform(&hist, seed)?;
    let mut report = TestReport::new("subset_uniformity", samples.len() as u64, domain as u64, level);
    report.tv = Some(tv_distance(&hist, &vec![1.0 / domain as f64; domain as usize])?);
    report.statistic = chi.statistic;
    report.p_value = Some(chi.p_value);
    report.method = method_name(&chi);
    report.pass = chi.p_value >= level;
    report.seed = chi.simulated.then_some(seed);
    Ok(report)
}

/// Counts coinciding pairs among sampled `t`-subsets and compares with the
/// Poisson count expected from uniform sampling; for domains too large to
/// tally.
pub fn collision_test(samples: &[Vec<u64>], n: u32, t: u32, level: f64) -> Result<TestReport> {
    let mut seen: HashMap<Vec<u64>, u64> = HashMap::with_capacity(samples.len());
    for s in samples {
        *seen.entry(canonical_subset(s, n, t)?).or_default() += 1;
    }
    let collisions: u64 = seen.values().map(|&c| c * (c.saturating_sub(1)) / 2).sum();
    let domain = match subset_domain_size(n, t) {
        Some(d) => d as f64,
        None => f64::INFINITY,
    };
    let pairs = samples.len() as f64 * (samples.len() as f64 - 1.0) / 2.0;
    let lambda = pairs / domain;
    let p_value = if collisions == 0 {
        1.0
    } else if lambda <= 0.0 {
        0.0
    } else {
        Poisson::new(lambda).expect("positive rate").sf(collisions - 1)
    };
    let mut report = TestReport::new("subset_collisions", samples.len() as u64, seen.len() as u64, level);
    report.statistic = collisions as f64;
    report.p_value = Some(p_value);
    report.method = format!("poisson upper tail, expected {lambda:.4e} collisions");
    report.pass = p_value >= level;
    Ok(report)
}

/// Independent uniform distinct strings with fair signs: what a perfectly
/// thermalized ensemble looks like.
pub fn oracle_ensemble<R: RngCore + ?Sized>(n: u32, t: usize, rng: &mut R) -> Result<CopyEnsemble> {
    let mut e = crate::copysim::sample_initial_copies(n, n, t, rng)?;
    for i in 0..t {
        e.set_negative(i, rng::coin(rng));
    }
    Ok(e)
}
