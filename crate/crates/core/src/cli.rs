//! Command line front end.
//!
//! Every artifact carries a `provenance` block with the tool version, RNG
//! identifier, master seed and the full parsed command line, so a run can
//! be repeated from its output alone. CSV outputs put that block in a
//! `<out>.meta.json` sidecar.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::algorithms::{ceil_log2, default_alpha, generate, Algorithm, GenParams};
use crate::analysis::{predicted_cost, premise_check, violated, Premise, Regime};
use crate::circuit::{ccx_equivalent_count, depth, validate, Circuit, CostModel};
use crate::copysim::{sample_initial_copies, CopyEnsemble};
use crate::error::{invalid, Error, Result};
use crate::f2linalg::{full_rank_probability_bound, full_rank_probability_sequential, monte_carlo_full_rank, RankBoundParams, DEFAULT_EPSILON};
use crate::rng::{self, tags, RNG_ALGORITHM};
use crate::stats::{self, marginal_bias_test, pairwise_xor_test, sign_vector_test, wilson_interval, TestReport};
use crate::subsetstate::{empirical_moment, haar_moment, moment_dimension, sample_algorithm_states, sample_oracle_states, trace_distance, PreparationParams};
use crate::VERSION;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Failure = 1,
    PremiseViolation = 2,
    VerifyFailed = 3,
}

#[derive(Parser, Debug, Serialize)]
#[command(name = "pseudotherm", version, about = "Random multi-controlled circuit thermalizers: generate, simulate, verify")]
pub struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate one circuit.
    Gen(GenArgs),
    /// Run a circuit file on sampled initial copies.
    Sim(SimArgs),
    /// Monte Carlo full-rank frequency of a Bernoulli matrix.
    RankMc(RankMcArgs),
    /// Sweep the full-rank bounds against Monte Carlo.
    Bounds(BoundsArgs),
    /// Exact t-th moment trace distance to Haar at tiny sizes.
    Moments(MomentsArgs),
    /// Run the thermalization test battery over fresh circuits.
    Verify(VerifyArgs),
    /// Depth and gate counts over a parameter grid.
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmArg {
    GateOpt,
    DepthOpt,
    Sign,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::GateOpt => Algorithm::GateOpt,
            AlgorithmArg::DepthOpt => Algorithm::DepthOpt,
            AlgorithmArg::Sign => Algorithm::Sign,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeArg {
    CcxGates,
    McxGates,
    CcxDepth,
    McxDepth,
    SignFew,
    SignMany,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::CcxGates => Regime::CcxGates,
            RegimeArg::McxGates => Regime::McxGates,
            RegimeArg::CcxDepth => Regime::CcxDepth,
            RegimeArg::McxDepth => Regime::McxDepth,
            RegimeArg::SignFew => Regime::SignFew,
            RegimeArg::SignMany => Regime::SignMany,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ParamArgs {
    #[arg(long, value_enum)]
    pub algorithm: AlgorithmArg,
    #[arg(long)]
    pub n: u32,
    /// Initial subset exponent (defaults to n for the sign thermalizer).
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub t: u32,
    /// Round multiplier; defaults to ceil(2 ln n).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Controls per gate; defaults to ceil(log2 t).
    #[arg(long)]
    pub m: Option<u32>,
    /// Gates per layer of the sign thermalizer; defaults to floor(n / m).
    #[arg(long)]
    pub p: Option<u32>,
    /// Check this regime's premises and warn (or fail with --strict).
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    /// Exit with status 2 on premise violations.
    #[arg(long)]
    pub strict: bool,
}

impl ParamArgs {
    fn gen_params(&self) -> GenParams {
        let k = self.k.unwrap_or(if self.algorithm == AlgorithmArg::Sign { self.n } else { 0 });
        GenParams {
            n: self.n,
            k,
            t: self.t,
            alpha: self.alpha.unwrap_or_else(|| default_alpha(self.n)),
            m: self.m.unwrap_or_else(|| ceil_log2(self.t)),
            p: self.p,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Trial index of the generator stream.
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnostics {
    None,
    Rank,
}

#[derive(Args, Debug, Serialize)]
pub struct SimArgs {
    #[arg(long)]
    pub circuit: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Copies per trial (defaults to the circuit's t).
    #[arg(long)]
    pub t: Option<u32>,
    /// Initial subset exponent (defaults to the circuit's k).
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, value_enum, default_value_t = Diagnostics::None)]
    pub diagnostics: Diagnostics,
    /// Include one record per trial.
    #[arg(long)]
    pub per_trial: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RankMcArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BoundsArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.25")]
    pub p: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub l: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Oracle,
    Algorithm,
}

#[derive(Args, Debug, Serialize)]
pub struct MomentsArgs {
    #[arg(long)]
    pub n: u32,
    #[arg(long)]
    pub k: u32,
    /// Moment order.
    #[arg(long)]
    pub t: u32,
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub m: u32,
    /// Ensemble whose moment is compared with Haar as td_empirical.
    #[arg(long, value_enum, default_value_t = Baseline::Algorithm)]
    pub baseline: Baseline,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 2000)]
    pub trials: u64,
    /// Per-test significance level.
    #[arg(long, default_value_t = stats::DEFAULT_LEVEL)]
    pub level: f64,
    /// Required full-rank frequency of the condition matrices.
    #[arg(long, default_value_t = 0.99)]
    pub rank_threshold: f64,
    /// Copies whose sign vector is tested (sign thermalizer only).
    #[arg(long, default_value_t = 8)]
    pub sign_copies: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ScalingArgs {
    #[arg(long, value_enum, default_value_t = AlgorithmArg::DepthOpt)]
    pub algorithm: AlgorithmArg,
    /// Grid as `key=values;...` with keys n, t, k, m, alpha. Values are
    /// comma lists; `2^a..2^b` expands to powers of two. Unset k, m and
    /// alpha default to ceil(sqrt n), ceil(log2 t) and ceil(2 ln n).
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool_version: &'static str,
    rng: &'static str,
    seed: u64,
    command: &'a Cli,
}

fn provenance(cli: &Cli) -> Value {
    serde_json::to_value(Provenance {
        tool_version: VERSION,
        rng: RNG_ALGORITHM,
        seed: cli.seed,
        command: cli,
    })
    .expect("provenance serializes")
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<()> {
    emit(out, &(serde_json::to_string_pretty(value).expect("json serializes") + "\n"))
}

/// Writes rows as CSV (with a provenance sidecar) or as a JSON document.
fn emit_table<T: Serialize>(cli: &Cli, default: Format, out: Option<&Path>, rows: &[T], extra: Value) -> Result<()> {
    match cli.format.unwrap_or(default) {
        Format::Json => emit_json(out, &json!({ "provenance": provenance(cli), "summary": extra, "rows": rows })),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| invalid(format!("csv buffer: {e}")))?;
            let text = String::from_utf8(bytes).expect("csv is utf-8");
            if let Some(path) = out {
                let mut meta = path.as_os_str().to_owned();
                meta.push(".meta.json");
                emit_json(Some(Path::new(&meta)), &json!({ "provenance": provenance(cli), "summary": extra }))?;
            }
            emit(out, text.trim_end())
        }
    }
}

pub fn read_circuit(path: &Path) -> Result<Circuit> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Circuit::from_json(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Prints premise results; returns true when any failed.
fn report_premises(regime: Option<RegimeArg>, gp: &GenParams) -> (Vec<Premise>, bool) {
    let Some(r) = regime else {
        return (Vec::new(), false);
    };
    let premises = premise_check(r.into(), gp);
    let bad = violated(&premises);
    for p in &bad {
        eprintln!("warning: premise {:?} of regime {} fails ({})", p.name, Regime::from(r), p.detail);
    }
    let any = !bad.is_empty();
    (premises, any)
}

/// Parses arguments and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Failure as i32 } else { Exit::Success as i32 };
        }
    };
    match run(&cli) {
        Ok(code) => code as i32,
        Err(e) => {
            eprintln!("error: {e}");
            Exit::Failure as i32
        }
    }
}

pub fn run(cli: &Cli) -> Result<Exit> {
    if cli.threads > 0 {
        // A second initialization in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Gen(a) => run_gen(cli, a),
        Command::Sim(a) => run_sim(cli, a),
        Command::RankMc(a) => run_rank_mc(cli, a),
        Command::Bounds(a) => run_bounds(cli, a),
        Command::Moments(a) => run_moments(cli, a),
        Command::Verify(a) => run_verify(cli, a),
        Command::Scaling(a) => run_scaling(cli, a),
    }
}

fn run_gen(cli: &Cli, a: &GenArgs) -> Result<Exit> {
    let gp = a.params.gen_params();
    let (_, bad) = report_premises(a.params.regime, &gp);
    if bad && a.params.strict {
        return Ok(Exit::PremiseViolation);
    }
    let c = generate(a.params.algorithm.into(), &gp, cli.seed, a.stream)?;
    emit(a.out.as_deref(), &c.to_json())?;
    Ok(Exit::Success)
}

#[derive(Serialize)]
struct TrialRecord {
    trial: u64,
    distinct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    full_rank: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_rank: Option<usize>,
}

fn circuit_summary(c: &Circuit) -> Value {
    json!({
        "generator": c.generator,
        "n": c.n,
        "seed": c.seed,
        "params": c.params,
        "layers": c.layers.len(),
        "gates": c.gate_count(),
        "unit_depth": depth(c, CostModel::Unit),
        "decomposed_depth": depth(c, CostModel::Decomposed),
        "ccx_equivalent": ccx_equivalent_count(c),
    })
}

fn param_u32(c: &Circuit, key: &str) -> Option<u32> {
    c.params.get(key).and_then(Value::as_u64).map(|v| v as u32)
}

fn run_sim(cli: &Cli, a: &SimArgs) -> Result<Exit> {
    let path = a.circuit.as_deref().ok_or_else(|| invalid("sim needs --circuit <file>"))?;
    let c = read_circuit(path)?;
    let problems = validate(&c);
    if let Some(v) = problems.first() {
        return Err(invalid(format!("{}: {} structural problems, first: {v}", path.display(), problems.len())));
    }
    let t = a.t.or_else(|| param_u32(&c, "t")).ok_or_else(|| invalid("circuit has no t; pass --t"))?;
    let k = a.k.or_else(|| param_u32(&c, "k")).unwrap_or(c.n);
    let diagnostics = a.diagnostics == Diagnostics::Rank;

    let results: Vec<(CopyEnsemble, Vec<(String, usize, bool)>)> = (0..a.trials)
        .into_par_iter()
        .map(|i| {
            let mut e = sample_initial_copies(c.n, k, t as usize, &mut rng::stream(cli.seed, tags::COPIES, i))?;
            let ranks = if diagnostics {
                e.apply_circuit_with_diagnostics(&c)?
                    .into_iter()
                    .map(|(name, x)| (name, x.rank(), x.is_full_row_rank()))
                    .collect()
            } else {
                e.apply_circuit(&c)?;
                Vec::new()
            };
            Ok((e, ranks))
        })
        .collect::<Result<_>>()?;

    let copies = (a.trials * u64::from(t)) as f64;
    let mut ones = vec![0u64; c.n as usize];
    let mut negative = 0u64;
    for (e, _) in &results {
        for p in 0..e.t() {
            for (site, count) in ones.iter_mut().enumerate() {
                *count += u64::from(e.bit(p, site as u32 + 1));
            }
            negative += u64::from(e.is_negative(p));
        }
    }
    let distinct = results.iter().filter(|(e, _)| e.is_distinct()).count();
    let mut report = json!({
        "provenance": provenance(cli),
        "circuit": circuit_summary(&c),
        "trials": a.trials,
        "t": t,
        "k": k,
        "distinct_fraction": distinct as f64 / a.trials as f64,
        "marginals": ones.iter().map(|&o| o as f64 / copies).collect::<Vec<_>>(),
        "negative_sign_fraction": negative as f64 / copies,
    });
    if diagnostics {
        let full = results.iter().filter(|(_, r)| r.iter().all(|g| g.2)).count() as u64;
        let (lo, hi) = wilson_interval(full, a.trials);
        report["full_rank_fraction"] = json!(full as f64 / a.trials as f64);
        report["full_rank_ci95"] = json!([lo, hi]);
        let groups: serde_json::Map<String, Value> = c
            .condition_groups
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let hits = results.iter().filter(|(_, r)| r[gi].2).count();
                (g.name.clone(), json!(hits as f64 / a.trials as f64))
            })
            .collect();
        report["group_full_rank_fraction"] = Value::Object(groups);
    }
    if a.per_trial {
        let records: Vec<TrialRecord> = results
            .iter()
            .enumerate()
            .map(|(i, (e, r))| TrialRecord {
                trial: i as u64,
                distinct: e.is_distinct(),
                full_rank: diagnostics.then(|| r.iter().all(|g| g.2)),
                min_rank: diagnostics.then(|| r.iter().map(|g| g.1).min().unwrap_or(0)),
            })
            .collect();
        report["per_trial"] = serde_json::to_value(records).expect("records serialize");
    }
    emit_json(a.report.as_deref(), &report)?;
    Ok(Exit::Success)
}

fn run_rank_mc(cli: &Cli, a: &RankMcArgs) -> Result<Exit> {
    let est = monte_carlo_full_rank(a.rows, a.cols, a.p, a.trials, cli.seed)?;
    let mut report = json!({
        "provenance": provenance(cli),
        "rows": a.rows,
        "cols": a.cols,
        "p": a.p,
        "estimate": est.estimate,
        "ci95": [est.ci_lo, est.ci_hi],
        "successes": est.successes,
        "trials": est.trials,
    });
    if let Ok(params) = RankBoundParams::new(a.p, a.rows, a.cols as f64, a.epsilon) {
        let seq = full_rank_probability_sequential(&params);
        report["epsilon"] = json!(a.epsilon);
        report["bound_closed"] = json!(full_rank_probability_bound(&params));
        report["bound_sequential"] = json!(seq.value);
        report["bound_sequential_valid"] = json!(seq.valid);
    }
    emit_json(a.out.as_deref(), &report)?;
    Ok(Exit::Success)
}

#[derive(Serialize)]
struct BoundRow {
    p: f64,
    l: usize,
    m: usize,
    epsilon: f64,
    bound_closed: f64,
    bound_sequential: f64,
    mc_estimate: f64,
    mc_ci_lo: f64,
    mc_ci_hi: f64,
    trials: u64,
    seed: u64,
}

fn run_bounds(cli: &Cli, a: &BoundsArgs) -> Result<Exit> {
    let mut rows = Vec::new();
    for &p in &a.p {
        for &l in &a.l {
            for &m in &a.m {
                let params = RankBoundParams::new(p, l, m as f64, a.epsilon)?;
                let est = monte_carlo_full_rank(l, m, p, a.trials, cli.seed)?;
                rows.push(BoundRow {
                    p,
                    l,
                    m,
                    epsilon: a.epsilon,
                    bound_closed: full_rank_probability_bound(&params),
                    bound_sequential: full_rank_probability_sequential(&params).value,
                    mc_estimate: est.estimate,
                    mc_ci_lo: est.ci_lo,
                    mc_ci_hi: est.ci_hi,
                    trials: a.trials,
                    seed: cli.seed,
                });
            }
        }
    }
    emit_table(cli, Format::Csv, a.out.as_deref(), &rows, Value::Null)?;
    Ok(Exit::Success)
}

fn run_moments(cli: &Cli, a: &MomentsArgs) -> Result<Exit> {
    moment_dimension(a.n, a.t)?;
    let alpha = a.alpha.unwrap_or_else(|| default_alpha(a.n));
    let prep = PreparationParams::for_moment(a.n, a.k, a.t, alpha, a.m);
    let haar = haar_moment(a.n, a.t)?;
    let oracle = empirical_moment(&sample_oracle_states(a.n, a.k, a.samples, cli.seed)?, a.t)?;
    let td_oracle = trace_distance(&oracle, &haar)?;
    let td_empirical = match a.baseline {
        Baseline::Oracle => td_oracle,
        Baseline::Algorithm => {
            let states = sample_algorithm_states(&prep, a.samples, cli.seed)?;
            trace_distance(&empirical_moment(&states, a.t)?, &haar)?
        }
    };
    let report = json!({
        "provenance": provenance(cli),
        "n": a.n,
        "k": a.k,
        "t": a.t,
        "dimension": haar.dim(),
        "preparation": prep,
        "ensemble": a.baseline,
        "td_empirical": td_empirical,
        "td_oracle_baseline": td_oracle,
        "samples": a.samples,
        "seed": cli.seed,
    });
    emit_json(a.report.as_deref(), &report)?;
    Ok(Exit::Success)
}

fn rank_report(name: &str, hits: u64, trials: u64, threshold: f64) -> TestReport {
    let (lo, hi) = wilson_interval(hits, trials);
    let freq = hits as f64 / trials as f64;
    TestReport {
        test: name.into(),
        statistic: freq,
        p_value: None,
        tv: None,
        max_abs_z: None,
        z_threshold: None,
        flagged: None,
        samples: trials,
        cells: 1,
        level: threshold,
        method: format!("full-rank frequency, 95% CI [{lo:.4}, {hi:.4}], required >= {threshold}"),
        pass: freq >= threshold,
        seed: None,
    }
}

/// Runs one bit thermalizer trial: fresh circuit on fresh copies. Returns
/// the final copies and, per condition group, whether it was full rank.
pub fn bit_trial(algorithm: Algorithm, gp: &GenParams, seed: u64, trial: u64) -> Result<(CopyEnsemble, Vec<bool>)> {
    let c = generate(algorithm, gp, seed, trial)?;
    let mut e = sample_initial_copies(gp.n, gp.k, gp.t as usize, &mut rng::stream(seed, tags::COPIES, trial))?;
    let mats = e.apply_circuit_with_diagnostics(&c)?;
    Ok((e, mats.iter().map(|(_, x)| x.is_full_row_rank()).collect()))
}

/// Runs one sign thermalizer trial on uniformly random distinct strings
/// and keeps the first `keep` copies.
pub fn sign_trial(gp: &GenParams, seed: u64, trial: u64, keep: usize) -> Result<CopyEnsemble> {
    let c = generate(Algorithm::Sign, gp, seed, trial)?;
    let mut r = rng::stream(seed, tags::COPIES, trial);
    let e = sample_initial_copies(gp.n, gp.n, gp.t as usize, &mut r)?;
    // Signs never move bits, so running the kept copies alone is exact.
    let mut kept = e.subsample(&(0..keep.min(e.t())).collect::<Vec<_>>());
    kept.apply_circuit(&c)?;
    Ok(kept)
}

/// The test battery for one parameter set.
pub fn verify_reports(algorithm: Algorithm, gp: &GenParams, trials: u64, seed: u64, level: f64, rank_threshold: f64, sign_copies: usize) -> Result<Vec<TestReport>> {
    match algorithm {
        Algorithm::Sign => {
            let ensembles: Vec<CopyEnsemble> = (0..trials).into_par_iter().map(|i| sign_trial(gp, seed, i, sign_copies)).collect::<Result<_>>()?;
            Ok(vec![sign_vector_test(&ensembles, level, seed)?])
        }
        _ => {
            let results: Vec<(CopyEnsemble, Vec<bool>)> = (0..trials).into_par_iter().map(|i| bit_trial(algorithm, gp, seed, i)).collect::<Result<_>>()?;
            let (ensembles, ranks): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            let mut reports = Vec::new();
            if algorithm == Algorithm::GateOpt {
                for (gi, name) in ["full_rank[stage1]", "full_rank[stage2]"].iter().enumerate() {
                    let hits = ranks.iter().filter(|r| r[gi]).count() as u64;
                    reports.push(rank_report(name, hits, trials, rank_threshold));
                }
            } else {
                let hits = ranks.iter().filter(|r| r.iter().all(|&b| b)).count() as u64;
                reports.push(rank_report("full_rank[all]", hits, trials, rank_threshold));
            }
            reports.push(marginal_bias_test(&ensembles, level)?);
            reports.push(pairwise_xor_test(&ensembles, level)?);
            let distinct = ensembles.iter().filter(|e| e.is_distinct()).count() as u64;
            let mut d = rank_report("distinctness", distinct, trials, 1.0);
            d.method = "fraction of trials with pairwise distinct copies".into();
            reports.push(d);
            Ok(reports)
        }
    }
}

fn run_verify(cli: &Cli, a: &VerifyArgs) -> Result<Exit> {
    let gp = a.params.gen_params();
    let (premises, bad) = report_premises(a.params.regime, &gp);
    if bad && a.params.strict {
        return Ok(Exit::PremiseViolation);
    }
    let algorithm: Algorithm = a.params.algorithm.into();
    let reports = verify_reports(algorithm, &gp, a.trials, cli.seed, a.level, a.rank_threshold, a.sign_copies)?;
    let all_pass = reports.iter().all(|r| r.pass);
    let mut out = json!({
        "provenance": provenance(cli),
        "algorithm": algorithm,
        "params": gp,
        "premises": premises,
        "predicted": predicted_cost(algorithm, &gp).ok(),
        "all_pass": all_pass,
        "reports": reports,
    });
    if premises.is_empty() {
        out.as_object_mut().expect("object").remove("premises");
    }
    emit_json(a.report.as_deref(), &out)?;
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!("FAIL {}: statistic {} ({})", r.test, r.statistic, r.method);
    }
    Ok(if !all_pass && a.params.strict { Exit::VerifyFailed } else { Exit::Success })
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub algorithm: String,
    pub n: u32,
    pub k: u32,
    pub t: u32,
    pub alpha: f64,
    pub m: u32,
    pub gates: usize,
    pub unit_depth: u64,
    pub decomposed_depth: u64,
    pub predicted_gates: f64,
    pub predicted_depth: f64,
    pub seed: u64,
}

fn parse_values(key: &str, text: &str) -> Result<Vec<f64>> {
    let bad = || invalid(format!("cannot parse grid values {text:?} for {key}"));
    let pow2 = |s: &str| -> Result<u32> { s.trim().strip_prefix("2^").ok_or_else(bad)?.parse().map_err(|_| bad()) };
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = token.split_once("..") {
            let (a, b) = (pow2(a)?, pow2(b)?);
            if a > b || b > 31 {
                return Err(bad());
            }
            out.extend((a..=b).map(|e| f64::from(1u32 << e)));
        } else if token.starts_with("2^") {
            out.push(f64::from(1u32 << pow2(token)?.min(31)));
        } else {
            out.push(token.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Expands a grid description into generator parameters.
pub fn parse_grid(text: &str) -> Result<Vec<GenParams>> {
    let mut keys: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for part in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| invalid(format!("grid entry {part:?} is not key=values")))?;
        let k = k.trim();
        if !["n", "t", "k", "m", "alpha"].contains(&k) {
            return Err(invalid(format!("unknown grid key {k:?}")));
        }
        keys.insert(k, parse_values(k, v)?);
    }
    let ns = keys.get("n").ok_or_else(|| invalid("grid needs n"))?;
    let ts = keys.get("t").ok_or_else(|| invalid("grid needs t"))?;
    let mut out = Vec::new();
    for &n in ns {
        for &t in ts {
            let (n, t) = (n as u32, t as u32);
            let ks = keys.get("k").cloned().unwrap_or_else(|| vec![f64::from(n).sqrt().ceil()]);
            let ms = keys.get("m").cloned().unwrap_or_else(|| vec![f64::from(ceil_log2(t))]);
            let alphas = keys.get("alpha").cloned().unwrap_or_else(|| vec![default_alpha(n)]);
            for &k in &ks {
                for &m in &ms {
                    for &alpha in &alphas {
                        out.push(GenParams { n, k: k as u32, t, alpha, m: m as u32, p: None });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn scaling_row(algorithm: Algorithm, gp: &GenParams, seed: u64) -> Result<ScalingRow> {
    let c = generate(algorithm, gp, seed, 0)?;
    let pred = predicted_cost(algorithm, gp)?;
    Ok(ScalingRow {
        algorithm: algorithm.name().into(),
        n: gp.n,
        k: gp.k,
        t: gp.t,
        alpha: gp.alpha,
        m: gp.m,
        gates: c.gate_count(),
        unit_depth: depth(&c, CostModel::Unit),
        decomposed_depth: depth(&c, CostModel::Decomposed),
        predicted_gates: pred.gates,
        predicted_depth: pred.decomposed_depth,
        seed,
    })
}

fn run_scaling(cli: &Cli, a: &ScalingArgs) -> Result<Exit> {
    let algorithm: Algorithm = a.algorithm.into();
    let grid = parse_grid(&a.grid)?;
    // One circuit at a time: the largest grid points hold millions of gates.
    let rows: Vec<ScalingRow> = grid.iter().map(|gp| scaling_row(algorithm, gp, cli.seed)).collect::<Result<_>>()?;
    emit_table(cli, Format::Csv, a.out.as_deref(), &rows, json!({ "grid": a.grid }))?;
    Ok(Exit::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("n=2^8..2^10;t=4,8").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], GenParams { n: 256, k: 16, t: 4, alpha: 12.0, m: 2, p: None });
        assert_eq!(g[5].n, 1024);
        assert_eq!(g[5].m, 3);
        let g = parse_grid("n=100; t=4; k=10,20; alpha=1.5").unwrap();
        assert_eq!(g.iter().map(|p| p.k).collect::<Vec<_>>(), vec![10, 20]);
        assert!(g.iter().all(|p| p.alpha == 1.5));
        assert!(parse_grid("t=4").is_err());
        assert!(parse_grid("n=2^x;t=4").is_err());
        assert!(parse_grid("n=8;t=4;q=1").is_err());
    }

    #[test]
    fn parse_errors_exit_one() {
        assert_eq!(main_with_args(["pseudotherm", "sim"]), 1);
        assert_eq!(main_with_args(["pseudotherm", "frobnicate"]), 1);
        assert_eq!(main_with_args(["pseudotherm", "--help"]), 0);
    }

    #[test]
    fn strict_premise_violation_exits_two() {
        let code = main_with_args([
            "pseudotherm", "gen", "--algorithm", "gate-opt", "--n", "64", "--k", "24", "--t", "20", "--m", "2", "--alpha", "2", "--regime", "ccx-gates", "--strict",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
