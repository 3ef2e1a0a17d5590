//! Command-line front end: dataset generation, query execution with budget
//! enforcement, trace export, and verification suites.
//!
//! Exit codes: 0 ok, 2 usage/config error, 3 budget exhausted,
//! 4 verification failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::json;

use odp::budget::{ChargeOutcome, PrivacyBudget};
use odp::dataset::{generate, parse_csv, to_csv, Database, TypeDistribution};
use odp::extmem::{PrivateMemoryMeter, TraceRecorder};
use odp::noise::PrivacyParams;
use odp::queries::{
    distinct_sort_odp, distinct_stream_odp, freq_oracle_build, heavy_hitters_odp, histogram_odp,
    histogram_oram, naive_histogram, NoiseMode,
};
use odp::verify::{
    check_exact_obliviousness, estimate_trace_epsilon, rows_to_csv, utility_distinct_sort,
    utility_distinct_stream, utility_freq_oracle, utility_heavy_hitters, utility_histogram,
    UtilityRow,
};

const SCHEMA_VERSION: u32 = 1;

const EXIT_USAGE: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

#[derive(Parser)]
#[command(name = "odp", version, about = "Obliviously differentially private statistics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset CSV.
    Gen(GenArgs),
    /// Run a query against a dataset, printing a JSON result.
    Query {
        #[command(subcommand)]
        query: QueryCmd,
    },
    /// Run a verification suite, writing a CSV report.
    Verify {
        #[command(subcommand)]
        suite: VerifyCmd,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Zipf,
    FromFile,
}

#[derive(Args)]
struct GenArgs {
    /// Number of records.
    #[arg(long)]
    n: u64,
    /// Domain size (types are 1..=k).
    #[arg(long, alias = "m")]
    k: Option<u64>,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: DistArg,
    /// Zipf exponent (with --dist zipf).
    #[arg(long, default_value_t = 1.1)]
    zipf_s: f64,
    /// Existing dataset whose empirical type distribution is resampled
    /// (with --dist from-file).
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryCommon {
    /// Dataset CSV path.
    dataset: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the access trace to this file and reference it in the output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Skip noise entirely. Breaks every privacy guarantee; requires
    /// --unsafe.
    #[arg(long)]
    zero_noise: bool,
    #[arg(long = "unsafe")]
    unsafe_ok: bool,
    /// Persistent budget ledger (JSON). Created from --budget-eps /
    /// --budget-delta when missing.
    #[arg(long)]
    budget_file: Option<PathBuf>,
    #[arg(long)]
    budget_eps: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    budget_delta: f64,
}

#[derive(Subcommand)]
enum QueryCmd {
    /// Shuffle-based ODP histogram over types 1..=k.
    Histogram {
        #[command(flatten)]
        common: QueryCommon,
        #[arg(long)]
        k: u64,
    },
    /// Fully oblivious ORAM-based histogram.
    HistogramOram {
        #[command(flatten)]
        common: QueryCommon,
        #[arg(long)]
        k: u64,
    },
    /// Sort-based distinct count.
    Distinct {
        #[command(flatten)]
        common: QueryCommon,
    },
    /// Streaming distinct count (KMV sketch in private memory).
    DistinctStream {
        #[command(flatten)]
        common: QueryCommon,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Heavy hitters (frequency above n/k) over domain 1..=m.
    HeavyHitters {
        #[command(flatten)]
        common: QueryCommon,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 2.0)]
        tau: f64,
    },
    /// Count-min frequency oracle released with per-cell noise.
    FreqOracle {
        #[command(flatten)]
        common: QueryCommon,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        theta: f64,
        /// Write the released sketch blob here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OblAlg {
    Sort,
    Shuffle,
    Oram,
    HistogramOram,
    /// Expected-fail fixture: per-type counter updates leak the input.
    NaiveHistogram,
}

#[derive(Clone, Copy, ValueEnum)]
enum UtilAlg {
    Histogram,
    Distinct,
    DistinctStream,
    HeavyHitters,
    FreqOracle,
    All,
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Exact trace-equality check across same-size input pairs.
    Obliviousness {
        #[arg(long, value_enum)]
        alg: OblAlg,
        #[arg(long, default_value_t = 50)]
        pairs: u64,
        #[arg(long, default_value_t = 64)]
        n: u64,
        #[arg(long, default_value_t = 4)]
        k: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Empirical epsilon estimate on a fixed neighbor pair.
    TraceDp {
        /// Only the shuffle-based histogram is supported.
        #[arg(long, default_value = "histogram")]
        alg: String,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 200)]
        n: u64,
        #[arg(long, default_value_t = 4)]
        k: u64,
        /// Extra allowance over eps for estimator noise.
        #[arg(long, default_value_t = 0.3)]
        slack: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Error-bound pass rates against exact ground truth.
    Utility {
        #[arg(long, value_enum)]
        alg: UtilAlg,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var("ODP_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or_else(|| rand::rng().random())
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Query { query } => cmd_query(query),
        Cmd::Verify { suite } => cmd_verify(suite),
    };
    match result {
        Ok(code) => code,
        Err(e) => usage_error(&e.to_string()),
    }
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if args.n == 0 {
        return Ok(usage_error("--n must be at least 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(resolve_seed(args.seed));
    let db = match args.dist {
        DistArg::Uniform | DistArg::Zipf => {
            let Some(k) = args.k else {
                return Ok(usage_error("--k (or --m) is required for uniform/zipf"));
            };
            if k == 0 {
                return Ok(usage_error("--k must be at least 1"));
            }
            let dist = match args.dist {
                DistArg::Uniform => TypeDistribution::Uniform,
                _ => TypeDistribution::Zipf { exponent: args.zipf_s },
            };
            generate(args.n, k, dist, &mut rng)
        }
        DistArg::FromFile => {
            let Some(source) = &args.source else {
                return Ok(usage_error("--source is required for --dist from-file"));
            };
            let src = parse_csv(&std::fs::read_to_string(source)?)?;
            let types: Vec<u64> = src.records().iter().map(|r| r.item_type).collect();
            let records = (1..=args.n)
                .map(|id| odp::dataset::Record {
                    record_id: id,
                    item_type: types[rng.random_range(0..types.len())],
                })
                .collect();
            Database::new(records)?
        }
    };
    write_or_print(&args.out, &to_csv(&db))?;
    Ok(ExitCode::SUCCESS)
}

struct QueryContext {
    db: Database,
    params: PrivacyParams,
    mode: NoiseMode,
    rng: ChaCha12Rng,
    budget: Option<(PathBuf, PrivacyBudget)>,
}

fn prepare(common: &QueryCommon) -> Result<Result<QueryContext, ExitCode>, Box<dyn std::error::Error>> {
    if common.zero_noise && !common.unsafe_ok {
        return Ok(Err(usage_error("--zero-noise requires --unsafe")));
    }
    let params = match PrivacyParams::new(common.eps, common.delta) {
        Ok(p) => p,
        Err(e) => return Ok(Err(usage_error(&e.to_string()))),
    };
    let db = parse_csv(&std::fs::read_to_string(&common.dataset)?)?;
    let budget = match (&common.budget_file, common.budget_eps) {
        (Some(path), _) if path.exists() => {
            let ledger: PrivacyBudget = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            Some((path.clone(), ledger))
        }
        (Some(path), Some(eps_total)) => {
            Some((path.clone(), PrivacyBudget::new(eps_total, common.budget_delta)))
        }
        (Some(_), None) => {
            return Ok(Err(usage_error(
                "--budget-file does not exist; provide --budget-eps to create it",
            )));
        }
        (None, Some(eps_total)) => {
            // in-memory ledger for a single invocation
            Some((PathBuf::new(), PrivacyBudget::new(eps_total, common.budget_delta)))
        }
        (None, None) => None,
    };
    Ok(Ok(QueryContext {
        db,
        params,
        mode: if common.zero_noise { NoiseMode::ZeroNoise } else { NoiseMode::Standard },
        rng: ChaCha12Rng::seed_from_u64(resolve_seed(common.seed)),
        budget,
    }))
}

/// Charges the ledger; on refusal prints a JSON error object and returns
/// the budget-exhausted exit code without touching the ledger file.
fn charge(ctx: &mut QueryContext, label: &str) -> Result<Option<ExitCode>, Box<dyn std::error::Error>> {
    let Some((path, ledger)) = &mut ctx.budget else {
        return Ok(None);
    };
    match ledger.charge(label, ctx.params) {
        ChargeOutcome::Accepted => {
            if !path.as_os_str().is_empty() {
                std::fs::write(&*path, ledger.report_json())?;
            }
            Ok(None)
        }
        ChargeOutcome::Exhausted => {
            let err = json!({
                "schema_version": SCHEMA_VERSION,
                "error": "budget exhausted",
                "query": label,
                "requested": {"epsilon": ctx.params.epsilon, "delta": ctx.params.delta},
                "remaining": {
                    "epsilon": ledger.epsilon_remaining(),
                    "delta": ledger.delta_remaining(),
                },
            });
            println!("{}", serde_json::to_string_pretty(&err)?);
            Ok(Some(ExitCode::from(EXIT_BUDGET)))
        }
    }
}

fn emit_result(
    ctx: &QueryContext,
    common: &QueryCommon,
    label: &str,
    params_json: serde_json::Value,
    result: serde_json::Value,
    trace_text: Option<String>,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let trace_file = match (&common.trace, trace_text) {
        (Some(path), Some(text)) => {
            std::fs::write(path, text)?;
            Some(path.display().to_string())
        }
        _ => None,
    };
    let budget_remaining = ctx.budget.as_ref().map(|(_, b)| {
        json!({"epsilon": b.epsilon_remaining(), "delta": b.delta_remaining()})
    });
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "query": label,
        "params": params_json,
        "result": result,
        "budget_remaining": budget_remaining,
    });
    if let Some(f) = trace_file {
        out["trace_file"] = json!(f);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_query(query: QueryCmd) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let common = match &query {
        QueryCmd::Histogram { common, .. }
        | QueryCmd::HistogramOram { common, .. }
        | QueryCmd::Distinct { common }
        | QueryCmd::DistinctStream { common, .. }
        | QueryCmd::HeavyHitters { common, .. }
        | QueryCmd::FreqOracle { common, .. } => common,
    };
    let mut ctx = match prepare(common)? {
        Ok(ctx) => ctx,
        Err(code) => return Ok(code),
    };
    let want_trace = common.trace.is_some();
    let recorder = if want_trace { TraceRecorder::new() } else { TraceRecorder::counting_only() };
    let take_trace = |rec: &TraceRecorder| want_trace.then(|| rec.take_trace().to_text());

    match query {
        QueryCmd::Histogram { ref common, k } => {
            if let Some(code) = charge(&mut ctx, "histogram")? {
                return Ok(code);
            }
            let run = histogram_odp(&recorder, &ctx.db, k, ctx.params, ctx.mode, &mut ctx.rng)?;
            emit_result(
                &ctx,
                common,
                "histogram",
                json!({"k": k, "epsilon": ctx.params.epsilon, "delta": ctx.params.delta}),
                json!({
                    "counts": run.histogram.counts,
                    "padding_constant": run.histogram.padding_constant,
                    "total_augmented": run.total_augmented,
                }),
                take_trace(&recorder),
            )
        }
        QueryCmd::HistogramOram { ref common, k } => {
            if let Some(code) = charge(&mut ctx, "histogram-oram")? {
                return Ok(code);
            }
            let run = histogram_oram(&recorder, &ctx.db, k, ctx.params, ctx.mode, &mut ctx.rng)?;
            emit_result(
                &ctx,
                common,
                "histogram-oram",
                json!({"k": k, "epsilon": ctx.params.epsilon, "delta": ctx.params.delta}),
                json!({"counts": run.histogram.counts}),
                take_trace(&recorder),
            )
        }
        QueryCmd::Distinct { ref common } => {
            if let Some(code) = charge(&mut ctx, "distinct")? {
                return Ok(code);
            }
            let out = distinct_sort_odp(&recorder, &ctx.db, ctx.params, ctx.mode, &mut ctx.rng)?;
            emit_result(
                &ctx,
                common,
                "distinct",
                json!({"epsilon": ctx.params.epsilon, "delta": ctx.params.delta}),
                json!({"estimate": out.estimate}),
                take_trace(&recorder),
            )
        }
        QueryCmd::DistinctStream { ref common, alpha } => {
            if let Some(code) = charge(&mut ctx, "distinct-stream")? {
                return Ok(code);
            }
            let mut meter = PrivateMemoryMeter::new(1 << 24);
            let out = distinct_stream_odp(
                &recorder, &ctx.db, alpha, ctx.params, ctx.mode, &mut ctx.rng, &mut meter,
            )?;
            emit_result(
                &ctx,
                common,
                "distinct-stream",
                json!({"alpha": alpha, "epsilon": ctx.params.epsilon, "delta": ctx.params.delta}),
                json!({"estimate": out.estimate}),
                take_trace(&recorder),
            )
        }
        QueryCmd::HeavyHitters { ref common, k, m, tau } => {
            if let Some(code) = charge(&mut ctx, "heavy-hitters")? {
                return Ok(code);
            }
            let out = heavy_hitters_odp(
                &recorder, &ctx.db, k, m, tau, ctx.params, ctx.mode, &mut ctx.rng,
            )?;
            let entries: Vec<_> = out
                .entries
                .iter()
                .map(|e| json!({"item": e.item, "noisy_count": e.noisy_count}))
                .collect();
            emit_result(
                &ctx,
                common,
                "heavy-hitters",
                json!({
                    "k": k, "m": m, "tau": tau,
                    "epsilon": ctx.params.epsilon, "delta": ctx.params.delta,
                }),
                json!({"entries": entries, "threshold": out.threshold}),
                take_trace(&recorder),
            )
        }
        QueryCmd::FreqOracle { ref common, alpha, theta, ref out } => {
            if let Some(code) = charge(&mut ctx, "freq-oracle")? {
                return Ok(code);
            }
            let mut meter = PrivateMemoryMeter::new(1 << 24);
            let oracle = freq_oracle_build(
                &recorder, &ctx.db, alpha, theta, ctx.params, ctx.mode, &mut ctx.rng, &mut meter,
            )?;
            let blob_file = match out {
                Some(path) => {
                    std::fs::write(path, oracle.released.encode())?;
                    Some(path.display().to_string())
                }
                None => None,
            };
            emit_result(
                &ctx,
                common,
                "freq-oracle",
                json!({
                    "alpha": alpha, "theta": theta,
                    "epsilon": ctx.params.epsilon, "delta": ctx.params.delta,
                }),
                json!({
                    "width": oracle.released.width(),
                    "depth": oracle.released.depth(),
                    "sketch_file": blob_file,
                }),
                take_trace(&recorder),
            )
        }
    }
}

fn neighbor_pair(n: u64, k: u64) -> (Database, Database) {
    let types: Vec<u64> = (0..n).map(|i| i % k + 1).collect();
    let mk = |ts: &[u64]| {
        Database::new(
            ts.iter()
                .enumerate()
                .map(|(i, &t)| odp::dataset::Record { record_id: i as u64 + 1, item_type: t })
                .collect(),
        )
        .expect("unique ids")
    };
    let d1 = mk(&types);
    let mut t2 = types;
    t2[0] = t2[0] % k + 1;
    (d1, mk(&t2))
}

fn cmd_verify(suite: VerifyCmd) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match suite {
        VerifyCmd::Obliviousness { alg, pairs, n, k, seed, report } => {
            let seed = resolve_seed(seed);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n_inputs = (pairs as usize).max(2);
            let obl = match alg {
                OblAlg::Sort => {
                    let inputs: Vec<Vec<u64>> = (0..n_inputs)
                        .map(|_| (0..n).map(|_| rng.random_range(0..1000)).collect())
                        .collect();
                    check_exact_obliviousness(&inputs, seed, |rec, input, _| {
                        let mut arr = rec.array(input.clone());
                        odp::oprim::oblivious_sort_by_key(&mut arr, |&x| x);
                    })
                }
                OblAlg::Shuffle => {
                    let inputs: Vec<Vec<u64>> = (0..n_inputs)
                        .map(|_| (0..n).map(|_| rng.random_range(0..1000)).collect())
                        .collect();
                    check_exact_obliviousness(&inputs, seed, |rec, input, rng| {
                        let mut arr = rec.array(input.clone());
                        odp::oprim::oblivious_shuffle(rec, &mut arr, rng);
                    })
                }
                OblAlg::Oram => {
                    // inputs carry both contents and the op positions the
                    // adversary must not learn
                    let inputs: Vec<(Vec<u64>, Vec<usize>)> = (0..n_inputs)
                        .map(|_| {
                            let cells = (0..n).map(|_| rng.random()).collect();
                            let ops =
                                (0..n).map(|_| rng.random_range(0..n as usize)).collect();
                            (cells, ops)
                        })
                        .collect();
                    check_exact_obliviousness(&inputs, seed, |rec, (cells, ops), _| {
                        let mut oram = odp::oprim::LinearScanOram::new(rec, cells.clone());
                        for (j, &i) in ops.iter().enumerate() {
                            if j % 2 == 0 {
                                oram.read(i);
                            } else {
                                oram.write(i, j as u64);
                            }
                        }
                    })
                }
                OblAlg::HistogramOram | OblAlg::NaiveHistogram => {
                    let params = PrivacyParams::pure(1.0)?;
                    let inputs: Vec<Database> = (0..n_inputs)
                        .map(|_| generate(n, k, TypeDistribution::Uniform, &mut rng))
                        .collect();
                    check_exact_obliviousness(&inputs, seed, |rec, db, rng| match alg {
                        OblAlg::NaiveHistogram => {
                            naive_histogram(rec, db, k).expect("valid db");
                        }
                        _ => {
                            histogram_oram(rec, db, k, params, NoiseMode::Standard, rng)
                                .expect("valid db");
                        }
                    })
                }
            };
            let mut csv = String::from("name,metric,bound,observed,pass\n");
            csv.push_str(&format!(
                "obliviousness,identical_traces,{},{},{}\n",
                n_inputs,
                if obl.pass { n_inputs } else { 0 },
                obl.pass
            ));
            write_or_print(&report, &csv)?;
            if let Some(d) = &obl.divergence {
                eprintln!(
                    "divergence: input {} event {}: expected {}, got {}",
                    d.input_index, d.event_index, d.expected, d.actual
                );
            }
            Ok(if obl.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VERIFICATION) })
        }
        VerifyCmd::TraceDp { alg, eps, trials, n, k, slack, seed, report } => {
            if alg != "histogram" {
                return Ok(usage_error("only --alg histogram supports trace-dp estimation"));
            }
            let params = PrivacyParams::pure(eps)?;
            let (d1, d2) = neighbor_pair(n, k);
            let est = estimate_trace_epsilon(
                &d1,
                &d2,
                k,
                params,
                NoiseMode::Standard,
                trials,
                resolve_seed(seed),
            )?;
            let pass = est.epsilon_hat <= eps + slack;
            let mut csv = String::from("name,metric,bound,observed,pass\n");
            csv.push_str(&format!(
                "trace_dp,epsilon_hat,{},{},{pass}\n",
                eps + slack,
                est.epsilon_hat
            ));
            csv.push_str(&format!("trace_dp,ci_low,,{},{pass}\n", est.ci_low));
            csv.push_str(&format!("trace_dp,ci_high,,{},{pass}\n", est.ci_high));
            write_or_print(&report, &csv)?;
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VERIFICATION) })
        }
        VerifyCmd::Utility { alg, trials, seed, report } => {
            let seed = resolve_seed(seed);
            let mut rows: Vec<UtilityRow> = Vec::new();
            if matches!(alg, UtilAlg::Histogram | UtilAlg::All) {
                rows.push(utility_histogram(1000, 8, 1.0, 0.05, trials, seed));
            }
            if matches!(alg, UtilAlg::Distinct | UtilAlg::All) {
                rows.push(utility_distinct_sort(1000, 1.0, 0.05, trials, seed));
            }
            if matches!(alg, UtilAlg::DistinctStream | UtilAlg::All) {
                rows.push(utility_distinct_stream(10_000, 0.1, 1.0, 0.05, 0.85, trials, seed));
            }
            if matches!(alg, UtilAlg::HeavyHitters | UtilAlg::All) {
                rows.extend(utility_heavy_hitters(10_000, 10, 1 << 16, 1.0, 0.05, trials, seed));
            }
            if matches!(alg, UtilAlg::FreqOracle | UtilAlg::All) {
                rows.extend(utility_freq_oracle(100_000, 1000, 0.01, 0.05, 0.05, 1.0, seed));
            }
            let pass = rows.iter().all(|r| r.pass);
            write_or_print(&report, &rows_to_csv(&rows))?;
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VERIFICATION) })
        }
    }
}
