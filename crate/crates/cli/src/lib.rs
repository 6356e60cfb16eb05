//! Command-line front end for the `xlgap` metrics.
//!
//! Every subcommand prints JSON on stdout: full-precision values plus, where useful, a
//! `summary` object rounded to the precision tables are usually reported at. Files are
//! written atomically.
//!
//! Exit status: 0 success, 1 usage error, 2 data or parse error, 3 numeric error
//! (including non-convergence under `--strict`).

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use xlgap::bound::{
    empirical_h_divergence, fit_stump, h_delta_h_divergence, verify_bound, BoundParams, Polarity,
    StumpHypothesis,
};
use xlgap::data::{load_embeddings, load_probabilities, load_scores, EmbeddingFormat};
use xlgap::gap::{pairwise_cka, rpd, score_spread, Centering};
use xlgap::phonemize::{cross_validate, load_inventory, load_rules, phonemize_line};
use xlgap::rank::{kendall_tau_b_with, spearman_with, CorrelationResult, PValueMode};
use xlgap::report::{build_from_dir, emit_heatmap, write_report, ReportOptions};
use xlgap::transport::{pairwise_sinkhorn, SinkhornConfig};
use xlgap::{Error, ErrorKind, LanguageId, ScoreTable};

pub mod input;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "xlgap",
    version,
    about = "Cross-lingual performance and representation gap metrics"
)]
pub struct Cli {
    /// Worker threads for pairwise computations [default: one per core]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relative percentage difference between every pair of scores
    Rpd(RpdArgs),
    /// Standard deviation (fraction scale) and mean pairwise RPD of a score table
    Spread(SpreadArgs),
    /// Pairwise linear CKA between row-aligned embedding files
    Cka(CkaArgs),
    /// Pairwise Sinkhorn distances between probability files, one JSON line per pair
    Sinkhorn(SinkhornArgs),
    /// Spearman or Kendall tau-b correlation of a two-column CSV
    Corr(CorrArgs),
    /// Check a stump's risk gap against the divergence bound
    Bound(BoundArgs),
    /// Empirical H- and HΔH-divergence between two point sets
    Hdiv(HdivArgs),
    /// Convert text lines on stdin to space-separated IPA phonemes on stdout
    Phonemize(PhonemizeArgs),
    /// Build the full gap report from a directory of per-language files
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RpdArgs {
    /// Scores as LANG=SCORE, at least two
    #[arg(value_name = "LANG=SCORE", num_args = 2.., required = true, value_parser = parse_score)]
    scores: Vec<(LanguageId, f64)>,
}

#[derive(Debug, Args)]
struct SpreadArgs {
    /// JSON object mapping language codes to scores
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
}

#[derive(Debug, Args)]
struct CkaArgs {
    /// Embedding files (.csv, or .xlg / .bin for the binary format), at least two
    #[arg(value_name = "FILE", num_args = 2.., required = true)]
    inputs: Vec<PathBuf>,

    /// Skip column centering
    #[arg(long)]
    uncentered: bool,

    /// Also write the heatmap CSV (lang_i,lang_j,cka) here
    #[arg(long, value_name = "FILE")]
    heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SinkhornOptions {
    /// Entropic regularization weight
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,

    /// Iteration cap per pair
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,

    /// Marginal-violation tolerance
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,

    /// Exit with status 3 if any pair fails to converge
    #[arg(long)]
    strict: bool,
}

impl SinkhornOptions {
    fn config(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Args)]
struct SinkhornArgs {
    /// Probability CSV files, at least two
    #[arg(value_name = "FILE", num_args = 2.., required = true)]
    inputs: Vec<PathBuf>,

    #[command(flatten)]
    options: SinkhornOptions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CorrMethod {
    Spearman,
    Kendall,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PValueArg {
    Auto,
    Exact,
    Asymptotic,
}

#[derive(Debug, Args)]
struct CorrArgs {
    /// Two-column CSV of paired observations (optional header)
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    #[arg(long, value_enum, default_value_t = CorrMethod::Spearman)]
    method: CorrMethod,

    /// Exact permutation p-values need n <= 10; auto picks exact whenever possible
    #[arg(long = "p-value", value_enum, default_value_t = PValueArg::Auto)]
    p_value: PValueArg,
}

#[derive(Debug, Args)]
struct BoundArgs {
    /// Labelled source sample, rows x1,...,xd,label
    #[arg(long, value_name = "FILE")]
    source: PathBuf,

    /// Labelled target sample, rows x1,...,xd,label
    #[arg(long, value_name = "FILE")]
    target: PathBuf,

    /// Confidence parameter in (0, 1)
    #[arg(long, default_value_t = 0.05)]
    delta: f64,

    /// Capacity d of the hypothesis class in the complexity term
    #[arg(long, default_value_t = 2)]
    pdim: u32,

    /// Hypothesis as DIM:THRESHOLD:POLARITY (polarity le_one or le_zero);
    /// by default the stump with the lowest source risk
    #[arg(long, value_name = "STUMP", value_parser = parse_stump)]
    stump: Option<StumpHypothesis>,
}

#[derive(Debug, Args)]
struct HdivArgs {
    /// Source points, rows x1,...,xd
    #[arg(long, value_name = "FILE")]
    source: PathBuf,

    /// Target points, rows x1,...,xd
    #[arg(long, value_name = "FILE")]
    target: PathBuf,
}

#[derive(Debug, Args)]
struct PhonemizeArgs {
    /// Rule table (TSV: order, source, target, left_context, right_context)
    #[arg(long, value_name = "FILE")]
    rules: PathBuf,

    /// Phoneme inventory, one unit per line
    #[arg(long, value_name = "FILE")]
    inventory: PathBuf,

    /// Copy characters without a rule or inventory unit instead of failing
    #[arg(long)]
    passthrough: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory with scores.json, <lang>.csv or <lang>.xlg, and optional <lang>.probs.csv
    #[arg(long, value_name = "DIR")]
    dir: PathBuf,

    /// Report JSON destination
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// CKA heatmap CSV destination
    #[arg(long, value_name = "FILE")]
    heatmap: Option<PathBuf>,

    /// Skip column centering in CKA
    #[arg(long)]
    uncentered: bool,

    #[command(flatten)]
    sinkhorn: SinkhornOptions,
}

fn parse_score(s: &str) -> Result<(LanguageId, f64), String> {
    let (lang, score) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LANG=SCORE, got {s:?}"))?;
    let lang = LanguageId::new(lang).map_err(|e| e.to_string())?;
    let score: f64 = score
        .parse()
        .map_err(|_| format!("invalid score {score:?}"))?;
    Ok((lang, score))
}

fn parse_stump(s: &str) -> Result<StumpHypothesis, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [dim, threshold, polarity] = parts.as_slice() else {
        return Err(format!("expected DIM:THRESHOLD:POLARITY, got {s:?}"));
    };
    let dim = dim
        .parse()
        .map_err(|_| format!("invalid dimension {dim:?}"))?;
    let threshold: f64 = threshold
        .parse()
        .map_err(|_| format!("invalid threshold {threshold:?}"))?;
    if threshold.is_nan() {
        return Err("threshold must not be NaN".into());
    }
    let polarity = match *polarity {
        "le_one" => Polarity::LeOne,
        "le_zero" => Polarity::LeZero,
        other => return Err(format!("polarity must be le_one or le_zero, got {other:?}")),
    };
    Ok(StumpHypothesis {
        dim,
        threshold,
        polarity,
    })
}

/// Why a command stopped.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    Output(std::io::Error),
    /// Results were produced but `--strict` rejects them.
    Strict(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Output(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Lib(Error::Config(_)) => EXIT_USAGE,
            Failure::Lib(e) => match e.kind() {
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            },
            Failure::Output(_) => EXIT_DATA,
            Failure::Strict(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Strict(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
            Failure::Output(e) => format!("writing output: {e}"),
        }
    }
}

/// Parses `args` (including the program name) and runs the selected subcommand.
/// Returns the process exit status.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let mut text = String::new();
    if matches!(cli.command, Command::Phonemize(_)) {
        if let Err(e) = stdin.read_to_string(&mut text) {
            let _ = writeln!(stderr, "error: reading stdin: {e}");
            return EXIT_DATA;
        }
    }
    // Output is buffered so that the command can run inside a dedicated pool.
    let mut buffer = Vec::new();
    let result = match cli.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &text, &mut buffer)),
            Err(e) => Err(Failure::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(&cli.command, &text, &mut buffer),
    };
    let result = result
        .and_then(|()| Ok(stdout.write_all(&buffer)?))
        .or_else(|failure| {
            // Lines produced before a --strict rejection are still shown.
            if matches!(failure, Failure::Strict(_)) {
                stdout.write_all(&buffer)?;
            }
            Err(failure)
        });
    match result {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let _ = writeln!(stderr, "error: {}", failure.message());
            failure.exit_code()
        }
    }
}

fn dispatch(command: &Command, stdin: &str, stdout: &mut Vec<u8>) -> Result<(), Failure> {
    match command {
        Command::Rpd(a) => cmd_rpd(a, stdout),
        Command::Spread(a) => cmd_spread(a, stdout),
        Command::Cka(a) => cmd_cka(a, stdout),
        Command::Sinkhorn(a) => cmd_sinkhorn(a, stdout),
        Command::Corr(a) => cmd_corr(a, stdout),
        Command::Bound(a) => cmd_bound(a, stdout),
        Command::Hdiv(a) => cmd_hdiv(a, stdout),
        Command::Phonemize(a) => cmd_phonemize(a, stdin, stdout),
        Command::Report(a) => cmd_report(a, stdout),
    }
}

/// Rounds to `places` decimal places for the human-readable summary.
pub fn round_to(v: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (v * scale).round() / scale
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    let line = serde_json::to_string(value).expect("output serializes");
    writeln!(out, "{line}")?;
    Ok(())
}

#[derive(Serialize)]
struct RpdPair {
    pair: [LanguageId; 2],
    rpd: f64,
}

#[derive(Serialize)]
struct RpdOutput {
    pairs: Vec<RpdPair>,
    summary: RpdSummary,
}

#[derive(Serialize)]
struct RpdSummary {
    pairs: Vec<RpdPair>,
}

fn cmd_rpd(a: &RpdArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut table = ScoreTable::new();
    for (lang, score) in &a.scores {
        table.insert(lang.clone(), *score)?;
    }
    let entries: Vec<(&LanguageId, f64)> = table.iter().collect();
    let mut pairs = Vec::new();
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let (la, sa) = entries[i];
            let (lb, sb) = entries[j];
            let value = rpd(sa, sb).map_err(|e| Error::Pair {
                a: la.to_string(),
                b: lb.to_string(),
                source: Box::new(e),
            })?;
            pairs.push(RpdPair {
                pair: [la.clone(), lb.clone()],
                rpd: value,
            });
        }
    }
    let summary = RpdSummary {
        pairs: pairs
            .iter()
            .map(|p| RpdPair {
                pair: p.pair.clone(),
                rpd: round_to(p.rpd, 2),
            })
            .collect(),
    };
    emit(out, &RpdOutput { pairs, summary })
}

#[derive(Serialize)]
struct SpreadOutput {
    languages: Vec<LanguageId>,
    std: f64,
    mean_rpd: f64,
    summary: SpreadSummary,
}

#[derive(Serialize)]
struct SpreadSummary {
    std: f64,
    mean_rpd: f64,
}

fn cmd_spread(a: &SpreadArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let table = load_scores(&a.scores)?;
    let spread = score_spread(&table)?;
    emit(
        out,
        &SpreadOutput {
            languages: table.languages().cloned().collect(),
            std: spread.std,
            mean_rpd: spread.mean_rpd,
            summary: SpreadSummary {
                std: round_to(spread.std, 4),
                mean_rpd: round_to(spread.mean_rpd, 2),
            },
        },
    )
}

#[derive(Serialize)]
struct CkaOutput {
    languages: Vec<LanguageId>,
    centering: Centering,
    cka: Vec<Vec<f64>>,
    mean_cka: f64,
    summary: CkaSummary,
}

#[derive(Serialize)]
struct CkaSummary {
    mean_cka: f64,
}

fn centering(uncentered: bool) -> Centering {
    if uncentered {
        Centering::Uncentered
    } else {
        Centering::Centered
    }
}

fn cmd_cka(a: &CkaArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let sets = a
        .inputs
        .iter()
        .map(|p| load_embeddings(p, EmbeddingFormat::from_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let centering = centering(a.uncentered);
    let result = pairwise_cka(&sets, centering)?;
    if let Some(path) = &a.heatmap {
        emit_heatmap(&result.matrix, path)?;
    }
    emit(
        out,
        &CkaOutput {
            languages: result.matrix.languages().to_vec(),
            centering,
            mean_cka: result.mean,
            summary: CkaSummary {
                mean_cka: round_to(result.mean, 4),
            },
            cka: result.matrix.into_values(),
        },
    )
}

#[derive(Serialize)]
struct SinkhornLine<'a> {
    pair: &'a [LanguageId; 2],
    distance: f64,
    iterations: usize,
    converged: bool,
    epsilon: f64,
}

fn strict_check(strict: bool, unconverged: &[String]) -> Result<(), Failure> {
    if strict && !unconverged.is_empty() {
        return Err(Failure::Strict(format!(
            "Sinkhorn did not converge for {}",
            unconverged.join(", ")
        )));
    }
    Ok(())
}

fn cmd_sinkhorn(a: &SinkhornArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let sets = a
        .inputs
        .iter()
        .map(|p| load_probabilities(p))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = a.options.config();
    let result = pairwise_sinkhorn(&sets, &cfg)?;
    for p in &result.pairs {
        emit(
            out,
            &SinkhornLine {
                pair: &p.pair,
                distance: p.distance,
                iterations: p.iterations,
                converged: p.converged,
                epsilon: cfg.epsilon,
            },
        )?;
    }
    let unconverged: Vec<String> = result
        .unconverged()
        .map(|p| format!("{}-{}", p.pair[0], p.pair[1]))
        .collect();
    strict_check(a.options.strict, &unconverged)
}

#[derive(Serialize)]
struct CorrOutput {
    #[serde(flatten)]
    result: CorrelationResult,
    summary: CorrSummary,
}

#[derive(Serialize)]
struct CorrSummary {
    coefficient: f64,
    p_value: f64,
}

fn cmd_corr(a: &CorrArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (x, y) = input::read_pairs(&a.input)?;
    let mode = match a.p_value {
        PValueArg::Auto => PValueMode::Auto,
        PValueArg::Exact => PValueMode::Exact,
        PValueArg::Asymptotic => PValueMode::Asymptotic,
    };
    let result = match a.method {
        CorrMethod::Spearman => spearman_with(&x, &y, mode)?,
        CorrMethod::Kendall => kendall_tau_b_with(&x, &y, mode)?,
    };
    emit(
        out,
        &CorrOutput {
            result,
            summary: CorrSummary {
                coefficient: round_to(result.coefficient, 3),
                p_value: round_to(result.p_value, 4),
            },
        },
    )
}

#[derive(Serialize)]
struct BoundOutput {
    h_div: f64,
    hdh_div: f64,
    complexity: f64,
    bound: f64,
    gap: f64,
    holds: bool,
    hypothesis: StumpHypothesis,
    params: BoundParams,
    summary: BoundSummary,
}

#[derive(Serialize)]
struct BoundSummary {
    gap: f64,
    bound: f64,
    holds: bool,
}

fn cmd_bound(a: &BoundArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let source = input::read_labeled(&a.source)?;
    let target = input::read_labeled(&a.target)?;
    let hypothesis = a.stump.unwrap_or_else(|| fit_stump(&source));
    let params = BoundParams {
        pdim: a.pdim,
        n: source.len().min(target.len()),
        delta: a.delta,
    };
    let check = verify_bound(&source, &target, &hypothesis, &params)?;
    emit(
        out,
        &BoundOutput {
            h_div: check.h_div,
            hdh_div: check.hdh_div,
            complexity: check.complexity,
            bound: check.bound,
            gap: check.gap,
            holds: check.holds,
            hypothesis,
            params,
            summary: BoundSummary {
                gap: round_to(check.gap, 4),
                bound: round_to(check.bound, 4),
                holds: check.holds,
            },
        },
    )
}

#[derive(Serialize)]
struct HdivOutput {
    h_div: f64,
    hdh_div: f64,
    summary: HdivSummary,
}

#[derive(Serialize)]
struct HdivSummary {
    h_div: f64,
    hdh_div: f64,
}

fn cmd_hdiv(a: &HdivArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let source = input::read_points(&a.source)?;
    let target = input::read_points(&a.target)?;
    let h_div = empirical_h_divergence(&source, &target)?;
    let hdh_div = h_delta_h_divergence(&source, &target)?;
    emit(
        out,
        &HdivOutput {
            h_div,
            hdh_div,
            summary: HdivSummary {
                h_div: round_to(h_div, 4),
                hdh_div: round_to(hdh_div, 4),
            },
        },
    )
}

fn cmd_phonemize(a: &PhonemizeArgs, stdin: &str, out: &mut dyn Write) -> Result<(), Failure> {
    let rules = load_rules(&a.rules)?;
    let inventory = load_inventory(&a.inventory)?;
    cross_validate(&rules, &inventory)?;
    let mut converted = String::new();
    for (idx, line) in stdin.lines().enumerate() {
        let phonemes =
            phonemize_line(line, &rules, &inventory, a.passthrough).map_err(|e| Error::Parse {
                path: "<stdin>".into(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        converted.push_str(&phonemes);
        converted.push('\n');
    }
    out.write_all(converted.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct ReportOutput {
    out: String,
    heatmap: Option<String>,
    summary: ReportSummary,
}

#[derive(Serialize)]
struct ReportSummary {
    std: f64,
    mean_rpd: f64,
    mean_cka: f64,
    unconverged: usize,
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let options = ReportOptions {
        centering: centering(a.uncentered),
        sinkhorn: a.sinkhorn.config(),
    };
    options.sinkhorn.validate()?;
    let report = build_from_dir(&a.dir, &options)?;
    let unconverged: Vec<String> = report
        .meta
        .sinkhorn
        .iter()
        .flat_map(|m| m.unconverged.iter())
        .map(|[x, y]| format!("{x}-{y}"))
        .collect();
    strict_check(a.sinkhorn.strict, &unconverged)?;
    write_report(&report, &a.out)?;
    if let Some(path) = &a.heatmap {
        emit_heatmap(&report.cka_matrix(), path)?;
    }
    emit(
        out,
        &ReportOutput {
            out: a.out.display().to_string(),
            heatmap: a.heatmap.as_ref().map(|p| p.display().to_string()),
            summary: ReportSummary {
                std: round_to(report.std, 4),
                mean_rpd: round_to(report.mean_rpd, 2),
                mean_cka: round_to(report.meta.mean_cka, 4),
                unconverged: unconverged.len(),
            },
        },
    )
}
