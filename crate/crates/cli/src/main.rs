use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use metricembed::embed::{self, EmbedError, MinDimension};
use metricembed::metric::{read_space_file, DEFAULT_METRIC_TOL};
use metricembed::pretangent::{
    blumenthal_sequence_scan, canonical_sequences, default_probe_battery, transfer_check, BlumenthalScanReport,
    NormalizingSequence, ScaleLadder, ScanParams, SequenceScanParams, TransferVerdict,
};
use metricembed::{
    Criterion, EmbedOptions, EmbedVerdict, Embeddable, FiniteMetricSpace, MarkedSpace, MetricError, Realization,
    SpaceConfig, TransferReport, DEFAULT_TOL_DET,
};

const EXIT_POSITIVE: u8 = 0;
const EXIT_NEGATIVE: u8 = 1;
const EXIT_INVALID_METRIC: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_UNDETERMINED: u8 = 4;
const EXIT_INCONSISTENT: u8 = 5;

#[derive(Parser)]
#[command(name = "metricembed", version, about = "Euclidean embeddability of finite metric spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Write the report here instead of stdout (a directory for `scan`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = DEFAULT_TOL_DET)]
    tol_det: f64,

    #[arg(long, global = true, default_value_t = DEFAULT_METRIC_TOL)]
    tol_metric: f64,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a distance matrix is a metric
    Validate { input: PathBuf },

    /// Decide whether a finite metric space embeds in E^n
    CheckEmbed {
        input: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = CriterionArg::All)]
        criterion: CriterionArg,
        /// Also compute coordinates when the answer is yes
        #[arg(long)]
        realize: bool,
    },

    /// Smallest n with an isometric embedding in E^n
    MinDim {
        input: PathBuf,
        #[arg(long)]
        realize: bool,
    },

    /// Sampled scans of the normalized functionals near the marked point
    Scan {
        /// Space configuration (JSON)
        config: PathBuf,
        #[arg(long)]
        dim: usize,
        /// Scale ladder as r0:q:count
        #[arg(long, value_parser = parse_scales, default_value = "0.5:0.5:12")]
        scales: ScaleLadder,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Sequence depth for the Blumenthal sequence scan
        #[arg(long, default_value_t = 64)]
        depth: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CriterionArg {
    Menger,
    Schoenberg,
    Blumenthal,
    All,
}

fn parse_scales(s: &str) -> Result<ScaleLadder, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [s0, q, rungs] = parts[..] else {
        return Err(format!("expected r0:q:count, got {s:?}"));
    };
    let ladder = ScaleLadder {
        s0: s0.parse().map_err(|e| format!("r0: {e}"))?,
        q: q.parse().map_err(|e| format!("q: {e}"))?,
        rungs: rungs.parse().map_err(|e| format!("count: {e}"))?,
    };
    if !(ladder.s0 > 0.0 && ladder.s0.is_finite() && ladder.q > 0.0 && ladder.q < 1.0 && ladder.rungs >= 2) {
        return Err("need r0 > 0, 0 < q < 1 and count >= 2".into());
    }
    Ok(ladder)
}

/// Everything that determines a run; echoed in every report.
#[derive(Serialize)]
struct RunConfig {
    command: &'static str,
    input: String,
    n: Option<usize>,
    criterion: Option<CriterionArg>,
    tol_det: f64,
    tol_metric: f64,
    scales: Option<ScaleLadder>,
    samples_per_scale: Option<usize>,
    depth: Option<usize>,
    seed: u64,
    format: Format,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn metric_failure(e: MetricError) -> Failure {
    match e {
        MetricError::Io(_) | MetricError::Parse(_) => Failure::new(EXIT_IO, e.to_string()),
        _ => Failure::new(EXIT_INVALID_METRIC, e.to_string()),
    }
}

fn embed_failure(e: EmbedError) -> Failure {
    match e {
        EmbedError::Metric(m) => metric_failure(m),
        EmbedError::DimensionOutOfRange(_) => Failure::new(EXIT_IO, e.to_string()),
        _ => Failure::new(EXIT_INCONSISTENT, e.to_string()),
    }
}

struct Output {
    code: u8,
    json: serde_json::Value,
    text: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_IO } else { EXIT_POSITIVE });
        }
    };
    match run(&cli) {
        Ok(out) => {
            let rendered = match cli.format {
                Format::Json => serde_json::to_string_pretty(&out.json).expect("reports serialize") + "\n",
                Format::Text => out.text,
            };
            let written = match (&cli.out, &cli.command) {
                (Some(path), Command::Scan { .. }) => {
                    print!("{rendered}");
                    write_file(&path.join("transfer.json"), &(serde_json::to_string_pretty(&out.json).unwrap() + "\n"))
                }
                (Some(path), _) => write_file(path, &rendered),
                (None, _) => {
                    print!("{rendered}");
                    Ok(())
                }
            };
            match written {
                Ok(()) => ExitCode::from(out.code),
                Err(f) => {
                    eprintln!("error: {}", f.message);
                    ExitCode::from(f.code)
                }
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    for (name, v) in [("tol-det", cli.tol_det), ("tol-metric", cli.tol_metric)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Failure::new(EXIT_IO, format!("--{name} must be positive, got {v}")));
        }
    }
    let mut run = RunConfig {
        command: "",
        input: String::new(),
        n: None,
        criterion: None,
        tol_det: cli.tol_det,
        tol_metric: cli.tol_metric,
        scales: None,
        samples_per_scale: None,
        depth: None,
        seed: cli.seed,
        format: cli.format,
    };
    let opts = EmbedOptions { tol_det: cli.tol_det, seed: cli.seed, ..EmbedOptions::default() };
    match &cli.command {
        Command::Validate { input } => {
            run.command = "validate";
            run.input = input.display().to_string();
            validate(run, input, cli.tol_metric)
        }
        Command::CheckEmbed { input, dim, criterion, realize } => {
            run.command = "check-embed";
            run.input = input.display().to_string();
            run.n = Some(*dim);
            run.criterion = Some(*criterion);
            let space = read_space_file(input, cli.tol_metric).map_err(metric_failure)?;
            check_embed(run, &space, *dim, *criterion, *realize, &opts)
        }
        Command::MinDim { input, realize } => {
            run.command = "min-dim";
            run.input = input.display().to_string();
            let space = read_space_file(input, cli.tol_metric).map_err(metric_failure)?;
            min_dim(run, &space, *realize, &opts)
        }
        Command::Scan { config, dim, scales, samples, depth } => {
            run.command = "scan";
            run.input = config.display().to_string();
            run.n = Some(*dim);
            run.scales = Some(*scales);
            run.samples_per_scale = Some(*samples);
            run.depth = Some(*depth);
            let text = std::fs::read_to_string(config)
                .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", config.display())))?;
            let cfg: SpaceConfig =
                serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_IO, format!("space config: {e}")))?;
            let space = MarkedSpace::from_config(cfg).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
            let params = ScanParams {
                ladder: *scales,
                samples_per_scale: *samples,
                seed: cli.seed,
                tol_det: cli.tol_det,
                ..ScanParams::default()
            };
            scan(run, &space, *dim, &params, *depth, cli.out.as_deref())
        }
    }
}

fn violation(e: &MetricError) -> (&'static str, Vec<usize>) {
    match *e {
        MetricError::NonzeroDiagonal(i) => ("nonzero-diagonal", vec![i]),
        MetricError::NegativeDistance(i, j) => ("negative", vec![i, j]),
        MetricError::Asymmetric(i, j) => ("asymmetric", vec![i, j]),
        MetricError::CoincidentPoints(i, j) => ("coincident", vec![i, j]),
        MetricError::TriangleViolation(i, j, k) => ("triangle", vec![i, j, k]),
        MetricError::NonFinite(i, j) => ("non-finite", vec![i, j]),
        MetricError::NotSquare { row, .. } => ("not-square", vec![row]),
        _ => ("other", vec![]),
    }
}

fn validate(run: RunConfig, input: &Path, tol: f64) -> Result<Output, Failure> {
    match read_space_file(input, tol) {
        Ok(space) => Ok(Output {
            code: EXIT_POSITIVE,
            json: json!({ "run": run, "valid": true, "points": space.len() }),
            text: format!("valid metric on {} points\n", space.len()),
        }),
        Err(e @ (MetricError::Io(_) | MetricError::Parse(_))) => Err(metric_failure(e)),
        Err(e) => {
            let (kind, indices) = violation(&e);
            Ok(Output {
                code: EXIT_INVALID_METRIC,
                json: json!({
                    "run": run,
                    "valid": false,
                    "violation": { "kind": kind, "indices": indices, "message": e.to_string() },
                }),
                text: format!("invalid: {e}\n"),
            })
        }
    }
}

fn verdict_code(v: Embeddable) -> u8 {
    match v {
        Embeddable::Yes => EXIT_POSITIVE,
        Embeddable::No => EXIT_NEGATIVE,
        Embeddable::Undetermined => EXIT_UNDETERMINED,
    }
}

fn verdict_name(v: Embeddable) -> &'static str {
    match v {
        Embeddable::Yes => "yes",
        Embeddable::No => "no",
        Embeddable::Undetermined => "undetermined",
    }
}

fn describe(v: &EmbedVerdict, out: &mut String) {
    let _ = write!(out, "{:?} n={}: {}", v.criterion, v.n, verdict_name(v.verdict));
    if let (Some(t), Some(val)) = (&v.witness_tuple, v.witness_value) {
        let _ = write!(out, ", witness {t:?} value {val:.6e}");
        if let Some(c) = v.witness_condition {
            let _ = write!(out, " ({c:?})");
        }
    }
    let _ = writeln!(out, " [{} tuples{}]", v.tuples_checked, if v.exhaustive { "" } else { ", sampled" });
}

fn describe_realization(r: &Realization, out: &mut String) {
    let _ = writeln!(out, "coordinates in E^{} (max residual {:.3e}):", r.m, r.max_residual);
    for (i, c) in r.coords.iter().enumerate() {
        let cells: Vec<String> = c.iter().map(|x| format!("{x:.9}")).collect();
        let _ = writeln!(out, "  {i}: {}", cells.join(" "));
    }
}

fn check_embed(
    run: RunConfig,
    space: &FiniteMetricSpace,
    n: usize,
    criterion: CriterionArg,
    realize: bool,
    opts: &EmbedOptions,
) -> Result<Output, Failure> {
    let criteria: &[Criterion] = match criterion {
        CriterionArg::Menger => &[Criterion::Menger],
        CriterionArg::Schoenberg => &[Criterion::Schoenberg],
        CriterionArg::Blumenthal => &[Criterion::Blumenthal],
        CriterionArg::All => &[Criterion::Menger, Criterion::Schoenberg],
    };
    let verdicts = criteria
        .iter()
        .map(|&c| embed::check(space, n, c, opts))
        .collect::<Result<Vec<_>, _>>()
        .map_err(embed_failure)?;
    let decided: Vec<Embeddable> =
        verdicts.iter().map(|v| v.verdict).filter(|v| *v != Embeddable::Undetermined).collect();
    if decided.windows(2).any(|w| w[0] != w[1]) {
        let dump = serde_json::to_string_pretty(&json!({ "run": run, "verdicts": verdicts })).unwrap();
        return Err(Failure::new(EXIT_INCONSISTENT, format!("criteria disagree; diagnostics:\n{dump}")));
    }
    let verdict = if decided.len() < verdicts.len() { Embeddable::Undetermined } else { decided[0] };
    let realization = if realize && verdict == Embeddable::Yes {
        Some(embed::realize_coordinates(space, n, opts).map_err(embed_failure)?)
    } else {
        None
    };
    let mut text = String::new();
    for v in &verdicts {
        describe(v, &mut text);
    }
    let _ = writeln!(text, "embeddable in E^{n}: {}", verdict_name(verdict));
    if let Some(r) = &realization {
        describe_realization(r, &mut text);
    }
    Ok(Output {
        code: verdict_code(verdict),
        json: json!({ "run": run, "verdict": verdict, "verdicts": verdicts, "realization": realization }),
        text,
    })
}

fn min_dim(run: RunConfig, space: &FiniteMetricSpace, realize: bool, opts: &EmbedOptions) -> Result<Output, Failure> {
    let result = embed::min_embedding_dimension(space, opts).map_err(embed_failure)?;
    let (code, mut text, realization) = match &result {
        MinDimension::Dimension { m } => {
            let r = if realize {
                Some(embed::realize_coordinates(space, (*m).max(1), opts).map_err(embed_failure)?)
            } else {
                None
            };
            (EXIT_POSITIVE, format!("{m}\n"), r)
        }
        MinDimension::Infeasible { witness } => {
            (EXIT_NEGATIVE, format!("infeasible ({})\n", serde_json::to_string(witness).unwrap()), None)
        }
    };
    if let Some(r) = &realization {
        describe_realization(r, &mut text);
    }
    Ok(Output { code, json: json!({ "run": run, "result": result, "realization": realization }), text })
}

fn describe_scan(report: &TransferReport, sequences: &Option<BlumenthalScanReport>, out: &mut String) {
    let _ = writeln!(out, "{:>2} {:<5} {:<9} {:>13} {:>13} {:>7}  verdict", "k", "mode", "condition", "liminf", "limsup", "trend");
    for r in &report.reports {
        let trend = r.trend.map_or("-".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(
            out,
            "{:>2} {:<5} {:<9} {:>13.5e} {:>13.5e} {:>7}  {:?}",
            r.k,
            format!("{:?}", r.mode),
            format!("{:?}", r.condition),
            r.running_liminf + 0.0,
            r.running_limsup + 0.0,
            trend,
            r.verdict
        );
    }
    if let Some(i) = report.refuting_scan {
        if let Some(w) = &report.reports[i].witness {
            let _ = writeln!(
                out,
                "witness at scale {:.3e}: value {:.6e}, distances to p {:?}",
                w.scale, w.value, w.to_marked
            );
        }
    }
    if let Some(s) = sequences {
        let _ = writeln!(out, "sequence scan: strict tails {:?}, {:?}", s.strict_tails, s.verdict);
    }
    let verdict = match report.verdict {
        TransferVerdict::ConsistentWithEmbeddable => "consistent-with-embeddable",
        TransferVerdict::Refuted => "refuted",
        TransferVerdict::Inconclusive => "inconclusive",
    };
    let _ = writeln!(out, "pretangent spaces in E^{}: {verdict}", report.n);
}

fn scan(
    run: RunConfig,
    space: &MarkedSpace,
    n: usize,
    params: &ScanParams,
    depth: usize,
    out_dir: Option<&Path>,
) -> Result<Output, Failure> {
    let report = transfer_check(space, n, params).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let r = NormalizingSequence::geometric(params.ladder.s0, params.ladder.q)
        .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let sequences = match canonical_sequences(space, n, &r) {
        Some(xs) => {
            let seq_params = SequenceScanParams { depth, tol_det: params.tol_det, ..SequenceScanParams::default() };
            Some(
                blumenthal_sequence_scan(space, &xs, &default_probe_battery(space, &r), &seq_params)
                    .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?,
            )
        }
        None => None,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", dir.display())))?;
        for k in 1..=n + 2 {
            let reports: Vec<_> = report.reports.iter().filter(|r| r.k == k).collect();
            let body = json!({ "run": run, "k": k, "reports": reports });
            write_file(&dir.join(format!("scan_k{k}.json")), &(serde_json::to_string_pretty(&body).unwrap() + "\n"))?;
        }
    }
    let code = match report.verdict {
        TransferVerdict::ConsistentWithEmbeddable => EXIT_POSITIVE,
        TransferVerdict::Refuted => EXIT_NEGATIVE,
        TransferVerdict::Inconclusive => EXIT_UNDETERMINED,
    };
    let mut text = String::new();
    describe_scan(&report, &sequences, &mut text);
    Ok(Output { code, json: json!({ "run": run, "transfer": report, "sequences": sequences }), text })
}
