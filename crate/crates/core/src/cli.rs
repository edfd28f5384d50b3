//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or environment error, 2 data or
//! validation error.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    compute_ece, fit_isotonic, fit_temperature_with, CalibrationMap, TemperatureFitConfig,
    DEFAULT_ECE_BINS, DEFAULT_T_BOUNDS, DEFAULT_T_TOLERANCE,
};
use crate::consistency::{race_metrics, RaceConfig, RaceReport};
use crate::error::Error;
use crate::grounding::{
    check_claims, load_fact_store, ClaimVerdict, FactStore, Tolerance, VerdictStatus,
};
use crate::mitigation::{
    chunk_document, snapping_tolerance, summarize_map_reduce, Chunk, MapReduceSummary,
    DEFAULT_OVERLAP,
};
use crate::mockgen::{generate, MockSpec};
use crate::pipeline::{
    default_rules, detect, load_rules, run_cycle, DetectionSignals, PipelineConfig, RouterRule,
    SignalId,
};
use crate::records::{parse_records, records_to_string, GenerationRecord};
use crate::semantic::{HashingEmbedder, DEFAULT_CLUSTER_THRESHOLD, DEFAULT_EMBED_DIM};
use crate::uncertainty::parse_self_declared_confidence;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Md,
}

#[derive(Debug, Parser)]
#[command(
    name = "halluguard",
    version,
    about = "Hallucination detection, calibration and routing over generation logs"
)]
pub struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Input file (JSONL corpus, or plain text for `chunk`).
    #[arg(long, short, global = true)]
    input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// RunConfig JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CalibrationKind {
    Temperature,
    Isotonic,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-record detection signals and corpus aggregates.
    Analyze {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Fit a calibration map from ground-truth labelled records.
    Calibrate {
        #[arg(long, value_enum)]
        kind: CalibrationKind,
    },
    /// Reasoning/answer consistency reports.
    Race,
    /// Check reference claims against a fact store.
    Factcheck {
        #[arg(long)]
        store: PathBuf,
    },
    /// Run the detect/route/validate cycle and write a ledger.
    Pipeline {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Also write the markdown summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Ledger timestamp; current UTC time when omitted.
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Generate a synthetic labelled corpus and its fact store.
    Mockgen {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        store_out: Option<PathBuf>,
    },
    /// Split a text document into overlapping chunks.
    Chunk {
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: f64,
        /// Fan-in for an identity map-reduce over the chunks.
        #[arg(long)]
        fan_in: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub bounds: (f64, f64),
    pub tolerance: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            bounds: DEFAULT_T_BOUNDS,
            tolerance: DEFAULT_T_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cluster_threshold: f64,
    pub embed_dim: usize,
    pub ece_bins: usize,
    pub calibration: CalibrationSettings,
    pub rules_path: Option<PathBuf>,
    pub fact_tolerance: Tolerance,
    pub race: RaceConfig,
    pub min_delta: f64,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            embed_dim: DEFAULT_EMBED_DIM,
            ece_bins: DEFAULT_ECE_BINS,
            calibration: CalibrationSettings::default(),
            rules_path: None,
            fact_tolerance: Tolerance::default(),
            race: RaceConfig::default(),
            min_delta: p.min_delta,
            format: Format::Json,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        if let Some(rules) = &cfg.rules_path {
            if rules.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.rules_path = Some(dir.join(rules));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Usage(format!("config: {m}")));
        if !(0.0..=2.0).contains(&self.cluster_threshold) {
            return bad("cluster_threshold must be in [0, 2]");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if self.ece_bins == 0 {
            return bad("ece_bins must be positive");
        }
        let (lo, hi) = self.calibration.bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) || !(self.calibration.tolerance > 0.0) {
            return bad("calibration bounds must satisfy 0 < lo < hi and tolerance > 0");
        }
        if !(self.fact_tolerance.rel_tol >= 0.0 && self.fact_tolerance.abs_tol >= 0.0) {
            return bad("fact tolerances must be non-negative");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        if let Some(p) = &self.rules_path {
            if !p.is_file() {
                return bad(&format!("rules file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            cluster_threshold: self.cluster_threshold,
            embed_dim: self.embed_dim,
            race: self.race,
            tolerance: self.fact_tolerance,
            min_delta: self.min_delta,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let common = cli.common;
    let config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let format = common.format.unwrap_or(config.format);
    let ctx = Context {
        config,
        format,
        input: common.input,
        output: common.output,
    };

    match cli.command {
        Command::Analyze { store } => ctx.analyze(store.as_deref()),
        Command::Calibrate { kind } => ctx.calibrate(kind),
        Command::Race => ctx.race(),
        Command::Factcheck { store } => ctx.factcheck(&store),
        Command::Pipeline {
            rules,
            store,
            summary,
            timestamp,
        } => ctx.pipeline(
            rules.as_deref(),
            store.as_deref(),
            summary.as_deref(),
            timestamp,
        ),
        Command::Mockgen {
            spec,
            out,
            store_out,
        } => ctx.mockgen(
            spec.as_deref(),
            out.or(ctx.output.clone()),
            store_out,
            common.seed,
        ),
        Command::Chunk {
            target,
            overlap,
            fan_in,
        } => ctx.chunk(target, overlap, fan_in),
    }
}

struct Context {
    config: RunConfig,
    format: Format,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
}

fn write_to(path: Option<&Path>, content: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Usage(format!("cannot write stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_store(path: &Path) -> CliResult<FactStore> {
    Ok(load_fact_store(BufReader::new(open(path)?))?)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub n_records: usize,
    pub records: Vec<DetectionSignals>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_h_p: Option<f64>,
    pub mean_h_s: Option<f64>,
    pub mean_consensus_support: Option<f64>,
    pub mean_self_confidence: Option<f64>,
    pub race_flags: usize,
    pub fact_mismatches: usize,
    /// ECE of self-confidence against ground-truth correctness.
    pub self_confidence_ece: Option<f64>,
}

/// (score, correct) pairs from sample 0's self-confidence and the label.
fn confidence_pairs(records: &[GenerationRecord]) -> Vec<(f64, bool)> {
    records
        .iter()
        .filter_map(|r| {
            let s = r.samples.first()?;
            let score = s
                .self_confidence
                .or_else(|| parse_self_declared_confidence(&s.text))?;
            let gt = r.ground_truth.as_ref()?;
            let correct = match &gt.correct_answer {
                Some(ans) => s.answer_or_text().trim() == ans.trim(),
                None => !gt.is_hallucinated,
            };
            Some((score, correct))
        })
        .collect()
}

/// (logits, label) pairs from sample 0's first token distribution.
fn logit_pairs(records: &[GenerationRecord]) -> (Vec<Vec<f64>>, Vec<usize>) {
    records
        .iter()
        .filter_map(|r| {
            let dist = r.samples.first()?.token_dists.as_ref()?.first()?;
            let ans = r.ground_truth.as_ref()?.correct_answer.as_ref()?;
            let label = dist.token_labels.iter().position(|l| l == ans)?;
            let logits = dist.probs.iter().map(|p| p.max(1e-300).ln()).collect();
            Some((logits, label))
        })
        .unzip()
}

impl Context {
    fn records(&self) -> CliResult<Vec<GenerationRecord>> {
        let path = self
            .input
            .as_deref()
            .ok_or_else(|| CliError::Usage("--input is required".into()))?;
        let records = parse_records(BufReader::new(open(path)?))?;
        if records.is_empty() {
            return Err(CliError::Data(format!("no records in {}", path.display())));
        }
        Ok(records)
    }

    fn emit(&self, json: String, markdown: impl FnOnce() -> String) -> CliResult<()> {
        let content = match self.format {
            Format::Json => json,
            Format::Md => markdown(),
        };
        write_to(self.output.as_deref(), &content)
    }

    fn analyze(&self, store: Option<&Path>) -> CliResult<()> {
        let records = self.records()?;
        let store = store.map(read_store).transpose()?;
        let cfg = self.config.pipeline();
        let signals: Vec<DetectionSignals> = records
            .par_iter()
            .map(|r| detect(r, &cfg, store.as_ref()))
            .collect();
        let pairs = confidence_pairs(&records);
        let ece = if pairs.is_empty() {
            None
        } else {
            Some(compute_ece(&pairs, self.config.ece_bins)?.ece)
        };
        let aggregates = Aggregates {
            mean_h_p: mean(signals.iter().filter_map(|s| s.h_p_mean)),
            mean_h_s: mean(signals.iter().filter_map(|s| s.h_s)),
            mean_consensus_support: mean(signals.iter().filter_map(|s| s.consensus_support)),
            mean_self_confidence: mean(signals.iter().filter_map(|s| s.self_confidence)),
            race_flags: signals
                .iter()
                .filter(|s| s.value(&SignalId::RaceFlag) == Some(1.0))
                .count(),
            fact_mismatches: signals
                .iter()
                .filter_map(|s| s.value(&SignalId::FactMismatchCount))
                .sum::<f64>() as usize,
            self_confidence_ece: ece,
        };
        let report = AnalyzeReport {
            n_records: records.len(),
            records: signals,
            aggregates,
        };
        self.emit(to_json(&report)?, || analyze_markdown(&report))
    }

    fn calibrate(&self, kind: CalibrationKind) -> CliResult<()> {
        let records = self.records()?;
        let map = match kind {
            CalibrationKind::Temperature => {
                let (logits, labels) = logit_pairs(&records);
                let fit_cfg = TemperatureFitConfig {
                    bounds: self.config.calibration.bounds,
                    tolerance: self.config.calibration.tolerance,
                };
                let model = fit_temperature_with(&logits, &labels, fit_cfg)?;
                eprintln!(
                    "temperature T = {:.6}, NLL = {:.6} over {} examples",
                    model.temperature, model.fit_nll, model.n_fit
                );
                CalibrationMap::Temperature(model)
            }
            CalibrationKind::Isotonic => {
                let pairs = confidence_pairs(&records);
                let model = fit_isotonic(&pairs)?;
                eprintln!(
                    "isotonic fit: {} steps, SSE = {:.6} over {} pairs",
                    model.breakpoints.len(),
                    model.sse(&pairs),
                    pairs.len()
                );
                CalibrationMap::Isotonic(model)
            }
        };
        let mut json = map.to_json()?;
        json.push('\n');
        write_to(self.output.as_deref(), &json)
    }

    fn race(&self) -> CliResult<()> {
        #[derive(Serialize)]
        struct Row {
            record_id: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            report: Option<RaceReport>,
            #[serde(skip_serializing_if = "Option::is_none")]
            error: Option<String>,
        }
        let records = self.records()?;
        let embedder = HashingEmbedder {
            dim: self.config.embed_dim,
        };
        let race_cfg = self.config.pipeline().race;
        let rows: Vec<Row> = records
            .par_iter()
            .map(|r| match race_metrics(r, &embedder, &race_cfg) {
                Ok(rep) => Row {
                    record_id: r.id.clone(),
                    report: Some(rep),
                    error: None,
                },
                Err(e) => Row {
                    record_id: r.id.clone(),
                    report: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        self.emit(to_json(&rows)?, || {
            let mut md = String::from(
                "| Record | H_R | H_A | I | Support | Flag |\n|---|---|---|---|---|---|\n",
            );
            for row in &rows {
                match &row.report {
                    Some(r) => {
                        let _ = writeln!(
                            md,
                            "| {} | {:.4} | {:.4} | {:.4} | {:.2} | {} |",
                            row.record_id,
                            r.h_reasoning,
                            r.h_answer,
                            r.mutual_information,
                            r.answer_support,
                            r.flag_right_answer_wrong_reasoning
                        );
                    }
                    None => {
                        let _ = writeln!(md, "| {} | - | - | - | - | - |", row.record_id);
                    }
                }
            }
            md
        })
    }

    fn factcheck(&self, store: &Path) -> CliResult<()> {
        #[derive(Serialize)]
        struct Row {
            record_id: String,
            verdicts: Vec<ClaimVerdict>,
        }
        let records = self.records()?;
        let store = read_store(store)?;
        let rows = records
            .iter()
            .filter_map(|r| r.reference_claims.as_ref().map(|c| (r, c)))
            .map(|(r, c)| {
                Ok(Row {
                    record_id: r.id.clone(),
                    verdicts: check_claims(c, &store, self.config.fact_tolerance)?,
                })
            })
            .collect::<crate::Result<Vec<Row>>>()?;
        self.emit(to_json(&rows)?, || {
            let mut md = String::from(
                "| Record | Key | Claimed | Reference | Status |\n|---|---|---|---|---|\n",
            );
            for row in &rows {
                for v in &row.verdicts {
                    let reference = v
                        .reference
                        .as_ref()
                        .map(|r| r.to_string())
                        .unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} | {} | {:?} |",
                        row.record_id, v.key, v.claimed, reference, v.status
                    );
                }
            }
            let n = rows
                .iter()
                .flat_map(|r| &r.verdicts)
                .filter(|v| v.status == VerdictStatus::Mismatch)
                .count();
            let _ = writeln!(md, "\nMismatches: {n}");
            md
        })
    }

    fn pipeline(
        &self,
        rules_path: Option<&Path>,
        store: Option<&Path>,
        summary: Option<&Path>,
        timestamp: Option<String>,
    ) -> CliResult<()> {
        let mut rules: Vec<RouterRule> = match rules_path.or(self.config.rules_path.as_deref()) {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read rules {}: {e}", p.display()))
                })?;
                load_rules(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => default_rules(),
        };
        let records = self.records()?;
        let store = store.map(read_store).transpose()?;
        if store.is_none() {
            let data_rules: HashSet<String> = rules
                .iter()
                .filter(|r| r.signal == SignalId::FactMismatchCount)
                .map(|r| r.name.clone())
                .collect();
            if !data_rules.is_empty() {
                let mut names: Vec<_> = data_rules.iter().cloned().collect();
                names.sort();
                eprintln!(
                    "warning: no fact store given; skipping rules {}",
                    names.join(", ")
                );
                rules.retain(|r| !data_rules.contains(&r.name));
            }
        }
        let timestamp = timestamp.unwrap_or_else(|| {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        });
        let ledger = run_cycle(
            &records,
            &self.config.pipeline(),
            store.as_ref(),
            &rules,
            &timestamp,
        )?;
        let markdown = ledger.to_markdown();
        if let Some(p) = summary {
            write_to(Some(p), &markdown)?;
        }
        self.emit(to_json(&ledger)?, || markdown.clone())
    }

    fn mockgen(
        &self,
        spec_path: Option<&Path>,
        out: Option<PathBuf>,
        store_out: Option<PathBuf>,
        seed: Option<u64>,
    ) -> CliResult<()> {
        let mut spec: MockSpec = match spec_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read spec {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid spec {}: {e}", p.display())))?
            }
            None => MockSpec::default(),
        };
        if let Some(s) = seed {
            spec.seed = s;
        }
        let (records, store) = generate(&spec)?;
        write_to(out.as_deref(), &records_to_string(&records)?)?;
        if let Some(p) = store_out {
            let mut json = store.to_json()?;
            json.push('\n');
            write_to(Some(&p), &json)?;
        }
        Ok(())
    }

    fn chunk(&self, target: usize, overlap: f64, fan_in: Option<usize>) -> CliResult<()> {
        #[derive(Serialize)]
        struct ChunkReport {
            target_size: usize,
            overlap: f64,
            snapping_tolerance: f64,
            chunks: Vec<Chunk>,
            #[serde(skip_serializing_if = "Option::is_none")]
            summary: Option<MapReduceSummary>,
        }
        let path = self
            .input
            .as_deref()
            .ok_or_else(|| CliError::Usage("--input is required".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let chunks = chunk_document(&text, target, overlap)?;
        let summary = fan_in
            .map(|k| summarize_map_reduce(&chunks, |s: &str| Ok::<_, Error>(s.to_owned()), k))
            .transpose()?;
        let report = ChunkReport {
            target_size: target,
            overlap,
            snapping_tolerance: snapping_tolerance(target),
            chunks,
            summary,
        };
        self.emit(to_json(&report)?, || {
            let mut md = String::from("| # | Start | End | Chars |\n|---|---|---|---|\n");
            for c in &report.chunks {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} |",
                    c.index,
                    c.start_offset,
                    c.end_offset,
                    c.end_offset - c.start_offset
                );
            }
            md
        })
    }
}

fn analyze_markdown(report: &AnalyzeReport) -> String {
    let mut md = String::from("# Detection report\n\n");
    let a = &report.aggregates;
    let agg: BTreeMap<&str, String> = [
        ("records", report.n_records.to_string()),
        ("mean h_p", fmt_opt(a.mean_h_p)),
        ("mean h_s", fmt_opt(a.mean_h_s)),
        ("mean consensus support", fmt_opt(a.mean_consensus_support)),
        ("mean self-confidence", fmt_opt(a.mean_self_confidence)),
        ("race flags", a.race_flags.to_string()),
        ("fact mismatches", a.fact_mismatches.to_string()),
        ("self-confidence ECE", fmt_opt(a.self_confidence_ece)),
    ]
    .into_iter()
    .collect();
    md.push_str("| Aggregate | Value |\n|---|---|\n");
    for (k, v) in agg {
        let _ = writeln!(md, "| {k} | {v} |");
    }
    md.push_str("\n| Record | h_p | h_s | Support | Self-conf. | RACE flag | Mismatches |\n|---|---|---|---|---|---|---|\n");
    for s in &report.records {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} |",
            s.record_id,
            fmt_opt(s.h_p_mean),
            fmt_opt(s.h_s),
            fmt_opt(s.consensus_support),
            fmt_opt(s.self_confidence),
            s.value(&SignalId::RaceFlag)
                .map(|f| (f == 1.0).to_string())
                .unwrap_or_else(|| "-".into()),
            s.value(&SignalId::FactMismatchCount)
                .map(|n| n.to_string())
                .unwrap_or_else(|| "-".into()),
        );
    }
    md
}
