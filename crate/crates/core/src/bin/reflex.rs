use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reflex::evaluation::{adapt_relation_classification, ClassificationExample};
use reflex::pipeline::{
    self, BackendConfig, DatasetRecord, ExpansionSetting, LambdaSetting, PipelineError, RunConfig, Settings,
};
use reflex::provider::BACKEND_URL_ENV;

#[derive(Parser)]
#[command(name = "reflex", version, about = "Unsupervised relation extraction with a masked language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract relation objects for every pair in a dataset.
    Run(RunArgs),
    /// Convert relation-classification JSONL into dataset JSONL.
    Adapt(AdaptArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpansionArg {
    Never,
    Always,
    Tune,
}

#[derive(Args)]
struct RunArgs {
    /// Tab-separated relation templates.
    #[arg(long)]
    templates: PathBuf,
    /// Dataset JSONL to extract from.
    #[arg(long)]
    dataset: PathBuf,
    /// Labelled development JSONL, required for tuning.
    #[arg(long)]
    dev_dataset: Option<PathBuf>,
    /// Word vectors in text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Reference backend fixture (JSON).
    #[arg(long, conflicts_with = "backend_url", required_unless_present = "backend_url")]
    fixture: Option<PathBuf>,
    /// Base URL of a model server.
    #[arg(long, env = BACKEND_URL_ENV)]
    backend_url: Option<String>,
    #[arg(long, default_value_t = reflex::anchor::DEFAULT_TOP_K)]
    k: usize,
    /// A non-negative number, or `tune`.
    #[arg(long, default_value = "1", value_parser = parse_lambda)]
    lambda: LambdaSetting,
    #[arg(long, value_enum, default_value = "never")]
    expansion: ExpansionArg,
    /// Skip context rejection; every pair goes to anchor inference.
    #[arg(long)]
    no_rejection: bool,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    /// Write per-query proposals and compatibility scores.
    #[arg(long)]
    dump_diagnostics: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct AdaptArgs {
    /// Input JSONL of {subject, relation, object: [start, end], context}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "no_relation")]
    no_relation_label: String,
}

fn parse_lambda(s: &str) -> Result<LambdaSetting, String> {
    if s.eq_ignore_ascii_case("tune") {
        return Ok(LambdaSetting::Tune);
    }
    let v: f64 = s.parse().map_err(|_| format!("expected a number or `tune`, got {s:?}"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("lambda must be non-negative, got {v}"));
    }
    Ok(LambdaSetting::Fixed(v))
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        // the env var only fills --backend-url, so a fixture on the command
        // line wins unless the URL is also set
        let backend = match (self.fixture, self.backend_url) {
            (_, Some(url)) => BackendConfig::Remote(url),
            (Some(path), None) => BackendConfig::Reference(path),
            (None, None) => unreachable!("clap enforces a backend"),
        };
        RunConfig {
            templates_path: self.templates,
            dataset_path: self.dataset,
            dev_dataset_path: self.dev_dataset,
            embeddings_path: self.embeddings,
            backend,
            settings: Settings {
                k: self.k,
                lambda: self.lambda,
                expansion: match self.expansion {
                    ExpansionArg::Never => ExpansionSetting::Never,
                    ExpansionArg::Always => ExpansionSetting::Always,
                    ExpansionArg::Tune => ExpansionSetting::Tune,
                },
                rejection_enabled: !self.no_rejection,
                workers: self.workers,
            },
            output_dir: self.output_dir,
            dump_diagnostics: self.dump_diagnostics,
            write_csv: self.csv,
        }
    }
}

fn adapt(args: AdaptArgs) -> Result<(), PipelineError> {
    let data_err = |e: &dyn std::fmt::Display| PipelineError::data(format!("{}: {e}", args.input.display()));
    let file = File::open(&args.input).map_err(|e| data_err(&e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| data_err(&e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: ClassificationExample =
            serde_json::from_str(&line).map_err(|e| data_err(&format!("line {}: {e}", i + 1)))?;
        examples.push(ex);
    }
    let adapted = adapt_relation_classification(&examples, &args.no_relation_label).map_err(|e| data_err(&e))?;
    let out_err = |e: std::io::Error| PipelineError::data(format!("{}: {e}", args.output.display()));
    let mut out = BufWriter::new(File::create(&args.output).map_err(out_err)?);
    for pair in &adapted.pairs {
        let line = serde_json::to_string(&DatasetRecord::from_pair(pair)).expect("serializable record");
        writeln!(out, "{line}").map_err(out_err)?;
    }
    out.flush().map_err(out_err)?;
    eprintln!(
        "wrote {} pairs to {} ({} dropped)",
        adapted.pairs.len(),
        args.output.display(),
        adapted.dropped
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => pipeline::run(&args.into_config()).map(|outputs| {
            if let Some(report) = outputs.report {
                print!("{}", report.to_table());
            }
            eprintln!("extractions written to {}", outputs.extractions.display());
        }),
        Command::Adapt(args) => adapt(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
