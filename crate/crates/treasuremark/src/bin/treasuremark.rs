//! Command-line pipeline: corpus tagging, quartile tables, dataset
//! assembly, inference-side prompt editing and metric evaluation.
//! Diagnostics go to standard error; data goes to files or standard
//! output. Exit codes: 0 success, 1 partial failures, 2 fatal errors.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use treasuremark::annotate::{
    annotate_deterministic, annotate_with_llm, build_quartile_table, QuartileTable,
};
use treasuremark::config::PipelineConfig;
use treasuremark::dataset::{
    build_training_example, dataset_stats, load_samples, write_dataset_file, SampleRecord,
};
use treasuremark::evalsuite::{
    line_pass_rate, marker_accuracy, nonempty_lines, violation_rate, win_rate, EvalRecord,
};
use treasuremark::inference::{annotate_on_the_fly, inject_fixed, rewrite_length_instructed, strip_output};
use treasuremark::llmclient::Client;
use treasuremark::taxonomy::{validate_marker, Category, MarkerList};

#[derive(Parser)]
#[command(name = "treasuremark", version, about = "Training-time marker pipeline")]
struct Cli {
    /// Pipeline config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for record-parallel steps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct IoArgs {
    /// Input JSON Lines file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file (default: standard output).
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a corpus with gold markers (deterministic, plus LLM tagging with --llm).
    Tag {
        #[command(flatten)]
        io: IoArgs,
        /// Quartile table for quality markers.
        #[arg(long)]
        quartiles: Option<PathBuf>,
        /// Also tag domain/task/format via the annotator endpoint.
        #[arg(long)]
        llm: bool,
    },
    /// Build a per-language quartile table from scored samples.
    Quartiles {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Assemble marker-annotated training examples with dropout.
    Build {
        #[command(flatten)]
        io: IoArgs,
        /// Dropout seed; overrides the config seed. Required if the config
        /// has none.
        #[arg(long)]
        seed: Option<u64>,
        /// Dropout preset (0_50, 50_50, 70_50), overriding config rates.
        #[arg(long)]
        dropout: Option<String>,
        #[arg(long)]
        quartiles: Option<PathBuf>,
    },
    /// Report marker distributions over a corpus.
    Stats {
        #[command(flatten)]
        io: IoArgs,
        /// Long-tail share threshold (fraction).
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        quartiles: Option<PathBuf>,
    },
    /// Append fixed markers to prompts.
    Inject {
        #[command(flatten)]
        io: IoArgs,
        /// Marker as tag=value; repeatable.
        #[arg(long = "marker", required = true)]
        markers: Vec<String>,
    },
    /// Rewrite leading length instructions into length markers.
    RewriteLi {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Annotate prompts on the fly via the annotator endpoint.
    AnnotateFly {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Strip leading marker blocks from raw model outputs.
    Strip {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Compute a controllability metric over evaluation records.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = ["violation", "lpr", "marker-acc", "winrate"])]
        metric: String,
        /// Categories for marker-acc (default: domain,task,format,language).
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptRecord {
    id: String,
    prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    markers: Option<MarkerList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matched: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawOutputRecord {
    id: String,
    raw_output: String,
}

#[derive(Debug, Serialize)]
struct StrippedRecord {
    id: String,
    visible_completion: String,
    inferred_markers: MarkerList,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaggedRecord {
    #[serde(flatten)]
    record: SampleRecord,
    gold_markers: MarkerList,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(partial_failures) => {
            if partial_failures {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Ok(true) means some records errored (exit 1).
fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Tag { io, quartiles, llm } => cmd_tag(&config, &io, quartiles.as_deref(), llm),
        Command::Quartiles { io } => cmd_quartiles(&io),
        Command::Build {
            io,
            seed,
            dropout,
            quartiles,
        } => cmd_build(&config, &io, seed, dropout.as_deref(), quartiles.as_deref(), cli.jobs),
        Command::Stats {
            io,
            threshold,
            quartiles,
        } => cmd_stats(&config, &io, threshold, quartiles.as_deref()),
        Command::Inject { io, markers } => cmd_inject(&io, &markers),
        Command::RewriteLi { io } => cmd_rewrite_li(&io),
        Command::AnnotateFly { io } => cmd_annotate_fly(&config, &io),
        Command::Strip { io } => cmd_strip(&io),
        Command::Eval {
            input,
            metric,
            categories,
        } => cmd_eval(&input, &metric, &categories),
    }
}

fn out_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(path) => Box::new(BufWriter::new(
            std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<T>, usize)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut records = Vec::new();
    let mut errors = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(record) => records.push(record),
            Err(e) => {
                eprintln!("warning: {}:{}: {e}", path.display(), idx + 1);
                errors += 1;
            }
        }
    }
    Ok((records, errors))
}

fn write_jsonl<T: Serialize>(records: &[T], path: Option<&Path>) -> Result<()> {
    let mut out = out_writer(path)?;
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn load_quartiles(path: &Path) -> Result<QuartileTable> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read quartile table {}", path.display()))?;
    serde_json::from_str(&text).context("invalid quartile table")
}

fn resolve_quartiles(
    config: &PipelineConfig,
    flag: Option<&Path>,
) -> Result<Option<QuartileTable>> {
    let path = flag.or(config.io.quartile_table.as_deref());
    path.map(load_quartiles).transpose()
}

fn annotator_client(config: &PipelineConfig) -> Result<Client> {
    let endpoint = config
        .annotator
        .clone()
        .ok_or_else(|| anyhow!("config has no `annotator` endpoint section"))?;
    Client::new(endpoint).map_err(Into::into)
}

fn load_corpus(path: &Path) -> Result<(Vec<SampleRecord>, bool)> {
    let report = load_samples(path)?;
    for warning in &report.warnings {
        eprintln!("warning: {}:{}: {}", path.display(), warning.line, warning.detail);
    }
    for error in &report.errors {
        eprintln!("error: {}:{}: {}", path.display(), error.line, error.detail);
    }
    Ok((report.records, !report.errors.is_empty()))
}

fn cmd_tag(
    config: &PipelineConfig,
    io: &IoArgs,
    quartiles: Option<&Path>,
    llm: bool,
) -> Result<bool> {
    let (records, mut partial) = load_corpus(&io.input)?;
    let table = resolve_quartiles(config, quartiles)?;
    let client = if llm { Some(annotator_client(config)?) } else { None };
    let llm_categories: Vec<Category> = config
        .annotate
        .llm_categories
        .iter()
        .filter_map(|t| Category::from_tag(t))
        .collect();
    let mut tagged = Vec::with_capacity(records.len());
    for record in records {
        let mut gold = annotate_deterministic(&record, table.as_ref());
        if let Some(client) = &client {
            let missing: Vec<Category> = llm_categories
                .iter()
                .copied()
                .filter(|c| !gold.contains(*c))
                .collect();
            if !missing.is_empty() {
                match annotate_with_llm(&record.prompt, &missing, client) {
                    Ok((markers, warnings)) => {
                        for m in markers.iter() {
                            gold.insert(m);
                        }
                        for w in warnings {
                            eprintln!("warning: record `{}` {}: {}", record.id, w.category, w.detail);
                        }
                    }
                    Err(e) => {
                        eprintln!("error: record `{}`: {e}", record.id);
                        partial = true;
                    }
                }
            }
        }
        tagged.push(TaggedRecord {
            record,
            gold_markers: gold,
        });
    }
    write_jsonl(&tagged, io.output.as_deref())?;
    Ok(partial)
}

fn cmd_quartiles(io: &IoArgs) -> Result<bool> {
    let (records, partial) = load_corpus(&io.input)?;
    let table = build_quartile_table(
        records
            .iter()
            .filter_map(|r| r.quality_score.map(|s| (r.language.as_str(), s))),
    );
    let mut out = out_writer(io.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &table)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(partial)
}

fn cmd_build(
    config: &PipelineConfig,
    io: &IoArgs,
    seed: Option<u64>,
    preset: Option<&str>,
    quartiles: Option<&Path>,
    jobs: usize,
) -> Result<bool> {
    use rayon::prelude::*;
    let mut cfg = config.dropout_config(seed)?;
    if let Some(preset) = preset {
        cfg = treasuremark::dropout::DropoutConfig::preset(preset, cfg.seed)?;
    }
    let (records, partial) = load_corpus(&io.input)?;
    let table = resolve_quartiles(config, quartiles)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("cannot build worker pool")?;
    let examples = pool.install(|| {
        records
            .par_iter()
            .map(|record| {
                let gold = annotate_deterministic(record, table.as_ref());
                if gold.is_empty() {
                    eprintln!("warning: record `{}` has no derivable markers", record.id);
                }
                build_training_example(record, &gold, &cfg)
            })
            .collect::<Vec<_>>()
    });
    let output = io
        .output
        .as_deref()
        .ok_or_else(|| anyhow!("`build` requires --out"))?;
    let count = write_dataset_file(&examples, output)?;
    eprintln!("wrote {count} examples to {}", output.display());
    Ok(partial)
}

fn cmd_stats(
    config: &PipelineConfig,
    io: &IoArgs,
    threshold: Option<f64>,
    quartiles: Option<&Path>,
) -> Result<bool> {
    let (records, partial) = load_corpus(&io.input)?;
    let table = resolve_quartiles(config, quartiles)?;
    let lists: Vec<MarkerList> = records
        .iter()
        .map(|r| annotate_deterministic(r, table.as_ref()))
        .collect();
    let report = dataset_stats(&lists, threshold.unwrap_or(config.annotate.long_tail_threshold));
    let mut out = out_writer(io.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(partial)
}

fn parse_marker_flags(flags: &[String]) -> Result<MarkerList> {
    let mut markers = MarkerList::new();
    for flag in flags {
        let (tag, value) = flag
            .split_once('=')
            .ok_or_else(|| anyhow!("--marker expects tag=value, got `{flag}`"))?;
        let marker = validate_marker(tag, value).map_err(|e| anyhow!("--marker {flag}: {e}"))?;
        markers.insert(marker);
    }
    if markers.is_empty() {
        return Err(anyhow!("at least one --marker is required"));
    }
    Ok(markers)
}

fn cmd_inject(io: &IoArgs, marker_flags: &[String]) -> Result<bool> {
    let markers = parse_marker_flags(marker_flags)?;
    let (records, errors) = read_jsonl::<PromptRecord>(&io.input)?;
    let out: Vec<PromptRecord> = records
        .into_iter()
        .map(|r| PromptRecord {
            prompt: inject_fixed(&r.prompt, &markers),
            markers: Some(markers.clone()),
            ..r
        })
        .collect();
    write_jsonl(&out, io.output.as_deref())?;
    Ok(errors > 0)
}

fn cmd_rewrite_li(io: &IoArgs) -> Result<bool> {
    let (records, errors) = read_jsonl::<PromptRecord>(&io.input)?;
    let out: Vec<PromptRecord> = records
        .into_iter()
        .map(|r| match rewrite_length_instructed(&r.prompt) {
            Some(rewrite) => PromptRecord {
                prompt: inject_fixed(&rewrite.stripped_prompt, &rewrite.markers),
                markers: Some(rewrite.markers),
                matched: Some(true),
                ..r
            },
            None => PromptRecord {
                matched: Some(false),
                ..r
            },
        })
        .collect();
    write_jsonl(&out, io.output.as_deref())?;
    Ok(errors > 0)
}

fn cmd_annotate_fly(config: &PipelineConfig, io: &IoArgs) -> Result<bool> {
    let client = annotator_client(config)?;
    let (records, errors) = read_jsonl::<PromptRecord>(&io.input)?;
    let mut partial = errors > 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match annotate_on_the_fly(&r.prompt, &client) {
            Ok(outcome) => {
                if let Some(warning) = &outcome.warning {
                    eprintln!("warning: record `{}`: {warning}", r.id);
                }
                out.push(PromptRecord {
                    prompt: outcome.annotated_prompt,
                    markers: Some(outcome.markers),
                    warning: outcome.warning,
                    ..r
                });
            }
            Err(e) => {
                eprintln!("error: record `{}`: {e}", r.id);
                partial = true;
                out.push(r);
            }
        }
    }
    write_jsonl(&out, io.output.as_deref())?;
    Ok(partial)
}

fn cmd_strip(io: &IoArgs) -> Result<bool> {
    let (records, errors) = read_jsonl::<RawOutputRecord>(&io.input)?;
    let out: Vec<StrippedRecord> = records
        .into_iter()
        .map(|r| {
            let outcome = strip_output(&r.raw_output);
            StrippedRecord {
                id: r.id,
                visible_completion: outcome.visible_completion,
                inferred_markers: outcome.inferred_markers,
            }
        })
        .collect();
    write_jsonl(&out, io.output.as_deref())?;
    Ok(errors > 0)
}

/// Fixture-oracle language identification: look lines up in the mapping
/// built from the records' per-line gold languages.
fn fixture_language_id(records: &[EvalRecord]) -> impl Fn(&str) -> String {
    let mut map = HashMap::new();
    for record in records {
        if let Some(languages) = &record.line_languages {
            for (line, language) in
                nonempty_lines(&record.generation.visible_completion).zip(languages)
            {
                map.insert(line.to_string(), language.clone());
            }
        }
    }
    move |line: &str| map.get(line.trim()).cloned().unwrap_or_default()
}

fn cmd_eval(input: &Path, metric: &str, categories: &[String]) -> Result<bool> {
    let (records, errors) = read_jsonl::<EvalRecord>(input)?;
    let report = match metric {
        "violation" => violation_rate(&records)?,
        "lpr" => {
            let id = fixture_language_id(&records);
            line_pass_rate(&records, &id)?
        }
        "marker-acc" => {
            let categories: Vec<Category> = if categories.is_empty() {
                vec![
                    Category::Domain,
                    Category::Task,
                    Category::Format,
                    Category::Language,
                ]
            } else {
                categories
                    .iter()
                    .map(|t| {
                        Category::from_tag(t).ok_or_else(|| anyhow!("unknown category `{t}`"))
                    })
                    .collect::<Result<_>>()?
            };
            marker_accuracy(&records, &categories)?
        }
        "winrate" => win_rate(&records)?,
        other => return Err(anyhow!("unknown metric `{other}`")),
    };
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &report)?;
    stdout.write_all(b"\n")?;
    stdout.write_all(report.render_text().as_bytes())?;
    stdout.flush()?;
    Ok(errors > 0)
}
