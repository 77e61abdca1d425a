//! Corpus ingestion, training-example assembly and dataset statistics.
//!
//! Input and output are JSON Lines, UTF-8, one record per line. Given the
//! same corpus bytes and config, `write_dataset` output is byte-identical
//! across runs and worker counts.

use crate::dropout::{apply_prompt_dropout, decide, DropoutConfig};
use crate::markup::serialize_marker_list;
use crate::taxonomy::{spec_of, Category, MarkerList, ALL_CATEGORIES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One corpus row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub prompt: String,
    pub completion: String,
    #[serde(default = "unspecified")]
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

fn unspecified() -> String {
    "Unspecified".to_string()
}

/// One assembled training example. The target always carries the full gold
/// marker block; only the prompt side is subject to dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_text: String,
    pub target_text: String,
    pub gold_markers: MarkerList,
    pub prompt_markers: MarkerList,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub records: Vec<SampleRecord>,
    /// Malformed lines, with 1-based line numbers; loading continues past them.
    pub errors: Vec<LoadWarning>,
    pub warnings: Vec<LoadWarning>,
}

/// Load a JSON Lines corpus. Malformed lines are reported, not fatal;
/// records missing a language default to `Unspecified` with a warning.
pub fn load_samples(path: &Path) -> Result<LoadReport, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut report = LoadReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let had_language = line.contains("\"language\"");
        match serde_json::from_str::<SampleRecord>(&line) {
            Ok(record) => {
                if record.prompt.is_empty() || record.completion.is_empty() {
                    report.errors.push(LoadWarning {
                        line: line_no,
                        detail: "prompt and completion must be nonempty".to_string(),
                    });
                    continue;
                }
                if !had_language {
                    report.warnings.push(LoadWarning {
                        line: line_no,
                        detail: format!("record `{}` missing language; using Unspecified", record.id),
                    });
                }
                report.records.push(record);
            }
            Err(e) => report.errors.push(LoadWarning {
                line: line_no,
                detail: e.to_string(),
            }),
        }
    }
    if report.records.is_empty() && report.errors.is_empty() {
        report.warnings.push(LoadWarning {
            line: 0,
            detail: "input file is empty".to_string(),
        });
    }
    Ok(report)
}

/// Assemble one training example: markers go after the prompt (post
/// dropout) and before the completion (always the full gold list).
pub fn build_training_example(
    record: &SampleRecord,
    gold: &MarkerList,
    cfg: &DropoutConfig,
) -> TrainingExample {
    let decision = decide(&record.id, gold, cfg);
    let prompt_markers = apply_prompt_dropout(gold, &decision);
    let input_text = if prompt_markers.is_empty() {
        record.prompt.clone()
    } else {
        format!("{}\n{}", record.prompt, serialize_marker_list(&prompt_markers))
    };
    let target_text = format!("{}\n{}", serialize_marker_list(gold), record.completion);
    TrainingExample {
        input_text,
        target_text,
        gold_markers: gold.clone(),
        prompt_markers,
    }
}

/// Write examples as JSON Lines with a trailing newline. Returns the count.
pub fn write_dataset<W: Write>(examples: &[TrainingExample], mut out: W) -> std::io::Result<usize> {
    for example in examples {
        serde_json::to_writer(&mut out, example)?;
        out.write_all(b"\n")?;
    }
    Ok(examples.len())
}

pub fn write_dataset_file(examples: &[TrainingExample], path: &Path) -> Result<usize, DatasetError> {
    let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = std::io::BufWriter::new(file);
    let count = write_dataset(examples, &mut writer).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    writer.flush().map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(count)
}

/// Per-category value histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub category: String,
    pub total: u64,
    /// value -> (count, percentage of total)
    pub values: BTreeMap<String, (u64, f64)>,
    /// Values whose share is at or below the long-tail threshold.
    pub long_tail: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionReport {
    pub record_count: u64,
    pub categories: Vec<CategoryDistribution>,
}

pub const DEFAULT_LONG_TAIL_THRESHOLD: f64 = 0.05;

/// Histogram every taxonomy category present in the lists, flagging values
/// whose share is <= `long_tail_threshold`.
pub fn dataset_stats<'a, I>(marker_lists: I, long_tail_threshold: f64) -> DistributionReport
where
    I: IntoIterator<Item = &'a MarkerList>,
{
    let mut counts: BTreeMap<Category, BTreeMap<String, u64>> = BTreeMap::new();
    let mut record_count = 0u64;
    for list in marker_lists {
        record_count += 1;
        for marker in list.iter() {
            *counts
                .entry(marker.category)
                .or_default()
                .entry(marker.value.render())
                .or_insert(0) += 1;
        }
    }
    let mut categories = Vec::new();
    for category in ALL_CATEGORIES {
        let Some(values) = counts.get(&category) else {
            continue;
        };
        let total: u64 = values.values().sum();
        let with_share: BTreeMap<String, (u64, f64)> = values
            .iter()
            .map(|(v, &c)| (v.clone(), (c, 100.0 * c as f64 / total as f64)))
            .collect();
        let long_tail = with_share
            .iter()
            .filter(|(_, (count, _))| (*count as f64 / total as f64) <= long_tail_threshold)
            .map(|(v, _)| v.clone())
            .collect();
        categories.push(CategoryDistribution {
            category: spec_of(category).tag_name().to_string(),
            total,
            values: with_share,
            long_tail,
        });
    }
    DistributionReport {
        record_count,
        categories,
    }
}
