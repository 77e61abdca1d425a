//! Controllability metrics over generation result files: length-violation
//! rate, line-level language pass rate, marker-prediction accuracy and
//! pairwise win rate.

use crate::annotate::{count_sentences, count_tokens};
use crate::llmclient::{Client, ClientError, CompletionRequest};
use crate::taxonomy::{Category, MarkerList};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Tokens,
    Sentences,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthConstraint {
    pub kind: ConstraintKind,
    pub limit: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Loss,
    Tie,
}

/// Serialized form of a generation under evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalGeneration {
    pub visible_completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inferred_markers: Option<MarkerList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<LengthConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_markers: Option<MarkerList>,
    #[serde(default)]
    pub generation: EvalGeneration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_verdict: Option<Verdict>,
    /// Per-line gold languages for the visible completion's nonempty lines,
    /// used by fixture-oracle language identification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_languages: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceStat {
    pub value: f64,
    pub numerator: u64,
    pub denominator: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    /// Percentage, 100 * numerator / denominator.
    pub value: f64,
    pub numerator: u64,
    pub denominator: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_slice: BTreeMap<String, SliceStat>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    fn new(metric: &str, numerator: u64, denominator: u64) -> Self {
        Self {
            metric: metric.to_string(),
            value: 100.0 * numerator as f64 / denominator as f64,
            numerator,
            denominator,
            per_slice: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Aligned plain-text rendering for standard output.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{:<24} {:>8.2}%  ({}/{})\n",
            self.metric, self.value, self.numerator, self.denominator
        );
        for (slice, stat) in &self.per_slice {
            out.push_str(&format!(
                "  {:<22} {:>8.2}%  ({}/{})\n",
                slice, stat.value, stat.numerator, stat.denominator
            ));
        }
        for note in &self.notes {
            out.push_str(&format!("  note: {note}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("record `{0}` is missing its length constraint")]
    MissingConstraint(String),
    #[error("record `{0}` is missing its target language")]
    MissingTargetLanguage(String),
}

/// Proportion of records whose visible completion strictly exceeds the
/// stated limit; completions exactly at the limit comply.
pub fn violation_rate(records: &[EvalRecord]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut violations = 0u64;
    for record in records {
        let constraint = record
            .constraint
            .ok_or_else(|| EvalError::MissingConstraint(record.id.clone()))?;
        let language = record.target_language.as_deref().unwrap_or("Unspecified");
        let measured = match constraint.kind {
            ConstraintKind::Tokens => count_tokens(&record.generation.visible_completion, language),
            ConstraintKind::Sentences => {
                count_sentences(&record.generation.visible_completion, language)
            }
        };
        if measured > constraint.limit {
            violations += 1;
        }
    }
    Ok(EvalReport::new(
        "violation_rate",
        violations,
        records.len() as u64,
    ))
}

/// Pluggable line-level language identification.
pub trait LanguageId: Sync {
    fn identify(&self, line: &str) -> String;
}

impl<F: Fn(&str) -> String + Sync> LanguageId for F {
    fn identify(&self, line: &str) -> String {
        self(line)
    }
}

pub fn nonempty_lines(text: &str) -> impl Iterator<Item = &str> {
    text.split('\n').map(str::trim).filter(|l| !l.is_empty())
}

/// A record passes iff every nonempty line is identified as the target
/// language. Empty generations fail.
pub fn line_pass_rate(
    records: &[EvalRecord],
    language_id: &dyn LanguageId,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut passes = 0u64;
    let mut slices: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for record in records {
        let target = record
            .target_language
            .as_deref()
            .ok_or_else(|| EvalError::MissingTargetLanguage(record.id.clone()))?;
        let mut lines = nonempty_lines(&record.generation.visible_completion).peekable();
        let passed =
            lines.peek().is_some() && lines.all(|line| language_id.identify(line) == target);
        let slice = slices.entry(target.to_string()).or_insert((0, 0));
        slice.1 += 1;
        if passed {
            passes += 1;
            slice.0 += 1;
        }
    }
    let mut report = EvalReport::new("line_pass_rate", passes, records.len() as u64);
    report.per_slice = slices
        .into_iter()
        .map(|(language, (num, den))| {
            (
                language,
                SliceStat {
                    value: 100.0 * num as f64 / den as f64,
                    numerator: num,
                    denominator: den,
                },
            )
        })
        .collect();
    Ok(report)
}

/// Per-category agreement between inferred and gold markers. A record
/// counts toward a category's denominator iff gold carries that category;
/// spurious predicted categories are reported as notes, not scored.
pub fn marker_accuracy(
    records: &[EvalRecord],
    categories: &[Category],
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let empty = MarkerList::new();
    let mut correct_total = 0u64;
    let mut counted_total = 0u64;
    let mut per_slice = BTreeMap::new();
    let mut spurious: BTreeMap<Category, u64> = BTreeMap::new();
    for &category in categories {
        let mut correct = 0u64;
        let mut counted = 0u64;
        for record in records {
            let gold = record.gold_markers.as_ref().unwrap_or(&empty);
            let predicted = record.generation.inferred_markers.as_ref().unwrap_or(&empty);
            match gold.get(category) {
                Some(gold_value) => {
                    counted += 1;
                    if predicted.get(category) == Some(gold_value) {
                        correct += 1;
                    }
                }
                None => {
                    if predicted.contains(category) {
                        *spurious.entry(category).or_insert(0) += 1;
                    }
                }
            }
        }
        correct_total += correct;
        counted_total += counted;
        if counted > 0 {
            per_slice.insert(
                category.tag_name().to_string(),
                SliceStat {
                    value: 100.0 * correct as f64 / counted as f64,
                    numerator: correct,
                    denominator: counted,
                },
            );
        }
    }
    let mut notes: Vec<String> = categories
        .iter()
        .filter(|c| !per_slice.contains_key(c.tag_name()))
        .map(|c| format!("category `{}` never present in gold markers", c.tag_name()))
        .collect();
    for (category, count) in &spurious {
        notes.push(format!(
            "category `{}` predicted without gold on {count} record(s)",
            category.tag_name()
        ));
    }
    if counted_total == 0 {
        return Err(EvalError::EmptyInput);
    }
    let mut report = EvalReport::new("marker_accuracy", correct_total, counted_total);
    report.per_slice = per_slice;
    report.notes = notes;
    Ok(report)
}

/// Wins over total judged records; ties count in the denominator only.
pub fn win_rate(records: &[EvalRecord]) -> Result<EvalReport, EvalError> {
    let verdicts: Vec<Verdict> = records.iter().filter_map(|r| r.judge_verdict).collect();
    if verdicts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let wins = verdicts.iter().filter(|v| **v == Verdict::Win).count() as u64;
    Ok(EvalReport::new("win_rate", wins, verdicts.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairwiseVerdict {
    PreferA,
    PreferB,
    Tie,
}

const JUDGE_PROMPT: &str = include_str!("../assets/judge_prompt.txt");

fn judge_once(
    prompt: &str,
    first: &str,
    second: &str,
    client: &Client,
) -> Result<Option<char>, ClientError> {
    let user = JUDGE_PROMPT
        .replace("{prompt}", prompt)
        .replace("{response_a}", first)
        .replace("{response_b}", second);
    let response = client.complete(&CompletionRequest {
        system: None,
        user,
        temperature: Some(0.0),
    })?;
    let verdict = response
        .text
        .trim()
        .chars()
        .next()
        .map(|c| c.to_ascii_uppercase());
    Ok(verdict.filter(|c| matches!(c, 'A' | 'B')))
}

/// Judge a pair with positions swapped between the two calls; only a
/// consistent winner scores, anything else is a tie.
pub fn judge_pairwise(
    prompt: &str,
    completion_a: &str,
    completion_b: &str,
    client: &Client,
) -> Result<PairwiseVerdict, ClientError> {
    let first = judge_once(prompt, completion_a, completion_b, client)?;
    let second = judge_once(prompt, completion_b, completion_a, client)?;
    Ok(match (first, second) {
        (Some('A'), Some('B')) => PairwiseVerdict::PreferA,
        (Some('B'), Some('A')) => PairwiseVerdict::PreferB,
        _ => PairwiseVerdict::Tie,
    })
}
