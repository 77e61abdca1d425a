//! Marker production: deterministic length/quality annotation plus
//! LLM-backed tagging for domain/task/format.
//!
//! Counting rules are self-contained approximations (see the tokenizer
//! trait for plugging in a trainer-matched tokenizer): tokens are maximal
//! non-whitespace runs, with Han/Hiragana/Katakana scalars counted
//! individually for Chinese and Japanese; sentences end at a terminator
//! followed by whitespace or end of text; paragraphs split on blank lines.

use crate::dataset::SampleRecord;
use crate::llmclient::{Client, ClientError, CompletionRequest};
use crate::taxonomy::{
    normalize_token, spec_of, validate_marker, validate_value, Category, Marker, MarkerList,
    MarkerValue,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Deterministic counts for one text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextStats {
    pub token_count: u64,
    pub sentence_count: u64,
    pub paragraph_count: u64,
}

pub fn text_stats(text: &str, language: &str) -> TextStats {
    TextStats {
        token_count: count_tokens(text, language),
        sentence_count: count_sentences(text, language),
        paragraph_count: count_paragraphs(text),
    }
}

/// Alternative tokenizers may be supplied where counts must match an
/// external trainer's tokenizer.
pub trait Tokenizer: Send + Sync {
    fn count_tokens(&self, text: &str, language: &str) -> u64;
}

/// The default rule described above.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn count_tokens(&self, text: &str, language: &str) -> u64 {
        count_tokens(text, language)
    }
}

fn is_cjk_scalar(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'   // CJK Unified Ideographs
        | '\u{3400}'..='\u{4DBF}' // Extension A
        | '\u{F900}'..='\u{FAFF}' // Compatibility Ideographs
        | '\u{3040}'..='\u{309F}' // Hiragana
        | '\u{30A0}'..='\u{30FF}' // Katakana
    )
}

pub fn count_tokens(text: &str, language: &str) -> u64 {
    if matches!(language, "Chinese" | "Japanese") {
        let mut count = 0u64;
        let mut in_run = false;
        for c in text.chars() {
            if c.is_whitespace() {
                in_run = false;
            } else if is_cjk_scalar(c) {
                count += 1;
                in_run = false;
            } else if !in_run {
                count += 1;
                in_run = true;
            }
        }
        count
    } else {
        text.split_whitespace().count() as u64
    }
}

const SENTENCE_TERMINATORS: [char; 8] = ['.', '!', '?', '。', '！', '？', '؟', '…'];

pub fn count_sentences(text: &str, _language: &str) -> u64 {
    let mut count = 0u64;
    let mut segment_has_content = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if !c.is_whitespace() && !SENTENCE_TERMINATORS.contains(&c) {
            segment_has_content = true;
        }
        if SENTENCE_TERMINATORS.contains(&c) {
            // Fullwidth terminators delimit on their own: CJK text puts
            // no space after 。！？.
            let at_boundary = !c.is_ascii()
                || chars.peek().map_or(true, |n| n.is_whitespace());
            if at_boundary && segment_has_content {
                count += 1;
                segment_has_content = false;
            }
        }
    }
    if segment_has_content {
        count += 1;
    }
    count
}

pub fn count_paragraphs(text: &str) -> u64 {
    let mut count = 0u64;
    let mut newline_run = 2usize; // treat start of text as a boundary
    let mut segment_has_content = false;
    for c in text.chars() {
        if c == '\n' {
            newline_run += 1;
            continue;
        }
        if newline_run >= 2 && segment_has_content {
            count += 1;
            segment_has_content = false;
        } else if newline_run >= 2 {
            segment_has_content = false;
        }
        newline_run = 0;
        if !c.is_whitespace() {
            segment_has_content = true;
        }
    }
    if segment_has_content {
        count += 1;
    }
    count
}

/// concise (<300), medium (300..=1000), long (>1000).
pub fn length_bucket(token_count: u64) -> &'static str {
    if token_count < 300 {
        "concise"
    } else if token_count <= 1000 {
        "medium"
    } else {
        "long"
    }
}

/// Per-language quartile and anchor thresholds, nearest-rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageQuartiles {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub p95: f64,
    pub sample_count: u64,
    /// 95th-percentile score of each quality bucket's slice, index 0 =
    /// bucket 1 (highest quality). None when the bucket has no samples.
    pub bucket_p95: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuartileTable {
    pub languages: BTreeMap<String, LanguageQuartiles>,
}

impl QuartileTable {
    pub fn get(&self, language: &str) -> Option<&LanguageQuartiles> {
        self.languages.get(language)
    }
}

/// Nearest-rank percentile over ascending `sorted`: rank ceil(p*n), 1-based.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Build per-language thresholds from (language, score) pairs. Languages
/// with fewer than 4 scored samples are omitted, not failed.
pub fn build_quartile_table<'a, I>(scored_samples: I) -> QuartileTable
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut by_language: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (language, score) in scored_samples {
        by_language.entry(language).or_default().push(score);
    }
    let mut table = QuartileTable::default();
    for (language, mut scores) in by_language {
        if scores.len() < 4 {
            continue;
        }
        scores.sort_by(|a, b| a.total_cmp(b));
        let q1 = nearest_rank(&scores, 0.25);
        let q2 = nearest_rank(&scores, 0.50);
        let q3 = nearest_rank(&scores, 0.75);
        let p95 = nearest_rank(&scores, 0.95);
        let mut buckets: [Vec<f64>; 4] = Default::default();
        for &s in &scores {
            buckets[(bucket_for(s, q1, q2, q3) - 1) as usize].push(s);
        }
        let bucket_p95 =
            buckets.map(|b| (!b.is_empty()).then(|| nearest_rank(&b, 0.95)));
        table.languages.insert(
            language.to_string(),
            LanguageQuartiles {
                q1,
                q2,
                q3,
                p95,
                sample_count: scores.len() as u64,
                bucket_p95,
            },
        );
    }
    table
}

fn bucket_for(score: f64, q1: f64, q2: f64, q3: f64) -> u8 {
    if score > q3 {
        1
    } else if score > q2 {
        2
    } else if score > q1 {
        3
    } else {
        4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QualityError {
    #[error("language `{0}` has no quartile thresholds")]
    UnknownLanguage(String),
    #[error("quality bucket {bucket} has no samples for `{language}`")]
    BucketUnpopulated { language: String, bucket: u8 },
}

/// Bucket a score: >q3 -> 1, (q2,q3] -> 2, (q1,q2] -> 3, <=q1 -> 4.
pub fn quality_bucket(score: f64, language: &str, table: &QuartileTable) -> Result<u8, QualityError> {
    let q = table
        .get(language)
        .ok_or_else(|| QualityError::UnknownLanguage(language.to_string()))?;
    Ok(bucket_for(score, q.q1, q.q2, q.q3))
}

/// Quality scores are carried with 4-decimal precision in markers.
fn quality_marker(score: f64) -> Marker {
    let rounded: f64 = format!("{score:.4}").parse().unwrap();
    Marker {
        category: Category::Quality,
        value: MarkerValue::Decimal(rounded),
    }
}

fn bucket_marker(bucket: u8) -> Marker {
    validate_marker("quality_bucket", &bucket.to_string()).expect("bucket in 1..=4")
}

/// Compute every marker derivable without an LLM: length counts and bucket
/// from the completion, language from the record, any valid metadata
/// categories, and quality markers when a score and table are available.
pub fn annotate_deterministic(record: &SampleRecord, table: Option<&QuartileTable>) -> MarkerList {
    annotate_deterministic_with(record, table, &DefaultTokenizer)
}

pub fn annotate_deterministic_with(
    record: &SampleRecord,
    table: Option<&QuartileTable>,
    tokenizer: &dyn Tokenizer,
) -> MarkerList {
    let mut markers = MarkerList::new();
    let tokens = tokenizer.count_tokens(&record.completion, &record.language);
    markers.insert(Marker {
        category: Category::LengthTokens,
        value: MarkerValue::Int(tokens),
    });
    markers.insert(Marker {
        category: Category::LengthSent,
        value: MarkerValue::Int(count_sentences(&record.completion, &record.language)),
    });
    markers.insert(Marker {
        category: Category::LengthPara,
        value: MarkerValue::Int(count_paragraphs(&record.completion)),
    });
    markers.insert(
        validate_marker("length_bucket", length_bucket(tokens)).expect("bucket name is valid"),
    );
    if let Ok(m) = validate_marker("language", &record.language) {
        markers.insert(m);
    }
    for (tag, raw) in &record.metadata {
        if let Ok(m) = validate_marker(tag, raw) {
            markers.insert(m);
        }
    }
    if let (Some(score), Some(table)) = (record.quality_score, table) {
        if let Ok(bucket) = quality_bucket(score, &record.language, table) {
            markers.insert(quality_marker(score));
            markers.insert(bucket_marker(bucket));
        }
    }
    markers
}

const DOMAIN_PROMPT: &str = include_str!("../assets/annotate_domain.txt");
const TASK_PROMPT: &str = include_str!("../assets/annotate_task.txt");
const FORMAT_PROMPT: &str = include_str!("../assets/annotate_format.txt");

fn annotation_prompt(category: Category) -> Option<&'static str> {
    match category {
        Category::Domain => Some(DOMAIN_PROMPT),
        Category::Task => Some(TASK_PROMPT),
        Category::Format => Some(FORMAT_PROMPT),
        _ => None,
    }
}

/// Fill the final `Prompt :` slot of an annotation template.
pub fn fill_annotation_prompt(template: &str, prompt_text: &str) -> String {
    format!(
        "{}\nPrompt : {}\nAnswer : ",
        template.trim_end(),
        prompt_text
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationWarning {
    pub category: Category,
    pub detail: String,
}

/// Classify `prompt_text` for each requested category via the client.
/// Invalid replies are retried once, then the category abstains with a
/// warning. `Unspecified` is an abstention, not an error. Transport errors
/// propagate.
pub fn annotate_with_llm(
    prompt_text: &str,
    categories: &[Category],
    client: &Client,
) -> Result<(MarkerList, Vec<AnnotationWarning>), ClientError> {
    let mut markers = MarkerList::new();
    let mut warnings = Vec::new();
    for &category in categories {
        let Some(template) = annotation_prompt(category) else {
            warnings.push(AnnotationWarning {
                category,
                detail: "category has no annotation prompt".to_string(),
            });
            continue;
        };
        let request = CompletionRequest {
            system: None,
            user: fill_annotation_prompt(template, prompt_text),
            temperature: Some(0.0), // classification must be deterministic
        };
        let mut outcome = None;
        for _attempt in 0..2 {
            let response = client.complete(&request)?;
            let token = normalize_token(&response.text).to_string();
            if token == "Unspecified" {
                outcome = Some(None);
                break;
            }
            if let Ok(value) = validate_value(spec_of(category), &token) {
                outcome = Some(Some(MarkerValue::Token(match value {
                    MarkerValue::Token(t) => t,
                    _ => unreachable!("annotation categories are enums"),
                })));
                break;
            }
        }
        match outcome {
            Some(Some(value)) => markers.insert(Marker { category, value }),
            Some(None) => {}
            None => warnings.push(AnnotationWarning {
                category,
                detail: "no valid class after retry; abstaining".to_string(),
            }),
        }
    }
    Ok((markers, warnings))
}
