//! The closed taxonomy of training-time marker categories.
//!
//! Thirteen categories, each with a fixed value domain. Every other module
//! validates marker values against this registry; it is immutable after
//! construction and safe for unrestricted concurrent reads.

use std::fmt;

/// The 23 languages covered by the `language` category. "Chinese" covers
/// both scripts; no script distinction is made.
pub const LANGUAGES: [&str; 23] = [
    "Arabic",
    "Chinese",
    "Czech",
    "Dutch",
    "English",
    "French",
    "German",
    "Greek",
    "Hebrew",
    "Hindi",
    "Indonesian",
    "Italian",
    "Japanese",
    "Korean",
    "Persian",
    "Polish",
    "Portuguese",
    "Romanian",
    "Russian",
    "Spanish",
    "Turkish",
    "Ukrainian",
    "Vietnamese",
];

const TASK_VALUES: [&str; 14] = [
    "OpenEnded",
    "Explanation",
    "Translation",
    "Classification",
    "CreativeWriting",
    "QuestionAnswering",
    "InformationExtraction",
    "Summarization",
    "Rewrite",
    "Reasoning",
    "CodeGeneration",
    "CodeFix",
    "CodeTranslation",
    "CodeExplanation",
];

const DOMAIN_VALUES: [&str; 10] = [
    "Sciences",
    "Technology",
    "SocialSciences",
    "Culture",
    "Medical",
    "Legal",
    "Unspecified",
    "Conversation",
    "Code",
    "Math",
];

const CODE_TYPE_VALUES: [&str; 17] = [
    "python",
    "javascript",
    "cpp",
    "cobol",
    "java",
    "go",
    "rust",
    "swift",
    "csharp",
    "php",
    "typescript",
    "shell",
    "c",
    "kotlin",
    "ruby",
    "haskell",
    "sql",
];

const FORMAT_VALUES: [&str; 8] = [
    "MCQAnswer",
    "ChainOfThought",
    "XML",
    "JSON",
    "Enumeration",
    "Tabular",
    "Markdown",
    "Latex",
];

const SOURCE_VALUES: [&str; 4] = ["Human", "Translation", "Synthetic", "Others"];
const STYLE_VALUES: [&str; 3] = ["Formal", "Informal", "Custom"];
const LENGTH_BUCKET_VALUES: [&str; 3] = ["concise", "medium", "long"];
const QUALITY_BUCKET_VALUES: [&str; 4] = ["1", "2", "3", "4"];

/// One of the 13 marker categories. Variant order matches ascending
/// lexicographic order of the tag names, which is the canonical iteration
/// order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    CodeType,
    Domain,
    Format,
    Language,
    LengthBucket,
    LengthPara,
    LengthSent,
    LengthTokens,
    Quality,
    QualityBucket,
    Source,
    Style,
    Task,
}

pub const ALL_CATEGORIES: [Category; 13] = [
    Category::CodeType,
    Category::Domain,
    Category::Format,
    Category::Language,
    Category::LengthBucket,
    Category::LengthPara,
    Category::LengthSent,
    Category::LengthTokens,
    Category::Quality,
    Category::QualityBucket,
    Category::Source,
    Category::Style,
    Category::Task,
];

impl Category {
    pub fn tag_name(self) -> &'static str {
        match self {
            Category::CodeType => "code_type",
            Category::Domain => "domain",
            Category::Format => "format",
            Category::Language => "language",
            Category::LengthBucket => "length_bucket",
            Category::LengthPara => "length_para",
            Category::LengthSent => "length_sent",
            Category::LengthTokens => "length_tokens",
            Category::Quality => "quality",
            Category::QualityBucket => "quality_bucket",
            Category::Source => "source",
            Category::Style => "style",
            Category::Task => "task",
        }
    }

    /// Canonical tag names only; aliases are a markup concern.
    pub fn from_tag(tag: &str) -> Option<Category> {
        ALL_CATEGORIES.iter().copied().find(|c| c.tag_name() == tag)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag_name())
    }
}

/// Shape of a category's value domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Integer,
    Decimal,
    Enum,
    LanguageEnum,
}

/// Static description of one category: tag name, value kind, and the finite
/// value list for enum kinds.
#[derive(Debug, Clone, Copy)]
pub struct CategorySpec {
    pub category: Category,
    pub value_kind: ValueKind,
    pub allowed_values: &'static [&'static str],
    pub description: &'static str,
}

impl CategorySpec {
    pub fn tag_name(&self) -> &'static str {
        self.category.tag_name()
    }
}

/// The registry, in canonical order.
pub fn list_categories() -> &'static [CategorySpec; 13] {
    &REGISTRY
}

static REGISTRY: [CategorySpec; 13] = [
    CategorySpec {
        category: Category::CodeType,
        value_kind: ValueKind::Enum,
        allowed_values: &CODE_TYPE_VALUES,
        description: "Programming language for coding tasks",
    },
    CategorySpec {
        category: Category::Domain,
        value_kind: ValueKind::Enum,
        allowed_values: &DOMAIN_VALUES,
        description: "Domain-related information",
    },
    CategorySpec {
        category: Category::Format,
        value_kind: ValueKind::Enum,
        allowed_values: &FORMAT_VALUES,
        description: "Desired generation format",
    },
    CategorySpec {
        category: Category::Language,
        value_kind: ValueKind::LanguageEnum,
        allowed_values: &LANGUAGES,
        description: "The language of the completion",
    },
    CategorySpec {
        category: Category::LengthBucket,
        value_kind: ValueKind::Enum,
        allowed_values: &LENGTH_BUCKET_VALUES,
        description: "Token count bucketed by response length ranges",
    },
    CategorySpec {
        category: Category::LengthPara,
        value_kind: ValueKind::Integer,
        allowed_values: &[],
        description: "Number of paragraphs",
    },
    CategorySpec {
        category: Category::LengthSent,
        value_kind: ValueKind::Integer,
        allowed_values: &[],
        description: "Number of sentences",
    },
    CategorySpec {
        category: Category::LengthTokens,
        value_kind: ValueKind::Integer,
        allowed_values: &[],
        description: "Number of tokens",
    },
    CategorySpec {
        category: Category::Quality,
        value_kind: ValueKind::Decimal,
        allowed_values: &[],
        description: "Quality score from a human annotator or reward model",
    },
    CategorySpec {
        category: Category::QualityBucket,
        value_kind: ValueKind::Enum,
        allowed_values: &QUALITY_BUCKET_VALUES,
        description: "Quality score bucketed into per-language quartiles, 1 highest",
    },
    CategorySpec {
        category: Category::Source,
        value_kind: ValueKind::Enum,
        allowed_values: &SOURCE_VALUES,
        description: "Origin of the training data",
    },
    CategorySpec {
        category: Category::Style,
        value_kind: ValueKind::Enum,
        allowed_values: &STYLE_VALUES,
        description: "Tone and style of the generation",
    },
    CategorySpec {
        category: Category::Task,
        value_kind: ValueKind::Enum,
        allowed_values: &TASK_VALUES,
        description: "Task-related information",
    },
];

/// Look up a category spec by canonical tag name.
pub fn category_spec(tag: &str) -> Result<&'static CategorySpec, MarkerRejection> {
    let category = Category::from_tag(tag).ok_or_else(|| MarkerRejection::UnknownCategory {
        tag: tag.to_string(),
    })?;
    Ok(&REGISTRY[category as usize])
}

pub fn spec_of(category: Category) -> &'static CategorySpec {
    &REGISTRY[category as usize]
}

/// Why a (category, value) pair was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarkerRejection {
    #[error("unknown category `{tag}`")]
    UnknownCategory { tag: String },
    #[error("value `{value}` has the wrong kind for category `{tag}`")]
    WrongKind { tag: String, value: String },
    #[error("value `{value}` is not allowed for category `{tag}`")]
    ValueNotAllowed { tag: String, value: String },
}

/// A typed marker value.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkerValue {
    Int(u64),
    Decimal(f64),
    Token(&'static str),
}

impl MarkerValue {
    pub fn render(&self) -> String {
        match self {
            MarkerValue::Int(n) => n.to_string(),
            MarkerValue::Decimal(x) => x.to_string(),
            MarkerValue::Token(t) => (*t).to_string(),
        }
    }
}

impl fmt::Display for MarkerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// One validated (category, value) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub category: Category,
    pub value: MarkerValue,
}

/// Validate a raw textual value against a category's value domain.
/// Total: any input yields either a Marker or a typed rejection.
pub fn validate_marker(tag: &str, raw: &str) -> Result<Marker, MarkerRejection> {
    let spec = category_spec(tag)?;
    let value = validate_value(spec, raw)?;
    Ok(Marker {
        category: spec.category,
        value,
    })
}

pub fn validate_value(spec: &CategorySpec, raw: &str) -> Result<MarkerValue, MarkerRejection> {
    let tag = spec.tag_name();
    match spec.value_kind {
        ValueKind::Integer => raw
            .parse::<u64>()
            .map(MarkerValue::Int)
            .map_err(|_| MarkerRejection::WrongKind {
                tag: tag.to_string(),
                value: raw.to_string(),
            }),
        ValueKind::Decimal => {
            let x: f64 = raw.parse().map_err(|_| MarkerRejection::WrongKind {
                tag: tag.to_string(),
                value: raw.to_string(),
            })?;
            if x.is_finite() {
                Ok(MarkerValue::Decimal(x))
            } else {
                Err(MarkerRejection::ValueNotAllowed {
                    tag: tag.to_string(),
                    value: raw.to_string(),
                })
            }
        }
        ValueKind::Enum | ValueKind::LanguageEnum => spec
            .allowed_values
            .iter()
            .find(|v| **v == raw)
            .map(|v| MarkerValue::Token(v))
            .ok_or_else(|| MarkerRejection::ValueNotAllowed {
                tag: tag.to_string(),
                value: raw.to_string(),
            }),
    }
}

/// Canonical ordered set of markers, at most one per category. Iteration is
/// ascending lexicographic by tag name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarkerList {
    map: std::collections::BTreeMap<Category, MarkerValue>,
}

impl MarkerList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, category: Category) -> bool {
        self.map.contains_key(&category)
    }

    pub fn get(&self, category: Category) -> Option<&MarkerValue> {
        self.map.get(&category)
    }

    /// Insert, replacing any existing marker for the category.
    pub fn insert(&mut self, marker: Marker) {
        self.map.insert(marker.category, marker.value);
    }

    /// Insert, failing if the category is already present.
    pub fn try_insert(&mut self, marker: Marker) -> Result<(), Marker> {
        if self.map.contains_key(&marker.category) {
            return Err(marker);
        }
        self.map.insert(marker.category, marker.value);
        Ok(())
    }

    pub fn remove(&mut self, category: Category) -> Option<MarkerValue> {
        self.map.remove(&category)
    }

    pub fn iter(&self) -> impl Iterator<Item = Marker> + '_ {
        self.map.iter().map(|(c, v)| Marker {
            category: *c,
            value: v.clone(),
        })
    }

    pub fn categories(&self) -> impl Iterator<Item = Category> + '_ {
        self.map.keys().copied()
    }

    /// Keep only the given categories.
    pub fn retain_categories(&mut self, keep: &[Category]) {
        self.map.retain(|c, _| keep.contains(c));
    }

    pub fn is_subset_of(&self, other: &MarkerList) -> bool {
        self.iter()
            .all(|m| other.get(m.category) == Some(&m.value))
    }
}

impl FromIterator<Marker> for MarkerList {
    fn from_iter<T: IntoIterator<Item = Marker>>(iter: T) -> Self {
        let mut list = MarkerList::new();
        for m in iter {
            list.insert(m);
        }
        list
    }
}

// JSON form is an object of tag -> rendered value; BTreeMap keeps the
// canonical key order.
impl serde::Serialize for MarkerList {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.map.len()))?;
        for m in self.iter() {
            map.serialize_entry(m.category.tag_name(), &m.value.render())?;
        }
        map.end()
    }
}

impl<'de> serde::Deserialize<'de> for MarkerList {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = std::collections::BTreeMap::<String, String>::deserialize(deserializer)?;
        let mut list = MarkerList::new();
        for (tag, value) in raw {
            let marker = validate_marker(&tag, &value).map_err(D::Error::custom)?;
            list.insert(marker);
        }
        Ok(list)
    }
}

/// Normalization applied to LLM annotator replies before enum matching:
/// trim, then strip one layer of surrounding backticks or quotes.
pub fn normalize_token(raw: &str) -> &str {
    let s = raw.trim();
    for (open, close) in [('`', '`'), ('"', '"'), ('\'', '\'')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}
