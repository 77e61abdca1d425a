//! Serializer and parser for the `<MARKER_LIST>` template.
//!
//! The serialized template is a wire format shared with external trainers:
//! `<MARKER_LIST>`, newline, one `<tag>value</tag>` line per marker in
//! canonical order, newline, `</MARKER_LIST>`. Serialization is byte-exact;
//! strict parsing is its inverse, lenient parsing additionally tolerates
//! annotator quirks (the `lang` alias, `Unspecified` abstentions, unknown
//! entries, the bare `/MARKER_LIST` closer).

use crate::taxonomy::{validate_marker, MarkerList, MarkerRejection, MarkerValue};
use std::ops::Range;

pub const OPEN_TAG: &str = "<MARKER_LIST>";
pub const CLOSE_TAG: &str = "</MARKER_LIST>";
// Some renderings drop the angle brackets on the closer.
const CLOSE_TAG_BARE: &str = "/MARKER_LIST";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("input is not a marker-list block")]
    NotABlock,
    #[error("malformed entry at line {line}: `{text}`")]
    MalformedEntry { line: usize, text: String },
    #[error("unknown category at line {line}: `{tag}`")]
    UnknownCategory { line: usize, tag: String },
    #[error("duplicate category `{tag}` at line {line}")]
    DuplicateCategory { line: usize, tag: String },
    #[error("invalid value at line {line}: {reason}")]
    InvalidValue { line: usize, reason: MarkerRejection },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SerializeError {
    #[error("value `{value}` contains an angle bracket")]
    AngleBracketInValue { value: String },
}

/// An entry dropped by lenient parsing, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedEntry {
    pub text: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DropReason {
    Malformed,
    UnknownCategory,
    DuplicateCategory,
    InvalidValue(MarkerRejection),
    /// `Unspecified` on an enum category is an abstention, not a value.
    Unspecified,
}

/// A `<MARKER_LIST>` span found inside a host text.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBlock {
    pub raw_text: String,
    pub marker_list: MarkerList,
    pub span: Range<usize>,
}

/// Canonical serialization. Values never contain angle brackets (no taxonomy
/// value needs one); rendering is checked anyway since quality scores pass
/// through user-supplied metadata paths.
pub fn serialize_marker_list(markers: &MarkerList) -> String {
    try_serialize_marker_list(markers).expect("taxonomy values never contain angle brackets")
}

pub fn try_serialize_marker_list(markers: &MarkerList) -> Result<String, SerializeError> {
    let mut out = String::from(OPEN_TAG);
    out.push('\n');
    for m in markers.iter() {
        let value = m.value.render();
        if value.contains('<') || value.contains('>') {
            return Err(SerializeError::AngleBracketInValue { value });
        }
        let tag = m.category.tag_name();
        out.push('<');
        out.push_str(tag);
        out.push('>');
        out.push_str(&value);
        out.push_str("</");
        out.push_str(tag);
        out.push_str(">\n");
    }
    out.push_str(CLOSE_TAG);
    Ok(out)
}

/// Tag spellings accepted on input; canonical names are used on output.
fn canonical_tag(tag: &str) -> &str {
    match tag {
        "lang" => "language",
        "length_sentences" => "length_sent",
        "length_paragraphs" => "length_para",
        other => other,
    }
}

fn split_entry_line(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix('<')?;
    let gt = rest.find('>')?;
    let tag = &rest[..gt];
    if tag.is_empty() || !tag.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
        return None;
    }
    let body = &rest[gt + 1..];
    let value = body.strip_suffix('>')?.strip_suffix(tag)?.strip_suffix("</")?;
    if value.contains('<') || value.contains('>') {
        return None;
    }
    Some((tag, value.trim()))
}

/// Strict parse: the entire input must be one well-formed block (surrounding
/// whitespace tolerated); every entry must validate; duplicates reject.
pub fn parse_marker_list(text: &str) -> Result<MarkerList, ParseError> {
    let trimmed = text.trim();
    let inner = trimmed
        .strip_prefix(OPEN_TAG)
        .and_then(|s| s.strip_suffix(CLOSE_TAG))
        .ok_or(ParseError::NotABlock)?;
    let mut list = MarkerList::new();
    for (idx, line) in inner.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (tag, value) = split_entry_line(line.trim()).ok_or(ParseError::MalformedEntry {
            line: line_no,
            text: line.to_string(),
        })?;
        let tag = canonical_tag(tag);
        let marker = validate_marker(tag, value).map_err(|e| match e {
            MarkerRejection::UnknownCategory { tag } => ParseError::UnknownCategory {
                line: line_no,
                tag,
            },
            other => ParseError::InvalidValue {
                line: line_no,
                reason: other,
            },
        })?;
        list.try_insert(marker).map_err(|m| ParseError::DuplicateCategory {
            line: line_no,
            tag: m.category.tag_name().to_string(),
        })?;
    }
    Ok(list)
}

/// Lenient parse for annotator replies: locates the first block anywhere in
/// the input (code fences and other surrounding text ignored), drops and
/// reports invalid entries instead of rejecting. Fails only when no
/// well-delimited block exists.
pub fn parse_lenient(text: &str) -> Result<(MarkerList, Vec<DroppedEntry>), ParseError> {
    let open = text.find(OPEN_TAG).ok_or(ParseError::NotABlock)?;
    let after_open = open + OPEN_TAG.len();
    let rest = &text[after_open..];
    // Accept either closer, whichever comes first. The full closer contains
    // the bare one, so taking the minimum position is safe either way.
    let close = [rest.find(CLOSE_TAG), rest.find(CLOSE_TAG_BARE)]
        .into_iter()
        .flatten()
        .min()
        .ok_or(ParseError::NotABlock)?;
    let inner = &rest[..close];
    Ok(parse_entries_lenient(inner))
}

fn parse_entries_lenient(inner: &str) -> (MarkerList, Vec<DroppedEntry>) {
    let mut list = MarkerList::new();
    let mut dropped = Vec::new();
    for line in inner.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((tag, value)) = split_entry_line(line) else {
            dropped.push(DroppedEntry {
                text: line.to_string(),
                reason: DropReason::Malformed,
            });
            continue;
        };
        let tag = canonical_tag(tag);
        match validate_marker(tag, value) {
            Ok(marker) => {
                // `Unspecified` on enum categories is an abstention.
                if marker.value == MarkerValue::Token("Unspecified") {
                    dropped.push(DroppedEntry {
                        text: line.to_string(),
                        reason: DropReason::Unspecified,
                    });
                    continue;
                }
                if list.try_insert(marker).is_err() {
                    dropped.push(DroppedEntry {
                        text: line.to_string(),
                        reason: DropReason::DuplicateCategory,
                    });
                }
            }
            Err(MarkerRejection::UnknownCategory { .. }) => dropped.push(DroppedEntry {
                text: line.to_string(),
                reason: DropReason::UnknownCategory,
            }),
            Err(MarkerRejection::ValueNotAllowed { .. }) if value == "Unspecified" => {
                dropped.push(DroppedEntry {
                    text: line.to_string(),
                    reason: DropReason::Unspecified,
                })
            }
            Err(e) => dropped.push(DroppedEntry {
                text: line.to_string(),
                reason: DropReason::InvalidValue(e),
            }),
        }
    }
    (list, dropped)
}

/// Find the first well-delimited block; the remainder is the host text with
/// the span and one adjacent newline removed. Never loses non-block bytes.
pub fn extract_first_block(text: &str) -> (Option<TemplateBlock>, String) {
    let Some(open) = text.find(OPEN_TAG) else {
        return (None, text.to_string());
    };
    let after_open = open + OPEN_TAG.len();
    let Some(close_rel) = text[after_open..].find(CLOSE_TAG) else {
        return (None, text.to_string());
    };
    let end = after_open + close_rel + CLOSE_TAG.len();
    let span = open..end;
    let raw_text = text[span.clone()].to_string();
    let inner = &text[after_open..after_open + close_rel];
    let (marker_list, _) = parse_entries_lenient(inner);

    let mut remainder = String::with_capacity(text.len() - raw_text.len());
    if text[end..].starts_with('\n') {
        remainder.push_str(&text[..open]);
        remainder.push_str(&text[end + 1..]);
    } else if text[..open].ends_with('\n') {
        remainder.push_str(&text[..open - 1]);
        remainder.push_str(&text[end..]);
    } else {
        remainder.push_str(&text[..open]);
        remainder.push_str(&text[end..]);
    }
    (
        Some(TemplateBlock {
            raw_text,
            marker_list,
            span,
        }),
        remainder,
    )
}
