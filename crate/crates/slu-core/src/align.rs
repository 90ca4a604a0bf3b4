//! Slot projection onto translations.
//!
//! Given a labeled source utterance and its translation, this module tries
//! to carry the slot annotations over to the target text with two
//! strategies:
//!
//! 1. *Plain-text matching*: each translated slot value is searched for as a
//!    substring of the plain translation. A greedy pass matches values in
//!    source-span order, each at its leftmost occurrence after the previous
//!    match; because translation reorders constituents, a failed pass gets
//!    one retry that matches spans in order of their leftmost occurrence in
//!    the target instead.
//! 2. *Bracket transfer*: a second translation of the utterance with slot
//!    values wrapped in `[`…`]` pins each slot to a consecutive span. The
//!    k-th bracket content must equal the k-th translated slot value; the
//!    brackets are then stripped and the covered words labeled.
//!
//! A plain-text alignment is preferred when both succeed. When neither
//! works, the translation is still usable for intent classification, so the
//! failure result carries the plain text and the source intent with no slot
//! labels.
//!
//! All positions are Unicode scalar-value (char) indices, the same index
//! space the subword lattice uses. A matched span must cover whole target
//! words; what counts as a word is an explicit per-record policy, since
//! languages written without spaces need per-character labels.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{label_runs, Example, OUTSIDE_LABEL};
use crate::error::{CoreError, Result};

/// A translation of one source example, keyed by the source id.
///
/// `slot_translations` holds one translated value per non-`"O"` span of the
/// source, in source left-to-right order. `bracketed_text` is a second
/// translation with each slot value enclosed in `[`…`]`; it is optional
/// because not every corpus ships one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub id: u64,
    pub locale: String,
    pub plain_text: String,
    pub bracketed_text: Option<String>,
    pub slot_translations: Vec<String>,
}

impl TranslationRecord {
    /// Check this record against its source example: one slot translation
    /// per source span, none empty.
    pub fn validate_against(&self, source: &Example) -> Result<()> {
        let spans = source.slot_spans().len();
        if self.slot_translations.len() != spans {
            return Err(CoreError::Schema {
                line: 0,
                msg: format!(
                    "translation of id {} has {} slot translations for {} source spans",
                    self.id,
                    self.slot_translations.len(),
                    spans
                ),
            });
        }
        if self.slot_translations.iter().any(|t| t.trim().is_empty()) {
            return Err(CoreError::Schema {
                line: 0,
                msg: format!("translation of id {} has an empty slot translation", self.id),
            });
        }
        Ok(())
    }
}

/// How target text is split into labelable words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tokenizer {
    /// Maximal runs of non-whitespace characters.
    Whitespace,
    /// Every character is its own word (for scripts written without
    /// spaces).
    PerCharacter,
}

impl Tokenizer {
    /// Pick a policy for a piece of text: whitespace splitting when the
    /// text contains an ASCII space, per-character words otherwise.
    pub fn for_text(text: &str) -> Tokenizer {
        if text.contains(' ') {
            Tokenizer::Whitespace
        } else {
            Tokenizer::PerCharacter
        }
    }

    /// Words with their half-open char ranges in `text`.
    fn words(self, text: &str) -> Vec<Word> {
        let chars: Vec<char> = text.chars().collect();
        match self {
            Tokenizer::PerCharacter => chars
                .iter()
                .enumerate()
                .map(|(i, c)| Word { text: c.to_string(), start: i, end: i + 1 })
                .collect(),
            Tokenizer::Whitespace => {
                let mut words = Vec::new();
                let mut i = 0;
                while i < chars.len() {
                    if chars[i].is_whitespace() {
                        i += 1;
                        continue;
                    }
                    let start = i;
                    while i < chars.len() && !chars[i].is_whitespace() {
                        i += 1;
                    }
                    words.push(Word {
                        text: chars[start..i].iter().collect(),
                        start,
                        end: i,
                    });
                }
                words
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Word {
    text: String,
    start: usize,
    end: usize,
}

/// A matched slot value as a half-open char range in the target text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// A slot-aligned translation: a fully labeled target-locale example plus
/// the char spans its labels came from, in target text order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedExample {
    pub example: Example,
    pub spans: Vec<CharSpan>,
}

/// A translation usable only for intent classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentOnlyRecord {
    pub id: u64,
    pub locale: String,
    pub text: String,
    pub intent: String,
}

/// Status tag attached to an [`AlignmentOutcome`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    AlignedPlain,
    AlignedBracketed,
    IntentOnly,
}

/// Result of projecting one example's slots onto one translation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlignmentOutcome {
    AlignedPlain(AlignedExample),
    AlignedBracketed(AlignedExample),
    IntentOnly(IntentOnlyRecord),
}

impl AlignmentOutcome {
    pub fn status(&self) -> AlignmentStatus {
        match self {
            AlignmentOutcome::AlignedPlain(_) => AlignmentStatus::AlignedPlain,
            AlignmentOutcome::AlignedBracketed(_) => AlignmentStatus::AlignedBracketed,
            AlignmentOutcome::IntentOnly(_) => AlignmentStatus::IntentOnly,
        }
    }

    pub fn aligned(&self) -> Option<&AlignedExample> {
        match self {
            AlignmentOutcome::AlignedPlain(a) | AlignmentOutcome::AlignedBracketed(a) => Some(a),
            AlignmentOutcome::IntentOnly(_) => None,
        }
    }
}

fn intent_only(source: &Example, rec: &TranslationRecord) -> AlignmentOutcome {
    AlignmentOutcome::IntentOnly(IntentOnlyRecord {
        id: source.id,
        locale: rec.locale.clone(),
        text: rec.plain_text.clone(),
        intent: source.intent.clone(),
    })
}

/// Leftmost occurrence of `needle` in `hay` at or after `from`, as a char
/// index. Empty needles never match.
fn find_chars(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&s| &hay[s..s + needle.len()] == needle)
}

/// One greedy matching pass: match each value, in the given order, at its
/// leftmost occurrence at or after the previous match's end. Returns spans
/// in target text order, or None if any value cannot be placed.
fn greedy_pass(hay: &[char], values: &[(Vec<char>, &str)], order: &[usize]) -> Option<Vec<CharSpan>> {
    let mut spans = Vec::with_capacity(values.len());
    let mut cursor = 0;
    for &k in order {
        let (value, label) = &values[k];
        let start = find_chars(hay, value, cursor)?;
        let end = start + value.len();
        spans.push(CharSpan { start, end, label: (*label).to_string() });
        cursor = end;
    }
    Some(spans)
}

/// Turn matched char spans into a labeled target example. Fails (None) when
/// a span does not align with word boundaries, covers no word, or when two
/// same-label spans touch and would no longer round-trip to distinct spans.
fn labeled_example(
    source: &Example,
    locale: &str,
    words: &[Word],
    spans: Vec<CharSpan>,
) -> Option<AlignedExample> {
    if words.is_empty() {
        // An utterance with no words cannot become a valid example.
        return None;
    }
    let mut labels = vec![OUTSIDE_LABEL.to_string(); words.len()];
    for span in &spans {
        let first = words.iter().position(|w| w.start == span.start)?;
        let mut last = first;
        while last < words.len() && words[last].end <= span.end {
            last += 1;
        }
        if last == first || words[last - 1].end != span.end {
            return None;
        }
        for label in &mut labels[first..last] {
            if *label != OUTSIDE_LABEL {
                return None;
            }
            *label = span.label.clone();
        }
    }
    // Each matched span must survive as its own maximal run; adjacent spans
    // of the same type would merge and stop corresponding to their values.
    if label_runs(&labels).len() != spans.len() {
        return None;
    }
    Some(AlignedExample {
        example: Example {
            id: source.id,
            locale: locale.to_string(),
            words: words.iter().map(|w| w.text.clone()).collect(),
            slots: labels,
            intent: source.intent.clone(),
        },
        spans,
    })
}

/// Project `source`'s slots onto the plain translation by substring
/// matching.
///
/// A greedy pass matches slot values in source order, each at its leftmost
/// occurrence after the previous match. If that fails, one retry matches
/// them in order of their leftmost occurrence in the target (translations
/// reorder constituents). Every matched span must land exactly on whole
/// target words. Any failure yields an intent-only outcome, never an error.
pub fn align_plain(
    source: &Example,
    rec: &TranslationRecord,
    tokenizer: Tokenizer,
) -> AlignmentOutcome {
    let source_spans = source.slot_spans();
    if rec.slot_translations.len() != source_spans.len() {
        return intent_only(source, rec);
    }
    let hay: Vec<char> = rec.plain_text.chars().collect();
    let words = tokenizer.words(&rec.plain_text);
    if source_spans.is_empty() {
        // Nothing to project; the translation is trivially aligned.
        return match labeled_example(source, &rec.locale, &words, Vec::new()) {
            Some(aligned) => AlignmentOutcome::AlignedPlain(aligned),
            None => intent_only(source, rec),
        };
    }
    let values: Vec<(Vec<char>, &str)> = source_spans
        .iter()
        .zip(&rec.slot_translations)
        .map(|(span, t)| (t.chars().collect(), span.label.as_str()))
        .collect();

    let source_order: Vec<usize> = (0..values.len()).collect();
    let spans = greedy_pass(&hay, &values, &source_order).or_else(|| {
        // Retry once with spans ordered by their leftmost occurrence.
        let mut order = source_order;
        let mut first_at = Vec::with_capacity(values.len());
        for (value, _) in &values {
            first_at.push(find_chars(&hay, value, 0)?);
        }
        order.sort_by_key(|&k| first_at[k]);
        greedy_pass(&hay, &values, &order)
    });
    match spans.and_then(|mut spans| {
        spans.sort_by_key(|s| s.start);
        labeled_example(source, &rec.locale, &words, spans)
    }) {
        Some(aligned) => AlignmentOutcome::AlignedPlain(aligned),
        None => intent_only(source, rec),
    }
}

/// Bracket contents of `text` with their char ranges in the bracket-free
/// text, plus the stripped text itself.
fn strip_brackets(text: &str) -> Result<(String, Vec<(usize, usize)>)> {
    let mut stripped = String::new();
    let mut out_len = 0usize;
    let mut contents = Vec::new();
    let mut open: Option<usize> = None;
    for c in text.chars() {
        match c {
            '[' => {
                if open.is_some() {
                    return Err(CoreError::MalformedBrackets {
                        text: text.to_string(),
                        msg: "nested opening bracket".into(),
                    });
                }
                open = Some(out_len);
            }
            ']' => {
                let Some(start) = open.take() else {
                    return Err(CoreError::MalformedBrackets {
                        text: text.to_string(),
                        msg: "closing bracket without a matching opener".into(),
                    });
                };
                contents.push((start, out_len));
            }
            _ => {
                stripped.push(c);
                out_len += 1;
            }
        }
    }
    if open.is_some() {
        return Err(CoreError::MalformedBrackets {
            text: text.to_string(),
            msg: "unclosed bracket".into(),
        });
    }
    Ok((stripped, contents))
}

/// Trim surrounding whitespace from a char range of `chars`.
fn trim_range(chars: &[char], mut start: usize, mut end: usize) -> (usize, usize) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    (start, end)
}

/// Project `source`'s slots via the bracketed translation: the k-th bracket
/// content must equal the k-th slot translation (both trimmed); the
/// brackets are stripped and the covered words labeled.
///
/// Malformed brackets (unbalanced or nested) are a data error; every other
/// mismatch — bracket count, content disagreement, word-boundary trouble —
/// degrades to an intent-only outcome.
pub fn align_bracketed(
    source: &Example,
    rec: &TranslationRecord,
    tokenizer: Tokenizer,
) -> Result<AlignmentOutcome> {
    let Some(bracketed) = &rec.bracketed_text else {
        return Err(CoreError::Invalid(format!(
            "translation of id {} has no bracketed text",
            rec.id
        )));
    };
    let (stripped, contents) = strip_brackets(bracketed)?;
    let source_spans = source.slot_spans();
    if rec.slot_translations.len() != source_spans.len()
        || contents.len() != source_spans.len()
    {
        return Ok(intent_only(source, rec));
    }
    let chars: Vec<char> = stripped.chars().collect();
    let mut spans = Vec::with_capacity(contents.len());
    for (((start, end), translation), span) in
        contents.into_iter().zip(&rec.slot_translations).zip(&source_spans)
    {
        let (start, end) = trim_range(&chars, start, end);
        let content: String = chars[start..end].iter().collect();
        if content != translation.trim() {
            return Ok(intent_only(source, rec));
        }
        spans.push(CharSpan { start, end, label: span.label.clone() });
    }
    let words = tokenizer.words(&stripped);
    match labeled_example(source, &rec.locale, &words, spans) {
        Some(aligned) => Ok(AlignmentOutcome::AlignedBracketed(aligned)),
        None => Ok(intent_only(source, rec)),
    }
}

/// Project slots with the full strategy order: plain-text matching first,
/// the bracketed translation as fallback, intent-only as the floor.
///
/// Only malformed brackets escape as an error; any other failure is the
/// intent-only outcome.
pub fn project_slots(
    source: &Example,
    rec: &TranslationRecord,
    tokenizer: Tokenizer,
) -> Result<AlignmentOutcome> {
    let plain = align_plain(source, rec, tokenizer);
    if plain.aligned().is_some() {
        return Ok(plain);
    }
    if rec.bracketed_text.is_some() {
        let bracketed = align_bracketed(source, rec, tokenizer)?;
        if bracketed.aligned().is_some() {
            return Ok(bracketed);
        }
    }
    Ok(intent_only(source, rec))
}

/// Load a JSONL translation file, one record per line.
pub fn load_translations<P: AsRef<Path>>(path: P) -> Result<Vec<TranslationRecord>> {
    let file = std::fs::File::open(path)?;
    load_translations_from(BufReader::new(file))
}

pub fn load_translations_from<R: BufRead>(reader: R) -> Result<Vec<TranslationRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranslationRecord = serde_json::from_str(&line).map_err(|e| CoreError::Json {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Write intent-only records as JSONL.
pub fn write_intent_only<W: Write>(mut w: W, records: &[IntentOnlyRecord]) -> Result<()> {
    for rec in records {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Load a JSONL intent-only file, one record per line.
pub fn load_intent_only<P: AsRef<Path>>(path: P) -> Result<Vec<IntentOnlyRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IntentOnlyRecord = serde_json::from_str(&line).map_err(|e| CoreError::Json {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}
