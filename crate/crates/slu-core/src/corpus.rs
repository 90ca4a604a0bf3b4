//! Dataset schema: annotated utterances, label inventories, and the
//! cross-locale parallel index.
//!
//! Data lives in JSONL files, one object per line:
//!
//! ```text
//! {"id": 0, "locale": "en-US", "words": ["wake","me","up"], "slots": ["O","O","O"], "intent": "alarm_set"}
//! ```
//!
//! Words arrive pre-tokenized; slot labels are bare (no BIO prefixes), with
//! `"O"` marking words outside any slot. A contiguous run of one non-`"O"`
//! label is one slot span.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// The label assigned to words outside any slot.
pub const OUTSIDE_LABEL: &str = "O";

/// One annotated utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub locale: String,
    pub words: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
}

/// A maximal run of one non-`"O"` slot label, as half-open word indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Example {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.words.is_empty() {
            return Err("words must be non-empty".into());
        }
        if self.words.len() != self.slots.len() {
            return Err(format!(
                "{} words but {} slot labels",
                self.words.len(),
                self.slots.len()
            ));
        }
        if let Some(w) = self.words.iter().find(|w| w.is_empty()) {
            let _ = w;
            return Err("empty word".into());
        }
        if self.intent.is_empty() {
            return Err("empty intent label".into());
        }
        if self.slots.iter().any(|s| s.is_empty()) {
            return Err("empty slot label".into());
        }
        Ok(())
    }

    /// Non-`"O"` slot spans in left-to-right order.
    pub fn slot_spans(&self) -> Vec<SlotSpan> {
        label_runs(&self.slots)
    }

    /// The surface value of a span: its words joined by single spaces.
    pub fn span_value(&self, span: &SlotSpan) -> String {
        self.words[span.start..span.end].join(" ")
    }
}

/// Maximal runs of identical non-`"O"` labels over a label sequence.
pub fn label_runs(labels: &[String]) -> Vec<SlotSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == OUTSIDE_LABEL {
            i += 1;
            continue;
        }
        let start = i;
        let label = &labels[i];
        while i < labels.len() && labels[i] == *label {
            i += 1;
        }
        spans.push(SlotSpan {
            start,
            end: i,
            label: label.clone(),
        });
    }
    spans
}

/// A validated collection of examples with its label inventories.
///
/// Inventories are sorted lexicographically; the slot inventory always
/// contains [`OUTSIDE_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub intent_inventory: Vec<String>,
    pub slot_inventory: Vec<String>,
}

impl Dataset {
    /// Build a dataset from examples, validating the schema invariants and
    /// deriving the inventories.
    pub fn from_examples(examples: Vec<Example>) -> Result<Self> {
        let mut seen: HashSet<(u64, &str)> = HashSet::new();
        for (i, ex) in examples.iter().enumerate() {
            ex.validate()
                .map_err(|msg| CoreError::Schema { line: i + 1, msg })?;
            if !seen.insert((ex.id, ex.locale.as_str())) {
                return Err(CoreError::DuplicateExample {
                    id: ex.id,
                    locale: ex.locale.clone(),
                });
            }
        }
        let mut intents: BTreeSet<String> = BTreeSet::new();
        let mut slots: BTreeSet<String> = BTreeSet::new();
        slots.insert(OUTSIDE_LABEL.to_string());
        for ex in &examples {
            intents.insert(ex.intent.clone());
            for s in &ex.slots {
                slots.insert(s.clone());
            }
        }
        Ok(Dataset {
            examples,
            intent_inventory: intents.into_iter().collect(),
            slot_inventory: slots.into_iter().collect(),
        })
    }

    /// Serialize back to JSONL, one example per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for ex in &self.examples {
            let line = serde_json::to_string(ex).expect("example serializes");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Load and validate a JSONL dataset. Errors carry 1-based line numbers.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_dataset_from(BufReader::new(file))
}

pub fn load_dataset_from<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut seen: HashSet<(u64, String)> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| CoreError::Json {
            line: lineno,
            msg: e.to_string(),
        })?;
        ex.validate().map_err(|msg| CoreError::Schema {
            line: lineno,
            msg,
        })?;
        if !seen.insert((ex.id, ex.locale.clone())) {
            return Err(CoreError::DuplicateExample {
                id: ex.id,
                locale: ex.locale,
            });
        }
        examples.push(ex);
    }
    // from_examples re-validates; cheap at this scale and keeps one code path
    // for the inventory construction.
    Dataset::from_examples(examples)
}

/// Global label inventories for a run: the union over all loaded datasets,
/// so label indices are stable across languages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventories {
    pub intents: Vec<String>,
    pub slots: Vec<String>,
}

impl Inventories {
    pub fn from_datasets<'a, I: IntoIterator<Item = &'a Dataset>>(datasets: I) -> Self {
        let mut intents: BTreeSet<String> = BTreeSet::new();
        let mut slots: BTreeSet<String> = BTreeSet::new();
        slots.insert(OUTSIDE_LABEL.to_string());
        for ds in datasets {
            intents.extend(ds.intent_inventory.iter().cloned());
            slots.extend(ds.slot_inventory.iter().cloned());
        }
        Inventories {
            intents: intents.into_iter().collect(),
            slots: slots.into_iter().collect(),
        }
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        self.intents.iter().position(|l| l == label)
    }

    pub fn slot_index(&self, label: &str) -> Option<usize> {
        self.slots.iter().position(|l| l == label)
    }

    /// Index of [`OUTSIDE_LABEL`] in the slot inventory.
    pub fn outside_index(&self) -> usize {
        self.slot_index(OUTSIDE_LABEL).expect("O always present")
    }
}

/// Groups examples by shared id across datasets. An id present in k locales
/// has k entries under that id.
#[derive(Debug, Clone, Default)]
pub struct ParallelIndex {
    groups: HashMap<u64, Vec<Example>>,
}

impl ParallelIndex {
    pub fn group(&self, id: u64) -> &[Example] {
        self.groups.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Examples sharing `id` in a locale other than `locale`.
    pub fn counterparts(&self, id: u64, locale: &str) -> Vec<&Example> {
        self.group(id)
            .iter()
            .filter(|ex| ex.locale != locale)
            .collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.groups.keys().copied()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
}

/// Index one or more datasets by example id.
pub fn link_parallel<'a, I: IntoIterator<Item = &'a Dataset>>(datasets: I) -> ParallelIndex {
    let mut groups: HashMap<u64, Vec<Example>> = HashMap::new();
    for ds in datasets {
        for ex in &ds.examples {
            groups.entry(ex.id).or_default().push(ex.clone());
        }
    }
    // Deterministic order within each group.
    for group in groups.values_mut() {
        group.sort_by(|a, b| a.locale.cmp(&b.locale));
    }
    ParallelIndex { groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: u64, locale: &str, words: &[&str], slots: &[&str], intent: &str) -> Example {
        Example {
            id,
            locale: locale.into(),
            words: words.iter().map(|s| s.to_string()).collect(),
            slots: slots.iter().map(|s| s.to_string()).collect(),
            intent: intent.into(),
        }
    }

    #[test]
    fn load_two_valid_lines() {
        let data = concat!(
            r#"{"id": 0, "locale": "en-US", "words": ["wake","me","up","at","five","am"], "slots": ["O","O","O","O","time","time"], "intent": "alarm_set"}"#,
            "\n",
            r#"{"id": 1, "locale": "en-US", "words": ["play","jazz"], "slots": ["O","genre"], "intent": "play_music"}"#,
            "\n",
        );
        let ds = load_dataset_from(data.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.intent_inventory, vec!["alarm_set", "play_music"]);
        assert_eq!(ds.slot_inventory, vec!["O", "genre", "time"]);
    }

    #[test]
    fn length_mismatch_names_line() {
        let data = concat!(
            r#"{"id": 0, "locale": "en-US", "words": ["a"], "slots": ["O"], "intent": "x"}"#,
            "\n",
            r#"{"id": 1, "locale": "en-US", "words": ["a","b","c"], "slots": ["O","O"], "intent": "x"}"#,
            "\n",
        );
        let err = load_dataset_from(data.as_bytes()).unwrap_err();
        match err {
            CoreError::Schema { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("3 words"), "{msg}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_id_locale_rejected() {
        let data = concat!(
            r#"{"id": 5, "locale": "en-US", "words": ["a"], "slots": ["O"], "intent": "x"}"#,
            "\n",
            r#"{"id": 5, "locale": "en-US", "words": ["b"], "slots": ["O"], "intent": "y"}"#,
            "\n",
        );
        let err = load_dataset_from(data.as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::DuplicateExample { id: 5, .. }));
    }

    #[test]
    fn malformed_json_names_line() {
        let data = "{\"id\": 0, \"locale\": \"en-US\", \"words\": [\"a\"], \"slots\": [\"O\"], \"intent\": \"x\"}\nnot json\n";
        let err = load_dataset_from(data.as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Json { line: 2, .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        let data = concat!(
            r#"{"id": 0, "locale": "en-US", "words": ["wake","me"], "slots": ["O","O"], "intent": "alarm_set"}"#,
            "\n",
            r#"{"id": 3, "locale": "zh-CN", "words": ["叫","我"], "slots": ["O","person"], "intent": "alarm_set"}"#,
            "\n",
        );
        let ds = load_dataset_from(data.as_bytes()).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let reloaded = load_dataset_from(buf.as_slice()).unwrap();
        assert_eq!(ds, reloaded);
    }

    #[test]
    fn link_parallel_pairs_by_id() {
        let en = Dataset::from_examples(vec![
            ex(1, "en-US", &["a"], &["O"], "x"),
            ex(2, "en-US", &["b"], &["O"], "x"),
        ])
        .unwrap();
        let zh = Dataset::from_examples(vec![
            ex(1, "zh-CN", &["甲"], &["O"], "x"),
            ex(2, "zh-CN", &["乙"], &["O"], "x"),
        ])
        .unwrap();
        let idx = link_parallel([&en, &zh]);
        assert_eq!(idx.num_groups(), 2);
        assert_eq!(idx.group(1).len(), 2);
        assert_eq!(idx.group(2).len(), 2);
    }

    #[test]
    fn link_parallel_single_dataset_gives_singletons() {
        let en = Dataset::from_examples(vec![
            ex(1, "en-US", &["a"], &["O"], "x"),
            ex(2, "en-US", &["b"], &["O"], "x"),
        ])
        .unwrap();
        let idx = link_parallel([&en]);
        assert_eq!(idx.num_groups(), 2);
        assert!(idx.group(1).len() == 1 && idx.group(2).len() == 1);
        assert!(idx.counterparts(1, "en-US").is_empty());
    }

    #[test]
    fn link_parallel_partial_overlap() {
        // en ids {1,2}, zh ids {2,3} -> groups {1:en}, {2:en,zh}, {3:zh},
        // enumerated by hand over the 4 records.
        let en = Dataset::from_examples(vec![
            ex(1, "en-US", &["a"], &["O"], "x"),
            ex(2, "en-US", &["b"], &["O"], "x"),
        ])
        .unwrap();
        let zh = Dataset::from_examples(vec![
            ex(2, "zh-CN", &["乙"], &["O"], "x"),
            ex(3, "zh-CN", &["丙"], &["O"], "x"),
        ])
        .unwrap();
        let idx = link_parallel([&en, &zh]);
        assert_eq!(idx.num_groups(), 3);
        let locales =
            |id: u64| -> Vec<&str> { idx.group(id).iter().map(|e| e.locale.as_str()).collect() };
        assert_eq!(locales(1), vec!["en-US"]);
        assert_eq!(locales(2), vec!["en-US", "zh-CN"]);
        assert_eq!(locales(3), vec!["zh-CN"]);
        // Lookups never return an example with a different id.
        for id in [1, 2, 3] {
            assert!(idx.group(id).iter().all(|e| e.id == id));
        }
    }

    #[test]
    fn slot_spans_run_length() {
        let e = ex(
            0,
            "en-US",
            &["a", "b", "c", "d", "e", "f"],
            &["O", "O", "time", "time", "O", "date"],
            "x",
        );
        let spans = e.slot_spans();
        assert_eq!(
            spans,
            vec![
                SlotSpan { start: 2, end: 4, label: "time".into() },
                SlotSpan { start: 5, end: 6, label: "date".into() },
            ]
        );
        assert_eq!(e.span_value(&spans[0]), "c d");
    }

    #[test]
    fn inventories_union_across_datasets() {
        let a = Dataset::from_examples(vec![ex(1, "en-US", &["a"], &["t1"], "i1")]).unwrap();
        let b = Dataset::from_examples(vec![ex(1, "zh-CN", &["b"], &["t2"], "i2")]).unwrap();
        let inv = Inventories::from_datasets([&a, &b]);
        assert_eq!(inv.intents, vec!["i1", "i2"]);
        assert_eq!(inv.slots, vec!["O", "t1", "t2"]);
        assert_eq!(inv.intent_index("i2"), Some(1));
        assert_eq!(inv.outside_index(), 0);
    }
}
