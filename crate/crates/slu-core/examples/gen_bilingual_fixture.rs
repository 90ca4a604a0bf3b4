//! Regenerates the committed synthetic bilingual fixture under
//! `tests/fixtures/bilingual/`.
//!
//! The fixture is a zero-shot transfer problem between two toy languages:
//! a source language of English-looking command utterances and a target
//! language related to it by the deterministic word bijection `w -> w + "o"`.
//! Training data carries slot labels only in the source language; the
//! target language appears in training only as intent-only translation
//! partners (matched by example id). Dev is source-language; the labeled
//! test set is target-language, so test scores measure zero-shot transfer.
//!
//! The subword inventory is written alongside the data: every source word,
//! the target suffix, and every single character, with uniform
//! probabilities. Target words therefore segment canonically as
//! `[stem][suffix]`, sharing their first piece with the source word.
//!
//! Output files: `train_src.jsonl`, `mt_intent_only.jsonl`,
//! `dev_src.jsonl`, `test_tgt.jsonl`, `subword.tsv`. Run from the
//! workspace root:
//!
//! ```text
//! cargo run -p slu-core --example gen_bilingual_fixture
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{RngExt as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slu_core::align::{write_intent_only, IntentOnlyRecord};
use slu_core::corpus::{Dataset, Example};
use slu_core::subword::SubwordModel;

/// Suffix the word bijection appends to every source word. The letter is
/// chosen to appear in no source word, so its embedding is only ever
/// trained through target-language (machine-translation) views — removing
/// those views leaves it at initialization, which is exactly the handicap
/// the ablation tests look for.
const TARGET_SUFFIX: &str = "x";

/// A template token: a fixed word or a slot placeholder.
enum Tok {
    W(&'static str),
    S(&'static str),
}
use Tok::{S, W};

struct IntentSpec {
    intent: &'static str,
    templates: &'static [&'static [Tok]],
}

const TIME: &[&str] = &["five", "three", "seven", "eight", "nine", "noon", "dawn", "dusk"];
const DATE: &[&str] = &["monday", "tuesday", "friday", "sunday", "today", "tomorrow"];
const GENRE: &[&str] = &["jazz", "rock", "pop", "blues", "folk", "metal"];
const CITY: &[&str] = &["paris", "tokyo", "berlin", "oslo", "cairo", "lima"];
const DURATION: &[&str] = &["ten", "twenty", "thirty", "forty", "fifty"];
const ROOM: &[&str] = &["kitchen", "bedroom", "hall", "garage", "attic"];

fn slot_pool(slot: &str) -> &'static [&'static str] {
    match slot {
        "time" => TIME,
        "date" => DATE,
        "genre" => GENRE,
        "city" => CITY,
        "duration" => DURATION,
        "room" => ROOM,
        other => panic!("unknown slot type {other}"),
    }
}

const INTENTS: &[IntentSpec] = &[
    IntentSpec {
        intent: "set_alarm",
        templates: &[
            &[W("wake"), W("me"), W("at"), S("time")],
            &[W("set"), W("alarm"), W("for"), S("time"), W("on"), S("date")],
            &[W("alarm"), W("at"), S("time"), S("date")],
        ],
    },
    IntentSpec {
        intent: "play_music",
        templates: &[
            &[W("play"), S("genre")],
            &[W("play"), W("some"), S("genre"), W("music")],
            &[W("queue"), W("up"), S("genre")],
        ],
    },
    IntentSpec {
        intent: "get_weather",
        templates: &[
            &[W("weather"), W("in"), S("city")],
            &[W("forecast"), W("for"), S("city"), W("on"), S("date")],
            &[W("is"), W("it"), W("cold"), W("in"), S("city")],
        ],
    },
    IntentSpec {
        intent: "set_timer",
        templates: &[
            &[W("timer"), W("for"), S("duration"), W("minutes")],
            &[W("count"), W("down"), S("duration")],
            &[W("start"), W("a"), S("duration"), W("minute"), W("timer")],
        ],
    },
    IntentSpec {
        intent: "control_light",
        templates: &[
            &[W("dim"), W("the"), W("light"), W("in"), S("room")],
            &[W("turn"), W("off"), S("room"), W("light")],
            &[W("brighten"), S("room")],
        ],
    },
];

fn target_word(word: &str) -> String {
    format!("{word}{TARGET_SUFFIX}")
}

/// One generated utterance, in source-language words and labels.
fn generate(rng: &mut ChaCha8Rng, intent_index: usize) -> (Vec<String>, Vec<String>, &'static str) {
    let spec = &INTENTS[intent_index];
    let template = spec.templates[rng.random_range(0..spec.templates.len())];
    let mut words = Vec::with_capacity(template.len());
    let mut slots = Vec::with_capacity(template.len());
    for tok in template {
        match tok {
            W(w) => {
                words.push(w.to_string());
                slots.push("O".to_string());
            }
            S(slot) => {
                let pool = slot_pool(slot);
                words.push(pool[rng.random_range(0..pool.len())].to_string());
                slots.push(slot.to_string());
            }
        }
    }
    (words, slots, spec.intent)
}

fn source_example(id: u64, words: Vec<String>, slots: Vec<String>, intent: &str) -> Example {
    Example { id, locale: "src".into(), words, slots, intent: intent.into() }
}

fn all_source_words() -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for spec in INTENTS {
        for template in spec.templates {
            for tok in *template {
                match tok {
                    W(w) => {
                        words.insert(w.to_string());
                    }
                    S(slot) => words.extend(slot_pool(slot).iter().map(|s| s.to_string())),
                }
            }
        }
    }
    words
}

fn build_subword_model() -> SubwordModel {
    let mut pieces: BTreeSet<String> = all_source_words();
    pieces.insert(TARGET_SUFFIX.to_string());
    let chars: BTreeSet<String> = pieces
        .iter()
        .flat_map(|p| p.chars())
        .map(|c| c.to_string())
        .collect();
    pieces.extend(chars);
    let logprob = -(pieces.len() as f64).ln();
    SubwordModel::new(pieces.into_iter().map(|p| (p, logprob)).collect())
        .expect("uniform inventory normalizes")
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bilingual");
    std::fs::create_dir_all(&dir).expect("create fixture directory");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut train = Vec::new();
    let mut partners = Vec::new();
    for id in 0..500u64 {
        let (words, slots, intent) = generate(&mut rng, id as usize % INTENTS.len());
        let target_text = words.iter().map(|w| target_word(w)).collect::<Vec<_>>().join(" ");
        train.push(source_example(id, words, slots, intent));
        partners.push(IntentOnlyRecord {
            id,
            locale: "tgt".into(),
            text: target_text,
            intent: intent.into(),
        });
    }
    let mut dev = Vec::new();
    for id in 500..600u64 {
        let (words, slots, intent) = generate(&mut rng, id as usize % INTENTS.len());
        dev.push(source_example(id, words, slots, intent));
    }
    let mut test = Vec::new();
    for id in 600..700u64 {
        let (words, slots, intent) = generate(&mut rng, id as usize % INTENTS.len());
        let target_words = words.iter().map(|w| target_word(w)).collect();
        test.push(Example {
            id,
            locale: "tgt".into(),
            words: target_words,
            slots,
            intent: intent.into(),
        });
    }

    let train = Dataset::from_examples(train).expect("train fixture is valid");
    let dev = Dataset::from_examples(dev).expect("dev fixture is valid");
    let test = Dataset::from_examples(test).expect("test fixture is valid");
    train.save(dir.join("train_src.jsonl")).expect("write train");
    dev.save(dir.join("dev_src.jsonl")).expect("write dev");
    test.save(dir.join("test_tgt.jsonl")).expect("write test");
    let file = std::fs::File::create(dir.join("mt_intent_only.jsonl")).expect("create partners");
    write_intent_only(std::io::BufWriter::new(file), &partners).expect("write partners");

    let subword = build_subword_model();
    subword.save(&dir.join("subword.tsv")).expect("write subword model");

    println!(
        "wrote {} train / {} dev / {} test examples, {} intent-only partners, {} pieces to {}",
        train.len(),
        dev.len(),
        test.len(),
        partners.len(),
        subword.num_pieces(),
        dir.display()
    );
}
