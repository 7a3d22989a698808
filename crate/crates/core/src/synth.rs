//! Seeded synthetic chunked corpora from a small English-like grammar.
//!
//! Most sentences use a handful of frequent noun-phrase shapes that a
//! chunker learns from a few dozen examples. The rest carry one of many
//! rare constructions: participles and adverbs inside noun phrases,
//! coordinated nouns, possessives, double objects, and time nouns such as
//! `yesterday` that start a new chunk straight after a noun. The time
//! nouns follow a Zipf distribution, so each needs its own lexical rule
//! and the rarest are seen only a few times in a thousand sentences.
//! Some tokens also get a wrong part-of-speech tag.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkTag, LabeledSentence, Labeling, Sentence, SentenceId, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Chance that a sentence carries a rare construction.
    pub rare_rate: f64,
    /// Chance that a token's part-of-speech tag is replaced by a
    /// plausible wrong one.
    pub pos_noise: f64,
    pub first_id: SentenceId,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 2000,
            seed: 0,
            rare_rate: 0.45,
            pos_noise: 0.01,
            first_id: 0,
        }
    }
}

const DT: &[&str] = &["the", "a", "this", "every", "some", "that"];
const NN: &[&str] = &[
    "dog", "company", "report", "market", "price", "plan", "city", "water", "year", "group",
    "game", "teacher", "letter", "house", "road", "family", "bank", "council", "school", "car",
];
const NNS: &[&str] = &[
    "dogs",
    "companies",
    "reports",
    "prices",
    "plans",
    "people",
    "shares",
    "students",
    "games",
    "cars",
    "banks",
    "letters",
];
const NNP: &[&str] = &[
    "Smith", "Boston", "Acme", "Jones", "Paris", "Tokyo", "Mary", "Texas",
];
const JJ: &[&str] = &[
    "big", "new", "old", "small", "strong", "local", "early", "large", "red", "main", "happy",
];
const PRP: &[&str] = &["he", "she", "it", "they", "we"];
const VBD: &[&str] = &[
    "saw", "bought", "sold", "found", "made", "took", "left", "liked",
];
const VBZ: &[&str] = &["sees", "buys", "sells", "finds", "makes", "takes", "likes"];
const COPULA: &[(&str, &str)] = &[
    ("is", "VBZ"),
    ("was", "VBD"),
    ("seems", "VBZ"),
    ("seemed", "VBD"),
];
const VBG: &[&str] = &[
    "running", "growing", "rising", "falling", "working", "leading",
];
const VBN: &[&str] = &[
    "published",
    "expected",
    "reported",
    "used",
    "printed",
    "planned",
];
const IN: &[&str] = &["in", "on", "of", "with", "for", "at", "from", "near"];
const RB_OUT: &[&str] = &["quickly", "often", "slowly", "again"];
const RB_IN: &[&str] = &["very", "quite", "really", "fairly"];
const CD: &[&str] = &["two", "three", "ten", "45", "100"];
/// Nouns that form a chunk of their own right after another noun.
const TIME_NOUNS: &[&str] = &[
    "yesterday",
    "today",
    "tomorrow",
    "tonight",
    "monday",
    "friday",
    "sunday",
    "morning",
    "afternoon",
    "weekend",
    "recently",
    "overnight",
    "annually",
    "daily",
    "twice",
    "downtown",
    "abroad",
    "upstairs",
    "midday",
    "midnight",
    "lately",
    "meanwhile",
    "anyway",
    "nowadays",
];

struct Builder {
    tokens: Vec<Token>,
    tags: Vec<ChunkTag>,
}

impl Builder {
    fn chunk(&mut self, words: &[(&str, &str)]) {
        let follows_chunk = self.tags.last().is_some_and(|t| t.in_chunk());
        for (i, (w, p)) in words.iter().enumerate() {
            self.tokens.push(Token::new(*w, *p));
            self.tags.push(if i == 0 && follows_chunk {
                ChunkTag::B
            } else {
                ChunkTag::I
            });
        }
    }

    fn out(&mut self, w: &str, p: &str) {
        self.tokens.push(Token::new(w, p));
        self.tags.push(ChunkTag::O);
    }
}

fn pick<'a, R: Rng>(rng: &mut R, list: &[&'a str]) -> &'a str {
    list[rng.random_range(0..list.len())]
}

/// One of the frequent noun-phrase shapes.
fn common_np<R: Rng>(rng: &mut R, b: &mut Builder) {
    match rng.random_range(0..8) {
        0 | 1 => b.chunk(&[fill(rng, "DT"), fill(rng, "NN")]),
        2 => b.chunk(&[fill(rng, "DT"), fill(rng, "JJ"), fill(rng, "NN")]),
        3 => b.chunk(&[fill(rng, "NNP")]),
        4 => b.chunk(&[fill(rng, "PRP")]),
        5 => b.chunk(&[fill(rng, "JJ"), fill(rng, "NNS")]),
        6 => b.chunk(&[fill(rng, "DT"), fill(rng, "NN"), fill(rng, "NN")]),
        _ => b.chunk(&[fill(rng, "CD"), fill(rng, "NNS")]),
    }
}

/// Object noun phrase that never ends in a pronoun or proper noun, so a
/// following time noun always comes after a common noun.
fn noun_np<R: Rng>(rng: &mut R, b: &mut Builder) {
    match rng.random_range(0..3) {
        0 => b.chunk(&[fill(rng, "DT"), fill(rng, "NN")]),
        1 => b.chunk(&[fill(rng, "DT"), fill(rng, "JJ"), fill(rng, "NN")]),
        _ => b.chunk(&[fill(rng, "DT"), fill(rng, "NN"), fill(rng, "NN")]),
    }
}

fn fill<R: Rng>(rng: &mut R, pos: &'static str) -> (&'static str, &'static str) {
    let list = match pos {
        "DT" => DT,
        "NN" => NN,
        "NNS" => NNS,
        "NNP" => NNP,
        "JJ" => JJ,
        "PRP" => PRP,
        "VBD" => VBD,
        "VBZ" => VBZ,
        "VBG" => VBG,
        "VBN" => VBN,
        "IN" => IN,
        "CD" => CD,
        _ => unreachable!("no word list for {pos}"),
    };
    (pick(rng, list), pos)
}

fn verb<R: Rng>(rng: &mut R, b: &mut Builder) {
    let (w, p) = if rng.random_bool(0.5) {
        fill(rng, "VBD")
    } else {
        fill(rng, "VBZ")
    };
    b.out(w, p);
}

#[derive(Clone, Copy)]
enum Rare {
    GerundInNp,
    ParticipleInNp,
    AdverbInNp,
    Coordination,
    Possessive,
    DoubleObject,
    PredicateAfterPast,
    TimeNoun,
}

const RARE: &[(Rare, u32)] = &[
    (Rare::GerundInNp, 3),
    (Rare::ParticipleInNp, 3),
    (Rare::AdverbInNp, 2),
    (Rare::Coordination, 2),
    (Rare::Possessive, 2),
    (Rare::DoubleObject, 2),
    (Rare::PredicateAfterPast, 2),
    (Rare::TimeNoun, 10),
];

fn rare<R: Rng>(rng: &mut R, b: &mut Builder, kind: Rare, time_words: &WeightedIndex<f64>) {
    match kind {
        Rare::GerundInNp => {
            common_np(rng, b);
            verb(rng, b);
            b.chunk(&[fill(rng, "DT"), fill(rng, "VBG"), fill(rng, "NN")]);
        }
        Rare::ParticipleInNp => {
            b.chunk(&[fill(rng, "DT"), fill(rng, "VBN"), fill(rng, "NNS")]);
            verb(rng, b);
            common_np(rng, b);
        }
        Rare::AdverbInNp => {
            common_np(rng, b);
            verb(rng, b);
            b.chunk(&[(pick(rng, RB_IN), "RB"), fill(rng, "JJ"), fill(rng, "NNS")]);
        }
        Rare::Coordination => {
            b.chunk(&[fill(rng, "NNS"), ("and", "CC"), fill(rng, "NNS")]);
            verb(rng, b);
            common_np(rng, b);
        }
        Rare::Possessive => {
            b.chunk(&[fill(rng, "DT"), fill(rng, "NN"), ("'s", "POS")]);
            b.chunk(&[fill(rng, "NN")]);
            verb(rng, b);
            common_np(rng, b);
        }
        Rare::DoubleObject => {
            common_np(rng, b);
            b.out(pick(rng, &["gave", "sent", "showed"]), "VBD");
            b.chunk(&[fill(rng, "PRP")]);
            b.chunk(&[fill(rng, "DT"), fill(rng, "NN")]);
        }
        Rare::PredicateAfterPast => {
            common_np(rng, b);
            b.out(pick(rng, &["looked", "seemed", "became", "stayed"]), "VBD");
            let (w, p) = fill(rng, "JJ");
            b.out(w, p);
        }
        Rare::TimeNoun => {
            common_np(rng, b);
            verb(rng, b);
            noun_np(rng, b);
            b.chunk(&[(TIME_NOUNS[time_words.sample(rng)], "NN")]);
        }
    }
}

fn common<R: Rng>(rng: &mut R, b: &mut Builder) {
    common_np(rng, b);
    match rng.random_range(0..10) {
        0..=5 => {
            verb(rng, b);
            common_np(rng, b);
        }
        6 | 7 => {
            let (w, p) = COPULA[rng.random_range(0..COPULA.len())];
            if p == "VBZ" {
                b.out(w, p);
                let (w, p) = fill(rng, "JJ");
                b.out(w, p);
            } else {
                b.out(w, p);
                common_np(rng, b);
            }
        }
        _ => {
            let (w, p) = fill(rng, "VBZ");
            b.out(w, p);
            b.out(pick(rng, RB_OUT), "RB");
        }
    }
    if rng.random_bool(0.35) {
        let (w, p) = fill(rng, "IN");
        b.out(w, p);
        common_np(rng, b);
    }
    if rng.random_bool(0.15) {
        b.out("and", "CC");
        verb(rng, b);
        common_np(rng, b);
    }
}

fn confusable(pos: &str) -> Option<&'static str> {
    Some(match pos {
        "NN" => "VB",
        "JJ" => "NN",
        "VBD" => "VBN",
        "VBN" => "VBD",
        "VBG" => "NN",
        "RB" => "JJ",
        _ => return None,
    })
}

/// Generates `config.sentences` chunked sentences with consecutive ids.
pub fn generate(config: &SynthConfig) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kinds = WeightedIndex::new(RARE.iter().map(|(_, w)| *w)).expect("positive weights");
    let time_words = WeightedIndex::new((1..=TIME_NOUNS.len()).map(|r| 1.0 / r as f64))
        .expect("positive weights");
    (0..config.sentences)
        .map(|i| {
            let mut b = Builder {
                tokens: Vec::new(),
                tags: Vec::new(),
            };
            if rng.random_bool(config.rare_rate) {
                let kind = RARE[kinds.sample(&mut rng)].0;
                rare(&mut rng, &mut b, kind, &time_words);
            } else {
                common(&mut rng, &mut b);
            }
            b.out(".", ".");
            for t in &mut b.tokens {
                if let Some(wrong) = confusable(&t.pos) {
                    if rng.random_bool(config.pos_noise) {
                        t.pos = wrong.to_string();
                    }
                }
            }
            let id = config.first_id + i as SentenceId;
            (
                Sentence::new(id, b.tokens),
                Labeling::new(b.tags).expect("builder emits valid tags"),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{emit_conll, parse_conll};

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig {
            sentences: 300,
            seed: 7,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_ne!(
            a,
            generate(&SynthConfig {
                seed: 8,
                ..cfg.clone()
            })
        );
        for (i, (s, l)) in a.iter().enumerate() {
            assert_eq!(s.id as usize, i);
            assert_eq!(s.len(), l.len());
        }
        let text = emit_conll(a.iter().map(|(s, l)| (s, l)));
        assert_eq!(parse_conll(&text).unwrap(), a);
    }

    #[test]
    fn time_nouns_start_chunks() {
        let cfg = SynthConfig {
            sentences: 500,
            pos_noise: 0.0,
            ..SynthConfig::default()
        };
        let mut seen = 0;
        for (s, l) in generate(&cfg) {
            for (i, t) in s.tokens.iter().enumerate() {
                if TIME_NOUNS.contains(&t.word.as_str()) {
                    seen += 1;
                    assert_eq!(l.tags()[i], ChunkTag::B);
                    assert_eq!(s.tokens[i - 1].pos, "NN");
                }
            }
        }
        assert!(seen > 20);
    }
}
