//! Transformation-based chunker.
//!
//! A [`Chunker`] tags every token with its POS tag's most frequent chunk
//! tag, then rewrites tags with an ordered list of [`TransformRule`]s.
//! Each rule is swept once over the sentence from left to right and
//! rewrites in place, so tests on chunk tags to the left of the current
//! token see rewrites already made in the same sweep while tests to the
//! right see the tags from before the sweep.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_iob, ChunkTag, Labeling, Sentence};
use crate::metrics::{f_beta, pr_counts, Beta, PrCounts};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TblError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("sentence {id}: {tokens} tokens but {tags} tags")]
    Misaligned { id: u32, tokens: usize, tags: usize },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

fn format_err(line: usize, msg: impl Into<String>) -> TblError {
    TblError::Format {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    Word,
    Pos,
    Chunk,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Word => "word",
            Feature::Pos => "pos",
            Feature::Chunk => "chunk",
        }
    }

    fn parse(s: &str) -> Option<Feature> {
        match s {
            "word" => Some(Feature::Word),
            "pos" => Some(Feature::Pos),
            "chunk" => Some(Feature::Chunk),
            _ => None,
        }
    }
}

/// The context a rule may test: one or two (feature, offset) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: u8,
    pub tests: &'static [(Feature, i8)],
}

impl Template {
    fn is_static(&self) -> bool {
        self.tests.iter().all(|(f, _)| *f != Feature::Chunk)
    }
}

macro_rules! templates {
    ($($id:literal => [$(($f:ident, $o:literal)),+]),+ $(,)?) => {
        &[$(Template { id: $id, tests: &[$((Feature::$f, $o)),+] }),+]
    };
}

/// Every template, in id order. Tests inside a template are already in
/// canonical (feature, offset) order.
pub const TEMPLATES: &[Template] = templates![
    0 => [(Chunk, -1)],
    1 => [(Chunk, -2), (Chunk, -1)],
    2 => [(Chunk, 1)],
    3 => [(Chunk, 1), (Chunk, 2)],
    4 => [(Chunk, -1), (Chunk, 1)],
    5 => [(Pos, 0)],
    6 => [(Pos, -1)],
    7 => [(Pos, 1)],
    8 => [(Pos, -1), (Pos, 0)],
    9 => [(Pos, 0), (Pos, 1)],
    10 => [(Pos, -2), (Pos, -1)],
    11 => [(Pos, 1), (Pos, 2)],
    12 => [(Pos, -1), (Pos, 1)],
    13 => [(Word, 0)],
    14 => [(Word, -1)],
    15 => [(Word, 1)],
    16 => [(Word, -1), (Word, 0)],
    17 => [(Word, 0), (Word, 1)],
    18 => [(Word, 0), (Pos, -1)],
    19 => [(Word, 0), (Pos, 1)],
];

pub fn template(id: u8) -> Option<&'static Template> {
    TEMPLATES.get(id as usize)
}

/// Value a condition compares against. Offsets past either sentence edge
/// only match [`Value::Boundary`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Boundary,
    Text(String),
    Tag(ChunkTag),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub feature: Feature,
    pub offset: i8,
    pub value: Value,
}

impl Condition {
    fn holds(&self, sentence: &Sentence, tags: &[ChunkTag], i: usize) -> bool {
        let j = i as isize + self.offset as isize;
        if j < 0 || j as usize >= tags.len() {
            return self.value == Value::Boundary;
        }
        let j = j as usize;
        match (&self.value, self.feature) {
            (Value::Text(v), Feature::Word) => sentence.tokens[j].word == *v,
            (Value::Text(v), Feature::Pos) => sentence.tokens[j].pos == *v,
            (Value::Tag(t), Feature::Chunk) => tags[j] == *t,
            _ => false,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]=", self.feature.as_str(), self.offset)?;
        match &self.value {
            Value::Boundary => Ok(()),
            Value::Text(s) => f.write_str(s),
            Value::Tag(t) => f.write_str(t.as_str()),
        }
    }
}

/// Rewrites `from` to `to` at the current token when every condition holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformRule {
    pub template: u8,
    pub conditions: Vec<Condition>,
    pub from: ChunkTag,
    pub to: ChunkTag,
}

impl TransformRule {
    /// Applies one left-to-right sweep in place.
    pub fn apply(&self, sentence: &Sentence, tags: &mut [ChunkTag]) -> usize {
        let mut changed = 0;
        for i in 0..tags.len() {
            if tags[i] == self.from && self.conditions.iter().all(|c| c.holds(sentence, tags, i)) {
                tags[i] = self.to;
                changed += 1;
            }
        }
        changed
    }

    /// Parses the canonical form produced by `Display`.
    pub fn parse(text: &str) -> Result<TransformRule, TblError> {
        parse_rule(text, 0)
    }
}

impl fmt::Display for TransformRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{:02}", self.template)?;
        for c in &self.conditions {
            write!(f, " {c}")?;
        }
        write!(f, " {}>{}", self.from, self.to)
    }
}

fn parse_rule(text: &str, line: usize) -> Result<TransformRule, TblError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() < 3 {
        return Err(format_err(
            line,
            "rule needs a template, conditions and an action",
        ));
    }
    let template_id: u8 = parts[0]
        .strip_prefix('t')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(line, format!("bad template id `{}`", parts[0])))?;
    let tpl = template(template_id)
        .ok_or_else(|| format_err(line, format!("unknown template {template_id}")))?;

    let action = parts[parts.len() - 1];
    let (from, to) = action
        .split_once('>')
        .and_then(|(a, b)| Some((ChunkTag::parse(a)?, ChunkTag::parse(b)?)))
        .ok_or_else(|| format_err(line, format!("bad action `{action}`")))?;
    if from == to {
        return Err(format_err(line, "action does not change the tag"));
    }

    let tests = &parts[1..parts.len() - 1];
    if tests.len() != tpl.tests.len() {
        return Err(format_err(line, "condition count does not match template"));
    }
    let mut conditions = Vec::with_capacity(tests.len());
    for (raw, &(feature, offset)) in tests.iter().zip(tpl.tests) {
        let bad = || format_err(line, format!("bad condition `{raw}`"));
        let (head, value) = raw.split_once("]=").ok_or_else(bad)?;
        let (fname, off) = head.split_once('[').ok_or_else(bad)?;
        let f = Feature::parse(fname).ok_or_else(bad)?;
        let o: i8 = off.parse().map_err(|_| bad())?;
        if f != feature || o != offset {
            return Err(format_err(
                line,
                format!("condition `{raw}` does not fit template {template_id}"),
            ));
        }
        let value = match (value, f) {
            ("", _) => Value::Boundary,
            (v, Feature::Chunk) => Value::Tag(ChunkTag::parse(v).ok_or_else(bad)?),
            (v, _) => Value::Text(v.to_string()),
        };
        conditions.push(Condition {
            feature: f,
            offset: o,
            value,
        });
    }
    Ok(TransformRule {
        template: template_id,
        conditions,
        from,
        to,
    })
}

/// Baseline tagger: POS tag → most frequent chunk tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialAnnotator {
    pub map: BTreeMap<String, ChunkTag>,
    pub default: ChunkTag,
}

impl Default for InitialAnnotator {
    fn default() -> Self {
        InitialAnnotator {
            map: BTreeMap::new(),
            default: ChunkTag::O,
        }
    }
}

impl InitialAnnotator {
    pub fn tag(&self, pos: &str) -> ChunkTag {
        self.map.get(pos).copied().unwrap_or(self.default)
    }

    pub fn annotate(&self, sentence: &Sentence) -> Vec<ChunkTag> {
        sentence.tokens.iter().map(|t| self.tag(&t.pos)).collect()
    }
}

/// Counts chunk tags per POS tag (`B` counts as `I`); ties go to `I`.
pub fn train_initial<'a, I>(training: I) -> Result<InitialAnnotator, TblError>
where
    I: IntoIterator<Item = (&'a Sentence, &'a Labeling)>,
{
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut seen = false;
    for (sentence, labeling) in training {
        seen = true;
        check_len(sentence, labeling)?;
        for (tok, tag) in sentence.tokens.iter().zip(labeling.tags()) {
            let entry = counts.entry(tok.pos.as_str()).or_default();
            if tag.in_chunk() {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
    }
    if !seen {
        return Err(TblError::EmptyTraining);
    }
    let map = counts
        .into_iter()
        .map(|(pos, (inside, outside))| {
            let tag = if inside >= outside {
                ChunkTag::I
            } else {
                ChunkTag::O
            };
            (pos.to_string(), tag)
        })
        .collect();
    Ok(InitialAnnotator {
        map,
        default: ChunkTag::O,
    })
}

fn check_len(sentence: &Sentence, labeling: &Labeling) -> Result<(), TblError> {
    if sentence.len() != labeling.len() {
        return Err(TblError::Misaligned {
            id: sentence.id,
            tokens: sentence.len(),
            tags: labeling.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Chunker {
    pub initial: InitialAnnotator,
    pub rules: Vec<TransformRule>,
}

impl Chunker {
    /// Raw tags after the baseline and every rule, before IOB1 repair.
    pub fn raw_tags(&self, sentence: &Sentence) -> Vec<ChunkTag> {
        let mut tags = self.initial.annotate(sentence);
        for rule in &self.rules {
            rule.apply(sentence, &mut tags);
        }
        tags
    }

    pub fn apply(&self, sentence: &Sentence) -> Labeling {
        let mut tags = self.raw_tags(sentence);
        normalize_iob(&mut tags);
        Labeling::new(tags).expect("normalized tags are valid IOB1")
    }

    /// Text form: `default TAG`, one `POS TAG` line per baseline entry, a
    /// blank line, then one rule per line in application order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "default {}", self.initial.default);
        for (pos, tag) in &self.initial.map {
            let _ = writeln!(out, "{pos} {tag}");
        }
        out.push('\n');
        for rule in &self.rules {
            let _ = writeln!(out, "{rule}");
        }
        out
    }

    pub fn deserialize(text: &str) -> Result<Chunker, TblError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .skip_while(|(_, l)| l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| format_err(1, "missing header"))?;
        let default = header
            .strip_prefix("default ")
            .and_then(|t| ChunkTag::parse(t.trim()))
            .ok_or_else(|| format_err(1, "expected `default TAG`"))?;
        if default == ChunkTag::B {
            return Err(format_err(1, "B is not a baseline tag"));
        }
        let mut map = BTreeMap::new();
        let mut saw_blank = false;
        for (n, line) in lines.by_ref() {
            if line.trim().is_empty() {
                saw_blank = true;
                break;
            }
            let mut it = line.split_whitespace();
            let (Some(pos), Some(tag), None) = (it.next(), it.next(), it.next()) else {
                return Err(format_err(n, "expected `POS TAG`"));
            };
            let tag = ChunkTag::parse(tag)
                .filter(|t| *t != ChunkTag::B)
                .ok_or_else(|| format_err(n, format!("bad baseline tag `{tag}`")))?;
            map.insert(pos.to_string(), tag);
        }
        if !saw_blank {
            return Err(format_err(
                text.lines().count() + 1,
                "missing blank line before rules",
            ));
        }
        let mut rules = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            rules.push(parse_rule(line, n)?);
        }
        Ok(Chunker {
            initial: InitialAnnotator { map, default },
            rules,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TblConfig {
    /// Template ids to instantiate.
    pub templates: Vec<u8>,
    /// Minimum net error reduction for a rule to be accepted.
    pub score_threshold: f64,
    pub max_rules: usize,
}

impl Default for TblConfig {
    fn default() -> Self {
        TblConfig {
            templates: TEMPLATES.iter().map(|t| t.id).collect(),
            score_threshold: 2.0,
            max_rules: 500,
        }
    }
}

/// Bookkeeping for one accepted rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleStep {
    pub score: i64,
    pub errors_before: usize,
    pub errors_after: usize,
    pub f_before: f64,
    pub f_after: f64,
}

pub fn learn_rules<'a, I>(training: I, config: &TblConfig) -> Result<Chunker, TblError>
where
    I: IntoIterator<Item = (&'a Sentence, &'a Labeling)>,
{
    learn_rules_traced(training, config).map(|(c, _)| c)
}

/// Greedy rule learning that also reports per-rule statistics.
pub fn learn_rules_traced<'a, I>(
    training: I,
    config: &TblConfig,
) -> Result<(Chunker, Vec<RuleStep>), TblError>
where
    I: IntoIterator<Item = (&'a Sentence, &'a Labeling)>,
{
    let data: Vec<(&Sentence, &Labeling)> = training.into_iter().collect();
    for (s, l) in &data {
        check_len(s, l)?;
    }
    let initial = train_initial(data.iter().copied())?;
    let mut learner = Learner::new(&data, &initial, config);
    let (rules, steps) = learner.run();
    Ok((Chunker { initial, rules }, steps))
}

const BOUNDARY: u32 = 0;

#[inline]
fn tag_code(t: ChunkTag) -> u32 {
    match t {
        ChunkTag::I => 1,
        ChunkTag::O => 2,
        ChunkTag::B => 3,
    }
}

fn tag_of_code(c: u32) -> ChunkTag {
    match c {
        1 => ChunkTag::I,
        2 => ChunkTag::O,
        _ => ChunkTag::B,
    }
}

/// Rule with interned values: (template, value, value, from, to).
type RuleKey = (u8, u32, u32, ChunkTag, ChunkTag);

#[derive(Default)]
struct Vocab {
    ids: BTreeMap<String, u32>,
    strings: Vec<String>,
}

impl Vocab {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        self.strings.push(s.to_string());
        let id = self.strings.len() as u32;
        self.ids.insert(s.to_string(), id);
        id
    }

    fn get(&self, id: u32) -> &str {
        &self.strings[id as usize - 1]
    }
}

struct Learner<'c> {
    config: &'c TblConfig,
    templates: Vec<&'static Template>,
    vocab: Vocab,
    /// Sentence start offsets into the flat arrays; `starts[k+1]` ends it.
    starts: Vec<usize>,
    words: Vec<u32>,
    pos: Vec<u32>,
    gold: Vec<ChunkTag>,
    cur: Vec<ChunkTag>,
    gold_spans: Vec<Vec<crate::corpus::ChunkSpan>>,
    counts: Vec<PrCounts>,
    /// Positions for every instantiation of a word/POS template.
    index: BTreeMap<(u8, u32, u32), Vec<u32>>,
    sentence_of: Vec<u32>,
}

impl<'c> Learner<'c> {
    fn new(
        data: &[(&Sentence, &Labeling)],
        initial: &InitialAnnotator,
        config: &'c TblConfig,
    ) -> Self {
        let mut ids: Vec<u8> = config.templates.clone();
        ids.sort_unstable();
        ids.dedup();
        let templates: Vec<&'static Template> = ids.iter().filter_map(|&id| template(id)).collect();

        let mut vocab = Vocab::default();
        let mut starts = Vec::with_capacity(data.len() + 1);
        let mut words = Vec::new();
        let mut pos = Vec::new();
        let mut gold = Vec::new();
        let mut cur = Vec::new();
        let mut gold_spans = Vec::with_capacity(data.len());
        let mut sentence_of = Vec::new();
        for (k, (s, l)) in data.iter().enumerate() {
            starts.push(words.len());
            for t in &s.tokens {
                words.push(vocab.intern(&t.word));
                pos.push(vocab.intern(&t.pos));
                cur.push(initial.tag(&t.pos));
                sentence_of.push(k as u32);
            }
            gold.extend_from_slice(l.tags());
            gold_spans.push(l.spans());
        }
        starts.push(words.len());

        let mut learner = Learner {
            config,
            templates,
            vocab,
            starts,
            words,
            pos,
            gold,
            cur,
            gold_spans,
            counts: Vec::new(),
            index: BTreeMap::new(),
            sentence_of,
        };
        learner.counts = (0..data.len())
            .map(|k| learner.sentence_counts(k, None))
            .collect();
        learner.build_index();
        learner
    }

    fn build_index(&mut self) {
        let statics: Vec<&'static Template> = self
            .templates
            .iter()
            .copied()
            .filter(|t| t.is_static())
            .collect();
        for k in 0..self.starts.len() - 1 {
            let (lo, hi) = (self.starts[k], self.starts[k + 1]);
            for p in lo..hi {
                for t in &statics {
                    let (a, b) = self.values(t, lo, hi, p, &self.cur[lo..hi]);
                    self.index.entry((t.id, a, b)).or_default().push(p as u32);
                }
            }
        }
    }

    #[inline]
    fn value(
        &self,
        feature: Feature,
        lo: usize,
        hi: usize,
        p: usize,
        off: i8,
        tags: &[ChunkTag],
    ) -> u32 {
        let j = p as isize + off as isize;
        if j < lo as isize || j >= hi as isize {
            return BOUNDARY;
        }
        let j = j as usize;
        match feature {
            Feature::Word => self.words[j],
            Feature::Pos => self.pos[j],
            Feature::Chunk => tag_code(tags[j - lo]),
        }
    }

    #[inline]
    fn values(
        &self,
        t: &Template,
        lo: usize,
        hi: usize,
        p: usize,
        tags: &[ChunkTag],
    ) -> (u32, u32) {
        let a = self.value(t.tests[0].0, lo, hi, p, t.tests[0].1, tags);
        let b = match t.tests.get(1) {
            Some(&(f, o)) => self.value(f, lo, hi, p, o, tags),
            None => BOUNDARY,
        };
        (a, b)
    }

    fn sentence_counts(&self, k: usize, tags: Option<&[ChunkTag]>) -> PrCounts {
        let (lo, hi) = (self.starts[k], self.starts[k + 1]);
        let mut t: Vec<ChunkTag> = tags.unwrap_or(&self.cur[lo..hi]).to_vec();
        normalize_iob(&mut t);
        let spans = crate::corpus::iob_to_spans(&t).expect("normalized");
        pr_counts(&self.gold_spans[k], &spans)
    }

    fn errors(&self) -> usize {
        self.cur
            .iter()
            .zip(&self.gold)
            .filter(|(c, g)| c != g)
            .count()
    }

    fn total_f(&self) -> f64 {
        f_beta(self.counts.iter().copied().sum(), Beta::ONE)
    }

    fn min_score(&self) -> i64 {
        let t = self.config.score_threshold;
        if t.is_nan() || t == f64::INFINITY {
            return i64::MAX;
        }
        libm::ceil(t).max(1.0) as i64
    }

    fn run(&mut self) -> (Vec<TransformRule>, Vec<RuleStep>) {
        let mut rules = Vec::new();
        let mut steps = Vec::new();
        let min_score = self.min_score();
        let mut banned: BTreeSet<RuleKey> = BTreeSet::new();
        while rules.len() < self.config.max_rules && min_score != i64::MAX {
            let Some((key, score)) = self.best_rule(min_score, &banned) else {
                break;
            };
            let errors_before = self.errors();
            let f_before = self.total_f();
            let undo = self.apply_key(key);
            let f_after = self.total_f();
            if f_after + 1e-12 < f_before {
                self.revert(undo);
                banned.insert(key);
                continue;
            }
            banned.clear();
            let errors_after = self.errors();
            debug_assert_eq!(errors_before as i64 - errors_after as i64, score);
            rules.push(self.rule_of(key));
            steps.push(RuleStep {
                score,
                errors_before,
                errors_after,
                f_before,
                f_after,
            });
        }
        (rules, steps)
    }

    /// Highest-scoring rule, ties broken by the smallest canonical text.
    fn best_rule(&self, min_score: i64, banned: &BTreeSet<RuleKey>) -> Option<(RuleKey, i64)> {
        let mut good: BTreeMap<RuleKey, i64> = BTreeMap::new();
        // Upper bound on the gain of any rule with a given action.
        let mut action_bound: BTreeMap<(ChunkTag, ChunkTag), i64> = BTreeMap::new();
        for k in 0..self.starts.len() - 1 {
            let (lo, hi) = (self.starts[k], self.starts[k + 1]);
            let tags = &self.cur[lo..hi];
            for p in lo..hi {
                let (from, to) = (self.cur[p], self.gold[p]);
                if from == to {
                    continue;
                }
                *action_bound.entry((from, to)).or_default() += 1;
                for t in &self.templates {
                    let (a, b) = self.values(t, lo, hi, p, tags);
                    *good.entry((t.id, a, b, from, to)).or_default() += 1;
                }
            }
        }

        let mut statics: Vec<(RuleKey, i64)> = Vec::new();
        let mut dynamics: Vec<RuleKey> = Vec::new();
        for (key, g) in good {
            if banned.contains(&key) {
                continue;
            }
            let tpl = template(key.0).expect("known template");
            if tpl.is_static() {
                if g >= min_score {
                    statics.push((key, g));
                }
            } else {
                dynamics.push(key);
            }
        }
        statics.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut best = min_score;
        let mut ties: Vec<RuleKey> = Vec::new();
        let consider = |key: RuleKey, score: i64, best: &mut i64, ties: &mut Vec<RuleKey>| {
            if score > *best || (score == *best && ties.is_empty()) {
                *best = score;
                ties.clear();
                ties.push(key);
            } else if score == *best {
                ties.push(key);
            }
        };
        for (key, g) in statics {
            if g < best {
                break;
            }
            let score = self.static_score(key);
            if score >= best {
                consider(key, score, &mut best, &mut ties);
            }
        }
        for key in dynamics {
            let bound = action_bound.get(&(key.3, key.4)).copied().unwrap_or(0);
            if bound < best {
                continue;
            }
            let score = self.dynamic_score(key);
            if score >= best {
                consider(key, score, &mut best, &mut ties);
            }
        }
        if ties.is_empty() {
            return None;
        }
        let winner = ties
            .into_iter()
            .map(|k| (self.rule_of(k).to_string(), k))
            .min()
            .map(|(_, k)| k)?;
        Some((winner, best))
    }

    fn static_score(&self, key: RuleKey) -> i64 {
        let (tid, a, b, from, to) = key;
        let Some(positions) = self.index.get(&(tid, a, b)) else {
            return 0;
        };
        let mut score = 0;
        for &p in positions {
            let p = p as usize;
            if self.cur[p] != from {
                continue;
            }
            if self.gold[p] == to {
                score += 1;
            } else if self.gold[p] == from {
                score -= 1;
            }
        }
        score
    }

    fn fires(
        &self,
        t: &Template,
        key: RuleKey,
        lo: usize,
        hi: usize,
        p: usize,
        tags: &[ChunkTag],
    ) -> bool {
        tags[p - lo] == key.3 && self.values(t, lo, hi, p, tags) == (key.1, key.2)
    }

    /// Exact gain of a rule that tests chunk tags, by simulating its sweep.
    fn dynamic_score(&self, key: RuleKey) -> i64 {
        let tpl = template(key.0).expect("known template");
        let mut score = 0;
        let mut scratch: Vec<ChunkTag> = Vec::new();
        for k in 0..self.starts.len() - 1 {
            let (lo, hi) = (self.starts[k], self.starts[k + 1]);
            if !self.cur[lo..hi].contains(&key.3) {
                continue;
            }
            scratch.clear();
            scratch.extend_from_slice(&self.cur[lo..hi]);
            for p in lo..hi {
                if self.fires(tpl, key, lo, hi, p, &scratch) {
                    scratch[p - lo] = key.4;
                    if self.gold[p] == key.4 {
                        score += 1;
                    } else if self.gold[p] == key.3 {
                        score -= 1;
                    }
                }
            }
        }
        score
    }

    fn affected_sentences(&self, key: RuleKey) -> Vec<usize> {
        let tpl = template(key.0).expect("known template");
        if tpl.is_static() {
            let mut ks: Vec<usize> = self
                .index
                .get(&(key.0, key.1, key.2))
                .map(|ps| {
                    ps.iter()
                        .map(|&p| self.sentence_of[p as usize] as usize)
                        .collect()
                })
                .unwrap_or_default();
            ks.dedup();
            ks
        } else {
            (0..self.starts.len() - 1).collect()
        }
    }

    /// Applies a rule to the training state and returns what to restore.
    fn apply_key(&mut self, key: RuleKey) -> Vec<(usize, Vec<ChunkTag>, PrCounts)> {
        let tpl = template(key.0).expect("known template");
        let mut undo = Vec::new();
        for k in self.affected_sentences(key) {
            let (lo, hi) = (self.starts[k], self.starts[k + 1]);
            let mut tags = self.cur[lo..hi].to_vec();
            let mut changed = false;
            for p in lo..hi {
                if self.fires(tpl, key, lo, hi, p, &tags) {
                    tags[p - lo] = key.4;
                    changed = true;
                }
            }
            if changed {
                let old = self.cur[lo..hi].to_vec();
                self.cur[lo..hi].copy_from_slice(&tags);
                let counts = self.sentence_counts(k, None);
                undo.push((k, old, core::mem::replace(&mut self.counts[k], counts)));
            }
        }
        undo
    }

    fn revert(&mut self, undo: Vec<(usize, Vec<ChunkTag>, PrCounts)>) {
        for (k, tags, counts) in undo {
            let lo = self.starts[k];
            self.cur[lo..lo + tags.len()].copy_from_slice(&tags);
            self.counts[k] = counts;
        }
    }

    fn rule_of(&self, key: RuleKey) -> TransformRule {
        let tpl = template(key.0).expect("known template");
        let conditions = tpl
            .tests
            .iter()
            .zip([key.1, key.2])
            .map(|(&(feature, offset), v)| Condition {
                feature,
                offset,
                value: match (v, feature) {
                    (BOUNDARY, _) => Value::Boundary,
                    (c, Feature::Chunk) => Value::Tag(tag_of_code(c)),
                    (id, _) => Value::Text(self.vocab.get(id).to_string()),
                },
            })
            .collect();
        TransformRule {
            template: key.0,
            conditions,
            from: key.3,
            to: key.4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conll, Token};
    use alloc::vec;
    use ChunkTag::*;

    fn corpus(text: &str) -> Vec<(Sentence, Labeling)> {
        parse_conll(text).unwrap()
    }

    fn refs(c: &[(Sentence, Labeling)]) -> impl Iterator<Item = (&Sentence, &Labeling)> {
        c.iter().map(|(s, l)| (s, l))
    }

    #[test]
    fn template_inventory() {
        for (i, t) in TEMPLATES.iter().enumerate() {
            assert_eq!(t.id as usize, i);
            let mut sorted = t.tests.to_vec();
            sorted.sort();
            assert_eq!(sorted, t.tests, "template {i} not canonical");
            assert!(t.tests.iter().all(|(_, o)| (-3..=3).contains(o)));
        }
    }

    #[test]
    fn initial_annotator_counts() {
        let c = corpus("a DT I\nb NN I\n\nc DT I\nd NN I\n\ne DT I\nf VB O\n\ng DT O\n");
        let init = train_initial(refs(&c)).unwrap();
        assert_eq!(init.tag("DT"), I);
        assert_eq!(init.tag("XX"), O);
        assert_eq!(init.tag("VB"), O);

        let tie = corpus("a JJ I\n\nb JJ O\n\nc JJ B\n\nd JJ O\n");
        // the sentence-initial B normalizes to I, so counts are 2 vs 2
        assert_eq!(train_initial(refs(&tie)).unwrap().tag("JJ"), I);
        assert_eq!(
            train_initial(core::iter::empty()),
            Err(TblError::EmptyTraining)
        );
    }

    #[test]
    fn single_rule_trace() {
        let s = Sentence::new(0, vec![Token::new("ran", "VBD")]);
        let mut initial = InitialAnnotator::default();
        initial.map.insert("VBD".into(), I);
        let mut chunker = Chunker {
            initial,
            rules: vec![],
        };
        assert_eq!(chunker.apply(&s).tags(), &[I]);
        chunker
            .rules
            .push(TransformRule::parse("t05 pos[0]=VBD I>O").unwrap());
        assert_eq!(chunker.apply(&s).tags(), &[O]);
    }

    #[test]
    fn sweep_sees_left_rewrites() {
        // chunk[-1]=O I>O cascades through a run of I tags
        let s = Sentence::from_tagged(0, "a_X b_X c_X d_X").unwrap();
        let rule = TransformRule::parse("t00 chunk[-1]=O I>O").unwrap();
        let mut tags = vec![O, I, I, I];
        assert_eq!(rule.apply(&s, &mut tags), 3);
        assert_eq!(tags, vec![O, O, O, O]);
        // chunk[1]=I reads the pre-sweep tag to the right
        let rule = TransformRule::parse("t02 chunk[1]=I I>O").unwrap();
        let mut tags = vec![I, I, I, O];
        rule.apply(&s, &mut tags);
        assert_eq!(tags, vec![O, O, I, O]);
    }

    #[test]
    fn boundary_matches_only_boundary() {
        let s = Sentence::from_tagged(0, "a_DT b_NN").unwrap();
        let rule = TransformRule::parse("t06 pos[-1]= I>O").unwrap();
        let mut tags = vec![I, I];
        rule.apply(&s, &mut tags);
        assert_eq!(tags, vec![O, I]);
    }

    #[test]
    fn perfectly_labeled_training_learns_nothing() {
        let c = corpus("the DT I\nman NN I\nran VBD O\n\na DT I\ndog NN I\nsat VBD O\n");
        let chunker = learn_rules(refs(&c), &TblConfig::default()).unwrap();
        assert!(chunker.rules.is_empty());
    }

    #[test]
    fn infinite_threshold_learns_nothing() {
        let c = corpus("is VBZ O\nit NN O\n\nis VBZ O\nit NN O\n\nthe DT I\nman NN I\n\na DT I\ndog NN I\n\nthe DT I\ncat NN I\n");
        let cfg = TblConfig {
            score_threshold: f64::INFINITY,
            ..TblConfig::default()
        };
        assert!(learn_rules(refs(&c), &cfg).unwrap().rules.is_empty());
        let learned = learn_rules(refs(&c), &TblConfig::default()).unwrap();
        assert!(!learned.rules.is_empty());
    }

    #[test]
    fn serialization_round_trip() {
        let c = corpus("is VBZ O\nit NN O\n\nis VBZ O\nit NN O\n\nthe DT I\nman NN I\n\na DT I\ndog NN I\n\nthe DT I\ncat NN I\n");
        let chunker = learn_rules(refs(&c), &TblConfig::default()).unwrap();
        let text = chunker.serialize();
        assert_eq!(Chunker::deserialize(&text).unwrap(), chunker);

        let empty = Chunker::default();
        assert_eq!(empty.serialize(), "default O\n\n");
        assert_eq!(Chunker::deserialize("default O\n\n").unwrap(), empty);

        let two = "default O\nDT I\n\nt05 pos[0]=VBD I>O\nt00 chunk[-1]= O>I\n";
        let parsed = Chunker::deserialize(two).unwrap();
        assert_eq!(parsed.rules.len(), 2);
        assert_eq!(parsed.rules[0].template, 5);
        assert_eq!(parsed.rules[1].conditions[0].value, Value::Boundary);
        assert_eq!(parsed.serialize(), two);
    }

    #[test]
    fn malformed_chunker_text() {
        assert!(Chunker::deserialize("").is_err());
        assert!(Chunker::deserialize("default X\n\n").is_err());
        assert!(Chunker::deserialize("default O\nDT\n\n").is_err());
        assert!(Chunker::deserialize("default O\nDT I\n").is_err());
        assert!(matches!(
            Chunker::deserialize("default O\n\nt05 pos[0]=VBD I>I\n"),
            Err(TblError::Format { line: 3, .. })
        ));
        assert!(Chunker::deserialize("default O\n\nt05 pos[-1]=VBD I>O\n").is_err());
        assert!(Chunker::deserialize("default O\n\nt99 pos[0]=VBD I>O\n").is_err());
    }
}
