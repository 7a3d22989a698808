//! Human-written bracketing rules.
//!
//! A rule is a whitespace-separated sequence of elements. Token patterns
//! match one or more consecutive tokens; bracket symbols sit in the gaps
//! between tokens. `[` and `]` assert where chunk boundaries are before
//! the rule fires, `{` and `}` say where they will be afterwards, and
//! `[?` / `]?` mark boundaries that may or may not exist.
//!
//! ```text
//! # Pronouns are usually baseNPs
//! { _DT::? _PRP }
//! ```
//!
//! A token pattern is `word_tag`, where each side is a regular expression
//! fragment and an empty side matches anything. `::?`, `::*` and `::+`
//! repeat a whole token pattern. Upper-case names refer to macros from a
//! [`MacroTable`] and take bare `?`, `*` or `+` suffixes (`ADJ*`).

pub mod regex;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{check_spans, ChunkSpan, LabeledSentence, Labeling, Sentence, Token};
use crate::metrics::{evaluate_corpus, Beta, EvalReport};
pub use regex::{Regex, RegexError};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}: {message}")]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

/// Every diagnostic from a file that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} rule error(s), first: {}", .0.len(), .0[0])]
pub struct DslErrors(pub Vec<Diagnostic>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Repeat {
    One,
    Optional,
    ZeroOrMore,
    OneOrMore,
}

impl Repeat {
    fn min(self) -> usize {
        match self {
            Repeat::One | Repeat::OneOrMore => 1,
            Repeat::Optional | Repeat::ZeroOrMore => 0,
        }
    }

    fn max(self) -> usize {
        match self {
            Repeat::One | Repeat::Optional => 1,
            Repeat::ZeroOrMore | Repeat::OneOrMore => usize::MAX,
        }
    }
}

/// One side of a token pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMatcher {
    pub regex: Regex,
    pub negated: bool,
}

impl FieldMatcher {
    fn matches(&self, text: &str) -> bool {
        self.regex.is_match(text) != self.negated
    }
}

/// Tests on one token; `None` sides match anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPattern {
    pub word: Option<FieldMatcher>,
    pub tag: Option<FieldMatcher>,
}

impl TokenPattern {
    pub const ANY: TokenPattern = TokenPattern {
        word: None,
        tag: None,
    };

    pub fn matches(&self, token: &Token) -> bool {
        self.word.as_ref().is_none_or(|w| w.matches(&token.word))
            && self.tag.as_ref().is_none_or(|t| t.matches(&token.pos))
    }

    /// Parses `word_tag`. With `macro_syntax`, a lone `_` is the wildcard
    /// and either side may start with `!` to negate it.
    pub fn parse(text: &str, macro_syntax: bool) -> Result<TokenPattern, String> {
        let sep = top_level_underscore(text)
            .ok_or_else(|| format!("token pattern `{text}` has no `_` separator"))?;
        let word = &text[..sep];
        let mut tag = &text[sep + 1..];
        if let Some(rest) = tag.strip_prefix('_') {
            tag = rest;
        }
        if word.is_empty() && tag.is_empty() && !macro_syntax {
            return Err(format!("token pattern `{text}` matches nothing specific"));
        }
        let side = |s: &str| -> Result<Option<FieldMatcher>, String> {
            let (negated, body) = match s.strip_prefix('!') {
                Some(b) if macro_syntax && !b.is_empty() => (true, b),
                _ => (false, s),
            };
            if body.is_empty() {
                return Ok(None);
            }
            let regex = Regex::new(body).map_err(|e| e.to_string())?;
            Ok(Some(FieldMatcher { regex, negated }))
        };
        Ok(TokenPattern {
            word: side(word)?,
            tag: side(tag)?,
        })
    }
}

/// Byte offset of the first `_` outside groups, classes and escapes.
fn top_level_underscore(text: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_class = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '[' if !in_class => in_class = true,
            ']' if in_class => in_class = false,
            '(' if !in_class => depth += 1,
            ')' if !in_class => depth = depth.saturating_sub(1),
            '_' if !in_class && depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    OpenNew,
    CloseNew,
    OpenOld,
    CloseOld,
    OpenOldOptional,
    CloseOldOptional,
    Token {
        pattern: TokenPattern,
        repeat: Repeat,
        /// Source spelling, e.g. `ADJ*` or `_CD::+`.
        text: String,
    },
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Element::OpenNew => "{",
            Element::CloseNew => "}",
            Element::OpenOld => "[",
            Element::CloseOld => "]",
            Element::OpenOldOptional => "[?",
            Element::CloseOldOptional => "]?",
            Element::Token { text, .. } => text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DslRule {
    pub elements: Vec<Element>,
    /// Source text with continuation lines joined.
    pub source: String,
    /// First line of the rule in its file.
    pub line: usize,
}

impl fmt::Display for DslRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.elements.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Named single-token patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroTable {
    map: BTreeMap<String, TokenPattern>,
}

/// The shipped macro file.
pub const DEFAULT_MACROS: &str = "\
# Adjectives, nouns and numbers by tag
ADJ = _JJ[RS]?
NOUN = _NNP?S?
NUM = _CD
# Any token at all
ANYTHING = _
ANYWORD = _
# Day names
TIME_W = \\w+day_
TIMEDAY = \\w+day_
VERB = _VB[DGNPZ]?
NOT_ADJ = _!JJ[RS]?
# Tokens that can head or fill a noun phrase; a best guess, adjust freely
ANOUN = _(NNP?S?|CD|VBG|VBN)
";

fn is_macro_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c == '_')
}

impl Default for MacroTable {
    fn default() -> Self {
        MacroTable::parse(DEFAULT_MACROS).expect("default macros parse")
    }
}

impl MacroTable {
    pub fn empty() -> Self {
        MacroTable {
            map: BTreeMap::new(),
        }
    }

    /// `NAME = pattern` per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<MacroTable, DslErrors> {
        let mut table = MacroTable::empty();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let diag = |message: String| Diagnostic {
                line: i + 1,
                message,
            };
            let Some((name, pattern)) = line.split_once('=') else {
                errors.push(diag("expected `NAME = pattern`".into()));
                continue;
            };
            let (name, pattern) = (name.trim(), pattern.trim());
            if !is_macro_name(name) {
                errors.push(diag(format!("`{name}` is not an upper-case macro name")));
                continue;
            }
            match TokenPattern::parse(pattern, true) {
                Ok(p) => {
                    table.map.insert(name.to_string(), p);
                }
                Err(e) => errors.push(diag(e)),
            }
        }
        if errors.is_empty() {
            Ok(table)
        } else {
            Err(DslErrors(errors))
        }
    }

    pub fn insert(&mut self, name: &str, pattern: TokenPattern) {
        self.map.insert(name.to_string(), pattern);
    }

    pub fn get(&self, name: &str) -> Option<&TokenPattern> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

/// Rules in application order plus the macros they were parsed with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleListProgram {
    pub rules: Vec<DslRule>,
    pub macros: MacroTable,
}

impl RuleListProgram {
    pub fn empty(macros: MacroTable) -> Self {
        RuleListProgram {
            rules: Vec::new(),
            macros,
        }
    }

    /// Adds a rule at the end of the list.
    pub fn push(&mut self, rule: DslRule) {
        self.rules.push(rule);
    }
}

/// Joins continuation lines and drops comments; yields (first line, text).
fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim_end();
        if pending.is_none() && (trimmed.trim_start().starts_with('#') || trimmed.trim().is_empty())
        {
            continue;
        }
        let (body, continues) = match trimmed.strip_suffix('\\') {
            Some(b) => (b, true),
            None => (trimmed, false),
        };
        let entry = pending.get_or_insert_with(|| (line_no, String::new()));
        if !entry.1.is_empty() {
            entry.1.push(' ');
        }
        entry.1.push_str(body.trim());
        if !continues {
            out.extend(pending.take());
        }
    }
    out.extend(pending);
    out
}

fn parse_element(tok: &str, macros: &MacroTable) -> Result<Element, String> {
    match tok {
        "{" => return Ok(Element::OpenNew),
        "}" => return Ok(Element::CloseNew),
        "[" => return Ok(Element::OpenOld),
        "]" => return Ok(Element::CloseOld),
        "[?" => return Ok(Element::OpenOldOptional),
        "]?" => return Ok(Element::CloseOldOptional),
        _ => {}
    }
    let (body, mut repeat) = match tok.rfind("::") {
        Some(i) => {
            let rep = match &tok[i + 2..] {
                "?" => Repeat::Optional,
                "*" => Repeat::ZeroOrMore,
                "+" => Repeat::OneOrMore,
                other => return Err(format!("bad repetition suffix `::{other}` in `{tok}`")),
            };
            (&tok[..i], Some(rep))
        }
        None => (tok, None),
    };
    if body.contains("::") {
        return Err(format!("bad repetition suffix in `{tok}`"));
    }

    let (name, bare) = match body.char_indices().last() {
        Some((i, c @ ('?' | '*' | '+'))) => (&body[..i], Some(c)),
        _ => (body, None),
    };
    if is_macro_name(name) {
        if let Some(pattern) = macros.get(name) {
            if let Some(c) = bare {
                if repeat.is_some() {
                    return Err(format!("`{tok}` has two repetition suffixes"));
                }
                repeat = Some(match c {
                    '?' => Repeat::Optional,
                    '*' => Repeat::ZeroOrMore,
                    _ => Repeat::OneOrMore,
                });
            }
            return Ok(Element::Token {
                pattern: pattern.clone(),
                repeat: repeat.unwrap_or(Repeat::One),
                text: tok.to_string(),
            });
        }
        if !name.contains('_') {
            return Err(format!("unknown macro `{name}`"));
        }
    }
    if body.is_empty() {
        return Err(format!("empty token pattern in `{tok}`"));
    }
    let pattern = TokenPattern::parse(body, false)?;
    Ok(Element::Token {
        pattern,
        repeat: repeat.unwrap_or(Repeat::One),
        text: tok.to_string(),
    })
}

fn check_brackets(elements: &[Element]) -> Result<(), String> {
    let mut new_open = false;
    let mut old_open = false;
    let mut opt_open = false;
    for e in elements {
        let (slot, opening, name) = match e {
            Element::OpenNew => (&mut new_open, true, "{"),
            Element::CloseNew => (&mut new_open, false, "}"),
            Element::OpenOld => (&mut old_open, true, "["),
            Element::CloseOld => (&mut old_open, false, "]"),
            Element::OpenOldOptional => (&mut opt_open, true, "[?"),
            Element::CloseOldOptional => (&mut opt_open, false, "]?"),
            Element::Token { .. } => continue,
        };
        match (opening, *slot) {
            (true, true) => return Err(format!("nested `{name}`")),
            (false, false) => return Err(format!("unbalanced `{name}`")),
            _ => *slot = opening,
        }
    }
    for (open, name) in [(new_open, "{"), (old_open, "["), (opt_open, "[?")] {
        if open {
            return Err(format!("unbalanced `{name}`"));
        }
    }
    Ok(())
}

/// Parses one rule (continuation lines already joined).
pub fn parse_rule(text: &str, line: usize, macros: &MacroTable) -> Result<DslRule, Diagnostic> {
    let diag = |message: String| Diagnostic { line, message };
    let elements = text
        .split_whitespace()
        .map(|tok| parse_element(tok, macros))
        .collect::<Result<Vec<_>, _>>()
        .map_err(diag)?;
    if !elements.iter().any(|e| matches!(e, Element::Token { .. })) {
        return Err(diag("rule has no token patterns".into()));
    }
    check_brackets(&elements).map_err(diag)?;
    Ok(DslRule {
        elements,
        source: text.to_string(),
        line,
    })
}

/// Parses what it can: good rules go into the program, bad ones become
/// diagnostics.
pub fn parse_rule_file_lenient(
    text: &str,
    macros: &MacroTable,
) -> (RuleListProgram, Vec<Diagnostic>) {
    let mut program = RuleListProgram::empty(macros.clone());
    let mut diagnostics = Vec::new();
    for (line, rule) in logical_lines(text) {
        match parse_rule(&rule, line, macros) {
            Ok(r) => program.push(r),
            Err(d) => diagnostics.push(d),
        }
    }
    (program, diagnostics)
}

/// Parses a rule file, failing if any rule is malformed.
pub fn parse_rule_file(text: &str, macros: &MacroTable) -> Result<RuleListProgram, DslErrors> {
    let (program, diagnostics) = parse_rule_file_lenient(text, macros);
    if diagnostics.is_empty() {
        Ok(program)
    } else {
        Err(DslErrors(diagnostics))
    }
}

struct Matcher<'a> {
    rule: &'a DslRule,
    tokens: &'a [Token],
    spans: &'a [ChunkSpan],
    /// Gap of each bracket element in the current attempt.
    gaps: Vec<usize>,
    start: usize,
}

/// A successful match: the region it covers and the chunks it installs.
struct Match {
    region: ChunkSpan,
    new_spans: Vec<ChunkSpan>,
}

impl Matcher<'_> {
    fn run_length(&self, pattern: &TokenPattern, gap: usize, cap: usize) -> usize {
        self.tokens[gap..]
            .iter()
            .take(cap)
            .take_while(|t| pattern.matches(t))
            .count()
    }

    fn search(&mut self, ei: usize, gap: usize) -> Option<Match> {
        let Some(element) = self.rule.elements.get(ei) else {
            return self.finish(gap);
        };
        match element {
            Element::Token {
                pattern, repeat, ..
            } => {
                let run = self.run_length(pattern, gap, repeat.max());
                if run < repeat.min() {
                    return None;
                }
                for take in (repeat.min()..=run).rev() {
                    if let Some(m) = self.search(ei + 1, gap + take) {
                        return Some(m);
                    }
                }
                None
            }
            bracket => {
                let ok = match bracket {
                    Element::OpenOld => self.spans.iter().any(|s| s.start == gap),
                    Element::CloseOld => self.spans.iter().any(|s| s.end == gap),
                    _ => true,
                };
                if !ok {
                    return None;
                }
                self.gaps[ei] = gap;
                self.search(ei + 1, gap)
            }
        }
    }

    fn finish(&self, end: usize) -> Option<Match> {
        let region = ChunkSpan::new(self.start, end);
        if region.is_empty() {
            return None;
        }
        let crosses = self.spans.iter().any(|s| {
            let inside = s.start >= region.start && s.end <= region.end;
            let outside = s.end <= region.start || s.start >= region.end;
            !inside && !outside
        });
        if crosses {
            return None;
        }
        let mut new_spans = Vec::new();
        let mut open = None;
        for (ei, e) in self.rule.elements.iter().enumerate() {
            match e {
                Element::OpenNew => open = Some(self.gaps[ei]),
                Element::CloseNew => {
                    let s = open.take().expect("brackets checked at parse time");
                    let span = ChunkSpan::new(s, self.gaps[ei]);
                    if span.is_empty() {
                        return None;
                    }
                    new_spans.push(span);
                }
                _ => {}
            }
        }
        Some(Match { region, new_spans })
    }
}

/// Applies one rule in a single left-to-right pass. Matches never
/// overlap: scanning resumes where the previous match ended.
pub fn apply_rule(rule: &DslRule, sentence: &Sentence, spans: &[ChunkSpan]) -> Vec<ChunkSpan> {
    let n = sentence.len();
    let mut current: Vec<ChunkSpan> = spans.to_vec();
    current.sort_unstable();
    let mut start = 0;
    while start < n {
        let found = {
            let mut m = Matcher {
                rule,
                tokens: &sentence.tokens,
                spans: &current,
                gaps: alloc::vec![0; rule.elements.len()],
                start,
            };
            m.search(0, start)
        };
        match found {
            Some(Match { region, new_spans }) => {
                current.retain(|s| s.end <= region.start || s.start >= region.end);
                current.extend(new_spans);
                current.sort_unstable();
                start = region.end;
            }
            None => start += 1,
        }
    }
    debug_assert!(check_spans(&current, n).is_ok());
    current
}

/// A sentence with its current bracketing.
pub type Bracketed = (Sentence, Vec<ChunkSpan>);

/// Rule 1 over every sentence, then rule 2, and so on.
pub fn apply_program(program: &RuleListProgram, corpus: &[Bracketed]) -> Vec<Bracketed> {
    let mut out: Vec<Bracketed> = corpus.to_vec();
    for rule in &program.rules {
        for (sentence, spans) in &mut out {
            *spans = apply_rule(rule, sentence, spans);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDelta {
    pub line: usize,
    pub rule: String,
    /// Corpus F after this rule.
    pub fmeasure: f64,
    /// Change in F caused by this rule.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramReport {
    pub report: EvalReport,
    /// F of the unbracketed corpus.
    pub initial_f: f64,
    pub deltas: Vec<RuleDelta>,
}

/// Scores a program against gold chunks starting from no brackets at all,
/// and records how F moved after each rule.
pub fn evaluate_program(program: &RuleListProgram, gold: &[LabeledSentence]) -> ProgramReport {
    let gold_labels: Vec<Labeling> = gold.iter().map(|(_, l)| l.clone()).collect();
    let score = |state: &[Bracketed]| -> EvalReport {
        let proposed: Vec<Labeling> = state
            .iter()
            .map(|(s, spans)| Labeling::from_spans(spans, s.len()).expect("rule output is valid"))
            .collect();
        evaluate_corpus(&gold_labels, &proposed, Beta::ONE).unwrap_or(EvalReport {
            precision: 1.0,
            recall: 1.0,
            fmeasure: 1.0,
            counts: Default::default(),
        })
    };
    let mut state: Vec<Bracketed> = gold.iter().map(|(s, _)| (s.clone(), Vec::new())).collect();
    let mut report = score(&state);
    let initial_f = report.fmeasure;
    let mut deltas = Vec::with_capacity(program.rules.len());
    for rule in &program.rules {
        for (sentence, spans) in &mut state {
            *spans = apply_rule(rule, sentence, spans);
        }
        let next = score(&state);
        deltas.push(RuleDelta {
            line: rule.line,
            rule: rule.to_string(),
            fmeasure: next.fmeasure,
            delta: next.fmeasure - report.fmeasure,
        });
        report = next;
    }
    ProgramReport {
        report,
        initial_f,
        deltas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{bracket_parse, bracket_render};

    fn rule(text: &str) -> DslRule {
        parse_rule(text, 1, &MacroTable::default()).unwrap()
    }

    fn run(rule_text: &str, input: &str) -> String {
        let (s, spans) = bracket_parse(0, input).unwrap();
        let out = apply_rule(&rule(rule_text), &s, &spans);
        bracket_render(&s, &out).unwrap()
    }

    #[test]
    fn token_pattern_forms() {
        let p = TokenPattern::parse("(That|that)__DT", false).unwrap();
        assert_eq!(p.word.as_ref().unwrap().regex.as_str(), "(That|that)");
        assert_eq!(p.tag.as_ref().unwrap().regex.as_str(), "DT");
        let p = TokenPattern::parse("about_", false).unwrap();
        assert!(p.tag.is_none());
        let p = TokenPattern::parse("_(\\$|#)", false).unwrap();
        assert!(p.word.is_none());
        assert!(p.matches(&Token::new("$", "$")));
        let p = TokenPattern::parse("(\\$|#)_", false).unwrap();
        assert!(p.matches(&Token::new("#", "#")));
        let p = TokenPattern::parse("[a_b]x_NN", false).unwrap();
        assert_eq!(p.word.as_ref().unwrap().regex.as_str(), "[a_b]x");
        assert!(TokenPattern::parse("_", false).is_err());
        assert!(TokenPattern::parse("DT", false).is_err());
        assert_eq!(TokenPattern::parse("_", true).unwrap(), TokenPattern::ANY);
    }

    #[test]
    fn default_macros() {
        let m = MacroTable::default();
        let t = |w: &str, p: &str| Token::new(w, p);
        assert!(m.get("ADJ").unwrap().matches(&t("big", "JJR")));
        assert!(m.get("NOUN").unwrap().matches(&t("dogs", "NNS")));
        assert!(!m.get("NOUN").unwrap().matches(&t("dogs", "VBZ")));
        assert!(m.get("TIME_W").unwrap().matches(&t("Friday", "NNP")));
        assert!(m.get("NOT_ADJ").unwrap().matches(&t("the", "DT")));
        assert!(!m.get("NOT_ADJ").unwrap().matches(&t("big", "JJ")));
        assert!(m.get("ANOUN").unwrap().matches(&t("5", "CD")));
        assert!(m.get("ANYTHING").unwrap().matches(&t("x", "Y")));
        assert!(m.get("VERB").unwrap().matches(&t("ran", "VBD")));
        assert!(m.get("VERB").unwrap().matches(&t("run", "VB")));
    }

    #[test]
    fn macro_file_errors() {
        assert!(MacroTable::parse("lower = _DT").is_err());
        assert!(MacroTable::parse("X _DT").is_err());
        assert!(MacroTable::parse("X = _(DT").is_err());
        let t = MacroTable::parse("# c\nDET = _DT\n").unwrap();
        assert_eq!(t.names().collect::<Vec<_>>(), ["DET"]);
    }

    #[test]
    fn parse_examples() {
        let macros = MacroTable::default();
        let p =
            parse_rule_file("# Pronouns are usually baseNPs\n{ _DT::? _PRP }", &macros).unwrap();
        assert_eq!(p.rules.len(), 1);
        let tokens = p.rules[0]
            .elements
            .iter()
            .filter(|e| matches!(e, Element::Token { .. }))
            .count();
        assert_eq!(tokens, 2);
        assert_eq!(p.rules[0].line, 2);

        let err = parse_rule_file("{ _DT ADJ* NOUN+ ", &macros).unwrap_err();
        assert!(err.0[0].message.contains("unbalanced `{`"), "{:?}", err);

        let p = parse_rule_file("{ _CD::+ \\\n  [ ANYTHING+ ] }\n{ _PRP }\n", &macros).unwrap();
        assert_eq!(p.rules.len(), 2);
        assert_eq!(p.rules[0].to_string(), "{ _CD::+ [ ANYTHING+ ] }");
        assert_eq!(p.rules[1].line, 3);
    }

    #[test]
    fn parse_errors() {
        let macros = MacroTable::default();
        let cases = [
            ("{ }", "no token patterns"),
            ("{ _DT::x }", "bad repetition"),
            ("{ FOO }", "unknown macro `FOO`"),
            ("} _DT {", "unbalanced `}`"),
            ("{ { _DT } }", "nested `{`"),
            ("{ ADJ*::+ }", "two repetition"),
            ("{ _D(T }", "unclosed"),
        ];
        for (text, want) in cases {
            let err = parse_rule(text, 7, &macros).unwrap_err();
            assert_eq!(err.line, 7);
            assert!(err.message.contains(want), "{text}: {}", err.message);
        }
    }

    #[test]
    fn lenient_parse_keeps_good_rules() {
        let (p, d) =
            parse_rule_file_lenient("{ _PRP }\n{ BAD }\n{ _DT }\n", &MacroTable::default());
        assert_eq!(p.rules.len(), 2);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 2);
    }

    #[test]
    fn inserting_new_brackets() {
        assert_eq!(
            run("{ _DT ADJ* NOUN+ }", "The_DT man_NN ran_VBD ._."),
            "( The_DT man_NN ) ran_VBD ._."
        );
    }

    #[test]
    fn splitting_a_noun_phrase() {
        assert_eq!(
            run(
                "[ { ANYWORD* NOUN+ } { ADJ* TIMEDAY } ]",
                "( New_NNP York_NNP Friday_NNP )"
            ),
            "( New_NNP York_NNP ) ( Friday_NNP )"
        );
    }

    #[test]
    fn moving_a_bracket() {
        assert_eq!(
            run("{ about_ [ _$ NUM+ ] }", "about_IN ( $_$ 5_CD )"),
            "( about_IN $_$ 5_CD )"
        );
    }

    #[test]
    fn old_brackets_must_exist() {
        assert_eq!(
            run(
                "[ { ANYWORD* NOUN+ } { ADJ* TIMEDAY } ]",
                "New_NNP York_NNP Friday_NNP"
            ),
            "New_NNP York_NNP Friday_NNP"
        );
    }

    #[test]
    fn optional_old_brackets() {
        let r = "{ [ ANYTHING+ [? ANYTHING* ]? ] _CC }";
        assert_eq!(run(r, "( a_DT ) ( b_NN ) c_CC"), "( a_DT b_NN c_CC )");
        assert_eq!(run(r, "( a_DT b_NN ) c_CC"), "( a_DT b_NN c_CC )");
    }

    #[test]
    fn never_matches_across_a_boundary() {
        // the region would cut the existing chunk in half
        assert_eq!(
            run("{ _DT _PRP }", "x_DT ( him_PRP y_NN )"),
            "x_DT ( him_PRP y_NN )"
        );
        // a chunk wholly inside the region is replaced
        assert_eq!(run("{ _DT _PRP }", "( x_DT ) him_PRP"), "( x_DT him_PRP )");
    }

    #[test]
    fn scan_resumes_after_match() {
        assert_eq!(
            run("{ _DT _NN }", "a_DT b_NN c_DT d_NN"),
            "( a_DT b_NN ) ( c_DT d_NN )"
        );
        // trailing context is consumed, so b never starts a match
        assert_eq!(run("{ _NN } _NN", "a_NN b_NN c_NN"), "( a_NN ) b_NN c_NN");
        assert_eq!(
            run("{ _NN } _NN", "a_NN b_NN c_NN d_NN"),
            "( a_NN ) b_NN ( c_NN ) d_NN"
        );
    }

    #[test]
    fn right_context_outside_new_brackets() {
        assert_eq!(
            run("{ _(DT|EX|WP|WDT) } VERB", "that_WDT ran_VBD"),
            "( that_WDT ) ran_VBD"
        );
        assert_eq!(
            run("{ _(DT|RB)::? (much|most)_ } _IN", "much_JJ of_IN it_PRP"),
            "( much_JJ ) of_IN it_PRP"
        );
    }

    #[test]
    fn program_order_matters() {
        let macros = MacroTable::default();
        let ab = parse_rule_file("{ _DT _NN }\n{ _NN _VBZ }", &macros).unwrap();
        let ba = parse_rule_file("{ _NN _VBZ }\n{ _DT _NN }", &macros).unwrap();
        let corpus = alloc::vec![bracket_parse(0, "a_DT b_NN c_VBZ").unwrap()];
        let render = |c: &[Bracketed]| bracket_render(&c[0].0, &c[0].1).unwrap();
        assert_eq!(render(&apply_program(&ab, &corpus)), "( a_DT b_NN ) c_VBZ");
        assert_eq!(render(&apply_program(&ba, &corpus)), "a_DT ( b_NN c_VBZ )");
        let empty = RuleListProgram::empty(macros);
        assert_eq!(apply_program(&empty, &corpus), corpus);
    }

    #[test]
    fn deltas_match_prefix_evaluation() {
        let macros = MacroTable::default();
        let text = "{ _DT ADJ* NOUN+ }\n{ _PRP }\n[ { _DT } { NOUN+ } ]\n";
        let program = parse_rule_file(text, &macros).unwrap();
        let gold: Vec<LabeledSentence> = [
            "( The_DT big_JJ dog_NN ) saw_VBD ( him_PRP )",
            "( a_DT cat_NN ) ran_VBD",
            "( it_PRP ) is_VBZ ( the_DT ) ( man_NN )",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (s, spans) = bracket_parse(i as u32, t).unwrap();
            let l = Labeling::from_spans(&spans, s.len()).unwrap();
            (s, l)
        })
        .collect();
        let report = evaluate_program(&program, &gold);
        assert_eq!(report.initial_f, 0.0);
        assert_eq!(report.deltas.len(), 3);
        for k in 0..3 {
            let prefix = RuleListProgram {
                rules: program.rules[..=k].to_vec(),
                macros: macros.clone(),
            };
            let f = evaluate_program(&prefix, &gold).report.fmeasure;
            assert_eq!(report.deltas[k].fmeasure, f);
        }
        let sum: f64 = report.deltas.iter().map(|d| d.delta).sum();
        assert!((sum - (report.report.fmeasure - report.initial_f)).abs() < 1e-12);
        assert!((report.report.fmeasure - 10.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn serialize_round_trip() {
        let r = rule("{   _DT::?\t_PRP }");
        let again = rule(&r.to_string());
        assert_eq!(r.elements, again.elements);
        assert_eq!(again.to_string(), "{ _DT::? _PRP }");
    }
}
