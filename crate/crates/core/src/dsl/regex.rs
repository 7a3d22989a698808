//! Small regular-expression engine for word and tag fragments.
//!
//! Supported: literal characters, `.`, groups with `|`, character
//! classes (`[..]`, `[^..]`, ranges), the quantifiers `?` `*` `+`, the
//! escapes `\w \W \s \S \d \D`, and a backslash before any ASCII
//! punctuation for the literal character. `$` is an ordinary character.
//! Patterns always match the whole input. Matching runs a Pike VM, so
//! there is no exponential backtracking.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("regex `{pattern}` at offset {offset}: {msg}")]
pub struct RegexError {
    pub pattern: String,
    pub offset: usize,
    pub msg: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClassItem {
    Range(char, char),
    Word(bool),
    Digit(bool),
    Space(bool),
}

impl ClassItem {
    fn matches(self, c: char) -> bool {
        match self {
            ClassItem::Range(a, b) => a <= c && c <= b,
            ClassItem::Word(pos) => (c.is_alphanumeric() || c == '_') == pos,
            ClassItem::Digit(pos) => c.is_ascii_digit() == pos,
            ClassItem::Space(pos) => c.is_whitespace() == pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Class {
    negated: bool,
    items: Vec<ClassItem>,
}

impl Class {
    fn matches(&self, c: char) -> bool {
        self.items.iter().any(|i| i.matches(c)) != self.negated
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Char(char),
    Any,
    Class(Class),
    Group(Vec<Vec<Node>>),
    Repeat(Box<Node>, Quant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quant {
    Optional,
    Star,
    Plus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Inst {
    Char(char),
    Any,
    Class(Class),
    Split(usize, usize),
    Jmp(usize),
    Match,
}

/// A compiled fragment, anchored at both ends.
#[derive(Clone, PartialEq, Eq)]
pub struct Regex {
    source: String,
    prog: Vec<Inst>,
}

impl fmt::Debug for Regex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Regex({:?})", self.source)
    }
}

impl fmt::Display for Regex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &'static str) -> RegexError {
        RegexError {
            pattern: self.src.to_string(),
            offset: self.pos,
            msg,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn alternation(&mut self) -> Result<Vec<Vec<Node>>, RegexError> {
        let mut branches = vec![self.sequence()?];
        while self.peek() == Some('|') {
            self.pos += 1;
            branches.push(self.sequence()?);
        }
        Ok(branches)
    }

    fn sequence(&mut self) -> Result<Vec<Node>, RegexError> {
        let mut seq = Vec::new();
        while let Some(c) = self.peek() {
            if c == '|' || c == ')' {
                break;
            }
            let atom = self.atom()?;
            let quant = match self.peek() {
                Some('?') => Some(Quant::Optional),
                Some('*') => Some(Quant::Star),
                Some('+') => Some(Quant::Plus),
                _ => None,
            };
            match quant {
                Some(q) => {
                    self.pos += 1;
                    if matches!(self.peek(), Some('?' | '*' | '+')) {
                        return Err(self.err("stacked quantifiers are not supported"));
                    }
                    seq.push(Node::Repeat(Box::new(atom), q));
                }
                None => seq.push(atom),
            }
        }
        Ok(seq)
    }

    fn atom(&mut self) -> Result<Node, RegexError> {
        let c = self.peek().expect("caller checked");
        self.pos += 1;
        match c {
            '(' => {
                if self.peek() == Some('?') {
                    return Err(self.err("group modifiers are not supported"));
                }
                let inner = self.alternation()?;
                if self.peek() != Some(')') {
                    return Err(self.err("unclosed `(`"));
                }
                self.pos += 1;
                Ok(Node::Group(inner))
            }
            '[' => self.class().map(Node::Class),
            '.' => Ok(Node::Any),
            '\\' => self.escape().map(|item| match item {
                Escaped::Char(c) => Node::Char(c),
                Escaped::Item(i) => Node::Class(Class {
                    negated: false,
                    items: vec![i],
                }),
            }),
            '?' | '*' | '+' => Err(self.err("quantifier without an atom")),
            '{' | '}' => Err(self.err("counted repetition is not supported")),
            '^' => Err(self.err("anchors are not supported")),
            ']' => Err(self.err("unmatched `]`")),
            c => Ok(Node::Char(c)),
        }
    }

    fn escape(&mut self) -> Result<Escaped, RegexError> {
        let Some(c) = self.peek() else {
            return Err(self.err("trailing backslash"));
        };
        self.pos += 1;
        Ok(match c {
            'w' => Escaped::Item(ClassItem::Word(true)),
            'W' => Escaped::Item(ClassItem::Word(false)),
            'd' => Escaped::Item(ClassItem::Digit(true)),
            'D' => Escaped::Item(ClassItem::Digit(false)),
            's' => Escaped::Item(ClassItem::Space(true)),
            'S' => Escaped::Item(ClassItem::Space(false)),
            c if c.is_ascii_punctuation() => Escaped::Char(c),
            _ => return Err(self.err("unsupported escape")),
        })
    }

    fn class(&mut self) -> Result<Class, RegexError> {
        let mut negated = false;
        if self.peek() == Some('^') {
            negated = true;
            self.pos += 1;
        }
        let mut items = Vec::new();
        let mut first = true;
        loop {
            let Some(c) = self.peek() else {
                return Err(self.err("unclosed `[`"));
            };
            if c == ']' && !first {
                self.pos += 1;
                break;
            }
            first = false;
            self.pos += 1;
            let lo = match c {
                '\\' => match self.escape()? {
                    Escaped::Char(c) => c,
                    Escaped::Item(i) => {
                        items.push(i);
                        continue;
                    }
                },
                c => c,
            };
            if self.peek() == Some('-') && self.chars.get(self.pos + 1).is_some_and(|&n| n != ']') {
                self.pos += 1;
                let hi = match self.peek() {
                    Some('\\') => {
                        self.pos += 1;
                        match self.escape()? {
                            Escaped::Char(c) => c,
                            Escaped::Item(_) => return Err(self.err("class shorthand in a range")),
                        }
                    }
                    Some(c) => {
                        self.pos += 1;
                        c
                    }
                    None => return Err(self.err("unclosed `[`")),
                };
                if hi < lo {
                    return Err(self.err("reversed range"));
                }
                items.push(ClassItem::Range(lo, hi));
            } else {
                items.push(ClassItem::Range(lo, lo));
            }
        }
        Ok(Class { negated, items })
    }
}

enum Escaped {
    Char(char),
    Item(ClassItem),
}

fn compile_seq(seq: &[Node], prog: &mut Vec<Inst>) {
    for node in seq {
        compile_node(node, prog);
    }
}

fn compile_alt(branches: &[Vec<Node>], prog: &mut Vec<Inst>) {
    let mut exits = Vec::new();
    for (i, branch) in branches.iter().enumerate() {
        if i + 1 < branches.len() {
            let split = prog.len();
            prog.push(Inst::Split(split + 1, 0));
            compile_seq(branch, prog);
            exits.push(prog.len());
            prog.push(Inst::Jmp(0));
            let next = prog.len();
            prog[split] = Inst::Split(split + 1, next);
        } else {
            compile_seq(branch, prog);
        }
    }
    let end = prog.len();
    for e in exits {
        prog[e] = Inst::Jmp(end);
    }
}

fn compile_node(node: &Node, prog: &mut Vec<Inst>) {
    match node {
        Node::Char(c) => prog.push(Inst::Char(*c)),
        Node::Any => prog.push(Inst::Any),
        Node::Class(c) => prog.push(Inst::Class(c.clone())),
        Node::Group(branches) => compile_alt(branches, prog),
        Node::Repeat(inner, q) => match q {
            Quant::Optional => {
                let split = prog.len();
                prog.push(Inst::Split(split + 1, 0));
                compile_node(inner, prog);
                let end = prog.len();
                prog[split] = Inst::Split(split + 1, end);
            }
            Quant::Star => {
                let split = prog.len();
                prog.push(Inst::Split(split + 1, 0));
                compile_node(inner, prog);
                prog.push(Inst::Jmp(split));
                let end = prog.len();
                prog[split] = Inst::Split(split + 1, end);
            }
            Quant::Plus => {
                let start = prog.len();
                compile_node(inner, prog);
                let split = prog.len();
                prog.push(Inst::Split(start, split + 1));
            }
        },
    }
}

impl Regex {
    pub fn new(source: &str) -> Result<Regex, RegexError> {
        let mut p = Parser {
            src: source,
            chars: source.chars().collect(),
            pos: 0,
        };
        let ast = p.alternation()?;
        if p.pos != p.chars.len() {
            return Err(p.err("unmatched `)`"));
        }
        let mut prog = Vec::new();
        compile_alt(&ast, &mut prog);
        prog.push(Inst::Match);
        Ok(Regex {
            source: source.to_string(),
            prog,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// Whole-string match.
    pub fn is_match(&self, text: &str) -> bool {
        let n = self.prog.len();
        let mut seen = vec![usize::MAX; n];
        let mut current = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        let mut step = 0;
        self.add(&mut current, &mut seen, step, 0);
        for c in text.chars() {
            step += 1;
            next.clear();
            for &pc in &current {
                let advance = match &self.prog[pc] {
                    Inst::Char(x) => *x == c,
                    Inst::Any => true,
                    Inst::Class(cls) => cls.matches(c),
                    _ => false,
                };
                if advance {
                    self.add(&mut next, &mut seen, step, pc + 1);
                }
            }
            core::mem::swap(&mut current, &mut next);
            if current.is_empty() {
                return false;
            }
        }
        current.iter().any(|&pc| self.prog[pc] == Inst::Match)
    }

    fn add(&self, list: &mut Vec<usize>, seen: &mut [usize], step: usize, pc: usize) {
        if seen[pc] == step {
            return;
        }
        seen[pc] = step;
        match self.prog[pc] {
            Inst::Jmp(t) => self.add(list, seen, step, t),
            Inst::Split(a, b) => {
                self.add(list, seen, step, a);
                self.add(list, seen, step, b);
            }
            _ => list.push(pc),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(p: &str, t: &str) -> bool {
        Regex::new(p).unwrap().is_match(t)
    }

    #[test]
    fn fragments_from_rule_lists() {
        assert!(m("JJ[RS]?", "JJ"));
        assert!(m("JJ[RS]?", "JJR"));
        assert!(!m("JJ[RS]?", "JJX"));
        assert!(m("NNP?S?", "NN") && m("NNP?S?", "NNPS") && m("NNP?S?", "NNS"));
        assert!(!m("NNP?S?", "NNSP"));
        assert!(m(r"\w+day", "Friday"));
        assert!(!m(r"\w+day", "day"));
        assert!(m(r"(\$|#)", "$") && m(r"(\$|#)", "#"));
        assert!(m("(Only|only|About|about)", "about"));
        assert!(!m("(Only|only|About|about)", "abou"));
        assert!(m(r"PRP\$", "PRP$"));
        assert!(m(r"\S+", "x-y"));
        assert!(!m(r"\S+", ""));
        assert!(m("-LRB-", "-LRB-"));
        assert!(m("$", "$"));
        assert!(m("(DT|PRP\\$|POS)", "POS"));
    }

    #[test]
    fn whole_string_anchoring() {
        assert!(!m("DT", "WDT"));
        assert!(!m("DT", "DTS"));
        assert!(m("", ""));
        assert!(!m("", "a"));
        assert!(m("a*", ""));
        assert!(m("(a|b)*c", "ababc"));
        assert!(m("[^a-c]x", "dx"));
        assert!(!m("[^a-c]x", "bx"));
        assert!(m(".+", "anything"));
    }

    #[test]
    fn unsupported_syntax_is_rejected() {
        for bad in [
            "a{2}", "^a", "(?:a)", "a**", "(a", "a)", "[a", "\\q", "*a", "[b-a]", "a\\",
        ] {
            assert!(Regex::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn nested_stars_do_not_blow_up() {
        let r = Regex::new("(a*)*b").unwrap();
        let text: String = core::iter::repeat('a').take(200).collect();
        assert!(!r.is_match(&text));
    }
}
