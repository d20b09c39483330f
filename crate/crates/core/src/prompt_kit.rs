//! Prompt rendering and strict parsing of model replies.
//!
//! Templates live in `assets/prompts/` and use `{{name}}` placeholders.
//! Parsers are deliberately strict: a reply that does not look like the
//! requested output is an error with a location, not a best guess.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect_space::{Octant, VadTriple};
use crate::metrics::normalize_word;
use crate::occ_engine::{EmotionLabel, Ordinal, Rule};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptError {
    #[error("template {template}: no binding for placeholder `{name}`")]
    MissingBinding { template: TemplateId, name: String },
    #[error("template {template}: binding `{name}` has no placeholder")]
    UnusedBinding { template: TemplateId, name: String },
    #[error("template {template}: binding `{name}` is empty")]
    EmptyBinding { template: TemplateId, name: String },
    #[error("stimulus block is empty")]
    EmptyBlock,
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("expected {expected} table rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("line {line}, column {column}: `{cell}` is not a number")]
    NonNumeric { line: usize, column: usize, cell: String },
    #[error("line {line}, column {column}: {value} is outside [0, 1]")]
    OutOfRange { line: usize, column: usize, value: f64 },
    #[error("expected two words, found {found:?}")]
    TooFewWords { found: Vec<String> },
    #[error("no emotion label in `{raw}`")]
    NoLabel { raw: String },
    #[error("no mapping given for situation {index}")]
    MissingRow { index: usize },
    #[error("line {line}: no word from the list in `{text}`")]
    NoWord { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    P1,
    /// Numbered stimulus block that follows the P1 instruction.
    #[serde(rename = "P1-block")]
    P1Block,
    P2,
    P3,
    /// Alternative perspective wording for P3; experimental.
    #[serde(rename = "P3-perspective")]
    P3Perspective,
    P4,
    P5,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::P1 => "P1",
            TemplateId::P1Block => "P1-block",
            TemplateId::P2 => "P2",
            TemplateId::P3 => "P3",
            TemplateId::P3Perspective => "P3-perspective",
            TemplateId::P4 => "P4",
            TemplateId::P5 => "P5",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rendered prompt tagged with the template that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template: TemplateId,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub version: u32,
    pub body: &'static str,
    pub experimental: bool,
}

pub const P1_SENTIMENT: PromptTemplate = PromptTemplate {
    id: TemplateId::P1,
    version: 1,
    body: include_str!("../assets/prompts/p1_sentiment.txt"),
    experimental: false,
};
pub const P2_NUMERIC_MAPPING: PromptTemplate = PromptTemplate {
    id: TemplateId::P2,
    version: 1,
    body: include_str!("../assets/prompts/p2_numeric_mapping.txt"),
    experimental: false,
};
pub const P3_WORD_PICK: PromptTemplate = PromptTemplate {
    id: TemplateId::P3,
    version: 1,
    body: include_str!("../assets/prompts/p3_word_pick.txt"),
    experimental: false,
};
pub const P3_WORD_PICK_PERSPECTIVE: PromptTemplate = PromptTemplate {
    id: TemplateId::P3Perspective,
    version: 1,
    body: include_str!("../assets/prompts/p3_word_pick_perspective.txt"),
    experimental: true,
};
pub const P4_OCTANT: PromptTemplate = PromptTemplate {
    id: TemplateId::P4,
    version: 1,
    body: include_str!("../assets/prompts/p4_octant.txt"),
    experimental: false,
};
pub const P5_CHATOCC: PromptTemplate = PromptTemplate {
    id: TemplateId::P5,
    version: 1,
    body: include_str!("../assets/prompts/p5_chatocc.txt"),
    experimental: false,
};

pub const DOMINANCE_CLAUSE: &str = " Remember that dominance assesses the extent to which the main person in the situation experiences the amount of control it can assert over the situation.";

/// Stimuli per P1 block.
pub const BATCH_SIZE: usize = 20;

impl PromptTemplate {
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    out.push(&after[..end]);
                    rest = &after[end + 2..];
                }
                None => break,
            }
        }
        out
    }

    /// Substitute every placeholder. Every placeholder needs a binding and
    /// every binding needs a placeholder.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
        let holes = self.placeholders();
        for (name, _) in bindings {
            if !holes.contains(name) {
                return Err(PromptError::UnusedBinding {
                    template: self.id,
                    name: name.to_string(),
                });
            }
        }
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").expect("placeholders are closed");
            let name = &after[..end];
            let value = map.get(name).ok_or_else(|| PromptError::MissingBinding {
                template: self.id,
                name: name.to_string(),
            })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn require_nonempty(template: TemplateId, name: &str, value: &str) -> Result<(), PromptError> {
    if value.trim().is_empty() {
        return Err(PromptError::EmptyBinding {
            template,
            name: name.to_string(),
        });
    }
    Ok(())
}

/// The P1 instruction turn. Without the dominance clause this is the wording
/// that produced meaningless dominance values.
pub fn render_sentiment_instruction(include_dominance_clause: bool) -> String {
    let clause = if include_dominance_clause { DOMINANCE_CLAUSE } else { "" };
    P1_SENTIMENT
        .render(&[("dominance_clause", clause)])
        .expect("P1 has exactly one placeholder")
}

/// Numbered stimulus lines, `1. text`, one per line.
pub fn render_stimulus_block<S: AsRef<str>>(block: &[S]) -> Result<String, PromptError> {
    if block.is_empty() {
        return Err(PromptError::EmptyBlock);
    }
    Ok(block
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Instruction and block in a single message.
pub fn render_sentiment_prompt<S: AsRef<str>>(
    include_dominance_clause: bool,
    block: &[S],
) -> Result<String, PromptError> {
    let block = render_stimulus_block(block)?;
    Ok(format!("{}\n{}", render_sentiment_instruction(include_dominance_clause), block))
}

pub fn render_numeric_mapping_prompt() -> String {
    P2_NUMERIC_MAPPING.render(&[]).expect("P2 has no placeholders")
}

fn word_list<S: AsRef<str>>(words: &[S]) -> String {
    words.iter().map(|w| w.as_ref()).collect::<Vec<_>>().join(", ")
}

pub fn render_word_pick_prompt<S: AsRef<str>>(situation: &str, words: &[S]) -> Result<String, PromptError> {
    render_word_pick(&P3_WORD_PICK, situation, words)
}

pub fn render_word_pick_perspective_prompt<S: AsRef<str>>(
    situation: &str,
    words: &[S],
) -> Result<String, PromptError> {
    render_word_pick(&P3_WORD_PICK_PERSPECTIVE, situation, words)
}

fn render_word_pick<S: AsRef<str>>(
    template: &PromptTemplate,
    situation: &str,
    words: &[S],
) -> Result<String, PromptError> {
    let list = word_list(words);
    require_nonempty(template.id, "situation", situation)?;
    require_nonempty(template.id, "words", &list)?;
    template.render(&[("situation", situation), ("words", &list)])
}

/// P4 with each octant sign spelled as "low"/"high"; the neutral octant uses
/// "neutral" in all three slots.
pub fn render_octant_prompt(octant: &Octant) -> String {
    let (v, a, d) = match octant {
        Octant::Corner { v, a, d } => (v.level_word(), a.level_word(), d.level_word()),
        Octant::Neutral => ("neutral", "neutral", "neutral"),
    };
    P4_OCTANT
        .render(&[("valence", v), ("arousal", a), ("dominance", d)])
        .expect("P4 placeholders are fixed")
}

/// One `Name: rule text` line per rule, in the order given.
pub fn render_rule_list(rules: &[&Rule]) -> String {
    rules
        .iter()
        .map(|r| format!("{}: {}", r.label.display_name(), r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_chatocc_prompt(rules: &[&Rule], situation: &str) -> Result<String, PromptError> {
    let list = render_rule_list(rules);
    require_nonempty(TemplateId::P5, "rules", &list)?;
    require_nonempty(TemplateId::P5, "situation", situation)?;
    P5_CHATOCC.render(&[("rules", &list), ("situation", situation)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedVadRow {
    /// 1-based position in the table.
    pub index: usize,
    /// Leading label column, when the table has one.
    pub label: Option<String>,
    pub vad: VadTriple,
}

/// Pipe table in the layout this crate emits: index column, then V, A, D.
pub fn render_vad_table(rows: &[ParsedVadRow]) -> String {
    let mut out = String::from("| # | Valence | Arousal | Dominance |\n|---|---|---|---|\n");
    for r in rows {
        let label = r.label.clone().unwrap_or_else(|| r.index.to_string());
        out.push_str(&format!("| {} | {} | {} | {} |\n", label, r.vad.v(), r.vad.a(), r.vad.d()));
    }
    out
}

fn is_separator(cells: &[&str]) -> bool {
    cells.iter().all(|c| {
        let c = c.trim();
        c.is_empty() || c.chars().all(|ch| matches!(ch, '-' | ':' | '=' | '+'))
    })
}

fn parse_number(cell: &str) -> Option<f64> {
    let c = cell.trim().trim_matches('*');
    c.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Parse a VAD table from a model reply.
///
/// Accepts pipe tables and column-aligned text (columns separated by tabs or
/// runs of two or more spaces, or single spaces when every token is a number).
/// Rows whose last three cells are all non-numeric are headers or prose and
/// are skipped; a row with a mix is an error.
pub fn parse_vad_table(text: &str, expected_count: usize) -> Result<Vec<ParsedVadRow>, ParseError> {
    static ALIGNED: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let aligned = ALIGNED.get_or_init(|| Regex::new(r"\t+|\s{2,}").expect("valid regex"));

    let mut rows = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = raw_line.trim();
        if t.is_empty() {
            continue;
        }
        let cells: Vec<&str> = if t.contains('|') {
            let inner = t.strip_prefix('|').unwrap_or(t);
            let inner = inner.strip_suffix('|').unwrap_or(inner);
            let cells: Vec<&str> = inner.split('|').map(str::trim).collect();
            if is_separator(&cells) {
                continue;
            }
            cells
        } else {
            let cols: Vec<&str> = aligned.split(t).map(str::trim).filter(|c| !c.is_empty()).collect();
            if cols.len() >= 4 {
                cols
            } else {
                let toks: Vec<&str> = t.split_whitespace().collect();
                if (3..=4).contains(&toks.len()) && toks.iter().all(|c| parse_number(c.trim_end_matches('.')).is_some()) {
                    toks
                } else {
                    continue;
                }
            }
        };
        if cells.len() < 3 {
            continue;
        }
        let first_value_col = cells.len() - 3;
        let parsed: Vec<Option<f64>> = cells[first_value_col..].iter().map(|c| parse_number(c)).collect();
        if parsed.iter().all(Option::is_none) {
            continue;
        }
        let mut vals = [0.0; 3];
        for (k, p) in parsed.iter().enumerate() {
            let column = first_value_col + k + 1;
            match p {
                None => {
                    return Err(ParseError::NonNumeric {
                        line: line_no,
                        column,
                        cell: cells[first_value_col + k].to_string(),
                    })
                }
                Some(x) if !(0.0..=1.0).contains(x) => {
                    return Err(ParseError::OutOfRange {
                        line: line_no,
                        column,
                        value: *x,
                    })
                }
                Some(x) => vals[k] = *x,
            }
        }
        let label = (first_value_col > 0).then(|| cells[0].trim_end_matches('.').to_string());
        rows.push(ParsedVadRow {
            index: rows.len() + 1,
            label,
            vad: VadTriple::unit(vals[0], vals[1], vals[2]).expect("range checked above"),
        });
    }
    if rows.len() != expected_count {
        return Err(ParseError::RowCount {
            expected: expected_count,
            found: rows.len(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPair {
    pub primary: (String, String),
    pub alternates: Vec<String>,
    pub hallucinated: Vec<String>,
}

/// Matches allowed terms longest-first on word boundaries.
struct TermMatcher {
    allowed: HashSet<String>,
    re: Option<Regex>,
}

impl TermMatcher {
    fn new<S: AsRef<str>>(allowed: &[S]) -> Self {
        let mut terms: Vec<String> = allowed.iter().map(|w| normalize_word(w.as_ref())).filter(|w| !w.is_empty()).collect();
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        terms.dedup();
        let re = (!terms.is_empty()).then(|| {
            let alts: Vec<String> = terms
                .iter()
                .map(|t| t.split(' ').map(regex::escape).collect::<Vec<_>>().join(r"\s+"))
                .collect();
            Regex::new(&format!(r"\b(?:{})\b", alts.join("|"))).expect("escaped alternation")
        });
        TermMatcher {
            allowed: terms.into_iter().collect(),
            re,
        }
    }

    fn contains(&self, w: &str) -> bool {
        self.allowed.contains(w)
    }

    /// (byte offset, term) for every allowed term in `s`.
    fn find_all(&self, s: &str) -> Vec<(usize, String)> {
        match &self.re {
            Some(re) => re.find_iter(s).map(|m| (m.start(), normalize_word(m.as_str()))).collect(),
            None => Vec::new(),
        }
    }

    /// Candidate words from one list segment.
    fn candidates(&self, segment: &str) -> Vec<String> {
        let seg = normalize_word(
            segment.trim_matches(|c: char| !c.is_alphanumeric() && c != '_'),
        );
        let seg = strip_enumeration(&seg);
        if seg.is_empty() {
            return Vec::new();
        }
        if self.contains(&seg) {
            return vec![seg];
        }
        let found = self.find_all(&seg);
        if !found.is_empty() {
            return found.into_iter().map(|(_, w)| w).collect();
        }
        let words: Vec<&str> = seg.split(' ').collect();
        if words.len() <= 2 && words.iter().all(|w| w.chars().all(|c| c.is_alphabetic() || c == '-')) {
            return vec![seg.to_string()];
        }
        Vec::new()
    }
}

fn strip_enumeration(s: &str) -> String {
    let t = s.trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | ' '));
    t.trim().to_string()
}

fn split_segments(s: &str) -> Vec<&str> {
    static SEP: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    SEP.get_or_init(|| Regex::new(r"[,;/\n&]|\band\b|\bor\b").expect("valid regex"))
        .split(s)
        .collect()
}

/// Extract a two-word pick from a reply.
///
/// Parenthesised words are alternates, never primary. Words outside the
/// allowed list are still extracted and reported as hallucinated.
pub fn parse_word_pair<S: AsRef<str>>(text: &str, allowed: &[S]) -> Result<WordPair, ParseError> {
    static PARENS: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let parens = PARENS.get_or_init(|| Regex::new(r"\(([^)]*)\)").expect("valid regex"));
    let matcher = TermMatcher::new(allowed);
    let text = text.replace('_', " ").to_lowercase();

    let mut alternates = Vec::new();
    for cap in parens.captures_iter(&text) {
        for seg in split_segments(&cap[1]) {
            for w in matcher.candidates(seg) {
                if !alternates.contains(&w) {
                    alternates.push(w);
                }
            }
        }
    }
    let main = parens.replace_all(&text, ",");
    let mut primary: Vec<String> = Vec::new();
    for seg in split_segments(&main) {
        for w in matcher.candidates(seg) {
            if !primary.contains(&w) {
                primary.push(w);
            }
        }
    }
    if primary.len() < 2 {
        return Err(ParseError::TooFewWords { found: primary });
    }
    primary.truncate(2);
    let mut hallucinated = Vec::new();
    for w in primary.iter().chain(&alternates) {
        if !matcher.contains(w) && !hallucinated.contains(w) {
            hallucinated.push(w.clone());
        }
    }
    let mut it = primary.into_iter();
    Ok(WordPair {
        primary: (it.next().expect("two words"), it.next().expect("two words")),
        alternates,
        hallucinated,
    })
}

/// First emotion label in text order, with the intensity word if present.
pub fn parse_emotion_label(text: &str) -> Result<(EmotionLabel, Option<Ordinal>), ParseError> {
    static LABEL: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    static LEVEL: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let label_re = LABEL.get_or_init(|| {
        Regex::new(
            r"(?i)\b(fears[\s-]+confirmed|happy[\s-]*for|disappointment|satisfaction|resentment|gloating|distress|despair|satisfac|disapp|relief|hope|fear|pity|joy)\b",
        )
        .expect("valid regex")
    });
    let level_re = LEVEL.get_or_init(|| Regex::new(r"(?i)\b(low|medium|high)\b").expect("valid regex"));

    let m = label_re.find(text).ok_or_else(|| ParseError::NoLabel { raw: text.to_string() })?;
    let label: EmotionLabel = m
        .as_str()
        .parse()
        .map_err(|_| ParseError::NoLabel { raw: text.to_string() })?;

    let lower = text.to_lowercase();
    let search_from = lower.find("intensity").unwrap_or(0);
    let level = level_re
        .find(&text[search_from..])
        .or_else(|| level_re.find(text))
        .map(|m| match m.as_str().to_lowercase().as_str() {
            "low" => Ordinal::Low,
            "medium" => Ordinal::Medium,
            _ => Ordinal::High,
        });
    Ok((label, level))
}

/// Word picked for each situation in a P2 reply, indexed like `situation_ids`.
///
/// A line maps a situation when it starts with a position (1-based) or a
/// situation id; the chosen word is the last allowed term on that line.
pub fn parse_numeric_mapping<S: AsRef<str>, W: AsRef<str>>(
    text: &str,
    situation_ids: &[S],
    allowed: &[W],
) -> Vec<Result<String, ParseError>> {
    static LEAD: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let lead = LEAD.get_or_init(|| Regex::new(r"^[\s|*#\-]*(?:sentence\s*)?(\d+)\b").expect("valid regex"));
    let matcher = TermMatcher::new(allowed);
    let n = situation_ids.len();
    let mut out: Vec<Option<Result<String, ParseError>>> = vec![None; n];

    for (i, line) in text.lines().enumerate() {
        let lower = line.replace('_', " ").to_lowercase();
        let Some(cap) = lead.captures(&lower) else {
            continue;
        };
        let num = &cap[1];
        let slot = situation_ids
            .iter()
            .position(|id| id.as_ref() == num)
            .or_else(|| num.parse::<usize>().ok().filter(|k| (1..=n).contains(k)).map(|k| k - 1));
        let Some(slot) = slot else {
            continue;
        };
        if out[slot].as_ref().is_some_and(|r| r.is_ok()) {
            continue;
        }
        let rest = &lower[cap.get(0).map(|m| m.end()).unwrap_or(0)..];
        let found = matcher.find_all(rest);
        out[slot] = Some(match found.last() {
            Some((_, w)) => Ok(w.clone()),
            None => Err(ParseError::NoWord {
                line: i + 1,
                text: line.trim().to_string(),
            }),
        });
    }
    out.into_iter()
        .enumerate()
        .map(|(k, r)| r.unwrap_or(Err(ParseError::MissingRow { index: k + 1 })))
        .collect()
}
