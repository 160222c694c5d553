//! Evidence synthesis from a finished workspace, with a programmatic
//! grounding filter applied to every model output.

use std::collections::BTreeSet;

use crate::cotf::{CotfDocument, Evidence, EvidenceStyle, LinkingKind, VerifiedLinking};
use crate::db::SchemaCatalog;
use crate::facts::{document_facts, FactSet};
use crate::llm::{LlmClient, LlmError};
use crate::prompts::{concise_request, long_request, merge_request, ShotPair};

pub const NO_FINDINGS_LONG: &str =
    "The lookup produced no database findings for this question, so no table, column or value could be verified.";
pub const NO_FINDINGS_CONCISE: &str = "No verified findings.";

/// Filtered text and the sentences that were dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grounded {
    pub text: String,
    pub removed_claims: Vec<String>,
}

/// A schema identifier or quoted literal asserted by a sentence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Claim {
    Identifier { table: Option<String>, name: String },
    Literal(String),
}

impl Claim {
    /// Stable key: identifiers case-folded, literals exact.
    pub fn key(&self) -> String {
        match self {
            Claim::Identifier { table: Some(t), name } => format!("id:{}.{}", t.to_lowercase(), name.to_lowercase()),
            Claim::Identifier { table: None, name } => format!("id:{}", name.to_lowercase()),
            Claim::Literal(l) => format!("lit:{l}"),
        }
    }
}

/// What the grounding filter accepts: document facts plus the catalog.
pub struct Grounding<'a> {
    facts: FactSet,
    catalog: Option<&'a SchemaCatalog>,
}

impl<'a> Grounding<'a> {
    pub fn new(doc: &CotfDocument, catalog: Option<&'a SchemaCatalog>) -> Self {
        Grounding { facts: document_facts(doc), catalog }
    }

    fn known_name(&self, name: &str) -> bool {
        self.facts.has_table(name)
            || self.facts.has_column(None, name)
            || self.catalog.is_some_and(|c| {
                c.table(name).is_some() || c.all_columns().any(|(_, col)| col.name.eq_ignore_ascii_case(name))
            })
    }

    fn known_column(&self, table: &str, column: &str) -> bool {
        self.facts.has_column(Some(table), column) || self.catalog.is_some_and(|c| c.column(table, column).is_some())
    }

    pub fn holds(&self, claim: &Claim) -> bool {
        match claim {
            Claim::Identifier { table: Some(t), name } => self.known_column(t, name),
            Claim::Identifier { table: None, name } => self.known_name(name),
            Claim::Literal(l) => self.facts.has_literal(l),
        }
    }

    /// Claims made by one sentence. An unquoted name before a comparison is
    /// matched against the longest known run of up to four preceding words.
    pub fn claims(&self, sentence: &str) -> Vec<Claim> {
        let mut claims = Vec::new();
        let mut masked = sentence.to_string();
        for (open, close) in [('`', '`'), ('[', ']')] {
            let spans = delimited(sentence, open, close, false);
            let mut i = 0;
            while i < spans.len() {
                let (range, inner) = &spans[i];
                let qualified = spans.get(i + 1).filter(|(next, _)| next.start == range.end + 1 && &sentence[range.end..next.start] == ".");
                if let Some((next, column)) = qualified {
                    claims.push(Claim::Identifier { table: Some(inner.to_string()), name: column.to_string() });
                    mask(&mut masked, range.start..next.end);
                    i += 2;
                } else {
                    claims.push(identifier(inner));
                    mask(&mut masked, range.clone());
                    i += 1;
                }
            }
        }
        let literals: Vec<_> =
            delimited(&masked, '\'', '\'', true).into_iter().map(|(r, inner)| (r, inner.to_string())).collect();
        for (range, inner) in literals {
            claims.push(Claim::Literal(inner));
            mask(&mut masked, range);
        }
        for word in masked.split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '(' | ')')) {
            let word = word.trim_end_matches(['.', ':', '!', '?']);
            if let Some((t, c)) = word.split_once('.') {
                if is_dotted_part(t) && is_dotted_part(c) {
                    claims.push(Claim::Identifier { table: Some(t.to_string()), name: c.to_string() });
                }
            }
        }
        for idx in comparison_positions(&masked) {
            let words: Vec<&str> = masked[..idx].split_whitespace().rev().take(4).collect();
            if words.is_empty() || !words[0].chars().all(|c| c.is_alphanumeric() || c == '_') {
                continue;
            }
            if words[0].chars().all(|c| c.is_ascii_digit()) {
                continue;
            }
            let runs: Vec<String> =
                (1..=words.len()).map(|n| words[..n].iter().rev().copied().collect::<Vec<_>>().join(" ")).collect();
            let name = runs.iter().rev().find(|r| self.known_name(r)).unwrap_or(&runs[0]).clone();
            claims.push(Claim::Identifier { table: None, name });
        }
        claims
    }
}

fn is_dotted_part(s: &str) -> bool {
    s.chars().count() >= 2
        && s.chars().all(|c| c.is_alphanumeric() || c == '_')
        && !s.chars().all(|c| c.is_ascii_digit())
}

fn identifier(inner: &str) -> Claim {
    match inner.split_once('.') {
        Some((t, c)) if !t.is_empty() && !c.is_empty() => {
            Claim::Identifier { table: Some(t.to_string()), name: c.to_string() }
        }
        _ => Claim::Identifier { table: None, name: inner.to_string() },
    }
}

fn mask(s: &mut String, range: std::ops::Range<usize>) {
    let blank = "#".repeat(range.len());
    s.replace_range(range, &blank);
}

/// Spans delimited by `open`/`close`. With `word_bounded`, the delimiters must
/// not touch a word character on their outer side, so apostrophes inside
/// words are not mistaken for quotes.
fn delimited(s: &str, open: char, close: char, word_bounded: bool) -> Vec<(std::ops::Range<usize>, &str)> {
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = s[from..].find(open) {
        let start = from + rel;
        if word_bounded && is_word(s[..start].chars().next_back()) {
            from = start + open.len_utf8();
            continue;
        }
        let body = start + open.len_utf8();
        let mut end = None;
        let mut search = body;
        while let Some(r) = s[search..].find(close) {
            let at = search + r;
            if !word_bounded || !is_word(s[at + close.len_utf8()..].chars().next()) {
                end = Some(at);
                break;
            }
            search = at + close.len_utf8();
        }
        let Some(end) = end else { break };
        if s[body..end].contains('\n') {
            from = body;
            continue;
        }
        out.push((start..end + close.len_utf8(), &s[body..end]));
        from = end + close.len_utf8();
    }
    out
}

fn comparison_positions(s: &str) -> Vec<usize> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if matches!(c, b'=' | b'<' | b'>' | b'!') {
            let next = bytes.get(i + 1).copied();
            let is_op = match c {
                b'!' => next == Some(b'='),
                _ => true,
            };
            if is_op {
                out.push(i);
                while i < bytes.len() && matches!(bytes[i], b'=' | b'<' | b'>' | b'!') {
                    i += 1;
                }
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Sentences: split after `.`, `!` or `?` followed by whitespace, and at newlines.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let next = chars.peek().map(|&(_, n)| n);
        let cut = if c == '\n' {
            Some(i)
        } else if matches!(c, '.' | '!' | '?') && next.is_some_and(char::is_whitespace) {
            Some(i + c.len_utf8())
        } else {
            None
        };
        if let Some(end) = cut {
            out.push(&text[start..end]);
            start = end;
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Drops every sentence asserting an identifier or literal that is neither
/// in the document's facts nor in the catalog. Text with nothing to drop is
/// returned unchanged; otherwise the kept sentences are joined by newlines.
pub fn grounding_filter(text: &str, doc: &CotfDocument, catalog: Option<&SchemaCatalog>) -> Grounded {
    filter_with(text, &Grounding::new(doc, catalog))
}

fn filter_with(text: &str, g: &Grounding<'_>) -> Grounded {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for s in sentences(text) {
        if g.claims(s).iter().all(|c| g.holds(c)) {
            kept.push(s);
        } else {
            removed.push(s.to_string());
        }
    }
    let text = if removed.is_empty() { text.to_string() } else { kept.join("\n") };
    Grounded { text, removed_claims: removed }
}

/// Keys of the grounded claims a text makes.
pub fn grounded_facts(text: &str, g: &Grounding<'_>) -> BTreeSet<String> {
    sentences(text).into_iter().flat_map(|s| g.claims(s)).filter(|c| g.holds(c)).map(|c| c.key()).collect()
}

fn mentions(text: &str, needle: &str) -> bool {
    text.to_lowercase().contains(&needle.to_lowercase())
}

fn covered(text: &str, l: &VerifiedLinking) -> bool {
    match l.kind {
        LinkingKind::Value => {
            l.literal.as_deref().is_some_and(|lit| text.contains(lit))
                && l.column.as_deref().is_some_and(|c| mentions(text, c))
        }
        LinkingKind::Schema => l.column.as_deref().or(l.table.as_deref()).is_some_and(|n| mentions(text, n)),
        LinkingKind::Function => true,
    }
}

fn floor_sentence(l: &VerifiedLinking) -> Option<String> {
    let table = l.table.as_deref()?;
    Some(match (l.kind, l.column.as_deref(), l.literal.as_deref()) {
        (LinkingKind::Value, Some(c), Some(v)) => format!("`{table}`.`{c}` = '{v}' is the stored value for this entity."),
        (LinkingKind::Schema, Some(c), _) => format!("The entity is stored in `{table}`.`{c}`."),
        (LinkingKind::Schema, None, _) => format!("The entity is stored in table `{table}`."),
        _ => return None,
    })
}

/// Appends a template sentence for each verified linking the text omits.
fn completeness_floor(mut text: String, doc: &CotfDocument, g: &Grounding<'_>) -> String {
    for l in &doc.verified {
        if covered(&text, l) {
            continue;
        }
        let Some(s) = floor_sentence(l) else { continue };
        if g.claims(&s).iter().all(|c| g.holds(c)) {
            if !text.trim().is_empty() {
                text.push('\n');
            }
            text.push_str(&s);
        }
    }
    text
}

fn no_findings(style: EvidenceStyle) -> &'static str {
    match style {
        EvidenceStyle::Long => NO_FINDINGS_LONG,
        EvidenceStyle::Concise => NO_FINDINGS_CONCISE,
    }
}

fn finish(doc: &CotfDocument, style: EvidenceStyle, g: &Grounding<'_>, text: &str, candidates: usize, mut removed: Vec<String>) -> Evidence {
    let filtered = filter_with(text, g);
    removed.extend(filtered.removed_claims);
    let mut text = completeness_floor(filtered.text.trim().to_string(), doc, g);
    if text.trim().is_empty() {
        text = no_findings(style).to_string();
    }
    Evidence { style, text, candidate_count: candidates, source: doc.question.question_id.clone(), removed_claims: removed }
}

fn generate_raw(doc: &CotfDocument, llm: &LlmClient, style: EvidenceStyle, shots: &[ShotPair], temperature: f64) -> Result<String, LlmError> {
    let request = match style {
        EvidenceStyle::Long => long_request(doc, temperature),
        EvidenceStyle::Concise => concise_request(doc, shots, temperature),
    };
    llm.chat(&request)
}

fn empty_evidence(doc: &CotfDocument, style: EvidenceStyle, candidates: usize) -> Evidence {
    Evidence {
        style,
        text: no_findings(style).to_string(),
        candidate_count: candidates,
        source: doc.question.question_id.clone(),
        removed_claims: Vec::new(),
    }
}

/// Zero-shot narrative evidence.
pub fn generate_long(doc: &CotfDocument, llm: &LlmClient, catalog: Option<&SchemaCatalog>, temperature: f64) -> Result<Evidence, LlmError> {
    generate(doc, llm, EvidenceStyle::Long, &[], catalog, temperature)
}

/// Short conclusions in the style of the given examples.
pub fn generate_concise(
    doc: &CotfDocument,
    llm: &LlmClient,
    shots: &[ShotPair],
    catalog: Option<&SchemaCatalog>,
    temperature: f64,
) -> Result<Evidence, LlmError> {
    generate(doc, llm, EvidenceStyle::Concise, shots, catalog, temperature)
}

fn generate(
    doc: &CotfDocument,
    llm: &LlmClient,
    style: EvidenceStyle,
    shots: &[ShotPair],
    catalog: Option<&SchemaCatalog>,
    temperature: f64,
) -> Result<Evidence, LlmError> {
    if doc.total_turns() == 0 {
        return Ok(empty_evidence(doc, style, 1));
    }
    let g = Grounding::new(doc, catalog);
    let raw = generate_raw(doc, llm, style, shots, temperature)?;
    Ok(finish(doc, style, &g, &raw, 1, Vec::new()))
}

/// Generates `n` candidates and merges them in one more call. Grounded
/// candidate sentences whose facts the merge lost are appended, so the merge
/// covers the union of the candidates' grounded facts.
pub fn self_consistency(
    doc: &CotfDocument,
    llm: &LlmClient,
    style: EvidenceStyle,
    n: usize,
    shots: &[ShotPair],
    catalog: Option<&SchemaCatalog>,
    temperature: f64,
) -> Result<Evidence, LlmError> {
    if n == 0 {
        return Err(LlmError::InvalidRequest("self-consistency needs at least one candidate".into()));
    }
    if n == 1 {
        return generate(doc, llm, style, shots, catalog, temperature);
    }
    if doc.total_turns() == 0 {
        return Ok(empty_evidence(doc, style, n));
    }
    let g = Grounding::new(doc, catalog);
    let mut removed = Vec::new();
    let mut candidates = Vec::with_capacity(n);
    for _ in 0..n {
        let filtered = filter_with(&generate_raw(doc, llm, style, shots, temperature)?, &g);
        removed.extend(filtered.removed_claims);
        candidates.push(filtered.text);
    }
    let merged = llm.chat(&merge_request(doc, style, &candidates, temperature))?;
    let filtered = filter_with(&merged, &g);
    removed.extend(filtered.removed_claims);
    let mut text = filtered.text.trim().to_string();
    let mut have = grounded_facts(&text, &g);
    for candidate in &candidates {
        for s in sentences(candidate) {
            let facts = grounded_facts(s, &g);
            if !facts.is_subset(&have) {
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(s);
                have.extend(facts);
            }
        }
    }
    Ok(finish(doc, style, &g, &text, n, removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split_keeps_dotted_names() {
        assert_eq!(sentences("Use `frpm`.`Low Grade`. Then stop!\nDone"), vec!["Use `frpm`.`Low Grade`.", "Then stop!", "Done"]);
    }

    #[test]
    fn apostrophes_are_not_literals() {
        let spans: Vec<_> = delimited("the school's grade is 'K' or 'K-8'", '\'', '\'', true).into_iter().map(|(_, s)| s).collect();
        assert_eq!(spans, vec!["K", "K-8"]);
    }

    #[test]
    fn comparison_operators_are_found_once() {
        assert_eq!(comparison_positions("a >= 1 and b = 2 and c != 3"), vec![2, 13, 23]);
        assert!(comparison_positions("no ! here").is_empty());
    }
}
