//! Question decomposition: model segmentation followed by token-level
//! refinement against the original wording.

use serde_json::Value as Json;

use crate::cotf::{Clause, TokenSpan};
use crate::llm::{LlmClient, LlmError};
use crate::prompts::segmentation_request;
use crate::tokenize::{tokenize, Token};

/// Asks the model for a coarse segmentation. An empty answer degrades to the
/// whole question as one clause.
pub fn segment(question: &str, llm: &LlmClient, temperature: f64) -> Result<Vec<String>, LlmError> {
    let raw = llm.chat(&segmentation_request(question, temperature))?;
    let clauses = parse_segmentation(&raw);
    if clauses.is_empty() {
        Ok(vec![question.to_string()])
    } else {
        Ok(clauses)
    }
}

/// Reads a JSON array of strings, or failing that one clause per line.
pub fn parse_segmentation(raw: &str) -> Vec<String> {
    for (start, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Json>();
        if let Some(Ok(Json::Array(items))) = stream.next() {
            if items.iter().all(Json::is_string) {
                return items
                    .iter()
                    .filter_map(Json::as_str)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
            }
        }
    }
    raw.lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '-' | '*' | '.' | ')'))
                .trim()
                .trim_matches('"')
        })
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .map(str::to_string)
        .collect()
}

fn tokens_match(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    short.chars().count() >= 4 && long.len() - short.len() <= 2 && long.starts_with(short)
}

/// Longest common subsequence of `clause` in `question`, choosing the
/// earliest question positions. Returns the matched question indices.
fn early_lcs(clause: &[String], question: &[String]) -> Vec<usize> {
    let (m, n) = (clause.len(), question.len());
    let mut table = vec![vec![0u32; n + 1]; m + 1];
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            table[i][j] = if tokens_match(&clause[i], &question[j]) {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut matched = Vec::new();
    while i < m && j < n {
        if tokens_match(&clause[i], &question[j]) && table[i][j] == table[i + 1][j + 1] + 1 {
            matched.push(j);
            i += 1;
            j += 1;
        } else if table[i + 1][j] == table[i][j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    matched
}

/// Keeps the densest run of matches, so that a stray word matched far away
/// does not stretch the clause over its neighbours.
fn densest_run(matched: &[usize], clause_len: usize) -> &[usize] {
    let max_gap = (clause_len / 2).max(2);
    let mut best = (0, 0);
    let mut start = 0;
    for i in 1..=matched.len() {
        if i == matched.len() || matched[i] - matched[i - 1] > max_gap + 1 {
            if i - start > best.1 - best.0 {
                best = (start, i);
            }
            start = i;
        }
    }
    &matched[best.0..best.1]
}

fn clause_from(question: &str, tokens: &[Token], index: usize, start: usize, end: usize) -> Clause {
    Clause {
        index,
        text: question[tokens[start].start..tokens[end - 1].end].to_string(),
        token_span: TokenSpan { start, end },
    }
}

/// Aligns proposed clauses to the question token by token and returns an
/// ordered, gap-free partition of the question made of verbatim spans.
///
/// Each proposal is aligned after the previous one; unmatched tokens between
/// two aligned clauses are split at the midpoint, and leading/trailing tokens
/// join the first/last clause. Proposals that align nowhere are dropped.
pub fn token_refine(question: &str, proposed: &[String]) -> Vec<Clause> {
    let tokens = tokenize(question);
    if tokens.is_empty() {
        return Vec::new();
    }
    let normalized: Vec<String> = tokens.iter().map(Token::normalized).collect();
    let mut anchors: Vec<(usize, usize)> = Vec::new();
    let mut cursor = 0;
    for p in proposed {
        if cursor >= tokens.len() {
            break;
        }
        let clause: Vec<String> = tokenize(p).iter().map(Token::normalized).collect();
        if clause.is_empty() {
            continue;
        }
        let matched = early_lcs(&clause, &normalized[cursor..]);
        let run = densest_run(&matched, clause.len());
        if let (Some(first), Some(last)) = (run.first(), run.last()) {
            anchors.push((cursor + first, cursor + last));
            cursor += last + 1;
        }
    }
    if anchors.is_empty() {
        return vec![clause_from(question, &tokens, 0, 0, tokens.len())];
    }
    let mut starts = vec![0];
    for pair in anchors.windows(2) {
        let gap_start = pair[0].1 + 1;
        let gap_end = pair[1].0;
        starts.push(gap_start + (gap_end - gap_start) / 2);
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = starts.get(i + 1).copied().unwrap_or(tokens.len());
            clause_from(question, &tokens, i, start, end)
        })
        .collect()
}

/// Segments with the model and refines; the result always partitions the question.
pub fn break_up(question: &str, llm: &LlmClient, temperature: f64) -> Result<Vec<Clause>, LlmError> {
    let proposed = segment(question, llm, temperature)?;
    Ok(token_refine(question, &proposed))
}
