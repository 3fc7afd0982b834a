//! Final-answer extraction and exact multiple-choice judging.
//!
//! Generated solutions are expected to carry reasoning inside a
//! `<think>...</think>` block followed by bare option labels. The judge
//! reads only the labels after the last close marker and compares them
//! against the gold label set; malformedness is reported through flags,
//! never as an error.

use std::collections::BTreeSet;

use crate::types::{CorrectnessPair, FormatFlag, FormatFlags, QAItem, Solution};

const THINK_CLOSE: &str = "</think>";

/// The answer portion recovered from a solution's raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    /// Deduplicated uppercase letters of the first answer token. Empty
    /// means no parseable final answer.
    pub letters: BTreeSet<char>,
    /// Everything after the last `</think>` marker, or the whole text when
    /// no marker is present.
    pub raw_tail: String,
    pub had_think_block: bool,
}

/// Extracts the final answer letters from arbitrary generated text.
///
/// The tail is everything after the LAST `</think>` marker; models sometimes
/// echo the marker inside their reasoning, and the final one delimits the
/// answer. Decorations (whitespace, `\boxed{...}`, answer prefixes,
/// punctuation) are stripped before reading letters from the first nonblank
/// token.
pub fn extract_final_answer(text: &str) -> ParsedAnswer {
    let (raw_tail, had_think_block) = match text.rfind(THINK_CLOSE) {
        Some(pos) => (&text[pos + THINK_CLOSE.len()..], true),
        None => (text, false),
    };
    ParsedAnswer {
        letters: letters_of(raw_tail),
        raw_tail: raw_tail.to_string(),
        had_think_block,
    }
}

fn letters_of(tail: &str) -> BTreeSet<char> {
    let mut s = tail.trim();
    for prefix in ["the answer is", "answer:", "answer is", "final answer:"] {
        // `get` rejects slices that would split a multibyte character.
        if let Some(head) = s.get(..prefix.len()) {
            if head.eq_ignore_ascii_case(prefix) {
                s = s[prefix.len()..].trim_start();
            }
        }
    }
    if let Some(inner) = s.strip_prefix("\\boxed{") {
        s = inner.split('}').next().unwrap_or(inner);
    }
    let token = match s.split_whitespace().next() {
        Some(t) => t,
        None => return BTreeSet::new(),
    };
    token
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

/// Binary exact-match judgment: correct iff the parsed letters equal the
/// gold set. An empty parse can never match a nonempty gold set.
pub fn judge_answer(parsed: &ParsedAnswer, gold: &BTreeSet<char>) -> bool {
    debug_assert!(!gold.is_empty());
    !parsed.letters.is_empty()
        && parsed.letters
            == gold
                .iter()
                .map(|c| c.to_ascii_uppercase())
                .collect::<BTreeSet<char>>()
}

/// Judges both stages of an interaction, returning the correctness pair and
/// the per-stage format flags.
pub fn judge_pair(
    item: &QAItem,
    y0: &Solution,
    y1: &Solution,
) -> (CorrectnessPair, FormatFlags, FormatFlags) {
    let (s0, flags0) = judge_solution(item, y0);
    let (s1, flags1) = judge_solution(item, y1);
    (CorrectnessPair::new(s0, s1), flags0, flags1)
}

fn judge_solution(item: &QAItem, sol: &Solution) -> (bool, FormatFlags) {
    let parsed = extract_final_answer(&sol.text);
    let mut flags = FormatFlags::new();
    if !parsed.had_think_block {
        flags.insert(FormatFlag::MissingThinkTags);
    }
    if parsed.letters.is_empty() {
        flags.insert(FormatFlag::EmptyFinalAnswer);
    }
    (judge_answer(&parsed, &item.gold), flags)
}
