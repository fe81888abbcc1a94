//! Corpus BLEU, constraint consistency and the combined score.
//!
//! All functions detokenize their inputs first, so word pieces (`w7@@ a`)
//! are scored as whole words (`w7a`).

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::detokenize;

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|s| s.to_string()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 (0-100) over whitespace tokens, no smoothing.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::data(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::data("BLEU needs at least one sentence"));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h = detokenize(h.as_ref());
        let r = detokenize(r.as_ref());
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=4 {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            total[n - 1] += ht.len().saturating_sub(n - 1);
            matched[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    if hyp_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_prec: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Ok(100.0 * bp * log_prec.exp())
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whether `hay[start..end]` is delimited by word boundaries, given the
/// first and last characters of the text that would occupy the span.
pub(crate) fn on_boundary(hay: &str, start: usize, end: usize, first: char, last: char) -> bool {
    let before = hay[..start].chars().next_back();
    let after = hay[end..].chars().next();
    let left_ok = !is_word_char(first) || before.is_none_or(|c| !is_word_char(c));
    let right_ok = !is_word_char(last) || after.is_none_or(|c| !is_word_char(c));
    left_ok && right_ok
}

/// Start offsets of `needle` in `hay` that sit on word boundaries.
pub(crate) fn boundary_matches(hay: &str, needle: &str) -> Vec<usize> {
    let (Some(first), Some(last)) = (needle.chars().next(), needle.chars().next_back()) else {
        return Vec::new();
    };
    // Candidates may overlap: a match rejected for its boundaries can hide a
    // valid one that starts inside it.
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(off) = hay[from..].find(needle) {
        let i = from + off;
        if on_boundary(hay, i, i + needle.len(), first, last) {
            found.push(i);
        }
        from = i + hay[i..].chars().next().map_or(1, char::len_utf8);
    }
    found
}

/// Number of non-overlapping word-boundary occurrences of `needle`,
/// chosen greedily from the left.
pub(crate) fn count_occurrences(hay: &str, needle: &str) -> usize {
    let mut count = 0;
    let mut free_from = 0;
    for i in boundary_matches(hay, needle) {
        if i >= free_from {
            count += 1;
            free_from = i + needle.len();
        }
    }
    count
}

/// Which constraints `output` satisfies, in list order.
///
/// Matching is exact, case-sensitive and on word boundaries of detokenized
/// text. A constraint listed `m` times needs `m` non-overlapping occurrences;
/// with only `f < m` found, the first `f` copies count as hits.
pub fn constraint_hits<S: AsRef<str>>(output: &str, constraints: &[S]) -> Vec<bool> {
    let out = detokenize(output);
    let mut budget: HashMap<String, usize> = HashMap::new();
    constraints
        .iter()
        .map(|c| {
            let c = detokenize(c.as_ref());
            let left = budget.entry(c.clone()).or_insert_with(|| count_occurrences(&out, &c));
            if *left > 0 {
                *left -= 1;
                true
            } else {
                false
            }
        })
        .collect()
}

/// Whether `output` satisfies every constraint.
pub fn is_compliant<S: AsRef<str>>(output: &str, constraints: &[S]) -> bool {
    constraint_hits(output, constraints).into_iter().all(|h| h)
}

/// `(term%, sent%)`. A corpus without constraints scores 100/100.
pub fn consistency<H: AsRef<str>, S: AsRef<str>>(hyps: &[H], constraint_lists: &[Vec<S>]) -> Result<(f64, f64)> {
    if hyps.len() != constraint_lists.len() {
        return Err(Error::data(format!("{} hypotheses but {} constraint lists", hyps.len(), constraint_lists.len())));
    }
    let (mut hit, mut total, mut ok) = (0usize, 0usize, 0usize);
    for (h, cs) in hyps.iter().zip(constraint_lists) {
        let hits = constraint_hits(h.as_ref(), cs);
        total += hits.len();
        hit += hits.iter().filter(|&&x| x).count();
        ok += usize::from(hits.iter().all(|&x| x));
    }
    let term = if total == 0 { 100.0 } else { 100.0 * hit as f64 / total as f64 };
    let sent = if hyps.is_empty() { 100.0 } else { 100.0 * ok as f64 / hyps.len() as f64 };
    Ok((term, sent))
}

/// BLEU after replacing every non-compliant hypothesis with the empty string.
pub fn combined_score<H: AsRef<str>, R: AsRef<str>, S: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    constraint_lists: &[Vec<S>],
) -> Result<f64> {
    if hyps.len() != constraint_lists.len() {
        return Err(Error::data(format!("{} hypotheses but {} constraint lists", hyps.len(), constraint_lists.len())));
    }
    let kept: Vec<&str> = hyps
        .iter()
        .zip(constraint_lists)
        .map(|(h, cs)| if is_compliant(h.as_ref(), cs) { h.as_ref() } else { "" })
        .collect();
    corpus_bleu(&kept, refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEval {
    pub id: String,
    pub hits: Vec<bool>,
    /// Constraints the output failed to contain.
    pub missing: Vec<String>,
    /// The output was replaced by the empty string for the combined score.
    pub emptied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub term_pct: f64,
    pub sent_pct: f64,
    pub combined: f64,
    pub per_sentence: Vec<SentenceEval>,
}

impl EvalReport {
    /// `(term%, sent%)` recomputed from the per-sentence entries.
    pub fn recount(&self) -> (f64, f64) {
        let total: usize = self.per_sentence.iter().map(|s| s.hits.len()).sum();
        let hit: usize = self.per_sentence.iter().map(|s| s.hits.iter().filter(|&&h| h).count()).sum();
        let ok = self.per_sentence.iter().filter(|s| !s.emptied).count();
        let term = if total == 0 { 100.0 } else { 100.0 * hit as f64 / total as f64 };
        let sent =
            if self.per_sentence.is_empty() { 100.0 } else { 100.0 * ok as f64 / self.per_sentence.len() as f64 };
        (term, sent)
    }
}

/// All metrics for one system output.
pub fn evaluate<I: AsRef<str>, H: AsRef<str>, R: AsRef<str>, S: AsRef<str>>(
    ids: &[I],
    hyps: &[H],
    refs: &[R],
    constraint_lists: &[Vec<S>],
) -> Result<EvalReport> {
    if ids.len() != hyps.len() {
        return Err(Error::data(format!("{} ids but {} hypotheses", ids.len(), hyps.len())));
    }
    let bleu = corpus_bleu(hyps, refs)?;
    let (term_pct, sent_pct) = consistency(hyps, constraint_lists)?;
    let combined = combined_score(hyps, refs, constraint_lists)?;
    let per_sentence = ids
        .iter()
        .zip(hyps)
        .zip(constraint_lists)
        .map(|((id, h), cs)| {
            let hits = constraint_hits(h.as_ref(), cs);
            let missing = cs.iter().zip(&hits).filter(|(_, &hit)| !hit).map(|(c, _)| c.as_ref().to_string()).collect();
            let emptied = hits.iter().any(|&x| !x);
            SentenceEval { id: id.as_ref().to_string(), hits, missing, emptied }
        })
        .collect();
    Ok(EvalReport { bleu, term_pct, sent_pct, combined, per_sentence })
}

/// Fixed-width results table, one row per setting.
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max("Setting".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}  {:>8}", "Setting", "BLEU", "Term%", "Sent%", "Combined");
    let _ = writeln!(out, "{}", "-".repeat(width + 2 + 7 + 2 + 7 + 2 + 7 + 2 + 8));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8.2}",
            name, r.bleu, r.term_pct, r.sent_pct, r.combined
        );
    }
    out
}
