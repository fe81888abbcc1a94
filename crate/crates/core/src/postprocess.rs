//! Output repairs that let exact constraint matching succeed.
//!
//! Both repairs compare the output and a missing constraint with all
//! whitespace removed, locate the matching span in the original output
//! through a character back-map, and splice the constraint's own spelling
//! into that span. Everything outside the span is left byte-identical.
//!
//! * [`restore_oov`] lets each unk sentinel in the output stand for one or
//!   more non-space characters of the constraint; the span must contain at
//!   least one sentinel.
//! * [`repair_spacing`] requires the space-stripped texts to agree exactly.
//!
//! Candidate spans must sit on word boundaries. A splice is accepted only if
//! it satisfies another constraint occurrence without losing any that was
//! already satisfied. The leftmost candidate wins, and among candidates
//! starting there the longest. Each function repeats until nothing changes,
//! so applying it twice is the same as applying it once. [`postprocess`] runs OOV restoration first, then
//! spacing repair, until neither changes the output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evaluation::{count_occurrences, on_boundary};
use crate::text::detokenize;
use crate::vocab::UNK;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repaired {
    pub output: String,
    pub repairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Ch(char),
    Wild,
}

/// Non-space units of `text` and the byte range each occupies.
fn strip(text: &str) -> (Vec<Unit>, Vec<(usize, usize)>) {
    let mut units = Vec::new();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < text.len() {
        if text[i..].starts_with(UNK) {
            units.push(Unit::Wild);
            spans.push((i, i + UNK.len()));
            i += UNK.len();
            continue;
        }
        let c = text[i..].chars().next().expect("in bounds");
        if !c.is_whitespace() {
            units.push(Unit::Ch(c));
            spans.push((i, i + c.len_utf8()));
        }
        i += c.len_utf8();
    }
    (units, spans)
}

/// A constraint with spaces removed; `gap_before[i]` marks a space before
/// character `i` in the original spelling.
struct Pattern {
    chars: Vec<char>,
    gap_before: Vec<bool>,
}

impl Pattern {
    fn new(constraint: &str) -> Self {
        let mut chars = Vec::new();
        let mut gap_before = Vec::new();
        let mut gap = false;
        for c in constraint.chars() {
            if c.is_whitespace() {
                gap = true;
            } else {
                chars.push(c);
                gap_before.push(gap && !gap_before.is_empty());
                gap = false;
            }
        }
        Self { chars, gap_before }
    }
}

/// Every unit index `end` such that `units[start..end]` matches the whole
/// pattern, in increasing order. A wildcard covers one or more pattern
/// characters that are not separated by a space.
fn match_ends(units: &[Unit], start: usize, pat: &Pattern, wild: bool) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut stack = vec![(start, 0usize)];
    while let Some((u, c)) = stack.pop() {
        if c == pat.chars.len() {
            ends.push(u);
            continue;
        }
        match units.get(u) {
            Some(Unit::Ch(ch)) if *ch == pat.chars[c] => stack.push((u + 1, c + 1)),
            Some(Unit::Wild) if wild => {
                let mut k = c + 1;
                loop {
                    stack.push((u + 1, k));
                    if k == pat.chars.len() || pat.gap_before[k] {
                        break;
                    }
                    k += 1;
                }
            }
            _ => {}
        }
    }
    ends.sort_unstable();
    ends.dedup();
    ends
}

/// Candidate spans for `constraint`, leftmost first and longest first among
/// those sharing a start.
fn candidate_spans(output: &str, constraint: &str, wild: bool) -> Vec<(usize, usize)> {
    let pat = Pattern::new(constraint);
    let (Some(first), Some(last)) = (constraint.chars().next(), constraint.chars().next_back()) else {
        return Vec::new();
    };
    let (units, spans) = strip(output);
    let mut found = Vec::new();
    for start in 0..units.len() {
        // Longest span first, so a sentinel's neighbours are absorbed.
        for end in match_ends(&units, start, &pat, wild).into_iter().rev() {
            if end == start {
                continue;
            }
            if wild && !units[start..end].contains(&Unit::Wild) {
                continue;
            }
            let (s, e) = (spans[start].0, spans[end - 1].1);
            if &output[s..e] != constraint && on_boundary(output, s, e, first, last) {
                found.push((s, e));
            }
        }
    }
    found
}

/// Distinct non-empty constraints (detokenized) with their multiplicities.
fn wanted<S: AsRef<str>>(constraints: &[S]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for c in constraints {
        let c = detokenize(c.as_ref());
        if !c.is_empty() {
            *m.entry(c).or_insert(0) += 1;
        }
    }
    m
}

/// Occurrences of each wanted constraint that count towards compliance.
fn satisfied(output: &str, want: &BTreeMap<String, usize>) -> Vec<usize> {
    want.iter().map(|(c, &m)| count_occurrences(output, c).min(m)).collect()
}

fn repair_loop<S: AsRef<str>>(output: &str, constraints: &[S], wild: bool) -> Repaired {
    let want = wanted(constraints);
    let mut out = output.to_string();
    let mut repairs = 0;
    loop {
        let before = satisfied(&out, &want);
        let fix = want.iter().zip(&before).filter(|((_, &m), &have)| have < m).find_map(|((c, _), _)| {
            candidate_spans(&out, c, wild).into_iter().find_map(|(s, e)| {
                let mut next = out.clone();
                next.replace_range(s..e, c);
                let after = satisfied(&next, &want);
                let gains = after.iter().zip(&before).all(|(a, b)| a >= b) && after != before;
                gains.then_some(next)
            })
        });
        let Some(next) = fix else { break };
        out = next;
        repairs += 1;
    }
    Repaired { output: out, repairs }
}

/// Splice a missing constraint over the output span that equals it once
/// spaces are removed (`"an auto - transformer"` → `"an auto-transformer"`).
pub fn repair_spacing<S: AsRef<str>>(output: &str, constraints: &[S]) -> String {
    repair_loop(output, constraints, false).output
}

/// Replace spans where unk sentinels stand in for a constraint's characters
/// (`"⟨unk⟩ winding"` → `"shunt winding"`). Unresolvable sentinels stay.
pub fn restore_oov<S: AsRef<str>>(output: &str, constraints: &[S]) -> String {
    repair_loop(output, constraints, true).output
}

/// OOV restoration then spacing repair, repeated until stable.
pub fn postprocess<S: AsRef<str>>(output: &str, constraints: &[S]) -> Repaired {
    let mut out = output.to_string();
    let mut repairs = 0;
    loop {
        let a = repair_loop(&out, constraints, true);
        let b = repair_loop(&a.output, constraints, false);
        let n = a.repairs + b.repairs;
        out = b.output;
        repairs += n;
        if n == 0 {
            return Repaired { output: out, repairs };
        }
    }
}
