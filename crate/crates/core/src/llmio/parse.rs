//! Total parsing of LLM selections into candidate indices.

use std::collections::HashSet;

/// Parsed selection of 1-based pool indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    /// True when padding had to fill part of the selection.
    pub fallback_used: bool,
}

/// Extracts exactly `want` distinct indices in `1..=pool_size`.
///
/// Integers are read from the first bracketed list when it holds any,
/// otherwise from the whole text. Duplicates and out-of-range values are
/// dropped and the remainder padded with the smallest unused indices.
pub fn parse_selection(text: &str, pool_size: usize, want: usize) -> Vec<usize> {
    select(text, pool_size, &[], want).indices
}

fn pad(out: &mut Vec<usize>, pool_size: usize, want: usize) {
    let want = want.min(pool_size);
    let mut next = 1;
    while out.len() < want {
        if !out.contains(&next) {
            out.push(next);
        }
        next += 1;
    }
}

/// Like [`parse_selection`] over a titled pool, adding a title-matching
/// pass for responses that name candidates instead of numbering them.
pub fn parse_selection_with_titles(text: &str, titles: &[&str], want: usize) -> Selection {
    select(text, titles.len(), titles, want)
}

/// Shared core with an explicit pool size.
pub fn select(text: &str, pool_size: usize, titles: &[&str], want: usize) -> Selection {
    let want = want.min(pool_size);
    let mut out: Vec<usize> = Vec::with_capacity(want);
    for n in integers(text) {
        if out.len() == want {
            break;
        }
        if (1..=pool_size).contains(&n) && !out.contains(&n) {
            out.push(n);
        }
    }
    if out.len() < want && !titles.is_empty() {
        for idx in match_titles(text, titles) {
            if out.len() == want {
                break;
            }
            if !out.contains(&idx) {
                out.push(idx);
            }
        }
    }
    let fallback_used = out.len() < want;
    pad(&mut out, pool_size, want);
    Selection {
        indices: out,
        fallback_used,
    }
}

fn digit_runs(s: &str) -> Vec<usize> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let negative = start > 0 && b[start - 1] == b'-';
            let decimal = (start > 0 && b[start - 1] == b'.' && start > 1 && b[start - 2].is_ascii_digit())
                || (i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit());
            if !negative && !decimal {
                // oversized literals saturate and fall out of range
                out.push(s[start..i].parse().unwrap_or(usize::MAX));
            }
        } else {
            i += 1;
        }
    }
    out
}

fn integers(text: &str) -> Vec<usize> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let nums = digit_runs(&after[..close]);
        if !nums.is_empty() {
            return nums;
        }
        rest = &after[close + 1..];
    }
    digit_runs(text)
}

fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c.is_whitespace() && !out.ends_with(' ') {
            out.push(' ');
        }
    }
    out.trim().to_string()
}

fn longest_common_substring(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Pool indices named by title, in order of appearance in `text`.
fn match_titles(text: &str, titles: &[&str]) -> Vec<usize> {
    let norm_titles: Vec<(Vec<char>, String)> = titles
        .iter()
        .map(|t| {
            let n = normalize(t);
            (n.chars().collect(), n)
        })
        .collect();
    let mut out = Vec::new();
    let mut taken = HashSet::new();
    for seg in text.split(['\n', ';', '[', ']', '"']) {
        let norm = normalize(seg);
        if norm.chars().count() < 4 || !norm.chars().any(char::is_alphabetic) {
            continue;
        }
        if let Some(i) = norm_titles.iter().position(|(_, t)| *t == norm) {
            if taken.insert(i) {
                out.push(i + 1);
            }
            continue;
        }
        let seg_chars: Vec<char> = norm.chars().collect();
        let mut best: Option<(f64, usize)> = None;
        for (i, (tc, _)) in norm_titles.iter().enumerate() {
            if taken.contains(&i) || tc.is_empty() {
                continue;
            }
            let shorter = tc.len().min(seg_chars.len());
            let ratio = longest_common_substring(&seg_chars, tc) as f64 / shorter as f64;
            if ratio >= 0.8 && best.is_none_or(|(r, _)| ratio > r) {
                best = Some((ratio, i));
            }
        }
        if let Some((_, i)) = best {
            taken.insert(i);
            out.push(i + 1);
        }
    }
    out
}
