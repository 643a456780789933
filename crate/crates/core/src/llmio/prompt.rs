//! Prompt templates for candidate filtering and masked-item reasoning, plus a
//! parser that recovers their structure (used by the mock transports).

use crate::error::{Error, Result};

pub const AUGMENT_HEADER: &str = "Interaction history (most recent first):";
pub const REASON_HEADER: &str = "Interaction sequence (earliest first):";
pub const CANDIDATE_HEADER: &str = "Candidate pool:";
pub const USER_PREFIX: &str = "User: ";
pub const HISTORY_SLOT: &str = "His Item";
pub const SEQUENCE_SLOT: &str = "Seq Item";
pub const CANDIDATE_SLOT: &str = "Cand Item";
pub const MASK_LINE: &str = "Masked item: [MASK]";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    Augment,
    Reason,
}

/// Titles flattened to a single line so slot parsing stays unambiguous.
fn clean_title(title: &str) -> Result<String> {
    let t: String = title
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if t.is_empty() {
        return Err(Error::InvalidItem("empty title in prompt".into()));
    }
    Ok(t)
}

fn example_list(want: usize) -> String {
    (1..=want.min(3))
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn push_slots(out: &mut String, slot: &str, titles: &[&str]) -> Result<()> {
    for (i, t) in titles.iter().enumerate() {
        out.push_str(&format!("{slot}{}: {}\n", i + 1, clean_title(t)?));
    }
    Ok(())
}

/// Candidate-filtering prompt: task, reversed history, candidates, format.
pub fn render_augment(
    user_id: &str,
    history_rev: &[&str],
    candidates: &[&str],
    want: usize,
) -> Result<String> {
    let mut p = String::new();
    p.push_str(&format!(
        "Task: The interactions of a user are listed below from the most recent to the earliest. \
         Choose exactly {want} items from the candidate pool that this user most plausibly \
         interacted with before the earliest listed interaction. Keep candidates whose content \
         matches the interests shown in the history and drop the ones that do not fit.\n"
    ));
    p.push_str(&format!("{USER_PREFIX}{user_id}\n\n{AUGMENT_HEADER}\n"));
    push_slots(&mut p, HISTORY_SLOT, history_rev)?;
    p.push_str(&format!("\n{CANDIDATE_HEADER}\n"));
    push_slots(&mut p, CANDIDATE_SLOT, candidates)?;
    p.push_str(&format!(
        "\nOutput format: reply with only a JSON list of exactly {want} distinct candidate numbers \
         between 1 and {}, ordered from the earliest to the latest interaction, e.g. [{}].\n",
        candidates.len(),
        example_list(want)
    ));
    Ok(p)
}

/// Masked-item reasoning prompt.
pub fn render_reason(user_id: &str, context: &[&str], candidates: &[&str]) -> Result<String> {
    let mut p = String::new();
    p.push_str(
        "Task: The interactions of a user are listed below from the earliest to the latest. \
         The most recent interaction has been masked. Infer which candidate is the masked item.\n",
    );
    p.push_str(&format!("{USER_PREFIX}{user_id}\n\n{REASON_HEADER}\n"));
    push_slots(&mut p, SEQUENCE_SLOT, context)?;
    p.push_str(&format!("{MASK_LINE}\n\n{CANDIDATE_HEADER}\n"));
    push_slots(&mut p, CANDIDATE_SLOT, candidates)?;
    p.push_str(&format!(
        "\nOutput format: reply with only a JSON list of exactly 1 candidate number between 1 \
         and {}, e.g. [1].\n",
        candidates.len()
    ));
    Ok(p)
}

/// Structure recovered from a rendered prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptView {
    pub kind: PromptKind,
    pub user_id: String,
    /// Titles in the order they appear in the prompt.
    pub history: Vec<String>,
    pub candidates: Vec<String>,
    pub want: usize,
}

impl PromptView {
    pub fn parse(prompt: &str) -> Option<Self> {
        let kind = if prompt.contains(AUGMENT_HEADER) {
            PromptKind::Augment
        } else if prompt.contains(REASON_HEADER) {
            PromptKind::Reason
        } else {
            return None;
        };
        let history_slot = match kind {
            PromptKind::Augment => HISTORY_SLOT,
            PromptKind::Reason => SEQUENCE_SLOT,
        };
        let mut user_id = None;
        let mut history = Vec::new();
        let mut candidates = Vec::new();
        for line in prompt.lines() {
            if let Some(u) = line.strip_prefix(USER_PREFIX) {
                user_id.get_or_insert_with(|| u.to_string());
            } else if let Some(t) = slot_title(line, history_slot) {
                history.push(t);
            } else if let Some(t) = slot_title(line, CANDIDATE_SLOT) {
                candidates.push(t);
            }
        }
        let want = match kind {
            PromptKind::Reason => 1,
            PromptKind::Augment => {
                let tail = prompt.split("Output format:").nth(1)?;
                let after = tail.split("exactly ").nth(1)?;
                let digits: String = after.chars().take_while(char::is_ascii_digit).collect();
                digits.parse().ok()?
            }
        };
        Some(Self {
            kind,
            user_id: user_id?,
            history,
            candidates,
            want,
        })
    }
}

fn slot_title(line: &str, slot: &str) -> Option<String> {
    let rest = line.strip_prefix(slot)?;
    let (num, title) = rest.split_once(": ")?;
    if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(title.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augment_prompt_round_trips() {
        let p = render_augment("u7", &["Blue Jeans", "Red Shirt"], &["Hat", "Belt", "Scarf"], 2)
            .unwrap();
        for t in ["Blue Jeans", "Red Shirt", "Hat", "Belt", "Scarf"] {
            assert!(p.contains(t));
        }
        assert!(p.contains("exactly 2"));
        assert!(p.contains("His Item1: Blue Jeans"));
        assert!(p.contains("Cand Item3: Scarf"));
        let task = p.find("Task:").unwrap();
        let his = p.find(HISTORY_SLOT).unwrap();
        let cand = p.find(CANDIDATE_SLOT).unwrap();
        let fmt = p.find("Output format").unwrap();
        assert!(task < his && his < cand && cand < fmt);
        let v = PromptView::parse(&p).unwrap();
        assert_eq!(v.kind, PromptKind::Augment);
        assert_eq!(v.user_id, "u7");
        assert_eq!(v.history, vec!["Blue Jeans", "Red Shirt"]);
        assert_eq!(v.candidates, vec!["Hat", "Belt", "Scarf"]);
        assert_eq!(v.want, 2);
    }

    #[test]
    fn reason_prompt_round_trips() {
        let p = render_reason("u1", &["a b c"], &["x", "y"]).unwrap();
        let v = PromptView::parse(&p).unwrap();
        assert_eq!(v.kind, PromptKind::Reason);
        assert_eq!(v.history, vec!["a b c"]);
        assert_eq!(v.candidates.len(), 2);
        assert_eq!(v.want, 1);
    }

    #[test]
    fn empty_title_is_rejected_and_newlines_flattened() {
        assert!(render_augment("u", &["  "], &["x"], 1).is_err());
        let p = render_augment("u", &["two\nlines"], &["x"], 1).unwrap();
        assert!(p.contains("His Item1: two lines\n"));
    }

    #[test]
    fn unknown_text_does_not_parse() {
        assert!(PromptView::parse("hello").is_none());
    }
}
