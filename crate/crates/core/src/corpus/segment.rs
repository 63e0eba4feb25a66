//! Proof step segmentation.
//!
//! Blank lines always separate steps. Inside a blank-free block every line
//! starts a new step unless it is merged into the previous one: a line is
//! merged when the previous line ends with `:`, or when the line itself
//! opens a display-math or template block (`{{`, `$$`, `:$`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::mention::{parse_mentions, ReferenceMention};

/// Separator placed between serialized proof steps.
pub const STEP_SEPARATOR: &str = "\n\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub lines: Vec<String>,
    pub raw: String,
    pub mentions: Vec<ReferenceMention>,
}

impl ProofStep {
    pub fn from_lines(lines: Vec<String>) -> Self {
        let raw = lines.join("\n");
        let mentions = parse_mentions(&raw);
        ProofStep { lines, raw, mentions }
    }

    /// Builds a step from free text, one line per `\n`.
    pub fn from_text(text: &str) -> Self {
        Self::from_lines(text.lines().map(str::to_string).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofDocument {
    pub steps: Vec<ProofStep>,
    pub ref_titles: BTreeSet<String>,
}

impl ProofDocument {
    pub fn from_steps(steps: Vec<ProofStep>) -> Self {
        let ref_titles = steps
            .iter()
            .flat_map(|s| s.mentions.iter().map(ReferenceMention::canonical_title))
            .collect();
        ProofDocument { steps, ref_titles }
    }

    /// An empty document cannot be stored as a gold proof.
    pub fn is_valid_gold(&self) -> bool {
        !self.steps.is_empty()
    }

    /// Canonical reference titles in order of first mention.
    pub fn ordered_ref_titles(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.steps
            .iter()
            .flat_map(|s| s.mentions.iter())
            .map(ReferenceMention::canonical_title)
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    /// Steps joined by [`STEP_SEPARATOR`].
    pub fn serialize(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.raw.as_str())
            .collect::<Vec<_>>()
            .join(STEP_SEPARATOR)
    }
}

fn opens_block(line: &str) -> bool {
    line.starts_with("{{") || line.starts_with("$$") || line.starts_with(":$")
}

/// Splits a raw proof into steps. Lines are trimmed; whitespace-only lines
/// count as blank.
pub fn segment_proof(raw_proof: &str) -> ProofDocument {
    let mut steps: Vec<ProofStep> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut flush = |current: &mut Vec<String>| {
        if !current.is_empty() {
            steps.push(ProofStep::from_lines(std::mem::take(current)));
        }
    };
    for line in raw_proof.lines().map(str::trim) {
        if line.is_empty() {
            flush(&mut current);
            continue;
        }
        let merge = match current.last() {
            Some(prev) => prev.ends_with(':') || opens_block(line),
            None => false,
        };
        if !merge {
            flush(&mut current);
        }
        current.push(line.to_string());
    }
    flush(&mut current);
    ProofDocument::from_steps(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_line_separates() {
        assert_eq!(segment_proof("Line A\n\nLine B").steps.len(), 2);
    }

    #[test]
    fn colon_merge() {
        let doc = segment_proof("By definition:\n$x = 2k$\n\nHence done.");
        assert_eq!(doc.steps.len(), 2);
        assert_eq!(doc.steps[0].lines, vec!["By definition:", "$x = 2k$"]);
        assert_eq!(doc.steps[0].raw, "By definition:\n$x = 2k$");
    }

    #[test]
    fn single_line() {
        let doc = segment_proof("Only one line.");
        assert_eq!(doc.steps.len(), 1);
        assert_eq!(doc.steps[0].lines.len(), 1);
    }

    #[test]
    fn template_lines_attach() {
        let doc = segment_proof("Then:\n{{begin-eqn}}\n{{eqn | l = x}}\n{{end-eqn}}\nSo $x$ is odd.\n{{qed}}");
        assert_eq!(doc.steps.len(), 2);
        assert_eq!(doc.steps[0].lines.len(), 4);
        assert_eq!(doc.steps[1].lines, vec!["So $x$ is odd.", "{{qed}}"]);
    }

    #[test]
    fn lines_without_merge_split() {
        assert_eq!(segment_proof("Let $x$ be even.\nThen $x + 1$ is odd.").steps.len(), 2);
    }

    #[test]
    fn empty_input_is_invalid_gold() {
        let doc = segment_proof("");
        assert!(doc.steps.is_empty());
        assert!(!doc.is_valid_gold());
        assert!(segment_proof(" \n\n  ").steps.is_empty());
    }

    #[test]
    fn ref_titles_union_and_order() {
        let doc = segment_proof(
            "[[Definition:Odd_Integer|odd]] and [[Definition:Even_Integer|even]]\n\nby [[Definition:Odd Integer|odd]]",
        );
        assert_eq!(doc.ref_titles.len(), 2);
        assert_eq!(
            doc.ordered_ref_titles(),
            vec!["Definition:Odd Integer", "Definition:Even Integer"]
        );
    }
}
