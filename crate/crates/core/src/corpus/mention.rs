//! Wiki-style reference mentions: `[[Namespace:Title|surface]]`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Which kind of page a mention points at, inferred from its namespace prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MentionKind {
    Definition,
    Theorem,
    Axiom,
    Other,
}

/// One `[[...]]` link found in a piece of text.
///
/// `span` is a half-open byte range into the source string covering the
/// brackets. `target_title` is the page title without its namespace, exactly
/// as written (underscores are kept); use [`ReferenceMention::canonical_title`]
/// for comparisons.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceMention {
    pub target_kind: MentionKind,
    pub namespace: Option<String>,
    pub target_title: String,
    pub surface: String,
    pub span: Range<usize>,
}

impl ReferenceMention {
    /// Full page title (namespace included) after title normalization.
    pub fn canonical_title(&self) -> String {
        match &self.namespace {
            Some(ns) => normalize_title(&format!("{ns}:{}", self.target_title)),
            None => normalize_title(&self.target_title),
        }
    }

    /// Renders the mention back into wiki syntax. The pipe is omitted when
    /// the surface equals the rendered title.
    pub fn to_wikitext(&self) -> String {
        let target = match &self.namespace {
            Some(ns) => format!("{ns}:{}", self.target_title),
            None => self.target_title.clone(),
        };
        if self.surface == normalize_title(&target) {
            format!("[[{target}]]")
        } else {
            format!("[[{target}|{}]]", self.surface)
        }
    }
}

/// A `[[` that could not be parsed as a mention. The fragment stays plain text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionWarning {
    pub offset: usize,
    pub message: String,
}

/// Canonical title form: underscores become spaces, whitespace runs collapse,
/// ends are trimmed. Case is preserved and the namespace prefix is kept.
pub fn normalize_title(title: &str) -> String {
    title
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn kind_of(namespace: Option<&str>) -> MentionKind {
    match namespace {
        None => MentionKind::Theorem,
        Some(ns) => match ns.trim().to_ascii_lowercase().as_str() {
            "definition" => MentionKind::Definition,
            "axiom" => MentionKind::Axiom,
            "theorem" => MentionKind::Theorem,
            _ => MentionKind::Other,
        },
    }
}

fn split_target(target: &str) -> (Option<String>, String) {
    // Section anchors do not change page identity.
    let target = target.split('#').next().unwrap_or("");
    match target.split_once(':') {
        Some((ns, rest)) if !ns.trim().is_empty() && !ns.contains(' ') => {
            (Some(ns.trim().to_string()), rest.trim().to_string())
        }
        _ => (None, target.trim().to_string()),
    }
}

/// Parses every mention in `text`, left to right.
pub fn parse_mentions(text: &str) -> Vec<ReferenceMention> {
    parse_mentions_with_warnings(text).0
}

/// Like [`parse_mentions`], also returning the unclosed or empty `[[`
/// fragments that were left as plain text.
pub fn parse_mentions_with_warnings(text: &str) -> (Vec<ReferenceMention>, Vec<MentionWarning>) {
    let mut mentions = Vec::new();
    let mut warnings = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find("[[") {
        let open = pos + rel;
        let inner_start = open + 2;
        let close = text[inner_start..].find("]]").map(|i| inner_start + i);
        let reopen = text[inner_start..].find("[[").map(|i| inner_start + i);
        let close = match (close, reopen) {
            (Some(c), Some(r)) if r < c => {
                warnings.push(MentionWarning {
                    offset: open,
                    message: "unclosed `[[` before a nested `[[`".into(),
                });
                pos = r;
                continue;
            }
            (Some(c), _) => c,
            (None, _) => {
                warnings.push(MentionWarning {
                    offset: open,
                    message: "unclosed `[[`".into(),
                });
                break;
            }
        };
        let inner = &text[inner_start..close];
        let (target, surface) = match inner.split_once('|') {
            Some((t, s)) => (t, Some(s)),
            None => (inner, None),
        };
        let (namespace, title) = split_target(target);
        if title.is_empty() {
            warnings.push(MentionWarning {
                offset: open,
                message: "mention with an empty target".into(),
            });
            pos = close + 2;
            continue;
        }
        let rendered = match &namespace {
            Some(ns) => normalize_title(&format!("{ns}:{title}")),
            None => normalize_title(&title),
        };
        let surface = match surface.map(str::trim) {
            Some(s) if !s.is_empty() => s.to_string(),
            _ => rendered,
        };
        mentions.push(ReferenceMention {
            target_kind: kind_of(namespace.as_deref()),
            namespace,
            target_title: title,
            surface,
            span: open..close + 2,
        });
        pos = close + 2;
    }
    (mentions, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_mention_with_pipe() {
        let text = "is [[Definition:Even_Integer|even]]";
        let m = parse_mentions(text);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].target_kind, MentionKind::Definition);
        assert_eq!(m[0].target_title, "Even_Integer");
        assert_eq!(m[0].surface, "even");
        assert_eq!(&text[m[0].span.clone()], "[[Definition:Even_Integer|even]]");
        assert_eq!(m[0].canonical_title(), "Definition:Even Integer");
    }

    #[test]
    fn no_pipe_surface_is_title() {
        let m = parse_mentions("[[Real Addition is Commutative]]");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "Real Addition is Commutative");
        assert_eq!(m[0].target_kind, MentionKind::Theorem);
    }

    #[test]
    fn plain_text() {
        assert!(parse_mentions("no brackets here").is_empty());
    }

    #[test]
    fn unclosed_is_warning() {
        let (m, w) = parse_mentions_with_warnings("a [[b c and [[Axiom:Choice|AC]]");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].target_kind, MentionKind::Axiom);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].offset, 2);

        let (m, w) = parse_mentions_with_warnings("dangling [[x");
        assert!(m.is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn anchors_and_other_namespaces() {
        let m = parse_mentions("[[Definition:Ring (Abstract Algebra)#Def 2|ring]] [[Symbols:Greek/Pi|$\\pi$]]");
        assert_eq!(m[0].canonical_title(), "Definition:Ring (Abstract Algebra)");
        assert_eq!(m[1].target_kind, MentionKind::Other);
        assert_eq!(m[1].canonical_title(), "Symbols:Greek/Pi");
    }

    #[test]
    fn empty_pipe_uses_title() {
        let m = parse_mentions("[[Definition:Odd_Integer|]]");
        assert_eq!(m[0].surface, "Definition:Odd Integer");
    }

    #[test]
    fn title_normalization() {
        assert_eq!(normalize_title("  Even__Integer  x"), "Even Integer x");
        assert_eq!(normalize_title("Definition:Even_Integer"), "Definition:Even Integer");
    }
}
