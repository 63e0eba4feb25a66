//! Markup stripping used before every lexical comparison.

use super::mention::parse_mentions;

/// Replaces mentions by their surface form, renders templates, strips any
/// leftover bracket markup and collapses whitespace.
///
/// Templates: `{{qed}}`, `{{begin-eqn}}` and `{{end-eqn}}` vanish; `{{eqn}}`
/// renders its `l`, `o`, `r`, `c` arguments in that order; any other template
/// renders its argument values in order. Template names are dropped.
pub fn normalize(text: &str) -> String {
    let rendered = render_markup(text);
    let stripped = strip_stray_brackets(&rendered);
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_markup(text: &str) -> String {
    let text = render_templates(text);
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in parse_mentions(&text) {
        out.push_str(&text[last..m.span.start]);
        out.push_str(&m.surface);
        last = m.span.end;
    }
    out.push_str(&text[last..]);
    out
}

fn strip_stray_brackets(text: &str) -> String {
    let mut s = text.to_string();
    loop {
        let next = s
            .replace("[[", "")
            .replace("]]", "")
            .replace("{{", "")
            .replace("}}", "");
        if next == s {
            return s;
        }
        s = next;
    }
}

/// Finds the end (exclusive) of the template opened at `start` by brace
/// counting, so LaTeX groups inside arguments are kept intact.
fn template_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn render_templates(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    while let Some(rel) = text[pos..].find("{{") {
        let open = pos + rel;
        out.push_str(&text[pos..open]);
        match template_end(bytes, open) {
            Some(end) if end >= open + 4 && text[..end].ends_with("}}") => {
                let body = &text[open + 2..end - 2];
                out.push(' ');
                out.push_str(&render_template(body));
                out.push(' ');
                pos = end;
            }
            _ => {
                // Unbalanced; keep as text, stray braces are removed later.
                out.push_str("{{");
                pos = open + 2;
            }
        }
    }
    out.push_str(&text[pos..]);
    out
}

/// Splits on `|` at nesting depth zero (outside `{}` and `[[...]]`).
fn split_args(body: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut brace = 0i32;
    let mut bracket = 0i32;
    let mut last = 0;
    let b = body.as_bytes();
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'{' => brace += 1,
            b'}' => brace -= 1,
            b'[' if b.get(i + 1) == Some(&b'[') => {
                bracket += 1;
                i += 1;
            }
            b']' if b.get(i + 1) == Some(&b']') => {
                bracket -= 1;
                i += 1;
            }
            b'|' if brace <= 0 && bracket <= 0 => {
                parts.push(&body[last..i]);
                last = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    parts.push(&body[last..]);
    parts
}

fn named_arg(arg: &str) -> Option<(&str, &str)> {
    let (k, v) = arg.split_once('=')?;
    let k = k.trim();
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        Some((k, v))
    } else {
        None
    }
}

fn render_template(body: &str) -> String {
    let parts = split_args(body);
    let name = parts[0].trim().to_ascii_lowercase();
    let args = &parts[1..];
    match name.as_str() {
        "qed" | "begin-eqn" | "end-eqn" => String::new(),
        "eqn" => {
            let lookup = |key: &str| {
                args.iter()
                    .filter_map(|a| named_arg(a))
                    .find(|(k, _)| k.eq_ignore_ascii_case(key))
                    .map(|(_, v)| render_markup(v).trim().to_string())
                    .unwrap_or_default()
            };
            ["l", "o", "r", "c"]
                .iter()
                .map(|k| lookup(k))
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        }
        _ => args
            .iter()
            .map(|a| match named_arg(a) {
                Some((_, v)) => v,
                None => a,
            })
            .map(|v| render_markup(v).trim().to_string())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" "),
    }
}
