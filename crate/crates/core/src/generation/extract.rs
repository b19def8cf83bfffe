//! Pulling structured pieces out of free-form model replies.

use serde::Serialize;
use serde_json::Value;

/// Returns the elements of the first bracketed list of quoted strings, e.g.
/// `field_list = ["Science", "Healthcare",]`. Empty if there is none.
pub fn parse_list_literal(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('[') {
        let open = start + off;
        if let Some(items) = list_at(text, open) {
            return items;
        }
        start = open + 1;
        if start >= bytes.len() {
            break;
        }
    }
    Vec::new()
}

/// Parses `[ "a", 'b', ]` starting at `open`; `None` if the bracket does not
/// begin a list of quoted strings.
fn list_at(text: &str, open: usize) -> Option<Vec<String>> {
    let mut chars = text[open + 1..].char_indices().peekable();
    let mut items = Vec::new();
    loop {
        while chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
            chars.next();
        }
        match chars.next()? {
            (_, ']') => return Some(items),
            (_, q @ ('"' | '\'')) => {
                let mut item = String::new();
                loop {
                    match chars.next()? {
                        (_, '\\') => item.push(chars.next()?.1),
                        (_, c) if c == q => break,
                        (_, c) => item.push(c),
                    }
                }
                items.push(item.trim().to_string());
                while chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                    chars.next();
                }
                match chars.next()? {
                    (_, ',') => {}
                    (_, ']') => return Some(items),
                    _ => return None,
                }
            }
            _ => return None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("NO_JSON_FOUND: no parseable JSON object or array in the text")]
pub struct NoJsonFound;

/// Finds the leftmost balanced `{...}` or `[...]` region that parses as JSON.
pub fn extract_first_json(text: &str) -> Result<Value, NoJsonFound> {
    for (start, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        if let Some(end) = balanced_end(text, start) {
            if let Ok(v) = serde_json::from_str(&text[start..end]) {
                return Ok(v);
            }
        }
    }
    Err(NoJsonFound)
}

/// Byte offset just past the bracket matching the one at `start`, skipping
/// over JSON string literals.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                if stack.pop() != Some(c) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + i + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

/// Text following the last occurrence of `marker`, or the whole text.
pub fn after_marker<'a>(text: &'a str, marker: &str) -> &'a str {
    match text.rfind(marker) {
        Some(i) => &text[i + marker.len()..],
        None => text,
    }
}

/// Text between the first `[` and the last `]`, with one layer of matching
/// quotes removed. Falls back to the trimmed text when there are no brackets.
pub fn bracketed_text(text: &str) -> String {
    let inner = match (text.find('['), text.rfind(']')) {
        (Some(a), Some(b)) if a < b => &text[a + 1..b],
        _ => text,
    };
    let inner = inner.trim();
    for q in ['"', '\''] {
        if inner.len() >= 2 && inner.starts_with(q) && inner.ends_with(q) {
            return inner[1..inner.len() - 1].trim().to_string();
        }
    }
    inner.to_string()
}

/// Quotes bare `___` blanks that appear outside string literals, so a
/// template echoed back by a model still parses as JSON.
pub fn quote_bare_blanks(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if !in_string && rest.starts_with("___") {
            let run = rest.len() - rest.trim_start_matches('_').len();
            out.push('"');
            out.push_str(&rest[..run]);
            out.push('"');
            rest = &rest[run..];
            continue;
        }
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
        } else if c == '"' {
            in_string = true;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

/// JSON with `", "` and `": "` separators, the layout the prompts use.
pub fn to_spaced_json(value: &Value) -> String {
    format_json(value, b": ")
}

/// JSON with `", "` between entries and a bare `:`, the layout of the
/// single-tool demonstrations.
pub fn to_call_json(value: &Value) -> String {
    format_json(value, b":")
}

fn format_json(value: &Value, colon: &'static [u8]) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SpacedFormatter { colon });
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("utf-8")
}

struct SpacedFormatter {
    colon: &'static [u8],
}

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if first { Ok(()) } else { w.write_all(b", ") }
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if first { Ok(()) } else { w.write_all(b", ") }
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        w.write_all(self.colon)
    }
}

/// Python `repr` of a string.
pub fn python_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}
