//! Word counting, word-bounded truncation and rule-based segmentation.
//!
//! Word rule: a single CJK character (Han ideographs, kana) is one word; any
//! other maximal run of non-whitespace, non-CJK characters is one word if it
//! contains at least one alphanumeric character. Punctuation-only runs such as
//! `…` or `--` count as zero words.

use serde::{Deserialize, Serialize};

/// Appended after a hard truncation. Counts as zero words.
pub const TRUNCATION_MARKER: &str = " …";

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // ext B and beyond
}

/// Byte-offset end of every word in `text`, in order.
fn word_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut run_has_alnum = false;
    let mut run_end = 0usize;
    let mut in_run = false;
    for (i, c) in text.char_indices() {
        let next = i + c.len_utf8();
        if c.is_whitespace() || is_cjk(c) {
            if in_run && run_has_alnum {
                ends.push(run_end);
            }
            in_run = false;
            run_has_alnum = false;
            if is_cjk(c) {
                ends.push(next);
            }
        } else {
            in_run = true;
            run_has_alnum |= c.is_alphanumeric();
            run_end = next;
        }
    }
    if in_run && run_has_alnum {
        ends.push(run_end);
    }
    ends
}

pub fn word_count(text: &str) -> usize {
    word_ends(text).len()
}

/// Keeps the first `bound` words of `text` and appends [`TRUNCATION_MARKER`].
/// Text already within the bound is returned unchanged.
pub fn truncate_words(text: &str, bound: usize) -> String {
    let ends = word_ends(text);
    if ends.len() <= bound {
        return text.to_string();
    }
    let cut = if bound == 0 { 0 } else { ends[bound - 1] };
    let mut out = text[..cut].trim_end().to_string();
    out.push_str(TRUNCATION_MARKER);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentPolicy {
    Sentence,
    Paragraph,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '」' | '』' | '）')
}

/// Splits text into trimmed, non-empty spans.
///
/// Sentence policy: a span ends after a run of terminal punctuation
/// (`. ! ?` followed by whitespace or end of text; `。！？` unconditionally),
/// including any trailing closing quotes or brackets. Blank lines also end a
/// span. Paragraph policy: spans are separated by blank lines.
pub fn segment(text: &str, policy: SegmentPolicy) -> Vec<String> {
    match policy {
        SegmentPolicy::Paragraph => paragraphs(text),
        SegmentPolicy::Sentence => paragraphs(text)
            .iter()
            .flat_map(|p| sentences(p))
            .collect(),
    }
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            push_span(&mut out, &current);
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    push_span(&mut out, &current);
    out
}

fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if is_terminal(c) {
            let cjk = matches!(c, '。' | '！' | '？');
            let mut j = i + 1;
            while j < chars.len() && (is_terminal(chars[j].1) || is_closing(chars[j].1)) {
                j += 1;
            }
            let boundary = cjk || j == chars.len() || chars[j].1.is_whitespace();
            if boundary {
                let end = if j == chars.len() { text.len() } else { chars[j].0 };
                push_span(&mut out, &text[start..end]);
                start = end;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    push_span(&mut out, &text[start..]);
    out
}

fn push_span(out: &mut Vec<String>, span: &str) {
    let span = span.trim();
    if !span.is_empty() {
        out.push(span.to_string());
    }
}
