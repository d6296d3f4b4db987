//! Comment and string masking for Lean source text.
//!
//! Masking replaces every character inside a comment (and optionally a
//! string literal) with a space, keeping newlines, so line numbers and
//! character columns of the masked text match the original.

use crate::ident::is_id_rest;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Code,
    Line,
    Block(u32),
    Str,
}

/// Mask `--` line comments and nested `/- … -/` block comments. String
/// literal contents are masked too when `mask_strings` is set. An
/// unterminated block comment or string masks everything after it.
pub fn mask(text: &str, mask_strings: bool) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut mode = Mode::Code;
    let mut i = 0;
    let blank = |c: char| if c == '\n' { '\n' } else { ' ' };
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match mode {
            Mode::Code => match (c, next) {
                ('-', Some('-')) => {
                    mode = Mode::Line;
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                ('/', Some('-')) => {
                    mode = Mode::Block(1);
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                ('"', _) => {
                    mode = Mode::Str;
                    out.push(if mask_strings { ' ' } else { c });
                }
                _ => out.push(c),
            },
            Mode::Line => {
                if c == '\n' {
                    mode = Mode::Code;
                }
                out.push(blank(c));
            }
            Mode::Block(depth) => match (c, next) {
                ('/', Some('-')) => {
                    mode = Mode::Block(depth + 1);
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                ('-', Some('/')) => {
                    mode = if depth == 1 { Mode::Code } else { Mode::Block(depth - 1) };
                    out.push_str("  ");
                    i += 2;
                    continue;
                }
                _ => out.push(blank(c)),
            },
            Mode::Str => {
                if c == '\\' {
                    out.push(if mask_strings { ' ' } else { c });
                    if let Some(n) = next {
                        out.push(if mask_strings { blank(n) } else { n });
                    }
                    i += 2;
                    continue;
                }
                if c == '"' {
                    mode = Mode::Code;
                    out.push(if mask_strings { ' ' } else { c });
                } else {
                    out.push(if mask_strings { blank(c) } else { c });
                }
            }
        }
        i += 1;
    }
    out
}

/// Iterate over maximal identifier-character words of `text` (already
/// masked), yielding `(char_index, word)`. Dots split words.
pub fn words(text: &str) -> impl Iterator<Item = (usize, String)> + '_ {
    let mut iter = text.chars().enumerate().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = iter.peek() {
            if is_id_rest(c) {
                break;
            }
            iter.next();
        }
        let (start, _) = *iter.peek()?;
        let mut word = String::new();
        while let Some(&(_, c)) = iter.peek() {
            if !is_id_rest(c) {
                break;
            }
            word.push(c);
            iter.next();
        }
        Some((start, word))
    })
}
