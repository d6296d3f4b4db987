//! Lightweight Lean declaration scanner used by the simulated backend.
//!
//! This is not an elaborator: it finds `theorem`/`lemma` declarations,
//! their statements and, for `by` proofs, one tactic per line of the
//! tactic block.

use crate::ident::is_identifier;
use crate::lexer;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    pub full_name: String,
    /// Binders and type, whitespace-collapsed.
    pub statement: String,
    pub start: (usize, usize),
    pub end: (usize, usize),
    /// Empty for term-mode proofs.
    pub tactics: Vec<String>,
}

const MODIFIERS: [&str; 5] = ["private", "protected", "noncomputable", "nonrec", "unsafe"];

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| c.is_whitespace()).count()
}

fn strip_modifiers(mut s: &str) -> &str {
    loop {
        s = s.trim_start();
        if s.starts_with("@[") {
            match s.find(']') {
                Some(end) => s = &s[end + 1..],
                None => return "",
            }
            continue;
        }
        match MODIFIERS.iter().find(|m| s.starts_with(*m) && s[m.len()..].starts_with(char::is_whitespace)) {
            Some(m) => s = &s[m.len()..],
            None => return s,
        }
    }
}

fn decl_keyword(line: &str) -> Option<&str> {
    let rest = strip_modifiers(line);
    for kw in ["theorem", "lemma"] {
        if let Some(after) = rest.strip_prefix(kw) {
            if after.starts_with(char::is_whitespace) {
                return Some(after);
            }
        }
    }
    None
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Find `:=` at bracket depth zero.
fn find_assign(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    let bytes = s.as_bytes();
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' | '{' | '⦃' => depth += 1,
            ')' | ']' | '}' | '⦄' => depth -= 1,
            ':' if depth == 0 && bytes.get(i + 1) == Some(&b'=') => return Some(i),
            _ => {}
        }
    }
    None
}

pub fn scan_declarations(text: &str) -> Vec<Declaration> {
    let masked = lexer::mask(text, false);
    let lines: Vec<&str> = masked.lines().collect();
    let mut scopes: Vec<Option<String>> = Vec::new();
    let mut decls = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let trimmed = line.trim();
        let mut words = trimmed.split_whitespace();
        match words.next() {
            Some("namespace") => {
                scopes.push(words.next().map(String::from));
                i += 1;
                continue;
            }
            Some("section") => {
                scopes.push(None);
                i += 1;
                continue;
            }
            Some("end") => {
                scopes.pop();
                i += 1;
                continue;
            }
            _ => {}
        }
        let Some(after_kw) = decl_keyword(line) else {
            i += 1;
            continue;
        };
        let decl_indent = indent_of(line);
        let start = (i + 1, decl_indent);
        let after_kw = after_kw.trim_start();
        let name_len = after_kw.find(char::is_whitespace).unwrap_or(after_kw.len());
        let name = &after_kw[..name_len];
        let full_name = match name.strip_prefix("_root_.") {
            Some(n) => n.to_string(),
            None => scopes.iter().flatten().map(String::as_str).chain([name]).collect::<Vec<_>>().join("."),
        };

        // signature runs until `:=`, possibly across lines
        let mut signature = after_kw[name_len..].to_string();
        let mut j = i;
        let assign = loop {
            if let Some(pos) = find_assign(&signature) {
                break Some(pos);
            }
            if j + 1 >= lines.len() || decl_keyword(lines[j + 1]).is_some() || indent_of(lines[j + 1]) <= decl_indent && !lines[j + 1].trim().is_empty() {
                break None;
            }
            j += 1;
            signature.push('\n');
            signature.push_str(lines[j]);
        };
        let (statement, rest) = match assign {
            Some(pos) => (collapse(&signature[..pos]), signature[pos + 2..].trim().to_string()),
            None => (collapse(&signature), String::new()),
        };

        let mut tactics = Vec::new();
        let mut last_line = j;
        let by_rest = rest.strip_prefix("by").filter(|r| r.is_empty() || r.starts_with(char::is_whitespace));
        if let Some(inline) = by_rest {
            let inline = inline.trim();
            if !inline.is_empty() {
                tactics.push(inline.to_string());
            }
        }
        let mut block_indent: Option<usize> = None;
        let mut k = j + 1;
        while k < lines.len() {
            let l = lines[k];
            if l.trim().is_empty() {
                k += 1;
                continue;
            }
            let ind = indent_of(l);
            if ind <= decl_indent {
                break;
            }
            last_line = k;
            if by_rest.is_some() {
                match block_indent {
                    Some(b) if ind > b => {
                        let prev = tactics.last_mut().expect("continuation follows a tactic");
                        prev.push('\n');
                        prev.push_str(l.trim_end());
                    }
                    _ => {
                        block_indent.get_or_insert(ind);
                        tactics.push(l.trim().to_string());
                    }
                }
            }
            k += 1;
        }
        let end = (last_line + 1, lines[last_line].trim_end().chars().count());
        if is_identifier(full_name.split('.').next_back().unwrap_or("")) {
            decls.push(Declaration { full_name, statement, start, end, tactics });
        }
        i = last_line + 1;
    }
    decls
}

/// Turn leading binders and the type of a statement into a goal display,
/// e.g. `(a b : ℕ) (h : a ≤ b) : a ≤ b + 1` into
/// `a b : ℕ\nh : a ≤ b\n⊢ a ≤ b + 1`.
pub fn initial_state_from_statement(statement: &str) -> Option<String> {
    let chars: Vec<char> = statement.chars().collect();
    let mut i = 0;
    let mut hyps: Vec<String> = Vec::new();
    let mut anonymous = 0;
    loop {
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        let open = *chars.get(i)?;
        let close = match open {
            '(' => ')',
            '{' => '}',
            '[' => ']',
            '⦃' => '⦄',
            ':' => break,
            _ => return None,
        };
        let mut depth = 0;
        let start = i + 1;
        loop {
            let c = *chars.get(i)?;
            if c == open {
                depth += 1;
            } else if c == close {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
            i += 1;
        }
        let inner: String = chars[start..i].iter().collect();
        i += 1;
        match inner.split_once(" : ") {
            Some((names, ty)) if names.split_whitespace().all(is_identifier) => {
                hyps.push(format!("{} : {}", names.split_whitespace().collect::<Vec<_>>().join(" "), ty.trim()));
            }
            _ if open == '[' => {
                let name = if anonymous == 0 { "inst✝".to_string() } else { format!("inst✝{anonymous}") };
                anonymous += 1;
                hyps.push(format!("{name} : {}", inner.trim()));
            }
            _ => return None,
        }
    }
    let target: String = chars[i + 1..].iter().collect();
    let target = target.trim();
    if target.is_empty() {
        return None;
    }
    hyps.push(format!("⊢ {target}"));
    Some(hyps.join("\n"))
}
