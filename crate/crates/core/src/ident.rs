//! Identifier character classes, loaded from `data/identifier_chars.txt`.

use std::sync::OnceLock;

const TABLE: &str = include_str!("../data/identifier_chars.txt");

struct Classes {
    first: Vec<(u32, u32)>,
    rest: Vec<(u32, u32)>,
}

fn classes() -> &'static Classes {
    static CLASSES: OnceLock<Classes> = OnceLock::new();
    CLASSES.get_or_init(|| {
        let mut first = Vec::new();
        let mut rest = Vec::new();
        for line in TABLE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(class), Some(lo), Some(hi)) = (cols.next(), cols.next(), cols.next()) else {
                panic!("malformed identifier table row: {line}");
            };
            let lo = u32::from_str_radix(lo, 16).expect("hex range start");
            let hi = u32::from_str_radix(hi, 16).expect("hex range end");
            match class {
                "first" => first.push((lo, hi)),
                "rest" => rest.push((lo, hi)),
                other => panic!("unknown identifier class {other}"),
            }
        }
        Classes { first, rest }
    })
}

fn in_ranges(ranges: &[(u32, u32)], c: char) -> bool {
    let c = c as u32;
    ranges.iter().any(|&(lo, hi)| lo <= c && c <= hi)
}

/// Can `c` start an identifier?
pub fn is_id_first(c: char) -> bool {
    in_ranges(&classes().first, c)
}

/// Can `c` continue an identifier?
pub fn is_id_rest(c: char) -> bool {
    is_id_first(c) || in_ranges(&classes().rest, c)
}

/// True when `s` is a single identifier segment (no dots).
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_id_first(c) => chars.all(is_id_rest),
        _ => false,
    }
}
