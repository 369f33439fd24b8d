//! Parsing, normalization, and lookup for drop-in medical-code catalogs in the
//! CDC text format: one entry per line, `CODE<whitespace>DESCRIPTION`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A string failed the code-shape grammar.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{text:?} is not code-shaped (letter, digit, then 1-5 alphanumerics)")]
pub struct ShapeError {
    pub text: String,
}

/// Why a catalog line was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// First token fails the code-shape grammar.
    BadCode,
    /// Nothing after the code, or only whitespace.
    MissingDescription,
    /// Code already seen on an earlier line (first occurrence wins).
    Duplicate { first_line: usize },
    /// Input bytes are not valid UTF-8.
    Undecodable,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::BadCode => write!(f, "first token is not code-shaped"),
            ParseErrorKind::MissingDescription => write!(f, "missing description"),
            ParseErrorKind::Duplicate { first_line } => {
                write!(f, "duplicate code (first seen on line {first_line})")
            }
            ParseErrorKind::Undecodable => write!(f, "input is not valid UTF-8"),
        }
    }
}

/// One rejected line, with its position and text for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line_no}: {kind}: {line:?}")]
pub struct CatalogParseError {
    pub line_no: usize,
    pub line: String,
    pub kind: ParseErrorKind,
}

/// One catalog entry: normalized code plus free-text description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdEntry {
    /// Uppercase alphanumeric form without the dot, 3-7 chars.
    pub raw_code: String,
    /// Dotted presentation form (dot after the third character when longer than three).
    pub display_code: String,
    pub description: String,
}

/// Positional components of a code: category (chars 1-3), detail (4-6), extension (7).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeParts {
    pub category: String,
    pub detail: String,
    pub extension: Option<char>,
}

impl CodeParts {
    /// Reassemble the raw code from its parts.
    pub fn join(&self) -> String {
        let mut s = String::with_capacity(7);
        s.push_str(&self.category);
        s.push_str(&self.detail);
        if let Some(e) = self.extension {
            s.push(e);
        }
        s
    }
}

/// The parsed code universe: ordered entries plus an exact-lookup map.
#[derive(Debug, Clone, Default)]
pub struct IcdCatalog {
    pub entries: Vec<IcdEntry>,
    by_raw: HashMap<String, usize>,
    /// Where the catalog came from, for error messages and reports.
    pub source_label: String,
}

/// Outcome of parsing a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedLine {
    Entry(IcdEntry),
    /// Blank or whitespace-only line.
    Skip,
}

/// True iff `s` normalizes to a grammar-valid code.
/// Grammar: char 1 letter, char 2 digit, char 3 alphanumeric,
/// chars 4-7 optional alphanumerics, normalized length 3-7.
pub fn is_code_shaped(s: &str) -> bool {
    normalize_code(s).is_ok()
}

/// Canonicalize dotted or undotted user input to the raw uppercase form.
/// Trims whitespace, uppercases, and strips one optional dot after the third character.
pub fn normalize_code(s: &str) -> Result<String, ShapeError> {
    let mut out: String = s.trim().to_ascii_uppercase();
    let bytes = out.as_bytes();
    if bytes.len() > 3 && bytes[3] == b'.' {
        out.remove(3);
    }
    if grammar_ok(&out) {
        Ok(out)
    } else {
        Err(ShapeError { text: s.to_string() })
    }
}

fn grammar_ok(raw: &str) -> bool {
    let b = raw.as_bytes();
    if b.len() < 3 || b.len() > 7 {
        return false;
    }
    b[0].is_ascii_uppercase()
        && b[1].is_ascii_digit()
        && b[2..].iter().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
}

/// Dotted presentation form of a raw code: insert one dot after the third
/// character iff the code is longer than three characters.
pub fn display_code(raw: &str) -> String {
    if raw.len() > 3 {
        format!("{}.{}", &raw[..3], &raw[3..])
    } else {
        raw.to_string()
    }
}

/// Split a raw code into category / detail / extension.
/// The extension slot is only occupied at the full 7-character length.
pub fn decompose(raw: &str) -> Result<CodeParts, ShapeError> {
    if !grammar_ok(raw) {
        return Err(ShapeError { text: raw.to_string() });
    }
    let extension = if raw.len() == 7 { raw.chars().nth(6) } else { None };
    let detail_end = raw.len().min(6);
    Ok(CodeParts {
        category: raw[..3].to_string(),
        detail: raw[3..detail_end].to_string(),
        extension,
    })
}

/// Parse one catalog line: first whitespace-delimited token is the code,
/// the trimmed remainder is the description.
pub fn parse_catalog_line(line: &str) -> Result<ParsedLine, ParseErrorKind> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(ParsedLine::Skip);
    }
    let (token, rest) = match trimmed.split_once(char::is_whitespace) {
        Some((t, r)) => (t, r),
        None => (trimmed, ""),
    };
    let raw_code = normalize_code(token).map_err(|_| ParseErrorKind::BadCode)?;
    let description = rest.trim();
    if description.is_empty() {
        return Err(ParseErrorKind::MissingDescription);
    }
    Ok(ParsedLine::Entry(IcdEntry {
        display_code: display_code(&raw_code),
        raw_code,
        description: description.to_string(),
    }))
}

/// Parse a whole catalog text. Bad lines become per-line errors, never a failure;
/// duplicate codes keep the first occurrence and report the rest.
pub fn parse_catalog(text: &str, source_label: &str) -> (IcdCatalog, Vec<CatalogParseError>) {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut catalog = IcdCatalog { entries: Vec::new(), by_raw: HashMap::new(), source_label: String::new() };
    let mut errors = Vec::new();
    let mut line_count = 0usize;
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        line_count = line_no;
        match parse_catalog_line(line) {
            Ok(ParsedLine::Skip) => {}
            Ok(ParsedLine::Entry(entry)) => {
                if let Some(&first_line) = first_seen.get(&entry.raw_code) {
                    errors.push(CatalogParseError {
                        line_no,
                        line: line.to_string(),
                        kind: ParseErrorKind::Duplicate { first_line },
                    });
                } else {
                    first_seen.insert(entry.raw_code.clone(), line_no);
                    catalog.by_raw.insert(entry.raw_code.clone(), catalog.entries.len());
                    catalog.entries.push(entry);
                }
            }
            Err(kind) => {
                errors.push(CatalogParseError { line_no, line: line.to_string(), kind });
            }
        }
    }
    catalog.source_label = format!("{source_label} ({line_count} lines)");
    (catalog, errors)
}

/// Parse raw bytes, tolerating a UTF-8 BOM. Undecodable input yields an
/// empty catalog plus a single error.
pub fn parse_catalog_bytes(bytes: &[u8], source_label: &str) -> (IcdCatalog, Vec<CatalogParseError>) {
    let bytes = bytes.strip_prefix(b"\xef\xbb\xbf").unwrap_or(bytes);
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_catalog(text, source_label),
        Err(_) => (
            IcdCatalog { source_label: format!("{source_label} (undecodable)"), ..Default::default() },
            vec![CatalogParseError {
                line_no: 0,
                line: String::new(),
                kind: ParseErrorKind::Undecodable,
            }],
        ),
    }
}

/// Read and parse a catalog file from disk.
pub fn load_catalog(path: &Path) -> std::io::Result<(IcdCatalog, Vec<CatalogParseError>)> {
    let bytes = std::fs::read(path)?;
    Ok(parse_catalog_bytes(&bytes, &path.display().to_string()))
}

impl IcdCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalize `s` and exact-match it; `Ok(None)` means "not found", which
    /// is a value, not an error. Shape violations propagate.
    pub fn lookup(&self, s: &str) -> Result<Option<&IcdEntry>, ShapeError> {
        let raw = normalize_code(s)?;
        Ok(self.by_raw.get(&raw).map(|&i| &self.entries[i]))
    }

    /// True iff `s` normalizes and is present.
    pub fn contains(&self, s: &str) -> bool {
        matches!(self.lookup(s), Ok(Some(_)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_short_and_long_entries() {
        let e = match parse_catalog_line("A051   Botulism food poisoning").unwrap() {
            ParsedLine::Entry(e) => e,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(e.raw_code, "A051");
        assert_eq!(e.display_code, "A05.1");
        assert_eq!(e.description, "Botulism food poisoning");

        let e = match parse_catalog_line("W6169XD Struck by duck, subsequent encounter").unwrap() {
            ParsedLine::Entry(e) => e,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(e.raw_code, "W6169XD");
        assert_eq!(e.display_code, "W61.69XD");
    }

    #[test]
    fn blank_lines_skip_and_bad_lines_error() {
        assert_eq!(parse_catalog_line(""), Ok(ParsedLine::Skip));
        assert_eq!(parse_catalog_line("   \t "), Ok(ParsedLine::Skip));
        assert_eq!(parse_catalog_line("12345 not a code"), Err(ParseErrorKind::BadCode));
        assert_eq!(parse_catalog_line("A051"), Err(ParseErrorKind::MissingDescription));
        assert_eq!(parse_catalog_line("A051   "), Err(ParseErrorKind::MissingDescription));
    }

    #[test]
    fn counts_skips_and_dedups() {
        let text = "A051 Botulism food poisoning\n\nR55 Syncope and collapse\n";
        let (cat, errs) = parse_catalog(text, "fixture");
        assert_eq!(cat.len(), 2);
        assert!(errs.is_empty());

        let text = "A051 Botulism food poisoning\nA051 Botulism food poisoning\n";
        let (cat, errs) = parse_catalog(text, "fixture");
        assert_eq!(cat.len(), 1);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].kind, ParseErrorKind::Duplicate { first_line: 1 });
    }

    #[test]
    fn undecodable_input_yields_empty_catalog_and_one_error() {
        let (cat, errs) = parse_catalog_bytes(&[0xff, 0xfe, 0x00], "junk");
        assert!(cat.is_empty());
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].kind, ParseErrorKind::Undecodable);
    }

    #[test]
    fn bom_is_tolerated() {
        let (cat, errs) = parse_catalog_bytes("\u{feff}R55 Syncope and collapse".as_bytes(), "bom");
        assert_eq!(cat.len(), 1);
        assert!(errs.is_empty());
    }

    #[test]
    fn normalize_handles_dots_case_and_whitespace() {
        assert_eq!(normalize_code("J02.0").unwrap(), "J020");
        assert_eq!(normalize_code("R55").unwrap(), "R55");
        assert_eq!(normalize_code("j02.0 ").unwrap(), "J020");
        assert!(normalize_code("I").is_err());
        assert!(normalize_code("").is_err());
        assert!(normalize_code("J02.0 # strep throat").is_err());
    }

    #[test]
    fn shape_predicate_matches_grammar() {
        assert!(is_code_shaped("Z99.999W"));
        assert!(is_code_shaped("W01.190A"));
        assert!(!is_code_shaped("I"));
        assert!(!is_code_shaped("1A2"));
        assert!(!is_code_shaped("AB2"));
        assert!(!is_code_shaped("A1234567"));
    }

    #[test]
    fn decompose_splits_positionally() {
        let p = decompose("W01190A").unwrap();
        assert_eq!((p.category.as_str(), p.detail.as_str(), p.extension), ("W01", "190", Some('A')));
        let p = decompose("R55").unwrap();
        assert_eq!((p.category.as_str(), p.detail.as_str(), p.extension), ("R55", "", None));
        let p = decompose("E860").unwrap();
        assert_eq!((p.category.as_str(), p.detail.as_str(), p.extension), ("E86", "0", None));
        assert!(decompose("E86.0").is_err());
    }

    #[test]
    fn lookup_normalizes_and_reports_not_found_as_value() {
        let (cat, _) = parse_catalog("J020 Streptococcal pharyngitis\n", "fixture");
        assert_eq!(cat.lookup("J02.0").unwrap().unwrap().raw_code, "J020");
        assert_eq!(cat.lookup("j02.0").unwrap().unwrap().raw_code, "J020");
        assert_eq!(cat.lookup("Z99.999W").unwrap(), None);
        assert!(cat.lookup("not-a-code").is_err());
    }
}
