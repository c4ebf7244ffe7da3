//! Line-oriented N-Triples reader and writer.
//!
//! Literals are kept as their raw lexical token (quotes, escapes, language
//! tag or datatype included), so writing a parsed graph back out reproduces
//! the same statements.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Iri(String),
    Blank(String),
    /// Raw literal token, e.g. `"text"@en` or `"4"^^<http://...#int>`.
    Literal(String),
}

impl Term {
    pub fn iri(s: impl Into<String>) -> Self {
        Term::Iri(s.into())
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Term::Literal(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(i) => write!(f, "<{i}>"),
            Term::Blank(b) => write!(f, "_:{b}"),
            Term::Literal(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: impl Into<String>, object: Term) -> Self {
        Self {
            subject,
            predicate: predicate.into(),
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <{}> {} .", self.subject, self.predicate, self.object)
    }
}

pub fn parse_ntriples(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ntriples_str(&text, path)
}

/// Parses N-Triples text. Duplicate statements are dropped, keeping the
/// first occurrence.
pub fn parse_ntriples_str(text: &str, path: &Path) -> Result<Vec<Triple>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let t = parse_line(trimmed).map_err(|msg| Error::parse(path, i + 1, msg))?;
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    Ok(out)
}

pub fn write_ntriples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> String {
    let mut out = String::new();
    for t in triples {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start_matches([' ', '\t']).len();
    }

    fn iri(&mut self) -> Result<String, String> {
        let rest = self.rest();
        if !rest.starts_with('<') {
            return Err(format!("expected IRI at column {}", self.pos + 1));
        }
        let end = rest.find('>').ok_or("unterminated IRI")?;
        let iri = &rest[1..end];
        if iri.is_empty() || iri.chars().any(|c| c.is_whitespace() || c == '<' || c == '"') {
            return Err(format!("invalid IRI <{iri}>"));
        }
        self.pos += end + 1;
        Ok(iri.to_string())
    }

    fn blank(&mut self) -> Result<String, String> {
        let rest = &self.rest()[2..];
        let len = rest
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '.')))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let mut label = &rest[..len];
        // a trailing '.' belongs to the statement terminator
        while label.ends_with('.') {
            label = &label[..label.len() - 1];
        }
        if label.is_empty() {
            return Err("empty blank node label".into());
        }
        self.pos += 2 + label.len();
        Ok(label.to_string())
    }

    fn literal(&mut self) -> Result<String, String> {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let mut i = 1;
        loop {
            match bytes.get(i) {
                None => return Err("unterminated literal".into()),
                Some(b'\\') => i += 2,
                Some(b'"') => break,
                Some(_) => i += 1,
            }
        }
        i += 1;
        let tail = &rest[i..];
        if let Some(lang) = tail.strip_prefix('@') {
            let len = lang
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
                .unwrap_or(lang.len());
            if len == 0 {
                return Err("empty language tag".into());
            }
            i += 1 + len;
        } else if let Some(dt) = tail.strip_prefix("^^<") {
            let end = dt.find('>').ok_or("unterminated datatype IRI")?;
            if end == 0 || dt[..end].chars().any(char::is_whitespace) {
                return Err("invalid datatype IRI".into());
            }
            i += 3 + end + 1;
        } else if tail.starts_with("^^") {
            return Err("datatype must be an IRI".into());
        }
        let raw = &rest[..i];
        self.pos += i;
        Ok(raw.to_string())
    }

    fn subject(&mut self) -> Result<Term, String> {
        let rest = self.rest();
        if rest.starts_with('<') {
            self.iri().map(Term::Iri)
        } else if rest.starts_with("_:") {
            self.blank().map(Term::Blank)
        } else {
            Err("subject must be an IRI or blank node".into())
        }
    }

    fn object(&mut self) -> Result<Term, String> {
        let rest = self.rest();
        if rest.starts_with('"') {
            self.literal().map(Term::Literal)
        } else {
            self.subject()
                .map_err(|_| "object must be an IRI, blank node or literal".to_string())
        }
    }
}

fn parse_line(line: &str) -> Result<Triple, String> {
    let mut c = Cursor { s: line, pos: 0 };
    let subject = c.subject()?;
    c.skip_ws();
    let predicate = c.iri()?;
    c.skip_ws();
    let object = c.object()?;
    c.skip_ws();
    let rest = c.rest();
    let Some(after) = rest.strip_prefix('.') else {
        return Err("missing terminating '.'".into());
    };
    let after = after.trim();
    if !after.is_empty() && !after.starts_with('#') {
        return Err(format!("unexpected trailing content {after:?}"));
    }
    Ok(Triple {
        subject,
        predicate,
        object,
    })
}
