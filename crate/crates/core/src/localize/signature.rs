//! Error-message canonicalization into reusable signatures.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::LocalizeError;
use crate::util::{collapse_whitespace, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfraClass {
    Timeout,
    Connection,
    OutOfMemory,
    Container,
    Platform,
    None,
}

impl InfraClass {
    pub fn as_str(self) -> &'static str {
        match self {
            InfraClass::Timeout => "timeout",
            InfraClass::Connection => "connection",
            InfraClass::OutOfMemory => "out_of_memory",
            InfraClass::Container => "container",
            InfraClass::Platform => "platform",
            InfraClass::None => "none",
        }
    }

    /// Human wording used in generated text.
    pub fn describe(self) -> &'static str {
        match self {
            InfraClass::Timeout => "timeout",
            InfraClass::Connection => "connection",
            InfraClass::OutOfMemory => "out-of-memory",
            InfraClass::Container => "container",
            InfraClass::Platform => "platform",
            InfraClass::None => "no infrastructure",
        }
    }
}

impl fmt::Display for InfraClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorSignature {
    pub canonical: String,
    pub raw_hash: String,
    pub infra_class: InfraClass,
}

struct Patterns {
    url: Regex,
    dquote: Regex,
    squote: Regex,
    unix_path: Regex,
    win_path: Regex,
    uuid: Regex,
    host_port: Regex,
    hex_prefixed: Regex,
    hex_word: Regex,
    number: Regex,
    infra: Vec<(InfraClass, Regex)>,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("static regex");
        Patterns {
            url: re(r"\b[a-zA-Z][a-zA-Z0-9+.-]*://[^\s'\x22]+"),
            dquote: re(r#""[^"]*""#),
            squote: re(r"'[^']*'"),
            unix_path: re(r"(^|[\s=(\[,:])(/[A-Za-z0-9._\-/]+)"),
            win_path: re(r"\b[A-Za-z]:\\[^\s'\x22]+"),
            uuid: re(r"\b[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}\b"),
            host_port: re(r"\b[A-Za-z][A-Za-z0-9._-]*:\d{2,5}\b"),
            hex_prefixed: re(r"\b0[xX][0-9a-fA-F]+\b"),
            hex_word: re(r"\b[0-9a-f]{8,}\b"),
            number: re(r"\b\d{3,}\b"),
            infra: vec![
                (
                    InfraClass::OutOfMemory,
                    re(r"out of memory|\boom\b|oomkilled|cannot allocate memory|memoryerror"),
                ),
                (InfraClass::Timeout, re(r"timed out|timeout|deadline exceeded")),
                (
                    InfraClass::Connection,
                    re(r"connection|refused|unreachable|econnreset|no route to host"),
                ),
                (InfraClass::Container, re(r"docker|container|crashloop")),
                (
                    InfraClass::Platform,
                    re(r"outage|platform (?:is )?unavailable|service unavailable|\b503\b"),
                ),
            ],
        }
    })
}

fn classify(raw: &str) -> InfraClass {
    let lower = raw.to_lowercase();
    patterns()
        .infra
        .iter()
        .find(|(_, re)| re.is_match(&lower))
        .map_or(InfraClass::None, |(c, _)| *c)
}

/// Masks run-specific literals (URLs, quoted strings, absolute paths, uuids,
/// host:port endpoints, hex ids, integers of 3+ digits) and classifies the
/// message by infrastructure keywords. Idempotent on its own output.
pub fn canonicalize_error(raw: &str) -> Result<ErrorSignature, LocalizeError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(LocalizeError::EmptyInput);
    }
    let p = patterns();
    let s = p.url.replace_all(raw, "<URL>");
    let s = p.dquote.replace_all(&s, "<STR>");
    let s = p.squote.replace_all(&s, "<STR>");
    let s = p.unix_path.replace_all(&s, "${1}<PATH>");
    let s = p.win_path.replace_all(&s, "<PATH>");
    let s = p.uuid.replace_all(&s, "<ID>");
    let s = p.host_port.replace_all(&s, "<ID>:<NUM>");
    let s = p.hex_prefixed.replace_all(&s, "<HEX>");
    let s = p.hex_word.replace_all(&s, |c: &Captures| {
        let w = &c[0];
        if w.bytes().any(|b| b.is_ascii_alphabetic()) && w.bytes().any(|b| b.is_ascii_digit()) {
            "<HEX>".to_string()
        } else {
            w.to_string()
        }
    });
    let s = p.number.replace_all(&s, "<NUM>");
    Ok(ErrorSignature {
        canonical: collapse_whitespace(&s),
        raw_hash: stable_hash(&collapse_whitespace(raw)),
        infra_class: classify(raw),
    })
}

/// Service names (hosts of host:port endpoints and URLs) and absolute paths
/// mentioned in a raw message.
pub fn extract_entities(raw: &str) -> (BTreeSet<String>, BTreeSet<String>) {
    let p = patterns();
    let mut services = BTreeSet::new();
    let mut paths = BTreeSet::new();
    let without_urls = p.url.replace_all(raw, |c: &Captures| {
        let url = &c[0];
        if let Some(rest) = url.split("://").nth(1) {
            let host = rest.split(['/', ':', '?']).next().unwrap_or("");
            if !host.is_empty() {
                services.insert(host.to_string());
            }
        }
        " "
    });
    for m in p.host_port.find_iter(&without_urls) {
        let host = m.as_str().rsplit_once(':').map_or("", |(h, _)| h);
        if !host.is_empty() {
            services.insert(host.to_string());
        }
    }
    for c in p.unix_path.captures_iter(&without_urls) {
        paths.insert(c[2].to_string());
    }
    services.retain(|s| s != "localhost");
    (services, paths)
}
