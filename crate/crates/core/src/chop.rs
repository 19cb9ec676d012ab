//! Tree chopping: shrink syntax and kernel trees before they reach the encoders.
//!
//! Three rewrites, always applied in this order when enabled:
//! qualified-name collapse, location stripping, singleton extraction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sexp::SExp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChopConfig {
    pub qualified_name_tags: BTreeSet<String>,
    pub location_tags: BTreeSet<String>,
    pub enable_qualid_collapse: bool,
    pub enable_location_strip: bool,
    pub enable_singleton_extract: bool,
}

impl Default for ChopConfig {
    fn default() -> Self {
        ChopConfig {
            qualified_name_tags: ["Ser_Qualid", "Qualid", "DirPath"]
                .into_iter()
                .map(String::from)
                .collect(),
            location_tags: ["loc"].into_iter().map(String::from).collect(),
            enable_qualid_collapse: true,
            enable_location_strip: true,
            enable_singleton_extract: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChopError {
    #[error("qualified-name subtree has no recognizable component: {0}")]
    MalformedQualifiedName(String),
    #[error("chop configuration enables `{0}` with an empty tag set")]
    EmptyTagSet(&'static str),
}

impl ChopConfig {
    /// All heuristics disabled; `chop` becomes the identity.
    pub fn disabled() -> Self {
        ChopConfig {
            enable_qualid_collapse: false,
            enable_location_strip: false,
            enable_singleton_extract: false,
            ..ChopConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ChopError> {
        if self.enable_qualid_collapse && self.qualified_name_tags.is_empty() {
            return Err(ChopError::EmptyTagSet("qualified_name_tags"));
        }
        if self.enable_location_strip && self.location_tags.is_empty() {
            return Err(ChopError::EmptyTagSet("location_tags"));
        }
        Ok(())
    }
}

fn is_tagged(t: &SExp, tags: &BTreeSet<String>) -> bool {
    t.head().is_some_and(|h| tags.contains(h))
}

/// Picks the subtree that stands for the last component of a qualified name.
///
/// An `(Id ..)` child wins outright (the last one, if several). Otherwise we
/// follow last elements downward until reaching an atom or an `Id` node.
fn last_component(node: &SExp) -> Result<&SExp, ChopError> {
    let malformed = || ChopError::MalformedQualifiedName(node.to_string());
    let children = &node.as_list().ok_or_else(malformed)?[1..];
    if let Some(id) = children.iter().rev().find(|c| c.head() == Some("Id")) {
        return Ok(id);
    }
    let mut cur = children.last().ok_or_else(malformed)?;
    loop {
        match cur {
            SExp::Atom(_) => return Ok(cur),
            SExp::List(_) if cur.head() == Some("Id") => return Ok(cur),
            SExp::List(items) => cur = items.last().ok_or_else(malformed)?,
        }
    }
}

pub fn collapse_qualified_names(t: &SExp, cfg: &ChopConfig) -> Result<SExp, ChopError> {
    let tags = &cfg.qualified_name_tags;
    let mut cur = t;
    // Outer collapse first; the replacement may itself be tagged.
    while is_tagged(cur, tags) {
        cur = last_component(cur)?;
    }
    match cur {
        SExp::Atom(_) => Ok(cur.clone()),
        SExp::List(items) => items
            .iter()
            .map(|c| collapse_qualified_names(c, cfg))
            .collect::<Result<Vec<_>, _>>()
            .map(SExp::List),
    }
}

pub fn strip_locations(t: &SExp, cfg: &ChopConfig) -> SExp {
    fn strip(t: &SExp, tags: &BTreeSet<String>) -> SExp {
        match t {
            SExp::Atom(_) => t.clone(),
            SExp::List(items) => SExp::List(
                items
                    .iter()
                    .filter(|c| !is_tagged(c, tags))
                    .map(|c| strip(c, tags))
                    .collect(),
            ),
        }
    }
    if is_tagged(t, &cfg.location_tags) {
        return SExp::List(Vec::new());
    }
    strip(t, &cfg.location_tags)
}

pub fn extract_singletons(t: &SExp) -> SExp {
    match t {
        SExp::Atom(_) => t.clone(),
        SExp::List(items) => {
            let mut children: Vec<SExp> = items.iter().map(extract_singletons).collect();
            if children.len() == 1 {
                children.pop().unwrap()
            } else {
                SExp::List(children)
            }
        }
    }
}

fn chop_once(t: &SExp, cfg: &ChopConfig) -> Result<SExp, ChopError> {
    let mut out = if cfg.enable_qualid_collapse {
        collapse_qualified_names(t, cfg)?
    } else {
        t.clone()
    };
    if cfg.enable_location_strip {
        out = strip_locations(&out, cfg);
    }
    if cfg.enable_singleton_extract {
        out = extract_singletons(&out);
    }
    Ok(out)
}

/// Applies the enabled heuristics in their pinned order, repeating the pass
/// until the tree stops changing.
///
/// A single pass can expose new work: stripping `((loc 1) Qualid x)` leaves a
/// tagged `(Qualid x)`. Every pass that changes the tree removes tokens, so
/// the loop terminates.
pub fn chop(t: &SExp, cfg: &ChopConfig) -> Result<SExp, ChopError> {
    let mut cur = chop_once(t, cfg)?;
    loop {
        let next = chop_once(&cur, cfg)?;
        if next == cur {
            return Ok(cur);
        }
        cur = next;
    }
}
