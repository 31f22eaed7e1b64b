//! Domain types shared by every other module: label sets, sentences,
//! entities, and the word-pair relation grid.
//!
//! Token indices are 0-based everywhere, including file formats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relation id 0: no relation between the word pair.
pub const REL_NONE: u16 = 0;
/// Relation id 1: next-neighboring-word, upper triangle only.
pub const REL_NNW: u16 = 1;
/// First tail-head-word relation id; THW-t = `REL_THW_BASE + type index`.
pub const REL_THW_BASE: u16 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("entity type names must be unique and non-empty (offender: {0:?})")]
    BadTypeName(String),
    #[error("entity has no indices after deduplication")]
    EmptyEntity,
    #[error("unknown relation id {0}")]
    UnknownRelationId(u16),
}

/// The closed set of entity types plus the derived relation label space
/// {NONE, NNW, THW-t for each type t}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    entity_types: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(entity_types: I) -> Result<Self, TypeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        for (i, t) in entity_types.iter().enumerate() {
            if t.is_empty() || entity_types[..i].contains(t) {
                return Err(TypeError::BadTypeName(t.clone()));
            }
        }
        Ok(Self { entity_types })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    /// Total number of relation labels: NONE, NNW, and one THW per type.
    pub fn relation_count(&self) -> usize {
        REL_THW_BASE as usize + self.entity_types.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn thw_id(&self, name: &str) -> Option<u16> {
        self.type_index(name).map(|i| REL_THW_BASE + i as u16)
    }

    /// Entity type carried by a THW relation id, if it is one.
    pub fn thw_type(&self, rel: u16) -> Option<&str> {
        rel.checked_sub(REL_THW_BASE)
            .and_then(|i| self.entity_types.get(i as usize))
            .map(String::as_str)
    }

    pub fn relation_name(&self, rel: u16) -> Result<String, TypeError> {
        match rel {
            REL_NONE => Ok("NONE".to_string()),
            REL_NNW => Ok("NNW".to_string()),
            _ => self
                .thw_type(rel)
                .map(|t| format!("THW-{t}"))
                .ok_or(TypeError::UnknownRelationId(rel)),
        }
    }

    pub fn relation_id(&self, name: &str) -> Option<u16> {
        match name {
            "NONE" => Some(REL_NONE),
            "NNW" => Some(REL_NNW),
            _ => name.strip_prefix("THW-").and_then(|t| self.thw_id(t)),
        }
    }
}

/// An entity mention: a strictly increasing token-index sequence plus a type.
/// Covers flat, nested, and discontinuous mentions uniformly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub indices: Vec<usize>,
    #[serde(rename = "type")]
    pub etype: String,
}

impl Entity {
    /// Sorts and deduplicates raw indices; the grid scheme cannot represent
    /// any within-mention order other than text order.
    pub fn canonicalize(raw_indices: &[usize], etype: impl Into<String>) -> Result<Self, TypeError> {
        let mut indices = raw_indices.to_vec();
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(TypeError::EmptyEntity);
        }
        Ok(Self { indices, etype: etype.into() })
    }

    pub fn head(&self) -> usize {
        self.indices[0]
    }

    pub fn tail(&self) -> usize {
        *self.indices.last().unwrap()
    }

    /// True when the index sequence has a gap.
    pub fn is_discontinuous(&self) -> bool {
        self.indices.windows(2).any(|w| w[1] != w[0] + 1)
    }
}

/// A tokenized sentence with its gold entity set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Collects every invariant violation in `s`; `Ok(())` iff there are none.
pub fn validate_sentence(s: &Sentence, labels: &LabelSet) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    if s.tokens.is_empty() {
        errors.push("sentence has no tokens".to_string());
    }
    for (i, t) in s.tokens.iter().enumerate() {
        if t.is_empty() {
            errors.push(format!("token {i} is empty"));
        }
    }
    let n = s.tokens.len();
    for (k, e) in s.entities.iter().enumerate() {
        if e.indices.is_empty() {
            errors.push(format!("entity {k}: empty index list"));
        }
        if !e.indices.windows(2).all(|w| w[0] < w[1]) {
            errors.push(format!("entity {k}: indices not strictly increasing"));
        }
        if e.indices.iter().any(|&i| i >= n) {
            errors.push(format!("entity {k}: index out of range for length {n}"));
        }
        if labels.type_index(&e.etype).is_none() {
            errors.push(format!("entity {k}: unknown type {}", e.etype));
        }
        if s.entities[..k].contains(e) {
            errors.push(format!("entity {k}: duplicate of an earlier entity"));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// N×N grid of relation ids. NNW lives strictly above the diagonal,
/// THW-* on or below it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationGrid {
    n: usize,
    cells: Vec<u16>,
}

impl RelationGrid {
    pub fn new(n: usize) -> Self {
        Self { n, cells: vec![REL_NONE; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.cells[i * self.n + j]
    }

    /// Placement is not enforced here; `check_triangles` validates grids
    /// that come from untrusted sources.
    pub fn set(&mut self, i: usize, j: usize, rel: u16) {
        self.cells[i * self.n + j] = rel;
    }

    /// Non-NONE cells in row-major order as (i, j, relation id).
    pub fn tagged_cells(&self) -> impl Iterator<Item = (usize, usize, u16)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| {
                let r = self.get(i, j);
                (r != REL_NONE).then_some((i, j, r))
            })
        })
    }

    /// Checks the triangular placement invariants.
    pub fn check_triangles(&self) -> Result<(), String> {
        for (i, j, r) in self.tagged_cells() {
            if r == REL_NNW && i >= j {
                return Err(format!("NNW at ({i},{j}) outside the upper triangle"));
            }
            if r >= REL_THW_BASE && i < j {
                return Err(format!("THW at ({i},{j}) above the diagonal"));
            }
        }
        Ok(())
    }
}
