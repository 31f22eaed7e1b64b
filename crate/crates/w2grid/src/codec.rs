//! Lossless conversion between entity sets and relation grids.
//!
//! Encoding tags every consecutive word pair inside a mention with NNW
//! (upper triangle) and the (tail, head) pair with THW-type (lower
//! triangle or diagonal). Decoding scans THW cells and depth-first
//! searches NNW edges from head to tail; every path that ends exactly at
//! the tail is one mention.

use crate::types::{Entity, LabelSet, RelationGrid, Sentence, REL_NNW, REL_NONE};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("sentence failed validation: {0:?}")]
    InvalidSentence(Vec<String>),
    #[error("two entities with tail {tail} and head {head} carry different types ({a} vs {b}); one THW cell cannot hold both")]
    ThwConflict { tail: usize, head: usize, a: String, b: String },
    #[error("grid violates triangular invariants: {0}")]
    BadGrid(String),
    #[error("decoding emitted more than {cap} entities")]
    PathExplosion { cap: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    /// Safety cap on DFS results per sentence; a dense NNW upper triangle
    /// yields exponentially many paths.
    pub max_path_count: usize,
    pub dedupe: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { max_path_count: 10_000, dedupe: true }
    }
}

/// Builds the relation grid for a validated sentence.
pub fn encode_grid(s: &Sentence, labels: &LabelSet) -> Result<RelationGrid, CodecError> {
    crate::types::validate_sentence(s, labels).map_err(CodecError::InvalidSentence)?;
    let mut grid = RelationGrid::new(s.len());
    for e in &s.entities {
        for w in e.indices.windows(2) {
            grid.set(w[0], w[1], REL_NNW);
        }
        let thw = labels.thw_id(&e.etype).expect("validated type");
        let (tail, head) = (e.tail(), e.head());
        let existing = grid.get(tail, head);
        if existing != REL_NONE && existing != thw {
            return Err(CodecError::ThwConflict {
                tail,
                head,
                a: labels.thw_type(existing).unwrap_or("?").to_string(),
                b: e.etype.clone(),
            });
        }
        grid.set(tail, head, thw);
    }
    Ok(grid)
}

/// Recovers the entity set from a relation grid.
///
/// For each THW-t cell (tail, head): a diagonal cell is a single-word
/// entity; otherwise every NNW path from head through strictly increasing
/// indices bounded by tail, ending exactly at tail, is emitted as one
/// entity of type t.
pub fn decode_grid(
    grid: &RelationGrid,
    labels: &LabelSet,
    opts: &DecodeOptions,
) -> Result<Vec<Entity>, CodecError> {
    grid.check_triangles().map_err(CodecError::BadGrid)?;
    let n = grid.n();
    let mut found: Vec<Entity> = Vec::new();
    let mut emitted = 0usize;
    for tail in 0..n {
        for head in 0..=tail {
            let rel = grid.get(tail, head);
            let Some(etype) = labels.thw_type(rel) else { continue };
            if tail == head {
                emitted += 1;
                if emitted > opts.max_path_count {
                    return Err(CodecError::PathExplosion { cap: opts.max_path_count });
                }
                found.push(Entity { indices: vec![head], etype: etype.to_string() });
            } else {
                let mut path = vec![head];
                track(grid, &mut path, tail, etype, &mut found, &mut emitted, opts.max_path_count)
                    .map_err(|cap| CodecError::PathExplosion { cap })?;
            }
        }
    }
    if opts.dedupe {
        let mut seen = std::collections::HashSet::new();
        found.retain(|e| seen.insert((e.indices.clone(), e.etype.clone())));
    }
    // Byte-stable output: by tail, then head, then the path itself.
    found.sort_by(|a, b| {
        (a.tail(), a.head(), &a.indices, &a.etype).cmp(&(b.tail(), b.head(), &b.indices, &b.etype))
    });
    Ok(found)
}

fn track(
    grid: &RelationGrid,
    path: &mut Vec<usize>,
    tail: usize,
    etype: &str,
    found: &mut Vec<Entity>,
    emitted: &mut usize,
    cap: usize,
) -> Result<(), usize> {
    let last = *path.last().unwrap();
    for next in last + 1..=tail {
        if grid.get(last, next) != REL_NNW {
            continue;
        }
        path.push(next);
        if next == tail {
            *emitted += 1;
            if *emitted > cap {
                return Err(cap);
            }
            found.push(Entity { indices: path.clone(), etype: etype.to_string() });
        } else {
            track(grid, path, tail, etype, found, emitted, cap)?;
        }
        path.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_sentence, REL_THW_BASE};
    use proptest::prelude::*;

    fn labels() -> LabelSet {
        LabelSet::new(["X"]).unwrap()
    }

    fn sent(n: usize, entities: &[(&[usize], &str)]) -> Sentence {
        Sentence {
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            entities: entities
                .iter()
                .map(|(ix, t)| Entity { indices: ix.to_vec(), etype: t.to_string() })
                .collect(),
        }
    }

    fn cells(g: &RelationGrid) -> Vec<(usize, usize, u16)> {
        g.tagged_cells().collect()
    }

    #[test]
    fn encode_figure2_sentence() {
        // "I am having aching in legs and shoulders" with
        // "aching in legs" and "aching in shoulders", both Symptom.
        let ls = LabelSet::new(["Symptom"]).unwrap();
        let s = sent(8, &[(&[3, 4, 5], "Symptom"), (&[3, 4, 7], "Symptom")]);
        let g = encode_grid(&s, &ls).unwrap();
        let thw = ls.thw_id("Symptom").unwrap();
        let mut expect = vec![
            (3, 4, REL_NNW),
            (4, 5, REL_NNW),
            (4, 7, REL_NNW),
            (5, 3, thw),
            (7, 3, thw),
        ];
        expect.sort();
        assert_eq!(cells(&g), expect);
    }

    #[test]
    fn encode_single_word_entity_tags_diagonal_only() {
        let ls = LabelSet::new(["T"]).unwrap();
        let g = encode_grid(&sent(1, &[(&[0], "T")]), &ls).unwrap();
        assert_eq!(cells(&g), vec![(0, 0, REL_THW_BASE)]);
    }

    #[test]
    fn encode_overlapping_discontinuous_pair() {
        // Figure 4(d): "ACD" and "BCE" over ABCDE.
        let ls = labels();
        let g = encode_grid(&sent(5, &[(&[0, 2, 3], "X"), (&[1, 2, 4], "X")]), &ls).unwrap();
        let thw = REL_THW_BASE;
        let mut expect = vec![
            (0, 2, REL_NNW),
            (2, 3, REL_NNW),
            (1, 2, REL_NNW),
            (2, 4, REL_NNW),
            (3, 0, thw),
            (4, 1, thw),
        ];
        expect.sort();
        assert_eq!(cells(&g), expect);
    }

    #[test]
    fn encode_rejects_thw_conflict() {
        let ls = LabelSet::new(["X", "Y"]).unwrap();
        let s = sent(3, &[(&[0, 2], "X"), (&[0, 1, 2], "Y")]);
        let err = encode_grid(&s, &ls).unwrap_err();
        assert!(matches!(err, CodecError::ThwConflict { tail: 2, head: 0, .. }));
    }

    #[test]
    fn decode_flat_entities() {
        // Figure 4(a): "AB" and "DE".
        let ls = labels();
        let mut g = RelationGrid::new(5);
        g.set(0, 1, REL_NNW);
        g.set(3, 4, REL_NNW);
        g.set(1, 0, REL_THW_BASE);
        g.set(4, 3, REL_THW_BASE);
        let out = decode_grid(&g, &ls, &DecodeOptions::default()).unwrap();
        assert_eq!(
            out,
            vec![
                Entity { indices: vec![0, 1], etype: "X".into() },
                Entity { indices: vec![3, 4], etype: "X".into() },
            ]
        );
    }

    #[test]
    fn decode_nested_entities() {
        // Figure 4(b): "BC" nested in "ABC".
        let ls = labels();
        let mut g = RelationGrid::new(5);
        g.set(0, 1, REL_NNW);
        g.set(1, 2, REL_NNW);
        g.set(2, 0, REL_THW_BASE);
        g.set(2, 1, REL_THW_BASE);
        let out = decode_grid(&g, &ls, &DecodeOptions::default()).unwrap();
        assert_eq!(
            out,
            vec![
                Entity { indices: vec![0, 1, 2], etype: "X".into() },
                Entity { indices: vec![1, 2], etype: "X".into() },
            ]
        );
    }

    #[test]
    fn decode_overlapping_discontinuous_resolves_ambiguity() {
        // Figure 4(d): exactly ACD and BCE; never ACE or BCD.
        let ls = labels();
        let s = sent(5, &[(&[0, 2, 3], "X"), (&[1, 2, 4], "X")]);
        let g = encode_grid(&s, &ls).unwrap();
        let out = decode_grid(&g, &ls, &DecodeOptions::default()).unwrap();
        assert_eq!(
            out,
            vec![
                Entity { indices: vec![0, 2, 3], etype: "X".into() },
                Entity { indices: vec![1, 2, 4], etype: "X".into() },
            ]
        );
    }

    #[test]
    fn decode_without_thw_yields_nothing() {
        let ls = labels();
        let mut g = RelationGrid::new(3);
        g.set(0, 1, REL_NNW);
        assert_eq!(decode_grid(&g, &ls, &DecodeOptions::default()).unwrap(), vec![]);
    }

    #[test]
    fn decode_rejects_misplaced_relations() {
        let ls = labels();
        let mut g = RelationGrid::new(3);
        g.set(2, 0, REL_NNW); // NNW below the diagonal
        assert!(matches!(
            decode_grid(&g, &ls, &DecodeOptions::default()),
            Err(CodecError::BadGrid(_))
        ));
    }

    #[test]
    fn path_explosion_is_reported() {
        // Complete NNW upper triangle plus one far THW: path count is
        // exponential in n.
        let ls = labels();
        let n = 24;
        let mut g = RelationGrid::new(n);
        for i in 0..n {
            for j in i + 1..n {
                g.set(i, j, REL_NNW);
            }
        }
        g.set(n - 1, 0, REL_THW_BASE);
        let err = decode_grid(&g, &ls, &DecodeOptions { max_path_count: 1000, dedupe: true });
        assert_eq!(err.unwrap_err(), CodecError::PathExplosion { cap: 1000 });
    }

    /// Brute-force reference: enumerate increasing index sequences by
    /// extension over NNW-adjacent pairs and keep those whose (tail, head)
    /// cell carries a THW label. Independent of the Algorithm-1 traversal.
    pub(crate) fn brute_force_decode(grid: &RelationGrid, labels: &LabelSet) -> Vec<Entity> {
        let n = grid.n();
        let mut out = Vec::new();
        fn extend(
            grid: &RelationGrid,
            labels: &LabelSet,
            seq: &mut Vec<usize>,
            out: &mut Vec<Entity>,
        ) {
            let last = *seq.last().unwrap();
            if let Some(t) = labels.thw_type(grid.get(last, seq[0])) {
                if seq.len() > 1 || last == seq[0] {
                    out.push(Entity { indices: seq.clone(), etype: t.to_string() });
                }
            }
            for next in last + 1..grid.n() {
                if grid.get(last, next) == REL_NNW {
                    seq.push(next);
                    extend(grid, labels, seq, out);
                    seq.pop();
                }
            }
        }
        for start in 0..n {
            extend(grid, labels, &mut vec![start], &mut out);
        }
        out.sort();
        out.dedup();
        out
    }

    #[test]
    fn brute_force_agrees_on_figure4_cases() {
        let ls = labels();
        for entities in [
            vec![(vec![0usize, 1], "X"), (vec![3, 4], "X")],
            vec![(vec![0, 1, 2], "X"), (vec![1, 2], "X")],
            vec![(vec![0, 1, 2], "X"), (vec![0, 1, 3], "X")],
            vec![(vec![0, 2, 3], "X"), (vec![1, 2, 4], "X")],
        ] {
            let refs: Vec<(&[usize], &str)> =
                entities.iter().map(|(ix, t)| (ix.as_slice(), *t)).collect();
            let s = sent(5, &refs);
            let g = encode_grid(&s, &ls).unwrap();
            let mut dec = decode_grid(&g, &ls, &DecodeOptions::default()).unwrap();
            dec.sort();
            assert_eq!(dec, brute_force_decode(&g, &ls));
        }
    }

    /// Generates a sentence whose entity set is representable: encode must
    /// succeed and the brute-force reference must reproduce the set.
    fn representable_sentence() -> impl Strategy<Value = (Sentence, LabelSet)> {
        (2usize..10, proptest::collection::vec((0usize..10, 0usize..10, 0usize..2), 0..4))
            .prop_filter_map("unrepresentable", |(n, raw)| {
                let ls = LabelSet::new(["X", "Y"]).unwrap();
                let mut entities = Vec::new();
                for (a, b, t) in raw {
                    let (a, b) = (a % n, b % n);
                    let e = Entity::canonicalize(&[a, b], ["X", "Y"][t]).ok()?;
                    if !entities.contains(&e) {
                        entities.push(e);
                    }
                }
                let s = Sentence {
                    tokens: (0..n).map(|i| format!("t{i}")).collect(),
                    entities,
                };
                validate_sentence(&s, &ls).ok()?;
                let g = encode_grid(&s, &ls).ok()?;
                let mut gold: Vec<Entity> = s.entities.clone();
                gold.sort();
                (brute_force_decode(&g, &ls) == gold).then_some((s, ls))
            })
    }

    proptest! {
        #[test]
        fn round_trip_on_representable_sets((s, ls) in representable_sentence()) {
            let g = encode_grid(&s, &ls).unwrap();
            let mut dec = decode_grid(&g, &ls, &DecodeOptions::default()).unwrap();
            dec.sort();
            let mut gold = s.entities.clone();
            gold.sort();
            prop_assert_eq!(dec, gold);
        }

        #[test]
        fn all_none_grid_decodes_to_nothing(n in 1usize..12) {
            let ls = labels();
            let g = RelationGrid::new(n);
            prop_assert!(decode_grid(&g, &ls, &DecodeOptions::default()).unwrap().is_empty());
        }

        #[test]
        fn decoded_entities_satisfy_entity_invariants(
            n in 2usize..8,
            edges in proptest::collection::vec((0usize..8, 0usize..8), 0..10),
            thws in proptest::collection::vec((0usize..8, 0usize..8), 0..4),
        ) {
            let ls = labels();
            let mut g = RelationGrid::new(n);
            for (i, j) in edges {
                let (i, j) = (i % n, j % n);
                if i < j { g.set(i, j, REL_NNW); }
            }
            for (i, j) in thws {
                let (i, j) = (i % n, j % n);
                if i >= j { g.set(i, j, REL_THW_BASE); }
            }
            let out = decode_grid(&g, &ls, &DecodeOptions::default()).unwrap();
            for e in out {
                prop_assert!(!e.indices.is_empty());
                prop_assert!(e.indices.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(e.tail() < n);
            }
        }
    }
}
