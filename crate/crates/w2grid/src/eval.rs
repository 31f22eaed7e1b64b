//! Exact-match micro precision/recall/F1, plus subset analysis restricted
//! to overlapped or discontinuous mentions.
//!
//! An entity counts as correct only when its full index sequence and type
//! both match a gold entity of the same sentence.

use crate::types::Entity;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction list has {pred} sentences but gold has {gold}")]
    LengthMismatch { pred: usize, gold: usize },
}

/// Pooled exact-match counts with the usual zero-denominator convention
/// (P, R, F1 all 0 when undefined).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Prf {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Machine-readable `key=value` lines, one metric per line.
    pub fn report(&self, prefix: &str) -> String {
        format!(
            "{prefix}tp={}\n{prefix}fp={}\n{prefix}fn={}\n{prefix}precision={:.6}\n{prefix}recall={:.6}\n{prefix}f1={:.6}\n",
            self.tp,
            self.fp,
            self.fn_,
            self.precision(),
            self.recall(),
            self.f1()
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Which gold/predicted mentions a subset evaluation keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    /// Entities sharing at least one token index with another entity in
    /// the same sentence's set.
    Overlapped,
    /// Entities whose index sequence has a gap.
    Discontinuous,
}

fn count_sentence(pred: &[Entity], gold: &[Entity], prf: &mut Prf) {
    let pred: HashSet<&Entity> = pred.iter().collect();
    let gold: HashSet<&Entity> = gold.iter().collect();
    let tp = pred.intersection(&gold).count();
    prf.tp += tp;
    prf.fp += pred.len() - tp;
    prf.fn_ += gold.len() - tp;
}

fn check_lengths(pred: &[Vec<Entity>], gold: &[Vec<Entity>]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    Ok(())
}

/// Corpus-pooled exact-match P/R/F1. `pred` and `gold` are aligned
/// per-sentence entity lists.
pub fn micro_prf(pred: &[Vec<Entity>], gold: &[Vec<Entity>]) -> Result<Prf, EvalError> {
    check_lengths(pred, gold)?;
    let mut prf = Prf::default();
    for (p, g) in pred.iter().zip(gold) {
        count_sentence(p, g, &mut prf);
    }
    Ok(prf)
}

/// Keeps the entities of `set` that belong to `subset`, judged against
/// `set` itself (overlap is relative to the set the entity came from).
fn restrict(set: &[Entity], subset: Subset) -> Vec<Entity> {
    match subset {
        Subset::Discontinuous => {
            set.iter().filter(|e| e.is_discontinuous()).cloned().collect()
        }
        Subset::Overlapped => {
            let index_sets: Vec<HashSet<usize>> =
                set.iter().map(|e| e.indices.iter().copied().collect()).collect();
            set.iter()
                .enumerate()
                .filter(|(k, _)| {
                    index_sets.iter().enumerate().any(|(m, other)| {
                        m != *k && index_sets[*k].iter().any(|i| other.contains(i))
                    })
                })
                .map(|(_, e)| e.clone())
                .collect()
        }
    }
}

/// Micro P/R/F1 after restricting each side to the subset, with each
/// side's membership judged against its own entity set.
pub fn subset_prf(
    pred: &[Vec<Entity>],
    gold: &[Vec<Entity>],
    subset: Subset,
) -> Result<Prf, EvalError> {
    check_lengths(pred, gold)?;
    let mut prf = Prf::default();
    for (p, g) in pred.iter().zip(gold) {
        count_sentence(&restrict(p, subset), &restrict(g, subset), &mut prf);
    }
    Ok(prf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn e(indices: &[usize], t: &str) -> Entity {
        Entity { indices: indices.to_vec(), etype: t.to_string() }
    }

    #[test]
    fn perfect_match_scores_one() {
        let gold = vec![
            vec![e(&[0, 1], "X"), e(&[3], "Y")],
            vec![e(&[2, 4], "X")],
            vec![],
            vec![e(&[0], "Y"); 1],
        ];
        let prf = micro_prf(&gold, &gold).unwrap();
        assert_eq!((prf.precision(), prf.recall(), prf.f1()), (1.0, 1.0, 1.0));
        assert_eq!(prf.tp, 4);
    }

    #[test]
    fn disjoint_sets_score_zero() {
        let pred = vec![vec![e(&[0], "X"), e(&[1], "X"), e(&[2], "X")]];
        let gold = vec![vec![e(&[3], "X"), e(&[4], "X"), e(&[5], "X"), e(&[6], "X")]];
        let prf = micro_prf(&pred, &gold).unwrap();
        assert_eq!(prf, Prf { tp: 0, fp: 3, fn_: 4 });
        assert_eq!((prf.precision(), prf.recall(), prf.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn type_mismatch_is_both_fp_and_fn() {
        let gold = vec![vec![e(&[0, 1], "X"), e(&[3], "Y")]];
        let pred = vec![vec![e(&[0, 1], "X"), e(&[3], "Z")]];
        let prf = micro_prf(&pred, &gold).unwrap();
        assert_eq!(prf, Prf { tp: 1, fp: 1, fn_: 1 });
        assert_eq!((prf.precision(), prf.recall(), prf.f1()), (0.5, 0.5, 0.5));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = micro_prf(&[vec![]], &[]).unwrap_err();
        assert_eq!(err, EvalError::LengthMismatch { pred: 1, gold: 0 });
    }

    #[test]
    fn overlapped_subset_excludes_isolated_entities() {
        // One nested pair plus one isolated flat entity; pred == gold.
        let gold = vec![vec![e(&[1, 2, 3], "X"), e(&[2], "Y"), e(&[6, 7], "X")]];
        let prf = subset_prf(&gold, &gold, Subset::Overlapped).unwrap();
        assert_eq!(prf, Prf { tp: 2, fp: 0, fn_: 0 });
        assert_eq!(prf.f1(), 1.0);
    }

    #[test]
    fn empty_discontinuous_subset_is_all_zero() {
        let gold = vec![vec![e(&[0, 1], "X")], vec![e(&[2], "Y")]];
        let prf = subset_prf(&gold, &gold, Subset::Discontinuous).unwrap();
        assert_eq!(prf, Prf::default());
        assert_eq!((prf.precision(), prf.recall(), prf.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn continuous_prediction_of_discontinuous_gold_is_a_miss_not_a_fp() {
        let gold = vec![vec![e(&[0, 2], "X")]];
        let pred = vec![vec![e(&[0, 1, 2], "X")]];
        let prf = subset_prf(&pred, &gold, Subset::Discontinuous).unwrap();
        assert_eq!(prf, Prf { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn subset_counts_never_exceed_full_counts() {
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let (pred, gold) = random_corpus(&mut rng);
            let full = micro_prf(&pred, &gold).unwrap();
            for subset in [Subset::Overlapped, Subset::Discontinuous] {
                let sub = subset_prf(&pred, &gold, subset).unwrap();
                assert!(sub.tp <= full.tp);
                assert!(sub.fp <= full.fp);
                assert!(sub.fn_ <= full.fn_);
            }
        }
    }

    #[test]
    fn f1_is_invariant_under_pred_gold_swap() {
        let mut rng = Rng::new(99);
        for _ in 0..100 {
            let (pred, gold) = random_corpus(&mut rng);
            let a = micro_prf(&pred, &gold).unwrap();
            let b = micro_prf(&gold, &pred).unwrap();
            assert_eq!(a.tp, b.tp);
            assert_eq!(a.fp, b.fn_);
            assert_eq!(a.precision(), b.recall());
            assert!((a.f1() - b.f1()).abs() < 1e-15);
        }
    }

    fn random_corpus(rng: &mut Rng) -> (Vec<Vec<Entity>>, Vec<Vec<Entity>>) {
        let sentences = 1 + rng.gen_range(5);
        let types = ["X", "Y", "Z"];
        let mk_side = |rng: &mut Rng| -> Vec<Vec<Entity>> {
            (0..sentences)
                .map(|_| {
                    (0..rng.gen_range(4))
                        .map(|_| {
                            let start = rng.gen_range(8);
                            let len = 1 + rng.gen_range(3);
                            let stride = 1 + rng.gen_range(2);
                            let indices: Vec<usize> =
                                (0..len).map(|k| start + k * stride).collect();
                            e(&indices, types[rng.gen_range(types.len())])
                        })
                        .collect()
                })
                .collect()
        };
        (mk_side(rng), mk_side(rng))
    }
}
