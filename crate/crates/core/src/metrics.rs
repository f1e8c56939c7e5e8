use serde::{Deserialize, Serialize};

use crate::error::{LameError, Result};

/// Micro-averaged precision, recall and F1. 0/0 counts as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Pools hard tp/fp/fn over every (instance, label) pair.
pub fn micro_prf(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> Result<Prf> {
    if preds.len() != golds.len() {
        return Err(LameError::contract(format!(
            "micro_prf: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p_row, g_row) in preds.iter().zip(golds) {
        if p_row.len() != g_row.len() {
            return Err(LameError::contract("micro_prf: row widths differ"));
        }
        for (&p, &g) in p_row.iter().zip(g_row) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Ok(Prf { precision, recall, f1 })
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != golds.len() {
        return Err(LameError::contract(format!(
            "accuracy: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn micro_examples() {
        let golds = vec![vec![true, false], vec![true, true]];
        assert_eq!(micro_prf(&golds, &golds).unwrap(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        let preds = vec![vec![true, true], vec![false, true]];
        let m = micro_prf(&preds, &golds).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        let none = vec![vec![false, false], vec![false, false]];
        assert_eq!(micro_prf(&none, &golds).unwrap(), Prf::default());
        assert!(micro_prf(&none[..1], &golds).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    fn brute_force(preds: &[Vec<bool>], golds: &[Vec<bool>]) -> (f64, f64, f64) {
        let pairs: Vec<(bool, bool)> = preds.iter().flatten().copied().zip(golds.iter().flatten().copied()).collect();
        let tp = pairs.iter().filter(|&&(p, g)| p && g).count() as f64;
        let pp = pairs.iter().filter(|&&(p, _)| p).count() as f64;
        let gp = pairs.iter().filter(|&&(_, g)| g).count() as f64;
        let p = if pp > 0.0 { tp / pp } else { 0.0 };
        let r = if gp > 0.0 { tp / gp } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f)
    }

    proptest! {
        #[test]
        fn micro_matches_enumeration(rows in proptest::collection::vec(proptest::collection::vec(any::<(bool, bool)>(), 4), 1..8)) {
            let preds: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
            let golds: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
            let m = micro_prf(&preds, &golds).unwrap();
            let (p, r, f) = brute_force(&preds, &golds);
            prop_assert_eq!((m.precision, m.recall, m.f1), (p, r, f));
        }
    }
}
