use serde::{Deserialize, Serialize};

/// Micro-averaged scores on a 0-100 scale, with the confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// No true positives, so F1 is 0 by convention rather than by ratio.
    pub degenerate: bool,
}

/// Pool every (prediction, gold) pair. `None` for an empty list.
pub fn micro_f1(pairs: &[(bool, bool)]) -> Option<F1Scores> {
    if pairs.is_empty() {
        return None;
    }
    let count = |p: bool, g: bool| pairs.iter().filter(|&&x| x == (p, g)).count();
    let (tp, fp, fn_, tn) = (
        count(true, true),
        count(true, false),
        count(false, true),
        count(false, false),
    );
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    Some(F1Scores {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        tn,
        degenerate: tp == 0,
    })
}

/// F1 discounted by mean turns: F1 / (T/100 + 1), both on the 0-100 scale.
pub fn turn_weighted_f1(f1: f64, turns: f64) -> f64 {
    f1 / (turns / 100.0 + 1.0)
}
