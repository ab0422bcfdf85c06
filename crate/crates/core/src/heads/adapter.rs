//! Reuse of the backbone's own expression logits for the challenge classes.
//!
//! The backbone predicts 8 AffectNet classes (including Contempt) while the
//! challenge has 7 basic classes plus Other. A binary Other detector decides
//! Other/non-Other; non-Other frames take the largest remaining logit.

use super::{argmax, softmax_in_place, HeadError};
use crate::dataio::{EXPR_OTHER, LOGIT_COUNT};

/// Challenge class id for each AffectNet logit; Contempt has none.
pub const AFFECTNET_TO_CHALLENGE: [Option<usize>; LOGIT_COUNT] = [
    Some(1), // Anger
    None,    // Contempt
    Some(2), // Disgust
    Some(3), // Fear
    Some(4), // Happiness
    Some(0), // Neutral
    Some(5), // Sadness
    Some(6), // Surprise
];

/// Challenge class for one frame: Other when `other_prob >= other_threshold`,
/// else the argmax of the logits with Contempt excluded.
pub fn adapt_pretrained_logits(
    logits: &[f64],
    other_prob: f64,
    other_threshold: f64,
) -> Result<usize, HeadError> {
    if logits.len() != LOGIT_COUNT {
        return Err(HeadError::LogitCount {
            expected: LOGIT_COUNT,
            found: logits.len(),
        });
    }
    if other_prob >= other_threshold {
        return Ok(EXPR_OTHER);
    }
    let best = AFFECTNET_TO_CHALLENGE
        .iter()
        .zip(logits)
        .filter_map(|(c, &l)| c.map(|c| (c, l)))
        .fold(None, |acc: Option<(usize, f64)>, (c, l)| match acc {
            Some((_, bl)) if bl >= l => acc,
            _ => Some((c, l)),
        })
        .expect("seven mapped classes");
    Ok(best.0)
}

/// Challenge-order probability vector built from the backbone logits and the
/// detector's Other probability: Other gets `other_prob`, the seven basic
/// classes share the rest by softmax over their logits.
pub fn pretrained_expression_probs(logits: &[f64], other_prob: f64) -> Result<[f64; 8], HeadError> {
    if logits.len() != LOGIT_COUNT {
        return Err(HeadError::LogitCount {
            expected: LOGIT_COUNT,
            found: logits.len(),
        });
    }
    let mut basic = [0.0; 7];
    for (c, &l) in AFFECTNET_TO_CHALLENGE.iter().zip(logits) {
        if let Some(c) = c {
            basic[*c] = l;
        }
    }
    softmax_in_place(&mut basic);
    let mut out = [0.0; 8];
    for (o, p) in out.iter_mut().zip(basic) {
        *o = (1.0 - other_prob) * p;
    }
    out[EXPR_OTHER] = other_prob;
    Ok(out)
}

/// Decision rule for a (possibly smoothed) [`pretrained_expression_probs`]
/// row.
pub fn gate_other(probs: &[f64], other_threshold: f64) -> usize {
    if probs[EXPR_OTHER] >= other_threshold {
        EXPR_OTHER
    } else {
        argmax(&probs[..EXPR_OTHER])
    }
}
