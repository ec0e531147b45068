use super::{sigmoid, NnError};

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` in the overflow-free logit form.
pub fn bce_term(score: f64, label: f64) -> f64 {
    score.max(0.0) - score * label + (-score.abs()).exp().ln_1p()
}

pub(crate) fn bce_term_grad(score: f64, label: f64) -> f64 {
    sigmoid(score) - label
}

/// Mean sigmoid binary cross-entropy over `(score, label)` pairs.
pub fn bce_with_logits(scores: &[f64], labels: &[f64]) -> Result<f64, NnError> {
    if scores.is_empty() {
        return Err(NnError::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| bce_term(s, y))
        .sum();
    Ok(total / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn fixed_values() {
        assert!((bce_with_logits(&[0.0], &[1.0]).unwrap() - LN_2).abs() < 1e-12);
        assert!((bce_with_logits(&[0.0, 0.0], &[1.0, 0.0]).unwrap() - LN_2).abs() < 1e-12);
        // ln(1 + e^-100)
        let v = bce_with_logits(&[100.0], &[1.0]).unwrap();
        assert!((v - 3.720_075_976_020_836e-44).abs() < 1e-56, "{v:e}");
        let big = bce_with_logits(&[700.0, -700.0], &[0.0, 1.0]).unwrap();
        assert!((big - 700.0).abs() < 1e-9);
        assert!(matches!(bce_with_logits(&[], &[]), Err(NnError::EmptyInput)));
    }

    #[test]
    fn label_symmetry() {
        let s = [-3.0, 0.2, 5.5, 700.0];
        let y = [1.0, 0.0, 1.0, 0.0];
        let ns: Vec<f64> = s.iter().map(|v| -v).collect();
        let ny: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let a = bce_with_logits(&s, &y).unwrap();
        let b = bce_with_logits(&ns, &ny).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
