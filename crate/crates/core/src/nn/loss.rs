/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Value and gradient (w.r.t. the probability vector) of a cross-entropy term.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Set when the true-label probability was below [`PROB_FLOOR`].
    pub clamped: bool,
}

/// `−ln p[label]`, with `p[label]` floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> CrossEntropy {
    let p = probs[label];
    let clamped = p < PROB_FLOOR;
    let p = p.max(PROB_FLOOR);
    let mut grad = vec![0.0; probs.len()];
    grad[label] = -1.0 / p;
    CrossEntropy {
        loss: -p.ln(),
        grad,
        clamped,
    }
}

/// Shannon entropy in nats; `0 · ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}
