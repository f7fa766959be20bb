/// Mean token cross-entropy of row-major `logits` (`targets.len() × vocab`).
pub fn softmax_cross_entropy(logits: &[f64], targets: &[u32], vocab: usize) -> f64 {
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let row = &logits[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            lse - row[t as usize]
        })
        .sum();
    total / targets.len() as f64
}

/// `(mean cross-entropy, exp(mean cross-entropy))`
pub fn loss_and_perplexity(logits: &[f64], targets: &[u32], vocab: usize) -> (f64, f64) {
    let loss = softmax_cross_entropy(logits, targets, vocab);
    (loss, loss.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let logits = vec![0.0; 3 * 20];
        let (loss, ppl) = loss_and_perplexity(&logits, &[0, 5, 19], 20);
        assert!((loss - 2.995732273553991).abs() < 1e-12);
        assert!((ppl - 20.0).abs() < 1e-9);
    }

    #[test]
    fn confident_logits_approach_one() {
        let mut logits = vec![0.0; 4];
        logits[2] = 60.0;
        let (_, ppl) = loss_and_perplexity(&logits, &[2], 4);
        assert!((ppl - 1.0).abs() < 1e-20_f64.max(1e-12));
    }

    #[test]
    fn matches_direct_softmax() {
        // Direct probabilities without the max shift.
        let logits = [0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
        let targets = [2, 0];
        let mut nll = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &logits[r * 3..(r + 1) * 3];
            let z: f64 = row.iter().map(|x: &f64| x.exp()).sum();
            nll -= (row[t as usize].exp() / z).ln();
        }
        let (loss, _) = loss_and_perplexity(&logits, &targets, 3);
        assert!((loss - nll / 2.0).abs() < 1e-12);
    }
}
