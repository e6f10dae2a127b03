use ndarray::Array2;

use crate::autograd::log_softmax_rows;
use crate::error::{Error, Result};

/// Mean negative log-likelihood of `targets` under `softmax(logits)` over the
/// rows where `mask` is non-zero.
pub fn story_loss(logits: &Array2<f64>, targets: &[usize], mask: &[f64]) -> Result<f64> {
    if logits.nrows() != targets.len() || targets.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(Error::TokenOutOfRange {
            id: bad,
            vocab: logits.ncols(),
        });
    }
    let count = mask.iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::Empty("every target is masked"));
    }
    let logp = log_softmax_rows(logits);
    let total: f64 = targets
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| m != 0.0)
        .map(|(r, (&t, _))| -logp[[r, t]])
        .sum();
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let loss = story_loss(&Array2::zeros((3, 4)), &[0, 1, 3], &[1.0, 1.0, 1.0]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let logits = array![[1e3, 0.0, 0.0], [0.0, 0.0, 1e3]];
        assert!(story_loss(&logits, &[0, 2], &[1.0, 1.0]).unwrap() < 1e-12);
    }

    #[test]
    fn matches_brute_force_softmax() {
        let logits = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75], [9.0, 9.0, 9.0]];
        let targets = [2, 1, 0];
        let mask = [1.0, 1.0, 0.0];
        // direct evaluation: -ln(exp(z_t) / sum exp(z))
        let nll = |row: [f64; 3], t: usize| -(row[t].exp() / row.iter().map(|z| z.exp()).sum::<f64>()).ln();
        let expected = (nll([0.5, -1.0, 2.0], 2) + nll([1.5, 0.25, -0.75], 1)) / 2.0;
        let got = story_loss(&logits, &targets, &mask).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn all_masked_is_an_error() {
        assert!(story_loss(&Array2::zeros((2, 4)), &[0, 1], &[0.0, 0.0]).is_err());
        assert!(story_loss(&Array2::zeros((2, 4)), &[0, 9], &[1.0, 1.0]).is_err());
    }
}
