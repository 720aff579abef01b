//! Convergence diagnostics.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

/// Split-chain potential scale reduction factor. Each chain is cut into
/// two halves (the middle draw of an odd-length chain is dropped). Returns
/// `None` with fewer than two draws per half.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    let n = chains.iter().map(|c| c.len() / 2).min()?;
    if n < 2 {
        return None;
    }
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..n]);
        halves.push(&c[c.len() - n..]);
    }
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Some(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Some((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinned_value() {
        // Independent computation of the same formula in Python.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [2.0, 2.5, 1.0, 0.5, 3.0, 4.0];
        assert_relative_eq!(split_rhat(&[&a, &b]).unwrap(), 1.4670995032311043, max_relative = 1e-12);
    }

    #[test]
    fn constant_and_short_chains() {
        assert_eq!(split_rhat(&[&[1.0; 8]]), Some(1.0));
        assert_eq!(split_rhat(&[&[1.0, 2.0, 3.0]]), None);
    }
}
