use rand::Rng;

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Entropy in nats from log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}

/// Inverse-CDF draw; the last index absorbs rounding slack.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub i_rt: usize,
    pub i_bw: usize,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Draws both indices independently; the joint log-probability and entropy
/// are the sums over the two heads.
pub fn sample_action<R: Rng>(logits_rt: &[f64], logits_bw: &[f64], rng: &mut R) -> ActionSample {
    let lp1 = log_softmax(logits_rt);
    let lp2 = log_softmax(logits_bw);
    let p1: Vec<f64> = lp1.iter().map(|v| v.exp()).collect();
    let p2: Vec<f64> = lp2.iter().map(|v| v.exp()).collect();
    let i_rt = sample_index(&p1, rng);
    let i_bw = sample_index(&p2, rng);
    ActionSample {
        i_rt,
        i_bw,
        log_prob: lp1[i_rt] + lp2[i_bw],
        entropy: entropy(&lp1) + entropy(&lp2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_heads_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_action(&[0.0; 5], &[0.0; 5], &mut rng);
        assert!((s.entropy - 2.0 * 5f64.ln()).abs() < 1e-12);
        assert!((s.entropy - 3.2189).abs() < 1e-4);
        assert!((s.log_prob - 2.0 * (0.2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_logits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l1 = [-1e6, -1e6, 1e6, -1e6, -1e6];
        let l2 = [1e6, -1e6, -1e6, -1e6, -1e6];
        for _ in 0..100 {
            let s = sample_action(&l1, &l2, &mut rng);
            assert_eq!((s.i_rt, s.i_bw), (2, 0));
            assert!(s.entropy.abs() < 1e-12);
            assert!(s.log_prob.abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let logits = [0.5, -1.0, 2.0, 0.0, 1.0];
        let p = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[sample_index(&p, &mut rng)] += 1;
        }
        for (c, pk) in counts.iter().zip(&p) {
            let sigma = (n as f64 * pk * (1.0 - pk)).sqrt();
            assert!((*c as f64 - n as f64 * pk).abs() <= 3.0 * sigma, "{c} vs {}", n as f64 * pk);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = entropy(&log_softmax(&logits));
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (logits.len() as f64).ln() + 1e-12);
        }
    }
}
