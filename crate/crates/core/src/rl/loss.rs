use super::dist::{entropy, log_softmax};
use super::net::PolicyParams;
use super::{PpoHyper, RlError};

pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Flattened training samples, possibly pooled from several trajectories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<(usize, usize)>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn append(&mut self, other: &Samples) {
        self.states.extend(other.states.iter().cloned());
        self.actions.extend(&other.actions);
        self.old_log_probs.extend(&other.old_log_probs);
        self.advantages.extend(&other.advantages);
        self.value_targets.extend(&other.value_targets);
    }

    fn check(&self) -> Result<(), RlError> {
        let n = self.states.len();
        if [
            self.actions.len(),
            self.old_log_probs.len(),
            self.advantages.len(),
            self.value_targets.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(RlError::LengthMismatch("sample columns differ in length".into()));
        }
        Ok(())
    }
}

/// Critic-side agreement term against neighbor value estimates on shared
/// probe states.
#[derive(Debug, Clone, Copy)]
pub struct ValuePenalty<'a> {
    pub probe_states: &'a [Vec<f64>],
    pub neighbor_values: &'a [Vec<f64>],
    pub kappa: f64,
}

/// kappa * mean over neighbors of the mean squared difference, with the
/// gradient of that scalar with respect to each entry of `v_self`.
pub fn consensus_term(v_self: &[f64], neighbors: &[Vec<f64>], kappa: f64) -> Result<(f64, Vec<f64>), RlError> {
    let n = v_self.len();
    if let Some(bad) = neighbors.iter().find(|v| v.len() != n) {
        return Err(RlError::LengthMismatch(format!(
            "neighbor has {} values, self has {n}",
            bad.len()
        )));
    }
    let mut grad = vec![0.0; n];
    if neighbors.is_empty() || n == 0 || kappa == 0.0 {
        return Ok((0.0, grad));
    }
    let scale = kappa / (neighbors.len() as f64 * n as f64);
    let mut total = 0.0;
    for nb in neighbors {
        for (s, (vs, vn)) in v_self.iter().zip(nb).enumerate() {
            let d = vs - vn;
            total += d * d;
            grad[s] += 2.0 * d * scale;
        }
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// Quantity minimized: -(L1 - c1 L2 + c2 beta S) + c1 penalty.
    pub total: f64,
    /// Clipped surrogate, L1.
    pub surrogate: f64,
    /// Critic squared error, L2.
    pub value_loss: f64,
    /// Mean summed entropy of the two heads, S.
    pub entropy: f64,
    pub penalty: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

fn normalized(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Loss and exact gradient over the samples selected by `idx`.
pub fn total_loss(
    params: &PolicyParams,
    samples: &Samples,
    idx: &[usize],
    hyper: &PpoHyper,
    penalty: Option<&ValuePenalty>,
) -> Result<(LossBreakdown, Vec<f64>), RlError> {
    let mut grad = vec![0.0; params.len()];
    let b = loss_impl(params, samples, idx, hyper, penalty, Some(&mut grad))?;
    Ok((b, grad))
}

pub(crate) fn loss_value(
    params: &PolicyParams,
    samples: &Samples,
    idx: &[usize],
    hyper: &PpoHyper,
    penalty: Option<&ValuePenalty>,
) -> Result<LossBreakdown, RlError> {
    loss_impl(params, samples, idx, hyper, penalty, None)
}

fn loss_impl(
    params: &PolicyParams,
    samples: &Samples,
    idx: &[usize],
    hyper: &PpoHyper,
    penalty: Option<&ValuePenalty>,
    mut grad: Option<&mut Vec<f64>>,
) -> Result<LossBreakdown, RlError> {
    samples.check()?;
    if idx.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let raw: Vec<f64> = idx.iter().map(|&i| samples.advantages[i]).collect();
    let adv = if hyper.normalize_advantages { normalized(&raw) } else { raw };
    let n = idx.len() as f64;
    let eps = hyper.clip_eps;
    let ent_coef = hyper.c2 * hyper.beta_entropy;
    let mut out = LossBreakdown::default();
    let mut clipped = 0usize;

    for (k, &i) in idx.iter().enumerate() {
        let (fwd, acts) = params.forward_cached(&samples.states[i])?;
        let (a1, a2) = samples.actions[i];
        if a1 >= fwd.logits_rt.len() || a2 >= fwd.logits_bw.len() {
            return Err(RlError::DimensionMismatch {
                expected: fwd.logits_rt.len().min(fwd.logits_bw.len()),
                got: a1.max(a2),
            });
        }
        let lp1 = log_softmax(&fwd.logits_rt);
        let lp2 = log_softmax(&fwd.logits_bw);
        let logp = lp1[a1] + lp2[a2];
        let log_ratio = logp - samples.old_log_probs[i];
        let ratio = log_ratio.exp();
        let a = adv[k];
        let unclipped = ratio * a;
        let surr = clipped_surrogate(ratio, a, eps);
        let h1 = entropy(&lp1);
        let h2 = entropy(&lp2);
        let v_err = fwd.value - samples.value_targets[i];

        out.surrogate += surr / n;
        out.value_loss += v_err * v_err / n;
        out.entropy += (h1 + h2) / n;
        out.approx_kl += ((ratio - 1.0) - log_ratio) / n;
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }

        if let Some(g) = grad.as_deref_mut() {
            // d(objective)/d(logp): the min picks the unclipped branch or a
            // constant.
            let d_logp = if unclipped <= surr { a * ratio / n } else { 0.0 };
            let head_grad = |lp: &[f64], h: f64, act: usize| -> Vec<f64> {
                lp.iter()
                    .enumerate()
                    .map(|(j, &l)| {
                        let p = l.exp();
                        let onehot = if j == act { 1.0 } else { 0.0 };
                        let d_obj = d_logp * (onehot - p) + ent_coef / n * (-p * (l + h));
                        -d_obj
                    })
                    .collect()
            };
            let d_rt = head_grad(&lp1, h1, a1);
            let d_bw = head_grad(&lp2, h2, a2);
            let d_v = hyper.c1 * 2.0 * v_err / n;
            params.backward_into(&acts, &d_rt, &d_bw, d_v, g);
        }
    }
    out.clip_fraction = clipped as f64 / n;

    if let Some(p) = penalty {
        let mut v_self = Vec::with_capacity(p.probe_states.len());
        let mut caches = Vec::with_capacity(p.probe_states.len());
        for s in p.probe_states {
            let (fwd, acts) = params.forward_cached(s)?;
            v_self.push(fwd.value);
            caches.push(acts);
        }
        let (value, dv) = consensus_term(&v_self, p.neighbor_values, p.kappa)?;
        out.penalty = value;
        if let Some(g) = grad.as_deref_mut() {
            for (acts, d) in caches.iter().zip(&dv) {
                if *d != 0.0 {
                    params.backward_into(acts, &[], &[], hyper.c1 * d, g);
                }
            }
        }
    }

    out.total = -(out.surrogate - hyper.c1 * out.value_loss + ent_coef * out.entropy) + hyper.c1 * out.penalty;
    if !out.total.is_finite() {
        return Err(RlError::NonFinite("loss"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::net::Layout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surrogate_examples() {
        for a in [-3.0, 0.0, 2.5] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
        }
        assert!((clipped_surrogate(1.5, 2.0, 0.2) - 2.4).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn surrogate_limits() {
        // eps -> 0 pins the ratio at one; a huge eps leaves R * A.
        assert!((clipped_surrogate(1.7, 2.0, 1e-300) - 2.0).abs() < 1e-12);
        assert!((clipped_surrogate(0.3, -2.0, 1e-300) + 2.0).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.7, 2.0, 1e9), 3.4);
        assert_eq!(clipped_surrogate(0.3, -2.0, 1e9), -0.6);
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus_term(&[1.0, 2.0], &[vec![1.0, 2.0]], 1.0).unwrap().0, 0.0);
        assert_eq!(consensus_term(&[1.0, 1.0], &[vec![0.0, 0.0]], 1.0).unwrap().0, 1.0);
        assert_eq!(consensus_term(&[1.0, 1.0], &[vec![0.0, 0.0]], 0.0).unwrap().0, 0.0);
        assert!(consensus_term(&[1.0], &[vec![0.0, 0.0]], 1.0).is_err());
    }

    fn small_layout() -> Layout {
        Layout::new(6, &[5, 4], 3, 4)
    }

    fn random_samples(rng: &mut ChaCha8Rng, params: &PolicyParams, n: usize, spread: f64) -> Samples {
        let mut s = Samples::default();
        for _ in 0..n {
            let state: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = params.forward(&state).unwrap();
            let a = (rng.random_range(0..3), rng.random_range(0..4));
            let logp = log_softmax(&f.logits_rt)[a.0] + log_softmax(&f.logits_bw)[a.1];
            s.old_log_probs.push(logp + rng.random_range(-spread..=spread));
            s.states.push(state);
            s.actions.push(a);
            s.advantages.push(rng.random_range(-2.0..2.0));
            s.value_targets.push(rng.random_range(-1.0..1.0));
        }
        s
    }

    #[test]
    fn identical_policies_give_unit_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicyParams::init(small_layout(), &mut rng).unwrap();
        let s = random_samples(&mut rng, &p, 20, 0.0);
        let idx: Vec<usize> = (0..20).collect();
        let hyper = PpoHyper {
            normalize_advantages: false,
            ..Default::default()
        };
        let b = loss_value(&p, &s, &idx, &hyper, None).unwrap();
        let mean_adv = s.advantages.iter().sum::<f64>() / 20.0;
        assert!((b.surrogate - mean_adv).abs() < 1e-12);
        assert_eq!(b.clip_fraction, 0.0);
        assert!(b.approx_kl.abs() < 1e-15);
    }

    #[test]
    fn exact_value_targets_zero_critic_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PolicyParams::init(small_layout(), &mut rng).unwrap();
        let mut s = random_samples(&mut rng, &p, 10, 0.0);
        s.value_targets = s.states.iter().map(|x| p.forward(x).unwrap().value).collect();
        let idx: Vec<usize> = (0..10).collect();
        let hyper = PpoHyper {
            c2: 0.0,
            ..Default::default()
        };
        let (b, g) = total_loss(&p, &s, &idx, &hyper, None).unwrap();
        assert_eq!(b.value_loss, 0.0);
        let value_range = p.layer_ranges().last().unwrap().1.clone();
        assert!(g[value_range].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_heads_entropy_term() {
        let p = PolicyParams::zeros(Layout::new(6, &[4], 5, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_samples(&mut rng, &p, 4, 0.0);
        let b = loss_value(&p, &s, &[0, 1, 2, 3], &PpoHyper::default(), None).unwrap();
        assert!((b.entropy - 2.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = PolicyParams::zeros(small_layout()).unwrap();
        assert!(matches!(
            loss_value(&p, &Samples::default(), &[], &PpoHyper::default(), None),
            Err(RlError::EmptyBatch)
        ));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central differences on a random subset of coordinates, covering every
    /// layer. Instances whose ratios sit within 10*h of a clip edge are
    /// redrawn since the objective has a kink there.
    fn gradcheck(seed: u64, with_penalty: bool) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyper = PpoHyper {
            c2: 0.05,
            ..Default::default()
        };
        loop {
            let mut p = PolicyParams::init(small_layout(), &mut rng).unwrap();
            p.as_mut_slice().iter_mut().for_each(|w| *w += rng.random_range(-0.3..0.3));
            let s = random_samples(&mut rng, &p, 12, 0.4);
            let idx: Vec<usize> = (0..12).collect();
            let near_kink = idx.iter().any(|&i| {
                let f = p.forward(&s.states[i]).unwrap();
                let (a1, a2) = s.actions[i];
                let r = (log_softmax(&f.logits_rt)[a1] + log_softmax(&f.logits_bw)[a2] - s.old_log_probs[i]).exp();
                (r - 1.2).abs() < 1e-2 || (r - 0.8).abs() < 1e-2
            });
            if near_kink {
                continue;
            }
            let probes: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let neighbors: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let pen = ValuePenalty {
                probe_states: &probes,
                neighbor_values: &neighbors,
                kappa: 0.3,
            };
            let pen = with_penalty.then_some(&pen);
            let (_, g) = total_loss(&p, &s, &idx, &hyper, pen).unwrap();
            let h = 1e-4;
            let mut worst: f64 = 0.0;
            for (_, range) in p.layer_ranges() {
                for _ in 0..4 {
                    let j = rng.random_range(range.clone());
                    let mut plus = p.clone();
                    plus.as_mut_slice()[j] += h;
                    let mut minus = p.clone();
                    minus.as_mut_slice()[j] -= h;
                    let fp = loss_value(&plus, &s, &idx, &hyper, pen).unwrap().total;
                    let fm = loss_value(&minus, &s, &idx, &hyper, pen).unwrap().total;
                    worst = worst.max(rel_err(g[j], (fp - fm) / (2.0 * h)));
                }
            }
            return worst;
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let e = gradcheck(seed, false);
            assert!(e < 1e-4, "seed {seed}: relative error {e}");
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        for seed in 100..105 {
            let e = gradcheck(seed, true);
            assert!(e < 1e-4, "seed {seed}: relative error {e}");
        }
    }

    #[test]
    fn surrogate_gradient_is_linear_in_advantages() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = PolicyParams::init(small_layout(), &mut rng).unwrap();
        let s = random_samples(&mut rng, &p, 8, 0.0);
        let idx: Vec<usize> = (0..8).collect();
        let hyper = PpoHyper {
            c1: 0.0,
            c2: 0.0,
            normalize_advantages: false,
            ..Default::default()
        };
        let (_, g1) = total_loss(&p, &s, &idx, &hyper, None).unwrap();
        let mut s2 = s.clone();
        s2.advantages.iter_mut().for_each(|a| *a *= 2.0);
        let (_, g2) = total_loss(&p, &s2, &idx, &hyper, None).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
