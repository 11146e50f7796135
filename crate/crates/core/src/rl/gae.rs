use super::RlError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimates {
    pub advantages: Vec<f64>,
    /// Value targets: advantage plus the value estimate.
    pub targets: Vec<f64>,
}

/// Backward recursion over a trajectory of length T.
///
/// `values` holds V(s_0)..V(s_T); the last entry bootstraps a truncated
/// rollout. A `done` step cuts both the bootstrap and the recursion.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimates, RlError> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(RlError::LengthMismatch(format!(
            "{t_len} rewards need {} values and {t_len} done flags, got {} and {}",
            t_len + 1,
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; t_len];
    let mut next_adv = 0.0;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
    }
    if advantages.iter().any(|a| !a.is_finite()) {
        return Err(RlError::NonFinite("advantages"));
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimates { advantages, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_unrolled_two_steps() {
        let est = compute_gae(&[1.0, 2.0], &[0.5, 1.0, 0.0], &[false, false], 0.9, 0.5).unwrap();
        assert!((est.advantages[1] - 1.0).abs() < 1e-12);
        assert!((est.advantages[0] - 1.85).abs() < 1e-12);
        assert!((est.targets[0] - 2.35).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_gives_rewards() {
        let r = [0.3, -1.0, 2.5];
        let est = compute_gae(&r, &[0.0; 4], &[false; 3], 0.0, 0.7).unwrap();
        assert_eq!(est.advantages, r.to_vec());
    }

    #[test]
    fn lambda_one_is_discounted_return() {
        let r = [1.0, 2.0, 3.0];
        let g: f64 = 0.9;
        let est = compute_gae(&r, &[0.0; 4], &[false; 3], g, 1.0).unwrap();
        let expected = [1.0 + g * 2.0 + g * g * 3.0, 2.0 + g * 3.0, 3.0];
        for (a, e) in est.advantages.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn done_cuts_bootstrap() {
        let est = compute_gae(&[1.0, 1.0], &[0.0, 5.0, 100.0], &[false, true], 1.0, 1.0).unwrap();
        assert_eq!(est.advantages[1], 1.0 - 5.0);
    }

    #[test]
    fn length_checks() {
        assert!(compute_gae(&[1.0], &[0.0], &[false], 0.9, 0.9).is_err());
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[], 0.9, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn matches_closed_form(
            r in prop::collection::vec(-10.0f64..10.0, 1..=16),
            v_seed in prop::collection::vec(-10.0f64..10.0, 17),
            gamma in 0.0f64..=1.0,
            lambda in 0.0f64..=1.0,
        ) {
            let t_len = r.len();
            let v = &v_seed[..=t_len];
            let est = compute_gae(&r, v, &vec![false; t_len], gamma, lambda).unwrap();
            for t in 0..t_len {
                let mut sum = 0.0;
                for k in 0..t_len - t {
                    let delta = r[t + k] + gamma * v[t + k + 1] - v[t + k];
                    sum += (gamma * lambda).powi(k as i32) * delta;
                }
                prop_assert!((est.advantages[t] - sum).abs() < 1e-9);
                prop_assert!((est.targets[t] - est.advantages[t] - v[t]).abs() < 1e-12);
            }
        }
    }
}
