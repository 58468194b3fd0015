/// Generalized advantage estimates for one environment's stretch of
/// steps. `dones[t]` marks that the episode ended at step `t`, so nothing
/// after it is bootstrapped; `bootstrap` is the value of the observation
/// following the last step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must have equal length");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}

/// Discounted return-to-go, cut at episode ends, with `bootstrap` after
/// the last step.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            g = 0.0;
        }
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_recursion() {
        let a = gae(&[1.0, 1.0], &[0.0, 0.0], &[false, true], 0.0, 0.5, 0.95);
        assert_eq!(a, vec![1.475, 1.0]);
    }

    #[test]
    fn monte_carlo_with_unit_lambda() {
        let a = gae(&[0.0, 0.0, 1.0], &[0.0; 3], &[false, false, true], 0.0, 1.0, 1.0);
        assert_eq!(a, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_rewards_and_values_give_zero() {
        assert!(gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bootstrap_only_reaches_unfinished_tail() {
        let a = gae(&[0.0, 0.0], &[0.0, 0.0], &[true, false], 2.0, 0.5, 1.0);
        assert_eq!(a, vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn unit_lambda_matches_returns_minus_values(
            steps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, any::<bool>()), 1..40),
            bootstrap in -1.0f64..1.0,
            gamma in 0.5f64..1.0,
        ) {
            let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
            let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
            let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
            let a = gae(&r, &v, &d, bootstrap, gamma, 1.0);
            let g = discounted_returns(&r, &d, bootstrap, gamma);
            for t in 0..r.len() {
                prop_assert!((a[t] - (g[t] - v[t])).abs() <= 1e-10);
            }
        }
    }
}
