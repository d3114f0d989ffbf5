//! Optimizer directions against closed-form weighted sums
//! `EMA_k = sum_i (1 - beta) beta^(k - i) x_i` evaluated from scratch at every step.

use adamlab::optim::{sign, OptimizerState};
use adamlab::{direction, rng, InitMode, OptimizerConfig, Schedule};
use rand::Rng;
use rand_distr::StandardNormal;

fn weighted_sum(xs: &[f64], beta: f64) -> f64 {
    let k = xs.len();
    xs.iter()
        .enumerate()
        .map(|(i, x)| (1.0 - beta) * beta.powi((k - 1 - i) as i32) * x)
        .sum()
}

fn signal(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, "oracle", 0);
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

fn stream(config: &OptimizerConfig, g: &[f64]) -> Vec<f64> {
    let mut state = OptimizerState::new(config, 1).unwrap();
    g.iter()
        .map(|&x| direction(config, &mut state, &[x]).unwrap().direction[0])
        .collect()
}

#[test]
fn adam_matches_weighted_sums() {
    let g = signal(1, 300);
    for (b1, b2) in [(0.9, 0.999), (0.95, 0.95), (0.5, 0.9)] {
        for bc in [false, true] {
            let config = OptimizerConfig::adam(b1, b2).with_bias_correction(bc);
            let d = stream(&config, &g);
            for k in 1..=g.len() {
                let (mut m, mut v) = (
                    weighted_sum(&g[..k], b1),
                    weighted_sum(&g[..k].iter().map(|x| x * x).collect::<Vec<_>>(), b2),
                );
                if bc {
                    m /= 1.0 - b1.powi(k as i32);
                    v /= 1.0 - b2.powi(k as i32);
                }
                let want = m / (v.sqrt() + 1e-8);
                assert!(
                    (d[k - 1] - want).abs() <= 1e-10,
                    "b=({b1},{b2}) bc={bc} k={k}: {} vs {want}",
                    d[k - 1]
                );
            }
        }
    }
}

#[test]
fn equal_beta_adam_matches_weighted_sums() {
    let g = signal(2, 300);
    let beta = 0.9;
    let config = OptimizerConfig::adam_equal_beta(beta).raw();
    let d = stream(&config, &g);
    for k in 1..=g.len() {
        let m = weighted_sum(&g[..k], beta);
        let v = weighted_sum(&g[..k].iter().map(|x| x * x).collect::<Vec<_>>(), beta);
        assert!((d[k - 1] - m / v.sqrt()).abs() <= 1e-10);
    }
}

#[test]
fn rmsprop_matches_weighted_sum() {
    let g = signal(3, 200);
    let config = OptimizerConfig::rms_prop(0.99);
    let d = stream(&config, &g);
    for k in 1..=g.len() {
        let v = weighted_sum(&g[..k].iter().map(|x| x * x).collect::<Vec<_>>(), 0.99)
            / (1.0 - 0.99f64.powi(k as i32));
        assert!((d[k - 1] - g[k - 1] / (v.sqrt() + 1e-8)).abs() <= 1e-10);
    }
}

#[test]
fn momentum_methods_match_weighted_sums() {
    let g = signal(4, 200);
    let beta = 0.8;
    let sgd = stream(&OptimizerConfig::sgd(beta), &g);
    let signum = stream(&OptimizerConfig::signum(beta), &g);
    let ema_sign = stream(&OptimizerConfig::ema_sign(beta), &g);
    let signs: Vec<f64> = g.iter().map(|&x| sign(x)).collect();
    for k in 1..=g.len() {
        let m = weighted_sum(&g[..k], beta);
        assert!((sgd[k - 1] - m).abs() <= 1e-12);
        assert_eq!(signum[k - 1], sign(m));
        assert!((ema_sign[k - 1] - weighted_sum(&signs[..k], beta)).abs() <= 1e-12);
    }
}

#[test]
fn first_sample_init_matches_renormalized_sums() {
    let g = signal(5, 200);
    let beta = 0.9;
    let config = OptimizerConfig::sgd(beta).with_init_mode(InitMode::FirstSampleInit);
    let d = stream(&config, &g);
    for k in 1..=g.len() {
        // first sample carries weight beta^(k-1), later ones (1 - beta) beta^(k-1-i)
        let want = beta.powi(k as i32 - 1) * g[0] + weighted_sum(&g[1..k], beta);
        assert!((d[k - 1] - want).abs() <= 1e-12);
    }
}

#[test]
fn schedule_matches_closed_form() {
    let (peak, floor, total, wf) = (0.3, 0.01, 997u64, 0.13);
    let s = Schedule::new(peak, floor, total, wf).unwrap();
    let w = (wf * total as f64).round() as u64;
    for k in 0..=total {
        let want = if k < w {
            peak * k as f64 / w as f64
        } else {
            let p = (k - w) as f64 / (total - w) as f64;
            floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * p).cos())
        };
        assert!((s.lr_at(k).unwrap() - want).abs() <= 1e-15, "k={k}");
    }
}
