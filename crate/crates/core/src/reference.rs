//! Slow, direct implementations used to cross-check the fast paths
//! (`uqbench selftest`). Quadratic or worse; keep inputs small.

use crate::sparsify::{ErrorStatistic, SparsificationConfig};

fn statistic(values: &[f64], stat: ErrorStatistic) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    match stat {
        ErrorStatistic::Mean => mean,
        ErrorStatistic::RootMean => mean.sqrt(),
    }
}

/// Removes pixels one at a time, always the remaining one with the highest
/// key (lowest position on ties), recording the statistic of what is left
/// at each sparsification step.
pub fn curve_by_removal(errors: &[f64], keys: &[f64], cfg: &SparsificationConfig, stat: ErrorStatistic) -> Vec<f64> {
    let n = errors.len();
    let mut present = vec![true; n];
    let mut removed = 0;
    let mut curve = Vec::new();
    for j in 0..cfg.steps() {
        let target = ((j as f64 * cfg.fraction_step * n as f64).round() as usize).min(n - 1);
        while removed < target {
            let mut best: Option<usize> = None;
            for i in 0..n {
                if present[i] && best.is_none_or(|b| keys[i] > keys[b]) {
                    best = Some(i);
                }
            }
            present[best.expect("pixels remain")] = false;
            removed += 1;
        }
        let left: Vec<f64> = (0..n).filter(|&i| present[i]).map(|i| errors[i]).collect();
        curve.push(statistic(&left, stat));
    }
    curve
}

/// AUSE from [`curve_by_removal`] with a plain trapezoid sum.
pub fn ause_by_removal(errors: &[f64], scores: &[f64], cfg: &SparsificationConfig, stat: ErrorStatistic) -> f64 {
    let mut predicted = curve_by_removal(errors, scores, cfg, stat);
    let mut oracle = curve_by_removal(errors, errors, cfg, stat);
    let full = predicted[0];
    if cfg.normalize {
        if full == 0.0 {
            return 0.0;
        }
        for v in predicted.iter_mut().chain(oracle.iter_mut()) {
            *v /= full;
        }
    }
    let mut area = 0.0;
    for j in 1..predicted.len() {
        let left = predicted[j - 1] - oracle[j - 1];
        let right = predicted[j] - oracle[j];
        area += (left + right) / 2.0 * cfg.fraction_step;
    }
    area
}

/// Probability that an unreliable pixel outscores a reliable one, ties
/// counting one half, by enumerating every pair. `None` when either class
/// is empty.
pub fn auroc_pairwise(scores: &[f64], reliable: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if reliable[i] {
            continue;
        }
        for (k, &sk) in scores.iter().enumerate() {
            if !reliable[k] {
                continue;
            }
            pairs += 1;
            if si > sk {
                wins += 1.0;
            } else if si == sk {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Depth metrics straight from their definitions, over paired values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectDepthMetrics {
    pub rmse: f64,
    pub absrel: f64,
    pub sqrel: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

pub fn depth_metrics_direct(pred: &[f64], gt: &[f64], thr: f64) -> DirectDepthMetrics {
    let n = gt.len() as f64;
    let mut m = DirectDepthMetrics {
        rmse: 0.0,
        absrel: 0.0,
        sqrel: 0.0,
        rmse_log: 0.0,
        log10: 0.0,
        d1: 0.0,
        d2: 0.0,
        d3: 0.0,
    };
    for (&p, &d) in pred.iter().zip(gt) {
        m.rmse += (p - d).powi(2) / n;
        m.absrel += (p - d).abs() / d / n;
        m.sqrel += (p - d).powi(2) / d / n;
        m.rmse_log += (p.ln() - d.ln()).powi(2) / n;
        m.log10 += (p.log10() - d.log10()).abs() / n;
        let ratio = if p > d { p / d } else { d / p };
        m.d1 += f64::from(u8::from(ratio < thr)) / n;
        m.d2 += f64::from(u8::from(ratio < thr * thr)) / n;
        m.d3 += f64::from(u8::from(ratio < thr * thr * thr)) / n;
    }
    m.rmse = m.rmse.sqrt();
    m.rmse_log = m.rmse_log.sqrt();
    m
}
