//! Sparsification curves, AUSE and AUROC for uncertainty maps.
//!
//! A sparsification curve tracks the error statistic of the pixels that remain
//! after repeatedly discarding the fraction `m` of pixels with the highest
//! uncertainty. The oracle curve discards by true error instead; AUSE is the
//! area between the two.
//!
//! Rankings are by score descending; equal scores fall back to ascending pixel
//! index so every curve is fully deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, PixelSeries, ValidityMask};
use crate::metrics::epe_map;

pub const DEFAULT_FRACTION_STEP: f64 = 0.05;
pub const DEFAULT_FLOW_RELIABILITY_K: f64 = 2.0;

// Slack for computing floor(1/m) when 1/m is integral up to rounding.
const STEP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsificationConfig {
    /// Fraction of pixels removed per step, in (0, 0.5].
    pub fraction_step: f64,
    /// Divide both curves by the full-set error before integrating.
    pub normalize: bool,
}

impl Default for SparsificationConfig {
    fn default() -> Self {
        Self {
            fraction_step: DEFAULT_FRACTION_STEP,
            normalize: true,
        }
    }
}

impl SparsificationConfig {
    pub fn new(fraction_step: f64, normalize: bool) -> Result<Self> {
        let cfg = Self {
            fraction_step,
            normalize,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.fraction_step;
        if !(m > 0.0 && m <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "fraction step must be in (0, 0.5], got {m}"
            )));
        }
        Ok(())
    }

    /// Number of curve points, `floor(1/m)`.
    pub fn steps(&self) -> usize {
        (1.0 / self.fraction_step + STEP_EPS).floor() as usize
    }

    /// Smallest pixel count the curve is defined for, `ceil(1/m)`.
    pub fn min_pixels(&self) -> usize {
        (1.0 / self.fraction_step - STEP_EPS).ceil() as usize
    }

    pub fn fractions(&self) -> Vec<f64> {
        (0..self.steps())
            .map(|j| j as f64 * self.fraction_step)
            .collect()
    }

    /// Pixels removed at step `j` out of `n`: `round(j·m·n)`, keeping at
    /// least one.
    pub fn removed_at(&self, j: usize, n: usize) -> usize {
        let k = (j as f64 * self.fraction_step * n as f64).round() as usize;
        k.min(n - 1)
    }
}

/// How the errors of the remaining pixels are summarised at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorStatistic {
    Mean,
    /// `sqrt(mean)`, for squared errors (AUSE-RMSE).
    RootMean,
}

impl ErrorStatistic {
    fn finish(self, sum: f64, count: usize) -> f64 {
        let mean = sum / count as f64;
        match self {
            ErrorStatistic::Mean => mean,
            ErrorStatistic::RootMean => mean.max(0.0).sqrt(),
        }
    }
}

/// The per-pixel error a sparsification run is based on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuseVariant {
    /// End point error, mean statistic.
    Epe,
    /// Squared depth error, root-mean statistic.
    Rmse,
    /// Absolute relative depth error, mean statistic.
    Absrel,
}

impl AuseVariant {
    pub fn statistic(self) -> ErrorStatistic {
        match self {
            AuseVariant::Rmse => ErrorStatistic::RootMean,
            AuseVariant::Epe | AuseVariant::Absrel => ErrorStatistic::Mean,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AuseVariant::Epe => "AUSE-EPE",
            AuseVariant::Rmse => "AUSE-RMSE",
            AuseVariant::Absrel => "AUSE-Absrel",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            AuseVariant::Epe => "epe",
            AuseVariant::Rmse => "rmse",
            AuseVariant::Absrel => "absrel",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsificationResult {
    pub fractions: Vec<f64>,
    pub predicted_curve: Vec<f64>,
    pub oracle_curve: Vec<f64>,
    pub ause: f64,
    /// Whether the curves were divided by the full-set error.
    pub normalized: bool,
}

fn check_inputs(errors: &PixelSeries, scores: &PixelSeries, cfg: &SparsificationConfig) -> Result<()> {
    cfg.validate()?;
    if !errors.is_aligned_with(scores) {
        return Err(Error::Misaligned(format!(
            "errors cover {} pixels, scores cover {} pixels or different indices",
            errors.len(),
            scores.len()
        )));
    }
    let needed = cfg.min_pixels();
    if errors.len() < needed {
        return Err(Error::TooFewPixels {
            needed,
            got: errors.len(),
        });
    }
    Ok(())
}

/// Positions of the series ordered by score descending, ties by position.
fn removal_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn curve_from_order(
    errors: &[f64],
    order: &[usize],
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Vec<f64> {
    let n = errors.len();
    // suffix[k] = sum of errors still present after removing order[..k]
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + errors[order[k]];
    }
    (0..cfg.steps())
        .map(|j| {
            let k = cfg.removed_at(j, n);
            stat.finish(suffix[k], n - k)
        })
        .collect()
}

pub fn sparsification_curve_with(
    errors: &PixelSeries,
    scores: &PixelSeries,
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Result<Vec<f64>> {
    check_inputs(errors, scores, cfg)?;
    let order = removal_order(scores.values());
    Ok(curve_from_order(errors.values(), &order, cfg, stat))
}

/// Mean remaining error after removing the top `j·m` fraction by score.
pub fn sparsification_curve(
    errors: &PixelSeries,
    scores: &PixelSeries,
    cfg: &SparsificationConfig,
) -> Result<Vec<f64>> {
    sparsification_curve_with(errors, scores, cfg, ErrorStatistic::Mean)
}

pub fn oracle_curve_with(
    errors: &PixelSeries,
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Result<Vec<f64>> {
    sparsification_curve_with(errors, errors, cfg, stat)
}

pub fn oracle_curve(errors: &PixelSeries, cfg: &SparsificationConfig) -> Result<Vec<f64>> {
    oracle_curve_with(errors, cfg, ErrorStatistic::Mean)
}

fn trapezoid(values: &[f64], dx: f64) -> f64 {
    values.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
}

/// Both curves plus the area between them.
pub fn sparsify(
    errors: &PixelSeries,
    scores: &PixelSeries,
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Result<SparsificationResult> {
    check_inputs(errors, scores, cfg)?;
    let mut predicted = curve_from_order(errors.values(), &removal_order(scores.values()), cfg, stat);
    let mut oracle = curve_from_order(errors.values(), &removal_order(errors.values()), cfg, stat);
    let full = predicted[0];
    let ause = if cfg.normalize && full == 0.0 {
        0.0
    } else {
        if cfg.normalize {
            for v in predicted.iter_mut().chain(oracle.iter_mut()) {
                *v /= full;
            }
        }
        let diff: Vec<f64> = predicted.iter().zip(&oracle).map(|(p, o)| p - o).collect();
        trapezoid(&diff, cfg.fraction_step)
    };
    Ok(SparsificationResult {
        fractions: cfg.fractions(),
        predicted_curve: predicted,
        oracle_curve: oracle,
        ause,
        normalized: cfg.normalize,
    })
}

pub fn ause_with(
    errors: &PixelSeries,
    scores: &PixelSeries,
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Result<f64> {
    Ok(sparsify(errors, scores, cfg, stat)?.ause)
}

/// AUSE with the mean statistic.
pub fn ause(errors: &PixelSeries, scores: &PixelSeries, cfg: &SparsificationConfig) -> Result<f64> {
    ause_with(errors, scores, cfg, ErrorStatistic::Mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageWiseAuse {
    pub mean: f64,
    /// One entry per input image; `None` for images without valid pixels.
    pub per_image: Vec<Option<f64>>,
    pub images_used: usize,
    pub images_skipped_empty: usize,
}

/// Mean of per-image AUSE values. Images with no valid pixels are skipped.
pub fn ause_image_wise(
    per_image: &[(PixelSeries, PixelSeries)],
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Result<ImageWiseAuse> {
    cfg.validate()?;
    let values: Vec<Option<f64>> = per_image
        .par_iter()
        .map(|(errors, scores)| {
            if errors.is_empty() && scores.is_empty() {
                Ok(None)
            } else {
                ause_with(errors, scores, cfg, stat).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = values.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(ImageWiseAuse {
        mean: used.iter().sum::<f64>() / used.len() as f64,
        images_used: used.len(),
        images_skipped_empty: values.len() - used.len(),
        per_image: values,
    })
}

/// Concatenates every image's series (image order, then row-major).
pub fn pool_series(series: &[&PixelSeries]) -> PixelSeries {
    let values: Vec<f64> = series.iter().flat_map(|s| s.values().iter().copied()).collect();
    PixelSeries::from_values(values).expect("pooled values come from valid series")
}

/// AUSE over all pixels of all images pooled together.
pub fn ause_dataset_wise(
    per_image: &[(PixelSeries, PixelSeries)],
    cfg: &SparsificationConfig,
    stat: ErrorStatistic,
) -> Result<f64> {
    for (i, (e, s)) in per_image.iter().enumerate() {
        if !e.is_aligned_with(s) {
            return Err(Error::Misaligned(format!("image {i}")));
        }
    }
    let errors = pool_series(&per_image.iter().map(|(e, _)| e).collect::<Vec<_>>());
    let scores = pool_series(&per_image.iter().map(|(_, s)| s).collect::<Vec<_>>());
    ause_with(&errors, &scores, cfg, stat)
}

/// Reliable/unreliable flag per valid pixel, in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReliabilityLabels {
    /// `true` = reliable.
    pub labels: Vec<bool>,
}

impl ReliabilityLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count_unreliable(&self) -> usize {
        self.labels.iter().filter(|&&r| !r).count()
    }

    pub fn concat(parts: &[ReliabilityLabels]) -> Self {
        Self {
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
        }
    }
}

/// A pixel is reliable iff `max(d̂/d, d/d̂) < thr`.
pub fn reliability_labels_depth(
    pred: &Field,
    gt: &Field,
    mask: &ValidityMask,
    thr: f64,
) -> Result<ReliabilityLabels> {
    gt.check_channels(1, "ground truth channels")?;
    pred.check_same_shape(gt, "prediction vs ground truth")?;
    gt.check_mask(mask)?;
    let labels = mask
        .valid_indices()
        .map(|i| {
            let (p, d) = (pred.data()[i], gt.data()[i]);
            if d <= 0.0 {
                return Err(Error::NonPositiveDepth {
                    which: "ground truth",
                    pixel: i,
                    value: d,
                });
            }
            if p <= 0.0 {
                return Err(Error::NonPositiveDepth {
                    which: "prediction",
                    pixel: i,
                    value: p,
                });
            }
            Ok((p / d).max(d / p) < thr)
        })
        .collect::<Result<_>>()?;
    Ok(ReliabilityLabels { labels })
}

/// A pixel is reliable iff its end point error is strictly below `k`.
pub fn reliability_labels_flow(
    pred_flow: &Field,
    gt_flow: &Field,
    mask: &ValidityMask,
    k: f64,
) -> Result<ReliabilityLabels> {
    let map = epe_map(pred_flow, gt_flow, mask)?;
    Ok(ReliabilityLabels {
        labels: mask.valid_indices().map(|i| map.data()[i] < k).collect(),
    })
}

/// Rescales values to [0, 1]; a constant input maps to all zeros.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// Area under the ROC of `scores` as a detector of unreliable pixels.
///
/// Computed as the Mann-Whitney statistic with average ranks, so tied
/// (unreliable, reliable) pairs count one half. The area depends on the score
/// ranking only; min-max scaling leaves it unchanged and is not applied here.
pub fn auroc(scores: &PixelSeries, labels: &ReliabilityLabels) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "scores vs labels",
            expected: labels.len().to_string(),
            actual: scores.len().to_string(),
        });
    }
    let n_pos = labels.count_unreliable();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::DegenerateLabels("reliable"));
    }
    if n_neg == 0 {
        return Err(Error::DegenerateLabels("unreliable"));
    }
    let s = scores.values();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    // Twice the rank sum of the positive class, kept integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && s[order[j]] == s[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average (i+1+j)/2
        let twice_avg = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&p| !labels.labels[p]).count() as u128;
        twice_rank_sum += twice_avg * positives;
        i = j;
    }
    let n_pos128 = n_pos as u128;
    let twice_u = twice_rank_sum - n_pos128 * (n_pos128 + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}
