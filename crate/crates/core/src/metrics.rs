//! Per-pixel error maps and aggregate accuracy metrics for depth and optical
//! flow.
//!
//! Every aggregate is taken over the valid pixels of a mask only; invalid
//! pixels carry `0.0` in the error maps as a placeholder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, ValidityMask};

pub const DEFAULT_DEPTH_THRESHOLD: f64 = 1.25;

/// Aggregate metrics. Depth-only and flow-only entries are `None` for the
/// other task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe: Option<f64>,
    pub rmse: Option<f64>,
    pub absrel: Option<f64>,
    pub sqrel: Option<f64>,
    pub rmse_log: Option<f64>,
    pub log10: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
    pub n_valid: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthOptions {
    pub thr: f64,
    /// `(min, max)`: ground truth outside the range is masked out and
    /// predictions are clamped into it.
    pub clip: Option<(f64, f64)>,
}

impl Default for DepthOptions {
    fn default() -> Self {
        Self {
            thr: DEFAULT_DEPTH_THRESHOLD,
            clip: None,
        }
    }
}

impl DepthOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.thr > 1.0 && self.thr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "depth threshold must be > 1, got {}",
                self.thr
            )));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "depth clip range must satisfy 0 < min < max, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

fn check_pair(pred: &Field, gt: &Field, mask: &ValidityMask, channels: usize) -> Result<()> {
    gt.check_channels(channels, "ground truth channels")?;
    pred.check_same_shape(gt, "prediction vs ground truth")?;
    gt.check_mask(mask)
}

/// Per-pixel end point error `sqrt((u - û)^2 + (v - v̂)^2)`.
pub fn epe_map(pred_flow: &Field, gt_flow: &Field, mask: &ValidityMask) -> Result<Field> {
    check_pair(pred_flow, gt_flow, mask, 2)?;
    let data = (0..gt_flow.pixel_count())
        .map(|i| {
            if !mask.is_valid(i) {
                return 0.0;
            }
            let (p, g) = (pred_flow.pixel(i), gt_flow.pixel(i));
            (p[0] - g[0]).hypot(p[1] - g[1])
        })
        .collect();
    Field::scalar(gt_flow.height(), gt_flow.width(), data)
}

pub fn mean_epe(pred_flow: &Field, gt_flow: &Field, mask: &ValidityMask) -> Result<f64> {
    let map = epe_map(pred_flow, gt_flow, mask)?;
    mask.require_nonempty()?;
    let sum: f64 = mask.valid_indices().map(|i| map.data()[i]).sum();
    Ok(sum / mask.count_valid() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthErrorMaps {
    /// `(d̂ - d)^2`
    pub sq_err: Field,
    /// `|d̂ - d| / d`
    pub absrel_err: Field,
}

fn check_positive_gt(gt: &Field, mask: &ValidityMask) -> Result<()> {
    for i in mask.valid_indices() {
        let d = gt.data()[i];
        if d <= 0.0 {
            return Err(Error::NonPositiveDepth {
                which: "ground truth",
                pixel: i,
                value: d,
            });
        }
    }
    Ok(())
}

pub fn depth_error_maps(pred: &Field, gt: &Field, mask: &ValidityMask) -> Result<DepthErrorMaps> {
    check_pair(pred, gt, mask, 1)?;
    check_positive_gt(gt, mask)?;
    let n = gt.pixel_count();
    let mut sq = vec![0.0; n];
    let mut rel = vec![0.0; n];
    for i in mask.valid_indices() {
        let (p, d) = (pred.data()[i], gt.data()[i]);
        sq[i] = (p - d) * (p - d);
        rel[i] = (p - d).abs() / d;
    }
    Ok(DepthErrorMaps {
        sq_err: Field::scalar(gt.height(), gt.width(), sq)?,
        absrel_err: Field::scalar(gt.height(), gt.width(), rel)?,
    })
}

/// Applies an optional `(min, max)` depth range: the mask loses pixels whose
/// ground truth falls outside it and predictions are clamped into it.
pub fn apply_depth_clip(
    pred: &Field,
    gt: &Field,
    mask: &ValidityMask,
    clip: Option<(f64, f64)>,
) -> Result<(Field, ValidityMask)> {
    check_pair(pred, gt, mask, 1)?;
    let Some((lo, hi)) = clip else {
        return Ok((pred.clone(), mask.clone()));
    };
    let valid = (0..gt.pixel_count())
        .map(|i| mask.is_valid(i) && gt.data()[i] >= lo && gt.data()[i] <= hi)
        .collect();
    let clamped = pred.data().iter().map(|v| v.clamp(lo, hi)).collect();
    Ok((
        Field::scalar(pred.height(), pred.width(), clamped)?,
        ValidityMask::new(mask.height(), mask.width(), valid)?,
    ))
}

/// Running sums behind a [`MetricReport`]; accumulators from different
/// images merge exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    n: usize,
    depth_n: usize,
    flow_n: usize,
    epe_sum: f64,
    sq_sum: f64,
    absrel_sum: f64,
    sqrel_sum: f64,
    log_sq_sum: f64,
    log10_sum: f64,
    inliers: [usize; 3],
}

impl MetricAccumulator {
    pub fn add_depth(&mut self, pred: &Field, gt: &Field, mask: &ValidityMask, thr: f64) -> Result<()> {
        check_pair(pred, gt, mask, 1)?;
        check_positive_gt(gt, mask)?;
        if !(thr > 1.0) {
            return Err(Error::InvalidArgument(format!("threshold must be > 1, got {thr}")));
        }
        let bounds = [thr, thr * thr, thr * thr * thr];
        let mut local = MetricAccumulator::default();
        for i in mask.valid_indices() {
            let (p, d) = (pred.data()[i], gt.data()[i]);
            if p <= 0.0 {
                return Err(Error::NonPositiveDepth {
                    which: "prediction",
                    pixel: i,
                    value: p,
                });
            }
            let diff = p - d;
            local.sq_sum += diff * diff;
            local.absrel_sum += diff.abs() / d;
            local.sqrel_sum += diff * diff / d;
            let log_diff = p.ln() - d.ln();
            local.log_sq_sum += log_diff * log_diff;
            local.log10_sum += (p.log10() - d.log10()).abs();
            let delta = (p / d).max(d / p);
            for (count, bound) in local.inliers.iter_mut().zip(bounds) {
                if delta < bound {
                    *count += 1;
                }
            }
            local.n += 1;
            local.depth_n += 1;
        }
        self.merge(&local);
        Ok(())
    }

    pub fn add_flow(&mut self, pred: &Field, gt: &Field, mask: &ValidityMask) -> Result<()> {
        let map = epe_map(pred, gt, mask)?;
        let mut local = MetricAccumulator::default();
        for i in mask.valid_indices() {
            local.epe_sum += map.data()[i];
            local.n += 1;
            local.flow_n += 1;
        }
        self.merge(&local);
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.n += other.n;
        self.depth_n += other.depth_n;
        self.flow_n += other.flow_n;
        self.epe_sum += other.epe_sum;
        self.sq_sum += other.sq_sum;
        self.absrel_sum += other.absrel_sum;
        self.sqrel_sum += other.sqrel_sum;
        self.log_sq_sum += other.log_sq_sum;
        self.log10_sum += other.log10_sum;
        for (a, b) in self.inliers.iter_mut().zip(other.inliers) {
            *a += b;
        }
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::EmptyMask);
        }
        let mut report = MetricReport {
            n_valid: self.n,
            ..Default::default()
        };
        if self.flow_n > 0 {
            report.epe = Some(self.epe_sum / self.flow_n as f64);
        }
        if self.depth_n > 0 {
            let n = self.depth_n as f64;
            report.rmse = Some((self.sq_sum / n).sqrt());
            report.absrel = Some(self.absrel_sum / n);
            report.sqrel = Some(self.sqrel_sum / n);
            report.rmse_log = Some((self.log_sq_sum / n).sqrt());
            report.log10 = Some(self.log10_sum / n);
            report.d1 = Some(self.inliers[0] as f64 / n);
            report.d2 = Some(self.inliers[1] as f64 / n);
            report.d3 = Some(self.inliers[2] as f64 / n);
        }
        Ok(report)
    }
}

/// Full depth metric suite over the valid pixels.
pub fn depth_report(
    pred: &Field,
    gt: &Field,
    mask: &ValidityMask,
    options: &DepthOptions,
) -> Result<MetricReport> {
    options.validate()?;
    let (pred, mask) = apply_depth_clip(pred, gt, mask, options.clip)?;
    mask.require_nonempty()?;
    let mut acc = MetricAccumulator::default();
    acc.add_depth(&pred, gt, &mask, options.thr)?;
    acc.finish()
}

pub fn flow_report(pred_flow: &Field, gt_flow: &Field, mask: &ValidityMask) -> Result<MetricReport> {
    mask.require_nonempty()?;
    let mut acc = MetricAccumulator::default();
    acc.add_flow(pred_flow, gt_flow, mask)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(vals: &[f64]) -> Field {
        Field::scalar(1, vals.len(), vals.to_vec()).unwrap()
    }

    fn all(n: usize) -> ValidityMask {
        ValidityMask::all_valid(1, n)
    }

    #[test]
    fn epe_identity_and_hand_cases() {
        let gt = Field::new(1, 2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let zero = epe_map(&gt, &gt, &all(2)).unwrap();
        assert_eq!(zero.data(), &[0.0, 0.0]);
        assert_eq!(mean_epe(&gt, &gt, &all(2)).unwrap(), 0.0);

        let pred = Field::new(1, 2, 2, vec![3.0, 4.0, 1.0, 1.0]).unwrap();
        let map = epe_map(&pred, &gt, &all(2)).unwrap();
        assert_eq!(map.data(), &[5.0, 0.0]);
        assert_eq!(mean_epe(&pred, &gt, &all(2)).unwrap(), 2.5);
    }

    #[test]
    fn epe_invalid_pixels_zeroed_and_excluded() {
        let gt = Field::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let pred = Field::new(1, 2, 2, vec![3.0, 4.0, 6.0, 8.0]).unwrap();
        let mask = ValidityMask::new(1, 2, vec![true, false]).unwrap();
        assert_eq!(epe_map(&pred, &gt, &mask).unwrap().data(), &[5.0, 0.0]);
        assert_eq!(mean_epe(&pred, &gt, &mask).unwrap(), 5.0);
        let none = ValidityMask::new(1, 2, vec![false, false]).unwrap();
        assert!(matches!(mean_epe(&pred, &gt, &none), Err(Error::EmptyMask)));
    }

    #[test]
    fn epe_dimension_mismatch() {
        let a = Field::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let b = Field::new(2, 1, 2, vec![0.0; 4]).unwrap();
        assert!(epe_map(&a, &b, &all(2)).is_err());
        let depth1 = depth(&[1.0, 1.0]);
        assert!(epe_map(&depth1, &depth1, &all(2)).is_err());
    }

    #[test]
    fn depth_maps_hand_cases() {
        let maps = depth_error_maps(&depth(&[3.0, 2.0]), &depth(&[2.0, 4.0]), &all(2)).unwrap();
        assert_eq!(maps.sq_err.data(), &[1.0, 4.0]);
        assert_eq!(maps.absrel_err.data(), &[0.5, 0.5]);
        let same = depth_error_maps(&depth(&[3.0]), &depth(&[3.0]), &all(1)).unwrap();
        assert_eq!(same.sq_err.data(), &[0.0]);
        assert_eq!(same.absrel_err.data(), &[0.0]);
    }

    #[test]
    fn depth_maps_reject_nonpositive_gt() {
        let err = depth_error_maps(&depth(&[1.0, 1.0]), &depth(&[1.0, 0.0]), &all(2)).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDepth { pixel: 1, .. }));
        // Masked-out nonpositive ground truth is fine.
        let mask = ValidityMask::new(1, 2, vec![true, false]).unwrap();
        assert!(depth_error_maps(&depth(&[1.0, 1.0]), &depth(&[1.0, 0.0]), &mask).is_ok());
    }

    #[test]
    fn report_identity() {
        let gt = depth(&[1.0, 2.0, 5.0]);
        let r = depth_report(&gt, &gt, &all(3), &DepthOptions::default()).unwrap();
        for v in [r.rmse, r.absrel, r.sqrel, r.rmse_log, r.log10] {
            assert_eq!(v, Some(0.0));
        }
        assert_eq!((r.d1, r.d2, r.d3), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(r.n_valid, 3);
        assert_eq!(r.epe, None);
    }

    #[test]
    fn report_threshold_hand_cases() {
        let opts = DepthOptions::default();
        let r = depth_report(&depth(&[1.2]), &depth(&[1.0]), &all(1), &opts).unwrap();
        assert_eq!(r.d1, Some(1.0));
        assert!((r.absrel.unwrap() - 0.2).abs() < 1e-15);
        assert!((r.rmse.unwrap() - 0.2).abs() < 1e-15);

        let r = depth_report(&depth(&[1.3]), &depth(&[1.0]), &all(1), &opts).unwrap();
        assert_eq!(r.d1, Some(0.0));
        assert_eq!(r.d2, Some(1.0));
    }

    #[test]
    fn report_boundary_is_outlier() {
        // delta exactly 1.25 fails the strict inequality
        let r = depth_report(&depth(&[1.25]), &depth(&[1.0]), &all(1), &DepthOptions::default())
            .unwrap();
        assert_eq!(r.d1, Some(0.0));
        assert_eq!(r.d2, Some(1.0));
    }

    #[test]
    fn report_rejects_bad_inputs() {
        let opts = DepthOptions::default();
        assert!(matches!(
            depth_report(&depth(&[0.0]), &depth(&[1.0]), &all(1), &opts),
            Err(Error::NonPositiveDepth { which: "prediction", .. })
        ));
        let none = ValidityMask::new(1, 1, vec![false]).unwrap();
        assert!(matches!(
            depth_report(&depth(&[1.0]), &depth(&[1.0]), &none, &opts),
            Err(Error::EmptyMask)
        ));
        let bad_thr = DepthOptions { thr: 1.0, clip: None };
        assert!(depth_report(&depth(&[1.0]), &depth(&[1.0]), &all(1), &bad_thr).is_err());
    }

    #[test]
    fn clip_masks_gt_and_clamps_pred() {
        let opts = DepthOptions {
            thr: 1.25,
            clip: Some((1.0, 10.0)),
        };
        // second pixel's gt is out of range and dropped; first pred clamps to 10
        let r = depth_report(&depth(&[20.0, 5.0]), &depth(&[10.0, 50.0]), &all(2), &opts).unwrap();
        assert_eq!(r.n_valid, 1);
        assert_eq!(r.rmse, Some(0.0));
    }

    #[test]
    fn log_metrics_hand_case() {
        let r = depth_report(&depth(&[10.0]), &depth(&[1.0]), &all(1), &DepthOptions::default())
            .unwrap();
        assert!((r.log10.unwrap() - 1.0).abs() < 1e-15);
        assert!((r.rmse_log.unwrap() - 10f64.ln()).abs() < 1e-15);
        assert!((r.sqrel.unwrap() - 81.0).abs() < 1e-12);
    }

    #[test]
    fn accumulators_merge_like_pooled_evaluation() {
        let (p1, g1) = (depth(&[1.0, 2.0]), depth(&[1.5, 2.0]));
        let (p2, g2) = (depth(&[4.0]), depth(&[3.0]));
        let mut a = MetricAccumulator::default();
        a.add_depth(&p1, &g1, &all(2), 1.25).unwrap();
        let mut b = MetricAccumulator::default();
        b.add_depth(&p2, &g2, &all(1), 1.25).unwrap();
        a.merge(&b);
        let pooled = depth_report(
            &depth(&[1.0, 2.0, 4.0]),
            &depth(&[1.5, 2.0, 3.0]),
            &all(3),
            &DepthOptions::default(),
        )
        .unwrap();
        let merged = a.finish().unwrap();
        assert_eq!(merged.n_valid, 3);
        assert!((merged.rmse.unwrap() - pooled.rmse.unwrap()).abs() < 1e-15);
        assert_eq!(merged.d1, pooled.d1);
    }

    proptest! {
        #[test]
        fn inlier_ratios_nested(vals in prop::collection::vec((0.01f64..100.0, 0.01f64..100.0), 1..40)) {
            let (p, g): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let n = p.len();
            let r = depth_report(&depth(&p), &depth(&g), &all(n), &DepthOptions::default()).unwrap();
            let (d1, d2, d3) = (r.d1.unwrap(), r.d2.unwrap(), r.d3.unwrap());
            prop_assert!(d1 <= d2 && d2 <= d3);
            prop_assert!((0.0..=1.0).contains(&d1) && (0.0..=1.0).contains(&d3));
        }

        #[test]
        fn scaling_invariance(
            vals in prop::collection::vec((0.1f64..50.0, 0.1f64..50.0), 1..30),
            c in 0.1f64..10.0
        ) {
            let (p, g): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let n = p.len();
            let opts = DepthOptions::default();
            let base = depth_report(&depth(&p), &depth(&g), &all(n), &opts).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let gs: Vec<f64> = g.iter().map(|v| v * c).collect();
            let scaled = depth_report(&depth(&ps), &depth(&gs), &all(n), &opts).unwrap();
            let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * (1.0 + a.abs());
            prop_assert!(close(base.absrel.unwrap(), scaled.absrel.unwrap(), 1e-12));
            prop_assert!(close(base.rmse_log.unwrap(), scaled.rmse_log.unwrap(), 1e-9));
            prop_assert!(close(base.log10.unwrap(), scaled.log10.unwrap(), 1e-9));
            prop_assert!(close(base.rmse.unwrap() * c, scaled.rmse.unwrap(), 1e-12));
            prop_assert!(close(base.sqrel.unwrap() * c, scaled.sqrel.unwrap(), 1e-12));
            prop_assert_eq!(base.d1, scaled.d1);
        }

        #[test]
        fn epe_rotation_invariance(
            vecs in prop::collection::vec((-10f64..10.0, -10f64..10.0, -10f64..10.0, -10f64..10.0), 1..20),
            theta in 0f64..std::f64::consts::TAU
        ) {
            let n = vecs.len();
            let (s, c) = theta.sin_cos();
            let rot = |u: f64, v: f64| [c * u - s * v, s * u + c * v];
            let mut p = Vec::new();
            let mut g = Vec::new();
            let mut pr = Vec::new();
            let mut gr = Vec::new();
            for (a, b, u, v) in vecs {
                p.extend([a, b]);
                g.extend([u, v]);
                pr.extend(rot(a, b));
                gr.extend(rot(u, v));
            }
            let f = |d: Vec<f64>| Field::new(1, n, 2, d).unwrap();
            let m = all(n);
            let e1 = mean_epe(&f(p), &f(g), &m).unwrap();
            let e2 = mean_epe(&f(pr), &f(gr), &m).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-9);
        }

        #[test]
        fn zero_error_pixels_never_increase_aggregates(
            vals in prop::collection::vec((0.1f64..50.0, 0.1f64..50.0), 1..20),
            extra in prop::collection::vec(0.1f64..50.0, 1..10)
        ) {
            let (mut p, mut g): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let opts = DepthOptions::default();
            let base = depth_report(&depth(&p), &depth(&g), &all(p.len()), &opts).unwrap();
            p.extend(&extra);
            g.extend(&extra);
            let more = depth_report(&depth(&p), &depth(&g), &all(p.len()), &opts).unwrap();
            prop_assert!(more.rmse.unwrap() <= base.rmse.unwrap() + 1e-12);
            prop_assert!(more.absrel.unwrap() <= base.absrel.unwrap() + 1e-12);
            prop_assert!(more.sqrel.unwrap() <= base.sqrel.unwrap() + 1e-12);
            prop_assert!(more.rmse_log.unwrap() <= base.rmse_log.unwrap() + 1e-12);
            prop_assert!(more.log10.unwrap() <= base.log10.unwrap() + 1e-12);
        }
    }
}
