//! Dense float maps, validity masks and the masked pixel series every metric
//! consumes.
//!
//! Pixels are addressed in row-major order (`index = y * width + x`) and that
//! order is the canonical tie-breaking order for every ranking in the crate.

use crate::error::{Error, Result};

/// H×W×C grid of finite values stored row-major as `(y, x, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "field dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "field data length",
                expected: expected.to_string(),
                actual: data.len().to_string(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let pixel = pos / channels;
            return Err(Error::NonFinite {
                x: pixel % width,
                y: pixel / width,
                c: pos % channels,
                value: data[pos],
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds a single-channel field from per-pixel values in row-major order.
    pub fn scalar(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Channel values of the pixel at row-major `index`.
    pub fn pixel(&self, index: usize) -> &[f64] {
        let start = index * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub(crate) fn check_same_shape(&self, other: &Field, what: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected: self.shape_string(),
                actual: other.shape_string(),
            })
        }
    }

    pub(crate) fn check_channels(&self, channels: usize, what: &'static str) -> Result<()> {
        if self.channels == channels {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected: format!("{channels} channel(s)"),
                actual: format!("{} channel(s)", self.channels),
            })
        }
    }

    pub(crate) fn check_mask(&self, mask: &ValidityMask) -> Result<()> {
        if self.height == mask.height && self.width == mask.width {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: "mask dimensions",
                expected: format!("{}x{}", self.height, self.width),
                actual: format!("{}x{}", mask.height, mask.width),
            })
        }
    }
}

/// Per-pixel validity flags; `count_valid` is cached at construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
    count_valid: usize,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if valid.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "mask length",
                expected: (height * width).to_string(),
                actual: valid.len().to_string(),
            });
        }
        let count_valid = valid.iter().filter(|&&v| v).count();
        Ok(Self {
            height,
            width,
            valid,
            count_valid,
        })
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            valid: vec![true; height * width],
            count_valid: height * width,
        }
    }

    /// Mask covering every pixel of `field`.
    pub fn covering(field: &Field) -> Self {
        Self::all_valid(field.height(), field.width())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count_valid(&self) -> usize {
        self.count_valid
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    /// Row-major indices of the valid pixels.
    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    /// Pixelwise AND of two masks of the same size.
    pub fn intersect(&self, other: &ValidityMask) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch {
                what: "mask dimensions",
                expected: format!("{}x{}", self.height, self.width),
                actual: format!("{}x{}", other.height, other.width),
            });
        }
        let valid = self
            .valid
            .iter()
            .zip(&other.valid)
            .map(|(a, b)| *a && *b)
            .collect();
        Self::new(self.height, self.width, valid)
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.count_valid == 0 {
            Err(Error::EmptyMask)
        } else {
            Ok(())
        }
    }
}

/// Ordered `(pixel_index, value)` pairs with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelSeries {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl PixelSeries {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "series length",
                expected: indices.len().to_string(),
                actual: values.len().to_string(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "pixel indices must be strictly increasing".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at pixel index {}",
                values[pos], indices[pos]
            )));
        }
        Ok(Self { indices, values })
    }

    /// Series over pixels `0..values.len()`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let indices = (0..values.len()).collect();
        Self::new(indices, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Same pixels with every value passed through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.indices.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn is_aligned_with(&self, other: &PixelSeries) -> bool {
        self.indices == other.indices
    }
}

/// Collapses the channels of one pixel into a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelReducer {
    /// Requires a single-channel field.
    Identity,
    /// Picks one channel.
    Channel(usize),
    /// Euclidean norm across channels (flow vectors).
    EuclideanNorm,
}

impl ChannelReducer {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            ChannelReducer::Identity => values[0],
            ChannelReducer::Channel(c) => values[c],
            ChannelReducer::EuclideanNorm => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn check(self, channels: usize) -> Result<()> {
        match self {
            ChannelReducer::Identity if channels != 1 => Err(Error::DimensionMismatch {
                what: "identity reducer channel count",
                expected: "1 channel".into(),
                actual: format!("{channels} channels"),
            }),
            ChannelReducer::Channel(c) if c >= channels => Err(Error::InvalidArgument(format!(
                "channel {c} out of range for {channels}-channel field"
            ))),
            _ => Ok(()),
        }
    }
}

/// One entry per valid pixel, in row-major order.
pub fn extract_valid(
    field: &Field,
    mask: &ValidityMask,
    reducer: ChannelReducer,
) -> Result<PixelSeries> {
    field.check_mask(mask)?;
    mask.require_nonempty()?;
    reducer.check(field.channels())?;
    let (indices, values) = mask
        .valid_indices()
        .map(|i| (i, reducer.apply(field.pixel(i))))
        .unzip();
    PixelSeries::new(indices, values)
}

/// A field whose invalid pixels were filled for display. Never feed it back
/// into a metric.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualizationField {
    pub field: Field,
    pub filled_pixels: usize,
}

/// Fills every invalid pixel with the value of its nearest valid pixel
/// (Euclidean pixel distance, ties to the lowest row-major index).
pub fn densify_for_visualization(field: &Field, mask: &ValidityMask) -> Result<VisualizationField> {
    field.check_mask(mask)?;
    mask.require_nonempty()?;
    let (h, w, c) = (field.height(), field.width(), field.channels());
    let mut out = field.data().to_vec();
    let mut filled = 0;
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if mask.is_valid(idx) {
                continue;
            }
            let src = nearest_valid(mask, y, x);
            out[idx * c..(idx + 1) * c].copy_from_slice(field.pixel(src));
            filled += 1;
        }
    }
    Ok(VisualizationField {
        field: Field::new(h, w, c, out)?,
        filled_pixels: filled,
    })
}

fn nearest_valid(mask: &ValidityMask, y: usize, x: usize) -> usize {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let (y, x) = (y as isize, x as isize);
    let max_radius = h.max(w);
    // Grow a square ring until some valid pixel shows up; the true nearest
    // then lies within Chebyshev radius floor(sqrt(best_d2)).
    let mut first_hit = None;
    for r in 1..=max_radius {
        if ring_has_valid(mask, y, x, r) {
            first_hit = Some(r);
            break;
        }
    }
    let r0 = first_hit.expect("mask is nonempty");
    let bound = ((2 * r0 * r0) as f64).sqrt().floor() as isize;
    let mut best: Option<(isize, usize)> = None;
    for yy in (y - bound).max(0)..=(y + bound).min(h - 1) {
        for xx in (x - bound).max(0)..=(x + bound).min(w - 1) {
            let idx = (yy * w + xx) as usize;
            if !mask.is_valid(idx) {
                continue;
            }
            let d2 = (yy - y).pow(2) + (xx - x).pow(2);
            if best.is_none_or(|b| (d2, idx) < b) {
                best = Some((d2, idx));
            }
        }
    }
    best.expect("ring search found a valid pixel").1
}

fn ring_has_valid(mask: &ValidityMask, y: isize, x: isize, r: isize) -> bool {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let check = |yy: isize, xx: isize| {
        yy >= 0 && yy < h && xx >= 0 && xx < w && mask.is_valid((yy * w + xx) as usize)
    };
    (x - r..=x + r).any(|xx| check(y - r, xx) || check(y + r, xx))
        || (y - r + 1..y + r).any(|yy| check(yy, x - r) || check(yy, x + r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field_2x2() -> Field {
        Field::scalar(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn rejects_non_finite_with_coordinates() {
        let err = Field::new(2, 2, 1, vec![0.0, 0.0, f64::NAN, 0.0]).unwrap_err();
        match err {
            Error::NonFinite { x, y, .. } => assert_eq!((x, y), (0, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Field::new(1, 1, 1, vec![f64::INFINITY]).is_err());
        assert!(Field::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn extract_all_valid_row_major() {
        let s = extract_valid(&field_2x2(), &ValidityMask::all_valid(2, 2), ChannelReducer::Identity)
            .unwrap();
        assert_eq!(s.indices(), &[0, 1, 2, 3]);
        assert_eq!(s.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn extract_single_masked_pixel() {
        // pixel (y=1, x=0) is row-major index 2
        let mask = ValidityMask::new(2, 2, vec![false, false, true, false]).unwrap();
        let s = extract_valid(&field_2x2(), &mask, ChannelReducer::Identity).unwrap();
        assert_eq!(s.indices(), &[2]);
        assert_eq!(s.values(), &[3.0]);
    }

    #[test]
    fn extract_flow_norm() {
        let flow = Field::new(1, 2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let s = extract_valid(&flow, &ValidityMask::all_valid(1, 2), ChannelReducer::EuclideanNorm)
            .unwrap();
        assert_eq!(s.values(), &[5.0, 0.0]);
    }

    #[test]
    fn extract_errors() {
        let empty = ValidityMask::new(2, 2, vec![false; 4]).unwrap();
        assert!(matches!(
            extract_valid(&field_2x2(), &empty, ChannelReducer::Identity),
            Err(Error::EmptyMask)
        ));
        assert!(matches!(
            extract_valid(&field_2x2(), &ValidityMask::all_valid(1, 4), ChannelReducer::Identity),
            Err(Error::DimensionMismatch { .. })
        ));
        let flow = Field::filled(1, 1, 2, 0.0).unwrap();
        assert!(extract_valid(&flow, &ValidityMask::all_valid(1, 1), ChannelReducer::Identity).is_err());
    }

    #[test]
    fn densify_identity_on_all_valid() {
        let f = field_2x2();
        let d = densify_for_visualization(&f, &ValidityMask::covering(&f)).unwrap();
        assert_eq!(d.field, f);
        assert_eq!(d.filled_pixels, 0);
    }

    #[test]
    fn densify_single_source() {
        let f = Field::scalar(1, 3, vec![0.0, 7.0, 0.0]).unwrap();
        let m = ValidityMask::new(1, 3, vec![false, true, false]).unwrap();
        let d = densify_for_visualization(&f, &m).unwrap();
        assert_eq!(d.field.data(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn densify_two_ends() {
        let f = Field::scalar(1, 4, vec![1.0, 0.0, 0.0, 9.0]).unwrap();
        let m = ValidityMask::new(1, 4, vec![true, false, false, true]).unwrap();
        let d = densify_for_visualization(&f, &m).unwrap();
        assert_eq!(d.field.data(), &[1.0, 1.0, 9.0, 9.0]);
    }

    #[test]
    fn densify_tie_goes_to_lowest_index() {
        // Centre pixel is equidistant from all four edge midpoints.
        let mut data = vec![0.0; 9];
        let mut valid = vec![false; 9];
        for (i, v) in [(1, 10.0), (3, 20.0), (5, 30.0), (7, 40.0)] {
            data[i] = v;
            valid[i] = true;
        }
        let f = Field::scalar(3, 3, data).unwrap();
        let m = ValidityMask::new(3, 3, valid).unwrap();
        let d = densify_for_visualization(&f, &m).unwrap();
        assert_eq!(d.field.get(1, 1, 0), 10.0);
        // Corner (0,0) is adjacent to indices 1 and 3; index 1 wins.
        assert_eq!(d.field.get(0, 0, 0), 10.0);
    }

    #[test]
    fn densify_rejects_empty_mask() {
        let m = ValidityMask::new(2, 2, vec![false; 4]).unwrap();
        assert!(densify_for_visualization(&field_2x2(), &m).is_err());
    }

    fn brute_nearest(mask: &ValidityMask, y: usize, x: usize) -> usize {
        let w = mask.width();
        mask.valid_indices()
            .min_by_key(|&i| {
                let (yy, xx) = ((i / w) as isize, (i % w) as isize);
                ((yy - y as isize).pow(2) + (xx - x as isize).pow(2), i)
            })
            .unwrap()
    }

    proptest! {
        #[test]
        fn densify_matches_brute_force_and_is_idempotent(
            h in 1usize..9, w in 1usize..9, seed in any::<u64>()
        ) {
            let n = h * w;
            let mut state = seed | 1;
            let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; state };
            let data: Vec<f64> = (0..n).map(|_| (next() % 1000) as f64).collect();
            let mut valid: Vec<bool> = (0..n).map(|_| next() % 4 == 0).collect();
            valid[(next() as usize) % n] = true;
            let f = Field::scalar(h, w, data).unwrap();
            let m = ValidityMask::new(h, w, valid).unwrap();
            let d = densify_for_visualization(&f, &m).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let src = brute_nearest(&m, y, x);
                    prop_assert_eq!(d.field.get(y, x, 0), f.data()[src]);
                }
            }
            let again = densify_for_visualization(&d.field, &m).unwrap();
            prop_assert_eq!(again.field, d.field);
        }

        #[test]
        fn constant_true_mask_is_bijection(h in 1usize..6, w in 1usize..6) {
            let f = Field::scalar(h, w, (0..h * w).map(|v| v as f64).collect()).unwrap();
            let s = extract_valid(&f, &ValidityMask::covering(&f), ChannelReducer::Identity).unwrap();
            prop_assert_eq!(s.indices().to_vec(), (0..h * w).collect::<Vec<_>>());
            prop_assert_eq!(s.values(), f.data());
        }
    }
}
