//! Domain types shared by every stage: B-scans, layer segmentations and
//! floating-point image planes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvalidData {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimension { width: usize, height: usize },
    #[error("pixel buffer has {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("{layer} curve has length {actual}, expected image width {expected}")]
    SegmentationLength {
        layer: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("layer order violated at column {column}: {detail}")]
    LayerOrder { column: usize, detail: String },
}

/// Diagnosis of a subject. AMD is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Control,
    Amd,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::Control => 0,
            ClassLabel::Amd => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ClassLabel::Control),
            1 => Some(ClassLabel::Amd),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Control => "control",
            ClassLabel::Amd => "amd",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One grayscale OCT cross-section. Columns are A-scans, rows grow downward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BScan {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub subject_id: String,
    pub volume_id: String,
    pub index_in_volume: usize,
    pub label: ClassLabel,
}

impl BScan {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        subject_id: impl Into<String>,
        volume_id: impl Into<String>,
        index_in_volume: usize,
        label: ClassLabel,
    ) -> Result<Self, InvalidData> {
        if width == 0 || height == 0 {
            return Err(InvalidData::EmptyDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(InvalidData::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(BScan {
            width,
            height,
            pixels,
            subject_id: subject_id.into(),
            volume_id: volume_id.into(),
            index_in_volume,
            label,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Same identity, new pixel content of identical dimensions.
    pub fn with_pixels(&self, pixels: Vec<u8>) -> Result<Self, InvalidData> {
        BScan::new(
            self.width,
            self.height,
            pixels,
            self.subject_id.clone(),
            self.volume_id.clone(),
            self.index_in_volume,
            self.label,
        )
    }

    pub fn to_image(&self) -> Image {
        Image {
            rows: self.height,
            cols: self.width,
            data: self.pixels.iter().map(|&p| f32::from(p)).collect(),
        }
    }
}

/// Row positions of the ILM, RPE and BM boundaries, one value per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSegmentation {
    pub ilm: Vec<f64>,
    pub rpe: Vec<f64>,
    pub bm: Vec<f64>,
}

impl LayerSegmentation {
    /// Build and validate against an image of `width` x `height`.
    pub fn new(
        ilm: Vec<f64>,
        rpe: Vec<f64>,
        bm: Vec<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, InvalidData> {
        let seg = LayerSegmentation { ilm, rpe, bm };
        seg.validate(width, height)?;
        Ok(seg)
    }

    pub fn width(&self) -> usize {
        self.bm.len()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), InvalidData> {
        for (layer, curve) in [("ilm", &self.ilm), ("rpe", &self.rpe), ("bm", &self.bm)] {
            if curve.len() != width {
                return Err(InvalidData::SegmentationLength {
                    layer,
                    expected: width,
                    actual: curve.len(),
                });
            }
        }
        let bottom = height as f64 - 1.0;
        for c in 0..width {
            let (i, r, b) = (self.ilm[c], self.rpe[c], self.bm[c]);
            let ok = i.is_finite()
                && r.is_finite()
                && b.is_finite()
                && 0.0 <= i
                && i <= r
                && r <= b
                && b <= bottom;
            if !ok {
                return Err(InvalidData::LayerOrder {
                    column: c,
                    detail: format!(
                        "need 0 <= ilm ({i}) <= rpe ({r}) <= bm ({b}) <= {bottom}"
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn mean_bm(&self) -> f64 {
        self.bm.iter().sum::<f64>() / self.bm.len() as f64
    }
}

/// A single-channel floating-point raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, InvalidData> {
        if rows == 0 || cols == 0 {
            return Err(InvalidData::EmptyDimension {
                width: cols,
                height: rows,
            });
        }
        if data.len() != rows * cols {
            return Err(InvalidData::PixelCount {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Image { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Image {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Image {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Round and clamp to 8-bit.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(rows: usize, cols: usize, pixels: &[u8]) -> Result<Self, InvalidData> {
        Image::new(rows, cols, pixels.iter().map(|&p| f32::from(p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bscan_rejects_wrong_pixel_count() {
        let err = BScan::new(3, 2, vec![0; 5], "s", "v", 0, ClassLabel::Amd).unwrap_err();
        assert_eq!(
            err,
            InvalidData::PixelCount {
                expected: 6,
                actual: 5
            }
        );
        assert!(BScan::new(0, 2, vec![], "s", "v", 0, ClassLabel::Amd).is_err());
    }

    #[test]
    fn segmentation_order_is_checked() {
        let ok = LayerSegmentation::new(vec![1.0, 2.0], vec![3.0, 3.0], vec![4.0, 4.0], 2, 5);
        assert!(ok.is_ok());
        let bad = LayerSegmentation::new(vec![1.0, 5.0], vec![3.0, 3.0], vec![4.0, 4.0], 2, 6);
        assert!(matches!(bad, Err(InvalidData::LayerOrder { column: 1, .. })));
        let past_bottom =
            LayerSegmentation::new(vec![1.0], vec![3.0], vec![5.0], 1, 5).unwrap_err();
        assert!(matches!(past_bottom, InvalidData::LayerOrder { column: 0, .. }));
        let short = LayerSegmentation::new(vec![1.0], vec![3.0, 3.0], vec![4.0, 4.0], 2, 5);
        assert!(matches!(
            short,
            Err(InvalidData::SegmentationLength { layer: "ilm", .. })
        ));
    }

    #[test]
    fn label_serde_names() {
        assert_eq!(serde_json::to_string(&ClassLabel::Amd).unwrap(), "\"amd\"");
        assert_eq!(
            serde_json::from_str::<ClassLabel>("\"control\"").unwrap(),
            ClassLabel::Control
        );
    }
}
