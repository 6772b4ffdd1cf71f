//! Region-of-interest extraction guided by the ILM, RPE and BM curves.
//!
//! Two preparation methods are supported. Masking keeps the full frame and
//! zeroes every pixel outside the band between two curves. Cropping first
//! flattens the scan so the BM is horizontal, then cuts a full-width
//! rectangle around the band.

mod extract;
mod flatten;
mod resize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{band_rows, crop_range, extract_roi, mask_band, prepare_roi};
pub use flatten::{flatten, round_half_up, FlattenResult};
pub use resize::resize;

pub const DEFAULT_CHOROID_OFFSET: usize = 80;
pub const DEFAULT_TARGET_SIZE: [usize; 2] = [224, 224];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoiError {
    #[error("invalid ROI request: {0}")]
    InvalidRequest(String),
    #[error(
        "{kind} crop needs rows {top}..={bottom} but the image has {height} rows ({deficit} missing below)"
    )]
    CropOutOfBounds {
        kind: RoiKind,
        top: i64,
        bottom: i64,
        height: usize,
        deficit: usize,
    },
    #[error("resize target must be non-zero, got {rows}x{cols}")]
    ZeroTarget { rows: usize, cols: usize },
    #[error("cannot resize an empty image")]
    EmptyImage,
    #[error(transparent)]
    Data(#[from] crate::types::InvalidData),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoiKind {
    #[serde(rename = "img")]
    WholeImage,
    #[serde(rename = "ilm-bm")]
    IlmBm,
    #[serde(rename = "rpe-bm")]
    RpeBm,
    #[serde(rename = "bm-cho")]
    BmCho,
    #[serde(rename = "rpe-bm-mask")]
    RpeBmMaskOnly,
}

impl RoiKind {
    pub const ALL: [RoiKind; 5] = [
        RoiKind::WholeImage,
        RoiKind::IlmBm,
        RoiKind::RpeBm,
        RoiKind::BmCho,
        RoiKind::RpeBmMaskOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoiKind::WholeImage => "img",
            RoiKind::IlmBm => "ilm-bm",
            RoiKind::RpeBm => "rpe-bm",
            RoiKind::BmCho => "bm-cho",
            RoiKind::RpeBmMaskOnly => "rpe-bm-mask",
        }
    }

    pub fn needs_method(self) -> bool {
        matches!(self, RoiKind::IlmBm | RoiKind::RpeBm | RoiKind::BmCho)
    }
}

impl fmt::Display for RoiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoiKind {
    type Err = RoiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoiKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RoiError::InvalidRequest(format!("unknown ROI kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiMethod {
    Masking,
    Cropping,
}

impl RoiMethod {
    pub fn name(self) -> &'static str {
        match self {
            RoiMethod::Masking => "masking",
            RoiMethod::Cropping => "cropping",
        }
    }
}

impl FromStr for RoiMethod {
    type Err = RoiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masking" => Ok(RoiMethod::Masking),
            "cropping" => Ok(RoiMethod::Cropping),
            _ => Err(RoiError::InvalidRequest(format!("unknown method {s:?}"))),
        }
    }
}

fn default_offset() -> usize {
    DEFAULT_CHOROID_OFFSET
}

fn default_target() -> [usize; 2] {
    DEFAULT_TARGET_SIZE
}

/// Which region to extract, how, and at what model input size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiRequest {
    pub kind: RoiKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<RoiMethod>,
    #[serde(default = "default_offset")]
    pub choroid_offset: usize,
    /// (rows, cols)
    #[serde(default = "default_target")]
    pub target_size: [usize; 2],
    /// Zero-fill crops that run past the image bottom instead of failing.
    #[serde(default)]
    pub pad_below: bool,
}

impl RoiRequest {
    pub fn new(kind: RoiKind, method: Option<RoiMethod>) -> Self {
        RoiRequest {
            kind,
            method,
            choroid_offset: DEFAULT_CHOROID_OFFSET,
            target_size: DEFAULT_TARGET_SIZE,
            pad_below: false,
        }
    }

    pub fn masking(kind: RoiKind) -> Self {
        RoiRequest::new(kind, Some(RoiMethod::Masking))
    }

    pub fn cropping(kind: RoiKind) -> Self {
        RoiRequest::new(kind, Some(RoiMethod::Cropping))
    }

    pub fn with_target(mut self, rows: usize, cols: usize) -> Self {
        self.target_size = [rows, cols];
        self
    }

    /// The eight variants compared in the reference experiment.
    pub fn paper_variants() -> Vec<RoiRequest> {
        let mut v = vec![RoiRequest::new(RoiKind::WholeImage, None)];
        for method in [RoiMethod::Masking, RoiMethod::Cropping] {
            for kind in [RoiKind::IlmBm, RoiKind::RpeBm, RoiKind::BmCho] {
                v.push(RoiRequest::new(kind, Some(method)));
            }
        }
        v.push(RoiRequest::new(RoiKind::RpeBmMaskOnly, None));
        v
    }

    pub fn validate(&self) -> Result<(), RoiError> {
        if self.kind.needs_method() && self.method.is_none() {
            return Err(RoiError::InvalidRequest(format!(
                "{} requires a method (masking or cropping)",
                self.kind
            )));
        }
        if self.choroid_offset < 1 {
            return Err(RoiError::InvalidRequest(
                "choroid_offset must be at least 1".into(),
            ));
        }
        if self.target_size[0] == 0 || self.target_size[1] == 0 {
            return Err(RoiError::ZeroTarget {
                rows: self.target_size[0],
                cols: self.target_size[1],
            });
        }
        Ok(())
    }

    /// Method that actually applies; `None` for kinds that ignore it.
    pub fn effective_method(&self) -> Option<RoiMethod> {
        if self.kind.needs_method() {
            self.method
        } else {
            None
        }
    }

    /// Stable variant name, e.g. `cropping-bm-cho` or `img`.
    pub fn variant_name(&self) -> String {
        match self.effective_method() {
            Some(m) => format!("{}-{}", m.name(), self.kind.name()),
            None => self.kind.name().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_variants_have_unique_names() {
        let names: Vec<_> = RoiRequest::paper_variants()
            .iter()
            .map(|r| r.variant_name())
            .collect();
        assert_eq!(
            names,
            [
                "img",
                "masking-ilm-bm",
                "masking-rpe-bm",
                "masking-bm-cho",
                "cropping-ilm-bm",
                "cropping-rpe-bm",
                "cropping-bm-cho",
                "rpe-bm-mask"
            ]
        );
    }

    #[test]
    fn request_validation() {
        assert!(RoiRequest::new(RoiKind::BmCho, None).validate().is_err());
        assert!(RoiRequest::new(RoiKind::WholeImage, Some(RoiMethod::Cropping))
            .validate()
            .is_ok());
        let mut r = RoiRequest::masking(RoiKind::BmCho);
        r.choroid_offset = 0;
        assert!(r.validate().is_err());
        assert!(RoiRequest::masking(RoiKind::IlmBm)
            .with_target(0, 4)
            .validate()
            .is_err());
    }

    #[test]
    fn request_json_names() {
        let r: RoiRequest =
            serde_json::from_str(r#"{"kind": "bm-cho", "method": "cropping"}"#).unwrap();
        assert_eq!(r, RoiRequest::cropping(RoiKind::BmCho));
        assert!(serde_json::from_str::<RoiRequest>(r#"{"kind": "bm-cho", "metod": 1}"#).is_err());
        assert_eq!("rpe-bm-mask".parse::<RoiKind>().unwrap(), RoiKind::RpeBmMaskOnly);
    }
}
