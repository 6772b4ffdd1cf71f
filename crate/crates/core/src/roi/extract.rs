use super::flatten::{flatten, round_half_up, FlattenResult};
use super::{resize, RoiError, RoiKind, RoiMethod, RoiRequest};
use crate::types::{BScan, Image, LayerSegmentation};

/// Inclusive row range of a band at one column: `round(a) ..= round(b)`.
#[inline]
pub fn band_rows(upper: f64, lower: f64) -> (i64, i64) {
    (round_half_up(upper), round_half_up(lower))
}

/// Keep pixels inside the per-column band, zero everything else.
pub fn mask_band(image: &Image, upper: &[f64], lower: &[f64]) -> Image {
    let mut out = Image::zeros(image.rows, image.cols);
    for c in 0..image.cols {
        let (a, b) = band_rows(upper[c], lower[c]);
        let a = a.max(0);
        let b = b.min(image.rows as i64 - 1);
        for r in a..=b {
            let r = r as usize;
            out.set(r, c, image.get(r, c));
        }
    }
    out
}

/// Inclusive row range of a cropping ROI in flattened coordinates.
pub fn crop_range(flat: &FlattenResult, kind: RoiKind, choroid_offset: usize) -> (i64, i64) {
    let seg = &flat.segmentation;
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    match kind {
        RoiKind::IlmBm => (min(&seg.ilm).floor() as i64, max(&seg.bm).ceil() as i64),
        RoiKind::RpeBm => (min(&seg.rpe).floor() as i64, max(&seg.bm).ceil() as i64),
        RoiKind::BmCho => (flat.bm_row, flat.bm_row + choroid_offset as i64 - 1),
        RoiKind::WholeImage | RoiKind::RpeBmMaskOnly => (0, flat.image.height() as i64 - 1),
    }
}

fn crop(bscan: &BScan, seg: &LayerSegmentation, req: &RoiRequest) -> Result<Image, RoiError> {
    let flat = flatten(bscan, seg);
    let (top, bottom) = crop_range(&flat, req.kind, req.choroid_offset);
    let h = bscan.height() as i64;
    if bottom >= h && !req.pad_below {
        return Err(RoiError::CropOutOfBounds {
            kind: req.kind,
            top,
            bottom,
            height: bscan.height(),
            deficit: (bottom - h + 1) as usize,
        });
    }
    let top = top.max(0);
    let rows = (bottom - top + 1) as usize;
    let w = bscan.width();
    let mut out = Image::zeros(rows, w);
    let src = flat.image.pixels();
    for r in top..=bottom.min(h - 1) {
        let dst_row = (r - top) as usize;
        let s = &src[r as usize * w..(r as usize + 1) * w];
        for (d, &p) in out.data[dst_row * w..(dst_row + 1) * w].iter_mut().zip(s) {
            *d = f32::from(p);
        }
    }
    Ok(out)
}

/// Extract the requested region at native resolution (before resizing).
pub fn extract_roi(
    bscan: &BScan,
    seg: &LayerSegmentation,
    req: &RoiRequest,
) -> Result<Image, RoiError> {
    req.validate()?;
    seg.validate(bscan.width(), bscan.height())?;
    match (req.kind, req.effective_method()) {
        (RoiKind::WholeImage, _) => Ok(bscan.to_image()),
        (RoiKind::RpeBmMaskOnly, _) => {
            let ones = Image::filled(bscan.height(), bscan.width(), 1.0);
            Ok(mask_band(&ones, &seg.rpe, &seg.bm))
        }
        (kind, Some(RoiMethod::Masking)) => {
            let img = bscan.to_image();
            Ok(match kind {
                RoiKind::IlmBm => mask_band(&img, &seg.ilm, &seg.bm),
                RoiKind::RpeBm => mask_band(&img, &seg.rpe, &seg.bm),
                _ => {
                    let lower: Vec<f64> = seg
                        .bm
                        .iter()
                        .map(|&b| b + req.choroid_offset as f64 - 1.0)
                        .collect();
                    mask_band(&img, &seg.bm, &lower)
                }
            })
        }
        (_, Some(RoiMethod::Cropping)) => crop(bscan, seg, req),
        (_, None) => unreachable!("validated above"),
    }
}

/// Extract and resize to the request's target size.
pub fn prepare_roi(
    bscan: &BScan,
    seg: &LayerSegmentation,
    req: &RoiRequest,
) -> Result<(Image, [usize; 2]), RoiError> {
    let raw = extract_roi(bscan, seg, req)?;
    let pre = [raw.rows, raw.cols];
    let out = resize(&raw, req.target_size[0], req.target_size[1])?;
    Ok((out, pre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_subject_scan, SynthConfig};
    use crate::types::ClassLabel;

    fn flat_scan(w: usize, h: usize, ilm: f64, rpe: f64, bm: f64) -> (BScan, LayerSegmentation) {
        let px = (0..w * h).map(|i| (i % 200) as u8 + 20).collect();
        let scan = BScan::new(w, h, px, "s", "v", 0, ClassLabel::Amd).unwrap();
        let seg = LayerSegmentation::new(vec![ilm; w], vec![rpe; w], vec![bm; w], w, h).unwrap();
        (scan, seg)
    }

    #[test]
    fn masking_ilm_bm_keeps_rows_10_to_20() {
        let (scan, seg) = flat_scan(6, 40, 10.0, 15.0, 20.0);
        let out = extract_roi(&scan, &seg, &RoiRequest::masking(RoiKind::IlmBm)).unwrap();
        assert_eq!((out.rows, out.cols), (40, 6));
        for r in 0..40 {
            for c in 0..6 {
                let want = if (10..=20).contains(&r) {
                    f32::from(scan.get(r, c))
                } else {
                    0.0
                };
                assert_eq!(out.get(r, c), want);
            }
        }
    }

    #[test]
    fn bm_cho_crop_is_offset_rows_tall() {
        let cfg = SynthConfig::default();
        let s = generate_subject_scan(&cfg, ClassLabel::Amd, 0, 0).unwrap();
        let out = extract_roi(&s.bscan, &s.segmentation, &RoiRequest::cropping(RoiKind::BmCho))
            .unwrap();
        assert_eq!((out.rows, out.cols), (80, cfg.image_width));
        let mut r = RoiRequest::cropping(RoiKind::BmCho);
        r.choroid_offset = 17;
        let out = extract_roi(&s.bscan, &s.segmentation, &r).unwrap();
        assert_eq!(out.rows, 17);
    }

    #[test]
    fn crop_past_bottom_fails_or_pads() {
        let (scan, seg) = flat_scan(4, 60, 5.0, 10.0, 20.0);
        let req = RoiRequest::cropping(RoiKind::BmCho);
        let err = extract_roi(&scan, &seg, &req).unwrap_err();
        assert_eq!(
            err,
            RoiError::CropOutOfBounds {
                kind: RoiKind::BmCho,
                top: 20,
                bottom: 99,
                height: 60,
                deficit: 40
            }
        );
        let padded = extract_roi(&scan, &seg, &RoiRequest { pad_below: true, ..req }).unwrap();
        assert_eq!(padded.rows, 80);
        assert!(padded.row(79).iter().all(|&v| v == 0.0));
        assert_eq!(padded.get(0, 0), f32::from(scan.get(20, 0)));
    }

    #[test]
    fn mask_only_thickens_under_drusen() {
        let cfg = SynthConfig::default();
        let s = generate_subject_scan(&cfg, ClassLabel::Amd, 3, 1).unwrap();
        let req = RoiRequest::new(RoiKind::RpeBmMaskOnly, None);
        let m = extract_roi(&s.bscan, &s.segmentation, &req).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0 || v == 1.0));
        let thickness = |c: usize| (0..m.rows).filter(|&r| m.get(r, c) == 1.0).count();
        let (peak_col, _) = s
            .rpe_elevation
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let healthy = (0..m.cols).find(|&c| !s.drusen_footprint[c]).unwrap();
        assert!(thickness(peak_col) >= thickness(healthy) + 4);
    }

    #[test]
    fn whole_image_is_input() {
        let (scan, seg) = flat_scan(5, 30, 3.0, 8.0, 12.0);
        let out = extract_roi(&scan, &seg, &RoiRequest::new(RoiKind::WholeImage, None)).unwrap();
        assert_eq!(out, scan.to_image());
    }

    #[test]
    fn prepare_resizes_to_target() {
        let cfg = SynthConfig::default();
        let s = generate_subject_scan(&cfg, ClassLabel::Control, 0, 0).unwrap();
        let req = RoiRequest::cropping(RoiKind::RpeBm).with_target(96, 128);
        let (img, pre) = prepare_roi(&s.bscan, &s.segmentation, &req).unwrap();
        assert_eq!((img.rows, img.cols), (96, 128));
        assert_eq!(pre[1], cfg.image_width);
    }
}
