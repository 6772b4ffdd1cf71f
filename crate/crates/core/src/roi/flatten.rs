use crate::types::{BScan, LayerSegmentation};

/// Round to nearest, halves toward +inf. Unlike `f64::round` this commutes
/// with integer offsets, so `round(m - b) == round(m) - b` for integer `b`.
#[inline]
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenResult {
    pub image: BScan,
    /// Row shift applied to each column (positive moves content down).
    pub shifts: Vec<i64>,
    /// Input curves moved by the same shifts, clamped to the image.
    pub segmentation: LayerSegmentation,
    /// Row the BM lands on after flattening, `round(mean(bm))`.
    pub bm_row: i64,
}

/// Shift every A-scan so the BM lies on its mean row.
///
/// Output pixel `(r, c)` is input pixel `(r - shifts[c], c)`; rows with no
/// source are zero.
pub fn flatten(bscan: &BScan, seg: &LayerSegmentation) -> FlattenResult {
    let (w, h) = (bscan.width(), bscan.height());
    let mean = seg.mean_bm();
    let shifts: Vec<i64> = seg.bm.iter().map(|&b| round_half_up(mean - b)).collect();
    let mut out = vec![0u8; w * h];
    for (c, &s) in shifts.iter().enumerate() {
        for r in 0..h as i64 {
            let src = r - s;
            if (0..h as i64).contains(&src) {
                out[r as usize * w + c] = bscan.get(src as usize, c);
            }
        }
    }
    let bottom = h as f64 - 1.0;
    let moved = |curve: &[f64]| -> Vec<f64> {
        curve
            .iter()
            .zip(&shifts)
            .map(|(&v, &s)| (v + s as f64).clamp(0.0, bottom))
            .collect()
    };
    let segmentation = LayerSegmentation {
        ilm: moved(&seg.ilm),
        rpe: moved(&seg.rpe),
        bm: moved(&seg.bm),
    };
    FlattenResult {
        image: bscan.with_pixels(out).expect("same dimensions"),
        shifts,
        segmentation,
        bm_row: round_half_up(mean),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassLabel;

    fn ramp(w: usize, h: usize) -> BScan {
        let px = (0..w * h).map(|i| (i % 251) as u8 + 1).collect();
        BScan::new(w, h, px, "s", "v", 0, ClassLabel::Control).unwrap()
    }

    #[test]
    fn constant_bm_is_identity() {
        let scan = ramp(5, 80);
        let seg = LayerSegmentation::new(vec![10.0; 5], vec![40.0; 5], vec![50.0; 5], 5, 80)
            .unwrap();
        let f = flatten(&scan, &seg);
        assert_eq!(f.shifts, vec![0; 5]);
        assert_eq!(f.image, scan);
        assert_eq!(f.bm_row, 50);
    }

    #[test]
    fn three_column_example() {
        let scan = ramp(3, 80);
        let seg = LayerSegmentation::new(
            vec![10.0, 20.0, 30.0],
            vec![35.0, 45.0, 55.0],
            vec![40.0, 50.0, 60.0],
            3,
            80,
        )
        .unwrap();
        let f = flatten(&scan, &seg);
        assert_eq!(f.shifts, vec![10, 0, -10]);
        assert_eq!(f.segmentation.bm, vec![50.0, 50.0, 50.0]);
        assert_eq!(f.segmentation.ilm, vec![20.0, 20.0, 20.0]);
        assert_eq!(f.segmentation.rpe, vec![45.0, 45.0, 45.0]);
        // Column 0 moved down: top 10 rows vacated.
        for r in 0..10 {
            assert_eq!(f.image.get(r, 0), 0);
        }
        assert_eq!(f.image.get(10, 0), scan.get(0, 0));
        // Column 2 moved up: bottom 10 rows vacated.
        for r in 70..80 {
            assert_eq!(f.image.get(r, 2), 0);
        }
        assert_eq!(f.image.get(0, 2), scan.get(10, 2));
    }

    #[test]
    fn half_rounding_commutes_with_integers() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(-2.5), -2);
        assert_eq!(round_half_up(50.5 - 40.0), round_half_up(50.5) - 40);
    }
}
