use super::RoiError;
use crate::types::Image;

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Source coordinate and interpolation weight for each output index under
/// corner-aligned sampling.
fn sample_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let s = if n_out > 1 {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            } else {
                (n_in - 1) as f64 / 2.0
            };
            let lo = (s.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear resize with corner-aligned sampling, clamped to [0, 255].
pub fn resize(image: &Image, rows: usize, cols: usize) -> Result<Image, RoiError> {
    if image.data.is_empty() || image.rows == 0 || image.cols == 0 {
        return Err(RoiError::EmptyImage);
    }
    if rows == 0 || cols == 0 {
        return Err(RoiError::ZeroTarget { rows, cols });
    }
    let ys = sample_axis(image.rows, rows);
    let xs = sample_axis(image.cols, cols);
    let mut out = Vec::with_capacity(rows * cols);
    for &(y0, y1, fy) in &ys {
        let top = image.row(y0);
        let bot = image.row(y1);
        for &(x0, x1, fx) in &xs {
            let t = lerp(f64::from(top[x0]), f64::from(top[x1]), fx);
            let b = lerp(f64::from(bot[x0]), f64::from(bot[x1]), fx);
            out.push(lerp(t, b, fy).clamp(0.0, 255.0) as f32);
        }
    }
    Ok(Image {
        rows,
        cols,
        data: out,
    })
}
