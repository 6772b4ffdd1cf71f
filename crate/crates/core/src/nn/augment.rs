use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::rng::Rng;
use crate::types::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation magnitude range in degrees; the sign is drawn separately.
    pub rotation_degrees: [f64; 2],
    pub horizontal_flip: bool,
    pub brightness_factor: [f64; 2],
    /// Largest shift per axis as a fraction of that axis.
    pub shift_fraction: f64,
    pub zoom_factor: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            rotation_degrees: [0.0, 10.0],
            horizontal_flip: true,
            brightness_factor: [0.4, 1.2],
            shift_fraction: 0.05,
            zoom_factor: [0.9, 1.2],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let range = |name: &str, [lo, hi]: [f64; 2], min: f64| {
            if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi) {
                Err(NnError::TrainConfig(format!("{name} range {lo}..{hi} is invalid")))
            } else {
                Ok(())
            }
        };
        range("rotation_degrees", self.rotation_degrees, 0.0)?;
        range("brightness_factor", self.brightness_factor, 0.0)?;
        range("zoom_factor", self.zoom_factor, f64::MIN_POSITIVE)?;
        if !(0.0..=0.5).contains(&self.shift_fraction) {
            return Err(NnError::TrainConfig(format!(
                "shift_fraction {} outside [0, 0.5]",
                self.shift_fraction
            )));
        }
        Ok(())
    }
}

/// One concrete draw of every transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Counter-clockwise, degrees.
    pub rotation_deg: f64,
    pub flip: bool,
    pub brightness: f64,
    pub shift_rows: i64,
    pub shift_cols: i64,
    pub zoom: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        flip: false,
        brightness: 1.0,
        shift_rows: 0,
        shift_cols: 0,
        zoom: 1.0,
    };

    /// Draws every parameter in a fixed order, whether or not it ends up used.
    pub fn sample(config: &AugmentConfig, rng: &mut Rng, rows: usize, cols: usize) -> Self {
        let u = |rng: &mut Rng, [lo, hi]: [f64; 2]| rng.random_range(lo..=hi);
        let magnitude = u(rng, config.rotation_degrees);
        let negative = rng.random_bool(0.5);
        let flip = rng.random_bool(0.5);
        let brightness = u(rng, config.brightness_factor);
        let max_r = (config.shift_fraction * rows as f64).round() as i64;
        let max_c = (config.shift_fraction * cols as f64).round() as i64;
        let shift_rows = rng.random_range(-max_r..=max_r);
        let shift_cols = rng.random_range(-max_c..=max_c);
        let zoom = u(rng, config.zoom_factor);
        if !config.enabled {
            return AugmentParams::IDENTITY;
        }
        AugmentParams {
            rotation_deg: if negative { -magnitude } else { magnitude },
            flip: flip && config.horizontal_flip,
            brightness,
            shift_rows,
            shift_cols,
            zoom,
        }
    }

    /// Rotation, flip, brightness, shift, zoom, in that order.
    pub fn apply(&self, image: &Image) -> Image {
        let mut img = image.clone();
        if self.rotation_deg != 0.0 {
            let (s, c) = self.rotation_deg.to_radians().sin_cos();
            img = remap(&img, |dy, dx| (c * dy + s * dx, -s * dy + c * dx));
        }
        if self.flip {
            for r in 0..img.rows {
                img.data[r * img.cols..(r + 1) * img.cols].reverse();
            }
        }
        if self.brightness != 1.0 {
            for v in &mut img.data {
                *v = (f64::from(*v) * self.brightness).clamp(0.0, 255.0) as f32;
            }
        }
        if self.shift_rows != 0 || self.shift_cols != 0 {
            img = shift(&img, self.shift_rows, self.shift_cols);
        }
        if self.zoom != 1.0 {
            let z = self.zoom;
            img = remap(&img, |dy, dx| (dy / z, dx / z));
        }
        img
    }
}

/// Random augmentation; identity when disabled.
pub fn augment(image: &Image, config: &AugmentConfig, rng: &mut Rng) -> Image {
    AugmentParams::sample(config, rng, image.rows, image.cols).apply(image)
}

fn shift(img: &Image, dr: i64, dc: i64) -> Image {
    let mut out = Image::zeros(img.rows, img.cols);
    for r in 0..img.rows as i64 {
        let sr = r - dr;
        if sr < 0 || sr >= img.rows as i64 {
            continue;
        }
        for c in 0..img.cols as i64 {
            let sc = c - dc;
            if sc >= 0 && sc < img.cols as i64 {
                out.set(r as usize, c as usize, img.get(sr as usize, sc as usize));
            }
        }
    }
    out
}

/// Backward-map every output pixel through `f` (offsets from the centre) and
/// sample bilinearly; sources outside the image read as zero.
fn remap(img: &Image, f: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let cy = (img.rows as f64 - 1.0) / 2.0;
    let cx = (img.cols as f64 - 1.0) / 2.0;
    let px = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= img.rows as i64 || x >= img.cols as i64 {
            0.0
        } else {
            f64::from(img.get(y as usize, x as usize))
        }
    };
    let mut out = Image::zeros(img.rows, img.cols);
    for r in 0..img.rows {
        for c in 0..img.cols {
            let (dy, dx) = f(r as f64 - cy, c as f64 - cx);
            let (y, x) = (cy + dy, cx + dx);
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as i64, x0 as i64);
            let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
            let bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
            out.set(r, c, (top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn ramp(rows: usize, cols: usize) -> Image {
        Image::new(
            rows,
            cols,
            (0..rows * cols).map(|i| ((i * 7) % 200) as f32 + 10.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let img = ramp(20, 30);
        let mut rng = rng_from(4);
        for _ in 0..5 {
            assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut rng), img);
        }
    }

    #[test]
    fn brightness_scales_constant_image() {
        let img = Image::filled(10, 10, 100.0);
        let p = AugmentParams {
            brightness: 1.2,
            ..AugmentParams::IDENTITY
        };
        assert!(p.apply(&img).data.iter().all(|&v| v == 120.0));
        let p = AugmentParams {
            brightness: 3.0,
            ..AugmentParams::IDENTITY
        };
        assert!(p.apply(&img).data.iter().all(|&v| v == 255.0));
    }

    #[test]
    fn five_percent_shift_on_width_100() {
        let img = ramp(12, 100);
        let max = (AugmentConfig::default().shift_fraction * 100.0).round() as i64;
        assert_eq!(max, 5);
        let p = AugmentParams {
            shift_cols: max,
            ..AugmentParams::IDENTITY
        };
        let out = p.apply(&img);
        for r in 0..12 {
            for c in 0..5 {
                assert_eq!(out.get(r, c), 0.0);
            }
            for c in 5..100 {
                assert_eq!(out.get(r, c), img.get(r, c - 5));
            }
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = ramp(3, 7);
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        let out = p.apply(&img);
        assert_eq!(out.get(1, 0), img.get(1, 6));
        assert_eq!(p.apply(&out), img);
    }

    #[test]
    fn quarter_turn_on_square_moves_corners() {
        let mut img = Image::zeros(5, 5);
        img.set(0, 4, 200.0);
        let p = AugmentParams {
            rotation_deg: 90.0,
            ..AugmentParams::IDENTITY
        };
        let out = p.apply(&img);
        // Counter-clockwise: top-right corner goes to top-left.
        assert!((out.get(0, 0) - 200.0).abs() < 1e-3);
        assert!(out.get(0, 4).abs() < 1e-3);
    }

    #[test]
    fn zoom_in_magnifies_about_centre() {
        let img = ramp(21, 21);
        let p = AugmentParams {
            zoom: 2.0,
            ..AugmentParams::IDENTITY
        };
        let out = p.apply(&img);
        assert_eq!(out.get(10, 10), img.get(10, 10));
        assert_eq!(out.get(10, 12), img.get(10, 11));
        let p = AugmentParams {
            zoom: 0.5,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(p.apply(&img).get(0, 0), 0.0);
    }

    #[test]
    fn sampled_params_stay_in_range_and_are_deterministic() {
        let cfg = AugmentConfig::default();
        let mut a = rng_from(9);
        let mut b = rng_from(9);
        for _ in 0..500 {
            let p = AugmentParams::sample(&cfg, &mut a, 96, 128);
            assert_eq!(p, AugmentParams::sample(&cfg, &mut b, 96, 128));
            assert!(p.rotation_deg.abs() <= 10.0);
            assert!((0.4..=1.2).contains(&p.brightness));
            assert!(p.shift_rows.abs() <= 5 && p.shift_cols.abs() <= 6);
            assert!((0.9..=1.2).contains(&p.zoom));
        }
        let img = ramp(96, 128);
        let out = augment(&img, &cfg, &mut a);
        assert_eq!((out.rows, out.cols), (96, 128));
    }

    #[test]
    fn config_validation() {
        let bad = AugmentConfig {
            shift_fraction: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            zoom_factor: [1.2, 0.9],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
