//! Synthetic OCT B-scans with ground-truth layer boundaries.
//!
//! The retina is rendered from three smooth curves. AMD scans carry drusen,
//! Gaussian elevations of the RPE above an unchanged BM. Everything at or
//! below the BM row depends only on the BM curve, the choroid texture stream
//! and the optional shadow cast by drusen, so the choroid carries class
//! information exactly when `shadow_attenuation < 1`.
//!
//! The choroid model (depth-decaying intensity with dark vessel lumens) is an
//! invention of this generator; no reference appearance model exists for it.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, ManifestEntry, ManifestError};
use crate::io;
use crate::rng::{self, derive_seed, name_hash};
use crate::types::{BScan, ClassLabel, InvalidData, LayerSegmentation};

/// Large drusen are defined clinically as wider than this.
pub const MIN_LARGE_DRUSEN_UM: f64 = 125.0;

const RPE_THICKNESS: usize = 3;
const VITREOUS: f64 = 8.0;
const RPE_INTENSITY: f64 = 225.0;
const SUB_RPE_INTENSITY: f64 = 125.0;
const BM_INTENSITY: f64 = 195.0;
const VESSEL_LUMEN: f64 = 0.45;
/// Rows below BM used to size the vessel population.
const CHOROID_BAND: f64 = 80.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("layer geometry out of bounds at column {column}: {bound} (value {value:.2})")]
    GeometryOutOfBounds {
        bound: &'static str,
        column: usize,
        value: f64,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("entry {entry}: missing file {path}")]
    MissingFile { entry: usize, path: PathBuf },
    #[error("entry {entry}: cannot decode {path}: {detail}")]
    Decode {
        entry: usize,
        path: PathBuf,
        detail: String,
    },
    #[error("entry {entry}: dimension mismatch in {path}: {source}")]
    DimensionMismatch {
        entry: usize,
        path: PathBuf,
        #[source]
        source: InvalidData,
    },
    #[error("entry {entry}: segmentation invariant violated in {path}: {source}")]
    Invariant {
        entry: usize,
        path: PathBuf,
        #[source]
        source: InvalidData,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerGeometry {
    /// Mean ILM row.
    pub ilm_depth: f64,
    /// Mean ILM-to-BM distance in rows.
    pub retina_thickness: f64,
    /// Mean RPE-to-BM distance in rows for healthy tissue.
    pub rpe_bm_gap: f64,
    /// Range of the quadratic curvature coefficient, in rows.
    pub curvature_amplitude: [f64; 2],
    /// Half-width of the uniform per-subject offsets applied to depth and
    /// thickness, in rows.
    pub subject_jitter: f64,
}

impl Default for LayerGeometry {
    fn default() -> Self {
        LayerGeometry {
            ilm_depth: 32.0,
            retina_thickness: 52.0,
            rpe_bm_gap: 5.0,
            curvature_amplitude: [3.0, 9.0],
            subject_jitter: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrusenConfig {
    /// When false no scan gets drusen, whatever its label.
    pub enabled: bool,
    pub count: [usize; 2],
    pub width_um: [f64; 2],
    pub height_px: [f64; 2],
}

impl Default for DrusenConfig {
    fn default() -> Self {
        DrusenConfig {
            enabled: true,
            count: [1, 3],
            width_um: [200.0, 500.0],
            height_px: [6.0, 14.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChoroidTexture {
    pub mean_intensity: f64,
    /// Vessel lumens per 1000 square pixels of choroid.
    pub blob_density: f64,
}

impl Default for ChoroidTexture {
    fn default() -> Self {
        ChoroidTexture {
            mean_intensity: 120.0,
            blob_density: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_width: usize,
    pub image_height: usize,
    /// Micrometers per row.
    pub axial_resolution: f64,
    /// Micrometers per column.
    pub lateral_resolution: f64,
    pub subjects_per_class: usize,
    pub bscans_per_subject: usize,
    pub layer_geometry: LayerGeometry,
    pub drusen: DrusenConfig,
    pub speckle_sigma: f64,
    /// Factor applied below BM under drusen; 1 disables shadowing.
    pub shadow_attenuation: f64,
    pub choroid_texture: ChoroidTexture,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_width: 256,
            image_height: 192,
            axial_resolution: 7.0,
            lateral_resolution: 25.0,
            subjects_per_class: 30,
            bscans_per_subject: 20,
            layer_geometry: LayerGeometry::default(),
            drusen: DrusenConfig::default(),
            speckle_sigma: 0.25,
            shadow_attenuation: 0.6,
            choroid_texture: ChoroidTexture::default(),
            seed: 2023,
        }
    }
}

fn ordered(name: &str, r: [f64; 2]) -> Result<(), SynthError> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(SynthError::InvalidConfig(format!(
            "{name} range [{}, {}] is empty",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image dimensions must be positive".into());
        }
        if !(self.lateral_resolution > 0.0 && self.axial_resolution > 0.0) {
            return bad("resolutions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.shadow_attenuation) {
            return bad(format!(
                "shadow_attenuation {} outside [0, 1]",
                self.shadow_attenuation
            ));
        }
        if !(self.speckle_sigma >= 0.0 && self.speckle_sigma.is_finite()) {
            return bad("speckle_sigma must be non-negative".into());
        }
        let g = &self.layer_geometry;
        ordered("curvature_amplitude", g.curvature_amplitude)?;
        if g.rpe_bm_gap < RPE_THICKNESS as f64 || g.retina_thickness <= g.rpe_bm_gap {
            return bad(format!(
                "rpe_bm_gap must be at least {RPE_THICKNESS} and below retina_thickness"
            ));
        }
        if g.subject_jitter < 0.0 {
            return bad("subject_jitter must be non-negative".into());
        }
        let d = &self.drusen;
        if d.enabled {
            if d.count[0] < 1 || d.count[0] > d.count[1] {
                return bad(format!(
                    "drusen count range {:?} must start at 1 or more",
                    d.count
                ));
            }
            ordered("drusen width_um", d.width_um)?;
            ordered("drusen height_px", d.height_px)?;
            if d.width_um[0] <= MIN_LARGE_DRUSEN_UM {
                return bad(format!(
                    "minimum drusen width {} um must exceed {MIN_LARGE_DRUSEN_UM} um",
                    d.width_um[0]
                ));
            }
            if d.height_px[0] <= 0.0 {
                return bad("drusen height must be positive".into());
            }
        }
        if self.choroid_texture.blob_density < 0.0 {
            return bad("blob_density must be non-negative".into());
        }
        Ok(())
    }

    pub fn druse_width_px(&self, width_um: f64) -> usize {
        (width_um / self.lateral_resolution).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub bscan: BScan,
    pub segmentation: LayerSegmentation,
    /// Columns lying under a druse.
    pub drusen_footprint: Vec<bool>,
    /// RPE elevation above its healthy baseline, per column.
    pub rpe_elevation: Vec<f64>,
    /// Column spans `[start, end)` of the individual drusen.
    pub drusen_spans: Vec<(usize, usize)>,
}

fn uniform(rng: &mut rng::Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn symmetric(rng: &mut rng::Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..half)
    }
}

struct SubjectTraits {
    depth: f64,
    thickness: f64,
    gap: f64,
}

fn subject_traits(config: &SynthConfig, subject_seed: u64) -> SubjectTraits {
    let g = &config.layer_geometry;
    let mut r = rng::stream(subject_seed, 0);
    SubjectTraits {
        depth: symmetric(&mut r, g.subject_jitter),
        thickness: symmetric(&mut r, g.subject_jitter),
        gap: symmetric(&mut r, 1.0),
    }
}

/// Retina intensity at `depth` rows below the ILM, `frac` of the way to the
/// healthy RPE position.
fn retina_intensity(depth: f64, frac: f64) -> f64 {
    let reflex = 110.0 * (-depth / 4.0).exp();
    let bands = 0.5 + 0.5 * (std::f64::consts::TAU * 2.5 * frac).cos();
    55.0 + reflex + 45.0 * bands
}

fn choroid_intensity(mean: f64, depth: f64) -> f64 {
    mean * (0.35 + 0.65 * (-depth / 45.0).exp())
}

struct Vessel {
    col: f64,
    depth: f64,
    rc: f64,
    rd: f64,
}

/// Render one labeled B-scan.
///
/// `subject_seed` fixes the per-subject anatomy; `index` selects the slice.
pub fn generate_bscan(
    config: &SynthConfig,
    subject_seed: u64,
    label: ClassLabel,
    index: usize,
) -> Result<GeneratedSample, SynthError> {
    config.validate()?;
    let (w, h) = (config.image_width, config.image_height);
    let g = &config.layer_geometry;
    let traits = subject_traits(config, subject_seed);
    let scan_seed = derive_seed(subject_seed, 1 + index as u64);

    // Geometry: cubic BM, quadratic thickness, integer BM rows.
    let mut geo = rng::stream(scan_seed, 0);
    let amp = g.curvature_amplitude;
    let a2 = uniform(&mut geo, amp) * if geo.random::<bool>() { 1.0 } else { -1.0 };
    let a1 = symmetric(&mut geo, amp[1] / 3.0);
    let a3 = symmetric(&mut geo, amp[1] / 4.0);
    let t1 = symmetric(&mut geo, 2.0);
    let t2 = symmetric(&mut geo, 4.0);
    let bm_base = g.ilm_depth + traits.depth + g.retina_thickness + traits.thickness;
    let thick_base = g.retina_thickness + traits.thickness;
    let gap = g.rpe_bm_gap + traits.gap;

    let mut bm = Vec::with_capacity(w);
    let mut ilm = Vec::with_capacity(w);
    let mut rpe_base = Vec::with_capacity(w);
    for c in 0..w {
        let u = if w > 1 {
            2.0 * c as f64 / (w - 1) as f64 - 1.0
        } else {
            0.0
        };
        let b = (bm_base + a1 * u + a2 * (u * u - 1.0 / 3.0) + a3 * u * u * u).round();
        let thickness = thick_base + t1 * u + t2 * (u * u - 1.0 / 3.0);
        bm.push(b);
        ilm.push(b - thickness);
        rpe_base.push(b - gap);
    }

    // Drusen.
    let mut elevation = vec![0.0f64; w];
    let mut footprint = vec![false; w];
    let mut spans = Vec::new();
    if label == ClassLabel::Amd && config.drusen.enabled {
        let d = &config.drusen;
        let mut dr = rng::stream(scan_seed, 1);
        let count = dr.random_range(d.count[0]..=d.count[1]);
        for _ in 0..count {
            let width_px = config.druse_width_px(uniform(&mut dr, d.width_um));
            let height = uniform(&mut dr, d.height_px);
            let half = width_px / 2;
            let centre = if w > 2 * half {
                dr.random_range(half..w - half)
            } else {
                w / 2
            };
            let sigma = width_px as f64 / 4.0;
            let start = centre.saturating_sub(half);
            let end = (centre + half + 1).min(w);
            for c in start..end {
                let x = (c as f64 - centre as f64) / sigma;
                let e = height * (-0.5 * x * x).exp();
                elevation[c] = elevation[c].max(e);
                footprint[c] = true;
            }
            spans.push((start, end));
        }
    }
    let rpe: Vec<f64> = rpe_base
        .iter()
        .zip(&elevation)
        .map(|(b, e)| b - e)
        .collect();

    let bottom = h as f64 - 1.0;
    for c in 0..w {
        if ilm[c] < 0.0 {
            return Err(SynthError::GeometryOutOfBounds {
                bound: "ILM above image top",
                column: c,
                value: ilm[c],
            });
        }
        if bm[c] > bottom {
            return Err(SynthError::GeometryOutOfBounds {
                bound: "BM below image bottom",
                column: c,
                value: bm[c],
            });
        }
        if rpe[c] < ilm[c] + 2.0 {
            return Err(SynthError::GeometryOutOfBounds {
                bound: "RPE rises through the ILM",
                column: c,
                value: rpe[c],
            });
        }
    }

    // Choroid vessels, positioned relative to the BM.
    let mut ch = rng::stream(scan_seed, 2);
    let tex = &config.choroid_texture;
    let n_vessels =
        (tex.blob_density * w as f64 * CHOROID_BAND / 1000.0).round() as usize;
    let vessels: Vec<Vessel> = (0..n_vessels)
        .map(|_| Vessel {
            col: ch.random_range(0.0..w as f64),
            depth: ch.random_range(4.0..CHOROID_BAND),
            rc: ch.random_range(3.0..9.0),
            rd: ch.random_range(2.0..6.0),
        })
        .collect();

    let mut clean = vec![0.0f64; w * h];
    for c in 0..w {
        let ilm_row = ilm[c].round() as usize;
        let rpe_row = rpe[c].round() as usize;
        let bm_row = bm[c] as usize;
        let healthy_span = (rpe_base[c] - ilm[c]).max(1.0);
        for r in 0..h {
            let v = if r < ilm_row {
                VITREOUS
            } else if r < rpe_row {
                let depth = r as f64 - ilm[c];
                retina_intensity(depth.max(0.0), depth / healthy_span)
            } else if r < rpe_row + RPE_THICKNESS && r < bm_row {
                RPE_INTENSITY
            } else if r < bm_row {
                SUB_RPE_INTENSITY
            } else {
                let depth = (r - bm_row) as f64;
                let mut v = if r == bm_row {
                    BM_INTENSITY
                } else {
                    choroid_intensity(tex.mean_intensity, depth)
                };
                for ves in &vessels {
                    let dc = (c as f64 - ves.col) / ves.rc;
                    let dd = (depth - ves.depth) / ves.rd;
                    if dc * dc + dd * dd <= 1.0 {
                        v *= VESSEL_LUMEN;
                        break;
                    }
                }
                if footprint[c] {
                    v *= config.shadow_attenuation;
                }
                v
            };
            clean[r * w + c] = v;
        }
    }

    let sigma = config.speckle_sigma;
    let pixels: Vec<u8> = if sigma > 0.0 {
        let mut noise = rng::stream(scan_seed, 3);
        let bias = -0.5 * sigma * sigma;
        clean
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(&mut noise);
                (v * (sigma * z + bias).exp()).round().clamp(0.0, 255.0) as u8
            })
            .collect()
    } else {
        clean
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    };

    let subject_id = format!("subject-{subject_seed:016x}");
    let bscan = BScan::new(
        w,
        h,
        pixels,
        subject_id.clone(),
        format!("{subject_id}-v0"),
        index,
        label,
    )
    .expect("dimensions checked");
    let segmentation = LayerSegmentation::new(ilm, rpe, bm, w, h).map_err(|e| {
        SynthError::InvalidConfig(format!("generated segmentation is invalid: {e}"))
    })?;
    Ok(GeneratedSample {
        bscan,
        segmentation,
        drusen_footprint: footprint,
        rpe_elevation: elevation,
        drusen_spans: spans,
    })
}

pub fn subject_id(label: ClassLabel, k: usize) -> String {
    format!("{}-{k:03}", label.name())
}

/// Seed of the subject with the given id under `config.seed`.
pub fn subject_seed(config: &SynthConfig, subject_id: &str) -> u64 {
    derive_seed(config.seed, name_hash(subject_id))
}

/// Generate one sample with dataset identities filled in.
pub fn generate_subject_scan(
    config: &SynthConfig,
    label: ClassLabel,
    subject: usize,
    index: usize,
) -> Result<GeneratedSample, SynthError> {
    let id = subject_id(label, subject);
    let mut s = generate_bscan(config, subject_seed(config, &id), label, index)?;
    s.bscan.volume_id = format!("{id}-v0");
    s.bscan.subject_id = id;
    Ok(s)
}

/// Write a full labeled dataset: PNG scans, JSON segmentations and a
/// `manifest.json`, all under `output_dir`.
pub fn generate_dataset(
    config: &SynthConfig,
    output_dir: &Path,
) -> Result<DatasetManifest, SynthError> {
    config.validate()?;
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let mut entries = Vec::new();
    for label in [ClassLabel::Amd, ClassLabel::Control] {
        for k in 0..config.subjects_per_class {
            for i in 0..config.bscans_per_subject {
                let s = generate_subject_scan(config, label, k, i)?;
                let stem = format!("{}_{i:03}", s.bscan.subject_id);
                let scan_rel = format!("scans/{stem}.png");
                let seg_rel = format!("segmentations/{stem}.json");
                let scan_path = output_dir.join(&scan_rel);
                io::write_png(&scan_path, s.bscan.width(), s.bscan.height(), s.bscan.pixels())
                    .map_err(io_err(&scan_path))?;
                let seg_path = output_dir.join(&seg_rel);
                let seg_json = serde_json::to_vec(&s.segmentation).expect("segmentation serializes");
                io::write_atomic(&seg_path, &seg_json).map_err(io_err(&seg_path))?;
                entries.push(ManifestEntry {
                    subject_id: s.bscan.subject_id.clone(),
                    label,
                    volume_id: s.bscan.volume_id.clone(),
                    scan_path: scan_rel,
                    segmentation_path: seg_rel,
                    index_in_volume: i,
                    split: None,
                });
            }
        }
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(&output_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Load one manifest entry's scan and segmentation.
pub fn load_entry(
    base: &Path,
    index: usize,
    entry: &ManifestEntry,
) -> Result<(BScan, LayerSegmentation), LoadError> {
    let scan_path = base.join(&entry.scan_path);
    let seg_path = base.join(&entry.segmentation_path);
    for p in [&scan_path, &seg_path] {
        if !p.is_file() {
            return Err(LoadError::MissingFile {
                entry: index,
                path: p.clone(),
            });
        }
    }
    let (w, h, px) = io::read_png(&scan_path).map_err(|e| LoadError::Decode {
        entry: index,
        path: scan_path.clone(),
        detail: e.to_string(),
    })?;
    let bscan = BScan::new(
        w,
        h,
        px,
        entry.subject_id.clone(),
        entry.volume_id.clone(),
        entry.index_in_volume,
        entry.label,
    )
    .map_err(|source| LoadError::DimensionMismatch {
        entry: index,
        path: scan_path.clone(),
        source,
    })?;
    let text = fs::read_to_string(&seg_path).map_err(|e| LoadError::Decode {
        entry: index,
        path: seg_path.clone(),
        detail: e.to_string(),
    })?;
    let seg: LayerSegmentation = serde_json::from_str(&text).map_err(|e| LoadError::Decode {
        entry: index,
        path: seg_path.clone(),
        detail: e.to_string(),
    })?;
    match seg.validate(w, h) {
        Ok(()) => Ok((bscan, seg)),
        Err(source @ InvalidData::SegmentationLength { .. }) => Err(LoadError::DimensionMismatch {
            entry: index,
            path: seg_path,
            source,
        }),
        Err(source) => Err(LoadError::Invariant {
            entry: index,
            path: seg_path,
            source,
        }),
    }
}

/// Load every entry of a manifest, in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<(BScan, LayerSegmentation)>, LoadError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_manifest_entries(base, &manifest)
}

pub fn load_manifest_entries(
    base: &Path,
    manifest: &DatasetManifest,
) -> Result<Vec<(BScan, LayerSegmentation)>, LoadError> {
    manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| load_entry(base, i, e))
        .collect()
}
