use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report;
use super::{
    DatasetSource, Evaluation, ExperimentConfig, ExperimentError, PairComparison, RunResults,
    StageTiming, VariantMetrics,
};
use crate::dataset::{filter_central, split_subjects, DatasetManifest, SplitAssignment};
use crate::eval::{auroc, delong_test, metrics_report, ComparisonResult, ScoreSet};
use crate::nn::{self, History, Model, Samples, TrainConfig};
use crate::rng::{derive_seed, name_hash};
use crate::roi::{prepare_roi, RoiKind, RoiRequest};
use crate::synth::{generate_dataset, load_entry};
use crate::types::{ClassLabel, Image};
use crate::io;

const SPLIT_STREAM: u64 = 1;
const BOOTSTRAP_STREAM: u64 = 2;

type Res<T> = Result<T, ExperimentError>;

/// One extracted, resized and 8-bit quantized ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSample {
    pub subject_id: String,
    pub volume_id: String,
    pub index_in_volume: usize,
    pub label: ClassLabel,
    pub split: SplitAssignment,
    /// Extracted size before resizing, (rows, cols).
    pub pre_size: [usize; 2],
    /// PNG path relative to the variant directory.
    pub file: String,
    #[serde(skip)]
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSet {
    pub variant: RoiRequest,
    pub rows: usize,
    pub cols: usize,
    pub samples: Vec<RoiSample>,
}

impl RoiSet {
    pub fn name(&self) -> String {
        self.variant.variant_name()
    }

    /// Images (0..255) and 0/1 labels of one split, in manifest order.
    pub fn split(&self, split: SplitAssignment) -> (Vec<Image>, Vec<u8>, Vec<&RoiSample>) {
        let picked: Vec<&RoiSample> = self.samples.iter().filter(|s| s.split == split).collect();
        let images = picked
            .iter()
            .map(|s| Image::from_u8(self.rows, self.cols, &s.pixels).expect("stored size"))
            .collect();
        let labels = picked.iter().map(|s| s.label.as_u8()).collect();
        (images, labels, picked)
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub manifest: DatasetManifest,
    pub rois: Vec<RoiSet>,
}

impl PreparedData {
    pub fn roi(&self, name: &str) -> Option<&RoiSet> {
        self.rois.iter().find(|r| r.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub subject_id: String,
    pub volume_id: String,
    pub index_in_volume: usize,
    pub label: u8,
    pub score: f64,
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    io::write_atomic(path, &w.into_inner().map_err(|e| e.to_string())?)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, Box<dyn std::error::Error + Send + Sync>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<ScoreRow>, _>>()?;
    Ok(rows)
}

pub fn score_set_from_rows(rows: &[ScoreRow]) -> Result<ScoreSet, crate::eval::EvalError> {
    ScoreSet::new(
        rows.iter().map(|r| r.score).collect(),
        rows.iter().map(|r| r.label).collect(),
        rows.iter().map(|r| r.subject_id.clone()).collect(),
    )
}

fn quantize(kind: RoiKind, img: &Image) -> Vec<u8> {
    if kind == RoiKind::RpeBmMaskOnly {
        img.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        img.to_u8()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    io::write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Box<dyn std::error::Error + Send + Sync>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Owns one run directory and runs its stages.
#[derive(Debug, Clone)]
pub struct Runner {
    pub config: ExperimentConfig,
    pub run_dir: PathBuf,
}

impl Runner {
    /// Validate `config` and create a fresh timestamped run directory.
    pub fn create(config: ExperimentConfig) -> Res<Self> {
        config.validate()?;
        let stamp = chrono::Local::now().format("run-%Y%m%d-%H%M%S").to_string();
        let mut run_dir = config.output_dir.join(&stamp);
        let mut k = 1;
        while run_dir.exists() {
            run_dir = config.output_dir.join(format!("{stamp}-{k}"));
            k += 1;
        }
        fs::create_dir_all(&run_dir).map_err(ExperimentError::stage("setup"))?;
        write_json(&run_dir.join("config.json"), &config).map_err(ExperimentError::stage("setup"))?;
        Ok(Runner { config, run_dir })
    }

    /// Reopen an existing run directory using its saved config.
    pub fn open(run_dir: &Path) -> Res<Self> {
        let config = ExperimentConfig::load(&run_dir.join("config.json"))?;
        Ok(Runner {
            config,
            run_dir: run_dir.to_owned(),
        })
    }

    pub fn variant_names(&self) -> Vec<String> {
        self.config.roi_variants.iter().map(|v| v.variant_name()).collect()
    }

    pub fn variant(&self, name: &str) -> Res<&RoiRequest> {
        self.config
            .roi_variants
            .iter()
            .find(|v| v.variant_name() == name)
            .ok_or_else(|| ExperimentError::Validation(format!("unknown variant {name}")))
    }

    /// Seed of everything random in one variant's training.
    pub fn variant_seed(&self, name: &str) -> u64 {
        derive_seed(self.config.seed, name_hash(name))
    }

    pub fn rois_dir(&self, name: &str) -> PathBuf {
        self.run_dir.join("rois").join(name)
    }

    pub fn model_dir(&self, name: &str) -> PathBuf {
        self.run_dir.join("models").join(name)
    }

    pub fn scores_path(&self, name: &str) -> PathBuf {
        self.run_dir.join("scores").join(format!("{name}.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.run_dir.join("reports")
    }

    fn split_manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest_split.json")
    }

    /// Dataset, central selection, subject split and ROI extraction.
    pub fn prepare(&self) -> Res<PreparedData> {
        self.prepare_timed(&mut Vec::new())
    }

    fn prepare_timed(&self, timings: &mut Vec<StageTiming>) -> Res<PreparedData> {
        let mut clock = Clock::new(timings);
        let (base, manifest) = match &self.config.dataset {
            DatasetSource::Synth(s) => {
                let dir = self.run_dir.join("dataset");
                let m = generate_dataset(s, &dir).map_err(ExperimentError::stage("dataset"))?;
                (dir, m)
            }
            DatasetSource::Manifest(p) => {
                let m = DatasetManifest::load(p).map_err(ExperimentError::stage("dataset"))?;
                (p.parent().unwrap_or(Path::new(".")).to_owned(), m)
            }
        };
        clock.lap("dataset");

        let central = filter_central(&manifest, self.config.keep_fraction);
        central
            .save(&self.run_dir.join("manifest_central.json"))
            .map_err(ExperimentError::stage("selection"))?;
        clock.lap("selection");

        let split_seed = derive_seed(self.config.seed, SPLIT_STREAM);
        let split = split_subjects(&central, self.config.split_ratios, split_seed)
            .map_err(ExperimentError::stage("split"))?;
        split
            .save(&self.split_manifest_path())
            .map_err(ExperimentError::stage("split"))?;
        clock.lap("split");

        let rois = self.extract_rois(&base, &split)?;
        clock.lap("roi");
        Ok(PreparedData {
            manifest: split,
            rois,
        })
    }

    fn extract_rois(&self, base: &Path, manifest: &DatasetManifest) -> Res<Vec<RoiSet>> {
        let stage = ExperimentError::stage::<Box<dyn std::error::Error + Send + Sync>>("roi");
        let mut sets: Vec<RoiSet> = self
            .config
            .roi_variants
            .iter()
            .map(|v| RoiSet {
                variant: v.clone(),
                rows: v.target_size[0],
                cols: v.target_size[1],
                samples: Vec::new(),
            })
            .collect();
        let result = (|| -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
            for (i, e) in manifest.entries.iter().enumerate() {
                let (scan, seg) = load_entry(base, i, e)?;
                let split = e.split.ok_or("manifest entry without split")?;
                for set in &mut sets {
                    let (img, pre) = prepare_roi(&scan, &seg, &set.variant)
                        .map_err(|err| format!("{} on {}#{}: {err}", set.name(), e.volume_id, e.index_in_volume))?;
                    let file = format!("{}/{}_{:03}.png", split.name(), e.volume_id, e.index_in_volume);
                    let pixels = quantize(set.variant.kind, &img);
                    io::write_png(&self.rois_dir(&set.name()).join(&file), set.cols, set.rows, &pixels)?;
                    set.samples.push(RoiSample {
                        subject_id: e.subject_id.clone(),
                        volume_id: e.volume_id.clone(),
                        index_in_volume: e.index_in_volume,
                        label: e.label,
                        split,
                        pre_size: pre,
                        file,
                        pixels,
                    });
                }
            }
            for set in &sets {
                write_json(&self.rois_dir(&set.name()).join("index.json"), set)?;
            }
            Ok(())
        })();
        result.map_err(stage)?;
        Ok(sets)
    }

    /// Read the outputs of [`Runner::prepare`] back from disk.
    pub fn load_prepared(&self) -> Res<PreparedData> {
        let manifest =
            DatasetManifest::load(&self.split_manifest_path()).map_err(ExperimentError::stage("roi"))?;
        let rois = self
            .variant_names()
            .iter()
            .map(|n| self.load_roi_set(n))
            .collect::<Res<Vec<_>>>()?;
        Ok(PreparedData { manifest, rois })
    }

    pub fn load_roi_set(&self, name: &str) -> Res<RoiSet> {
        let dir = self.rois_dir(name);
        let load = || -> Result<RoiSet, Box<dyn std::error::Error + Send + Sync>> {
            let mut set: RoiSet = read_json(&dir.join("index.json"))?;
            for s in &mut set.samples {
                let (w, h, px) = io::read_png(&dir.join(&s.file))?;
                if (w, h) != (set.cols, set.rows) {
                    return Err(format!("{} is {w}x{h}, expected {}x{}", s.file, set.cols, set.rows).into());
                }
                s.pixels = px;
            }
            Ok(set)
        };
        load().map_err(ExperimentError::stage("roi"))
    }

    /// Train one variant from scratch and persist its checkpoint and history.
    pub fn train_variant(&self, set: &RoiSet) -> Res<(Model<f32>, History)> {
        let name = set.name();
        let seed = self.variant_seed(&name);
        let (tr_x, tr_y, _) = set.split(SplitAssignment::Train);
        let (va_x, va_y, _) = set.split(SplitAssignment::Val);
        let model = Model::<f32>::new(self.config.model.clone(), derive_seed(seed, 0))
            .map_err(ExperimentError::stage("train"))?;
        let tc = TrainConfig {
            seed: derive_seed(seed, 1),
            ..self.config.train.clone()
        };
        let (model, history) = nn::train(model, Samples::new(&tr_x, &tr_y), Samples::new(&va_x, &va_y), &tc)
            .map_err(|e| ExperimentError::Stage {
                stage: "train",
                source: format!("{name}: {e}").into(),
            })?;
        let dir = self.model_dir(&name);
        nn::save_checkpoint(&model, &dir).map_err(ExperimentError::stage("train"))?;
        report::write_history(&dir.join("history.csv"), &history).map_err(ExperimentError::stage("train"))?;
        write_json(&dir.join("history.json"), &history).map_err(ExperimentError::stage("train"))?;
        Ok((model, history))
    }

    pub fn load_model(&self, name: &str) -> Res<(Model<f32>, History)> {
        let dir = self.model_dir(name);
        let model = nn::load_checkpoint(&dir).map_err(ExperimentError::stage("score"))?;
        let history = read_json(&dir.join("history.json")).map_err(ExperimentError::stage("score"))?;
        Ok((model, history))
    }

    /// Score the test split and write `scores/<variant>.csv`.
    pub fn score_variant(&self, model: &Model<f32>, set: &RoiSet) -> Res<Vec<ScoreRow>> {
        let (x, _, meta) = set.split(SplitAssignment::Test);
        let probs = nn::predict(model, &x).map_err(ExperimentError::stage("score"))?;
        let rows: Vec<ScoreRow> = meta
            .iter()
            .zip(probs)
            .map(|(s, p)| ScoreRow {
                subject_id: s.subject_id.clone(),
                volume_id: s.volume_id.clone(),
                index_in_volume: s.index_in_volume,
                label: s.label.as_u8(),
                score: f64::from(p),
            })
            .collect();
        write_scores(&self.scores_path(&set.name()), &rows).map_err(ExperimentError::stage("score"))?;
        Ok(rows)
    }

    /// Train and score every variant, `config.threads` at a time.
    pub fn train_all(&self, data: &PreparedData) -> Res<Vec<(String, History)>> {
        let n = data.rois.len();
        let threads = self.config.threads.clamp(1, n.max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Res<History>>>> = Mutex::new((0..n).map(|_| None).collect());
        let work = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= n {
                break;
            }
            let set = &data.rois[i];
            let out = self
                .train_variant(set)
                .and_then(|(m, h)| self.score_variant(&m, set).map(|_| h));
            slots.lock().expect("no poisoned workers")[i] = Some(out);
        };
        if threads == 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..threads {
                    s.spawn(work);
                }
            });
        }
        slots
            .into_inner()
            .expect("no poisoned workers")
            .into_iter()
            .zip(&data.rois)
            .map(|(h, set)| Ok((set.name(), h.expect("every slot filled")?)))
            .collect()
    }

    /// Per-variant score sets read back from `scores/`.
    pub fn load_scores(&self) -> Res<Vec<(String, ScoreSet)>> {
        self.load_scores_of(&self.variant_names())
    }

    pub fn load_scores_of(&self, names: &[String]) -> Res<Vec<(String, ScoreSet)>> {
        names
            .iter()
            .cloned()
            .map(|n| {
                let rows = read_scores(&self.scores_path(&n)).map_err(ExperimentError::stage("evaluate"))?;
                let set = score_set_from_rows(&rows).map_err(ExperimentError::stage("evaluate"))?;
                Ok((n, set))
            })
            .collect()
    }

    /// Metrics with bootstrap intervals for each variant and DeLong tests
    /// for every pair; written to `metrics.json`.
    pub fn evaluate(&self, scores: &[(String, ScoreSet)]) -> Res<Evaluation> {
        let e = &self.config.eval;
        let boot_seed = derive_seed(self.config.seed, BOOTSTRAP_STREAM);
        let stage = ExperimentError::stage::<crate::eval::EvalError>("evaluate");
        let mut variants = Vec::new();
        for (name, set) in scores {
            let req = self.variant(name)?;
            let report = metrics_report(set, e.threshold, e.bootstrap_b, e.alpha, boot_seed)
                .map_err(ExperimentError::stage("evaluate"))?;
            variants.push(VariantMetrics {
                name: name.clone(),
                kind: req.kind,
                method: req.effective_method(),
                report,
            });
        }
        let comparisons = pairwise_delong(scores, e.delong_mode).map_err(stage)?;
        let evaluation = Evaluation {
            variants,
            comparisons,
        };
        write_json(&self.run_dir.join("metrics.json"), &evaluation)
            .map_err(ExperimentError::stage("evaluate"))?;
        Ok(evaluation)
    }

    /// Tables, ROC curves and training histories under `reports/`.
    pub fn report(
        &self,
        evaluation: &Evaluation,
        scores: &[(String, ScoreSet)],
        histories: &[(String, History)],
    ) -> Res<Vec<PathBuf>> {
        report::emit_report(evaluation, scores, histories, &self.reports_dir())
            .map_err(ExperimentError::stage("report"))
    }

    /// Histories of every variant that has a saved model.
    pub fn load_histories(&self) -> Vec<(String, History)> {
        self.variant_names()
            .into_iter()
            .filter_map(|n| {
                let h = read_json::<History>(&self.model_dir(&n).join("history.json")).ok()?;
                Some((n, h))
            })
            .collect()
    }

    /// Every stage in order.
    pub fn run(self) -> Res<RunResults> {
        let mut timings = Vec::new();
        let data = self.prepare_timed(&mut timings)?;
        let mut clock = Clock::new(&mut timings);
        let histories = self.train_all(&data)?;
        clock.lap("train");
        drop(data);
        let scores = self.load_scores()?;
        let evaluation = self.evaluate(&scores)?;
        clock.lap("evaluate");
        let artifacts = self.report(&evaluation, &scores, &histories)?;
        clock.lap("report");
        let results = RunResults {
            run_dir: self.run_dir.clone(),
            config: self.config.clone(),
            evaluation,
            histories,
            artifacts,
            timings,
        };
        write_json(&self.run_dir.join("run_results.json"), &results)
            .map_err(ExperimentError::stage("report"))?;
        Ok(results)
    }
}

/// DeLong tests over every unordered pair, in variant order.
///
/// A pair whose variance estimate is zero while the AUROCs differ (for
/// example a perfect model against a constant one) is reported with
/// `p = 0` and `z = ±f64::MAX` instead of failing the whole matrix.
pub fn pairwise_delong(
    scores: &[(String, ScoreSet)],
    mode: crate::eval::DelongMode,
) -> Result<Vec<PairComparison>, crate::eval::EvalError> {
    let mut out = Vec::new();
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            let (a, b) = (&scores[i].1, &scores[j].1);
            let result = match delong_test(a, b, mode) {
                Err(crate::eval::EvalError::Degenerate(diff)) => ComparisonResult {
                    auroc_a: auroc(a)?,
                    auroc_b: auroc(b)?,
                    z: f64::MAX.copysign(diff),
                    p_value: 0.0,
                    mode,
                },
                r => r?,
            };
            out.push(PairComparison {
                a: scores[i].0.clone(),
                b: scores[j].0.clone(),
                result,
            });
        }
    }
    Ok(out)
}

struct Clock<'a> {
    start: Instant,
    out: &'a mut Vec<StageTiming>,
}

impl<'a> Clock<'a> {
    fn new(out: &'a mut Vec<StageTiming>) -> Self {
        Clock {
            start: Instant::now(),
            out,
        }
    }

    fn lap(&mut self, stage: &str) {
        self.out.push(StageTiming {
            stage: stage.to_string(),
            seconds: self.start.elapsed().as_secs_f64(),
        });
        self.start = Instant::now();
    }
}
