use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use super::model::{bce, normalize};
use super::{cast, sgd_nesterov_step, AugmentConfig, AugmentParams, Model, NnError, Scalar};
use crate::rng;
use crate::types::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub augmentation: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 2500,
            patience: 20,
            seed: 0,
            augmentation: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::TrainConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1".into());
        }
        self.augmentation.validate()
    }
}

/// Images (0..255) with 0/1 labels.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub images: &'a [Image],
    pub labels: &'a [u8],
}

impl<'a> Samples<'a> {
    pub fn new(images: &'a [Image], labels: &'a [u8]) -> Self {
        assert_eq!(images.len(), labels.len(), "one label per image");
        Samples { images, labels }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience counter on validation loss. An epoch improves only if its loss
/// is below the best so far by more than 1e-9.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Record an epoch; returns whether it is the new best.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best - 1e-9 {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn evaluate<T: Scalar>(model: &Model<T>, set: Samples<'_>) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (img, &y) in set.images.iter().zip(set.labels) {
        let p = sigmoid(model.logit(&normalize::<T>(img)));
        loss += bce(p, cast(f64::from(y))).to_f64().unwrap_or(f64::NAN);
        correct += usize::from((p >= cast(0.5)) == (y == 1));
    }
    let n = set.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Mini-batch Nesterov SGD with early stopping on validation loss.
///
/// The sample order is reshuffled every epoch and every sample gets its own
/// augmentation stream, both derived from `config.seed`. Returns the weights
/// of the best validation epoch.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_set: Samples<'_>,
    val_set: Samples<'_>,
    config: &TrainConfig,
) -> Result<(Model<T>, History), NnError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(NnError::EmptySet("validation"));
    }
    if let Some(&y) = train_set.labels.iter().chain(val_set.labels).find(|&&y| y > 1) {
        return Err(NnError::Label(f64::from(y)));
    }
    let [rows, cols] = model.config().input_size;
    if let Some(img) = train_set
        .images
        .iter()
        .chain(val_set.images)
        .find(|i| i.rows != rows || i.cols != cols)
    {
        return Err(NnError::Shape {
            expected: vec![rows, cols],
            actual: vec![img.rows, img.cols],
        });
    }

    let lr: T = cast(config.learning_rate);
    let momentum: T = cast(config.momentum);
    let mut velocity = vec![T::zero(); model.num_params()];
    let mut grad = vec![T::zero(); model.num_params()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.params.clone();
    let mut history = History::default();

    for epoch in 1..=config.max_epochs {
        let epoch_seed = rng::derive_seed(config.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(epoch_seed, u64::MAX));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            grad.fill(T::zero());
            let scale = T::one() / cast(batch.len() as f64);
            let mut batch_loss = 0.0;
            for &i in batch {
                let img = &train_set.images[i];
                let params = AugmentParams::sample(
                    &config.augmentation,
                    &mut rng::stream(epoch_seed, i as u64),
                    rows,
                    cols,
                );
                let input = normalize::<T>(&params.apply(img));
                let y = train_set.labels[i];
                let (l, p) = model.accumulate_grad(&input, cast(f64::from(y)), scale, &mut grad);
                batch_loss += l.to_f64().unwrap_or(f64::NAN);
                correct += usize::from((p >= cast(0.5)) == (y == 1));
            }
            if !batch_loss.is_finite() {
                return Err(NnError::NonFinite { epoch: Some(epoch) });
            }
            loss_sum += batch_loss;
            sgd_nesterov_step(&mut model.params, &grad, &mut velocity, lr, momentum);
        }
        let (val_loss, val_acc) = evaluate(&model, val_set);
        if !val_loss.is_finite() {
            return Err(NnError::NonFinite { epoch: Some(epoch) });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        });
        if stopper.update(epoch, val_loss) {
            best.copy_from_slice(&model.params);
        }
        if stopper.should_stop() {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    model.params = best;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_stops_after_patience() {
        let mut s = EarlyStopping::new(20);
        let mut last = 0;
        for epoch in 1..=1000 {
            s.update(epoch, 0.7);
            last = epoch;
            if s.should_stop() {
                break;
            }
        }
        assert_eq!(last, 21);
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn decreasing_loss_never_stops() {
        let mut s = EarlyStopping::new(3);
        for epoch in 1..=200 {
            assert!(s.update(epoch, 1.0 / epoch as f64));
            assert!(!s.should_stop());
        }
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut s = EarlyStopping::new(2);
        assert!(s.update(1, 0.5));
        assert!(!s.update(2, 0.5 - 1e-10));
        assert!(s.update(3, 0.5 - 1e-8));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                patience: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.1}"#).is_err());
    }
}
