use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    bce_with_logit, conv3x3_backward, conv3x3_forward, dense_backward, dense_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, sigmoid,
};
use super::{cast, NnError, Scalar, Tensor};
use crate::roi::DEFAULT_TARGET_SIZE;
use crate::types::Image;

fn default_input() -> [usize; 2] {
    DEFAULT_TARGET_SIZE
}
fn default_channels() -> Vec<usize> {
    vec![8, 16, 32]
}
fn default_convs() -> Vec<usize> {
    vec![2, 2, 3]
}
fn default_dense() -> Vec<usize> {
    vec![64]
}

/// Architecture: `blocks x (convs x [conv3x3 + ReLU] + maxpool2)`, then
/// dense ReLU layers and a single sigmoid output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// (rows, cols)
    #[serde(default = "default_input")]
    pub input_size: [usize; 2],
    #[serde(default = "default_channels")]
    pub block_channels: Vec<usize>,
    #[serde(default = "default_convs")]
    pub convs_per_block: Vec<usize>,
    #[serde(default = "default_dense")]
    pub dense_sizes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: default_input(),
            block_channels: default_channels(),
            convs_per_block: default_convs(),
            dense_sizes: default_dense(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.block_channels.len() != self.convs_per_block.len() {
            return bad("block_channels and convs_per_block differ in length");
        }
        if self.block_channels.contains(&0) || self.convs_per_block.contains(&0) {
            return bad("every block needs at least one conv and one channel");
        }
        if self.dense_sizes.contains(&0) {
            return bad("dense layer sizes must be positive");
        }
        let k = self.block_channels.len() as u32;
        let [r, c] = self.input_size;
        if r >> k == 0 || c >> k == 0 {
            return Err(NnError::Config(format!(
                "input {r}x{c} is too small for {k} pooling stages"
            )));
        }
        Ok(())
    }
}

/// Named slice of the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Conv {
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        wo: usize,
        bo: usize,
    },
    Pool {
        c: usize,
        h: usize,
        w: usize,
    },
    Dense {
        nin: usize,
        nout: usize,
        wo: usize,
        bo: usize,
        relu: bool,
    },
}

impl Op {
    fn out_len(&self) -> usize {
        match *self {
            Op::Conv { cout, h, w, .. } => cout * h * w,
            Op::Pool { c, h, w } => c * (h / 2) * (w / 2),
            Op::Dense { nout, .. } => nout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    ops: Vec<Op>,
    pub params: Vec<T>,
}

struct Trace<T> {
    outputs: Vec<Vec<T>>,
    argmax: Vec<Vec<usize>>,
}

impl<T: Scalar> Model<T> {
    /// Model with every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut specs = Vec::new();
        let mut ops = Vec::new();
        let mut total = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            specs.push(ParamSpec {
                name,
                shape,
                offset,
            });
            offset
        };
        let [mut h, mut w] = config.input_size;
        let mut cin = 1;
        for (b, (&cout, &n)) in config
            .block_channels
            .iter()
            .zip(&config.convs_per_block)
            .enumerate()
        {
            for j in 0..n {
                let wo = push(format!("block{b}.conv{j}.weight"), vec![cout, cin, 3, 3]);
                let bo = push(format!("block{b}.conv{j}.bias"), vec![cout]);
                ops.push(Op::Conv {
                    cin,
                    cout,
                    h,
                    w,
                    wo,
                    bo,
                });
                cin = cout;
            }
            ops.push(Op::Pool { c: cin, h, w });
            h /= 2;
            w /= 2;
        }
        let mut nin = cin * h * w;
        let sizes: Vec<usize> = config.dense_sizes.iter().copied().chain([1]).collect();
        let last = sizes.len() - 1;
        for (k, &nout) in sizes.iter().enumerate() {
            let name = if k == last {
                "head".to_string()
            } else {
                format!("dense{k}")
            };
            let wo = push(format!("{name}.weight"), vec![nout, nin]);
            let bo = push(format!("{name}.bias"), vec![nout]);
            ops.push(Op::Dense {
                nin,
                nout,
                wo,
                bo,
                relu: k != last,
            });
            nin = nout;
        }
        Ok(Model {
            config,
            specs,
            ops,
            params: vec![T::zero(); total],
        })
    }

    /// He-normal weights, zero biases, drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        let mut m = Model::zeros(config)?;
        let mut rng = crate::rng::rng_from(seed);
        for spec in &m.specs {
            if !spec.name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = spec.shape[1..].iter().product();
            let gain = if spec.name.starts_with("head") { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            for p in &mut m.params[spec.offset..spec.offset + spec.len()] {
                *p = cast(normal.sample(&mut rng));
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.config.input_size[0] * self.config.input_size[1]
    }

    /// Same architecture and values in another float type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            specs: self.specs.clone(),
            ops: self.ops.clone(),
            params: self
                .params
                .iter()
                .map(|&p| U::from(p).expect("finite parameter"))
                .collect(),
        }
    }

    fn run(&self, input: &[T]) -> Trace<T> {
        let p = &self.params;
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.ops.len());
        let mut argmax = Vec::new();
        for op in &self.ops {
            let x = outputs.last().map(|v| v.as_slice()).unwrap_or(input);
            let mut y = vec![T::zero(); op.out_len()];
            match *op {
                Op::Conv {
                    cin,
                    cout,
                    h,
                    w,
                    wo,
                    bo,
                } => {
                    conv3x3_forward(
                        x,
                        cin,
                        h,
                        w,
                        &p[wo..wo + cout * cin * 9],
                        &p[bo..bo + cout],
                        cout,
                        &mut y,
                    );
                    relu_forward(&mut y);
                }
                Op::Pool { c, h, w } => argmax.push(maxpool2_forward(x, c, h, w, &mut y)),
                Op::Dense {
                    nin,
                    nout,
                    wo,
                    bo,
                    relu,
                } => {
                    dense_forward(x, &p[wo..wo + nin * nout], &p[bo..bo + nout], &mut y);
                    if relu {
                        relu_forward(&mut y);
                    }
                }
            }
            outputs.push(y);
        }
        Trace { outputs, argmax }
    }

    /// Final logit for one flattened `rows x cols` sample.
    pub fn logit(&self, input: &[T]) -> T {
        self.run(input).outputs.last().expect("head")[0]
    }

    /// Accumulate the gradient of the sample's loss, scaled by `scale`, into
    /// `grad`. Returns (unscaled loss, probability).
    pub fn accumulate_grad(&self, input: &[T], label: T, scale: T, grad: &mut [T]) -> (T, T) {
        let trace = self.run(input);
        let z = trace.outputs.last().expect("head")[0];
        let (loss, dz) = bce_with_logit(z, label);
        let p = &self.params;
        let mut g = vec![dz * scale];
        let mut pools = trace.argmax.len();
        for (k, op) in self.ops.iter().enumerate().rev() {
            let x = if k == 0 {
                input
            } else {
                &trace.outputs[k - 1]
            };
            let need_in = k > 0;
            let mut gin = if need_in {
                vec![T::zero(); x.len()]
            } else {
                Vec::new()
            };
            match *op {
                Op::Conv {
                    cin,
                    cout,
                    h,
                    w,
                    wo,
                    bo,
                } => {
                    relu_backward(&trace.outputs[k], &mut g);
                    let (gw, gb) = split_pair(grad, wo, cout * cin * 9, bo, cout);
                    conv3x3_backward(
                        x,
                        cin,
                        h,
                        w,
                        &p[wo..wo + cout * cin * 9],
                        cout,
                        &g,
                        need_in.then_some(gin.as_mut_slice()),
                        gw,
                        gb,
                    );
                }
                Op::Pool { .. } => {
                    pools -= 1;
                    maxpool2_backward(&trace.argmax[pools], &g, &mut gin);
                }
                Op::Dense {
                    nin,
                    nout,
                    wo,
                    bo,
                    relu,
                } => {
                    if relu {
                        relu_backward(&trace.outputs[k], &mut g);
                    }
                    let (gw, gb) = split_pair(grad, wo, nin * nout, bo, nout);
                    dense_backward(
                        x,
                        &p[wo..wo + nin * nout],
                        &g,
                        need_in.then_some(gin.as_mut_slice()),
                        gw,
                        gb,
                    );
                }
            }
            g = gin;
        }
        (loss, sigmoid(z))
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<(), NnError> {
        let [r, c] = self.config.input_size;
        let s = batch.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != r || s[3] != c {
            return Err(NnError::Shape {
                expected: vec![s.first().copied().unwrap_or(0), 1, r, c],
                actual: s.to_vec(),
            });
        }
        Ok(())
    }
}

/// Two disjoint mutable windows (`weight`, `bias`) of the gradient buffer.
fn split_pair<T>(buf: &mut [T], wo: usize, wn: usize, bo: usize, bn: usize) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(wo + wn, bo);
    let (a, b) = buf.split_at_mut(bo);
    (&mut a[wo..wo + wn], &mut b[..bn])
}

/// Per-sample binary cross-entropy of a probability, clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce<T: Scalar>(p: T, y: T) -> T {
    let eps = cast::<T>(1e-7);
    let p = p.max(eps).min(T::one() - eps);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Probabilities for a `[n, 1, rows, cols]` batch.
pub fn forward<T: Scalar>(model: &Model<T>, batch: &Tensor<T>) -> Result<Vec<T>, NnError> {
    model.check_batch(batch)?;
    Ok((0..batch.shape()[0])
        .map(|i| sigmoid(model.logit(batch.sample(i))))
        .collect())
}

/// Mean BCE over the batch and its gradient for every parameter.
pub fn loss_and_grad<T: Scalar>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[T],
) -> Result<(T, Vec<T>), NnError> {
    model.check_batch(batch)?;
    let n = batch.shape()[0];
    if labels.len() != n {
        return Err(NnError::Shape {
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(NnError::Label(y.to_f64().unwrap_or(f64::NAN)));
    }
    let scale = T::one() / cast(n as f64);
    let mut grad = vec![T::zero(); model.num_params()];
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        total += model.accumulate_grad(batch.sample(i), y, scale, &mut grad).0;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(NnError::NonFinite { epoch: None });
    }
    Ok((loss, grad))
}

/// Scale 0..255 intensities to 0..1 model input.
pub(crate) fn normalize<T: Scalar>(image: &Image) -> Vec<T> {
    let k = cast::<T>(1.0 / 255.0);
    image.data.iter().map(|&v| cast::<T>(f64::from(v)) * k).collect()
}

/// Probabilities for 0..255 images of the model's input size.
pub fn predict(model: &Model<f32>, images: &[Image]) -> Result<Vec<f32>, NnError> {
    let [r, c] = model.config.input_size;
    images
        .iter()
        .map(|img| {
            if img.rows != r || img.cols != c {
                return Err(NnError::Shape {
                    expected: vec![r, c],
                    actual: vec![img.rows, img.cols],
                });
            }
            Ok(sigmoid(model.logit(&normalize(img))))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: [8, 8],
            block_channels: vec![2, 3],
            convs_per_block: vec![1, 1],
            dense_sizes: vec![4],
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let m = Model::<f32>::zeros(tiny()).unwrap();
        let mut next = 0;
        for s in m.specs() {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, m.num_params());
        // 2*1*9+2 + 3*2*9+3 + 4*(3*2*2)+4 + 1*4+1
        assert_eq!(m.num_params(), 20 + 57 + 52 + 5);
    }

    #[test]
    fn zero_model_gives_one_half() {
        let m = Model::<f32>::zeros(tiny()).unwrap();
        let batch = Tensor::new(vec![3, 1, 8, 8], (0..192).map(|i| i as f32).collect()).unwrap();
        assert_eq!(forward(&m, &batch).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn batch_independence_and_shape_errors() {
        let m = Model::<f32>::new(tiny(), 3).unwrap();
        let data: Vec<f32> = (0..8 * 64).map(|i| ((i * 7) % 13) as f32 / 13.0).collect();
        let batch = Tensor::new(vec![8, 1, 8, 8], data.clone()).unwrap();
        let all = forward(&m, &batch).unwrap();
        let one = Tensor::new(vec![1, 1, 8, 8], data[5 * 64..6 * 64].to_vec()).unwrap();
        assert!((forward(&m, &one).unwrap()[0] - all[5]).abs() < 1e-6);
        let wrong = Tensor::new(vec![1, 1, 8, 7], vec![0.0; 56]).unwrap();
        let err = forward(&m, &wrong).unwrap_err().to_string();
        assert!(err.contains("[1, 1, 8, 8]") && err.contains("[1, 1, 8, 7]"), "{err}");
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.5f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5f64, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(1.0f64, 1.0) <= -(1.0f64 - 1e-7).ln() + 1e-15);
        assert!(bce(0.0f64, 0.0) <= 1.0000001e-7);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.convs_per_block.push(1);
        assert!(Model::<f32>::zeros(c).is_err());
        let mut c = tiny();
        c.input_size = [3, 8];
        assert!(Model::<f32>::zeros(c).is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"blocks": 2}"#).is_err());
    }
}
