//! A small VGG-style binary classifier with hand-written backpropagation.
//!
//! Parameters live in one flat buffer per model so the optimizer and the
//! checkpoint format only ever see a slice. Layers are generic over the
//! float type; training uses `f32`, gradient checks use `f64`.

mod augment;
mod checkpoint;
pub mod layers;
mod model;
mod optim;
mod tensor;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use thiserror::Error;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use model::{bce, forward, loss_and_grad, predict, Model, ModelConfig, ParamSpec};
pub use optim::sgd_nesterov_step;
pub use tensor::Tensor;
pub use train::{train, EarlyStopping, EpochRecord, History, Samples, TrainConfig};

/// Strides of a matrix view as (row stride, column stride).
pub type Strides = (usize, usize);

pub trait Scalar:
    Float + AddAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = a * b + beta * c` for an `m x k` by `k x n` product.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
        sc: Strides,
    );
}

fn extent(rows: usize, cols: usize, (rs, cs): Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! scalar_gemm {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                sa: Strides,
                b: &[$t],
                sb: Strides,
                beta: $t,
                c: &mut [$t],
                sc: Strides,
            ) {
                assert!(a.len() >= extent(m, k, sa));
                assert!(b.len() >= extent(k, n, sb));
                assert!(c.len() >= extent(m, n, sc));
                // SAFETY: the asserts keep every strided access inside the slices.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        sa.0 as isize,
                        sa.1 as isize,
                        b.as_ptr(),
                        sb.0 as isize,
                        sb.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        sc.0 as isize,
                        sc.1 as isize,
                    )
                }
            }
        }
    };
}

scalar_gemm!(f32, matrixmultiply::sgemm);
scalar_gemm!(f64, matrixmultiply::dgemm);

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from(v).expect("finite constant")
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid training config: {0}")]
    TrainConfig(String),
    #[error("labels must be 0 or 1, got {0}")]
    Label(f64),
    #[error("non-finite loss{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFinite { epoch: Option<usize> },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("checkpoint {field} mismatch: {detail}")]
    Checkpoint { field: &'static str, detail: String },
    #[error("checkpoint io at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
