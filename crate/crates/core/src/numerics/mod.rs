//! Dense numeric core: tensors, parameter stores, Adam, seeded streams and
//! a finite-difference gradient checker.

mod adam;
pub mod gradcheck;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use rng::RngStream;
pub use tensor::{
    axpy, dot, log_sigmoid, log_sum_exp, mat_vec_acc, outer_acc, sigmoid, softmax_in_place,
    softmax_rows, vec_mat_acc, Tensor,
};

/// Uniform initialization in `[-scale, scale]`.
pub fn init_uniform(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.uniform() - 1.0) * scale)
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Normal initialization with standard deviation `1/sqrt(fan_in)`.
pub fn init_fan_in(rows: usize, cols: usize, fan_in: usize, rng: &mut RngStream) -> Tensor {
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Maps `f` over `items` in fixed-size chunks on the current rayon pool and
/// returns per-chunk results in input order. Chunk boundaries do not depend
/// on the worker count, so any order-sensitive reduction over the result is
/// reproducible.
pub fn par_chunk_map<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items
        .par_chunks(chunk.max(1))
        .enumerate()
        .map(|(ci, c)| f(ci * chunk.max(1), c))
        .collect()
}
