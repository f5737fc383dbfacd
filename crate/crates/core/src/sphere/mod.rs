//! Spherical sampling grids and FFT-based resampling between them.

pub mod grid;
pub mod interp;
pub mod parallel;
pub mod resample;

pub use grid::{direction, directions, phi, theta, truncation_order, LevelSampling, SphereGrid};
pub use interp::{
    fft_anterpolate, fft_anterpolate_adjoint, fft_interpolate, fold_transpose, interpolation_flops, unfold,
    FoldedGrid,
};
pub use resample::{fft_flops, resample, Nodes, Resample};
pub use parallel::{parallel_resample, ParallelOp};
