//! Two-dimensional FFT interpolation between sphere sampling grids.
//!
//! A grid is resampled in φ row by row. For θ, the meridian at `φ_j` and the
//! one at `φ_j + π` together form a closed great circle; folding the grid
//! into those circles turns θ into a periodic coordinate on half-shifted
//! nodes, so the same 1-D resampler applies.

use num_complex::Complex64;

use super::grid::SphereGrid;
use super::resample::{resample, resample_flops, Nodes, Resample};
use crate::error::{Error, Result};

/// Great circles of a grid: circle `j < n_phi/2` holds rows `0..n_theta` at
/// `φ_j` followed by rows `n_theta-1..=0` at `φ_{j + n_phi/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    /// `n_phi/2` circles of `2·n_theta` samples each, circle-major.
    pub circles: Vec<Complex64>,
}

impl FoldedGrid {
    pub fn n_circles(&self) -> usize {
        self.n_phi / 2
    }

    pub fn circle_len(&self) -> usize {
        2 * self.n_theta
    }

    pub fn circle(&self, j: usize) -> &[Complex64] {
        let len = self.circle_len();
        &self.circles[j * len..(j + 1) * len]
    }
}

/// `(row, column)` of circle `j`'s sample `i`.
#[inline]
pub fn circle_source(j: usize, i: usize, n_theta: usize, n_phi: usize) -> (usize, usize) {
    if i < n_theta {
        (i, j)
    } else {
        (2 * n_theta - 1 - i, j + n_phi / 2)
    }
}

pub fn fold_transpose(grid: &SphereGrid) -> FoldedGrid {
    let (nt, np) = grid.dims();
    let mut circles = Vec::with_capacity(nt * np);
    for j in 0..np / 2 {
        for i in 0..2 * nt {
            let (t, p) = circle_source(j, i, nt, np);
            circles.push(grid.at(t, p));
        }
    }
    FoldedGrid {
        n_theta: nt,
        n_phi: np,
        circles,
    }
}

pub fn unfold(folded: &FoldedGrid) -> SphereGrid {
    let (nt, np) = (folded.n_theta, folded.n_phi);
    let mut samples = vec![Complex64::new(0.0, 0.0); nt * np];
    for j in 0..np / 2 {
        for (i, v) in folded.circle(j).iter().enumerate() {
            let (t, p) = circle_source(j, i, nt, np);
            samples[t * np + p] = *v;
        }
    }
    SphereGrid {
        n_theta: nt,
        n_phi: np,
        samples,
    }
}

/// Resamples each `in_len` chunk of `data` to `out_len`.
pub fn resample_blocks(data: &[Complex64], in_len: usize, out_len: usize, nodes: Nodes, mode: Resample) -> Vec<Complex64> {
    if in_len == out_len {
        return data.to_vec();
    }
    let mut out = Vec::with_capacity(data.len() / in_len * out_len);
    for chunk in data.chunks_exact(in_len) {
        out.extend(resample(chunk, out_len, nodes, mode));
    }
    out
}

fn check_dims(dims: (usize, usize)) -> Result<()> {
    let (nt, np) = dims;
    if nt == 0 || np < 2 || np % 2 != 0 {
        return Err(Error::Dimensions {
            got: dims,
            want: (nt.max(1), np.max(2) + np % 2),
            reason: "n_theta >= 1 and n_phi even and >= 2",
        });
    }
    Ok(())
}

fn check_order(coarse: (usize, usize), fine: (usize, usize)) -> Result<()> {
    check_dims(coarse)?;
    check_dims(fine)?;
    if fine.0 < coarse.0 || fine.1 < coarse.1 {
        return Err(Error::Dimensions {
            got: fine,
            want: coarse,
            reason: "fine grid must be at least the coarse grid in both directions",
        });
    }
    Ok(())
}

/// Interpolates `src` onto the finer `dst` grid.
pub fn fft_interpolate(src: &SphereGrid, dst: (usize, usize)) -> Result<SphereGrid> {
    check_order(src.dims(), dst)?;
    let (nt, np) = src.dims();
    let (mt, mp) = dst;
    let rows = resample_blocks(&src.samples, np, mp, Nodes::Periodic, Resample::Interpolate);
    let folded = fold_transpose(&SphereGrid {
        n_theta: nt,
        n_phi: mp,
        samples: rows,
    });
    let circles = resample_blocks(&folded.circles, 2 * nt, 2 * mt, Nodes::HalfShifted, Resample::Interpolate);
    Ok(unfold(&FoldedGrid {
        n_theta: mt,
        n_phi: mp,
        circles,
    }))
}

fn coarsen(src: &SphereGrid, dst: (usize, usize), mode: Resample) -> Result<SphereGrid> {
    check_order(dst, src.dims())?;
    let (nt, _) = src.dims();
    let (mt, mp) = dst;
    let folded = fold_transpose(src);
    let circles = resample_blocks(&folded.circles, 2 * nt, 2 * mt, Nodes::HalfShifted, mode);
    let mid = unfold(&FoldedGrid {
        n_theta: mt,
        n_phi: src.n_phi,
        circles,
    });
    let samples = resample_blocks(&mid.samples, src.n_phi, mp, Nodes::Periodic, mode);
    SphereGrid::from_samples(mt, mp, samples)
}

/// Spectral truncation of `src` onto the coarser `dst` grid; a left inverse
/// of [`fft_interpolate`].
pub fn fft_anterpolate(src: &SphereGrid, dst: (usize, usize)) -> Result<SphereGrid> {
    coarsen(src, dst, Resample::Truncate)
}

/// Exact adjoint of [`fft_interpolate`] from `dst` to `src` dimensions.
pub fn fft_anterpolate_adjoint(src: &SphereGrid, dst: (usize, usize)) -> Result<SphereGrid> {
    coarsen(src, dst, Resample::Adjoint)
}

/// Nominal flops of a 2-D resampling between `a` and `b` (either direction).
pub fn interpolation_flops(a: (usize, usize), b: (usize, usize)) -> u64 {
    let (coarse, fine) = if a.0 * a.1 <= b.0 * b.1 { (a, b) } else { (b, a) };
    coarse.0 as u64 * resample_flops(coarse.1, fine.1)
        + (fine.1 / 2) as u64 * resample_flops(2 * coarse.0, 2 * fine.0)
}
