//! One-dimensional trigonometric resampling on uniform periodic grids.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Node placement on the period `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nodes {
    /// `t_i = i·h`
    Periodic,
    /// `t_i = (i + ½)·h`
    HalfShifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// Zero-padded trigonometric interpolation onto a finer grid.
    Interpolate,
    /// Spectral truncation onto a coarser grid (left inverse of `Interpolate`).
    Truncate,
    /// Adjoint of `Interpolate` from the coarse to the fine length.
    Adjoint,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Nominal flop count of one length-`n` complex FFT.
pub fn fft_flops(n: usize) -> u64 {
    if n < 2 {
        0
    } else {
        (5.0 * n as f64 * (n as f64).log2()).round() as u64
    }
}

/// Flops of one [`resample`] call from `n_in` to `n_out` samples.
pub fn resample_flops(n_in: usize, n_out: usize) -> u64 {
    if n_in == n_out {
        0
    } else {
        fft_flops(n_in) + fft_flops(n_out) + 6 * n_in.max(n_out) as u64
    }
}

/// `e^{j·m·h/2}` for half-shifted nodes, 1 otherwise.
fn half_phase(nodes: Nodes, m: i64, len: usize) -> Complex64 {
    match nodes {
        Nodes::Periodic => Complex64::new(1.0, 0.0),
        Nodes::HalfShifted => Complex64::from_polar(1.0, PI * m as f64 / len as f64),
    }
}

/// Split of the Nyquist bin between modes `+N/2` and `−N/2`: a cosine on
/// periodic nodes, a sine on half-shifted nodes (where the cosine vanishes).
fn nyquist_split(nodes: Nodes) -> (Complex64, Complex64) {
    match nodes {
        Nodes::Periodic => (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)),
        Nodes::HalfShifted => (Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5)),
    }
}

#[inline]
fn bin(m: i64, len: usize) -> usize {
    m.rem_euclid(len as i64) as usize
}

/// Resamples one period of `input` (even length) to `out_len` (even) samples.
pub fn resample(input: &[Complex64], out_len: usize, nodes: Nodes, mode: Resample) -> Vec<Complex64> {
    let n_in = input.len();
    debug_assert!(n_in % 2 == 0 && out_len % 2 == 0);
    if n_in == out_len {
        return input.to_vec();
    }
    match mode {
        Resample::Interpolate => {
            assert!(out_len > n_in);
            let spectrum = coefficients(input, nodes);
            let mut out = vec![Complex64::new(0.0, 0.0); out_len];
            for (m, c) in spectrum {
                out[bin(m, out_len)] += c * half_phase(nodes, m, out_len);
            }
            plan(out_len, true).process(&mut out);
            out
        }
        Resample::Truncate => {
            assert!(out_len < n_in);
            let half = (out_len / 2) as i64;
            let spectrum = coefficients(input, nodes);
            let mut out = vec![Complex64::new(0.0, 0.0); out_len];
            for (m, c) in spectrum {
                if m.abs() <= half {
                    out[bin(m, out_len)] += c * half_phase(nodes, m, out_len);
                }
            }
            plan(out_len, true).process(&mut out);
            out
        }
        Resample::Adjoint => {
            // input lives on the fine grid, output on the coarse one
            let (n_fine, n_coarse) = (n_in, out_len);
            assert!(n_coarse < n_fine);
            let mut z = input.to_vec();
            plan(n_fine, false).process(&mut z);
            let half = (n_coarse / 2) as i64;
            let mut x = vec![Complex64::new(0.0, 0.0); n_coarse];
            for m in (1 - half)..half {
                let w = z[bin(m, n_fine)] * half_phase(nodes, m, n_fine).conj();
                x[bin(m, n_coarse)] = w * half_phase(nodes, m, n_coarse);
            }
            let (plus, minus) = nyquist_split(nodes);
            let w_plus = z[bin(half, n_fine)] * half_phase(nodes, half, n_fine).conj();
            let w_minus = z[bin(-half, n_fine)] * half_phase(nodes, -half, n_fine).conj();
            x[half as usize] = plus.conj() * w_plus + minus.conj() * w_minus;
            plan(n_coarse, true).process(&mut x);
            let scale = 1.0 / n_coarse as f64;
            x.iter_mut().for_each(|v| *v *= scale);
            x
        }
    }
}

/// Origin-referenced Fourier coefficients `(m, c_m)`, `|m| <= N/2`, of the
/// trigonometric interpolant through `input`.
fn coefficients(input: &[Complex64], nodes: Nodes) -> Vec<(i64, Complex64)> {
    let n = input.len();
    let mut spec = input.to_vec();
    plan(n, false).process(&mut spec);
    let half = (n / 2) as i64;
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    for m in (1 - half)..half {
        out.push((m, spec[bin(m, n)] * half_phase(nodes, m, n).conj() * scale));
    }
    let (plus, minus) = nyquist_split(nodes);
    let nyq = spec[half as usize] * scale;
    out.push((half, plus * nyq));
    out.push((-half, minus * nyq));
    out
}
