//! Distributed FFT resampling of a grid whose θ-rows are sliced across ranks.
//!
//! Each rank resamples its own rows in φ, then an all-to-all regroups the
//! data into whole great circles (split evenly across the participants), the
//! circles are resampled in θ, and a second all-to-all returns rows to the
//! owners of the output layout. Only nonempty pieces travel.

use std::ops::Range;

use num_complex::Complex64;

use super::resample::{resample, resample_flops, Nodes, Resample};
use crate::error::{Error, Result};
use crate::spmd::{Comm, Tag};
use crate::tree::SliceMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelOp {
    /// Coarse to fine.
    Interpolate,
    /// Fine to coarse, spectral truncation.
    Truncate,
    /// Fine to coarse, adjoint of `Interpolate`.
    Adjoint,
}

/// Even split of `n_circles` circles over `ranks` (remainder to the first).
pub fn circle_owners(ranks: &[usize], n_circles: usize) -> Vec<(usize, Range<usize>)> {
    let n = ranks.len();
    let mut at = 0;
    ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let len = n_circles / n + usize::from(i < n_circles % n);
            let range = at..at + len;
            at += len;
            (r, range)
        })
        .collect()
}

fn participants(a: &SliceMap, b: &SliceMap) -> Vec<usize> {
    let mut ranks: Vec<usize> = a.ranks().chain(b.ranks()).collect();
    ranks.sort_unstable();
    ranks.dedup();
    ranks
}

fn rows_of(map: &SliceMap, rank: usize) -> Range<usize> {
    map.rows_of(rank).unwrap_or(0..0)
}

/// Messages one parallel resampling sends, as `(src, dst, samples)`.
pub fn exchange_pattern(src: &SliceMap, dst: &SliceMap, op: ParallelOp) -> Vec<(usize, usize, usize)> {
    let ranks = participants(src, dst);
    let wide = if op == ParallelOp::Interpolate { dst.n_phi } else { src.n_phi };
    let owners = circle_owners(&ranks, wide / 2);
    let mut out = Vec::new();
    for &r in &ranks {
        for (q, circles) in &owners {
            let n = rows_of(src, r).len() * circles.len() * 2;
            if *q != r && n > 0 {
                out.push((r, *q, n));
            }
        }
    }
    for (r, circles) in &owners {
        for &q in &ranks {
            let n = rows_of(dst, q).len() * circles.len() * 2;
            if q != *r && n > 0 {
                out.push((*r, q, n));
            }
        }
    }
    out
}

/// Collective resampling of one node among the ranks of `src ∪ dst`.
///
/// `local` holds this rank's rows of the `src` layout; the return value holds
/// its rows of the `dst` layout plus the flops spent. Every participant must
/// call with identical layouts and tag.
pub async fn parallel_resample(
    comm: &Comm,
    tag: Tag,
    op: ParallelOp,
    src: &SliceMap,
    dst: &SliceMap,
    local: &[Complex64],
) -> Result<(Vec<Complex64>, u64)> {
    let me = comm.rank();
    let (nt_in, np_in) = (src.n_theta, src.n_phi);
    let (nt_out, np_out) = (dst.n_theta, dst.n_phi);
    let fine = op == ParallelOp::Interpolate;
    if (fine && (nt_out < nt_in || np_out < np_in)) || (!fine && (nt_out > nt_in || np_out > np_in)) {
        return Err(Error::Dimensions {
            got: (nt_out, np_out),
            want: (nt_in, np_in),
            reason: "resampling direction does not match the operation",
        });
    }
    let my_rows = rows_of(src, me);
    if local.len() != my_rows.len() * np_in {
        return Err(Error::Misaligned(format!(
            "rank {me} holds {} samples for rows {my_rows:?} of width {np_in}",
            local.len()
        )));
    }
    let mode = match op {
        ParallelOp::Interpolate => Resample::Interpolate,
        ParallelOp::Truncate => Resample::Truncate,
        ParallelOp::Adjoint => Resample::Adjoint,
    };
    let mut flops = 0u64;

    // φ first when refining
    let wide = if fine { np_out } else { np_in };
    let rows: Vec<Complex64> = if fine && np_in != np_out {
        let mut out = Vec::with_capacity(my_rows.len() * wide);
        for row in local.chunks_exact(np_in) {
            out.extend(resample(row, wide, Nodes::Periodic, mode));
            flops += resample_flops(np_in, wide);
        }
        out
    } else {
        local.to_vec()
    };

    let ranks = participants(src, dst);
    let half = wide / 2;
    let owners = circle_owners(&ranks, half);
    let my_circles = owners
        .iter()
        .find(|(r, _)| *r == me)
        .map(|(_, c)| c.clone())
        .unwrap_or(0..0);

    // round 1: rows -> circles
    let t1 = tag.part(tag.part * 2);
    let mut fold_self = Vec::new();
    for (q, circles) in &owners {
        if circles.is_empty() || my_rows.is_empty() {
            continue;
        }
        let mut payload = Vec::with_capacity(my_rows.len() * circles.len() * 2);
        for i in 0..my_rows.len() {
            let row = &rows[i * wide..(i + 1) * wide];
            for j in circles.clone() {
                payload.push(row[j]);
                payload.push(row[j + half]);
            }
        }
        if *q == me {
            fold_self = payload;
        } else {
            comm.isend(*q, t1, payload)?;
        }
    }
    let circ_in = 2 * nt_in;
    let mut circles = vec![Complex64::new(0.0, 0.0); my_circles.len() * circ_in];
    if !my_circles.is_empty() {
        for &r in &ranks {
            let their_rows = rows_of(src, r);
            if their_rows.is_empty() {
                continue;
            }
            let payload = if r == me {
                std::mem::take(&mut fold_self)
            } else {
                comm.recv(r, t1).await?
            };
            if payload.len() != their_rows.len() * my_circles.len() * 2 {
                return Err(Error::Protocol(format!("fold payload from rank {r} has {} samples", payload.len())));
            }
            let mut it = payload.chunks_exact(2);
            for t in their_rows {
                for c in 0..my_circles.len() {
                    let pair = it.next().unwrap();
                    circles[c * circ_in + t] = pair[0];
                    circles[c * circ_in + circ_in - 1 - t] = pair[1];
                }
            }
        }
    }

    // θ on whole circles
    let circ_out = 2 * nt_out;
    let circles: Vec<Complex64> = if circ_in == circ_out {
        circles
    } else {
        let mut out = Vec::with_capacity(my_circles.len() * circ_out);
        for c in circles.chunks_exact(circ_in) {
            out.extend(resample(c, circ_out, Nodes::HalfShifted, mode));
            flops += resample_flops(circ_in, circ_out);
        }
        out
    };

    // round 2: circles -> rows of the output layout
    let t2 = tag.part(tag.part * 2 + 1);
    let mut unfold_self = Vec::new();
    if !my_circles.is_empty() {
        for &q in &ranks {
            let their_rows = rows_of(dst, q);
            if their_rows.is_empty() {
                continue;
            }
            let mut payload = Vec::with_capacity(their_rows.len() * my_circles.len() * 2);
            for t in their_rows {
                for c in 0..my_circles.len() {
                    payload.push(circles[c * circ_out + t]);
                    payload.push(circles[c * circ_out + circ_out - 1 - t]);
                }
            }
            if q == me {
                unfold_self = payload;
            } else {
                comm.isend(q, t2, payload)?;
            }
        }
    }
    let out_rows = rows_of(dst, me);
    let mut wide_rows = vec![Complex64::new(0.0, 0.0); out_rows.len() * wide];
    if !out_rows.is_empty() {
        for (r, their_circles) in &owners {
            if their_circles.is_empty() {
                continue;
            }
            let payload = if *r == me {
                std::mem::take(&mut unfold_self)
            } else {
                comm.recv(*r, t2).await?
            };
            if payload.len() != out_rows.len() * their_circles.len() * 2 {
                return Err(Error::Protocol(format!("unfold payload from rank {r} has {} samples", payload.len())));
            }
            let mut it = payload.chunks_exact(2);
            for i in 0..out_rows.len() {
                for j in their_circles.clone() {
                    let pair = it.next().unwrap();
                    wide_rows[i * wide + j] = pair[0];
                    wide_rows[i * wide + j + half] = pair[1];
                }
            }
        }
    }

    // φ last when coarsening
    if fine || wide == np_out {
        return Ok((wide_rows, flops));
    }
    let mut out = Vec::with_capacity(out_rows.len() * np_out);
    for row in wide_rows.chunks_exact(wide) {
        out.extend(resample(row, np_out, Nodes::Periodic, mode));
        flops += resample_flops(wide, np_out);
    }
    Ok((out, flops))
}
