//! Diagonal-form MLFMA operators: radiation patterns, center shifts,
//! translation operators, quadrature and the near-field block.

pub mod special;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{dot, green_unchecked, norm, sub, Particle, Vec3, Wavenumber};
use crate::sphere::{direction, SphereGrid};

/// Nominal real-flop costs used by the instrumentation.
pub mod flops {
    /// Complex multiply-add.
    pub const MUL_ADD: u64 = 8;
    /// Per (particle, sample): phase, sincos, multiply-add.
    pub const C2M_TERM: u64 = 21;
    /// Per sample of a center shift.
    pub const SHIFT: u64 = 19;
    /// Per (observer, sample) of the quadrature.
    pub const L2O_TERM: u64 = 21;
    /// Per direct source/observer pair.
    pub const NEAR_PAIR: u64 = 28;
    /// Per series term and sample of a translation-operator evaluation.
    pub const OPERATOR_TERM: u64 = 12;
}

/// Plane-wave factor `exp(sign·j·k·k̂·v)`.
#[inline]
fn plane_wave(k: f64, khat: Vec3, v: Vec3, sign: f64) -> Complex64 {
    Complex64::from_polar(1.0, sign * k * dot(khat, v))
}

/// Radiation pattern of `particles` about `center` on rows `rows` of an
/// `n_theta × n_phi` grid: `Σ u_n exp(+j k k̂·(r_n − c))`.
pub fn c2m_rows(particles: &[Particle], center: Vec3, dims: (usize, usize), rows: Range<usize>, k: Wavenumber) -> Vec<Complex64> {
    let (nt, np) = dims;
    let mut out = Vec::with_capacity(rows.len() * np);
    let rel: Vec<(Vec3, Complex64)> = particles
        .iter()
        .map(|p| (sub(p.position, center), p.intensity))
        .collect();
    for t in rows {
        for p in 0..np {
            let khat = direction(t, p, nt, np);
            let mut acc = Complex64::new(0.0, 0.0);
            for (d, u) in &rel {
                acc += u * plane_wave(k.k(), khat, *d, 1.0);
            }
            out.push(acc);
        }
    }
    out
}

pub fn c2m(particles: &[Particle], center: Vec3, dims: (usize, usize), k: Wavenumber) -> Result<SphereGrid> {
    SphereGrid::from_samples(dims.0, dims.1, c2m_rows(particles, center, dims, 0..dims.0, k))
}

/// Multiplies rows `rows` (stored contiguously in `samples`) by
/// `exp(+j k k̂·displacement)`.
pub fn shift_rows(samples: &mut [Complex64], dims: (usize, usize), rows: Range<usize>, displacement: Vec3, k: Wavenumber) {
    let (nt, np) = dims;
    debug_assert_eq!(samples.len(), rows.len() * np);
    if displacement == [0.0; 3] {
        return;
    }
    for (i, t) in rows.enumerate() {
        for p in 0..np {
            samples[i * np + p] *= plane_wave(k.k(), direction(t, p, nt, np), displacement, 1.0);
        }
    }
}

pub fn shift_expansion(grid: &SphereGrid, displacement: Vec3, k: Wavenumber) -> SphereGrid {
    let mut out = grid.clone();
    shift_rows(&mut out.samples, grid.dims(), 0..grid.n_theta, displacement, k);
    out
}

/// `Σ_{l=0}^{L_t} (−j)^l (2l+1) h_l^(2)(k|D|) P_l(k̂·D̂)` on rows `rows`.
pub fn translation_rows(dims: (usize, usize), rows: Range<usize>, displacement: Vec3, k: Wavenumber, trunc_order: usize) -> Vec<Complex64> {
    let (nt, np) = dims;
    let dist = norm(displacement);
    let dhat = [displacement[0] / dist, displacement[1] / dist, displacement[2] / dist];
    let hankel = special::spherical_hankel2(trunc_order, k.k() * dist);
    let mut minus_j_pow = Complex64::new(1.0, 0.0);
    let coeff: Vec<Complex64> = hankel
        .iter()
        .enumerate()
        .map(|(l, h)| {
            let c = minus_j_pow * (2 * l + 1) as f64 * h;
            minus_j_pow *= Complex64::new(0.0, -1.0);
            c
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len() * np);
    for t in rows {
        for p in 0..np {
            let x = dot(direction(t, p, nt, np), dhat);
            let pl = special::legendre(trunc_order, x);
            out.push(coeff.iter().zip(&pl).map(|(c, p)| c * p).sum());
        }
    }
    out
}

/// Diagonal translation multiplier for one (level, offset), stored for a
/// contiguous range of θ-rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationOperator {
    pub level: u32,
    /// Observer-minus-source center offset in box units.
    pub offset: [i64; 3],
    pub displacement: Vec3,
    pub n_theta: usize,
    pub n_phi: usize,
    pub rows: Range<usize>,
    pub samples: Vec<Complex64>,
}

impl TranslationOperator {
    pub fn bytes(&self) -> u64 {
        self.samples.len() as u64 * 16
    }

    /// Samples of `rows`, which must lie within the stored range.
    pub fn rows_slice(&self, rows: Range<usize>) -> Option<&[Complex64]> {
        if rows.start < self.rows.start || rows.end > self.rows.end {
            return None;
        }
        let a = (rows.start - self.rows.start) * self.n_phi;
        Some(&self.samples[a..a + rows.len() * self.n_phi])
    }

    pub fn eval_flops(rows: usize, n_phi: usize, trunc_order: usize) -> u64 {
        (rows * n_phi * (trunc_order + 1)) as u64 * flops::OPERATOR_TERM
    }
}

/// Builds the translation operator for boxes of side `box_side` whose
/// centers differ by `offset` box sides. Pairs closer than two box sides are
/// outside the series' convergence region and rejected.
pub fn translation_operator(
    level: u32,
    dims: (usize, usize),
    offset: [i64; 3],
    box_side: f64,
    k: Wavenumber,
    trunc_order: usize,
    rows: Range<usize>,
) -> Result<TranslationOperator> {
    let displacement = offset.map(|o| o as f64 * box_side);
    let distance = norm(displacement);
    let threshold = 2.0 * box_side;
    if distance < threshold * (1.0 - 1e-12) {
        return Err(Error::NotFarField { distance, threshold });
    }
    if k.k() == 0.0 {
        return Err(Error::InvalidInput("translation operators need k > 0".into()));
    }
    let samples = translation_rows(dims, rows.clone(), displacement, k, trunc_order);
    Ok(TranslationOperator {
        level,
        offset,
        displacement,
        n_theta: dims.0,
        n_phi: dims.1,
        rows,
        samples,
    })
}

/// Translation operators keyed by `(level, offset)`, limited by a byte budget.
#[derive(Debug, Clone, Default)]
pub struct OperatorCache {
    pub budget: u64,
    bytes: u64,
    map: HashMap<(u32, [i64; 3]), Arc<TranslationOperator>>,
}

impl OperatorCache {
    pub fn new(budget: u64) -> Self {
        Self {
            budget,
            bytes: 0,
            map: HashMap::new(),
        }
    }

    /// Stores `op` unless that would exceed the budget; returns whether it was kept.
    pub fn insert(&mut self, op: TranslationOperator) -> bool {
        let key = (op.level, op.offset);
        if self.map.contains_key(&key) {
            return true;
        }
        if self.bytes + op.bytes() > self.budget {
            return false;
        }
        self.bytes += op.bytes();
        self.map.insert(key, Arc::new(op));
        true
    }

    pub fn get(&self, level: u32, offset: [i64; 3]) -> Option<Arc<TranslationOperator>> {
        self.map.get(&(level, offset)).cloned()
    }

    pub fn contains(&self, level: u32, offset: [i64; 3]) -> bool {
        self.map.contains_key(&(level, offset))
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &(u32, [i64; 3])> {
        self.map.keys()
    }
}

/// Sphere quadrature on the half-shifted uniform grid: Fejér's first rule in
/// θ, trapezoidal in φ. Weights depend on the row only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub n_theta: usize,
    pub n_phi: usize,
    pub row_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn fejer(n_theta: usize, n_phi: usize) -> Self {
        let n = n_theta as f64;
        let dphi = 2.0 * PI / n_phi as f64;
        let row_weights = (0..n_theta)
            .map(|t| {
                let th = crate::sphere::theta(t, n_theta);
                let mut s = 0.0;
                for m in 1..=n_theta / 2 {
                    let m = m as f64;
                    s += (2.0 * m * th).cos() / (4.0 * m * m - 1.0);
                }
                2.0 / n * (1.0 - 2.0 * s) * dphi
            })
            .collect();
        Self {
            n_theta,
            n_phi,
            row_weights,
        }
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.row_weights[t]
    }

    pub fn total(&self) -> f64 {
        self.row_weights.iter().sum::<f64>() * self.n_phi as f64
    }
}

/// `−jk/16π²`: the expansion constant applied once at L2O.
pub fn pipeline_constant(k: Wavenumber) -> Complex64 {
    Complex64::new(0.0, -k.k() / (16.0 * PI * PI))
}

/// `acc += source ⊙ op`; returns the flops spent.
pub fn m2l_apply(source: &[Complex64], op: &[Complex64], acc: &mut [Complex64]) -> Result<u64> {
    if source.len() != op.len() || source.len() != acc.len() {
        return Err(Error::Misaligned(format!(
            "source {}, operator {}, accumulator {} samples",
            source.len(),
            op.len(),
            acc.len()
        )));
    }
    for ((a, s), o) in acc.iter_mut().zip(source).zip(op) {
        *a += s * o;
    }
    Ok(source.len() as u64 * flops::MUL_ADD)
}

/// Potentials at `observers` from the local expansion about `center`.
pub fn l2o(local: &SphereGrid, center: Vec3, observers: &[Vec3], rule: &QuadratureRule, k: Wavenumber) -> Result<Vec<Complex64>> {
    let (nt, np) = local.dims();
    if (rule.n_theta, rule.n_phi) != (nt, np) {
        return Err(Error::Dimensions {
            got: (rule.n_theta, rule.n_phi),
            want: (nt, np),
            reason: "quadrature rule must match the local expansion",
        });
    }
    let c = pipeline_constant(k);
    let dirs: Vec<Vec3> = crate::sphere::directions(nt, np);
    Ok(observers
        .iter()
        .map(|&r| {
            let d = sub(r, center);
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..nt {
                let mut row = Complex64::new(0.0, 0.0);
                for p in 0..np {
                    let i = t * np + p;
                    row += local.samples[i] * plane_wave(k.k(), dirs[i], d, -1.0);
                }
                acc += row * rule.weight(t);
            }
            acc * c
        })
        .collect())
}

/// Direct interactions between indexed observers and sources; equal indices
/// are the self term and skipped.
pub fn near_field(observers: &[(usize, Vec3)], sources: &[(usize, Particle)], k: Wavenumber) -> Result<(Vec<Complex64>, u64)> {
    let mut pairs = 0u64;
    let out = observers
        .iter()
        .map(|&(m, r)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(n, ref s) in sources {
                if n == m {
                    continue;
                }
                let dist = norm(sub(r, s.position));
                if dist == 0.0 {
                    return Err(Error::Singularity(format!("particles {m} and {n} coincide at {r:?}")));
                }
                acc += green_unchecked(k.k(), dist) * s.intensity;
                pairs += 1;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, pairs * flops::NEAR_PAIR))
}
