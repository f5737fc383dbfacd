use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Vec3, Wavenumber};

/// Excess-bandwidth truncation order for a box of the given diameter,
/// `ceil(kD + 1.8·digits^(2/3)·(kD)^(1/3))`, never below 4.
pub fn truncation_order(box_diameter: f64, k: Wavenumber, digits: f64) -> Result<usize> {
    if !(box_diameter > 0.0 && digits > 0.0) {
        return Err(Error::InvalidInput(format!(
            "box diameter {box_diameter} and digits {digits} must be > 0"
        )));
    }
    if k.k() == 0.0 {
        return Err(Error::InvalidInput(
            "k = 0 is unsupported: the engine is Helmholtz-only".into(),
        ));
    }
    let kd = k.k() * box_diameter;
    let order = (kd + 1.8 * digits.powf(2.0 / 3.0) * kd.cbrt()).ceil();
    Ok((order as usize).max(4))
}

/// Sampling of one tree level: truncation order and the uniform (θ, φ) grid.
///
/// θ carries `2·L_t + 2` rows rather than the bandwidth minimum `L_t + 1`:
/// on uniform nodes the sphere quadrature is only exact for products of two
/// degree-`L_t` fields with that many rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSampling {
    pub level: u32,
    pub trunc_order: usize,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl LevelSampling {
    pub fn new(level: u32, trunc_order: usize) -> Self {
        Self {
            level,
            trunc_order,
            n_theta: 2 * trunc_order + 2,
            n_phi: 2 * trunc_order + 2,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_theta, self.n_phi)
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Polar angle of row `t`; rows are half-cell shifted so no sample sits on a pole.
#[inline]
pub fn theta(t: usize, n_theta: usize) -> f64 {
    (t as f64 + 0.5) * PI / n_theta as f64
}

#[inline]
pub fn phi(p: usize, n_phi: usize) -> f64 {
    2.0 * PI * p as f64 / n_phi as f64
}

/// Unit direction of sample `(t, p)`.
pub fn direction(t: usize, p: usize, n_theta: usize, n_phi: usize) -> Vec3 {
    let (st, ct) = theta(t, n_theta).sin_cos();
    let (sp, cp) = phi(p, n_phi).sin_cos();
    [st * cp, st * sp, ct]
}

/// All directions of an `n_theta × n_phi` grid in sample order.
pub fn directions(n_theta: usize, n_phi: usize) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for t in 0..n_theta {
        for p in 0..n_phi {
            out.push(direction(t, p, n_theta, n_phi));
        }
    }
    out
}

/// Complex samples over (θ, φ), stored θ-row major: row `t` holds the `n_phi`
/// φ-samples at polar angle `θ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub samples: Vec<Complex64>,
}

impl SphereGrid {
    pub fn zeros(n_theta: usize, n_phi: usize) -> Result<Self> {
        Self::from_samples(n_theta, n_phi, vec![Complex64::new(0.0, 0.0); n_theta * n_phi])
    }

    pub fn constant(n_theta: usize, n_phi: usize, value: Complex64) -> Result<Self> {
        Self::from_samples(n_theta, n_phi, vec![value; n_theta * n_phi])
    }

    pub fn from_samples(n_theta: usize, n_phi: usize, samples: Vec<Complex64>) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 || n_phi % 2 != 0 {
            return Err(Error::Dimensions {
                got: (n_theta, n_phi),
                want: (n_theta.max(1), n_phi.max(2) + n_phi % 2),
                reason: "n_theta >= 1 and n_phi even and >= 2",
            });
        }
        if samples.len() != n_theta * n_phi {
            return Err(Error::InvalidInput(format!(
                "{} samples for a {n_theta}x{n_phi} grid",
                samples.len()
            )));
        }
        Ok(Self {
            n_theta,
            n_phi,
            samples,
        })
    }

    /// Samples `f(direction)` on the grid.
    pub fn from_fn(n_theta: usize, n_phi: usize, f: impl Fn(Vec3) -> Complex64) -> Result<Self> {
        let samples = directions(n_theta, n_phi).into_iter().map(f).collect();
        Self::from_samples(n_theta, n_phi, samples)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_theta, self.n_phi)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, t: usize, p: usize) -> Complex64 {
        self.samples[t * self.n_phi + p]
    }

    pub fn row(&self, t: usize) -> &[Complex64] {
        &self.samples[t * self.n_phi..(t + 1) * self.n_phi]
    }

    pub fn frobenius(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F / ‖other‖_F` (absolute when `other` is zero).
    pub fn relative_distance(&self, other: &SphereGrid) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let diff: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let base = other.frobenius();
        if base == 0.0 {
            diff
        } else {
            diff / base
        }
    }
}
