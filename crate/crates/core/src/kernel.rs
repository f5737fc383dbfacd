//! Helmholtz kernel, particle model, geometry generators and the direct
//! O(N²) summation used as ground truth.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// A point source/observer with complex intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec3,
    pub intensity: Complex64,
}

impl Particle {
    pub fn new(position: Vec3, intensity: Complex64) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite particle position {position:?}"
            )));
        }
        if !(intensity.re.is_finite() && intensity.im.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite particle intensity {intensity}"
            )));
        }
        Ok(Self {
            position,
            intensity,
        })
    }
}

/// Wavenumber `k = 2π/λ`. `k = 0` is the Laplace limit and has no wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavenumber {
    k: f64,
}

impl Wavenumber {
    pub fn from_wavelength(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidInput(format!("wavelength {lambda} must be > 0")));
        }
        Ok(Self { k: 2.0 * PI / lambda })
    }

    pub fn from_k(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::InvalidInput(format!("wavenumber {k} must be >= 0")));
        }
        Ok(Self { k })
    }

    pub fn laplace() -> Self {
        Self { k: 0.0 }
    }

    #[inline]
    pub fn k(&self) -> f64 {
        self.k
    }

    /// `None` in the Laplace limit.
    pub fn lambda(&self) -> Option<f64> {
        (self.k > 0.0).then(|| 2.0 * PI / self.k)
    }
}

/// `g(r) = exp(-j k |r|) / (4π |r|)`.
pub fn green(k: Wavenumber, r: Vec3) -> Result<Complex64> {
    let dist = norm(r);
    if dist == 0.0 {
        return Err(Error::Singularity("green evaluated at |r| = 0".into()));
    }
    Ok(green_unchecked(k.k(), dist))
}

#[inline]
pub(crate) fn green_unchecked(k: f64, dist: f64) -> Complex64 {
    let (s, c) = (k * dist).sin_cos();
    Complex64::new(c, -s) / (4.0 * PI * dist)
}

/// Potential at each observer from all sources. Any observer coinciding with
/// a source is an error; use [`self_potential`] to evaluate at the sources.
pub fn direct_potential(
    sources: &[Particle],
    observers: &[Vec3],
    k: Wavenumber,
) -> Result<Vec<Complex64>> {
    observers
        .iter()
        .enumerate()
        .map(|(m, &obs)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, src) in sources.iter().enumerate() {
                let dist = norm(sub(obs, src.position));
                if dist == 0.0 {
                    return Err(Error::Singularity(format!(
                        "observer {m} coincides with source {n} at {obs:?}"
                    )));
                }
                acc += green_unchecked(k.k(), dist) * src.intensity;
            }
            Ok(acc)
        })
        .collect()
}

/// Potential evaluated at every particle, skipping the `n = m` self term.
/// Two distinct particles at the same position are an error.
pub fn self_potential(particles: &[Particle], k: Wavenumber) -> Result<Vec<Complex64>> {
    particles
        .iter()
        .enumerate()
        .map(|(m, obs)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, src) in particles.iter().enumerate() {
                if n == m {
                    continue;
                }
                let dist = norm(sub(obs.position, src.position));
                if dist == 0.0 {
                    return Err(Error::Singularity(format!(
                        "particles {m} and {n} coincide at {:?}",
                        obs.position
                    )));
                }
                acc += green_unchecked(k.k(), dist) * src.intensity;
            }
            Ok(acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    PlanarGrid,
    SphereSurface,
    CubicVolume,
}

/// Experiment geometry. `extent` and `spacing` are in wavelengths; for the
/// sphere `extent` is the diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    pub extent: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum IntensityRule {
    Unit,
    Random { seed: u64 },
}

impl GeometrySpec {
    pub fn new(kind: GeometryKind, extent: f64, spacing: f64) -> Result<Self> {
        let spec = Self {
            kind,
            extent,
            spacing,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::InvalidInput(format!("extent {} must be > 0", self.extent)));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::InvalidInput(format!(
                "spacing {} must be > 0",
                self.spacing
            )));
        }
        if self.kind != GeometryKind::SphereSurface {
            self.points_per_axis()?;
        }
        Ok(())
    }

    /// Lattice points per axis for grid and volume kinds.
    pub fn points_per_axis(&self) -> Result<usize> {
        let ratio = self.extent / self.spacing;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "extent/spacing = {ratio} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    /// Number of particles the generator will produce.
    pub fn particle_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self.kind {
            GeometryKind::PlanarGrid => self.points_per_axis()?.pow(2),
            GeometryKind::CubicVolume => self.points_per_axis()?.pow(3),
            GeometryKind::SphereSurface => {
                let area = PI * self.extent * self.extent;
                ((area / (self.spacing * self.spacing)).round() as usize).max(1)
            }
        })
    }
}

/// Generates the particles of `spec` with wavelength `lambda` (meters).
/// Lattices are centered on the origin with points at cell centers.
pub fn generate_geometry(
    spec: &GeometrySpec,
    lambda: f64,
    intensity_rule: IntensityRule,
) -> Result<Vec<Particle>> {
    spec.validate()?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!("wavelength {lambda} must be > 0")));
    }
    let spacing = spec.spacing * lambda;
    let half = 0.5 * spec.extent * lambda;
    let lattice = |i: usize| (i as f64 + 0.5) * spacing - half;
    let positions: Vec<Vec3> = match spec.kind {
        GeometryKind::PlanarGrid => {
            let n = spec.points_per_axis()?;
            let mut out = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    out.push([lattice(ix), lattice(iy), 0.0]);
                }
            }
            out
        }
        GeometryKind::CubicVolume => {
            let n = spec.points_per_axis()?;
            let mut out = Vec::with_capacity(n * n * n);
            for iz in 0..n {
                for iy in 0..n {
                    for ix in 0..n {
                        out.push([lattice(ix), lattice(iy), lattice(iz)]);
                    }
                }
            }
            out
        }
        GeometryKind::SphereSurface => {
            let count = spec.particle_count()?;
            fibonacci_sphere(count, half)
        }
    };

    let mut rng = match intensity_rule {
        IntensityRule::Unit => None,
        IntensityRule::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    positions
        .into_iter()
        .map(|p| {
            let u = match rng.as_mut() {
                None => Complex64::new(1.0, 0.0),
                Some(r) => Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)),
            };
            Particle::new(p, u)
        })
        .collect()
}

fn fibonacci_sphere(count: usize, radius: f64) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [radius * rho * phi.cos(), radius * rho * phi.sin(), radius * z]
        })
        .collect()
}

/// Writes particles as `x y z re im` lines preceded by optional `#` comments.
pub fn write_particles<W: Write>(mut out: W, particles: &[Particle], header: &[String]) -> Result<()> {
    let mut buf = String::new();
    for line in header {
        writeln!(buf, "# {line}").ok();
    }
    for p in particles {
        writeln!(
            buf,
            "{} {} {} {} {}",
            p.position[0], p.position[1], p.position[2], p.intensity.re, p.intensity.im
        )
        .ok();
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_particles<R: BufRead>(input: R) -> Result<Vec<Particle>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        out.push(
            Particle::new(
                [fields[0], fields[1], fields[2]],
                Complex64::new(fields[3], fields[4]),
            )
            .map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn load_particles(path: &Path) -> Result<Vec<Particle>> {
    let file = std::fs::File::open(path)?;
    read_particles(std::io::BufReader::new(file))
}

pub fn save_particles(path: &Path, particles: &[Particle], header: &[String]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_particles(std::io::BufWriter::new(file), particles, header)
}

/// Relative RMS and relative max error of `approx` against `exact`.
pub fn relative_errors(approx: &[Complex64], exact: &[Complex64]) -> (f64, f64) {
    assert_eq!(approx.len(), exact.len());
    let mut diff2 = 0.0;
    let mut ref2 = 0.0;
    let mut max_diff: f64 = 0.0;
    let mut max_ref: f64 = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        let d = (a - e).norm();
        diff2 += d * d;
        ref2 += e.norm_sqr();
        max_diff = max_diff.max(d);
        max_ref = max_ref.max(e.norm());
    }
    if ref2 == 0.0 {
        // all-zero reference: report absolute errors
        return (diff2.sqrt(), max_diff);
    }
    ((diff2 / ref2).sqrt(), max_diff / max_ref)
}
