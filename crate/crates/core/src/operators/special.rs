//! Spherical Bessel/Hankel functions and Legendre polynomials.

use num_complex::Complex64;

/// `j_l(x)` for `l = 0..=lmax`, `x > 0`. Miller's downward recurrence below
/// the turning point, upward above it.
pub fn spherical_j(lmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0);
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let mut out = vec![0.0; lmax + 1];
    if x > lmax as f64 {
        out[0] = j0;
        if lmax >= 1 {
            out[1] = j1;
        }
        for l in 1..lmax {
            out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
        }
        return out;
    }
    let start = lmax + 20 + (x as usize) + ((40 * (lmax + 1)) as f64).sqrt() as usize;
    let (mut next, mut cur) = (0.0_f64, 1e-300_f64);
    let mut tail = vec![0.0; lmax + 2];
    for l in (0..=start).rev() {
        // cur = j_l (unnormalised), next = j_{l+1}
        if l <= lmax + 1 {
            tail[l] = cur;
        }
        let prev = (2 * l + 1) as f64 / x * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            next *= 1e-250;
            cur *= 1e-250;
            tail.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    let scale = if j0.abs() >= j1.abs() { j0 / tail[0] } else { j1 / tail[1] };
    for l in 0..=lmax {
        out[l] = tail[l] * scale;
    }
    out
}

/// `y_l(x)` for `l = 0..=lmax` by upward recurrence.
pub fn spherical_y(lmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0);
    let mut out = vec![0.0; lmax + 1];
    out[0] = -x.cos() / x;
    if lmax >= 1 {
        out[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for l in 1..lmax {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
    }
    out
}

/// `h_l^(2)(x) = j_l(x) − j·y_l(x)`.
pub fn spherical_hankel2(lmax: usize, x: f64) -> Vec<Complex64> {
    spherical_j(lmax, x)
        .into_iter()
        .zip(spherical_y(lmax, x))
        .map(|(j, y)| Complex64::new(j, -y))
        .collect()
}

/// `P_l(x)` for `l = 0..=lmax`.
pub fn legendre(lmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = x;
    }
    for l in 1..lmax {
        p[l + 1] = ((2 * l + 1) as f64 * x * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}
