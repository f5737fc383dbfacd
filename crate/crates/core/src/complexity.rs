//! Closed-form cost model for the parallel traversal and least-squares
//! comparison against measured counters.
//!
//! Levels here count from the leaves: level 1 is the leaf level and `N_L` the
//! root. [`model_level`] converts from the tree's root-first numbering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spmd::BYTES_PER_SAMPLE;

/// Model level of tree level `tree_level` (root = 1) in a tree of `n_levels`.
pub fn model_level(tree_level: u32, n_levels: u32) -> u32 {
    n_levels + 1 - tree_level
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub n_s: f64,
    pub p: f64,
    pub d: u32,
    pub c_k: f64,
    /// Message buffer size in bytes.
    pub m_s: f64,
}

impl ComplexityParams {
    pub fn new(n_s: f64, p: f64, d: u32, c_k: f64, m_s: f64) -> Result<Self> {
        let params = Self { n_s, p, d, c_k, m_s };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 2 && self.d != 3 {
            return Err(Error::InvalidInput(format!("d = {} not in {{2,3}}", self.d)));
        }
        for (name, v) in [("N_s", self.n_s), ("P", self.p), ("C_k", self.c_k), ("M_S", self.m_s)] {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Upper bound on far interactions per node, `6^d − 3^d`.
    pub fn i_max(&self) -> f64 {
        (6f64.powi(self.d as i32) - 3f64.powi(self.d as i32)).max(0.0)
    }

    /// Far interactions per node at level `l`: the bound, or fewer when the
    /// level has too few nodes to fill it.
    pub fn interactions(&self, l: u32) -> f64 {
        let g = groups_per_level(self.n_s, self.d, l);
        self.i_max().min((g - 3f64.powi(self.d as i32)).max(0.0))
    }

    fn buffer_samples(&self) -> f64 {
        (self.m_s / BYTES_PER_SAMPLE as f64).max(1.0)
    }
}

/// `G(l) = N_s / (2^d)^(l−1)`.
pub fn groups_per_level(n_s: f64, d: u32, l: u32) -> f64 {
    n_s / 2f64.powi((d * (l - 1)) as i32)
}

/// `K(l) = 2^(l−1) C_k`.
pub fn samples_per_level(c_k: f64, l: u32) -> f64 {
    2f64.powi(l as i32 - 1) * c_k
}

/// `(P_L, P_N(l))`: the first level with fewer nodes than processes, and the
/// average number of processes per node at `l`.
pub fn plural_fraction(params: &ComplexityParams, l: u32) -> (u32, f64) {
    let mut p_l = 1;
    while groups_per_level(params.n_s, params.d, p_l) >= params.p {
        p_l += 1;
    }
    (p_l, params.p / groups_per_level(params.n_s, params.d, l))
}

/// Asymptotic shapes, evaluated at `N_s` (or `P` for [`Asymptote::P2`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Asymptote {
    NLog2N,
    NLogN,
    N,
    N23,
    P2,
}

impl Asymptote {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Asymptote::NLog2N => x * x.log2().powi(2),
            Asymptote::NLogN => x * x.log2(),
            Asymptote::N => x,
            Asymptote::N23 => x.powf(2.0 / 3.0),
            Asymptote::P2 => x * x,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Asymptote::NLog2N => "N log^2 N",
            Asymptote::NLogN => "N log N",
            Asymptote::N => "N",
            Asymptote::N23 => "N^(2/3)",
            Asymptote::P2 => "P^2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub components: BTreeMap<String, f64>,
    pub asymptote: Vec<Asymptote>,
}

impl Estimate {
    fn new(components: &[(&str, f64)], asymptote: Vec<Asymptote>) -> Self {
        Self {
            value: components.iter().map(|(_, v)| v).sum(),
            components: components.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            asymptote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePrediction {
    pub computation: Estimate,
    pub messages: Estimate,
    pub bytes: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPrediction {
    pub params: ComplexityParams,
    pub n_levels: u32,
    pub p_l: u32,
    /// `S_N` per level below `P_L`, leaf first.
    pub s_n: Vec<f64>,
    pub m2m: PhasePrediction,
    pub m2l: PhasePrediction,
    pub l2l: PhasePrediction,
}

impl CostPrediction {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates the finite sums for every phase over levels `1..=n_levels`.
pub fn predict_costs(params: &ComplexityParams, n_levels: u32) -> Result<CostPrediction> {
    params.validate()?;
    if n_levels == 0 {
        return Err(Error::InvalidInput("need at least one level".into()));
    }
    let p = params.p;
    let d = params.d;
    let (p_l, _) = plural_fraction(params, 1);
    let g = |l| groups_per_level(params.n_s, d, l);
    let k = |l| samples_per_level(params.c_k, l);
    let p_n = |l| plural_fraction(params, l).1;
    let levels = 1..=n_levels;
    let upper = p_l..=n_levels;
    let lower = 1..p_l.min(n_levels + 1);

    let interp: f64 = levels.clone().map(|l| g(l) * k(l).powi(2) * k(l).log2().powi(2)).sum();
    let aggregation: f64 = upper.clone().filter(|&l| l < n_levels).map(|l| g(l) * p_n(l + 1)).sum();
    let all_to_all: f64 = upper.clone().map(|l| g(l) * p_n(l).powi(2)).sum();
    let volume: f64 = levels.clone().map(|l| g(l) * k(l).powi(2)).sum();
    let (surface, cm2m) = if d == 2 {
        (true, vec![Asymptote::NLog2N])
    } else {
        (false, vec![Asymptote::N])
    };
    let m2m = PhasePrediction {
        computation: Estimate::new(&[("interpolation", interp)], cm2m),
        messages: Estimate::new(&[("aggregation", aggregation), ("all_to_all", all_to_all)], vec![Asymptote::P2]),
        bytes: Estimate::new(
            &[("samples", volume)],
            vec![if surface { Asymptote::NLogN } else { Asymptote::N }],
        ),
    };

    let i = |l| params.interactions(l);
    let translate: f64 = levels.clone().map(|l| k(l).powi(2) * i(l) * g(l)).sum();
    let ms = params.buffer_samples();
    let msg_upper: f64 = upper.clone().map(|l| p * i(l) * k(l).powi(2) / (p_n(l) * ms)).sum();
    let below: f64 = lower.clone().map(|l| k(l).powi(2) * g(l) / p).sum();
    let msg_lower = p * params.i_max() * (below / ms).ceil();
    let s_n: Vec<f64> = lower.clone().map(|l| (g(l) / p).powf((d as f64 - 1.0) / d as f64)).collect();
    let bytes_upper: f64 = upper.clone().map(|l| k(l).powi(2) * g(l) * i(l)).sum();
    let bytes_lower: f64 = lower.clone().zip(&s_n).map(|(l, s)| p * k(l).powi(2) * s).sum();
    let m2l = PhasePrediction {
        computation: Estimate::new(
            &[("translation", translate)],
            vec![if surface { Asymptote::NLogN } else { Asymptote::N }],
        ),
        messages: Estimate::new(
            &[("at_or_above_pl", msg_upper), ("below_pl", msg_lower)],
            if surface { vec![Asymptote::NLogN, Asymptote::N] } else { vec![Asymptote::N] },
        ),
        bytes: Estimate::new(
            &[("at_or_above_pl", bytes_upper), ("below_pl", bytes_lower)],
            if surface {
                vec![Asymptote::NLogN, Asymptote::N]
            } else {
                vec![Asymptote::N, Asymptote::N23]
            },
        ),
    };
    let mut l2l = m2m.clone();
    l2l.computation.components = [("anterpolation".to_string(), interp)].into();
    Ok(CostPrediction {
        params: *params,
        n_levels,
        p_l,
        s_n,
        m2m,
        m2l,
        l2l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Slope; `measured ≈ intercept + scale · model`.
    pub scale: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn check_series(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} model points for {} measurements", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 points, got {}", x.len())));
    }
    if y.iter().all(|v| *v == 0.0) || x.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("all-zero series".into()));
    }
    Ok(())
}

fn r_squared(y: &[f64], fitted: impl Iterator<Item = f64>) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Single-parameter least-squares scale of `model(x)` onto `measured`.
pub fn fit_and_compare(x: &[f64], measured: &[f64], model: Asymptote) -> Result<Fit> {
    let f: Vec<f64> = x.iter().map(|&v| model.eval(v)).collect();
    fit_scale(&f, measured)
}

/// Like [`fit_and_compare`] with model values given directly.
pub fn fit_scale(model: &[f64], measured: &[f64]) -> Result<Fit> {
    check_series(model, measured)?;
    let scale = model.iter().zip(measured).map(|(f, y)| f * y).sum::<f64>() / model.iter().map(|f| f * f).sum::<f64>();
    Ok(Fit {
        scale,
        intercept: 0.0,
        r_squared: r_squared(measured, model.iter().map(|f| scale * f)),
    })
}

/// Two-parameter fit `measured ≈ a + b · model(x)`.
pub fn fit_affine(x: &[f64], measured: &[f64], model: Asymptote) -> Result<Fit> {
    let f: Vec<f64> = x.iter().map(|&v| model.eval(v)).collect();
    check_series(&f, measured)?;
    let n = f.len() as f64;
    let (mf, my) = (f.iter().sum::<f64>() / n, measured.iter().sum::<f64>() / n);
    let sff: f64 = f.iter().map(|v| (v - mf).powi(2)).sum();
    if sff == 0.0 {
        return Err(Error::Degenerate("model is constant over the sample".into()));
    }
    let sfy: f64 = f.iter().zip(measured).map(|(a, b)| (a - mf) * (b - my)).sum();
    let scale = sfy / sff;
    let intercept = my - scale * mf;
    Ok(Fit {
        scale,
        intercept,
        r_squared: r_squared(measured, f.iter().map(|v| intercept + scale * v)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn level_formulas() {
        assert_eq!(groups_per_level(4_194_304.0, 2, 11), 4.0);
        assert_eq!(groups_per_level(1000.0, 3, 1), 1000.0);
        assert_eq!(groups_per_level(4096.0, 3, 2), groups_per_level(4096.0, 3, 1) / 8.0);
        assert_eq!(samples_per_level(1.0, 3), 4.0);
        assert_eq!(samples_per_level(2.5, 1), 2.5);
        assert_eq!(model_level(1, 6), 6);
        assert_eq!(model_level(6, 6), 1);
    }

    #[test]
    fn plural_level() {
        let big = ComplexityParams::new(4_194_304.0, 2048.0, 2, 1.0, 1e6).unwrap();
        let (p_l, p_n) = plural_fraction(&big, 7);
        assert_eq!((p_l, p_n), (7, 2.0));
        let one = ComplexityParams { p: 1.0, ..big };
        let (p_l, _) = plural_fraction(&one, 1);
        assert!(p_l > 12);
        assert!((1..=12).all(|l| plural_fraction(&one, l).1 <= 1.0));
    }

    #[test]
    fn fits() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * Asymptote::NLog2N.eval(*v + 1.0)).collect();
        let xs: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let fit = fit_and_compare(&xs, &y, Asymptote::NLog2N).unwrap();
        assert_relative_eq!(fit.scale, 2.0, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);
        let affine = fit_affine(&[1.0, 2.0, 3.0], &[5.0, 11.0, 21.0], Asymptote::P2).unwrap();
        assert_relative_eq!(affine.intercept, 3.0, max_relative = 1e-12);
        assert_relative_eq!(affine.scale, 2.0, max_relative = 1e-12);
        assert!(matches!(fit_scale(&[1.0, 2.0, 3.0], &[0.0; 3]), Err(Error::Degenerate(_))));
        assert!(fit_scale(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
