//! Drive-power dependence of the modulation amplitude and strain conversion.
//!
//! Deformation-potential coupling gives an energy shift linear in strain and
//! a strain amplitude proportional to the square root of RF power, so ΔE
//! grows as √P. A Stark-like coupling grows linearly in P instead.

use crate::error::{Error, Result};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSweepPoint {
    pub p_dbm: f64,
    /// Modulation amplitude (meV).
    pub delta_e: f64,
    /// Standard error of `delta_e` (meV); zero when unknown.
    pub delta_e_err: f64,
    /// SAW drive frequency (Hz), if recorded.
    pub f_drive: Option<f64>,
}

impl PowerSweepPoint {
    pub fn new(p_dbm: f64, delta_e: f64, delta_e_err: f64) -> Result<Self> {
        let p = PowerSweepPoint {
            p_dbm,
            delta_e,
            delta_e_err,
            f_drive: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p_dbm.is_finite() {
            return Err(Error::domain(format!("power {} dBm is not finite", self.p_dbm)));
        }
        if !(self.delta_e >= 0.0) || !self.delta_e.is_finite() {
            return Err(Error::domain(format!("delta_e must be >= 0, got {}", self.delta_e)));
        }
        if !(self.delta_e_err >= 0.0) || !self.delta_e_err.is_finite() {
            return Err(Error::domain(format!("delta_e_err must be >= 0, got {}", self.delta_e_err)));
        }
        Ok(())
    }

    pub fn p_mw(&self) -> f64 {
        units::dbm_to_mw(self.p_dbm)
    }
}

/// Weights `1/err^2` when every point carries an error, unit weights otherwise.
fn weights(points: &[PowerSweepPoint]) -> (Vec<f64>, bool) {
    if !points.is_empty() && points.iter().all(|p| p.delta_e_err > 0.0) {
        (points.iter().map(|p| p.delta_e_err.powi(-2)).collect(), true)
    } else {
        (vec![1.0; points.len()], false)
    }
}

struct OriginFit {
    coeff: f64,
    se: f64,
    ssr: f64,
}

/// Weighted least squares of `y = c x` through the origin.
fn fit_through_origin(x: &[f64], y: &[f64], w: &[f64], absolute: bool) -> OriginFit {
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * x * x).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * x * y).sum();
    let coeff = sxy / sxx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (y - coeff * x).powi(2))
        .sum();
    let var = if absolute {
        1.0 / sxx
    } else {
        ssr / (x.len() as f64 - 1.0).max(1.0) / sxx
    };
    OriginFit {
        coeff,
        se: var.sqrt(),
        ssr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SaturationCut {
    /// Use every point.
    None,
    /// Use points strictly below this power (dBm).
    Dbm(f64),
    /// Use points below the breakpoint from `detect_saturation`, if any.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerLaw {
    SqrtP,
    LinearP,
}

impl PowerLaw {
    pub fn as_str(&self) -> &'static str {
        match self {
            PowerLaw::SqrtP => "sqrt_p",
            PowerLaw::LinearP => "linear_p",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SqrtPFit {
    /// ΔE / √P (meV/√mW).
    pub slope: f64,
    pub se_slope: f64,
    /// ΔE / P (meV/mW).
    pub linear_coeff: f64,
    pub se_linear_coeff: f64,
    /// Weighted residual sums of squares of the two models.
    pub ssr_sqrt: f64,
    pub ssr_linear: f64,
    pub preferred: PowerLaw,
    /// Cut applied (dBm), if any.
    pub cut_dbm: Option<f64>,
    pub n_used: usize,
    pub weighted: bool,
    pub warnings: Vec<String>,
}

impl SqrtPFit {
    pub fn deformation_like(&self) -> bool {
        self.preferred == PowerLaw::SqrtP
    }
}

pub const MIN_SWEEP_POINTS: usize = 3;

/// Fits `ΔE = s √P` and `ΔE = c P` to the points below the saturation cut
/// and prefers the model with the lower weighted residual sum of squares.
pub fn fit_sqrtp(points: &[PowerSweepPoint], cut: SaturationCut) -> Result<SqrtPFit> {
    for p in points {
        p.validate()?;
    }
    let cut_dbm = match cut {
        SaturationCut::None => None,
        SaturationCut::Dbm(c) => Some(c),
        SaturationCut::Auto => detect_saturation(points, &SaturationOptions::default()),
    };
    let used: Vec<PowerSweepPoint> = points
        .iter()
        .filter(|p| cut_dbm.is_none_or(|c| p.p_dbm < c))
        .copied()
        .collect();
    if used.len() < MIN_SWEEP_POINTS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_SWEEP_POINTS} points below the cut, have {}",
            used.len()
        )));
    }
    let (w, weighted) = weights(&used);
    let mut warnings = Vec::new();
    if !weighted && used.iter().any(|p| p.delta_e_err > 0.0) {
        warnings.push("some points lack errors; unit weights used for all".to_string());
    }
    let y: Vec<f64> = used.iter().map(|p| p.delta_e).collect();
    let p_mw: Vec<f64> = used.iter().map(|p| p.p_mw()).collect();
    let sqrt_p: Vec<f64> = p_mw.iter().map(|p| p.sqrt()).collect();
    let s = fit_through_origin(&sqrt_p, &y, &w, weighted);
    let l = fit_through_origin(&p_mw, &y, &w, weighted);
    let preferred = if s.ssr <= l.ssr { PowerLaw::SqrtP } else { PowerLaw::LinearP };
    if preferred == PowerLaw::LinearP {
        warnings.push("not deformation-potential-like: linear-in-P model fits better".to_string());
    }
    if let Some(c) = cut_dbm {
        let dropped = points.len() - used.len();
        if dropped > 0 {
            warnings.push(format!("{dropped} points at or above {c} dBm excluded as saturated"));
        }
    }
    Ok(SqrtPFit {
        slope: s.coeff,
        se_slope: s.se,
        linear_coeff: l.coeff,
        se_linear_coeff: l.se,
        ssr_sqrt: s.ssr,
        ssr_linear: l.ssr,
        preferred,
        cut_dbm,
        n_used: used.len(),
        weighted,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub exponent: f64,
    pub se_exponent: f64,
    /// ln ΔE at P = 1 mW.
    pub intercept: f64,
    pub n_points: usize,
}

/// Ordinary least squares of ln ΔE against ln P_mW.
pub fn loglog_exponent(points: &[PowerSweepPoint]) -> Result<LogLogFit> {
    if points.len() < MIN_SWEEP_POINTS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_SWEEP_POINTS} points, have {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !(p.delta_e > 0.0)) {
        return Err(Error::domain(format!("delta_e must be positive on a log scale, got {}", p.delta_e)));
    }
    let x: Vec<f64> = points.iter().map(|p| p.p_mw().ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.delta_e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("all points share one power".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ssr: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - exponent * a).powi(2))
        .sum();
    Ok(LogLogFit {
        exponent,
        se_exponent: (ssr / (n - 2.0) / sxx).sqrt(),
        intercept,
        n_points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationOptions {
    /// Minimum fractional RSS reduction for the plateau model.
    pub margin: f64,
    /// Minimum number of points on the plateau.
    pub min_plateau: usize,
}

impl Default for SaturationOptions {
    fn default() -> Self {
        SaturationOptions {
            margin: 0.2,
            min_plateau: 2,
        }
    }
}

fn weighted_constant_ssr(y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    y.iter().zip(w).map(|(y, w)| w * (y - mean).powi(2)).sum()
}

/// Breakpoint power (dBm) of a √P rise followed by a constant plateau.
///
/// Every split `k` puts `points[..k]` on the √P law and `points[k..]` on a
/// constant; the split with the least total weighted RSS wins, ties (to 1e-12 of
/// the weighted data norm) going to the lower power. The breakpoint is returned when that total is at most
/// `(1 - margin)` times the RSS of the √P law over all points. Constant data
/// yield the first point.
pub fn detect_saturation(points: &[PowerSweepPoint], opts: &SaturationOptions) -> Option<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.p_dbm.total_cmp(&b.p_dbm));
    let n = sorted.len();
    if n < opts.min_plateau.max(1) + 1 {
        return None;
    }
    let (w, _) = weights(&sorted);
    let y: Vec<f64> = sorted.iter().map(|p| p.delta_e).collect();
    let sqrt_p: Vec<f64> = sorted.iter().map(|p| p.p_mw().sqrt()).collect();
    let rss_sqrt = |k: usize| -> f64 {
        if k == 0 {
            0.0
        } else {
            fit_through_origin(&sqrt_p[..k], &y[..k], &w[..k], true).ssr
        }
    };
    let full = rss_sqrt(n);
    let scale: f64 = y.iter().zip(&w).map(|(y, w)| w * y * y).sum();
    if !(full > 1e-24 * scale) {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=n - opts.min_plateau.max(1) {
        let total = rss_sqrt(k) + weighted_constant_ssr(&y[k..], &w[k..]);
        // improvements below rounding level count as ties
        if best.is_none_or(|(_, b)| total < b - 1e-12 * scale) {
            best = Some((k, total));
        }
    }
    let (k, total) = best?;
    (total <= (1.0 - opts.margin) * full).then(|| sorted[k].p_dbm)
}

/// Default deformation-potential coupling (meV per % strain), a lower bound.
pub const DEFAULT_D_COUPLING: f64 = 30.0;
/// Reference strain amplitude (%) at the reference power.
pub const REFERENCE_STRAIN_PCT: f64 = 0.0119;
pub const REFERENCE_POWER_DBM: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainReference {
    pub strain_pct: f64,
    pub p_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainModel {
    /// meV per % strain.
    pub d_coupling: f64,
    pub strain_ref: Option<StrainReference>,
}

impl Default for StrainModel {
    fn default() -> Self {
        StrainModel {
            d_coupling: DEFAULT_D_COUPLING,
            strain_ref: Some(StrainReference {
                strain_pct: REFERENCE_STRAIN_PCT,
                p_dbm: REFERENCE_POWER_DBM,
            }),
        }
    }
}

impl StrainModel {
    pub fn new(d_coupling: f64, strain_ref: Option<StrainReference>) -> Result<Self> {
        if !(d_coupling > 0.0) || !d_coupling.is_finite() {
            return Err(Error::domain(format!("coupling must be positive, got {d_coupling}")));
        }
        if let Some(r) = strain_ref {
            if !(r.strain_pct >= 0.0) || !r.p_dbm.is_finite() {
                return Err(Error::domain("reference strain must be >= 0 at a finite power"));
            }
        }
        Ok(StrainModel { d_coupling, strain_ref })
    }

    /// Energy shift (meV) for a strain amplitude (%).
    pub fn strain_to_shift(&self, strain_pct: f64) -> f64 {
        self.d_coupling * strain_pct
    }

    /// Strain amplitude (%) producing an energy shift (meV).
    pub fn shift_to_strain(&self, shift_mev: f64) -> f64 {
        shift_mev / self.d_coupling
    }

    /// Strain amplitude (%) at drive power `p_dbm`, scaling as √P from the reference.
    pub fn strain_at_power(&self, p_dbm: f64) -> Result<f64> {
        let r = self
            .strain_ref
            .ok_or_else(|| Error::Config("strain reference is not set".into()))?;
        Ok(r.strain_pct * 10f64.powf((p_dbm - r.p_dbm) / 20.0))
    }
}
