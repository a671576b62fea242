//! One-port SAW resonator reflection: model, synthesis, fitting, coupling
//! regime and cavity geometry.
//!
//! The reflection of a single mode is
//!
//! ```text
//!            (Qe - Qi)/Qe + 2i Qi (f - fn)/f
//! S11(f) = -----------------------------------
//!            (Qe + Qi)/Qe + 2i Qi (f - fn)/f
//! ```
//!
//! Note the detuning is normalized by `f`, not `fn`. At `Q >~ 1e3` the two
//! forms are indistinguishable. A spectrum with several modes is modeled as
//! the product of the single-mode factors.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lm::{self, LmOptions};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonatorMode {
    /// Resonance frequency (Hz).
    pub f_n: f64,
    /// Intrinsic quality factor.
    pub q_i: f64,
    /// Extrinsic (coupling) quality factor.
    pub q_e: f64,
}

impl ResonatorMode {
    pub fn new(f_n: f64, q_i: f64, q_e: f64) -> Result<Self> {
        let mode = ResonatorMode { f_n, q_i, q_e };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_n > 0.0 && self.f_n.is_finite()) {
            return Err(Error::domain(format!("resonance frequency must be positive, got {}", self.f_n)));
        }
        if !(self.q_i > 0.0 && self.q_i.is_finite()) || !(self.q_e > 0.0 && self.q_e.is_finite()) {
            return Err(Error::domain(format!(
                "quality factors must be positive, got q_i = {}, q_e = {}",
                self.q_i, self.q_e
            )));
        }
        Ok(())
    }

    /// `(1/q_i + 1/q_e)^-1`
    pub fn loaded_q(&self) -> f64 {
        self.q_i * self.q_e / (self.q_i + self.q_e)
    }

    /// Full width of the power dip, `f_n / q_loaded` (Hz).
    pub fn linewidth(&self) -> f64 {
        self.f_n / self.loaded_q()
    }
}

/// The four modes of the 300 MHz, 2600 µm device after flake transfer.
pub fn reference_modes() -> Vec<ResonatorMode> {
    [
        (298.425e6, 1300.0, 5900.0),
        (299.425e6, 3000.0, 800.0),
        (300.975e6, 1600.0, 2300.0),
        (303.561e6, 1700.0, 6000.0),
    ]
    .into_iter()
    .map(|(f_n, q_i, q_e)| ResonatorMode { f_n, q_i, q_e })
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct S11Spectrum {
    frequencies: Vec<f64>,
    values: Vec<Complex64>,
}

impl S11Spectrum {
    pub fn new(frequencies: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if frequencies.len() != values.len() {
            return Err(Error::domain(format!(
                "{} frequencies but {} values",
                frequencies.len(),
                values.len()
            )));
        }
        check_grid(&frequencies)?;
        Ok(S11Spectrum { frequencies, values })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn f_min(&self) -> f64 {
        self.frequencies[0]
    }

    pub fn f_max(&self) -> f64 {
        self.frequencies[self.frequencies.len() - 1]
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "frequency grid needs at least 2 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::domain("frequencies must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("frequencies must be strictly increasing"));
    }
    Ok(())
}

/// Bragg mirror stopband.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorBand {
    pub f_low: f64,
    pub f_high: f64,
}

impl MirrorBand {
    pub fn new(f_low: f64, f_high: f64) -> Result<Self> {
        if !(f_low < f_high) {
            return Err(Error::domain(format!("mirror band edges out of order: {f_low} >= {f_high}")));
        }
        Ok(MirrorBand { f_low, f_high })
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_low && f <= self.f_high
    }
}

/// Cavity dimensions in µm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGeometry {
    /// Separation of the inner mirror edges.
    pub d: f64,
    /// Reflector electrode width.
    pub w: f64,
    /// Reflectivity of one mirror period.
    pub r_s: f64,
}

impl CavityGeometry {
    pub fn new(d: f64, w: f64, r_s: f64) -> Result<Self> {
        let g = CavityGeometry { d, w, r_s };
        if !(d >= 0.0 && w > 0.0 && r_s > 0.0 && r_s < 1.0) {
            return Err(Error::domain(format!("invalid cavity geometry {g:?}")));
        }
        Ok(g)
    }

    /// Penetration depth of the mode into one mirror, `w / r_s` (µm).
    pub fn penetration_depth(&self) -> Result<f64> {
        if self.r_s == 0.0 {
            return Err(Error::domain("single-period reflectivity is zero"));
        }
        Ok(self.w / self.r_s)
    }
}

/// Total acoustic length `d + 2 w / r_s` (µm).
///
/// With `w = 10 µm` and `r_s = 0.02` this gives a 500 µm penetration depth,
/// not the ~130 µm sometimes quoted for this device; the formula is applied
/// as written.
pub fn cavity_length(geom: &CavityGeometry) -> Result<f64> {
    Ok(geom.d + 2.0 * geom.penetration_depth()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    Undercoupled,
    CriticallyCoupled,
    Overcoupled,
}

impl Coupling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Coupling::Undercoupled => "undercoupled",
            Coupling::CriticallyCoupled => "critically_coupled",
            Coupling::Overcoupled => "overcoupled",
        }
    }
}

pub const DEFAULT_COUPLING_TOL: f64 = 1e-3;

/// Critical when `|q_e - q_i| <= tol (q_e + q_i)`; otherwise undercoupled iff `q_e > q_i`.
pub fn classify_coupling(mode: &ResonatorMode, tol: f64) -> Coupling {
    if (mode.q_e - mode.q_i).abs() <= tol * (mode.q_e + mode.q_i) {
        Coupling::CriticallyCoupled
    } else if mode.q_e > mode.q_i {
        Coupling::Undercoupled
    } else {
        Coupling::Overcoupled
    }
}

#[inline]
fn s11_unchecked(f: f64, f_n: f64, q_i: f64, q_e: f64) -> Complex64 {
    let x = 2.0 * q_i * (f - f_n) / f;
    let num = Complex64::new((q_e - q_i) / q_e, x);
    let den = Complex64::new((q_e + q_i) / q_e, x);
    num / den
}

/// Single-mode reflection coefficient at frequency `f` (Hz).
pub fn s11_model(f: f64, mode: &ResonatorMode) -> Result<Complex64> {
    if !(f > 0.0) {
        return Err(Error::domain(format!("frequency must be positive, got {f}")));
    }
    mode.validate()?;
    Ok(s11_unchecked(f, mode.f_n, mode.q_i, mode.q_e))
}

fn product_model(f: f64, modes: &[ResonatorMode]) -> Complex64 {
    modes
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, m| acc * s11_unchecked(f, m.f_n, m.q_i, m.q_e))
}

/// Complex affine background `a + b (f - f_ref) / f_ref` multiplying the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub a: Complex64,
    pub b: Complex64,
    pub f_ref: f64,
}

impl Background {
    fn unit(f_ref: f64) -> Self {
        Background {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(0.0, 0.0),
            f_ref,
        }
    }

    fn at(&self, f: f64) -> Complex64 {
        self.a + self.b * ((f - self.f_ref) / self.f_ref)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesizedS11 {
    pub spectrum: S11Spectrum,
    pub warnings: Vec<String>,
}

/// Product of the mode responses on `grid` plus complex Gaussian noise with
/// standard deviation `noise_sigma` on each quadrature.
pub fn synthesize_s11(
    modes: &[ResonatorMode],
    grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthesizedS11> {
    check_grid(grid)?;
    for m in modes {
        m.validate()?;
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::domain(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut warnings = Vec::new();
    for (i, a) in modes.iter().enumerate() {
        for b in &modes[i + 1..] {
            if a.f_n == b.f_n {
                warnings.push(format!("two modes share resonance frequency {:.9e} Hz", a.f_n));
            }
        }
    }
    let mut values: Vec<Complex64> = grid.iter().map(|&f| product_model(f, modes)).collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::domain(e.to_string()))?;
        let mut rng = rng::substream(seed, 0);
        for v in values.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }
    Ok(SynthesizedS11 {
        spectrum: S11Spectrum::new(grid.to_vec(), values)?,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct S11FitOptions {
    /// Half-width of the per-mode fit window in linewidths.
    pub window_linewidths: f64,
    /// Fit the complex affine background.
    pub background: bool,
    /// Minimum fractional drop in the window's residual sum of squares that
    /// adding a mode must achieve before it counts as a resonance.
    pub min_improvement: f64,
    pub coupling_tol: f64,
    /// Per-mode passes before the joint refinement.
    pub sweeps: usize,
    pub lm: LmOptions,
}

impl Default for S11FitOptions {
    fn default() -> Self {
        S11FitOptions {
            window_linewidths: 5.0,
            background: false,
            min_improvement: 0.5,
            coupling_tol: DEFAULT_COUPLING_TOL,
            sweeps: 2,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FittedMode {
    pub mode: ResonatorMode,
    pub se_f_n: f64,
    pub se_q_i: f64,
    pub se_q_e: f64,
    pub coupling: Coupling,
}

#[derive(Debug, Clone)]
pub struct S11Fit {
    pub modes: Vec<FittedMode>,
    pub background: Option<Background>,
    /// Standard errors of (Re a, Im a, Re b, Im b) when a background was fitted.
    pub background_se: Option<[f64; 4]>,
    pub ssr: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl S11Fit {
    pub fn residual_norm(&self) -> f64 {
        self.ssr.sqrt()
    }

    /// Fitted model (including background) at `f`.
    pub fn model_at(&self, f: f64) -> Complex64 {
        let modes: Vec<ResonatorMode> = self.modes.iter().map(|m| m.mode).collect();
        let bg = self.background.map(|b| b.at(f)).unwrap_or(Complex64::new(1.0, 0.0));
        bg * product_model(f, &modes)
    }
}

fn window_indices(freqs: &[f64], center: f64, half_width: f64) -> Vec<usize> {
    freqs
        .iter()
        .enumerate()
        .filter(|(_, &f)| (f - center).abs() <= half_width)
        .map(|(i, _)| i)
        .collect()
}

fn push_complex(out: &mut Vec<f64>, z: Complex64) {
    out.push(z.re);
    out.push(z.im);
}

/// Fits one mode over its window with every other mode held fixed.
/// Returns the refined mode and the window's (fit, null) residual sums.
fn fit_single_mode(
    spectrum: &S11Spectrum,
    others: &[ResonatorMode],
    background: &Background,
    seed: &ResonatorMode,
    idx: &[usize],
    opts: &S11FitOptions,
) -> Result<(ResonatorMode, f64, f64)> {
    let freqs = spectrum.frequencies();
    let data = spectrum.values();
    let fixed: Vec<Complex64> = idx
        .iter()
        .map(|&i| background.at(freqs[i]) * product_model(freqs[i], others))
        .collect();
    let ssr_null: f64 = idx
        .iter()
        .zip(&fixed)
        .map(|(&i, fx)| (fx - data[i]).norm_sqr())
        .sum();

    let residuals = |p: &[f64]| {
        let (f_n, q_i, q_e) = (p[0], p[1].exp(), p[2].exp());
        let mut out = Vec::with_capacity(2 * idx.len());
        for (&i, fx) in idx.iter().zip(&fixed) {
            push_complex(&mut out, fx * s11_unchecked(freqs[i], f_n, q_i, q_e) - data[i]);
        }
        out
    };
    let scales = [seed.linewidth(), 1.0, 1.0];
    let mut starts = vec![[seed.f_n, seed.q_i.ln(), seed.q_e.ln()]];
    if seed.q_i != seed.q_e {
        // the magnitude dip alone does not tell over- from undercoupling
        starts.push([seed.f_n, seed.q_e.ln(), seed.q_i.ln()]);
    }
    let mut best: Option<lm::LmFit> = None;
    let mut last_err = None;
    for p0 in starts {
        match lm::minimize("s11 mode", residuals, &p0, &scales, &opts.lm) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.ssr < b.ssr) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let fit = match (best, last_err) {
        (Some(f), _) => f,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start"),
    };
    let mode = ResonatorMode {
        f_n: fit.params[0],
        q_i: fit.params[1].exp(),
        q_e: fit.params[2].exp(),
    };
    Ok((mode, fit.ssr, ssr_null))
}

/// Refines resonance parameters by complex least squares.
///
/// Each mode is first fitted alone over a window of `window_linewidths`
/// linewidths around its current estimate, with the other modes held fixed.
/// A final joint fit over the union of windows refines all modes together and
/// supplies the standard errors.
pub fn fit_s11(spectrum: &S11Spectrum, initial: &[ResonatorMode], opts: &S11FitOptions) -> Result<S11Fit> {
    if initial.is_empty() {
        return Err(Error::InsufficientData("no initial modes".into()));
    }
    for m in initial {
        m.validate()?;
        if m.f_n < spectrum.f_min() || m.f_n > spectrum.f_max() {
            return Err(Error::domain(format!(
                "initial resonance {:.6e} Hz outside spectrum range [{:.6e}, {:.6e}]",
                m.f_n,
                spectrum.f_min(),
                spectrum.f_max()
            )));
        }
    }
    let freqs = spectrum.frequencies();
    let data = spectrum.values();
    let f_mid = 0.5 * (spectrum.f_min() + spectrum.f_max());
    let mut background = Background::unit(f_mid);
    let mut current = initial.to_vec();

    let sweeps = opts.sweeps.max(1);
    for sweep in 0..sweeps {
        for k in 0..current.len() {
            let seed = current[k];
            let idx = window_indices(freqs, seed.f_n, opts.window_linewidths * seed.linewidth());
            if idx.len() < 4 {
                return Err(Error::InsufficientData(format!(
                    "only {} points within the fit window of the mode near {:.6e} Hz",
                    idx.len(),
                    seed.f_n
                )));
            }
            let others: Vec<ResonatorMode> = current
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, m)| *m)
                .collect();
            let (mode, ssr, ssr_null) = fit_single_mode(spectrum, &others, &background, &seed, &idx, opts)?;
            // early sweeps see neighbours at their seeds, so only the last one judges
            let improved = ssr_null > 0.0 && ssr_null - ssr >= opts.min_improvement * ssr_null;
            if !improved && sweep + 1 == sweeps {
                return Err(Error::NoResonance(seed.f_n));
            }
            if ssr < ssr_null {
                current[k] = mode;
            }
        }
    }

    // joint refinement over the union of windows
    let mut union = BTreeSet::new();
    for m in &current {
        union.extend(window_indices(freqs, m.f_n, opts.window_linewidths * m.linewidth()));
    }
    let idx: Vec<usize> = union.into_iter().collect();
    let n_modes = current.len();
    let mut p0 = Vec::with_capacity(3 * n_modes + 4);
    let mut scales = Vec::with_capacity(p0.capacity());
    for m in &current {
        p0.extend([m.f_n, m.q_i.ln(), m.q_e.ln()]);
        scales.extend([m.linewidth(), 1.0, 1.0]);
    }
    if opts.background {
        p0.extend([1.0, 0.0, 0.0, 0.0]);
        scales.extend([1.0; 4]);
    }
    let unpack = |p: &[f64]| -> (Vec<ResonatorMode>, Background) {
        let modes = (0..n_modes)
            .map(|k| ResonatorMode {
                f_n: p[3 * k],
                q_i: p[3 * k + 1].exp(),
                q_e: p[3 * k + 2].exp(),
            })
            .collect();
        let bg = if opts.background {
            let o = 3 * n_modes;
            Background {
                a: Complex64::new(p[o], p[o + 1]),
                b: Complex64::new(p[o + 2], p[o + 3]),
                f_ref: f_mid,
            }
        } else {
            Background::unit(f_mid)
        };
        (modes, bg)
    };
    let residuals = |p: &[f64]| {
        let (modes, bg) = unpack(p);
        let mut out = Vec::with_capacity(2 * idx.len());
        for &i in &idx {
            push_complex(&mut out, bg.at(freqs[i]) * product_model(freqs[i], &modes) - data[i]);
        }
        out
    };
    let fit = lm::minimize("s11 joint", residuals, &p0, &scales, &opts.lm)?;
    let (modes, bg) = unpack(&fit.params);
    background = bg;

    let mut fitted: Vec<FittedMode> = modes
        .iter()
        .enumerate()
        .map(|(k, m)| FittedMode {
            mode: *m,
            se_f_n: fit.std_errors[3 * k],
            se_q_i: m.q_i * fit.std_errors[3 * k + 1],
            se_q_e: m.q_e * fit.std_errors[3 * k + 2],
            coupling: classify_coupling(m, opts.coupling_tol),
        })
        .collect();
    // seeds may trade places during the joint fit; report in frequency order
    fitted.sort_by(|a, b| a.mode.f_n.total_cmp(&b.mode.f_n));
    let warnings = fitted
        .iter()
        .enumerate()
        .filter(|(_, m)| m.mode.f_n < spectrum.f_min() || m.mode.f_n > spectrum.f_max())
        .map(|(k, _)| format!("mode {k} converged outside the measured range"))
        .collect();
    let background_se = opts.background.then(|| {
        let o = 3 * n_modes;
        [
            fit.std_errors[o],
            fit.std_errors[o + 1],
            fit.std_errors[o + 2],
            fit.std_errors[o + 3],
        ]
    });
    Ok(S11Fit {
        modes: fitted,
        background: opts.background.then_some(background),
        background_se,
        ssr: fit.ssr,
        n_points: idx.len(),
        iterations: fit.iterations,
        warnings,
    })
}

/// Finds reflection dips and derives seeds for [`fit_s11`].
///
/// A local minimum of `|S11|` qualifies when its prominence reaches
/// `prominence`. The loaded Q comes from the full width of the `|S11|^2` dip
/// at half depth. The seed assumes undercoupling; [`fit_s11`] also tries the
/// swapped pair.
pub fn detect_dips(spectrum: &S11Spectrum, prominence: f64) -> Vec<ResonatorMode> {
    let freqs = spectrum.frequencies();
    let mag: Vec<f64> = spectrum.values().iter().map(|z| z.norm()).collect();
    let n = mag.len();
    let mut seeds = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || mag[i] < mag[i - 1];
        let right_ok = i + 1 == n || mag[i] <= mag[i + 1];
        if !(left_ok && right_ok) || i == 0 || i + 1 == n {
            continue;
        }
        let y = mag[i];
        let mut left_max = y;
        for j in (0..i).rev() {
            if mag[j] < y {
                break;
            }
            left_max = left_max.max(mag[j]);
        }
        let mut right_max = y;
        for &v in &mag[i + 1..] {
            if v < y {
                break;
            }
            right_max = right_max.max(v);
        }
        let reference = left_max.min(right_max);
        if reference - y < prominence {
            continue;
        }
        let half = 0.5 * (y * y + reference * reference);
        let crossing = |j: usize, k: usize| {
            let (a, b) = (mag[j] * mag[j], mag[k] * mag[k]);
            freqs[j] + (half - a) / (b - a) * (freqs[k] - freqs[j])
        };
        let mut lo = None;
        for j in (0..i).rev() {
            if mag[j] * mag[j] >= half {
                lo = Some(crossing(j + 1, j));
                break;
            }
        }
        let mut hi = None;
        for j in i + 1..n {
            if mag[j] * mag[j] >= half {
                hi = Some(crossing(j - 1, j));
                break;
            }
        }
        let (Some(lo), Some(hi)) = (lo, hi) else {
            continue;
        };
        let f_n = freqs[i];
        let q_loaded = f_n / (hi - lo).max(f64::MIN_POSITIVE);
        let depth = (y / reference).min(0.999);
        let ratio = (1.0 + depth) / (1.0 - depth);
        let q_i = q_loaded * (1.0 + ratio) / ratio;
        seeds.push(ResonatorMode {
            f_n,
            q_i,
            q_e: ratio * q_i,
        });
    }
    seeds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn critical_coupling_nulls_reflection() {
        let m = ResonatorMode::new(300e6, 1000.0, 1000.0).unwrap();
        assert!(s11_model(300e6, &m).unwrap().norm() < 1e-15);
    }

    #[test]
    fn on_resonance_value_matches_hand_substitution() {
        let m = ResonatorMode::new(298.425e6, 1300.0, 5900.0).unwrap();
        let z = s11_model(298.425e6, &m).unwrap();
        assert!((z.re - 4600.0 / 7200.0).abs() < 1e-15);
        assert!((z.re - 0.6389).abs() < 5e-5);
        assert_eq!(z.im, 0.0);
    }

    #[test]
    fn far_detuned_reflects_fully() {
        let m = ResonatorMode::new(300e6, 1300.0, 5900.0).unwrap();
        // 1000 linewidths away
        let z = s11_model(300e6 + 1000.0 * 300e6 / 1300.0, &m).unwrap();
        assert!((z.norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn domain_errors() {
        let m = ResonatorMode { f_n: 300e6, q_i: 1000.0, q_e: 1000.0 };
        assert!(matches!(s11_model(0.0, &m), Err(Error::Domain(_))));
        assert!(matches!(s11_model(-1.0, &m), Err(Error::Domain(_))));
        let bad = ResonatorMode { q_i: -1.0, ..m };
        assert!(matches!(s11_model(300e6, &bad), Err(Error::Domain(_))));
        assert!(ResonatorMode::new(300e6, 1000.0, 0.0).is_err());
    }

    #[test]
    fn synthesis_identities() {
        let g = grid(299e6, 301e6, 101);
        let m = ResonatorMode::new(300e6, 1500.0, 2500.0).unwrap();
        let s = synthesize_s11(&[m], &g, 0.0, 1).unwrap();
        for (f, v) in g.iter().zip(s.spectrum.values()) {
            assert_eq!(*v, s11_model(*f, &m).unwrap());
        }
        let empty = synthesize_s11(&[], &g, 0.0, 1).unwrap();
        assert!(empty.spectrum.values().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn duplicate_modes_warn() {
        let g = grid(299e6, 301e6, 11);
        let m = ResonatorMode::new(300e6, 1500.0, 2500.0).unwrap();
        let s = synthesize_s11(&[m, m], &g, 0.0, 1).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn reference_modes_dip_inside_mirror_band() {
        let band = MirrorBand::new(298e6, 304e6).unwrap();
        let g = grid(297e6, 305e6, 8001);
        let s = synthesize_s11(&reference_modes(), &g, 0.0, 1).unwrap();
        let dips = detect_dips(&s.spectrum, 0.05);
        assert_eq!(dips.len(), 4);
        assert!(dips.iter().all(|d| band.contains(d.f_n)));
        for (d, m) in dips.iter().zip(reference_modes()) {
            assert!((d.f_n - m.f_n).abs() < 2e3);
            // neighbouring dips distort the width estimate of mode 0
            assert!((d.loaded_q() / m.loaded_q() - 1.0).abs() < 0.25);
        }
    }

    #[test]
    fn noisy_synthesis_is_seeded() {
        let g = grid(299e6, 301e6, 51);
        let m = ResonatorMode::new(300e6, 1500.0, 2500.0).unwrap();
        let a = synthesize_s11(&[m], &g, 0.01, 9).unwrap();
        let b = synthesize_s11(&[m], &g, 0.01, 9).unwrap();
        let c = synthesize_s11(&[m], &g, 0.01, 10).unwrap();
        assert_eq!(a.spectrum, b.spectrum);
        assert_ne!(a.spectrum, c.spectrum);
    }

    #[test]
    fn single_mode_round_trip() {
        let truth = ResonatorMode::new(298.425e6, 1300.0, 5900.0).unwrap();
        let g = grid(296e6, 301e6, 2001);
        let s = synthesize_s11(&[truth], &g, 0.0, 1).unwrap();
        let guess = ResonatorMode::new(298.5e6, 1000.0, 7000.0).unwrap();
        let fit = fit_s11(&s.spectrum, &[guess], &S11FitOptions::default()).unwrap();
        let m = fit.modes[0].mode;
        assert!((m.f_n / truth.f_n - 1.0).abs() < 1e-6);
        assert!((m.q_i / truth.q_i - 1.0).abs() < 1e-3);
        assert!((m.q_e / truth.q_e - 1.0).abs() < 1e-3);
        assert_eq!(fit.modes[0].coupling, Coupling::Undercoupled);
    }

    #[test]
    fn overcoupled_mode_recovered_from_undercoupled_seed() {
        let truth = ResonatorMode::new(299.425e6, 3000.0, 800.0).unwrap();
        let g = grid(297e6, 302e6, 2001);
        let s = synthesize_s11(&[truth], &g, 0.0, 1).unwrap();
        let seeds = detect_dips(&s.spectrum, 0.05);
        assert_eq!(seeds.len(), 1);
        let fit = fit_s11(&s.spectrum, &seeds, &S11FitOptions::default()).unwrap();
        let m = fit.modes[0].mode;
        assert!((m.q_i / truth.q_i - 1.0).abs() < 1e-3, "{m:?}");
        assert_eq!(fit.modes[0].coupling, Coupling::Overcoupled);
    }

    #[test]
    fn background_fit_absorbs_affine_distortion() {
        let truth = ResonatorMode::new(300e6, 1600.0, 2300.0).unwrap();
        let g = grid(299e6, 301e6, 801);
        let bg = Background {
            a: Complex64::new(0.8, 0.1),
            b: Complex64::new(0.5, -0.3),
            f_ref: 300e6,
        };
        let vals: Vec<Complex64> = g.iter().map(|&f| bg.at(f) * s11_unchecked(f, truth.f_n, truth.q_i, truth.q_e)).collect();
        let spec = S11Spectrum::new(g, vals).unwrap();
        let opts = S11FitOptions {
            background: true,
            ..S11FitOptions::default()
        };
        let guess = ResonatorMode::new(300.02e6, 1400.0, 2600.0).unwrap();
        let fit = fit_s11(&spec, &[guess], &opts).unwrap();
        let m = fit.modes[0].mode;
        assert!((m.q_i / truth.q_i - 1.0).abs() < 1e-4, "{m:?}");
        assert!((m.q_e / truth.q_e - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn featureless_spectrum_reports_no_resonance() {
        let g = grid(299e6, 301e6, 401);
        let ones = vec![Complex64::new(1.0, 0.0); g.len()];
        let spec = S11Spectrum::new(g, ones).unwrap();
        let guess = ResonatorMode::new(300e6, 1500.0, 2500.0).unwrap();
        let err = fit_s11(&spec, &[guess], &S11FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoResonance(_)), "{err:?}");
    }

    #[test]
    fn initial_outside_range_rejected() {
        let g = grid(299e6, 301e6, 401);
        let spec = S11Spectrum::new(g.clone(), vec![Complex64::new(1.0, 0.0); g.len()]).unwrap();
        let guess = ResonatorMode::new(305e6, 1500.0, 2500.0).unwrap();
        assert!(matches!(fit_s11(&spec, &[guess], &S11FitOptions::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn coupling_classification() {
        let c = |qi, qe| classify_coupling(&ResonatorMode { f_n: 1.0, q_i: qi, q_e: qe }, DEFAULT_COUPLING_TOL);
        assert_eq!(c(1900.0, 3700.0), Coupling::Undercoupled);
        assert_eq!(c(1000.0, 1000.0), Coupling::CriticallyCoupled);
        assert_eq!(c(5000.0, 100.0), Coupling::Overcoupled);
        assert_eq!(c(1000.0, 1001.0), Coupling::CriticallyCoupled);
        assert_eq!(c(1000.0, 1003.0), Coupling::Undercoupled);
    }

    #[test]
    fn cavity_geometry() {
        let g = CavityGeometry { d: 0.0, w: 10.0, r_s: 0.02 };
        assert!((cavity_length(&g).unwrap() - 1000.0).abs() < 1e-9);
        let g = CavityGeometry::new(2340.0, 2.6, 0.02).unwrap();
        assert!((cavity_length(&g).unwrap() - 2600.0).abs() < 1e-9);
        let lm = 10.0 / 0.02;
        let g = CavityGeometry::new(2600.0 - 2.0 * lm, 10.0, 0.02).unwrap();
        assert!((cavity_length(&g).unwrap() - 2600.0).abs() < 1e-9);
        let zero = CavityGeometry { d: 1.0, w: 1.0, r_s: 0.0 };
        assert!(matches!(cavity_length(&zero), Err(Error::Domain(_))));
        assert!(CavityGeometry::new(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn spectrum_validation() {
        assert!(S11Spectrum::new(vec![1.0], vec![Complex64::new(1.0, 0.0)]).is_err());
        assert!(S11Spectrum::new(vec![2.0, 1.0], vec![Complex64::new(1.0, 0.0); 2]).is_err());
        assert!(S11Spectrum::new(vec![1.0, 2.0], vec![Complex64::new(1.0, 0.0); 3]).is_err());
        assert!(MirrorBand::new(2.0, 1.0).is_err());
    }
}
