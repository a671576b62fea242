//! SAW-modulated emitter lineshapes.
//!
//! At time `t` the emitter is a Lorentzian of half-width `gamma` centred at
//! `omega0 + delta_e * sin(2 pi f_rf t + phase0)`, normalized to a peak value
//! of `amplitude`. The steady-state spectrum is the average over one drive
//! period, evaluated with a uniform phase rule. The integrand is smooth and
//! periodic, so that rule converges geometrically.
//!
//! The averaged spectrum does not peak exactly at `omega0 +- delta_e`: the
//! arcsine distribution of instantaneous centres smeared by the Lorentzian
//! puts each maximum about `0.6 gamma` inside the turning points.

use crate::error::{Error, Result};
use crate::lm::{self, LmOptions};

/// Phase samples per drive period.
pub const DEFAULT_PHASE_SAMPLES: usize = 512;

/// Largest change allowed when the phase sample count is doubled, relative to
/// the spectrum maximum.
pub const QUADRATURE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulatedEmitter {
    /// Zero-phonon line centre (meV).
    pub omega0: f64,
    /// Lorentzian half-width (meV).
    pub gamma: f64,
    /// Modulation amplitude (meV).
    pub delta_e: f64,
    /// Drive frequency (Hz).
    pub f_rf: f64,
    /// Drive phase at t = 0 (rad).
    pub phase0: f64,
    /// Peak spectral weight of the unmodulated line.
    pub amplitude: f64,
}

impl ModulatedEmitter {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.delta_e >= 0.0
            && self.f_rf > 0.0
            && self.amplitude >= 0.0
            && [self.omega0, self.gamma, self.delta_e, self.f_rf, self.phase0, self.amplitude]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid emitter {self:?}")))
        }
    }

    /// Instantaneous line centre at time `t` (s).
    pub fn center_at(&self, t: f64) -> f64 {
        self.omega0 + self.delta_e * drive_phase(self.f_rf, t, self.phase0).sin()
    }

    /// Drive period (s).
    pub fn period(&self) -> f64 {
        1.0 / self.f_rf
    }
}

/// `2 pi f t + phase0`, with `f t` reduced to one period first.
pub(crate) fn drive_phase(f_rf: f64, t: f64, phase0: f64) -> f64 {
    let cycles = (f_rf * t).rem_euclid(1.0);
    std::f64::consts::TAU * cycles + phase0
}

#[inline]
pub(crate) fn lorentzian(x: f64, gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    g2 / (g2 + x * x)
}

/// Spectral density at energy `omega` (meV) and time `t` (s).
pub fn instantaneous_lineshape(emitter: &ModulatedEmitter, omega: f64, t: f64) -> f64 {
    emitter.amplitude * lorentzian(omega - emitter.center_at(t), emitter.gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PLSpectrum {
    energies: Vec<f64>,
    counts: Vec<f64>,
}

impl PLSpectrum {
    pub fn new(energies: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if energies.len() != counts.len() {
            return Err(Error::domain(format!(
                "{} energies but {} counts",
                energies.len(),
                counts.len()
            )));
        }
        check_energy_grid(&energies)?;
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::domain("counts must be finite and non-negative"));
        }
        Ok(PLSpectrum { energies, counts })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Trapezoidal area.
    pub fn area(&self) -> f64 {
        self.energies
            .windows(2)
            .zip(self.counts.windows(2))
            .map(|(e, c)| 0.5 * (e[1] - e[0]) * (c[0] + c[1]))
            .sum()
    }

    /// Energies of interior local maxima, highest first.
    pub fn maxima(&self) -> Vec<f64> {
        let c = &self.counts;
        let mut peaks: Vec<(f64, f64)> = (1..c.len().saturating_sub(1))
            .filter(|&i| c[i] > c[i - 1] && c[i] >= c[i + 1])
            .map(|i| (c[i], self.energies[i]))
            .collect();
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
        peaks.into_iter().map(|(_, e)| e).collect()
    }
}

fn check_energy_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "energy grid needs at least 2 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|e| !e.is_finite()) {
        return Err(Error::domain("energies must be finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("energies must be strictly increasing"));
    }
    Ok(())
}

/// Uniform phase rule `theta_k = 2 pi k / n` folded onto distinct sine values.
#[derive(Debug, Clone)]
pub(crate) struct PhaseRule {
    sines: Vec<f64>,
    weights: Vec<f64>,
    norm: f64,
}

impl PhaseRule {
    pub(crate) fn new(samples: usize) -> Self {
        let n = samples.max(1);
        let tau = std::f64::consts::TAU;
        if n % 4 == 0 {
            // sin(theta) = sin(pi - theta): k and n/2 - k coincide
            let q = (n / 4) as i64;
            let mut sines = Vec::with_capacity(n / 2 + 1);
            let mut weights = Vec::with_capacity(n / 2 + 1);
            for k in -q..=q {
                sines.push((tau * k as f64 / n as f64).sin());
                weights.push(if k.abs() == q { 1.0 } else { 2.0 });
            }
            PhaseRule {
                sines,
                weights,
                norm: n as f64,
            }
        } else {
            PhaseRule {
                sines: (0..n).map(|k| (tau * k as f64 / n as f64).sin()).collect(),
                weights: vec![1.0; n],
                norm: n as f64,
            }
        }
    }

    /// Period average of a unit-peak Lorentzian at detuning `x`.
    #[inline]
    pub(crate) fn average(&self, x: f64, gamma: f64, delta_e: f64) -> f64 {
        let mut acc = 0.0;
        for (s, w) in self.sines.iter().zip(&self.weights) {
            acc += w * lorentzian(x - delta_e * s, gamma);
        }
        acc / self.norm
    }
}

fn averaged_values(emitter: &ModulatedEmitter, grid: &[f64], rule: &PhaseRule) -> Vec<f64> {
    grid.iter()
        .map(|&w| emitter.amplitude * rule.average(w - emitter.omega0, emitter.gamma, emitter.delta_e))
        .collect()
}

#[derive(Debug, Clone)]
pub struct AveragedSpectrum {
    pub spectrum: PLSpectrum,
    /// The grid does not reach `omega0 +- (delta_e + 10 gamma)`.
    pub truncated: bool,
    /// Largest change, relative to the maximum, when the phase rule is doubled.
    pub quadrature_change: f64,
    pub warnings: Vec<String>,
}

/// Period-averaged spectrum on `grid` with an explicit phase sample count and
/// no convergence check.
pub fn time_averaged_spectrum_with(emitter: &ModulatedEmitter, grid: &[f64], samples: usize) -> Result<PLSpectrum> {
    emitter.validate()?;
    check_energy_grid(grid)?;
    let rule = PhaseRule::new(samples);
    PLSpectrum::new(grid.to_vec(), averaged_values(emitter, grid, &rule))
}

/// Period-averaged spectrum with the default phase rule and a doubling check.
///
/// The full-period average does not depend on `phase0`.
pub fn time_averaged_spectrum(emitter: &ModulatedEmitter, grid: &[f64]) -> Result<AveragedSpectrum> {
    emitter.validate()?;
    check_energy_grid(grid)?;
    let coarse = averaged_values(emitter, grid, &PhaseRule::new(DEFAULT_PHASE_SAMPLES));
    let fine = averaged_values(emitter, grid, &PhaseRule::new(2 * DEFAULT_PHASE_SAMPLES));
    let peak = coarse.iter().cloned().fold(0.0, f64::max);
    let quadrature_change = if peak > 0.0 {
        coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / peak
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    let reach = emitter.delta_e + 10.0 * emitter.gamma;
    let truncated = grid[0] > emitter.omega0 - reach || grid[grid.len() - 1] < emitter.omega0 + reach;
    if truncated {
        warnings.push(format!(
            "grid [{:.6}, {:.6}] meV does not cover omega0 +- {:.6} meV; spectrum truncated",
            grid[0],
            grid[grid.len() - 1],
            reach
        ));
    }
    if quadrature_change > QUADRATURE_GUARD {
        warnings.push(format!(
            "phase quadrature not converged: doubling samples changes the spectrum by {quadrature_change:.3e}"
        ));
    }
    Ok(AveragedSpectrum {
        spectrum: PLSpectrum::new(grid.to_vec(), coarse)?,
        truncated,
        quadrature_change,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundModel {
    Constant,
    Linear,
}

#[derive(Debug, Clone)]
pub struct LineshapeFitOptions {
    pub background: BackgroundModel,
    pub phase_samples: usize,
    pub lm: LmOptions,
}

impl Default for LineshapeFitOptions {
    fn default() -> Self {
        LineshapeFitOptions {
            background: BackgroundModel::Constant,
            phase_samples: DEFAULT_PHASE_SAMPLES,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineshapeFit {
    /// Fitted emitter; `delta_e` is zero when the unmodulated model won.
    pub emitter: ModulatedEmitter,
    pub se_omega0: f64,
    pub se_gamma: f64,
    pub se_delta_e: f64,
    pub se_amplitude: f64,
    /// Constant offset and, for the linear model, slope per meV about `background_ref`.
    pub background: (f64, f64),
    pub se_background: (f64, f64),
    pub background_ref: f64,
    /// Whether the modulated model was selected.
    pub modulated: bool,
    pub ssr: f64,
    pub ssr_modulated: Option<f64>,
    pub ssr_unmodulated: Option<f64>,
    pub n_points: usize,
    pub warnings: Vec<String>,
}

impl LineshapeFit {
    pub fn residual_norm(&self) -> f64 {
        self.ssr.sqrt()
    }

    pub fn model_at(&self, omega: f64, phase_samples: usize) -> f64 {
        let rule = PhaseRule::new(phase_samples);
        let e = &self.emitter;
        e.amplitude * rule.average(omega - e.omega0, e.gamma, e.delta_e)
            + self.background.0
            + self.background.1 * (omega - self.background_ref)
    }
}

/// Best linear (amplitude, offset) for a unit-amplitude shape.
fn linear_amplitude(shape: &[f64], y: &[f64]) -> (f64, f64) {
    let n = shape.len() as f64;
    let (sx, sy) = (shape.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = shape.iter().map(|v| v * v).sum();
    let sxy: f64 = shape.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return (y.iter().cloned().fold(f64::MIN, f64::max), 0.0);
    }
    let a = (n * sxy - sx * sy) / det;
    ((a).max(f64::MIN_POSITIVE), (sy - a * sx) / n)
}

/// Akaike information criterion for Gaussian residuals.
fn aic(ssr: f64, n: usize, k: usize, floor: f64) -> f64 {
    let n = n as f64;
    n * (ssr / n + floor).ln() + 2.0 * k as f64
}

/// Fits the period-averaged lineshape plus background to `spectrum`.
///
/// Both the modulated model and the plain Lorentzian (`delta_e = 0`) are
/// fitted; the one with the lower Akaike criterion is reported.
pub fn fit_modulated_lineshape(
    spectrum: &PLSpectrum,
    initial: &ModulatedEmitter,
    opts: &LineshapeFitOptions,
) -> Result<LineshapeFit> {
    initial.validate()?;
    let x = spectrum.energies();
    let y = spectrum.counts();
    let n = x.len();
    let y_max = y.iter().cloned().fold(f64::MIN, f64::max);
    let y_min = y.iter().cloned().fold(f64::MAX, f64::min);
    if !(y_max - y_min > 1e-12 * y_max.abs().max(1e-300)) {
        return Err(Error::NoPeak("spectrum is flat".into()));
    }
    let (lo, hi) = (x[0], x[n - 1]);
    if initial.omega0 - initial.delta_e < lo || initial.omega0 + initial.delta_e > hi {
        return Err(Error::domain(format!(
            "spectrum [{lo:.6}, {hi:.6}] meV does not cover the initial peaks at {:.6} +- {:.6} meV",
            initial.omega0, initial.delta_e
        )));
    }
    let linear = opts.background == BackgroundModel::Linear;
    let x_ref = 0.5 * (lo + hi);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let rule = PhaseRule::new(opts.phase_samples);
    let bg_count = if linear { 2 } else { 1 };

    let bg = |p: &[f64], o: usize, w: f64| {
        if linear {
            p[o] + p[o + 1] * (w - x_ref) / span
        } else {
            p[o]
        }
    };

    // modulated: [omega0, ln gamma, delta_e, amplitude, c0, (c1)]
    let shape0: Vec<f64> = x
        .iter()
        .map(|&w| rule.average(w - initial.omega0, initial.gamma, initial.delta_e))
        .collect();
    let (a0, c0) = linear_amplitude(&shape0, y);
    let mut p_mod = vec![initial.omega0, initial.gamma.ln(), initial.delta_e, a0, c0];
    let amp_scale = (y_max - y_min).max(f64::MIN_POSITIVE);
    let mut s_mod = vec![initial.gamma, 1.0, initial.gamma, amp_scale, amp_scale];
    if linear {
        p_mod.push(0.0);
        s_mod.push(amp_scale);
    }
    let res_mod = |p: &[f64]| -> Vec<f64> {
        let g = p[1].exp();
        x.iter()
            .zip(y)
            .map(|(&w, &c)| p[3] * rule.average(w - p[0], g, p[2]) + bg(p, 4, w) - c)
            .collect()
    };
    let fit_mod = lm::minimize("modulated lineshape", res_mod, &p_mod, &s_mod, &opts.lm);

    // unmodulated: [omega0, ln gamma, amplitude, c0, (c1)]
    let g_wide = (initial.gamma.powi(2) + initial.delta_e.powi(2)).sqrt();
    let shape1: Vec<f64> = x.iter().map(|&w| lorentzian(w - initial.omega0, g_wide)).collect();
    let (a1, c1) = linear_amplitude(&shape1, y);
    let mut p_lor = vec![initial.omega0, g_wide.ln(), a1, c1];
    let mut s_lor = vec![g_wide, 1.0, amp_scale, amp_scale];
    if linear {
        p_lor.push(0.0);
        s_lor.push(amp_scale);
    }
    let res_lor = |p: &[f64]| -> Vec<f64> {
        let g = p[1].exp();
        x.iter()
            .zip(y)
            .map(|(&w, &c)| p[2] * lorentzian(w - p[0], g) + bg(p, 3, w) - c)
            .collect()
    };
    let fit_lor = lm::minimize("lorentzian", res_lor, &p_lor, &s_lor, &opts.lm);

    let mut warnings = Vec::new();
    let floor = (1e-12 * y_max.abs()).powi(2);
    let k_mod = 4 + bg_count;
    let k_lor = 3 + bg_count;
    let use_mod = match (&fit_mod, &fit_lor) {
        (Ok(m), Ok(l)) => aic(m.ssr, n, k_mod, floor) < aic(l.ssr, n, k_lor, floor),
        (Ok(_), Err(e)) => {
            warnings.push(format!("unmodulated fit failed: {e}"));
            true
        }
        (Err(e), Ok(_)) => {
            warnings.push(format!("modulated fit failed: {e}"));
            false
        }
        (Err(_), Err(_)) => return Err(fit_mod.unwrap_err()),
    };
    let ssr_modulated = fit_mod.as_ref().ok().map(|f| f.ssr);
    let ssr_unmodulated = fit_lor.as_ref().ok().map(|f| f.ssr);

    let fit = if use_mod {
        let f = fit_mod.expect("checked");
        let g = f.params[1].exp();
        let b = f.params.get(5).copied().unwrap_or(0.0) / span;
        let sb = f.std_errors.get(5).copied().unwrap_or(0.0) / span;
        LineshapeFit {
            emitter: ModulatedEmitter {
                omega0: f.params[0],
                gamma: g,
                delta_e: f.params[2].abs(),
                amplitude: f.params[3],
                ..*initial
            },
            se_omega0: f.std_errors[0],
            se_gamma: g * f.std_errors[1],
            se_delta_e: f.std_errors[2],
            se_amplitude: f.std_errors[3],
            background: (f.params[4], b),
            se_background: (f.std_errors[4], sb),
            background_ref: x_ref,
            modulated: true,
            ssr: f.ssr,
            ssr_modulated,
            ssr_unmodulated,
            n_points: n,
            warnings,
        }
    } else {
        let f = fit_lor.expect("checked");
        let g = f.params[1].exp();
        let b = f.params.get(4).copied().unwrap_or(0.0) / span;
        let sb = f.std_errors.get(4).copied().unwrap_or(0.0) / span;
        LineshapeFit {
            emitter: ModulatedEmitter {
                omega0: f.params[0],
                gamma: g,
                delta_e: 0.0,
                amplitude: f.params[2],
                ..*initial
            },
            se_omega0: f.std_errors[0],
            se_gamma: g * f.std_errors[1],
            se_delta_e: 0.0,
            se_amplitude: f.std_errors[2],
            background: (f.params[3], b),
            se_background: (f.std_errors[3], sb),
            background_ref: x_ref,
            modulated: false,
            ssr: f.ssr,
            ssr_modulated,
            ssr_unmodulated,
            n_points: n,
            warnings,
        }
    };
    if fit.emitter.amplitude <= 0.0 {
        return Err(Error::NoPeak("fitted amplitude is not positive".into()));
    }
    Ok(fit)
}

/// Spectra recorded against drive frequency: one column per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PLMap {
    pub drive_frequencies: Vec<f64>,
    pub energies: Vec<f64>,
    /// `counts[j][i]` is the count at `energies[i]` for `drive_frequencies[j]`.
    pub counts: Vec<Vec<f64>>,
}

impl PLMap {
    pub fn frame(&self, j: usize) -> Result<PLSpectrum> {
        PLSpectrum::new(self.energies.clone(), self.counts[j].clone())
    }
}

/// Fits every frame of a frequency sweep. With `recenter`, each frame's
/// initial `omega0` is moved to the frame's background-subtracted centroid,
/// which follows slow spectral jitter.
pub fn fit_map(
    map: &PLMap,
    initial: &ModulatedEmitter,
    recenter: bool,
    opts: &LineshapeFitOptions,
) -> Vec<(f64, Result<LineshapeFit>)> {
    map.drive_frequencies
        .iter()
        .enumerate()
        .map(|(j, &f)| {
            let result = map.frame(j).and_then(|frame| {
                let mut guess = ModulatedEmitter { f_rf: f, ..*initial };
                if recenter {
                    let floor = frame.counts().iter().cloned().fold(f64::MAX, f64::min);
                    let (mut num, mut den) = (0.0, 0.0);
                    for (e, c) in frame.energies().iter().zip(frame.counts()) {
                        num += e * (c - floor);
                        den += c - floor;
                    }
                    if den > 0.0 {
                        guess.omega0 = num / den;
                    }
                }
                fit_modulated_lineshape(&frame, &guess, opts)
            });
            (f, result)
        })
        .collect()
}

/// H and V transitions of a fine-structure split line sharing one modulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineStructureDoublet {
    /// Midpoint energy (meV).
    pub center: f64,
    /// H-V splitting (meV); H sits below the centre.
    pub delta_fss: f64,
    /// V/H intensity ratio.
    pub ratio: f64,
    /// Half-width of each transition (meV).
    pub gamma: f64,
    pub delta_e: f64,
    pub f_rf: f64,
    pub phase0: f64,
    /// Peak weight of the H transition.
    pub amplitude: f64,
}

impl FineStructureDoublet {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_fss >= 0.0 && self.ratio > 0.0) {
            return Err(Error::domain(format!("invalid doublet {self:?}")));
        }
        let (h, v) = self.transitions();
        h.validate()?;
        v.validate()
    }

    /// (H, V) transitions.
    pub fn transitions(&self) -> (ModulatedEmitter, ModulatedEmitter) {
        let base = ModulatedEmitter {
            omega0: self.center,
            gamma: self.gamma,
            delta_e: self.delta_e,
            f_rf: self.f_rf,
            phase0: self.phase0,
            amplitude: self.amplitude,
        };
        let h = ModulatedEmitter {
            omega0: self.center - 0.5 * self.delta_fss,
            ..base
        };
        let v = ModulatedEmitter {
            omega0: self.center + 0.5 * self.delta_fss,
            amplitude: self.amplitude * self.ratio,
            ..base
        };
        (h, v)
    }
}

/// Sum of the period-averaged H and V spectra.
pub fn doublet_spectrum(d: &FineStructureDoublet, grid: &[f64]) -> Result<PLSpectrum> {
    d.validate()?;
    let (h, v) = d.transitions();
    let sh = time_averaged_spectrum_with(&h, grid, DEFAULT_PHASE_SAMPLES)?;
    let sv = time_averaged_spectrum_with(&v, grid, DEFAULT_PHASE_SAMPLES)?;
    let counts = sh.counts().iter().zip(sv.counts()).map(|(a, b)| a + b).collect();
    PLSpectrum::new(grid.to_vec(), counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    Separated,
    PartiallyMixed,
    FullyMixed,
}

impl Mixing {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mixing::Separated => "separated",
            Mixing::PartiallyMixed => "partially_mixed",
            Mixing::FullyMixed => "fully_mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingReport {
    pub class: Mixing,
    /// `delta_fss - 2 delta_e` (meV).
    pub inner_gap: f64,
    /// Normalized overlap of the two inner peaks, in [0, 1].
    pub overlap: f64,
}

/// Classifies how far the inner sidebands of H and V have merged.
///
/// Fully mixed when the inner gap is within one half-width, partially mixed
/// up to three. A zero splitting is fully mixed whatever the modulation.
/// The overlap of two unit Lorentzians of half-width `gamma` a distance `g`
/// apart, normalized to its value at `g = 0`, is `4 gamma^2 / (4 gamma^2 + g^2)`.
pub fn classify_mixing(d: &FineStructureDoublet) -> MixingReport {
    let gap = d.delta_fss - 2.0 * d.delta_e;
    if d.delta_fss == 0.0 {
        return MixingReport {
            class: Mixing::FullyMixed,
            inner_gap: gap,
            overlap: 1.0,
        };
    }
    let g = gap.abs();
    let class = if g <= d.gamma {
        Mixing::FullyMixed
    } else if g <= 3.0 * d.gamma {
        Mixing::PartiallyMixed
    } else {
        Mixing::Separated
    };
    let four_g2 = 4.0 * d.gamma * d.gamma;
    MixingReport {
        class,
        inner_gap: gap,
        overlap: four_g2 / (four_g2 + gap * gap),
    }
}
