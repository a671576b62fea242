//! Stroboscopic photon counting through a bandpass filter.
//!
//! The filter passes the part of the instantaneous line that falls inside
//! `[omega_low, omega_high]`, so the detected rate follows the line centre as
//! the drive sweeps it. A passband on one wing of the line produces a rate
//! modulated at `f_rf`. A passband centred on `omega0` is crossed twice per
//! period and produces only even harmonics.
//!
//! Arrival times are folded modulo one drive period. The simulation splits
//! pulses into fixed-size blocks, each with its own random stream, so results
//! do not depend on the number of worker threads.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::emitter::ModulatedEmitter;
use crate::error::{Error, Result};
use crate::lm::{self, LmOptions};
use crate::photonstats::PhotonRecord;
use crate::rng;
use crate::units;

pub const DEFAULT_BINS: usize = 128;
pub const DEFAULT_BLOCK_SIZE: u64 = 8192;
const JITTER_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterEdge {
    /// Step transmission at the band edges.
    Ideal,
    /// Transmission rises as a half cosine over `width` meV centred on each edge.
    RaisedCosine { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassFilter {
    /// Lower passband edge (meV).
    pub omega_low: f64,
    /// Upper passband edge (meV).
    pub omega_high: f64,
    pub edge: FilterEdge,
}

impl BandpassFilter {
    pub fn new(omega_low: f64, omega_high: f64) -> Result<Self> {
        let f = BandpassFilter {
            omega_low,
            omega_high,
            edge: FilterEdge::Ideal,
        };
        f.validate()?;
        Ok(f)
    }

    /// Passband given as two wavelengths in nm, in either order.
    pub fn from_nm(lambda_a: f64, lambda_b: f64) -> Result<Self> {
        if !(lambda_a > 0.0 && lambda_b > 0.0) {
            return Err(Error::domain("wavelengths must be positive"));
        }
        let (a, b) = (units::nm_to_mev(lambda_a), units::nm_to_mev(lambda_b));
        Self::new(a.min(b), a.max(b))
    }

    pub fn with_raised_cosine(mut self, width: f64) -> Result<Self> {
        self.edge = if width > 0.0 {
            FilterEdge::RaisedCosine { width }
        } else {
            FilterEdge::Ideal
        };
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_low < self.omega_high) || !self.omega_low.is_finite() || !self.omega_high.is_finite() {
            return Err(Error::domain(format!(
                "filter edges out of order: [{}, {}]",
                self.omega_low, self.omega_high
            )));
        }
        if let FilterEdge::RaisedCosine { width } = self.edge {
            if !(width > 0.0 && width < self.omega_high - self.omega_low) {
                return Err(Error::domain(format!("edge width {width} must be inside (0, bandwidth)")));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.omega_low + self.omega_high)
    }

    pub fn bandwidth(&self) -> f64 {
        self.omega_high - self.omega_low
    }

    /// Power transmission at `omega` (meV), in [0, 1].
    pub fn transmission(&self, omega: f64) -> f64 {
        match self.edge {
            FilterEdge::Ideal => {
                if omega >= self.omega_low && omega <= self.omega_high {
                    1.0
                } else {
                    0.0
                }
            }
            FilterEdge::RaisedCosine { width } => {
                let ramp = |d: f64| {
                    // d: distance inside the edge
                    if d <= -0.5 * width {
                        0.0
                    } else if d >= 0.5 * width {
                        1.0
                    } else {
                        0.5 * (1.0 - (PI * (d + 0.5 * width) / width).cos())
                    }
                };
                ramp(omega - self.omega_low).min(ramp(self.omega_high - omega))
            }
        }
    }
}

/// `gamma * atan((omega - c) / gamma)`, the antiderivative of a unit-peak Lorentzian.
#[inline]
fn lorentz_primitive(omega: f64, c: f64, gamma: f64) -> f64 {
    gamma * ((omega - c) / gamma).atan()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

fn gauss_legendre<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL8 {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    acc * 0.5 * h
}

/// Filtered intensity for a line centred at `c`.
fn filtered_intensity(amplitude: f64, gamma: f64, c: f64, filter: &BandpassFilter) -> f64 {
    match filter.edge {
        FilterEdge::Ideal => {
            amplitude
                * (lorentz_primitive(filter.omega_high, c, gamma) - lorentz_primitive(filter.omega_low, c, gamma))
        }
        FilterEdge::RaisedCosine { width } => {
            let h = 0.5 * width;
            let (lo, hi) = (filter.omega_low, filter.omega_high);
            let flat = lorentz_primitive(hi - h, c, gamma) - lorentz_primitive(lo + h, c, gamma);
            let line = |w: f64| gamma * gamma / (gamma * gamma + (w - c) * (w - c));
            let ramps = gauss_legendre(lo - h, lo + h, 16, |w| filter.transmission(w) * line(w))
                + gauss_legendre(hi - h, hi + h, 16, |w| filter.transmission(w) * line(w));
            amplitude * (flat + ramps)
        }
    }
}

/// Expected detected rate at time `t` (s): the instantaneous line integrated
/// over the passband, in units of `amplitude * meV`.
pub fn analytic_count_rate(emitter: &ModulatedEmitter, filter: &BandpassFilter, t: f64) -> f64 {
    filtered_intensity(emitter.amplitude, emitter.gamma, emitter.center_at(t), filter)
}

/// Probability that one photon emitted at time `t` passes the filter.
pub fn acceptance_probability(emitter: &ModulatedEmitter, filter: &BandpassFilter, t: f64) -> f64 {
    filtered_intensity(1.0, emitter.gamma, emitter.center_at(t), filter) / (PI * emitter.gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrobeHistogram {
    /// Bin edges spanning one drive period (s).
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_emitted: u64,
    pub total_detected: u64,
}

impl StrobeHistogram {
    pub fn empty(f_rf: f64, bins: usize) -> Result<Self> {
        if !(f_rf > 0.0) || bins == 0 {
            return Err(Error::domain("histogram needs f_rf > 0 and at least one bin"));
        }
        let period = 1.0 / f_rf;
        Ok(StrobeHistogram {
            bin_edges: (0..=bins).map(|i| period * i as f64 / bins as f64).collect(),
            counts: vec![0; bins],
            total_emitted: 0,
            total_detected: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn period(&self) -> f64 {
        self.bin_edges[self.bin_edges.len() - 1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Adds one detection at absolute time `time_ps`.
    pub fn fold(&mut self, time_ps: f64) {
        let period_ps = units::s_to_ps(self.period());
        let pos = time_ps.rem_euclid(period_ps) / period_ps;
        let n = self.counts.len();
        let bin = ((pos * n as f64) as usize).min(n - 1);
        self.counts[bin] += 1;
        self.total_detected += 1;
    }

    /// Adds another histogram with identical binning.
    pub fn merge(&mut self, other: &StrobeHistogram) -> Result<()> {
        if self.bin_edges != other.bin_edges {
            return Err(Error::domain("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_emitted += other.total_emitted;
        self.total_detected += other.total_detected;
        Ok(())
    }

    /// Builds a histogram from bin edges and counts, e.g. read from a file.
    pub fn from_parts(bin_edges: Vec<f64>, counts: Vec<u64>, total_emitted: Option<u64>) -> Result<Self> {
        if bin_edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::domain("need one more edge than bins"));
        }
        if bin_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("bin edges must be strictly increasing"));
        }
        let total_detected: u64 = counts.iter().sum();
        let total_emitted = total_emitted.unwrap_or(total_detected);
        if total_emitted < total_detected {
            return Err(Error::domain("more detections than emissions"));
        }
        Ok(StrobeHistogram {
            bin_edges,
            counts,
            total_emitted,
            total_detected,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Excitation {
    /// Continuous excitation: one emission per slot at a uniformly random time within it.
    Continuous,
    /// Emission triggered at the start of every slot.
    Pulsed,
}

#[derive(Debug, Clone)]
pub struct StrobeConfig {
    pub n_pulses: u64,
    /// Excitation slot length (s).
    pub pulse_period: f64,
    /// Radiative lifetime (s).
    pub lifetime: f64,
    pub seed: u64,
    pub bins: usize,
    pub excitation: Excitation,
    /// Gaussian detector timing jitter (s); zero disables it.
    pub jitter_sigma: f64,
    pub block_size: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub keep_records: bool,
}

impl Default for StrobeConfig {
    fn default() -> Self {
        StrobeConfig {
            n_pulses: 1_000_000,
            pulse_period: 12.5e-9,
            lifetime: 2e-9,
            seed: 1,
            bins: DEFAULT_BINS,
            excitation: Excitation::Continuous,
            jitter_sigma: 0.0,
            block_size: DEFAULT_BLOCK_SIZE,
            workers: 0,
            keep_records: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrobeRun {
    /// Detected photons on channel 0, sorted by time.
    pub records: Vec<PhotonRecord>,
    pub histogram: StrobeHistogram,
}

struct Block {
    records: Vec<PhotonRecord>,
    histogram: StrobeHistogram,
}

fn simulate_block(
    emitter: &ModulatedEmitter,
    filter: &BandpassFilter,
    cfg: &StrobeConfig,
    block: u64,
    decay: &Exp<f64>,
    jitter: Option<&Normal<f64>>,
) -> Block {
    let mut rng = rng::substream(cfg.seed, block);
    // separate stream so that jitter does not shift the emission draws
    let mut jitter_rng = rng::substream(cfg.seed, block | JITTER_STREAM);
    let mut histogram = StrobeHistogram::empty(emitter.f_rf, cfg.bins).expect("validated");
    let mut records = Vec::new();
    let start = block * cfg.block_size;
    let end = (start + cfg.block_size).min(cfg.n_pulses);
    for pulse in start..end {
        let slot = pulse as f64 * cfg.pulse_period;
        let excite = match cfg.excitation {
            Excitation::Continuous => slot + rng.random::<f64>() * cfg.pulse_period,
            Excitation::Pulsed => slot,
        };
        let t_emit = excite + decay.sample(&mut rng);
        let u: f64 = rng.random();
        let energy = emitter.center_at(t_emit) + emitter.gamma * (PI * (u - 0.5)).tan();
        let pass = match filter.edge {
            FilterEdge::Ideal => energy >= filter.omega_low && energy <= filter.omega_high,
            FilterEdge::RaisedCosine { .. } => rng.random::<f64>() < filter.transmission(energy),
        };
        if !pass {
            continue;
        }
        let t_detect = match jitter {
            Some(n) => t_emit + n.sample(&mut jitter_rng),
            None => t_emit,
        };
        let time_ps = units::s_to_ps(t_detect).round().max(0.0) as u64;
        histogram.fold(time_ps as f64);
        if cfg.keep_records {
            records.push(PhotonRecord { channel: 0, time_ps });
        }
    }
    histogram.total_emitted = end - start;
    Block { records, histogram }
}

/// Monte Carlo photon stream through the filter, folded into a phase histogram.
///
/// Per slot: an excitation time, an exponential emission delay, an emission
/// energy equal to the instantaneous centre plus a Lorentzian draw, then the
/// filter decision. Block `b` of `block_size` slots draws from random stream
/// `b` of `seed`, so the output is independent of `workers`.
pub fn simulate_photon_stream(
    emitter: &ModulatedEmitter,
    filter: &BandpassFilter,
    cfg: &StrobeConfig,
) -> Result<StrobeRun> {
    emitter.validate()?;
    filter.validate()?;
    if !(cfg.pulse_period > 0.0) || !(cfg.lifetime > 0.0) {
        return Err(Error::domain("pulse period and lifetime must be positive"));
    }
    if cfg.block_size == 0 || cfg.bins == 0 {
        return Err(Error::domain("block size and bin count must be positive"));
    }
    if cfg.jitter_sigma < 0.0 {
        return Err(Error::domain("jitter sigma must be >= 0"));
    }
    let decay = Exp::new(1.0 / cfg.lifetime).map_err(|e| Error::domain(e.to_string()))?;
    let jitter = if cfg.jitter_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.jitter_sigma).map_err(|e| Error::domain(e.to_string()))?)
    } else {
        None
    };
    let n_blocks = cfg.n_pulses.div_ceil(cfg.block_size);
    let run_blocks = || -> Vec<Block> {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| simulate_block(emitter, filter, cfg, b, &decay, jitter.as_ref()))
            .collect()
    };
    let blocks = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::domain(format!("thread pool: {e}")))?
            .install(run_blocks)
    } else {
        run_blocks()
    };
    let mut histogram = StrobeHistogram::empty(emitter.f_rf, cfg.bins)?;
    let mut records = Vec::new();
    for block in blocks {
        histogram.merge(&block.histogram)?;
        records.extend(block.records);
    }
    records.sort_by_key(|r| (r.time_ps, r.channel));
    Ok(StrobeRun { records, histogram })
}

/// Expected bin counts for `n_pulses` emissions uniformly spread in drive phase.
///
/// This is the continuous-wave case. Pulsed excitation concentrates emission near the
/// pulse phase, so this shape does not apply to it.
pub fn expected_counts(
    emitter: &ModulatedEmitter,
    filter: &BandpassFilter,
    n_pulses: u64,
    bins: usize,
) -> Vec<f64> {
    let period = emitter.period();
    (0..bins)
        .map(|j| {
            let (a, b) = (period * j as f64 / bins as f64, period * (j + 1) as f64 / bins as f64);
            let mean = gauss_legendre(a, b, 2, |t| acceptance_probability(emitter, filter, t)) / (b - a);
            n_pulses as f64 * mean / bins as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Harmonic {
    Fundamental,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicReport {
    /// |X_k| / X_0 for k = 1, 2.
    pub magnitudes: [f64; 2],
    /// arg X_k (rad) for k = 1, 2, with X_k = sum_j c_j exp(-i k theta_j).
    pub phases: [f64; 2],
    pub dominant: Harmonic,
}

/// Projections of `values` sampled at drive phases `theta` onto harmonics 1 and 2,
/// normalized by the DC term.
pub fn harmonics(values: &[f64], theta: &[f64]) -> Result<HarmonicReport> {
    let dc: f64 = values.iter().sum();
    if !(dc > 0.0) {
        return Err(Error::InsufficientData("harmonic analysis needs a positive total".into()));
    }
    let mut magnitudes = [0.0; 2];
    let mut phases = [0.0; 2];
    for k in 1..=2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (v, th) in values.iter().zip(theta) {
            let a = k as f64 * th;
            re += v * a.cos();
            im -= v * a.sin();
        }
        magnitudes[k - 1] = re.hypot(im) / dc;
        phases[k - 1] = im.atan2(re);
    }
    let dominant = if magnitudes[0] >= magnitudes[1] {
        Harmonic::Fundamental
    } else {
        Harmonic::Second
    };
    Ok(HarmonicReport {
        magnitudes,
        phases,
        dominant,
    })
}

/// Fourier content of a phase histogram at `f_rf` and `2 f_rf`.
pub fn harmonic_analysis(h: &StrobeHistogram, f_rf: f64) -> Result<HarmonicReport> {
    if h.bins() < 8 {
        return Err(Error::InsufficientData(format!("need at least 8 bins, got {}", h.bins())));
    }
    if h.total_detected == 0 {
        return Err(Error::InsufficientData("no detected photons".into()));
    }
    let theta: Vec<f64> = h.bin_centers().iter().map(|t| TAU * f_rf * t).collect();
    let values: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    harmonics(&values, &theta)
}

#[derive(Debug, Clone)]
pub struct StrobeFit {
    pub delta_e: f64,
    pub se_delta_e: f64,
    /// Drive phase at t = 0, in [0, 2 pi).
    pub phase0: f64,
    pub se_phase0: f64,
    /// Counts per unit of `analytic_count_rate` for a unit-amplitude emitter.
    pub scale: f64,
    pub se_scale: f64,
    pub ssr: f64,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub iterations: usize,
}

fn bin_mean_rate(e: &ModulatedEmitter, filter: &BandpassFilter, a: f64, b: f64) -> f64 {
    gauss_legendre(a, b, 1, |t| analytic_count_rate(e, filter, t)) / (b - a)
}

/// Weighted least-squares match of the bin-averaged analytic rate to a phase histogram.
///
/// Free parameters are `delta_e`, `phase0` and an overall scale; the line
/// centre, width and filter are held at the given values. Residuals are
/// weighted by Poisson errors.
pub fn fit_strobe(
    h: &StrobeHistogram,
    guess: &ModulatedEmitter,
    filter: &BandpassFilter,
    opts: &LmOptions,
) -> Result<StrobeFit> {
    guess.validate()?;
    filter.validate()?;
    if h.total_detected == 0 {
        return Err(Error::InsufficientData("histogram is empty".into()));
    }
    let unit = ModulatedEmitter {
        amplitude: 1.0,
        ..*guess
    };
    let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = counts.iter().map(|c| c.max(1.0).sqrt()).collect();
    let edges = &h.bin_edges;
    let model = |p: &[f64]| -> Vec<f64> {
        let e = ModulatedEmitter {
            delta_e: p[0],
            phase0: p[1],
            ..unit
        };
        edges
            .windows(2)
            .map(|w| p[2] * bin_mean_rate(&e, filter, w[0], w[1]))
            .collect()
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        model(p)
            .iter()
            .zip(&counts)
            .zip(&sigma)
            .map(|((m, c), s)| (m - c) / s)
            .collect()
    };
    let delta0 = guess.delta_e.max(0.1 * guess.gamma);
    let mean_count = counts.iter().sum::<f64>() / counts.len() as f64;
    let opts = LmOptions {
        absolute_sigma: true,
        ..opts.clone()
    };
    let mut best: Option<lm::LmFit> = None;
    let mut last_err = None;
    for k in 0..4 {
        let phase = guess.phase0 + k as f64 * PI / 2.0;
        let trial = ModulatedEmitter {
            delta_e: delta0,
            phase0: phase,
            ..unit
        };
        let mean_rate = edges
            .windows(2)
            .map(|w| bin_mean_rate(&trial, filter, w[0], w[1]))
            .sum::<f64>()
            / counts.len() as f64;
        if !(mean_rate > 0.0) {
            return Err(Error::domain("filter passes no light for the guessed emitter"));
        }
        let p0 = [delta0, phase, mean_count / mean_rate];
        let scales = [guess.gamma, 1.0, p0[2].abs().max(f64::MIN_POSITIVE)];
        match lm::minimize("strobe", residuals, &p0, &scales, &opts) {
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
        (None, None) => unreachable!("four starts"),
    };
    let (mut delta_e, mut phase0) = (fit.params[0], fit.params[1]);
    if delta_e < 0.0 {
        delta_e = -delta_e;
        phase0 += PI;
    }
    Ok(StrobeFit {
        delta_e,
        se_delta_e: fit.std_errors[0],
        phase0: phase0.rem_euclid(TAU),
        se_phase0: fit.std_errors[1],
        scale: fit.params[2],
        se_scale: fit.std_errors[2],
        ssr: fit.ssr,
        reduced_chi2: fit.reduced_chi2(),
        n_points: counts.len(),
        iterations: fit.iterations,
    })
}

/// Pearson chi-square of observed against expected counts, per bin.
pub fn pearson_chi2(observed: &[u64], expected: &[f64]) -> f64 {
    let chi2: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, e)| **e > 0.0)
        .map(|(o, e)| (*o as f64 - e).powi(2) / e)
        .sum();
    chi2 / observed.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emitter(delta_e: f64) -> ModulatedEmitter {
        ModulatedEmitter {
            omega0: 0.0,
            gamma: 1.0,
            delta_e,
            f_rf: 300e6,
            phase0: 0.0,
            amplitude: 1.0,
        }
    }

    /// Direct midpoint integration of the instantaneous Lorentzian over the passband.
    fn brute_rate(e: &ModulatedEmitter, f: &BandpassFilter, t: f64) -> f64 {
        let n = 200_000;
        let pad = match f.edge {
            FilterEdge::Ideal => 0.0,
            FilterEdge::RaisedCosine { width } => 0.5 * width,
        };
        let lo = f.omega_low - pad;
        let hi = f.omega_high + pad;
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let w = lo + (i as f64 + 0.5) * h;
                f.transmission(w) * crate::emitter::instantaneous_lineshape(e, w, t)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn closed_form_matches_direct_integration() {
        let e = emitter(2.0);
        let f = BandpassFilter::new(1.0, 4.0).unwrap();
        for t in [0.0, 0.4e-9, 1.1e-9, 2.9e-9] {
            let a = analytic_count_rate(&e, &f, t);
            let b = brute_rate(&e, &f, t);
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let soft = f.with_raised_cosine(0.5).unwrap();
        for t in [0.0, 1.1e-9] {
            let a = analytic_count_rate(&e, &soft, t);
            let b = brute_rate(&e, &soft, t);
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn wide_filter_gives_constant_rate() {
        let e = emitter(2.0);
        let reach = e.delta_e + 100.0 * e.gamma;
        let f = BandpassFilter::new(-reach, reach).unwrap();
        let rates: Vec<f64> = (0..200).map(|i| analytic_count_rate(&e, &f, i as f64 * 1e-11)).collect();
        let (lo, hi) = rates.iter().fold((f64::MAX, f64::MIN), |(a, b), r| (a.min(*r), b.max(*r)));
        assert!((hi - lo) / hi < 1e-3);
    }

    #[test]
    fn wing_filter_peaks_at_maximum_excursion() {
        let e = ModulatedEmitter {
            gamma: 0.05,
            delta_e: 0.46,
            ..emitter(0.0)
        };
        let f = BandpassFilter::new(e.delta_e - e.gamma, e.delta_e + e.gamma).unwrap();
        let period = e.period();
        let n = 100_000;
        let (best_t, _) = (0..n)
            .map(|i| {
                let t = period * i as f64 / n as f64;
                (t, analytic_count_rate(&e, &f, t))
            })
            .fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!((best_t - period / 4.0).abs() <= 1.01 * period / n as f64, "{}", best_t / period);
    }

    #[test]
    fn symmetric_filter_halves_the_period() {
        let e = emitter(2.0);
        let f = BandpassFilter::new(-1.5, 1.5).unwrap();
        let half = 0.5 * e.period();
        for i in 0..50 {
            let t = i as f64 * 7.3e-11;
            let a = analytic_count_rate(&e, &f, t);
            let b = analytic_count_rate(&e, &f, t + half);
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn pure_cosine_histogram_harmonics() {
        let bins = 256;
        let mut h = StrobeHistogram::empty(300e6, bins).unwrap();
        // 1 + cos(2 pi t / T) at bin centres, scaled to large integers
        let scale = 1e9;
        for (j, c) in h.counts.iter_mut().enumerate() {
            let th = TAU * (j as f64 + 0.5) / bins as f64;
            *c = (scale * (1.0 + th.cos())).round() as u64;
        }
        h.total_detected = h.counts.iter().sum();
        h.total_emitted = h.total_detected;
        let r = harmonic_analysis(&h, 300e6).unwrap();
        assert!((r.magnitudes[0] - 0.5).abs() < 1e-3);
        assert!(r.magnitudes[1] < 1e-3);
        assert_eq!(r.dominant, Harmonic::Fundamental);
    }

    #[test]
    fn harmonic_preconditions() {
        let h = StrobeHistogram::empty(300e6, 4).unwrap();
        assert!(harmonic_analysis(&h, 300e6).is_err());
        let h = StrobeHistogram::empty(300e6, 64).unwrap();
        assert!(matches!(harmonic_analysis(&h, 300e6), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let e = emitter(2.0);
        let f = BandpassFilter::new(1.0, 4.0).unwrap();
        let cfg = StrobeConfig {
            n_pulses: 20_000,
            ..StrobeConfig::default()
        };
        let a = simulate_photon_stream(&e, &f, &cfg).unwrap();
        let b = simulate_photon_stream(&e, &f, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.histogram, b.histogram);
        let c = simulate_photon_stream(&e, &f, &StrobeConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn zero_pulses_give_empty_histogram() {
        let e = emitter(2.0);
        let f = BandpassFilter::new(1.0, 4.0).unwrap();
        let run = simulate_photon_stream(&e, &f, &StrobeConfig {
            n_pulses: 0,
            ..StrobeConfig::default()
        })
        .unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.histogram.total_detected, 0);
        assert_eq!(run.histogram.total_emitted, 0);
    }

    #[test]
    fn unmodulated_acceptance_matches_lorentzian_cdf() {
        let e = emitter(0.0);
        let f = BandpassFilter::new(-0.5, 2.0).unwrap();
        let n = 200_000;
        let run = simulate_photon_stream(&e, &f, &StrobeConfig {
            n_pulses: n,
            keep_records: false,
            ..StrobeConfig::default()
        })
        .unwrap();
        let p = ((2.0f64).atan() - (-0.5f64).atan()) / PI;
        let frac = run.histogram.total_detected as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < 4.0 * sigma, "{frac} vs {p}");
    }

    #[test]
    fn raised_cosine_transmission() {
        let f = BandpassFilter::new(0.0, 3.0).unwrap().with_raised_cosine(1.0).unwrap();
        assert_eq!(f.transmission(-0.6), 0.0);
        assert!((f.transmission(0.0) - 0.5).abs() < 1e-12);
        assert_eq!(f.transmission(1.5), 1.0);
        assert!((f.transmission(3.0) - 0.5).abs() < 1e-12);
        assert!(BandpassFilter::new(0.0, 1.0).unwrap().with_raised_cosine(2.0).is_err());
        assert!(BandpassFilter::new(1.0, 0.0).is_err());
    }

    #[test]
    fn filter_from_wavelengths() {
        let f = BandpassFilter::from_nm(750.0, 749.0).unwrap();
        assert!(f.omega_low < f.omega_high);
        assert!((f.omega_high - units::nm_to_mev(749.0)).abs() < 1e-12);
    }

    #[test]
    fn jitter_blurs_but_preserves_totals() {
        let e = emitter(2.0);
        let f = BandpassFilter::new(1.0, 4.0).unwrap();
        let base = StrobeConfig {
            n_pulses: 50_000,
            ..StrobeConfig::default()
        };
        let sharp = simulate_photon_stream(&e, &f, &base).unwrap();
        let blurred = simulate_photon_stream(&e, &f, &StrobeConfig {
            jitter_sigma: 0.5e-9,
            ..base
        })
        .unwrap();
        assert_eq!(sharp.histogram.total_detected, blurred.histogram.total_detected);
        let h1 = harmonic_analysis(&sharp.histogram, e.f_rf).unwrap().magnitudes[0];
        let h2 = harmonic_analysis(&blurred.histogram, e.f_rf).unwrap().magnitudes[0];
        assert!(h2 < h1);
    }

    #[test]
    fn strobe_fit_recovers_noiseless_model() {
        let e = ModulatedEmitter {
            phase0: 1.0,
            ..emitter(2.0)
        };
        let f = BandpassFilter::new(1.0, 4.0).unwrap();
        let expected = expected_counts(&e, &f, 10_000_000, 128);
        let mut h = StrobeHistogram::empty(e.f_rf, 128).unwrap();
        for (c, x) in h.counts.iter_mut().zip(&expected) {
            *c = x.round() as u64;
        }
        h.total_detected = h.counts.iter().sum();
        h.total_emitted = 10_000_000;
        let fit = fit_strobe(&h, &ModulatedEmitter { delta_e: 1.5, phase0: 0.0, ..e }, &f, &LmOptions::default()).unwrap();
        assert!((fit.delta_e - 2.0).abs() < 2e-3, "{fit:?}");
        assert!((fit.phase0 - 1.0).abs() < 2e-3, "{fit:?}");
    }

    #[test]
    fn flat_histogram_fits_zero_modulation() {
        let e = emitter(1.0);
        let f = BandpassFilter::new(1.0, 4.0).unwrap();
        let mut h = StrobeHistogram::empty(e.f_rf, 128).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 5000);
        h.total_detected = 5000 * 128;
        h.total_emitted = h.total_detected;
        let fit = fit_strobe(&h, &e, &f, &LmOptions::default()).unwrap();
        assert!(fit.delta_e <= 2.0 * fit.se_delta_e, "{fit:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rate_is_periodic(t in 0.0f64..1e-6, delta_e in 0.0f64..3.0, phase0 in 0.0f64..6.3) {
            let e = ModulatedEmitter { delta_e, phase0, ..emitter(0.0) };
            let f = BandpassFilter::new(0.5, 3.5).unwrap();
            let a = analytic_count_rate(&e, &f, t);
            let b = analytic_count_rate(&e, &f, t + e.period());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }

        #[test]
        fn symmetric_filter_has_no_odd_harmonic(delta_e in 0.1f64..3.0, half in 0.2f64..3.0) {
            let e = emitter(delta_e);
            let f = BandpassFilter::new(-half, half).unwrap();
            let n = 4096;
            let theta: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
            let rates: Vec<f64> = theta.iter().map(|th| analytic_count_rate(&e, &f, th / (TAU * e.f_rf))).collect();
            let r = harmonics(&rates, &theta).unwrap();
            prop_assert!(r.magnitudes[0] < 1e-6);
        }

        #[test]
        fn acceptance_is_a_probability(t in 0.0f64..1e-8, lo in -5.0f64..5.0, width in 0.01f64..10.0) {
            let e = emitter(2.0);
            let f = BandpassFilter::new(lo, lo + width).unwrap();
            let p = acceptance_probability(&e, &f, t);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn folding_ignores_whole_period_shifts(times in proptest::collection::vec(0u64..1_000_000_000, 1..200), k in 1u64..1000) {
            // 250 MHz: the period is exactly 4000 ps
            let mut a = StrobeHistogram::empty(250e6, 128).unwrap();
            let mut b = a.clone();
            for t in &times {
                a.fold(*t as f64);
                b.fold((*t + 4000 * k) as f64);
            }
            prop_assert_eq!(a, b);
        }

        #[test]
        fn merge_is_order_independent(xs in proptest::collection::vec(0u64..100_000, 0..100), ys in proptest::collection::vec(0u64..100_000, 0..100)) {
            let mut a = StrobeHistogram::empty(250e6, 16).unwrap();
            let mut b = a.clone();
            xs.iter().for_each(|t| a.fold(*t as f64));
            ys.iter().for_each(|t| b.fold(*t as f64));
            let mut ab = a.clone();
            ab.merge(&b).unwrap();
            let mut ba = b.clone();
            ba.merge(&a).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }
}
