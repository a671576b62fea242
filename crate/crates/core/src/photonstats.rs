//! Photon-correlation and lifetime analysis on time-tagged detections.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::lm::{self, LmOptions};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhotonRecord {
    pub channel: u8,
    pub time_ps: u64,
}

/// Far-wing baseline deviation above which `correlate` warns.
pub const WING_TOLERANCE: f64 = 0.1;
/// Bins with |tau| above this fraction of the window form the far wing.
pub const WING_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    /// Bin edges (ps), symmetric about zero with a bin centred on zero.
    pub tau_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Expected coincidences per bin for uncorrelated streams.
    pub normalization: f64,
    pub warnings: Vec<String>,
}

impl CorrelationHistogram {
    pub fn bin_width(&self) -> f64 {
        self.tau_edges[1] - self.tau_edges[0]
    }

    pub fn tau_centers(&self) -> Vec<f64> {
        self.tau_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Half-width of the delay range covered by bin centres (ps).
    pub fn window(&self) -> f64 {
        let n = self.counts.len() / 2;
        n as f64 * self.bin_width()
    }

    pub fn g2(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.normalization).collect()
    }

    /// Poisson standard error of each normalized bin, using the uncorrelated expectation.
    pub fn g2_poisson_sigma(&self) -> f64 {
        1.0 / self.normalization.sqrt()
    }

    /// Adds a histogram of a disjoint time segment with the same binning.
    pub fn merge(&mut self, other: &CorrelationHistogram) -> Result<()> {
        if self.tau_edges != other.tau_edges {
            return Err(Error::domain("cannot merge correlation histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.normalization += other.normalization;
        self.warnings.extend(other.warnings.iter().cloned());
        Ok(())
    }
}

fn channel_times(records: &[PhotonRecord], ch: u8) -> Vec<u64> {
    let mut t: Vec<u64> = records.iter().filter(|r| r.channel == ch).map(|r| r.time_ps).collect();
    t.sort_unstable();
    t
}

/// Symmetric bin index: the bin centred on zero is 0, delays of equal
/// magnitude and opposite sign land in bins of opposite index.
#[inline]
fn bin_index(tau: i64, bin_width: f64) -> i64 {
    let k = ((tau.unsigned_abs() as f64 + 0.5 * bin_width) / bin_width).floor() as i64;
    if tau < 0 {
        -k
    } else {
        k
    }
}

/// Histogram of all pairwise delays `t_b - t_a` within `window_ps`.
///
/// The number of bins on each side of zero is `round(window / bin_width)`.
/// When `ch_a == ch_b` a photon is not paired with itself. Normalization is
/// `N_a * N_b * bin_width / T` with `T` the span covered by both channels.
pub fn correlate(
    records: &[PhotonRecord],
    ch_a: u8,
    ch_b: u8,
    window_ps: f64,
    bin_width_ps: f64,
) -> Result<CorrelationHistogram> {
    if !(bin_width_ps > 0.0 && window_ps > bin_width_ps) {
        return Err(Error::domain(format!(
            "need window > bin width > 0, got window {window_ps} ps, bin {bin_width_ps} ps"
        )));
    }
    let a = channel_times(records, ch_a);
    if a.is_empty() {
        return Err(Error::EmptyChannel(ch_a));
    }
    let b = if ch_a == ch_b { a.clone() } else { channel_times(records, ch_b) };
    if b.is_empty() {
        return Err(Error::EmptyChannel(ch_b));
    }
    let n = (window_ps / bin_width_ps).round() as i64;
    let reach = ((n as f64 + 0.5) * bin_width_ps).ceil() as u64;
    let mut counts = vec![0u64; (2 * n + 1) as usize];
    let mut lo = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        let start = ta.saturating_sub(reach);
        while lo < b.len() && b[lo] < start {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] <= ta + reach {
            if !(ch_a == ch_b && i == j) {
                let k = bin_index(b[j] as i64 - ta as i64, bin_width_ps);
                if k.abs() <= n {
                    counts[(k + n) as usize] += 1;
                }
            }
            j += 1;
        }
    }
    let t_min = a[0].min(b[0]);
    let t_max = a[a.len() - 1].max(b[b.len() - 1]);
    let span = (t_max - t_min) as f64;
    if !(span > 0.0) {
        return Err(Error::InsufficientData("all detections share one timestamp".into()));
    }
    let pairs = if ch_a == ch_b {
        a.len() as f64 * (a.len() as f64 - 1.0)
    } else {
        a.len() as f64 * b.len() as f64
    };
    let normalization = pairs * bin_width_ps / span;
    let tau_edges = (-n..=n + 1).map(|k| (k as f64 - 0.5) * bin_width_ps).collect();
    let mut hist = CorrelationHistogram {
        tau_edges,
        counts,
        normalization,
        warnings: Vec::new(),
    };
    let wing: Vec<f64> = hist
        .tau_centers()
        .iter()
        .zip(&hist.counts)
        .filter(|(t, _)| t.abs() > WING_FRACTION * window_ps)
        .map(|(_, &c)| c as f64)
        .collect();
    if !wing.is_empty() && normalization > 0.0 {
        let mean = wing.iter().sum::<f64>() / wing.len() as f64;
        let dev = mean / normalization - 1.0;
        if dev.abs() > WING_TOLERANCE {
            hist.warnings.push(format!(
                "far-wing baseline differs from the rate-product normalization by {:.1}%",
                100.0 * dev
            ));
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulsedG2 {
    pub g2_0: f64,
    pub se_g2_0: f64,
    /// Side peaks used for the reference area.
    pub side_peaks: usize,
}

/// Pulsed-excitation g2(0): the zero-delay peak area over the mean side-peak area.
///
/// Each peak integrates the bins whose centres lie within half a repetition
/// period of the peak position.
pub fn pulsed_g2(hist: &CorrelationHistogram, rep_period_ps: f64) -> Result<PulsedG2> {
    if !(rep_period_ps > hist.bin_width()) {
        return Err(Error::domain("repetition period must exceed the bin width"));
    }
    let centers = hist.tau_centers();
    let max_k = ((hist.window() - 0.5 * rep_period_ps) / rep_period_ps).floor() as i64;
    if max_k < 1 {
        return Err(Error::InsufficientData("window holds no side peak".into()));
    }
    let area = |k: i64| -> f64 {
        let c = k as f64 * rep_period_ps;
        centers
            .iter()
            .zip(&hist.counts)
            .filter(|(t, _)| (**t - c).abs() < 0.5 * rep_period_ps)
            .map(|(_, &n)| n as f64)
            .sum()
    };
    let center = area(0);
    let sides: Vec<f64> = (1..=max_k).flat_map(|k| [area(-k), area(k)]).collect();
    let side_mean = sides.iter().sum::<f64>() / sides.len() as f64;
    if !(side_mean > 0.0) {
        return Err(Error::InsufficientData("side peaks are empty".into()));
    }
    let g2_0 = center / side_mean;
    // Poisson errors on the centre area and on the mean side area
    let se = g2_0 * (1.0 / center.max(1.0) + 1.0 / (side_mean * sides.len() as f64)).sqrt();
    Ok(PulsedG2 {
        g2_0,
        se_g2_0: se,
        side_peaks: sides.len(),
    })
}

/// Continuous-wave antibunching model `1 - (1 - g2_0) exp(-|tau| / tau0)`.
pub fn g2_model(tau: f64, g2_0: f64, tau0: f64) -> f64 {
    1.0 - (1.0 - g2_0) * (-tau.abs() / tau0).exp()
}

#[derive(Debug, Clone)]
pub struct G2Fit {
    pub g2_0: f64,
    pub se_g2_0: f64,
    /// Antibunching time (ps).
    pub tau0: f64,
    pub se_tau0: f64,
    /// `g2_0 < 0.5`.
    pub single_emitter: bool,
    pub ssr: f64,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Initial antibunching time: the first delay where the curve recovers
/// halfway from its zero-delay value, divided by ln 2.
fn guess_tau0(centers: &[f64], g: &[f64], g0: f64) -> Option<f64> {
    let half = 0.5 * (1.0 + g0);
    let mut best: Option<f64> = None;
    for (t, v) in centers.iter().zip(g) {
        if *t > 0.0 && *v >= half {
            best = Some(best.map_or(*t, |b: f64| b.min(*t)));
        }
    }
    best.map(|t| t / std::f64::consts::LN_2)
}

/// Least-squares fit of the antibunching model to a normalized histogram.
///
/// `tau0_guess` defaults to a half-recovery estimate. The window must cover
/// at least five times the guess.
pub fn fit_g2(hist: &CorrelationHistogram, tau0_guess: Option<f64>, opts: &LmOptions) -> Result<G2Fit> {
    if !(hist.normalization > 0.0) {
        return Err(Error::InsufficientData("histogram has zero normalization".into()));
    }
    let centers = hist.tau_centers();
    let g = hist.g2();
    let mid = hist.counts.len() / 2;
    let g0 = g[mid];
    let amp = 1.0 - g0;
    let window = hist.window();
    let tau0 = match tau0_guess {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(Error::domain(format!("tau0 guess must be positive, got {t}"))),
        None => {
            if amp.abs() * hist.normalization.sqrt() > 3.0 {
                guess_tau0(&centers, &g, g0).unwrap_or(0.1 * window)
            } else {
                0.1 * window
            }
        }
    };
    if window < 5.0 * tau0 {
        return Err(Error::domain(format!(
            "window {window} ps is shorter than 5 x tau0 guess {tau0} ps"
        )));
    }
    let sigma: Vec<f64> = hist
        .counts
        .iter()
        .map(|&c| (c as f64).max(1.0).sqrt() / hist.normalization)
        .collect();
    let residuals = |p: &[f64]| -> Vec<f64> {
        let t0 = p[1].exp();
        centers
            .iter()
            .zip(&g)
            .zip(&sigma)
            .map(|((t, y), s)| (g2_model(*t, p[0], t0) - y) / s)
            .collect()
    };
    let opts = LmOptions {
        absolute_sigma: true,
        ..opts.clone()
    };
    let fit = lm::minimize("g2", residuals, &[g0, tau0.ln()], &[1.0, 1.0], &opts)?;
    let tau0 = fit.params[1].exp();
    let mut warnings = hist.warnings.clone();
    if window < 5.0 * tau0 {
        warnings.push(format!("fitted tau0 {tau0:.3e} ps exceeds a fifth of the window"));
    }
    Ok(G2Fit {
        g2_0: fit.params[0],
        se_g2_0: fit.std_errors[0],
        tau0,
        se_tau0: tau0 * fit.std_errors[1],
        single_emitter: fit.params[0] < 0.5,
        ssr: fit.ssr,
        reduced_chi2: fit.reduced_chi2(),
        n_points: g.len(),
        iterations: fit.iterations,
        warnings,
    })
}

/// Photon counts against delay after an excitation pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayHistogram {
    /// Bin times (ps).
    pub times: Vec<f64>,
    pub counts: Vec<f64>,
}

impl DecayHistogram {
    pub fn new(times: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if times.len() != counts.len() {
            return Err(Error::domain("times and counts differ in length"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("decay times must be strictly increasing"));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::domain("counts must be finite and nonnegative"));
        }
        Ok(DecayHistogram { times, counts })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub const DEFAULT_TAIL_OFFSET: usize = 2;
pub const MIN_TAIL_BINS: usize = 10;

#[derive(Debug, Clone)]
pub struct LifetimeFit {
    /// Decay time (ps).
    pub tau: f64,
    pub se_tau: f64,
    pub amplitude: f64,
    pub se_amplitude: f64,
    pub background: f64,
    pub se_background: f64,
    /// Index of the first fitted bin.
    pub tail_start: usize,
    pub ssr: f64,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub iterations: usize,
}

fn no_decay() -> Error {
    Error::NoDecay("no decay detected".into())
}

/// Fits `A exp(-(t - t0) / tau) + B` to the bins from `peak + tail_offset` on,
/// with `t0` the first fitted bin time. Weights are Poisson.
pub fn fit_lifetime(decay: &DecayHistogram, tail_offset: usize, opts: &LmOptions) -> Result<LifetimeFit> {
    if decay.is_empty() {
        return Err(Error::InsufficientData("empty decay histogram".into()));
    }
    let peak = decay
        .counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if *c > decay.counts[best] { i } else { best });
    let start = peak + tail_offset;
    if decay.len() < start + MIN_TAIL_BINS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_TAIL_BINS} bins in the tail, have {}",
            decay.len().saturating_sub(start)
        )));
    }
    let t: Vec<f64> = decay.times[start..].to_vec();
    let y: Vec<f64> = decay.counts[start..].to_vec();
    if y.iter().all(|&c| c == 0.0) {
        return Err(no_decay());
    }
    let n = y.len();
    let head = 3.min(n / 3).max(1);
    let early = y[..head].iter().sum::<f64>() / head as f64;
    let late_n = (n / 3).max(1);
    let late = y[n - late_n..].iter().sum::<f64>() / late_n as f64;
    let noise = (early / head as f64 + late / late_n as f64).sqrt();
    if early - late <= 3.0 * noise {
        return Err(no_decay());
    }
    let t0 = t[0];
    let b0 = late.min(y.iter().cloned().fold(f64::INFINITY, f64::min));
    let a0 = (y[0] - b0).max(f64::MIN_POSITIVE);
    let target = b0 + a0 / std::f64::consts::E;
    let tau0 = t
        .iter()
        .zip(&y)
        .find(|(_, c)| **c <= target)
        .map(|(ti, _)| (ti - t0).max(t[1] - t0))
        .unwrap_or(t[n - 1] - t0);
    let sigma: Vec<f64> = y.iter().map(|c| c.max(1.0).sqrt()).collect();
    let residuals = |p: &[f64]| -> Vec<f64> {
        let tau = p[0].exp();
        t.iter()
            .zip(&y)
            .zip(&sigma)
            .map(|((ti, yi), s)| (p[1] * (-(ti - t0) / tau).exp() + p[2] - yi) / s)
            .collect()
    };
    let opts = LmOptions {
        absolute_sigma: true,
        ..opts.clone()
    };
    let scale_a = a0.max(1.0);
    let fit = lm::minimize("lifetime", residuals, &[tau0.ln(), a0, b0], &[1.0, scale_a, scale_a], &opts)?;
    let (tau, amp) = (fit.params[0].exp(), fit.params[1]);
    if !(amp > 3.0 * fit.std_errors[1]) || !tau.is_finite() {
        return Err(no_decay());
    }
    Ok(LifetimeFit {
        tau,
        se_tau: tau * fit.std_errors[0],
        amplitude: amp,
        se_amplitude: fit.std_errors[1],
        background: fit.params[2],
        se_background: fit.std_errors[2],
        tail_start: start,
        ssr: fit.ssr,
        reduced_chi2: fit.reduced_chi2(),
        n_points: n,
        iterations: fit.iterations,
    })
}

/// Poisson arrivals at `rate` (per s) over `duration` (s) on one channel.
pub fn poisson_stream(rate: f64, duration: f64, channel: u8, seed: u64) -> Result<Vec<PhotonRecord>> {
    if !(rate > 0.0 && duration > 0.0) {
        return Err(Error::domain("rate and duration must be positive"));
    }
    let gap = Exp::new(rate).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = rng::substream(seed, u64::from(channel));
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= duration {
            break;
        }
        out.push(PhotonRecord {
            channel,
            time_ps: (t * 1e12).round() as u64,
        });
    }
    Ok(out)
}

/// A continuously re-excited two-level emitter behind a 50/50 beam splitter.
///
/// After each emission the emitter waits an exponential excitation time at
/// `pump_rate` (per s), then an exponential radiative delay of `lifetime`
/// (s). Each photon is detected with probability `efficiency` on channel 0
/// or 1 with equal odds.
pub fn two_level_stream(
    pump_rate: f64,
    lifetime: f64,
    efficiency: f64,
    duration: f64,
    seed: u64,
) -> Result<Vec<PhotonRecord>> {
    if !(pump_rate > 0.0 && lifetime > 0.0 && duration > 0.0) || !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::domain("invalid two-level stream parameters"));
    }
    let pump = Exp::new(pump_rate).map_err(|e| Error::domain(e.to_string()))?;
    let decay = Exp::new(1.0 / lifetime).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = rng::substream(seed, 0);
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += pump.sample(&mut rng) + decay.sample(&mut rng);
        if t >= duration {
            break;
        }
        if rng.random::<f64>() < efficiency {
            let channel = u8::from(rng.random::<bool>());
            out.push(PhotonRecord {
                channel,
                time_ps: (t * 1e12).round() as u64,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(channel: u8, time_ps: u64) -> PhotonRecord {
        PhotonRecord { channel, time_ps }
    }

    /// Quadratic pair enumeration, the reference for the two-pointer sweep.
    fn brute_counts(records: &[PhotonRecord], a: u8, b: u8, window: f64, bw: f64) -> Vec<u64> {
        let n = (window / bw).round() as i64;
        let mut counts = vec![0u64; (2 * n + 1) as usize];
        for (i, ra) in records.iter().enumerate().filter(|(_, r)| r.channel == a) {
            for (j, rb) in records.iter().enumerate().filter(|(_, r)| r.channel == b) {
                if a == b && i == j {
                    continue;
                }
                let tau = rb.time_ps as f64 - ra.time_ps as f64;
                // nearest bin centre, ties away from zero
                let k = (tau.abs() / bw + 0.5).floor() * tau.signum();
                if k.abs() <= n as f64 {
                    counts[(k as i64 + n) as usize] += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn matches_brute_force_pairs() {
        let records = vec![
            rec(0, 100), rec(1, 130), rec(0, 160), rec(1, 200), rec(1, 205), rec(0, 450), rec(1, 455), rec(1, 900),
        ];
        let h = correlate(&records, 0, 1, 300.0, 20.0).unwrap();
        assert_eq!(h.counts, brute_counts(&records, 0, 1, 300.0, 20.0));
        let h = correlate(&records, 1, 1, 300.0, 20.0).unwrap();
        assert_eq!(h.counts, brute_counts(&records, 1, 1, 300.0, 20.0));
    }

    #[test]
    fn duplicated_stream_peaks_at_zero() {
        let mut records = Vec::new();
        for t in poisson_stream(1e6, 1e-3, 0, 3).unwrap() {
            records.push(t);
            records.push(rec(1, t.time_ps));
        }
        let h = correlate(&records, 0, 1, 50_000.0, 1000.0).unwrap();
        let mid = h.counts.len() / 2;
        let g = h.g2();
        assert!(g.iter().enumerate().all(|(i, v)| i == mid || *v < g[mid]));
        assert!(g[mid] > 10.0);
    }

    #[test]
    fn empty_channel_is_an_error() {
        let records = vec![rec(0, 1), rec(0, 5)];
        assert!(matches!(correlate(&records, 0, 1, 100.0, 10.0), Err(Error::EmptyChannel(1))));
        assert!(correlate(&records, 0, 0, 10.0, 10.0).is_err());
    }

    #[test]
    fn two_level_emitter_antibunches() {
        let records = two_level_stream(2e8, 2e-9, 0.05, 0.2, 11).unwrap();
        let h = correlate(&records, 0, 1, 20_000.0, 250.0).unwrap();
        let g = h.g2();
        let mid = g.len() / 2;
        assert!(g[mid] < 0.3, "{}", g[mid]);
        let wing = g[..5].iter().sum::<f64>() / 5.0;
        assert!((wing - 1.0).abs() < 0.15, "{wing}");
    }

    fn synthetic_g2(g2_0: f64, tau0: f64, norm: f64, n: i64, bw: f64) -> CorrelationHistogram {
        let tau_edges: Vec<f64> = (-n..=n + 1).map(|k| (k as f64 - 0.5) * bw).collect();
        let counts = (-n..=n)
            .map(|k| (norm * g2_model(k as f64 * bw, g2_0, tau0)).round() as u64)
            .collect();
        CorrelationHistogram {
            tau_edges,
            counts,
            normalization: norm,
            warnings: vec![],
        }
    }

    #[test]
    fn g2_fit_recovers_model() {
        let h = synthetic_g2(0.22, 3000.0, 1e6, 60, 500.0);
        let fit = fit_g2(&h, None, &LmOptions::default()).unwrap();
        assert!((fit.g2_0 - 0.22).abs() < 1e-3, "{fit:?}");
        assert!((fit.tau0 / 3000.0 - 1.0).abs() < 1e-2);
        assert!(fit.single_emitter);
    }

    #[test]
    fn flat_g2_is_not_single() {
        let h = synthetic_g2(1.0, 3000.0, 1e4, 60, 500.0);
        let fit = fit_g2(&h, None, &LmOptions::default()).unwrap();
        assert!((fit.g2_0 - 1.0).abs() < 0.05);
        assert!(!fit.single_emitter);
    }

    #[test]
    fn g2_window_guard() {
        let h = synthetic_g2(0.2, 3000.0, 1e4, 20, 500.0);
        assert!(fit_g2(&h, Some(5000.0), &LmOptions::default()).is_err());
    }

    #[test]
    fn pulsed_ratio() {
        // peaks every 12.5 ns; the centre peak at 30 % of the side peaks
        let bw = 500.0;
        let n = 100;
        let period = 12_500.0;
        let tau_edges: Vec<f64> = (-n..=n + 1).map(|k| (k as f64 - 0.5) * bw).collect();
        let counts = (-n..=n)
            .map(|k| {
                let tau = k as f64 * bw;
                let m = (tau / period).round();
                let d = tau - m * period;
                let h = if m == 0.0 { 300.0 } else { 1000.0 };
                (h * (-(d.abs()) / 1000.0).exp()).round() as u64
            })
            .collect();
        let hist = CorrelationHistogram {
            tau_edges,
            counts,
            normalization: 1.0,
            warnings: vec![],
        };
        let r = pulsed_g2(&hist, period).unwrap();
        assert!((r.g2_0 - 0.3).abs() < 5e-3, "{r:?}");
        assert_eq!(r.side_peaks, 6);
    }

    fn decay(tau: f64, amp: f64, bg: f64) -> DecayHistogram {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 50.0).collect();
        let counts = times
            .iter()
            .map(|t| if *t < 500.0 { bg + amp * t / 500.0 } else { bg + amp * (-(t - 500.0) / tau).exp() })
            .collect();
        DecayHistogram::new(times, counts).unwrap()
    }

    #[test]
    fn lifetime_noiseless() {
        let fit = fit_lifetime(&decay(2000.0, 1e4, 0.0), DEFAULT_TAIL_OFFSET, &LmOptions::default()).unwrap();
        assert!((fit.tau / 2000.0 - 1.0).abs() < 5e-3, "{fit:?}");
    }

    #[test]
    fn lifetime_with_background() {
        let fit = fit_lifetime(&decay(2000.0, 1e4, 100.0), DEFAULT_TAIL_OFFSET, &LmOptions::default()).unwrap();
        assert!((fit.tau / 2000.0 - 1.0).abs() < 0.03);
        assert!((fit.background - 100.0).abs() < 1.0);
    }

    #[test]
    fn lifetime_rejects_flat_and_empty() {
        let flat = DecayHistogram::new((0..50).map(|i| i as f64).collect(), vec![40.0; 50]).unwrap();
        assert!(matches!(fit_lifetime(&flat, 2, &LmOptions::default()), Err(Error::NoDecay(_))));
        let mut zeros = vec![0.0; 50];
        zeros[0] = 10.0;
        let z = DecayHistogram::new((0..50).map(|i| i as f64).collect(), zeros).unwrap();
        assert!(matches!(fit_lifetime(&z, 2, &LmOptions::default()), Err(Error::NoDecay(_))));
        let short = DecayHistogram::new((0..8).map(|i| i as f64).collect(), vec![1.0; 8]).unwrap();
        assert!(matches!(fit_lifetime(&short, 2, &LmOptions::default()), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn swapping_channels_mirrors_the_histogram(
            ta in proptest::collection::vec(0u64..100_000, 1..60),
            tb in proptest::collection::vec(0u64..100_000, 1..60),
            bw in 1.0f64..500.0,
        ) {
            let mut records = vec![rec(0, 0), rec(1, 200_000)];
            records.extend(ta.iter().map(|&t| rec(0, t)));
            records.extend(tb.iter().map(|&t| rec(1, t)));
            let window = bw * 7.3;
            let ab = correlate(&records, 0, 1, window, bw).unwrap();
            let ba = correlate(&records, 1, 0, window, bw).unwrap();
            let mut rev = ba.counts.clone();
            rev.reverse();
            prop_assert_eq!(ab.counts, rev);
        }

        #[test]
        fn time_shift_leaves_histogram_unchanged(
            ta in proptest::collection::vec(0u64..100_000, 2..60),
            tb in proptest::collection::vec(0u64..100_000, 2..60),
            shift in 0u64..1_000_000_000_000,
        ) {
            let mut records = vec![rec(0, 0), rec(1, 200_000)];
            records.extend(ta.iter().map(|&t| rec(0, t)));
            records.extend(tb.iter().map(|&t| rec(1, t)));
            let shifted: Vec<_> = records.iter().map(|r| rec(r.channel, r.time_ps + shift)).collect();
            let a = correlate(&records, 0, 1, 3000.0, 100.0).unwrap();
            let b = correlate(&shifted, 0, 1, 3000.0, 100.0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn two_pointer_matches_brute_force(
            ta in proptest::collection::vec(0u64..20_000, 1..40),
            tb in proptest::collection::vec(0u64..20_000, 1..40),
        ) {
            let mut records = vec![rec(0, 0), rec(1, 200_000)];
            records.extend(ta.iter().map(|&t| rec(0, t)));
            records.extend(tb.iter().map(|&t| rec(1, t)));
            let h = correlate(&records, 0, 1, 2000.0, 100.0).unwrap();
            prop_assert_eq!(h.counts, brute_counts(&records, 0, 1, 2000.0, 100.0));
        }
    }
}
