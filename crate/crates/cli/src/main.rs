use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use sawcav::config::RunConfig;
use sawcav::emitter::{
    fit_map, fit_modulated_lineshape, time_averaged_spectrum, BackgroundModel, LineshapeFitOptions, ModulatedEmitter,
    PLSpectrum,
};
use sawcav::io::{self, EnergyUnit};
use sawcav::lm::LmOptions;
use sawcav::photonstats::{correlate, fit_g2, fit_lifetime, pulsed_g2};
use sawcav::report::{digest, format_number, FitReport};
use sawcav::resonator::{self, detect_dips, fit_s11, synthesize_s11, ResonatorMode, S11FitOptions};
use sawcav::strobe::{self, BandpassFilter, Excitation, StrobeConfig};
use sawcav::sweep::{self, SaturationCut, SaturationOptions, StrainModel, StrainReference};
use sawcav::{units, Error};

/// Simulation and fitting for SAW-cavity optomechanics experiments.
#[derive(Parser, Debug)]
#[command(name = "sawcav", version, about)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the report; stdout when omitted.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit resonator modes to a reflection spectrum (.s1p or CSV).
    FitS11(FitS11),
    /// Synthesize a multi-mode reflection spectrum.
    SimS11(SimS11),
    /// Time-averaged spectrum of a modulated emitter.
    SimSpectrum(SimSpectrum),
    /// Fit a modulated lineshape to a spectrum or a drive-frequency map.
    FitSpectrum(FitSpectrum),
    /// Monte Carlo stroboscopic photon counting through a bandpass filter.
    SimStrobe(SimStrobe),
    /// Fit modulation amplitude and phase to a phase-folded histogram.
    FitStrobe(FitStrobe),
    /// Second-order correlation from time tags.
    G2(G2),
    /// Exponential tail fit of a decay histogram.
    Lifetime(Lifetime),
    /// Power dependence of the modulation amplitude.
    PowerSweep(PowerSweep),
    /// Strain and energy-shift conversions.
    Strain(Strain),
}

#[derive(Args, Debug)]
struct FitS11 {
    /// Reflection data (.s1p Touchstone or frequency CSV).
    #[arg(long)]
    input: PathBuf,
    /// Initial modes as `f` or `f:qi:qe`, comma separated; detected dips when omitted.
    #[arg(long, value_delimiter = ',')]
    guess: Vec<String>,
    /// Write |S11| data and model as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimS11 {
    /// Output file; `.s1p` writes Touchstone, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    /// Modes as `f:qi:qe`, comma separated; the four reference modes when omitted.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<String>,
    /// Sweep range (Hz); defaults to 10 linewidths beyond the outer modes.
    #[arg(long)]
    f_start: Option<f64>,
    /// Upper end of the sweep (Hz).
    #[arg(long)]
    f_stop: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct EmitterArgs {
    /// Line centre (meV).
    #[arg(long)]
    omega0: Option<f64>,
    /// Lorentzian half width (meV).
    #[arg(long)]
    gamma: Option<f64>,
    /// Modulation amplitude (meV).
    #[arg(long)]
    delta_e: Option<f64>,
    /// Drive frequency (Hz).
    #[arg(long)]
    f_rf: Option<f64>,
    /// Drive phase at t = 0 (rad).
    #[arg(long)]
    phase0: Option<f64>,
    /// Peak height of the unmodulated line.
    #[arg(long)]
    amplitude: Option<f64>,
}

#[derive(Args, Debug)]
struct SimSpectrum {
    #[command(flatten)]
    emitter: EmitterArgs,
    /// Energy range (meV); defaults to the centre ± (ΔE + 20Γ).
    #[arg(long)]
    e_min: Option<f64>,
    /// Upper end of the energy range (meV).
    #[arg(long)]
    e_max: Option<f64>,
    /// Spectrum CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitSpectrum {
    /// Spectrum CSV, or a drive-frequency map with `--map`.
    #[arg(long)]
    input: PathBuf,
    /// Input is a drive-frequency map.
    #[arg(long)]
    map: bool,
    /// Move each map frame's start centre to its centroid.
    #[arg(long)]
    recenter: bool,
    #[command(flatten)]
    guess: EmitterArgs,
    /// Write data and model as CSV (single spectra only).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FilterUnit {
    Mev,
    Nm,
}

#[derive(Args, Debug, Clone)]
struct FilterArgs {
    /// Lower passband edge, in `--filter-unit`.
    #[arg(long)]
    filter_low: f64,
    /// Upper passband edge.
    #[arg(long)]
    filter_high: f64,
    #[arg(long, value_enum, default_value = "mev")]
    filter_unit: FilterUnit,
}

impl FilterArgs {
    fn build(&self, cfg: &RunConfig) -> sawcav::Result<BandpassFilter> {
        let f = match self.filter_unit {
            FilterUnit::Mev => BandpassFilter::new(self.filter_low, self.filter_high)?,
            FilterUnit::Nm => BandpassFilter::from_nm(self.filter_low, self.filter_high)?,
        };
        f.with_raised_cosine(cfg.get_f64("strobe.edge_width_mev"))
    }
}

#[derive(Args, Debug)]
struct SimStrobe {
    #[command(flatten)]
    emitter: EmitterArgs,
    #[command(flatten)]
    filter: FilterArgs,
    /// Phase histogram CSV.
    #[arg(long)]
    out: PathBuf,
    /// Detected photons as time tags (.csv or binary).
    #[arg(long)]
    tags: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitStrobe {
    /// Phase histogram CSV.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    emitter: EmitterArgs,
    #[command(flatten)]
    filter: FilterArgs,
    /// Write data and model as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct G2 {
    /// Time tags (.csv or binary).
    #[arg(long)]
    input: PathBuf,
    /// Write the correlation histogram as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Lifetime {
    /// Decay histogram CSV.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct PowerSweep {
    /// Power sweep CSV.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct StrainQuery {
    /// Strain amplitude (%) to convert to an energy shift.
    #[arg(long)]
    strain: Option<f64>,
    /// Energy shift (meV) to convert to strain.
    #[arg(long)]
    shift: Option<f64>,
    /// Drive power (dBm) to convert to strain and shift.
    #[arg(long)]
    power: Option<f64>,
}

#[derive(Args, Debug)]
struct Strain {
    #[command(flatten)]
    query: StrainQuery,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type CmdResult = Result<FitReport, Failure>;

fn main() -> ExitCode {
    // energies and powers are routinely negative
    let command = Cli::command().mut_subcommands(|c| c.allow_negative_numbers(true));
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let usage = |e: Error| Failure::Usage(e.to_string());
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        cfg.load_file(p).map_err(usage)?;
    }
    cfg.apply_env().map_err(usage)?;
    for pair in &cli.set {
        cfg.set_pair(pair).map_err(usage)?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string()).map_err(usage)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let threads = cfg.get_usize("threads");
    if threads > 0 {
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let mut report = match &cli.command {
        Command::FitS11(a) => cmd_fit_s11(a, &cfg),
        Command::SimS11(a) => cmd_sim_s11(a, &cfg),
        Command::SimSpectrum(a) => cmd_sim_spectrum(a, &cfg),
        Command::FitSpectrum(a) => cmd_fit_spectrum(a, &cfg),
        Command::SimStrobe(a) => cmd_sim_strobe(a, &cfg),
        Command::FitStrobe(a) => cmd_fit_strobe(a, &cfg),
        Command::G2(a) => cmd_g2(a, &cfg),
        Command::Lifetime(a) => cmd_lifetime(a, &cfg),
        Command::PowerSweep(a) => cmd_power_sweep(a, &cfg),
        Command::Strain(a) => cmd_strain(a, &cfg),
    }?;
    report.config_snapshot = cfg.snapshot();
    match &cli.report {
        Some(p) => report.write(p)?,
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn lm_options(cfg: &RunConfig) -> LmOptions {
    LmOptions {
        max_iter: cfg.get_usize("lm.max_iter"),
        xtol: cfg.get_f64("lm.xtol"),
        ftol: cfg.get_f64("lm.ftol"),
        ..LmOptions::default()
    }
}

/// SHA-256 of the input file; also the first read, so a missing file is
/// reported with its path.
fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(digest(&bytes))
}

fn bad_arg(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_mode(s: &str) -> Result<(f64, Option<(f64, f64)>), Failure> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad_arg(format!("'{t}' in mode '{s}' is not a number")));
    match parts.as_slice() {
        [f] => Ok((num(f)?, None)),
        [f, qi, qe] => Ok((num(f)?, Some((num(qi)?, num(qe)?)))),
        _ => Err(bad_arg(format!("mode '{s}' must be f or f:qi:qe"))),
    }
}

fn cmd_fit_s11(a: &FitS11, cfg: &RunConfig) -> CmdResult {
    let input_digest = file_digest(&a.input)?;
    let spectrum = io::read_s11(&a.input)?;
    let dips = detect_dips(&spectrum, cfg.get_f64("s11.dip_prominence"));
    let mut initial: Vec<ResonatorMode> = if a.guess.is_empty() {
        dips.clone()
    } else {
        a.guess
            .iter()
            .map(|g| {
                let (f, q) = parse_mode(g)?;
                let (qi, qe) = q.unwrap_or_else(|| {
                    // Q seeds from the nearest detected dip
                    dips.iter()
                        .min_by(|x, y| (x.f_n - f).abs().total_cmp(&(y.f_n - f).abs()))
                        .filter(|d| (d.f_n - f).abs() < 3.0 * d.linewidth())
                        .map_or((1000.0, 1000.0), |d| (d.q_i, d.q_e))
                });
                Ok(ResonatorMode::new(f, qi, qe)?)
            })
            .collect::<Result<_, Failure>>()?
    };
    initial.sort_by(|x, y| x.f_n.total_cmp(&y.f_n));
    if initial.is_empty() {
        return Err(Failure::Data("no resonance dips found; pass --guess".into()));
    }
    let opts = S11FitOptions {
        window_linewidths: cfg.get_f64("s11.window_linewidths"),
        background: cfg.get_bool("s11.background"),
        min_improvement: cfg.get_f64("s11.min_improvement"),
        coupling_tol: cfg.get_f64("s11.coupling_tol"),
        lm: lm_options(cfg),
        ..S11FitOptions::default()
    };
    let fit = fit_s11(&spectrum, &initial, &opts)?;
    if let Some(path) = &a.curve {
        let f = spectrum.frequencies();
        let data: Vec<f64> = spectrum.values().iter().map(|z| z.norm()).collect();
        let model: Vec<f64> = f.iter().map(|&x| fit.model_at(x).norm()).collect();
        io::write_curve(path, &["frequency_hz", "abs_s11_data", "abs_s11_model"], &[f, &data, &model])?;
    }
    let mut r = fit.to_report();
    r.input_digest = input_digest;
    Ok(r)
}

fn cmd_sim_s11(a: &SimS11, cfg: &RunConfig) -> CmdResult {
    let modes: Vec<ResonatorMode> = if a.modes.is_empty() {
        resonator::reference_modes()
    } else {
        a.modes
            .iter()
            .map(|m| match parse_mode(m)? {
                (f, Some((qi, qe))) => Ok(ResonatorMode::new(f, qi, qe)?),
                _ => Err(bad_arg(format!("mode '{m}' needs f:qi:qe"))),
            })
            .collect::<Result<_, Failure>>()?
    };
    let lo = modes.iter().map(|m| m.f_n - 10.0 * m.linewidth()).fold(f64::INFINITY, f64::min);
    let hi = modes.iter().map(|m| m.f_n + 10.0 * m.linewidth()).fold(f64::NEG_INFINITY, f64::max);
    let (f0, f1) = (a.f_start.unwrap_or(lo), a.f_stop.unwrap_or(hi));
    let n = cfg.get_usize("s11.points");
    if n < 2 || !(f1 > f0) {
        return Err(bad_arg("need f_stop > f_start and at least 2 points"));
    }
    let grid: Vec<f64> = (0..n).map(|i| f0 + (f1 - f0) * i as f64 / (n - 1) as f64).collect();
    let seed = cfg.get_u64("seed");
    let sim = synthesize_s11(&modes, &grid, cfg.get_f64("s11.noise_sigma"), seed)?;
    let bytes = if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("s1p")) {
        io::touchstone_text(&sim.spectrum).into_bytes()
    } else {
        io::s11_csv(&sim.spectrum)?
    };
    io::write_atomic(&a.out, &bytes)?;
    let mut r = FitReport::new("sim_s11");
    for (i, m) in modes.iter().enumerate() {
        r = r
            .param(format!("mode{i}.f_n"), m.f_n, 0.0, "Hz")
            .param(format!("mode{i}.q_i"), m.q_i, 0.0, "")
            .param(format!("mode{i}.q_e"), m.q_e, 0.0, "");
    }
    r.n_points = n;
    r.warnings = sim.warnings;
    r.input_digest = digest(&bytes);
    Ok(r)
}

fn emitter_from(a: &EmitterArgs, defaults: ModulatedEmitter) -> ModulatedEmitter {
    ModulatedEmitter {
        omega0: a.omega0.unwrap_or(defaults.omega0),
        gamma: a.gamma.unwrap_or(defaults.gamma),
        delta_e: a.delta_e.unwrap_or(defaults.delta_e),
        f_rf: a.f_rf.unwrap_or(defaults.f_rf),
        phase0: a.phase0.unwrap_or(defaults.phase0),
        amplitude: a.amplitude.unwrap_or(defaults.amplitude),
    }
}

const DEFAULT_EMITTER: ModulatedEmitter = ModulatedEmitter {
    omega0: 0.0,
    gamma: 0.05,
    delta_e: 0.0,
    f_rf: 300e6,
    phase0: 0.0,
    amplitude: 1.0,
};

fn energy_unit(cfg: &RunConfig) -> EnergyUnit {
    EnergyUnit::parse(cfg.get_str("spectrum.unit")).expect("validated choice")
}

fn cmd_sim_spectrum(a: &SimSpectrum, cfg: &RunConfig) -> CmdResult {
    let e = emitter_from(&a.emitter, DEFAULT_EMITTER);
    e.validate()?;
    let reach = e.delta_e + 20.0 * e.gamma;
    let (lo, hi) = (a.e_min.unwrap_or(e.omega0 - reach), a.e_max.unwrap_or(e.omega0 + reach));
    let n = cfg.get_usize("spectrum.points");
    if n < 2 || !(hi > lo) {
        return Err(bad_arg("need e_max > e_min and at least 2 points"));
    }
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let samples = cfg.get_usize("spectrum.phase_samples");
    let averaged = time_averaged_spectrum(&e, &grid)?;
    let mut spectrum = if samples == sawcav::emitter::DEFAULT_PHASE_SAMPLES {
        averaged.spectrum.clone()
    } else {
        sawcav::emitter::time_averaged_spectrum_with(&e, &grid, samples)?
    };
    if cfg.get_str("spectrum.noise") == "poisson" {
        let noisy = sawcav::rng::poisson_counts(spectrum.counts(), cfg.get_u64("seed"));
        spectrum = PLSpectrum::new(grid.clone(), noisy)?;
    }
    let bytes = io::spectrum_csv(&spectrum, energy_unit(cfg))?;
    io::write_atomic(&a.out, &bytes)?;
    let mut r = FitReport::new("sim_spectrum")
        .param("omega0", e.omega0, 0.0, "meV")
        .param("gamma", e.gamma, 0.0, "meV")
        .param("delta_e", e.delta_e, 0.0, "meV")
        .param("amplitude", e.amplitude, 0.0, "counts")
        .param("area", spectrum.area(), 0.0, "counts*meV")
        .label("truncated", averaged.truncated.to_string());
    let maxima = spectrum.maxima();
    for (i, m) in maxima.iter().take(2).enumerate() {
        r = r.param(format!("maximum{i}"), *m, 0.0, "meV");
    }
    r.n_points = n;
    r.warnings = averaged.warnings;
    r.input_digest = digest(&bytes);
    Ok(r)
}

fn lineshape_options(cfg: &RunConfig) -> LineshapeFitOptions {
    LineshapeFitOptions {
        background: if cfg.get_str("spectrum.background") == "linear" {
            BackgroundModel::Linear
        } else {
            BackgroundModel::Constant
        },
        phase_samples: cfg.get_usize("spectrum.phase_samples"),
        lm: lm_options(cfg),
    }
}

/// Start values from the data: the two highest maxima set the centre and
/// the modulation amplitude, the half-maximum width sets Γ.
fn auto_guess(s: &PLSpectrum) -> ModulatedEmitter {
    let e = s.energies();
    let c = s.counts();
    let floor = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let top = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let maxima = s.maxima();
    let height = |x: f64| {
        let i = e.iter().position(|v| *v == x).unwrap_or(0);
        c[i] - floor
    };
    let (omega0, delta_e) = match maxima.as_slice() {
        [a, b, ..] if height(*b) > 0.5 * height(*a) => (0.5 * (a + b), 0.5 * (a - b).abs()),
        [a, ..] => (*a, 0.0),
        [] => (0.5 * (e[0] + e[e.len() - 1]), 0.0),
    };
    let half = floor + 0.5 * (top - floor);
    let above: Vec<f64> = e.iter().zip(c).filter(|(_, v)| **v >= half).map(|(x, _)| *x).collect();
    let width = above.last().zip(above.first()).map_or(0.0, |(h, l)| h - l);
    let step = (e[e.len() - 1] - e[0]) / (e.len() - 1) as f64;
    let gamma = if delta_e > 0.0 { 0.25 * (width - 2.0 * delta_e).max(4.0 * step) } else { 0.5 * width.max(2.0 * step) };
    ModulatedEmitter {
        omega0,
        gamma: gamma.max(step),
        delta_e,
        amplitude: top - floor,
        ..DEFAULT_EMITTER
    }
}

fn cmd_fit_spectrum(a: &FitSpectrum, cfg: &RunConfig) -> CmdResult {
    let opts = lineshape_options(cfg);
    let input_digest = file_digest(&a.input)?;
    if a.map {
        let map = io::read_pl_map_csv(&a.input)?;
        let first = map.frame(0)?;
        let guess = emitter_from(&a.guess, auto_guess(&first));
        let results = fit_map(&map, &guess, a.recenter, &opts);
        let mut r = FitReport::new("modulated_lineshape_map");
        let mut ssr = 0.0;
        let mut ok = 0;
        for (j, (f, res)) in results.iter().enumerate() {
            match res {
                Ok(fit) => {
                    ok += 1;
                    ssr += fit.ssr;
                    let e = &fit.emitter;
                    r = r
                        .param(format!("frame{j}.f_rf"), *f, 0.0, "Hz")
                        .param(format!("frame{j}.omega0"), e.omega0, fit.se_omega0, "meV")
                        .param(format!("frame{j}.gamma"), e.gamma, fit.se_gamma, "meV")
                        .param(format!("frame{j}.delta_e"), e.delta_e, fit.se_delta_e, "meV");
                    r.warnings.extend(fit.warnings.iter().map(|w| format!("frame {j}: {w}")));
                }
                Err(e) => r.warnings.push(format!("frame {j} ({} Hz): {e}", format_number(*f))),
            }
        }
        if ok == 0 {
            return Err(Failure::Data("no frame of the map could be fitted".into()));
        }
        r.converged = ok == results.len();
        r.residual_norm = ssr.sqrt();
        r.n_points = map.energies.len() * map.drive_frequencies.len();
        r.input_digest = input_digest;
        return Ok(r);
    }
    let spectrum = io::read_spectrum_csv(&a.input)?;
    let guess = emitter_from(&a.guess, auto_guess(&spectrum));
    let fit = fit_modulated_lineshape(&spectrum, &guess, &opts)?;
    if let Some(path) = &a.curve {
        let e = spectrum.energies();
        let model: Vec<f64> = e.iter().map(|&x| fit.model_at(x, opts.phase_samples)).collect();
        io::write_curve(path, &["energy_mev", "counts", "model"], &[e, spectrum.counts(), &model])?;
    }
    let mut r = fit.to_report();
    r.input_digest = input_digest;
    Ok(r)
}

fn strobe_emitter(a: &EmitterArgs) -> ModulatedEmitter {
    emitter_from(
        a,
        ModulatedEmitter {
            gamma: 1.0,
            delta_e: 2.0,
            ..DEFAULT_EMITTER
        },
    )
}

fn cmd_sim_strobe(a: &SimStrobe, cfg: &RunConfig) -> CmdResult {
    let e = strobe_emitter(&a.emitter);
    let filter = a.filter.build(cfg)?;
    let sc = StrobeConfig {
        n_pulses: cfg.get_u64("strobe.n_pulses"),
        pulse_period: cfg.get_f64("strobe.pulse_period_s"),
        lifetime: cfg.get_f64("strobe.lifetime_s"),
        seed: cfg.get_u64("seed"),
        bins: cfg.get_usize("strobe.bins"),
        excitation: if cfg.get_str("strobe.excitation") == "pulsed" {
            Excitation::Pulsed
        } else {
            Excitation::Continuous
        },
        jitter_sigma: cfg.get_f64("strobe.jitter_s"),
        block_size: cfg.get_u64("strobe.block_size"),
        workers: cfg.get_usize("threads"),
        keep_records: a.tags.is_some(),
    };
    let run = strobe::simulate_photon_stream(&e, &filter, &sc)?;
    let bytes = io::strobe_csv(&run.histogram)?;
    if let Some(path) = &a.tags {
        if run.records.is_empty() {
            return Err(Failure::Data("no photons passed the filter; no time tags written".into()));
        }
        io::write_timetags(path, &run.records)?;
    }
    io::write_atomic(&a.out, &bytes)?;
    let h = &run.histogram;
    let mut r = FitReport::new("sim_strobe")
        .param("delta_e", e.delta_e, 0.0, "meV")
        .param("gamma", e.gamma, 0.0, "meV")
        .param("f_rf", e.f_rf, 0.0, "Hz")
        .param("total_emitted", h.total_emitted as f64, 0.0, "")
        .param("total_detected", h.total_detected as f64, 0.0, "");
    if h.total_detected > 0 && h.bins() >= 8 {
        let hr = strobe::harmonic_analysis(h, e.f_rf)?;
        r = r
            .param("harmonic1.magnitude", hr.magnitudes[0], 0.0, "")
            .param("harmonic1.phase", hr.phases[0], 0.0, "rad")
            .param("harmonic2.magnitude", hr.magnitudes[1], 0.0, "")
            .param("harmonic2.phase", hr.phases[1], 0.0, "rad")
            .label(
                "dominant_harmonic",
                match hr.dominant {
                    strobe::Harmonic::Fundamental => "f_rf",
                    strobe::Harmonic::Second => "2f_rf",
                },
            );
    } else {
        r.warnings.push("no photons detected".into());
    }
    r.n_points = h.bins();
    r.input_digest = digest(&bytes);
    Ok(r)
}

fn cmd_fit_strobe(a: &FitStrobe, cfg: &RunConfig) -> CmdResult {
    let input_digest = file_digest(&a.input)?;
    let h = io::read_strobe_csv(&a.input)?;
    let mut guess = strobe_emitter(&a.emitter);
    if a.emitter.f_rf.is_none() {
        guess.f_rf = 1.0 / h.period();
    }
    let filter = a.filter.build(cfg)?;
    let fit = strobe::fit_strobe(&h, &guess, &filter, &lm_options(cfg))?;
    if let Some(path) = &a.curve {
        let e = ModulatedEmitter {
            delta_e: fit.delta_e,
            phase0: fit.phase0,
            amplitude: fit.scale,
            ..guess
        };
        let t = h.bin_centers();
        let t_ps: Vec<f64> = t.iter().map(|x| units::s_to_ps(*x)).collect();
        let counts: Vec<f64> = h.counts.iter().map(|c| *c as f64).collect();
        let model: Vec<f64> = t.iter().map(|x| strobe::analytic_count_rate(&e, &filter, *x)).collect();
        io::write_curve(path, &["time_ps", "counts", "model"], &[&t_ps, &counts, &model])?;
    }
    let mut r = fit.to_report();
    r.input_digest = input_digest;
    Ok(r)
}

fn cmd_g2(a: &G2, cfg: &RunConfig) -> CmdResult {
    let input_digest = file_digest(&a.input)?;
    let records = io::read_timetags(&a.input)?;
    let ch = |k: &str| -> Result<u8, Failure> {
        u8::try_from(cfg.get_u64(k)).map_err(|_| bad_arg(format!("{k} must fit in 0..=255")))
    };
    let hist = correlate(
        &records,
        ch("g2.channel_a")?,
        ch("g2.channel_b")?,
        cfg.get_f64("g2.window_ps"),
        cfg.get_f64("g2.bin_ps"),
    )?;
    if let Some(path) = &a.histogram {
        io::write_correlation_csv(path, &hist)?;
    }
    let mut r = if cfg.get_str("g2.mode") == "pulsed" {
        let mut r = pulsed_g2(&hist, cfg.get_f64("g2.rep_period_ps"))?.to_report(hist.counts.len());
        r.warnings = hist.warnings.clone();
        r
    } else {
        fit_g2(&hist, None, &lm_options(cfg))?.to_report()
    };
    r.input_digest = input_digest;
    Ok(r)
}

fn cmd_lifetime(a: &Lifetime, cfg: &RunConfig) -> CmdResult {
    let input_digest = file_digest(&a.input)?;
    let decay = io::read_decay_csv(&a.input)?;
    let fit = fit_lifetime(&decay, cfg.get_usize("lifetime.tail_offset"), &lm_options(cfg))?;
    let mut r = fit.to_report();
    r.input_digest = input_digest;
    Ok(r)
}

fn cmd_power_sweep(a: &PowerSweep, cfg: &RunConfig) -> CmdResult {
    let input_digest = file_digest(&a.input)?;
    let points = io::read_sweep_csv(&a.input)?;
    let sat = SaturationOptions {
        margin: cfg.get_f64("sweep.saturation_margin"),
        min_plateau: cfg.get_usize("sweep.min_plateau"),
    };
    let cut = match cfg.get_str("sweep.cut") {
        "none" => SaturationCut::None,
        "auto" => match sweep::detect_saturation(&points, &sat) {
            Some(c) => SaturationCut::Dbm(c),
            None => SaturationCut::None,
        },
        v => SaturationCut::Dbm(v.parse().expect("validated number")),
    };
    let fit = sweep::fit_sqrtp(&points, cut)?;
    let used: Vec<_> = points
        .iter()
        .filter(|p| fit.cut_dbm.is_none_or(|c| p.p_dbm < c))
        .copied()
        .collect();
    let loglog = match sweep::loglog_exponent(&used) {
        Ok(l) => Some(l),
        Err(_) => None,
    };
    let mut r = fit.to_report(loglog.as_ref());
    if loglog.is_none() {
        r.warnings.push("log-log exponent unavailable: needs positive delta_e".into());
    }
    r.input_digest = input_digest;
    Ok(r)
}

fn cmd_strain(a: &Strain, cfg: &RunConfig) -> CmdResult {
    let model = StrainModel::new(
        cfg.get_f64("strain.d_coupling"),
        Some(StrainReference {
            strain_pct: cfg.get_f64("strain.ref_pct"),
            p_dbm: cfg.get_f64("strain.ref_dbm"),
        }),
    )
    .map_err(|e| bad_arg(e.to_string()))?;
    let q = &a.query;
    let (strain, shift, input) = if let Some(s) = q.strain {
        (s, model.strain_to_shift(s), format!("strain={s}"))
    } else if let Some(d) = q.shift {
        (model.shift_to_strain(d), d, format!("shift={d}"))
    } else {
        let p = q.power.expect("clap enforces one query");
        let s = model.strain_at_power(p)?;
        (s, model.strain_to_shift(s), format!("power={p}"))
    };
    let mut r = FitReport::new("strain")
        .param("strain", strain, 0.0, "%")
        .param("shift", shift, 0.0, "meV")
        .param("d_coupling", model.d_coupling, 0.0, "meV/%");
    if let Some(p) = q.power {
        r = r.param("power", p, 0.0, "dBm").param("power_mw", units::dbm_to_mw(p), 0.0, "mW");
    }
    if strain < 0.0 {
        r.warnings.push("negative strain amplitude".into());
    }
    r.n_points = 1;
    r.input_digest = digest(input.as_bytes());
    Ok(r)
}
