//! Run configuration: a fixed set of documented keys loaded from
//! `key = value` files, environment variables and command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Float,
    Int,
    Bool,
    Choice(&'static [&'static str]),
    /// A float or one of the listed words.
    FloatOr(&'static [&'static str]),
}

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
    kind: Kind,
}

const fn key(name: &'static str, default: &'static str, kind: Kind, doc: &'static str) -> KeySpec {
    KeySpec {
        name,
        default,
        doc,
        kind,
    }
}

/// Every accepted key with its default and meaning.
pub const KEYS: &[KeySpec] = &[
    key("seed", "1", Kind::Int, "random seed for simulations"),
    key("threads", "0", Kind::Int, "worker threads, 0 for all cores"),
    key("lm.max_iter", "200", Kind::Int, "Levenberg-Marquardt iteration cap"),
    key("lm.xtol", "1e-8", Kind::Float, "relative step tolerance"),
    key("lm.ftol", "1e-15", Kind::Float, "relative cost-reduction tolerance"),
    key("s11.window_linewidths", "5", Kind::Float, "half-width of each mode's fit window in loaded linewidths"),
    key("s11.background", "false", Kind::Bool, "fit a complex affine background"),
    key("s11.min_improvement", "0.5", Kind::Float, "fractional SSR reduction a mode must achieve in its window"),
    key("s11.coupling_tol", "1e-3", Kind::Float, "relative |Qi - Qe| below which a mode is critically coupled"),
    key("s11.noise_sigma", "0", Kind::Float, "complex noise standard deviation for sim-s11"),
    key("s11.dip_prominence", "0.05", Kind::Float, "minimum |S11| prominence for automatic seeds"),
    key("s11.points", "4001", Kind::Int, "grid points for sim-s11"),
    key("spectrum.phase_samples", "512", Kind::Int, "drive-phase samples in the time average"),
    key("spectrum.background", "constant", Kind::Choice(&["constant", "linear"]), "lineshape fit background"),
    key("spectrum.unit", "mev", Kind::Choice(&["mev", "nm"]), "energy axis unit for written spectra"),
    key("spectrum.points", "1001", Kind::Int, "grid points for sim-spectrum"),
    key("spectrum.noise", "none", Kind::Choice(&["none", "poisson"]), "noise added by sim-spectrum"),
    key("strobe.bins", "128", Kind::Int, "phase bins per drive period"),
    key("strobe.n_pulses", "1000000", Kind::Int, "excitation slots simulated"),
    key("strobe.pulse_period_s", "12.5e-9", Kind::Float, "excitation slot length (s)"),
    key("strobe.lifetime_s", "2e-9", Kind::Float, "radiative lifetime (s)"),
    key("strobe.excitation", "cw", Kind::Choice(&["cw", "pulsed"]), "emission timing within each slot"),
    key("strobe.jitter_s", "0", Kind::Float, "Gaussian detector jitter (s), 0 disables"),
    key("strobe.block_size", "8192", Kind::Int, "slots per random-number block"),
    key("strobe.edge_width_mev", "0", Kind::Float, "raised-cosine filter edge width (meV), 0 for ideal edges"),
    key("g2.channel_a", "0", Kind::Int, "start channel"),
    key("g2.channel_b", "1", Kind::Int, "stop channel"),
    key("g2.window_ps", "100000", Kind::Float, "half-width of the delay window (ps)"),
    key("g2.bin_ps", "1000", Kind::Float, "delay bin width (ps)"),
    key("g2.mode", "cw", Kind::Choice(&["cw", "pulsed"]), "antibunching fit or pulsed peak-area ratio"),
    key("g2.rep_period_ps", "12500", Kind::Float, "pulse repetition period for pulsed mode (ps)"),
    key("lifetime.tail_offset", "2", Kind::Int, "bins after the peak before the tail fit starts"),
    key("sweep.cut", "auto", Kind::FloatOr(&["auto", "none"]), "saturation cut in dBm, auto or none"),
    key("sweep.saturation_margin", "0.2", Kind::Float, "fractional RSS reduction required of the plateau model"),
    key("sweep.min_plateau", "2", Kind::Int, "minimum points on the saturation plateau"),
    key("strain.d_coupling", "30", Kind::Float, "deformation potential coupling (meV per % strain)"),
    key("strain.ref_pct", "0.0119", Kind::Float, "reference strain amplitude (%)"),
    key("strain.ref_dbm", "0", Kind::Float, "power at the reference strain (dBm)"),
];

/// Environment variables honoured, with the key each one sets.
pub const ENV_OVERRIDES: &[(&str, &str)] = &[("SAWCAV_SEED", "seed"), ("SAWCAV_THREADS", "threads")];

fn spec(name: &str) -> Result<&'static KeySpec> {
    KEYS.iter()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::Config(format!("unknown key '{name}'")))
}

fn check(spec: &KeySpec, value: &str) -> std::result::Result<(), String> {
    let ok = match spec.kind {
        Kind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Choice(c) => c.contains(&value),
        Kind::FloatOr(c) => c.contains(&value) || value.parse::<f64>().is_ok_and(f64::is_finite),
    };
    if ok {
        return Ok(());
    }
    let expected = match spec.kind {
        Kind::Float => "a finite number".to_string(),
        Kind::Int => "a nonnegative integer".to_string(),
        Kind::Bool => "true or false".to_string(),
        Kind::Choice(c) => c.join(" | "),
        Kind::FloatOr(c) => format!("a number or {}", c.join(" | ")),
    };
    Err(format!("invalid value '{value}' for {}: expected {expected}", spec.name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let spec = spec(name)?;
        let value = value.trim();
        check(spec, value).map_err(Error::Config)?;
        self.values.insert(spec.name, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{pair}'")))?;
        self.set(k.trim(), v)
    }

    /// Applies a configuration file body. `path` is used in error messages only.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |column: usize, msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: Some(column),
                msg,
            };
            let Some((k, v)) = line.split_once('=') else {
                return Err(parse_err(1, format!("expected 'key = value', got '{line}'")));
            };
            let value_col = raw.find('=').map_or(1, |p| p + 2);
            let spec = spec(k.trim()).map_err(|e| parse_err(raw.find(k.trim()).map_or(1, |p| p + 1), e.to_string()))?;
            check(spec, v.trim()).map_err(|m| parse_err(value_col, m))?;
            self.values.insert(spec.name, v.trim().to_string());
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text, path)
    }

    /// Applies the seed and thread-count variables from `lookup`.
    pub fn apply_env_with<F: Fn(&str) -> Option<String>>(&mut self, lookup: F) -> Result<()> {
        for (var, name) in ENV_OVERRIDES {
            if let Some(v) = lookup(var) {
                self.set(name, &v).map_err(|e| Error::Config(format!("{var}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_with(|v| std::env::var(v).ok())
    }

    pub fn get_str(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unregistered config key '{name}'"))
    }

    pub fn get_f64(&self, name: &str) -> f64 {
        self.get_str(name).parse().expect("validated on set")
    }

    pub fn get_u64(&self, name: &str) -> u64 {
        self.get_str(name).parse().expect("validated on set")
    }

    pub fn get_usize(&self, name: &str) -> usize {
        self.get_u64(name) as usize
    }

    pub fn get_bool(&self, name: &str) -> bool {
        self.get_str(name) == "true"
    }

    /// All keys and effective values, sorted by key.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    /// A commented configuration file listing every key at its default.
    pub fn documented_defaults() -> String {
        let mut out = String::new();
        for k in KEYS {
            out.push_str(&format!("# {}\n{} = {}\n", k.doc, k.name, k.default));
        }
        out
    }
}
