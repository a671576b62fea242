//! Structured fit reports with a deterministic text form.
//!
//! ```text
//! model: s11
//! converged: true
//! n_points: 4001
//! residual_norm: 1.234567890e-6
//! input_digest: 3f1a...
//! [parameters]
//! mode0.f_n: value=2.984250000e8 stderr=1.200000000e1 unit=Hz
//! [labels]
//! mode0.coupling: undercoupled
//! [warnings]
//! mode 2 is close to critical coupling
//! [config]
//! seed: 1
//! ```
//!
//! Numbers carry nine digits after the point.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub model_name: String,
    pub parameters: Vec<Parameter>,
    /// Non-numeric results such as classifications.
    pub labels: Vec<(String, String)>,
    pub residual_norm: f64,
    pub n_points: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// SHA-256 of the input bytes, lowercase hex.
    pub input_digest: String,
    pub config_snapshot: Vec<(String, String)>,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Scientific notation with nine digits after the point, so a parsed value
/// is within 5e-10 relative of the original.
pub fn format_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.9e}")
    } else {
        x.to_string()
    }
}

impl FitReport {
    pub fn new(model_name: impl Into<String>) -> Self {
        FitReport {
            model_name: model_name.into(),
            converged: true,
            ..FitReport::default()
        }
    }

    pub fn param(mut self, name: impl Into<String>, value: f64, stderr: f64, unit: impl Into<String>) -> Self {
        self.parameters.push(Parameter {
            name: name.into(),
            value,
            stderr,
            unit: unit.into(),
        });
        self
    }

    pub fn label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.push((key.into(), value.into()));
        self
    }

    /// Looks up a parameter value by name.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("model: {}\n", self.model_name));
        s.push_str(&format!("converged: {}\n", self.converged));
        s.push_str(&format!("n_points: {}\n", self.n_points));
        s.push_str(&format!("residual_norm: {}\n", format_number(self.residual_norm)));
        s.push_str(&format!("input_digest: {}\n", self.input_digest));
        s.push_str("[parameters]\n");
        for p in &self.parameters {
            s.push_str(&format!(
                "{}: value={} stderr={} unit={}\n",
                p.name,
                format_number(p.value),
                format_number(p.stderr),
                if p.unit.is_empty() { "1" } else { &p.unit }
            ));
        }
        s.push_str("[labels]\n");
        for (k, v) in &self.labels {
            s.push_str(&format!("{k}: {v}\n"));
        }
        s.push_str("[warnings]\n");
        for w in &self.warnings {
            // one line per warning
            s.push_str(&w.replace('\n', " "));
            s.push('\n');
        }
        s.push_str("[config]\n");
        for (k, v) in &self.config_snapshot {
            s.push_str(&format!("{k}: {v}\n"));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<FitReport> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: None,
            msg,
        };
        let num = |line: usize, s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| err(line, format!("bad number '{s}'")))
        };
        let mut r = FitReport::default();
        let mut section = "";
        let mut seen = [false; 5];
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.starts_with('[') && line.ends_with(']') {
                section = match line {
                    "[parameters]" => "parameters",
                    "[labels]" => "labels",
                    "[warnings]" => "warnings",
                    "[config]" => "config",
                    other => return Err(err(n, format!("unknown section {other}"))),
                };
                continue;
            }
            if section == "warnings" {
                r.warnings.push(line.to_string());
                continue;
            }
            let (k, v) = line
                .split_once(": ")
                .ok_or_else(|| err(n, format!("expected 'key: value', got '{line}'")))?;
            match section {
                "" => {
                    let slot = match k {
                        "model" => {
                            r.model_name = v.to_string();
                            0
                        }
                        "converged" => {
                            r.converged = v.parse().map_err(|_| err(n, format!("bad boolean '{v}'")))?;
                            1
                        }
                        "n_points" => {
                            r.n_points = v.parse().map_err(|_| err(n, format!("bad count '{v}'")))?;
                            2
                        }
                        "residual_norm" => {
                            r.residual_norm = num(n, v)?;
                            3
                        }
                        "input_digest" => {
                            r.input_digest = v.to_string();
                            4
                        }
                        other => return Err(err(n, format!("unknown header field '{other}'"))),
                    };
                    seen[slot] = true;
                }
                "parameters" => {
                    let mut fields = v.splitn(3, ' ');
                    let mut take = |prefix: &str| -> Result<&str> {
                        fields
                            .next()
                            .and_then(|f| f.strip_prefix(prefix))
                            .ok_or_else(|| err(n, format!("missing '{prefix}' in parameter line")))
                    };
                    let value = num(n, take("value=")?)?;
                    let stderr = num(n, take("stderr=")?)?;
                    let unit = take("unit=")?;
                    r.parameters.push(Parameter {
                        name: k.to_string(),
                        value,
                        stderr,
                        unit: if unit == "1" { String::new() } else { unit.to_string() },
                    });
                }
                "labels" => r.labels.push((k.to_string(), v.to_string())),
                _ => r.config_snapshot.push((k.to_string(), v.to_string())),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(err(text.lines().count(), "report header is incomplete".into()));
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<FitReport> {
        FitReport::parse(&std::fs::read_to_string(path)?, path)
    }
}

impl crate::resonator::S11Fit {
    pub fn to_report(&self) -> FitReport {
        let mut r = FitReport::new("s11");
        for (i, m) in self.modes.iter().enumerate() {
            r = r
                .param(format!("mode{i}.f_n"), m.mode.f_n, m.se_f_n, "Hz")
                .param(format!("mode{i}.q_i"), m.mode.q_i, m.se_q_i, "")
                .param(format!("mode{i}.q_e"), m.mode.q_e, m.se_q_e, "")
                .label(format!("mode{i}.coupling"), m.coupling.as_str());
        }
        if let (Some(b), Some(se)) = (self.background, self.background_se) {
            r = r
                .param("background.a_re", b.a.re, se[0], "")
                .param("background.a_im", b.a.im, se[1], "")
                .param("background.b_re", b.b.re, se[2], "")
                .param("background.b_im", b.b.im, se[3], "");
        }
        r.residual_norm = self.residual_norm();
        r.n_points = self.n_points;
        r.warnings = self.warnings.clone();
        r
    }
}

impl crate::emitter::LineshapeFit {
    pub fn to_report(&self) -> FitReport {
        let e = &self.emitter;
        let mut r = FitReport::new("modulated_lineshape")
            .param("omega0", e.omega0, self.se_omega0, "meV")
            .param("gamma", e.gamma, self.se_gamma, "meV")
            .param("delta_e", e.delta_e, self.se_delta_e, "meV")
            .param("amplitude", e.amplitude, self.se_amplitude, "counts")
            .param("background.offset", self.background.0, self.se_background.0, "counts")
            .param("background.slope", self.background.1, self.se_background.1, "counts/meV")
            .label("selected_model", if self.modulated { "modulated" } else { "unmodulated" });
        if let Some(v) = self.ssr_modulated {
            r = r.label("ssr_modulated", format_number(v));
        }
        if let Some(v) = self.ssr_unmodulated {
            r = r.label("ssr_unmodulated", format_number(v));
        }
        r.residual_norm = self.residual_norm();
        r.n_points = self.n_points;
        r.warnings = self.warnings.clone();
        r
    }
}

impl crate::strobe::StrobeFit {
    pub fn to_report(&self) -> FitReport {
        let mut r = FitReport::new("strobe")
            .param("delta_e", self.delta_e, self.se_delta_e, "meV")
            .param("phase0", self.phase0, self.se_phase0, "rad")
            .param("scale", self.scale, self.se_scale, "counts/(meV)")
            .label("reduced_chi2", format_number(self.reduced_chi2));
        r.residual_norm = self.ssr.sqrt();
        r.n_points = self.n_points;
        r
    }
}

impl crate::photonstats::G2Fit {
    pub fn to_report(&self) -> FitReport {
        let mut r = FitReport::new("g2_antibunching")
            .param("g2_0", self.g2_0, self.se_g2_0, "")
            .param("tau0", self.tau0, self.se_tau0, "ps")
            .label("single_emitter", self.single_emitter.to_string());
        r.residual_norm = self.ssr.sqrt();
        r.n_points = self.n_points;
        r.warnings = self.warnings.clone();
        r
    }
}

impl crate::photonstats::PulsedG2 {
    pub fn to_report(&self, n_points: usize) -> FitReport {
        let mut r = FitReport::new("g2_pulsed")
            .param("g2_0", self.g2_0, self.se_g2_0, "")
            .label("single_emitter", (self.g2_0 < 0.5).to_string())
            .label("side_peaks", self.side_peaks.to_string());
        r.n_points = n_points;
        r
    }
}

impl crate::photonstats::LifetimeFit {
    pub fn to_report(&self) -> FitReport {
        let mut r = FitReport::new("lifetime")
            .param("tau", self.tau, self.se_tau, "ps")
            .param("amplitude", self.amplitude, self.se_amplitude, "counts")
            .param("background", self.background, self.se_background, "counts")
            .label("tail_start_bin", self.tail_start.to_string());
        r.residual_norm = self.ssr.sqrt();
        r.n_points = self.n_points;
        r
    }
}

impl crate::sweep::SqrtPFit {
    /// Report of both power laws, with the log-log exponent when available.
    pub fn to_report(&self, loglog: Option<&crate::sweep::LogLogFit>) -> FitReport {
        let mut r = FitReport::new("power_sweep")
            .param("slope", self.slope, self.se_slope, "meV/sqrt(mW)")
            .param("linear_coeff", self.linear_coeff, self.se_linear_coeff, "meV/mW");
        if let Some(l) = loglog {
            r = r.param("loglog_exponent", l.exponent, l.se_exponent, "");
        }
        r = r
            .label("preferred_model", self.preferred.as_str())
            .label("deformation_potential_like", self.deformation_like().to_string())
            .label("ssr_sqrt_p", format_number(self.ssr_sqrt))
            .label("ssr_linear_p", format_number(self.ssr_linear))
            .label(
                "saturation_cut_dbm",
                self.cut_dbm.map_or_else(|| "none".to_string(), format_number),
            );
        r.residual_norm = self.ssr_sqrt.min(self.ssr_linear).sqrt();
        r.n_points = self.n_used;
        r.warnings = self.warnings.clone();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FitReport {
        let mut r = FitReport::new("demo")
            .param("a", 1.0 / 3.0, 0.01, "meV")
            .param("b", -2.5e-12, f64::INFINITY, "");
        r.n_points = 12;
        r.residual_norm = 0.125;
        r.input_digest = digest(b"abc");
        r.warnings.push("first warning: with colon".into());
        r.labels.push(("class".into(), "undercoupled".into()));
        r.config_snapshot.push(("seed".into(), "1".into()));
        r
    }

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            digest(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn text_is_stable_and_parses_back() {
        let r = sample();
        let text = r.to_text();
        assert_eq!(text, sample().to_text());
        assert!(text.contains("a: value=3.333333333e-1 stderr=1.000000000e-2 unit=meV\n"));
        assert!(text.contains("[warnings]\nfirst warning: with colon\n"));
        let back = FitReport::parse(&text, Path::new("r.txt")).unwrap();
        assert_eq!(back.parameters.len(), 2);
        assert!((back.parameters[0].value * 3.0 - 1.0).abs() < 1e-9);
        assert!(back.parameters[1].stderr.is_infinite());
        assert_eq!(back.warnings, r.warnings);
        assert_eq!(back.labels, r.labels);
        assert_eq!(back.config_snapshot, r.config_snapshot);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_reports() {
        assert!(FitReport::parse("model: x\n", Path::new("r")).is_err());
        let bad = sample().to_text().replace("value=3.333333333e-1", "value=abc");
        let err = FitReport::parse(&bad, Path::new("r")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
    }
}
