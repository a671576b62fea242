//! File formats. Values are converted to internal units (Hz, meV, ps, mW)
//! on read and back on write.
//!
//! CSV files carry one header row. Lines starting with `#` are comments;
//! `# key=value` comments carry metadata such as `# unit=nm`. Parse errors
//! report the 1-based line and, where it applies, the 1-based field number
//! as the column.
//!
//! Writers emit the shortest decimal form that reads back to the same
//! `f64`, and replace the destination atomically.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::emitter::{PLMap, PLSpectrum};
use crate::error::{Error, Result};
use crate::photonstats::{CorrelationHistogram, DecayHistogram, PhotonRecord};
use crate::report::format_number;
use crate::resonator::S11Spectrum;
use crate::strobe::StrobeHistogram;
use crate::sweep::PowerSweepPoint;
use crate::units;

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, column: Option<usize>, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        msg: msg.into(),
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// A numeric CSV body.
struct Table {
    header: Vec<String>,
    /// (line number, values)
    rows: Vec<(usize, Vec<f64>)>,
    meta: Vec<(String, String)>,
}

impl Table {
    fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Reads a numeric CSV whose header matches `expected` (an optional trailing
/// set of `optional` columns may follow).
fn parse_table(text: &str, path: &Path, expected: &[&str], optional: &[&str]) -> Result<Table> {
    let meta = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let header_line = text
        .lines()
        .position(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map_or(1, |i| i + 1);
    let full: Vec<&str> = expected.iter().chain(optional).copied().collect();
    let width = header.len();
    if width < expected.len() || width > full.len() || header.iter().zip(&full).any(|(h, e)| h != e) {
        return Err(parse_err(
            path,
            header_line,
            None,
            format!("expected header '{}', found '{}'", expected.join(","), header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, None, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(parse_err(
                path,
                line,
                None,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| !v.is_nan())
                    .ok_or_else(|| parse_err(path, line, Some(i + 1), format!("'{f}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no data rows", path.display())));
    }
    Ok(Table { header, rows, meta })
}

fn csv_text(meta: &[(&str, String)], header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (k, v) in meta {
        writeln!(out, "# {k}={v}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(csv_io)?;
        for r in rows {
            w.write_record(&r).map_err(csv_io)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn row_err(path: &Path, line: usize, e: Error) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => parse_err(path, line, None, other.to_string()),
    }
}

// ---------------------------------------------------------------- S11

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TsFormat {
    Ri,
    Ma,
    Db,
}

/// Parses a one-port Touchstone (v1) body.
///
/// The option line `# <freq unit> S <format> R <ohms>` may list its fields
/// in any order; missing fields default to `GHZ S MA R 50`. Only the first
/// option line counts. `!` starts a comment.
pub fn parse_touchstone(text: &str, path: &Path) -> Result<S11Spectrum> {
    let mut scale = 1e9;
    let mut format = TsFormat::Ma;
    let mut seen_option = false;
    let mut freqs = Vec::new();
    let mut vals = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(opts) = line.strip_prefix('#') {
            if seen_option {
                continue;
            }
            seen_option = true;
            let mut tokens = opts.split_whitespace().map(str::to_ascii_uppercase);
            while let Some(t) = tokens.next() {
                match t.as_str() {
                    "HZ" => scale = 1.0,
                    "KHZ" => scale = 1e3,
                    "MHZ" => scale = 1e6,
                    "GHZ" => scale = 1e9,
                    "S" => {}
                    "Y" | "Z" | "H" | "G" => {
                        return Err(parse_err(path, n, None, format!("{t}-parameters are not supported")))
                    }
                    "RI" => format = TsFormat::Ri,
                    "MA" => format = TsFormat::Ma,
                    "DB" => format = TsFormat::Db,
                    "R" => {
                        let r = tokens.next().and_then(|v| v.parse::<f64>().ok());
                        if !r.is_some_and(|r| r > 0.0) {
                            return Err(parse_err(path, n, None, "R must be followed by a positive resistance"));
                        }
                    }
                    other => return Err(parse_err(path, n, None, format!("unknown option '{other}'"))),
                }
            }
            continue;
        }
        if line.starts_with('[') {
            return Err(parse_err(path, n, Some(1), "Touchstone 2 keywords are not supported"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                n,
                None,
                format!("a one-port row has 3 values, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(path, n, Some(raw.find(f).map_or(1, |p| p + 1)), format!("'{f}' is not a number")))?;
        }
        let z = match format {
            TsFormat::Ri => Complex64::new(v[1], v[2]),
            TsFormat::Ma => Complex64::from_polar(v[1], v[2].to_radians()),
            TsFormat::Db => Complex64::from_polar(10f64.powf(v[1] / 20.0), v[2].to_radians()),
        };
        freqs.push(v[0] * scale);
        vals.push(z);
        if freqs.len() > 1 && freqs[freqs.len() - 1] <= freqs[freqs.len() - 2] {
            return Err(parse_err(path, n, Some(1), "frequencies must increase"));
        }
    }
    if freqs.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no data rows", path.display())));
    }
    S11Spectrum::new(freqs, vals).map_err(|e| row_err(path, 0, e))
}

pub fn touchstone_text(s: &S11Spectrum) -> String {
    let mut out = String::from("! one-port reflection\n# HZ S RI R 50\n");
    for (f, z) in s.frequencies().iter().zip(s.values()) {
        out.push_str(&format!("{} {} {}\n", num(*f), num(z.re), num(z.im)));
    }
    out
}

pub fn read_touchstone(path: &Path) -> Result<S11Spectrum> {
    parse_touchstone(&read_text(path)?, path)
}

pub fn write_touchstone(path: &Path, s: &S11Spectrum) -> Result<()> {
    write_atomic(path, touchstone_text(s).as_bytes())
}

const S11_HEADER: [&str; 3] = ["frequency_hz", "re", "im"];

pub fn parse_s11_csv(text: &str, path: &Path) -> Result<S11Spectrum> {
    let t = parse_table(text, path, &S11_HEADER, &[])?;
    let freqs = t.rows.iter().map(|(_, r)| r[0]).collect();
    let vals = t.rows.iter().map(|(_, r)| Complex64::new(r[1], r[2])).collect();
    S11Spectrum::new(freqs, vals).map_err(|e| row_err(path, 0, e))
}

pub fn s11_csv(s: &S11Spectrum) -> Result<Vec<u8>> {
    let rows = s
        .frequencies()
        .iter()
        .zip(s.values())
        .map(|(f, z)| vec![num(*f), num(z.re), num(z.im)]);
    csv_text(&[], &S11_HEADER, rows)
}

pub fn write_s11_csv(path: &Path, s: &S11Spectrum) -> Result<()> {
    write_atomic(path, &s11_csv(s)?)
}

/// Reads `.s1p` files as Touchstone and anything else as S11 CSV.
pub fn read_s11(path: &Path) -> Result<S11Spectrum> {
    let text = read_text(path)?;
    if has_extension(path, "s1p") {
        parse_touchstone(&text, path)
    } else {
        parse_s11_csv(&text, path)
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

// ---------------------------------------------------------------- PL spectra

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyUnit {
    Mev,
    Nm,
}

impl EnergyUnit {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mev" => Some(EnergyUnit::Mev),
            "nm" => Some(EnergyUnit::Nm),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EnergyUnit::Mev => "mev",
            EnergyUnit::Nm => "nm",
        }
    }

    fn to_mev(self, x: f64) -> f64 {
        match self {
            EnergyUnit::Mev => x,
            EnergyUnit::Nm => units::nm_to_mev(x),
        }
    }

    fn from_mev(self, e: f64) -> f64 {
        match self {
            EnergyUnit::Mev => e,
            EnergyUnit::Nm => units::mev_to_nm(e),
        }
    }

    fn column(self) -> &'static str {
        match self {
            EnergyUnit::Mev => "energy_mev",
            EnergyUnit::Nm => "wavelength_nm",
        }
    }
}

fn unit_of(t: &Table, path: &Path) -> Result<EnergyUnit> {
    let u = t
        .meta("unit")
        .ok_or_else(|| parse_err(path, 1, None, "missing '# unit=nm' or '# unit=mev' line"))?;
    EnergyUnit::parse(u).ok_or_else(|| parse_err(path, 1, None, format!("unknown unit '{u}'")))
}

fn check_energy_column(t: &Table, unit: EnergyUnit, path: &Path) -> Result<()> {
    if t.header[0] != unit.column() && t.header[0] != "x" {
        return Err(parse_err(
            path,
            1,
            Some(1),
            format!("first column '{}' does not match unit {}", t.header[0], unit.as_str()),
        ));
    }
    Ok(())
}

/// Reads a two-column spectrum. Wavelengths are converted to meV and the
/// rows re-sorted by energy.
pub fn parse_spectrum_csv(text: &str, path: &Path) -> Result<PLSpectrum> {
    let t = parse_any_header(text, path, 2)?;
    let unit = unit_of(&t, path)?;
    check_energy_column(&t, unit, path)?;
    let mut pts: Vec<(f64, f64)> = t.rows.iter().map(|(_, r)| (unit.to_mev(r[0]), r[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (e, c) = pts.into_iter().unzip();
    PLSpectrum::new(e, c).map_err(|err| row_err(path, 0, err))
}

/// Like `parse_table` but takes the header names from the file, checking only
/// the last column is `counts` and the width.
fn parse_any_header(text: &str, path: &Path, width: usize) -> Result<Table> {
    let header: Vec<String> = text
        .lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    if header.len() != width || header.last().map(String::as_str) != Some("counts") {
        let line = text
            .lines()
            .position(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .map_or(1, |i| i + 1);
        return Err(parse_err(path, line, None, format!("expected {width} columns ending in 'counts'")));
    }
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    parse_table(text, path, &names, &[])
}

pub fn read_spectrum_csv(path: &Path) -> Result<PLSpectrum> {
    parse_spectrum_csv(&read_text(path)?, path)
}

pub fn spectrum_csv(s: &PLSpectrum, unit: EnergyUnit) -> Result<Vec<u8>> {
    let rows = s
        .energies()
        .iter()
        .zip(s.counts())
        .map(|(e, c)| vec![num(unit.from_mev(*e)), num(*c)]);
    csv_text(&[("unit", unit.as_str().to_string())], &[unit.column(), "counts"], rows)
}

pub fn write_spectrum_csv(path: &Path, s: &PLSpectrum, unit: EnergyUnit) -> Result<()> {
    write_atomic(path, &spectrum_csv(s, unit)?)
}

/// Long-format map: one row per (drive frequency, energy) pair. Every drive
/// frequency must list the same energies in the same order.
pub fn parse_pl_map_csv(text: &str, path: &Path) -> Result<PLMap> {
    let t = parse_any_header(text, path, 3)?;
    if t.header[0] != "drive_hz" {
        return Err(parse_err(path, 1, Some(1), "first column must be drive_hz"));
    }
    let unit = unit_of(&t, path)?;
    let mut map = PLMap {
        drive_frequencies: Vec::new(),
        energies: Vec::new(),
        counts: Vec::new(),
    };
    let mut frame: Vec<(f64, f64)> = Vec::new();
    let mut frames: Vec<(f64, usize, Vec<(f64, f64)>)> = Vec::new();
    let mut current: Option<(f64, usize)> = None;
    for (line, r) in &t.rows {
        if current.is_some_and(|(f, _)| f != r[0]) {
            let (f, l) = current.unwrap();
            frames.push((f, l, std::mem::take(&mut frame)));
        }
        if current.is_none_or(|(f, _)| f != r[0]) {
            current = Some((r[0], *line));
        }
        frame.push((unit.to_mev(r[1]), r[2]));
    }
    if let Some((f, l)) = current {
        frames.push((f, l, frame));
    }
    for (f, line, mut pts) in frames {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (e, c): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if map.drive_frequencies.is_empty() {
            map.energies = e;
        } else if e != map.energies {
            return Err(parse_err(path, line, Some(2), format!("energy grid of {f} Hz differs from the first frame")));
        }
        if map.drive_frequencies.contains(&f) {
            return Err(parse_err(path, line, Some(1), format!("drive frequency {f} Hz appears in two blocks")));
        }
        map.drive_frequencies.push(f);
        map.counts.push(c);
    }
    PLSpectrum::new(map.energies.clone(), map.counts[0].clone()).map_err(|e| row_err(path, 0, e))?;
    Ok(map)
}

pub fn read_pl_map_csv(path: &Path) -> Result<PLMap> {
    parse_pl_map_csv(&read_text(path)?, path)
}

pub fn write_pl_map_csv(path: &Path, map: &PLMap, unit: EnergyUnit) -> Result<()> {
    let rows = map.drive_frequencies.iter().zip(&map.counts).flat_map(|(f, counts)| {
        map.energies
            .iter()
            .zip(counts)
            .map(move |(e, c)| vec![num(*f), num(unit.from_mev(*e)), num(*c)])
    });
    let bytes = csv_text(&[("unit", unit.as_str().to_string())], &["drive_hz", unit.column(), "counts"], rows)?;
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------- time tags

pub const TIMETAG_RECORD_BYTES: usize = 9;

fn to_u64(x: f64, path: &Path, line: usize, col: usize, what: &str) -> Result<u64> {
    if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(parse_err(path, line, Some(col), format!("{what} must be a nonnegative integer, got {x}")))
    }
}

/// CSV time tags `channel,time_ps`. Times are read as exact integers.
pub fn parse_timetags_csv(text: &str, path: &Path) -> Result<Vec<PhotonRecord>> {
    // integer parsing directly, so that times above 2^53 stay exact
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["channel", "time_ps"] {
        return Err(parse_err(path, 1, None, format!("expected header 'channel,time_ps', found '{}'", header.join(","))));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), None, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(parse_err(path, line, None, format!("expected 2 fields, found {}", rec.len())));
        }
        let channel = rec[0]
            .parse::<u8>()
            .map_err(|_| parse_err(path, line, Some(1), format!("'{}' is not a channel number", &rec[0])))?;
        let time_ps = rec[1]
            .parse::<u64>()
            .map_err(|_| parse_err(path, line, Some(2), format!("'{}' is not a time in ps", &rec[1])))?;
        out.push(PhotonRecord { channel, time_ps });
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no data rows", path.display())));
    }
    Ok(out)
}

/// Binary time tags: little-endian records of `u8` channel and `u64` time in ps.
pub fn parse_timetags_bin(bytes: &[u8], path: &Path) -> Result<Vec<PhotonRecord>> {
    if bytes.len() % TIMETAG_RECORD_BYTES != 0 {
        let n = bytes.len() / TIMETAG_RECORD_BYTES + 1;
        return Err(parse_err(path, n, None, format!("record {n} is truncated ({} trailing bytes)", bytes.len() % TIMETAG_RECORD_BYTES)));
    }
    if bytes.is_empty() {
        return Err(Error::InsufficientData(format!("{} holds no records", path.display())));
    }
    Ok(bytes
        .chunks_exact(TIMETAG_RECORD_BYTES)
        .map(|c| PhotonRecord {
            channel: c[0],
            time_ps: u64::from_le_bytes(c[1..].try_into().expect("8 bytes")),
        })
        .collect())
}

pub fn encode_timetags_bin(records: &[PhotonRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * TIMETAG_RECORD_BYTES);
    for r in records {
        out.push(r.channel);
        out.extend_from_slice(&r.time_ps.to_le_bytes());
    }
    out
}

pub fn timetags_csv(records: &[PhotonRecord]) -> Result<Vec<u8>> {
    let rows = records.iter().map(|r| vec![r.channel.to_string(), r.time_ps.to_string()]);
    csv_text(&[], &["channel", "time_ps"], rows)
}

/// Reads `.csv` files as CSV and anything else as binary records.
pub fn read_timetags(path: &Path) -> Result<Vec<PhotonRecord>> {
    if has_extension(path, "csv") {
        parse_timetags_csv(&read_text(path)?, path)
    } else {
        parse_timetags_bin(&std::fs::read(path)?, path)
    }
}

/// Writes `.csv` paths as CSV and anything else as binary records.
pub fn write_timetags(path: &Path, records: &[PhotonRecord]) -> Result<()> {
    if has_extension(path, "csv") {
        write_atomic(path, &timetags_csv(records)?)
    } else {
        write_atomic(path, &encode_timetags_bin(records))
    }
}

// ---------------------------------------------------------------- sweeps, decays, histograms

const SWEEP_HEADER: [&str; 3] = ["p_dbm", "delta_e_mev", "delta_e_err_mev"];

pub fn parse_sweep_csv(text: &str, path: &Path) -> Result<Vec<PowerSweepPoint>> {
    let t = parse_table(text, path, &SWEEP_HEADER, &["f_drive_hz"])?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let mut p = PowerSweepPoint::new(r[0], r[1], r[2]).map_err(|e| row_err(path, *line, e))?;
            p.f_drive = r.get(3).copied();
            Ok(p)
        })
        .collect()
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<PowerSweepPoint>> {
    parse_sweep_csv(&read_text(path)?, path)
}

pub fn write_sweep_csv(path: &Path, points: &[PowerSweepPoint]) -> Result<()> {
    let with_f = points.iter().all(|p| p.f_drive.is_some()) && !points.is_empty();
    let mut header = SWEEP_HEADER.to_vec();
    if with_f {
        header.push("f_drive_hz");
    }
    let rows = points.iter().map(|p| {
        let mut r = vec![num(p.p_dbm), num(p.delta_e), num(p.delta_e_err)];
        if let (true, Some(f)) = (with_f, p.f_drive) {
            r.push(num(f));
        }
        r
    });
    write_atomic(path, &csv_text(&[], &header, rows)?)
}

const DECAY_HEADER: [&str; 2] = ["time_ps", "counts"];

pub fn parse_decay_csv(text: &str, path: &Path) -> Result<DecayHistogram> {
    let t = parse_table(text, path, &DECAY_HEADER, &[])?;
    let (times, counts) = t.rows.iter().map(|(_, r)| (r[0], r[1])).unzip();
    DecayHistogram::new(times, counts).map_err(|e| row_err(path, 0, e))
}

pub fn read_decay_csv(path: &Path) -> Result<DecayHistogram> {
    parse_decay_csv(&read_text(path)?, path)
}

pub fn write_decay_csv(path: &Path, d: &DecayHistogram) -> Result<()> {
    let rows = d.times.iter().zip(&d.counts).map(|(t, c)| vec![num(*t), num(*c)]);
    write_atomic(path, &csv_text(&[], &DECAY_HEADER, rows)?)
}

const STROBE_HEADER: [&str; 3] = ["bin_start_ps", "bin_end_ps", "count"];

/// Phase histogram rows; an optional `# total_emitted=N` line restores the emission count.
pub fn parse_strobe_csv(text: &str, path: &Path) -> Result<StrobeHistogram> {
    let t = parse_table(text, path, &STROBE_HEADER, &[])?;
    let mut edges = vec![units::ps_to_s(t.rows[0].1[0])];
    let mut counts = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        if units::ps_to_s(r[0]) != edges[edges.len() - 1] {
            return Err(parse_err(path, *line, Some(1), "bins must be contiguous"));
        }
        edges.push(units::ps_to_s(r[1]));
        counts.push(to_u64(r[2], path, *line, 3, "count")?);
    }
    let emitted = match t.meta("total_emitted") {
        Some(v) => Some(
            v.parse::<u64>()
                .map_err(|_| parse_err(path, 1, None, format!("bad total_emitted '{v}'")))?,
        ),
        None => None,
    };
    StrobeHistogram::from_parts(edges, counts, emitted).map_err(|e| row_err(path, 0, e))
}

pub fn read_strobe_csv(path: &Path) -> Result<StrobeHistogram> {
    parse_strobe_csv(&read_text(path)?, path)
}

pub fn strobe_csv(h: &StrobeHistogram) -> Result<Vec<u8>> {
    let rows = h
        .bin_edges
        .windows(2)
        .zip(&h.counts)
        .map(|(w, c)| vec![num(units::s_to_ps(w[0])), num(units::s_to_ps(w[1])), c.to_string()]);
    csv_text(&[("total_emitted", h.total_emitted.to_string())], &STROBE_HEADER, rows)
}

pub fn write_strobe_csv(path: &Path, h: &StrobeHistogram) -> Result<()> {
    write_atomic(path, &strobe_csv(h)?)
}

const CORRELATION_HEADER: [&str; 4] = ["tau_start_ps", "tau_end_ps", "count", "g2"];

pub fn parse_correlation_csv(text: &str, path: &Path) -> Result<CorrelationHistogram> {
    let t = parse_table(text, path, &CORRELATION_HEADER, &[])?;
    let normalization = t
        .meta("normalization")
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| *v > 0.0)
        .ok_or_else(|| parse_err(path, 1, None, "missing or invalid '# normalization=' line"))?;
    let mut edges = vec![t.rows[0].1[0]];
    let mut counts = Vec::new();
    for (line, r) in &t.rows {
        if r[0] != edges[edges.len() - 1] || r[1] <= r[0] {
            return Err(parse_err(path, *line, Some(1), "bins must be contiguous and increasing"));
        }
        edges.push(r[1]);
        counts.push(to_u64(r[2], path, *line, 3, "count")?);
    }
    Ok(CorrelationHistogram {
        tau_edges: edges,
        counts,
        normalization,
        warnings: Vec::new(),
    })
}

pub fn read_correlation_csv(path: &Path) -> Result<CorrelationHistogram> {
    parse_correlation_csv(&read_text(path)?, path)
}

pub fn write_correlation_csv(path: &Path, h: &CorrelationHistogram) -> Result<()> {
    let g = h.g2();
    let rows = h
        .tau_edges
        .windows(2)
        .zip(&h.counts)
        .zip(&g)
        .map(|((w, c), g)| vec![num(w[0]), num(w[1]), c.to_string(), num(*g)]);
    let bytes = csv_text(&[("normalization", num(h.normalization))], &CORRELATION_HEADER, rows)?;
    write_atomic(path, &bytes)
}

/// Plot-ready table: one column per series, all of equal length.
pub fn curve_csv(header: &[&str], columns: &[&[f64]]) -> Result<Vec<u8>> {
    if header.len() != columns.len() {
        return Err(Error::domain("one header name per column"));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::domain("curve columns differ in length"));
    }
    csv_text(
        &[],
        header,
        (0..n).map(|i| columns.iter().map(|c| format_number(c[i])).collect()),
    )
}

pub fn write_curve(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    write_atomic(path, &curve_csv(header, columns)?)
}

/// Reads a curve written by `write_curve`.
pub fn read_curve(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let names: Vec<String> = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let t = parse_table(&text, path, &refs, &[])?;
    let cols = (0..names.len()).map(|j| t.rows.iter().map(|(_, r)| r[j]).collect()).collect();
    Ok((t.header, cols))
}
