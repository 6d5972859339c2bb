//! Extended-XYZ style text files for datasets and trajectories.
//!
//! ```text
//! # stable-xyz version=1 kind=dataset source=double_well seed=0 temperature=5.0000000000000000e2
//! 2
//! time=0.0000000000000000e0 energy=1.2e-1 box=10,10,10
//! C x y z fx fy fz px py pz
//! ```
//!
//! Trajectory frames omit energy and forces. Every number is written with
//! 17 significant digits so reading a file back reproduces it exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use stable_core::trainer::{Dataset, Frame};
use stable_core::{SimState, SystemSpec, Vec3};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# stable-xyz";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Dataset,
    Trajectory,
}

impl FileKind {
    fn as_str(&self) -> &'static str {
        match self {
            FileKind::Dataset => "dataset",
            FileKind::Trajectory => "trajectory",
        }
    }
}

/// Header key/value pairs of a file, in sorted order.
pub type Header = BTreeMap<String, String>;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn header_line(kind: FileKind, extra: &Header) -> String {
    let mut line = format!("{MAGIC} version={FORMAT_VERSION} kind={}", kind.as_str());
    for (k, v) in extra {
        let _ = write!(line, " {k}={v}");
    }
    line.push('\n');
    line
}

fn frame_comment(spec: &SystemSpec, time: f64, energy: Option<f64>) -> String {
    let mut c = format!("time={}", num(time));
    if let Some(e) = energy {
        let _ = write!(c, " energy={}", num(e));
    }
    if let Some(cell) = spec.cell() {
        let l = cell.lengths;
        let _ = write!(c, " box={},{},{}", num(l[0]), num(l[1]), num(l[2]));
    }
    c
}

fn push_vec(line: &mut String, v: &Vec3) {
    for x in v {
        line.push(' ');
        line.push_str(&num(*x));
    }
}

pub fn format_dataset(data: &Dataset, extra: &Header) -> String {
    let mut h = extra.clone();
    h.insert("source".into(), data.source.clone());
    h.insert("temperature".into(), num(data.temperature));
    let mut out = header_line(FileKind::Dataset, &h);
    for f in &data.frames {
        let _ = writeln!(out, "{}", data.spec.n_atoms());
        let _ = writeln!(out, "{}", frame_comment(&data.spec, f.state.time, Some(f.energy)));
        for i in 0..data.spec.n_atoms() {
            let mut line = data.spec.symbol_of(i).to_string();
            push_vec(&mut line, &f.state.positions[i]);
            push_vec(&mut line, &f.forces[i]);
            push_vec(&mut line, &f.state.momenta[i]);
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

pub fn format_trajectory(frames: &[SimState], spec: &SystemSpec, extra: &Header) -> String {
    let mut out = header_line(FileKind::Trajectory, extra);
    for s in frames {
        let _ = writeln!(out, "{}", spec.n_atoms());
        let _ = writeln!(out, "{}", frame_comment(spec, s.time, None));
        for i in 0..spec.n_atoms() {
            let mut line = spec.symbol_of(i).to_string();
            push_vec(&mut line, &s.positions[i]);
            push_vec(&mut line, &s.momenta[i]);
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(path: &Path, data: &Dataset, extra: &Header) -> CliResult<()> {
    std::fs::write(path, format_dataset(data, extra)).map_err(|e| CliError::io(path, e))
}

pub fn write_trajectory(path: &Path, frames: &[SimState], spec: &SystemSpec, extra: &Header) -> CliResult<()> {
    std::fs::write(path, format_trajectory(frames, spec, extra)).map_err(|e| CliError::io(path, e))
}

struct ParsedFrame {
    time: f64,
    energy: Option<f64>,
    positions: Vec<Vec3>,
    forces: Vec<Vec3>,
    momenta: Vec<Vec3>,
}

struct Parser<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl Parser<'_> {
    fn err(&self, line: usize, msg: impl std::fmt::Display) -> CliError {
        CliError::format(self.path, format!("line {}: {msg}", line + 1))
    }

    fn parse_f64(&self, line: usize, s: &str) -> CliResult<f64> {
        s.parse::<f64>()
            .map_err(|_| self.err(line, format!("bad number {s:?}")))
    }

    fn key_values(line: &str) -> Header {
        line.split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn header(&mut self, expected: FileKind) -> CliResult<Header> {
        let Some((n, line)) = self.lines.next() else {
            return Err(CliError::format(self.path, "empty file"));
        };
        let rest = line
            .strip_prefix(MAGIC)
            .ok_or_else(|| self.err(n, "missing stable-xyz header"))?;
        let h = Self::key_values(rest);
        match h.get("version").map(|v| v.parse::<u32>()) {
            Some(Ok(FORMAT_VERSION)) => {}
            Some(Ok(v)) => return Err(self.err(n, format!("unsupported format version {v}"))),
            _ => return Err(self.err(n, "missing format version")),
        }
        if h.get("kind").map(String::as_str) != Some(expected.as_str()) {
            return Err(self.err(n, format!("expected a {} file", expected.as_str())));
        }
        Ok(h)
    }

    fn frame(&mut self, spec: &SystemSpec, kind: FileKind) -> CliResult<Option<ParsedFrame>> {
        let (n, count) = loop {
            match self.lines.next() {
                None => return Ok(None),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(x) => break x,
            }
        };
        let count: usize = count.trim().parse().map_err(|_| self.err(n, "bad atom count"))?;
        if count != spec.n_atoms() {
            return Err(self.err(n, format!("frame has {count} atoms, the system has {}", spec.n_atoms())));
        }
        let (cn, comment) = self.lines.next().ok_or_else(|| self.err(n, "truncated frame"))?;
        let kv = Self::key_values(comment);
        let time = self.parse_f64(cn, kv.get("time").ok_or_else(|| self.err(cn, "missing time"))?)?;
        let energy = match kind {
            FileKind::Dataset => {
                Some(self.parse_f64(cn, kv.get("energy").ok_or_else(|| self.err(cn, "missing energy"))?)?)
            }
            FileKind::Trajectory => None,
        };
        let file_box = match kv.get("box") {
            Some(b) => {
                let v = b
                    .split(',')
                    .map(|x| self.parse_f64(cn, x))
                    .collect::<CliResult<Vec<_>>>()?;
                if v.len() != 3 {
                    return Err(self.err(cn, "box needs three lengths"));
                }
                Some([v[0], v[1], v[2]])
            }
            None => None,
        };
        if file_box != spec.cell().map(|c| c.lengths) {
            return Err(self.err(cn, "periodic box does not match the configured system"));
        }

        let cols = if kind == FileKind::Dataset { 10 } else { 7 };
        let mut f = ParsedFrame {
            time,
            energy,
            positions: Vec::with_capacity(count),
            forces: Vec::new(),
            momenta: Vec::with_capacity(count),
        };
        for i in 0..count {
            let (an, line) = self.lines.next().ok_or_else(|| self.err(n, "truncated frame"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != cols {
                return Err(self.err(an, format!("expected {cols} columns, found {}", fields.len())));
            }
            if fields[0] != spec.symbol_of(i) {
                return Err(self.err(
                    an,
                    format!("atom {i} is {} but the system has {}", fields[0], spec.symbol_of(i)),
                ));
            }
            let v = fields[1..]
                .iter()
                .map(|x| self.parse_f64(an, x))
                .collect::<CliResult<Vec<_>>>()?;
            f.positions.push([v[0], v[1], v[2]]);
            if kind == FileKind::Dataset {
                f.forces.push([v[3], v[4], v[5]]);
                f.momenta.push([v[6], v[7], v[8]]);
            } else {
                f.momenta.push([v[3], v[4], v[5]]);
            }
        }
        Ok(Some(f))
    }
}

fn parse_all(path: &Path, text: &str, spec: &SystemSpec, kind: FileKind) -> CliResult<(Header, Vec<ParsedFrame>)> {
    let mut p = Parser {
        path,
        lines: text.lines().enumerate(),
    };
    let header = p.header(kind)?;
    let mut frames = Vec::new();
    while let Some(f) = p.frame(spec, kind)? {
        frames.push(f);
    }
    Ok((header, frames))
}

fn state(path: &Path, f: ParsedFrame) -> CliResult<(SimState, Option<f64>, Vec<Vec3>)> {
    let s = SimState::new(f.positions, f.momenta, f.time).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((s, f.energy, f.forces))
}

pub fn parse_dataset(path: &Path, text: &str, spec: &SystemSpec) -> CliResult<(Dataset, Header)> {
    let (header, parsed) = parse_all(path, text, spec, FileKind::Dataset)?;
    let temperature: f64 = header
        .get("temperature")
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CliError::format(path, "header lacks a temperature"))?;
    let source = header.get("source").cloned().unwrap_or_default();
    let frames = parsed
        .into_iter()
        .map(|f| {
            let (state, energy, forces) = state(path, f)?;
            Ok(Frame {
                state,
                energy: energy.expect("datasets carry energies"),
                forces,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let data = Dataset {
        spec: spec.clone(),
        frames,
        temperature,
        source,
    };
    data.validate()?;
    Ok((data, header))
}

pub fn read_dataset(path: &Path, spec: &SystemSpec) -> CliResult<(Dataset, Header)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(path, &text, spec)
}

pub fn read_trajectory(path: &Path, spec: &SystemSpec) -> CliResult<Vec<SimState>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (_, parsed) = parse_all(path, &text, spec, FileKind::Trajectory)?;
    parsed.into_iter().map(|f| Ok(state(path, f)?.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use stable_core::systems::{water_box, WaterParams};

    fn sample() -> Dataset {
        let sys = water_box(&WaterParams {
            n_molecules: 2,
            ..Default::default()
        })
        .unwrap();
        let n = sys.spec.n_atoms();
        let frames = (0..3)
            .map(|k| {
                let mut pos = sys.initial_positions.clone();
                pos[0][0] += 0.1 * k as f64 + 1.0 / 3.0;
                Frame {
                    state: SimState::new(pos, vec![[0.1, -0.2, 1e-17]; n], 0.5 * k as f64).unwrap(),
                    energy: -1.0 / 7.0,
                    forces: vec![[std::f64::consts::PI, 0.0, -2.5e-300]; n],
                }
            })
            .collect();
        Dataset {
            spec: sys.spec,
            frames,
            temperature: 500.0,
            source: "toy_water".into(),
        }
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let d = sample();
        let mut h = Header::new();
        h.insert("seed".into(), "3".into());
        let text = format_dataset(&d, &h);
        let (back, header) = parse_dataset(Path::new("x"), &text, &d.spec).unwrap();
        assert_eq!(back, d);
        assert_eq!(header["seed"], "3");
    }

    #[test]
    fn trajectory_round_trips_exactly() {
        let d = sample();
        let states = d.states();
        let text = format_trajectory(&states, &d.spec, &Header::new());
        let (_, parsed) = parse_all(Path::new("x"), &text, &d.spec, FileKind::Trajectory).unwrap();
        let back: Vec<SimState> = parsed
            .into_iter()
            .map(|f| state(Path::new("x"), f).unwrap().0)
            .collect();
        assert_eq!(back, states);
    }

    #[test]
    fn rejects_unknown_versions_and_species() {
        let d = sample();
        let text = format_dataset(&d, &Header::new());
        let bumped = text.replacen("version=1", "version=2", 1);
        assert!(parse_dataset(Path::new("x"), &bumped, &d.spec).is_err());
        let renamed = text.replacen("\nO ", "\nN ", 1);
        assert!(parse_dataset(Path::new("x"), &renamed, &d.spec).is_err());
        let traj = format_trajectory(&d.states(), &d.spec, &Header::new());
        assert!(parse_dataset(Path::new("x"), &traj, &d.spec).is_err());
    }
}
