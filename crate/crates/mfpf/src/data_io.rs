//! `mfpf-data v1` dataset files and CSV export.
//!
//! A dataset file is a `key = value` header followed by one row per
//! scenario after a `data` marker:
//!
//! ```text
//! index attempts valid tau x... y_low... y_high...
//! ```
//!
//! `tau` is written as a 0/1 string. A missing label block is a single `-`.
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces the dataset bit for bit and writing it again reproduces the
//! file byte for byte.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use mfpf_core::scenario::{CaseRef, Dataset, NormStats, Scenario, ScenarioConfig, Split};
use mfpf_core::TopologyVector;
use thiserror::Error;

pub const DATA_HEADER: &str = "mfpf-data v1";
pub const TOOL: &str = concat!("mfpf ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: config: {source}")]
    Json { line: usize, source: serde_json::Error },
}

fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax { line, message: message.into() }
}

pub(crate) fn join(values: impl IntoIterator<Item = impl std::fmt::Display>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), FormatError> {
    let io = |source| FormatError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

pub(crate) fn read_file(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub(crate) fn write_norm(out: &mut String, norm: &NormStats) {
    let _ = writeln!(out, "norm.x_mean = {}", join(&norm.x_mean));
    let _ = writeln!(out, "norm.x_std = {}", join(&norm.x_std));
    let _ = writeln!(out, "norm.y_mean = {}", join(&norm.y_mean));
    let _ = writeln!(out, "norm.y_std = {}", join(&norm.y_std));
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    let x_len = ds.norm.x_mean.len();
    let n_lines = ds.norm.y_mean.len() / 4;
    let _ = writeln!(out, "{DATA_HEADER}");
    let _ = writeln!(out, "tool = {TOOL}");
    let _ = writeln!(out, "case = {}", ds.case_ref.name);
    let _ = writeln!(out, "case_hash = {}", ds.case_ref.line_hash);
    let _ = writeln!(out, "config = {}", serde_json::to_string(&ds.config).expect("config serializes"));
    let _ = writeln!(out, "x_len = {x_len}");
    let _ = writeln!(out, "n_lines = {n_lines}");
    let _ = writeln!(out, "n_scenarios = {}", ds.scenarios.len());
    let _ = writeln!(out, "normalized = {}", ds.normalized);
    let _ = writeln!(out, "split.train = {}", join(&ds.split.train));
    let _ = writeln!(out, "split.val = {}", join(&ds.split.val));
    let _ = writeln!(out, "split.test = {}", join(&ds.split.test));
    let _ = writeln!(out, "high_order = {}", join(&ds.high_order));
    write_norm(&mut out, &ds.norm);
    let _ = writeln!(out, "columns = index attempts valid tau x[{x_len}] y_low[{}] y_high[{}]", 4 * n_lines, 4 * n_lines);
    let _ = writeln!(out, "data");
    for (i, s) in ds.scenarios.iter().enumerate() {
        let tau: String = s.tau.as_slice().iter().map(|&t| if t == 1 { '1' } else { '0' }).collect();
        let _ = write!(out, "{i} {} {} {tau} {}", s.attempts, u8::from(s.valid), join(&s.x));
        for y in [&s.y_low, &s.y_high] {
            match y {
                Some(v) => {
                    let _ = write!(out, " {}", join(v));
                }
                None => out.push_str(" -"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    write_file(path, &dataset_to_string(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    parse_dataset(&read_file(path)?)
}

/// Header `key = value` pairs up to the `stop` marker line, with line
/// numbers. Returns the pairs and the index of the line after the marker.
pub(crate) fn parse_header<'a>(
    lines: &[&'a str],
    magic: &str,
    stop: &str,
) -> Result<(Vec<(usize, &'a str, &'a str)>, usize), FormatError> {
    match lines.first() {
        Some(l) if l.trim() == magic => {}
        Some(l) => return Err(syntax(1, format!("expected `{magic}`, found `{}`", l.trim()))),
        None => return Err(syntax(1, "empty file")),
    }
    let mut pairs = Vec::new();
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let line = raw.trim_end();
        if line == stop || line.starts_with(&format!("{stop} ")) {
            return Ok((pairs, i));
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once(" = ").or_else(|| line.strip_suffix(" =").map(|k| (k, ""))).ok_or_else(|| syntax(i + 1, "expected `key = value`"))?;
        pairs.push((i + 1, k.trim(), v));
    }
    Err(syntax(lines.len(), format!("missing `{stop}` section")))
}

pub(crate) struct Header<'a> {
    pairs: Vec<(usize, &'a str, &'a str)>,
}

impl<'a> Header<'a> {
    pub(crate) fn new(pairs: Vec<(usize, &'a str, &'a str)>) -> Self {
        Header { pairs }
    }

    pub(crate) fn get(&self, key: &str) -> Result<(usize, &'a str), FormatError> {
        self.pairs
            .iter()
            .find(|(_, k, _)| *k == key)
            .map(|(l, _, v)| (*l, *v))
            .ok_or_else(|| syntax(0, format!("missing header key `{key}`")))
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let (line, v) = self.get(key)?;
        v.trim().parse().map_err(|_| syntax(line, format!("{key}: cannot parse `{v}`")))
    }

    pub(crate) fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, FormatError> {
        let (line, v) = self.get(key)?;
        v.split_whitespace()
            .map(|t| t.parse().map_err(|_| syntax(line, format!("{key}: cannot parse `{t}`"))))
            .collect()
    }

    pub(crate) fn json<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, FormatError> {
        let (line, v) = self.get(key)?;
        serde_json::from_str(v).map_err(|source| FormatError::Json { line, source })
    }

    pub(crate) fn norm(&self) -> Result<NormStats, FormatError> {
        Ok(NormStats {
            x_mean: self.list("norm.x_mean")?,
            x_std: self.list("norm.x_std")?,
            y_mean: self.list("norm.y_mean")?,
            y_std: self.list("norm.y_std")?,
        })
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset, FormatError> {
    let lines: Vec<&str> = text.lines().collect();
    let (pairs, data_at) = parse_header(&lines, DATA_HEADER, "data")?;
    let h = Header::new(pairs);
    let config: ScenarioConfig = h.json("config")?;
    let x_len: usize = h.parse("x_len")?;
    let n_lines: usize = h.parse("n_lines")?;
    let n: usize = h.parse("n_scenarios")?;
    let y_len = 4 * n_lines;
    let norm = h.norm()?;
    if norm.x_mean.len() != x_len || norm.y_mean.len() != y_len {
        return Err(syntax(h.get("norm.x_mean")?.0, "normalization widths disagree with x_len/n_lines"));
    }
    let mut scenarios = Vec::with_capacity(n);
    for (k, raw) in lines[data_at + 1..].iter().enumerate() {
        let line_no = data_at + 2 + k;
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| syntax(line_no, format!("`{t}` is not a number")));
        if toks.len() < 4 + x_len {
            return Err(syntax(line_no, "truncated row"));
        }
        let index: usize = toks[0].parse().map_err(|_| syntax(line_no, "bad index"))?;
        if index != scenarios.len() {
            return Err(syntax(line_no, format!("row index {index}, expected {}", scenarios.len())));
        }
        let attempts: u32 = toks[1].parse().map_err(|_| syntax(line_no, "bad attempts"))?;
        let valid = match toks[2] {
            "1" => true,
            "0" => false,
            _ => return Err(syntax(line_no, "valid must be 0 or 1")),
        };
        let tau_bits: Vec<u8> = toks[3]
            .chars()
            .map(|c| match c {
                '1' => Ok(1),
                '0' => Ok(0),
                _ => Err(syntax(line_no, "tau must be a 0/1 string")),
            })
            .collect::<Result<_, _>>()?;
        if tau_bits.len() != n_lines {
            return Err(syntax(line_no, format!("tau has {} entries, expected {n_lines}", tau_bits.len())));
        }
        let x = toks[4..4 + x_len].iter().map(|t| num(t)).collect::<Result<Vec<_>, _>>()?;
        let mut rest = &toks[4 + x_len..];
        let mut labels = [None, None];
        for slot in &mut labels {
            match rest.first() {
                Some(&"-") => rest = &rest[1..],
                Some(_) if rest.len() >= y_len => {
                    *slot = Some(rest[..y_len].iter().map(|t| num(t)).collect::<Result<Vec<_>, _>>()?);
                    rest = &rest[y_len..];
                }
                _ => return Err(syntax(line_no, "truncated label block")),
            }
        }
        if !rest.is_empty() {
            return Err(syntax(line_no, "trailing values"));
        }
        let [y_low, y_high] = labels;
        scenarios.push(Scenario {
            x,
            tau: TopologyVector::new(tau_bits).expect("validated 0/1"),
            y_low,
            y_high,
            valid,
            attempts,
        });
    }
    if scenarios.len() != n {
        return Err(syntax(lines.len(), format!("{} rows, header says {n}", scenarios.len())));
    }
    let split = Split { train: h.list("split.train")?, val: h.list("split.val")?, test: h.list("split.test")? };
    let high_order = h.list("high_order")?;
    for &i in split.train.iter().chain(&split.val).chain(&split.test).chain(&high_order) {
        if i >= n {
            return Err(syntax(h.get("split.train")?.0, format!("index {i} out of range")));
        }
    }
    Ok(Dataset {
        case_ref: CaseRef { name: h.get("case")?.1.trim().to_string(), line_hash: h.get("case_hash")?.1.trim().to_string() },
        config,
        scenarios,
        split,
        high_order,
        norm,
        normalized: h.parse("normalized")?,
    })
}

/// Flat CSV for inspection: one row per scenario with split membership and
/// named columns (`pg0.., vg0.., pl0.., ql0.., tau0.., dc_p0.., nr_p0..`).
pub fn dataset_csv(ds: &Dataset, n_gen: usize, n_load: usize) -> String {
    let n_lines = ds.norm.y_mean.len() / 4;
    let mut split = vec!["-"; ds.scenarios.len()];
    for (name, idx) in [("train", &ds.split.train), ("val", &ds.split.val), ("test", &ds.split.test)] {
        for &i in idx {
            split[i] = name;
        }
    }
    let mut cols = vec!["index".to_string(), "split".into()];
    for (p, n) in [("pg", n_gen), ("vg", n_gen), ("pl", n_load), ("ql", n_load), ("tau", n_lines)] {
        cols.extend((0..n).map(|i| format!("{p}{i}")));
    }
    for fid in ["dc", "nr"] {
        for g in ["p", "i", "v", "theta"] {
            cols.extend((0..n_lines).map(|i| format!("{fid}_{g}{i}")));
        }
    }
    let mut out = cols.join(",");
    out.push('\n');
    for (i, s) in ds.scenarios.iter().enumerate() {
        let mut row = vec![i.to_string(), split[i].to_string()];
        row.extend(s.x.iter().map(|v| v.to_string()));
        row.extend(s.tau.as_slice().iter().map(|v| v.to_string()));
        for y in [&s.y_low, &s.y_high] {
            match y {
                Some(v) => row.extend(v.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 4 * n_lines)),
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::bundled;
    use mfpf_core::scenario::generate_dataset;

    fn small() -> Dataset {
        let case = bundled("ieee14").unwrap();
        let cfg = ScenarioConfig { n_low: 40, omega: 0.3, seed: 5, ..ScenarioConfig::default() };
        generate_dataset(&case, &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = small();
        let text = dataset_to_string(&ds);
        let back = parse_dataset(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(dataset_to_string(&back), text);
        let nd = ds.normalized();
        assert_eq!(parse_dataset(&dataset_to_string(&nd)).unwrap(), nd);
    }

    #[test]
    fn rejects_bad_rows() {
        let text = dataset_to_string(&small());
        let bad = text.replacen("\n0 1 1 ", "\n0 1 2 ", 1);
        assert!(matches!(parse_dataset(&bad), Err(FormatError::Syntax { .. })));
        let truncated: String = text.lines().take(25).collect::<Vec<_>>().join("\n");
        assert!(parse_dataset(&truncated).is_err());
        assert!(parse_dataset("mfpf-data v2\n").is_err());
    }

    #[test]
    fn csv_shape() {
        let ds = small();
        let csv = dataset_csv(&ds, 5, 11);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 41);
        let width = lines[0].split(',').count();
        assert_eq!(width, 2 + 32 + 15 + 120);
        assert!(lines.iter().all(|l| l.split(',').count() == width));
    }
}
