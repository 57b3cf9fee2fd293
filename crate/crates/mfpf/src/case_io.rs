//! Case files: the native `mfpf-case v1` text format (read and write), a
//! reader for the `bus`/`gen`/`branch` subset of MATPOWER case files, and
//! the bundled IEEE 14- and 118-bus cases.
//!
//! Native files are per-unit on `base_mva` with angles in radians:
//!
//! ```text
//! mfpf-case v1
//! name = ieee14
//! base_mva = 100
//! bus id=0 kind=slack base_kv=135 vm=1 va=0 gs=0 bs=0
//! line id=0 from=0 to=1 r=0.01938 x=0.05917 b=0.0528 i_max=99
//! transformer id=0 from=3 to=6 r=0 x=0.20912 g=0 b=0 tap=0.978
//! gen bus=0 p=2.32 v=1.06
//! load bus=1 p=0.217 q=0.127
//! ```
//!
//! Line records are kept in file order; that order indexes the topology
//! vector.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use mfpf_core::grid::{Bus, BusKind, CaseError, Generator, Line, Load, NetworkCase, Transformer};
use thiserror::Error;

pub const NATIVE_HEADER: &str = "mfpf-case v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Native,
    MatpowerSubset,
}

#[derive(Debug, Error)]
pub enum CaseIoError {
    #[error("line {line}: {field}: {message}")]
    Parse { line: usize, field: String, message: String },
    #[error("invalid case: {0}")]
    Validation(#[from] CaseError),
    #[error("unknown bundled case `{0}` (available: ieee14, ieee118)")]
    UnknownBundled(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> CaseIoError {
    CaseIoError::Parse { line, field: field.into(), message: message.into() }
}

const IEEE14: &str = include_str!("../cases/ieee14.case");
const IEEE118: &str = include_str!("../cases/ieee118.case");
const CASE14_M: &str = include_str!("../cases/case14.m");

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 3] = ["ieee14", "ieee118", "case14"];

/// A bundled case by name. `case14` is the MATPOWER-format copy of `ieee14`.
pub fn bundled(name: &str) -> Result<NetworkCase, CaseIoError> {
    match name {
        "ieee14" => load_case(IEEE14, CaseFormat::Native),
        "ieee118" => load_case(IEEE118, CaseFormat::Native),
        "case14" => load_case(CASE14_M, CaseFormat::MatpowerSubset),
        other => Err(CaseIoError::UnknownBundled(other.to_string())),
    }
}

/// Resolves a bundled name or reads a file; `.m` files are read as MATPOWER.
pub fn resolve_case(spec: &str) -> Result<NetworkCase, CaseIoError> {
    if BUNDLED.contains(&spec) {
        return bundled(spec);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|source| CaseIoError::Io { path: spec.to_string(), source })?;
    let format = if path.extension().is_some_and(|e| e == "m") {
        CaseFormat::MatpowerSubset
    } else {
        CaseFormat::Native
    };
    load_case(&text, format)
}

pub fn load_case(source: &str, format: CaseFormat) -> Result<NetworkCase, CaseIoError> {
    match format {
        CaseFormat::Native => parse_native(source),
        CaseFormat::MatpowerSubset => parse_matpower(source),
    }
}

struct Record<'a> {
    line: usize,
    fields: HashMap<&'a str, &'a str>,
}

impl<'a> Record<'a> {
    fn parse(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self, CaseIoError> {
        let mut fields = HashMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| parse_err(line, *tok, "expected key=value"))?;
            if !allowed.contains(&k) {
                return Err(parse_err(line, k, "unknown field"));
            }
            if fields.insert(k, v).is_some() {
                return Err(parse_err(line, k, "duplicate field"));
            }
        }
        Ok(Record { line, fields })
    }

    fn f64(&self, key: &str) -> Result<f64, CaseIoError> {
        let raw = self.fields.get(key).ok_or_else(|| parse_err(self.line, key, "missing field"))?;
        raw.parse::<f64>()
            .map_err(|_| parse_err(self.line, key, format!("`{raw}` is not a number")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CaseIoError> {
        if self.fields.contains_key(key) {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    fn usize(&self, key: &str) -> Result<usize, CaseIoError> {
        let raw = self.fields.get(key).ok_or_else(|| parse_err(self.line, key, "missing field"))?;
        raw.parse::<usize>()
            .map_err(|_| parse_err(self.line, key, format!("`{raw}` is not an index")))
    }
}

fn parse_native(source: &str) -> Result<NetworkCase, CaseIoError> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, header)) if header == NATIVE_HEADER => {}
        Some((n, other)) => {
            return Err(parse_err(n, "header", format!("expected `{NATIVE_HEADER}`, found `{other}`")))
        }
        None => return Err(parse_err(1, "header", "empty file")),
    }
    let mut name = None;
    let mut base_mva = None;
    let (mut buses, mut branches, mut transformers, mut gens, mut loads) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (n, text) in lines {
        if let Some((key, value)) = text.split_once(" = ") {
            match key.trim() {
                "name" => name = Some(value.trim().to_string()),
                "base_mva" => {
                    base_mva = Some(value.trim().parse::<f64>().map_err(|_| {
                        parse_err(n, "base_mva", format!("`{}` is not a number", value.trim()))
                    })?)
                }
                other => return Err(parse_err(n, other, "unknown header key")),
            }
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let (kind, rest) = tokens.split_first().expect("non-empty line");
        match *kind {
            "bus" => {
                let r = Record::parse(n, rest, &["id", "kind", "base_kv", "vm", "va", "gs", "bs"])?;
                let kind = match r.fields.get("kind").copied() {
                    Some("slack") => BusKind::Slack,
                    Some("pv") => BusKind::Pv,
                    Some("pq") => BusKind::Pq,
                    Some(other) => {
                        return Err(parse_err(n, "kind", format!("unknown bus kind `{other}`")))
                    }
                    None => return Err(parse_err(n, "kind", "missing field")),
                };
                buses.push(Bus {
                    id: r.usize("id")?,
                    kind,
                    base_kv: r.f64("base_kv")?,
                    vm_init: r.f64_or("vm", 1.0)?,
                    va_init: r.f64_or("va", 0.0)?,
                    gs: r.f64_or("gs", 0.0)?,
                    bs: r.f64_or("bs", 0.0)?,
                });
            }
            "line" => {
                let r = Record::parse(n, rest, &["id", "from", "to", "r", "x", "b", "i_max"])?;
                branches.push(Line {
                    id: r.usize("id")?,
                    from_bus: r.usize("from")?,
                    to_bus: r.usize("to")?,
                    r: r.f64("r")?,
                    x: r.f64("x")?,
                    b: r.f64_or("b", 0.0)?,
                    i_max: r.f64("i_max")?,
                });
            }
            "transformer" => {
                let r = Record::parse(n, rest, &["id", "from", "to", "r", "x", "g", "b", "tap"])?;
                transformers.push(Transformer {
                    id: r.usize("id")?,
                    from_bus: r.usize("from")?,
                    to_bus: r.usize("to")?,
                    r: r.f64("r")?,
                    x: r.f64("x")?,
                    g: r.f64_or("g", 0.0)?,
                    b: r.f64_or("b", 0.0)?,
                    tap: r.f64_or("tap", 1.0)?,
                });
            }
            "gen" => {
                let r = Record::parse(n, rest, &["bus", "p", "v"])?;
                gens.push(Generator { bus: r.usize("bus")?, p_set: r.f64("p")?, v_set: r.f64("v")? });
            }
            "load" => {
                let r = Record::parse(n, rest, &["bus", "p", "q"])?;
                loads.push(Load { bus: r.usize("bus")?, p_set: r.f64("p")?, q_set: r.f64_or("q", 0.0)? });
            }
            other => return Err(parse_err(n, other, "unknown record type")),
        }
    }
    let name = name.ok_or_else(|| parse_err(0, "name", "missing header key"))?;
    let base_mva = base_mva.ok_or_else(|| parse_err(0, "base_mva", "missing header key"))?;
    Ok(NetworkCase::new(name, base_mva, buses, branches, transformers, gens, loads)?)
}

/// Serializes to the native format. Floats use the shortest representation
/// that parses back to the same value, so reading the output reproduces the
/// case exactly.
pub fn write_native(case: &NetworkCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{NATIVE_HEADER}");
    let _ = writeln!(out, "name = {}", case.name());
    let _ = writeln!(out, "base_mva = {}", case.base_mva());
    for b in case.buses() {
        let kind = match b.kind {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        };
        let _ = writeln!(
            out,
            "bus id={} kind={kind} base_kv={} vm={} va={} gs={} bs={}",
            b.id, b.base_kv, b.vm_init, b.va_init, b.gs, b.bs
        );
    }
    for l in case.lines() {
        let _ = writeln!(
            out,
            "line id={} from={} to={} r={} x={} b={} i_max={}",
            l.id, l.from_bus, l.to_bus, l.r, l.x, l.b, l.i_max
        );
    }
    for t in case.transformers() {
        let _ = writeln!(
            out,
            "transformer id={} from={} to={} r={} x={} g={} b={} tap={}",
            t.id, t.from_bus, t.to_bus, t.r, t.x, t.g, t.b, t.tap
        );
    }
    for g in case.generators() {
        let _ = writeln!(out, "gen bus={} p={} v={}", g.bus, g.p_set, g.v_set);
    }
    for l in case.loads() {
        let _ = writeln!(out, "load bus={} p={} q={}", l.bus, l.p_set, l.q_set);
    }
    out
}

/// Numeric rows of `mpc.<name> = [ ... ];`, with the source line of each row.
fn matpower_matrix(source: &str, name: &str) -> Result<Option<Vec<(usize, Vec<f64>)>>, CaseIoError> {
    let opener = format!("mpc.{name}");
    let mut rows = Vec::new();
    let mut inside = false;
    let mut found = false;
    for (i, raw) in source.lines().enumerate() {
        let n = i + 1;
        let text = raw.split('%').next().unwrap_or("").trim();
        let mut body = text;
        if !inside {
            let Some(rest) = text.strip_prefix(&opener) else { continue };
            let rest = rest.trim_start();
            let Some(rest) = rest.strip_prefix('=') else { continue };
            let Some(rest) = rest.trim_start().strip_prefix('[') else {
                return Err(parse_err(n, name, "expected `[` after `=`"));
            };
            inside = true;
            found = true;
            body = rest;
        }
        let (content, closed) = match body.find(']') {
            Some(pos) => (&body[..pos], true),
            None => (body, false),
        };
        for chunk in content.split(';') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let vals = chunk
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(n, name, format!("`{t}` is not a number"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((n, vals));
        }
        if closed {
            return Ok(Some(rows));
        }
    }
    if found {
        Err(parse_err(source.lines().count(), name, "unterminated matrix"))
    } else {
        Ok(None)
    }
}

fn parse_matpower(source: &str) -> Result<NetworkCase, CaseIoError> {
    let mut base_mva = None;
    let mut name = String::from("matpower");
    for (i, raw) in source.lines().enumerate() {
        let text = raw.split('%').next().unwrap_or("").trim();
        if let Some(rest) = text.strip_prefix("function") {
            if let Some((_, fname)) = rest.split_once('=') {
                name = fname.trim().trim_end_matches(';').to_string();
            }
        }
        if let Some(rest) = text.strip_prefix("mpc.baseMVA") {
            let value = rest.trim_start().trim_start_matches('=').trim().trim_end_matches(';').trim();
            base_mva = Some(
                value
                    .parse::<f64>()
                    .map_err(|_| parse_err(i + 1, "baseMVA", format!("`{value}` is not a number")))?,
            );
        }
    }
    let base = base_mva.ok_or_else(|| parse_err(0, "baseMVA", "missing"))?;
    let need = |name: &str| -> Result<Vec<(usize, Vec<f64>)>, CaseIoError> {
        matpower_matrix(source, name)?.ok_or_else(|| parse_err(0, name, "missing matrix"))
    };
    let bus_rows = need("bus")?;
    let gen_rows = need("gen")?;
    let branch_rows = need("branch")?;

    let mut index = HashMap::new();
    let mut buses = Vec::new();
    let mut loads = Vec::new();
    for (pos, (n, row)) in bus_rows.iter().enumerate() {
        if row.len() < 10 {
            return Err(parse_err(*n, "bus", format!("expected at least 10 columns, found {}", row.len())));
        }
        let number = row[0] as i64;
        if index.insert(number, pos).is_some() {
            return Err(parse_err(*n, "bus_i", format!("duplicate bus number {number}")));
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => return Err(parse_err(*n, "type", format!("unsupported bus type {other}"))),
        };
        buses.push(Bus {
            id: pos,
            kind,
            base_kv: row[9],
            vm_init: row[7],
            va_init: row[8].to_radians(),
            gs: row[4] / base,
            bs: row[5] / base,
        });
        if row[2] != 0.0 || row[3] != 0.0 {
            loads.push(Load { bus: pos, p_set: row[2] / base, q_set: row[3] / base });
        }
    }
    let lookup = |n: usize, field: &str, v: f64| -> Result<usize, CaseIoError> {
        index
            .get(&(v as i64))
            .copied()
            .ok_or_else(|| CaseIoError::Validation(CaseError::DanglingBus {
                element: if field == "gen" { "generator" } else { "branch" },
                index: n,
                bus: v as usize,
            }))
    };
    let mut gens = Vec::new();
    for (n, row) in &gen_rows {
        if row.len() < 8 {
            return Err(parse_err(*n, "gen", format!("expected at least 8 columns, found {}", row.len())));
        }
        if row[7] <= 0.0 {
            continue;
        }
        gens.push(Generator { bus: lookup(*n, "gen", row[0])?, p_set: row[1] / base, v_set: row[5] });
    }
    let mut lines = Vec::new();
    let mut transformers = Vec::new();
    for (n, row) in &branch_rows {
        if row.len() < 11 {
            return Err(parse_err(*n, "branch", format!("expected at least 11 columns, found {}", row.len())));
        }
        if row[10] <= 0.0 {
            continue;
        }
        if row[9] != 0.0 {
            return Err(parse_err(*n, "angle", "phase-shifting transformers are not supported"));
        }
        let from = lookup(*n, "branch", row[0])?;
        let to = lookup(*n, "branch", row[1])?;
        let ratio = row[8];
        if ratio != 0.0 || buses[from].base_kv != buses[to].base_kv {
            transformers.push(Transformer {
                id: transformers.len(),
                from_bus: from,
                to_bus: to,
                r: row[2],
                x: row[3],
                g: 0.0,
                b: row[4],
                tap: if ratio == 0.0 { 1.0 } else { ratio },
            });
        } else {
            let i_max = if row[5] > 0.0 { row[5] / base } else { f64::INFINITY };
            lines.push(Line { id: lines.len(), from_bus: from, to_bus: to, r: row[2], x: row[3], b: row[4], i_max });
        }
    }
    Ok(NetworkCase::new(name, base, buses, lines, transformers, gens, loads)?)
}
