//! `mfpf-model v1` checkpoint files.
//!
//! Header keys carry the case reference, the architecture, epsilon, the
//! three mixing scalars (for reading, they are also the last three
//! parameters), the training configuration and normalization. The flat
//! parameter vector follows a `params <n>` marker, eight values per line.

use std::fmt::Write as _;
use std::path::Path;

use mfpf_core::mfnn::{MfnnParams, MfnnSpec, TrainConfig};
use mfpf_core::scenario::CaseRef;

use crate::data_io::{join, parse_header, read_file, write_file, write_norm, FormatError, Header, TOOL};

pub const MODEL_HEADER: &str = "mfpf-model v1";

/// A checkpoint plus the metadata saved alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MfnnParams,
    pub train: TrainConfig,
    pub best_epoch: usize,
}

pub fn model_to_string(ck: &Checkpoint) -> String {
    let m = &ck.model;
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_HEADER}");
    let _ = writeln!(out, "tool = {TOOL}");
    let _ = writeln!(out, "case = {}", m.case_ref.name);
    let _ = writeln!(out, "case_hash = {}", m.case_ref.line_hash);
    let _ = writeln!(out, "spec = {}", serde_json::to_string(&m.spec).expect("spec serializes"));
    let _ = writeln!(out, "epsilon = {}", m.epsilon);
    let _ = writeln!(out, "alphas = {}", join(m.alphas()));
    let _ = writeln!(out, "train_config = {}", serde_json::to_string(&ck.train).expect("config serializes"));
    let _ = writeln!(out, "best_epoch = {}", ck.best_epoch);
    write_norm(&mut out, &m.norm);
    let _ = writeln!(out, "params {}", m.params.len());
    for chunk in m.params.chunks(8) {
        let _ = writeln!(out, "{}", join(chunk));
    }
    out
}

pub fn parse_model(text: &str) -> Result<Checkpoint, FormatError> {
    let lines: Vec<&str> = text.lines().collect();
    let (pairs, at) = parse_header(&lines, MODEL_HEADER, "params")?;
    let h = Header::new(pairs);
    let bad = |line: usize, message: String| FormatError::Syntax { line, message };
    let n: usize = lines[at]
        .trim()
        .strip_prefix("params ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(at + 1, "expected `params <count>`".into()))?;
    let mut params = Vec::with_capacity(n);
    for (k, raw) in lines[at + 1..].iter().enumerate() {
        for t in raw.split_whitespace() {
            params.push(t.parse::<f64>().map_err(|_| bad(at + 2 + k, format!("`{t}` is not a number")))?);
        }
    }
    if params.len() != n {
        return Err(bad(lines.len(), format!("{} parameters, header says {n}", params.len())));
    }
    let spec: MfnnSpec = h.json("spec")?;
    if spec.n_params() != n {
        return Err(bad(h.get("spec")?.0, format!("architecture needs {} parameters, file has {n}", spec.n_params())));
    }
    let model = MfnnParams {
        spec,
        params,
        epsilon: h.parse("epsilon")?,
        norm: h.norm()?,
        case_ref: CaseRef { name: h.get("case")?.1.trim().to_string(), line_hash: h.get("case_hash")?.1.trim().to_string() },
    };
    let alphas: Vec<f64> = h.list("alphas")?;
    if alphas != model.alphas() {
        return Err(bad(h.get("alphas")?.0, "alphas disagree with the parameter vector".into()));
    }
    if model.epsilon != mfpf_core::mfnn::EPSILON {
        return Err(bad(h.get("epsilon")?.0, format!("epsilon {} is not supported", model.epsilon)));
    }
    if model.norm.x_mean.len() != model.spec.x_len || model.norm.y_mean.len() != model.spec.y_len {
        return Err(bad(h.get("norm.x_mean")?.0, "normalization widths disagree with the architecture".into()));
    }
    Ok(Checkpoint { model, train: h.json("train_config")?, best_epoch: h.parse("best_epoch")? })
}

pub fn write_model(ck: &Checkpoint, path: &Path) -> Result<(), FormatError> {
    write_file(path, &model_to_string(ck))
}

pub fn read_model(path: &Path) -> Result<Checkpoint, FormatError> {
    parse_model(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::bundled;
    use mfpf_core::mfnn::train;
    use mfpf_core::scenario::{generate_dataset, ScenarioConfig};

    #[test]
    fn round_trip_predicts_identically() {
        let case = bundled("ieee14").unwrap();
        let ds = generate_dataset(&case, &ScenarioConfig { n_low: 40, seed: 2, ..Default::default() }).unwrap();
        let tc = TrainConfig { epochs: 2, hidden_width: 8, hidden_layers: 2, ..Default::default() };
        let out = train(&ds, &tc).unwrap();
        let ck = Checkpoint { model: out.model, train: tc, best_epoch: out.best_epoch };
        let text = model_to_string(&ck);
        let back = parse_model(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(model_to_string(&back), text);
        let xs: Vec<&[f64]> = ds.split.test.iter().map(|&i| ds.scenarios[i].x.as_slice()).collect();
        let taus: Vec<_> = ds.split.test.iter().map(|&i| &ds.scenarios[i].tau).collect();
        assert_eq!(ck.model.predict(&xs, &taus).unwrap(), back.model.predict(&xs, &taus).unwrap());
    }

    #[test]
    fn tampered_alphas_rejected() {
        let case = bundled("ieee14").unwrap();
        let ds = generate_dataset(&case, &ScenarioConfig { n_low: 20, seed: 2, ..Default::default() }).unwrap();
        let tc = TrainConfig { epochs: 1, hidden_width: 4, hidden_layers: 2, ..Default::default() };
        let out = train(&ds, &tc).unwrap();
        let text = model_to_string(&Checkpoint { model: out.model, train: tc, best_epoch: 1 });
        let line = text.lines().find(|l| l.starts_with("alphas = ")).unwrap();
        let bad = text.replace(line, "alphas = 1 2 3");
        assert!(matches!(parse_model(&bad), Err(FormatError::Syntax { .. })));
    }
}
