//! Network checkpoints in the line-delimited record format: a header line
//! describing the architecture, then one line per layer.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::io::{atomic_write, push_f64_array, read_to_string, split_records};
use crate::error::{Error, Result};

use super::mlp::{Dense, Mlp, OutputActivation};

pub const PARAMS_FORMAT: &str = "intent-forge/params/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub role: String,
    pub intent_id: Option<usize>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsHeader {
    format: String,
    dims: Vec<usize>,
    output_activation: OutputActivation,
    output_scale: f64,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    layer: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

pub fn to_string(net: &Mlp, meta: &CheckpointMeta) -> String {
    let header = ParamsHeader {
        format: PARAMS_FORMAT.into(),
        dims: net.dims().to_vec(),
        output_activation: net.output_activation(),
        output_scale: net.output_scale(),
        meta: meta.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (i, l) in net.layers().iter().enumerate() {
        let _ = write!(out, "{{\"layer\":{i},\"weight\":");
        push_f64_array(&mut out, l.weight.as_slice());
        out.push_str(",\"bias\":");
        push_f64_array(&mut out, l.bias.as_slice());
        out.push_str("}\n");
    }
    out
}

pub fn save(net: &Mlp, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    atomic_write(path, to_string(net, meta).as_bytes())
}

pub fn from_str(path: &Path, text: &str) -> Result<(Mlp, CheckpointMeta)> {
    let (header, lines): (ParamsHeader, _) = split_records(path, text)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if header.format != PARAMS_FORMAT {
        return Err(parse_err(1, format!("unsupported format `{}`", header.format)));
    }
    if header.dims.len() < 2 || lines.len() != header.dims.len() - 1 {
        return Err(parse_err(lines.last().map_or(1, |l| l.0), "layer count does not match dims".into()));
    }
    let mut layers = Vec::with_capacity(lines.len());
    for (k, (line, body)) in lines.iter().enumerate() {
        let rec: LayerRecord = serde_json::from_str(body).map_err(|e| parse_err(*line, e.to_string()))?;
        let (fan_in, fan_out) = (header.dims[k], header.dims[k + 1]);
        if rec.layer != k || rec.weight.len() != fan_in * fan_out || rec.bias.len() != fan_out {
            return Err(parse_err(*line, format!("layer {k} has the wrong shape")));
        }
        layers.push(Dense {
            weight: DMatrix::from_column_slice(fan_in, fan_out, &rec.weight),
            bias: DVector::from_vec(rec.bias),
        });
    }
    let net = Mlp::from_layers(layers, header.output_activation, header.output_scale)?;
    Ok((net, header.meta))
}

pub fn load(path: &Path) -> Result<(Mlp, CheckpointMeta)> {
    from_str(path, &read_to_string(path)?)
}
