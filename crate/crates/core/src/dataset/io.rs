//! Line-delimited record files. The first line is a JSON header object and
//! each following line is one JSON record. Floats are written in scientific
//! notation with 17 significant digits, which round-trips every `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Space, Transition};

pub const DATASET_FORMAT: &str = "intent-forge/dataset/v1";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn push_f64_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push(']');
}

/// Writes via a sibling temporary file and a rename, so readers never see a
/// partially written file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits a record file into its header and body lines, parsing the header.
/// Every line, including the last, must end in a newline.
pub fn split_records<'a, H: for<'de> Deserialize<'de>>(path: &Path, text: &'a str) -> Result<(H, Vec<(usize, &'a str)>)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if text.is_empty() {
        return Err(parse_err(1, "empty file".into()));
    }
    if !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(parse_err(line, "truncated record (missing trailing newline)".into()));
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, head) = lines.next().expect("non-empty");
    let header: H = serde_json::from_str(head).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    Ok((header, lines.collect()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    env_fingerprint: String,
    labeled: bool,
    horizon: usize,
    state_space: Space,
    action_space: Space,
    provenance: String,
    config_hash: Option<String>,
    num_transitions: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    episode_id: u64,
    step: usize,
    state: Vec<f64>,
    action: Vec<f64>,
    reward: Option<f64>,
    next_state: Vec<f64>,
    done: bool,
}

fn encode_transition(out: &mut String, t: &Transition) {
    let _ = write!(out, "{{\"episode_id\":{},\"step\":{},\"state\":", t.episode_id, t.step);
    push_f64_array(out, &t.state);
    out.push_str(",\"action\":");
    push_f64_array(out, &t.action);
    out.push_str(",\"reward\":");
    match t.reward {
        Some(r) => out.push_str(&fmt_f64(r)),
        None => out.push_str("null"),
    }
    out.push_str(",\"next_state\":");
    push_f64_array(out, &t.next_state);
    let _ = writeln!(out, ",\"done\":{}}}", t.done);
}

pub fn to_string(dataset: &Dataset) -> Result<String> {
    dataset.validate()?;
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        env_fingerprint: dataset.env_fingerprint.clone(),
        labeled: dataset.labeled,
        horizon: dataset.horizon,
        state_space: dataset.state_space,
        action_space: dataset.action_space,
        provenance: dataset.provenance.clone(),
        config_hash: dataset.config_hash.clone(),
        num_transitions: dataset.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in &dataset.transitions {
        encode_transition(&mut out, t);
    }
    Ok(out)
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    atomic_write(path, to_string(dataset)?.as_bytes())
}

pub fn from_str(path: &Path, text: &str) -> Result<Dataset> {
    let (header, lines): (DatasetHeader, _) = split_records(path, text)?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unsupported format `{}`", header.format),
        });
    }
    let mut transitions = Vec::with_capacity(header.num_transitions);
    for (line, body) in &lines {
        let rec: TransitionRecord = serde_json::from_str(body).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: *line,
            message: e.to_string(),
        })?;
        transitions.push(Transition {
            episode_id: rec.episode_id,
            step: rec.step,
            state: rec.state,
            action: rec.action,
            reward: rec.reward,
            next_state: rec.next_state,
            done: rec.done,
        });
    }
    if transitions.len() != header.num_transitions {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lines.last().map_or(1, |(l, _)| *l),
            message: format!("expected {} transitions, found {}", header.num_transitions, transitions.len()),
        });
    }
    let dataset = Dataset {
        env_fingerprint: header.env_fingerprint,
        labeled: header.labeled,
        horizon: header.horizon,
        state_space: header.state_space,
        action_space: header.action_space,
        provenance: header.provenance,
        config_hash: header.config_hash,
        transitions,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_str(path, &read_to_string(path)?)
}

/// Loads a dataset and checks it belongs to the expected environment.
pub fn load_expecting(path: &Path, env_fingerprint: &str) -> Result<Dataset> {
    let d = load(path)?;
    if d.env_fingerprint != env_fingerprint {
        return Err(Error::Validation(format!(
            "{} was recorded on `{}`, expected `{env_fingerprint}`",
            path.display(),
            d.env_fingerprint
        )));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_dataset;
    use crate::dataset::{collect_control, BehaviorPolicySpec};
    use crate::mdp::{PointReach, PointReachKind};
    use proptest::prelude::*;

    #[test]
    fn thousand_transition_round_trip() {
        let env = PointReach::new(PointReachKind::PointReach2D, 20, vec![0.6, 0.6], vec![-0.8, -0.8], 0.1, 0.01).unwrap();
        let d = collect_control(&env, &BehaviorPolicySpec::tier("medium").unwrap(), 50, 3).unwrap();
        assert_eq!(d.len(), 1000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save(&d, &path).unwrap();
        assert_eq!(load(&path).unwrap(), d);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let d = toy_dataset(3, 4, true);
        let text = to_string(&d).unwrap();
        let cut = &text[..text.len() - 17];
        let err = from_str(Path::new("t.jsonl"), cut).unwrap_err();
        assert!(matches!(err, Error::Parse { line, .. } if line == 13));
        // cut on a line boundary: caught by the record count
        let lines: Vec<&str> = text.lines().collect();
        let boundary = lines[..10].join("\n") + "\n";
        assert!(matches!(from_str(Path::new("t.jsonl"), &boundary), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let d = Dataset::empty("e", 3, Space::Discrete { n: 2 }, Space::Discrete { n: 2 }, false);
        let text = to_string(&d).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(from_str(Path::new("e"), &text).unwrap(), d);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = to_string(&toy_dataset(1, 3, true))
            .unwrap()
            .replace("\"done\":false}\n{", "\"done\":maybe}\n{");
        let err = from_str(Path::new("m"), &text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn fingerprint_mismatch_on_typed_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save(&toy_dataset(1, 2, false), &path).unwrap();
        assert!(load_expecting(&path, "toy").is_ok());
        assert!(matches!(load_expecting(&path, "other"), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..6)) {
            let mut d = toy_dataset(1, 1, true);
            d.state_space = Space::Box { dim: values.len(), bound: 1.0 };
            d.transitions[0].state = values.clone();
            d.transitions[0].next_state = values.iter().rev().cloned().collect();
            d.transitions[0].reward = Some(values[0]);
            let back = from_str(Path::new("p"), &to_string(&d).unwrap()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
