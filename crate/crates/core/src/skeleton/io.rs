use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SkeletonSequence, COORD_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;

// Field order is the canonical key order of the file.
#[derive(Serialize, Deserialize)]
struct SequenceFile {
    version: u32,
    #[serde(rename = "C")]
    c: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    label: usize,
    valid_len: usize,
    data: Vec<f64>,
}

pub(crate) fn to_json(seq: &SkeletonSequence) -> Result<String> {
    seq.validate()?;
    let s = seq.coords.shape();
    let file = SequenceFile {
        version: SEQUENCE_FORMAT_VERSION,
        c: s[0],
        t: s[1],
        n: s[2],
        m: s[3],
        label: seq.label,
        valid_len: seq.valid_len,
        data: seq.coords.data().to_vec(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub(crate) fn from_json(text: &str, path: &Path) -> Result<SkeletonSequence> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    // Check the version before the full schema so that future layouts get an
    // explicit version error instead of a field error.
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| bad("missing numeric \"version\"".into()))?;
    if version != u64::from(SEQUENCE_FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            expected: SEQUENCE_FORMAT_VERSION,
        });
    }
    let file: SequenceFile = serde_json::from_str(text)?;
    if file.c != COORD_CHANNELS {
        return Err(bad(format!("C must be {COORD_CHANNELS}, got {}", file.c)));
    }
    let expected = file.c * file.t * file.n * file.m;
    if file.data.len() != expected {
        return Err(bad(format!(
            "data length {} != C·T·N·M = {}·{}·{}·{} = {expected}",
            file.data.len(),
            file.c,
            file.t,
            file.n,
            file.m
        )));
    }
    if file.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("data in {}", path.display())));
    }
    let coords = Tensor::new(vec![file.c, file.t, file.n, file.m], file.data)
        .map_err(|e| bad(e.to_string()))?;
    let persons = active_persons(&coords);
    SkeletonSequence::new(coords, file.label, file.valid_len, persons)
        .map_err(|e| bad(e.to_string()))
}

// The file does not store the active person count: slots after the last one
// holding any non-zero coordinate are unused.
fn active_persons(coords: &Tensor) -> usize {
    let s = coords.shape();
    let m = s[3];
    let used = |p: usize| {
        coords
            .data()
            .iter()
            .skip(p)
            .step_by(m)
            .any(|&v| v != 0.0)
    };
    (0..m).rev().find(|&p| used(p)).map_or(1, |p| p + 1)
}

/// Writes `seq` in the canonical JSON sequence format.
pub fn save(seq: &SkeletonSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json(seq)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a canonical JSON sequence file.
pub fn load(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, path)
}
