//! On-disk clip format: `<id>.bin` holds the raw little-endian `f32`
//! payload (row-major), `<id>.json` the sidecar
//! `{"frames": F, "features": 263, "fps": 20, "id": "..."}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate, MotionSequence, DEFAULT_FPS, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::text::PartTexts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSidecar {
    pub frames: usize,
    pub features: usize,
    #[serde(default = "default_fps")]
    pub fps: f32,
    pub id: String,
    /// Set on generated clips: the prompt they were sampled from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_texts: Option<PartTexts>,
}

fn default_fps() -> f32 {
    DEFAULT_FPS
}

impl MotionSidecar {
    pub fn new(id: impl Into<String>, m: &MotionSequence) -> Self {
        Self {
            frames: m.frames(),
            features: m.width(),
            fps: DEFAULT_FPS,
            id: id.into(),
            caption: None,
            part_texts: None,
        }
    }
}

fn paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.bin")), dir.join(format!("{id}.json")))
}

/// Writes payload and sidecar into `dir`, returning the payload path.
pub fn write_motion_file(
    dir: &Path,
    m: &MotionSequence,
    sidecar: &MotionSidecar,
) -> Result<PathBuf> {
    if sidecar.frames != m.frames() || sidecar.features != m.width() {
        return Err(Error::shape("sidecar does not describe the payload"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bin, json) = paths(dir, &sidecar.id);
    let bytes: Vec<u8> = m.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let meta = serde_json::to_vec_pretty(sidecar)?;
    fs::write(&json, meta).map_err(|e| Error::io(&json, e))?;
    Ok(bin)
}

/// Reads a clip given the path of either its `.bin` or `.json` file and
/// validates it.
pub fn read_motion_file(path: &Path) -> Result<(MotionSequence, MotionSidecar)> {
    let bin = path.with_extension("bin");
    let json = path.with_extension("json");
    let dataset_err = |msg: String| Error::Dataset {
        path: bin.clone(),
        msg,
    };
    let meta = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: MotionSidecar = serde_json::from_slice(&meta).map_err(|e| Error::Dataset {
        path: json.clone(),
        msg: e.to_string(),
    })?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != sidecar.frames * sidecar.features * 4 {
        return Err(dataset_err(format!(
            "payload has {} bytes, sidecar declares {}x{}",
            bytes.len(),
            sidecar.frames,
            sidecar.features
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let m = MotionSequence::from_vec(sidecar.frames, sidecar.features, data)?;
    if sidecar.features != FEATURE_DIM {
        return Err(dataset_err(format!(
            "clip has {} features, expected {FEATURE_DIM}",
            sidecar.features
        )));
    }
    validate(&m)
        .into_result()
        .map_err(|e| dataset_err(e.to_string()))?;
    Ok((m, sidecar))
}

/// One caption line. `start`/`end` are seconds; `None` means the whole clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub text: String,
    pub start: Option<f32>,
    pub end: Option<f32>,
}

impl CaptionLine {
    /// Frame range selected by the crop, clamped to the clip.
    pub fn frame_range(&self, frames: usize, fps: f32) -> (usize, usize) {
        let to_frame = |s: f32| ((s * fps).round().max(0.0) as usize).min(frames);
        let start = self.start.map_or(0, to_frame);
        let end = self.end.map_or(frames, to_frame);
        if end > start {
            (start, end)
        } else {
            (0, frames)
        }
    }
}

/// Parses `caption#tokens#start#end`; everything after the first `#` is
/// optional. A `0#0` or unparsable crop means the whole clip.
pub fn parse_caption_line(line: &str) -> Option<CaptionLine> {
    let mut fields = line.trim().split('#');
    let text = fields.next()?.trim();
    if text.is_empty() {
        return None;
    }
    let _tokens = fields.next();
    let parse = |f: Option<&str>| {
        f.and_then(|s| s.trim().parse::<f32>().ok())
            .filter(|v| v.is_finite())
    };
    let start = parse(fields.next());
    let end = parse(fields.next());
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s => (Some(s), Some(e)),
        _ => (None, None),
    };
    Some(CaptionLine {
        text: text.to_string(),
        start,
        end,
    })
}

pub fn read_caption_file(path: &Path) -> Result<Vec<CaptionLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter_map(parse_caption_line).collect())
}
