//! Dataset layout, ingestion and the clip index.
//!
//! ```text
//! <root>/motions/<id>.bin, <id>.json   clips (see motion::io)
//! <root>/texts/<id>.txt                caption lines: text#tokens#start#end
//! <root>/stats.json                    optional FeatureStats; computed if absent
//! <root>/overrides.json                optional {"caption": {six part texts}}
//! <root>/splits/{train,val,test}.txt   optional id lists; default all train
//! <root>/index.json                    written by ingest
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::motion::{
    compute_stats_with, read_caption_file, read_motion_file, FeatureStats, MotionSequence, PARTS,
};
use crate::text::{Decomposer, PartTexts, TextSource};

pub const INDEX_FILE: &str = "index.json";
pub const STATS_FILE: &str = "stats.json";
pub const OVERRIDES_FILE: &str = "overrides.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub text: String,
    /// Seconds; `None` means the whole clip.
    pub start: Option<f32>,
    pub end: Option<f32>,
    pub parts: Option<PartTexts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    /// Relative to the dataset root.
    pub motion: PathBuf,
    pub frames: usize,
    pub fps: f32,
    pub split: Split,
    pub captions: Vec<CaptionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub clips: Vec<ClipRecord>,
    pub stats: FeatureStats,
    pub prompt_version: Option<String>,
}

/// One caption with its (cropped) clip, ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct CaptionedClip {
    pub id: String,
    pub motion: MotionSequence,
    pub caption: String,
    pub parts: PartTexts,
}

fn dataset_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_split_lists(root: &Path) -> Result<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for split in Split::ALL {
        let path = root.join("splits").join(format!("{}.txt", split.name()));
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                out.insert(id.to_string(), split);
            }
        }
    }
    Ok(out)
}

/// Manual decompositions keyed by caption text.
pub fn read_overrides(root: &Path) -> Result<BTreeMap<String, PartTexts>> {
    let path = root.join(OVERRIDES_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: BTreeMap<String, PartTexts> =
        serde_json::from_str(&text).map_err(|e| dataset_error(&path, e.to_string()))?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| (k.trim().to_string(), v.with_source(TextSource::Manual)))
        .collect())
}

/// Validates every clip and caption file, computes stats when
/// `stats.json` is absent (and writes it), applies manual overrides, and
/// writes `index.json`. Clips are ordered by id.
pub fn ingest(root: &Path, exec: Execution) -> Result<DatasetIndex> {
    let motions_dir = root.join("motions");
    let entries = fs::read_dir(&motions_dir).map_err(|e| Error::io(&motions_dir, e))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&motions_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "bin" || e == "json") {
            if let Some(stem) = path.file_stem() {
                ids.insert(stem.to_string_lossy().to_string());
            }
        }
    }
    if ids.is_empty() {
        return Err(dataset_error(&motions_dir, "no clips found"));
    }
    let ids: Vec<String> = ids.into_iter().collect();
    let splits = read_split_lists(root)?;
    let overrides = read_overrides(root)?;
    let loaded = exec.try_map(ids.len(), |i| -> Result<(MotionSequence, ClipRecord)> {
        let id = &ids[i];
        let bin = motions_dir.join(format!("{id}.bin"));
        let (m, sidecar) = read_motion_file(&bin)?;
        let text_path = root.join("texts").join(format!("{id}.txt"));
        if !text_path.exists() {
            return Err(dataset_error(&text_path, "missing caption file"));
        }
        let lines = read_caption_file(&text_path)?;
        if lines.is_empty() {
            return Err(dataset_error(&text_path, "no captions"));
        }
        let captions = lines
            .into_iter()
            .map(|l| CaptionRecord {
                parts: overrides.get(l.text.trim()).cloned(),
                text: l.text,
                start: l.start,
                end: l.end,
            })
            .collect();
        let record = ClipRecord {
            id: id.clone(),
            motion: PathBuf::from("motions").join(format!("{id}.bin")),
            frames: m.frames(),
            fps: sidecar.fps,
            split: splits.get(id).copied().unwrap_or_default(),
            captions,
        };
        Ok((m, record))
    })?;
    let stats_path = root.join(STATS_FILE);
    let stats = if stats_path.exists() {
        let text = fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
        let s: FeatureStats =
            serde_json::from_str(&text).map_err(|e| dataset_error(&stats_path, e.to_string()))?;
        FeatureStats::new(s.mean, s.std)?
    } else {
        let train: Vec<MotionSequence> = loaded
            .iter()
            .filter(|(_, r)| r.split == Split::Train)
            .map(|(m, _)| m.clone())
            .collect();
        let corpus = if train.is_empty() {
            loaded.iter().map(|(m, _)| m.clone()).collect()
        } else {
            train
        };
        let s = compute_stats_with(&corpus, exec)?;
        fs::write(&stats_path, serde_json::to_vec_pretty(&s)?).map_err(|e| Error::io(&stats_path, e))?;
        s
    };
    let index = DatasetIndex {
        root: root.to_path_buf(),
        clips: loaded.into_iter().map(|(_, r)| r).collect(),
        stats,
        prompt_version: None,
    };
    index.save()?;
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DecompositionSummary {
    pub llm: usize,
    pub cache: usize,
    pub fallback: usize,
    pub manual: usize,
    /// Captions that already had an entry and were left alone.
    pub skipped: usize,
}

impl DatasetIndex {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut index: DatasetIndex = serde_json::from_str(&text).map_err(|e| dataset_error(&path, e.to_string()))?;
        index.root = root.to_path_buf();
        Ok(index)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(INDEX_FILE);
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn caption_count(&self) -> usize {
        self.clips.iter().map(|c| c.captions.len()).sum()
    }

    /// Gives every caption a decomposition: manual overrides first, then
    /// the decomposer (cache, service or fallback). Captions that already
    /// have one are skipped unless `refresh_fallbacks` is set and theirs
    /// came from the fallback.
    pub fn precompute_decompositions(
        &mut self,
        decomposer: &Decomposer,
        refresh_fallbacks: bool,
        exec: Execution,
    ) -> Result<DecompositionSummary> {
        let overrides = read_overrides(&self.root)?;
        let mut summary = DecompositionSummary::default();
        let mut todo: Vec<(usize, usize)> = Vec::new();
        for (ci, clip) in self.clips.iter_mut().enumerate() {
            for (ki, cap) in clip.captions.iter_mut().enumerate() {
                if let Some(manual) = overrides.get(cap.text.trim()) {
                    cap.parts = Some(manual.clone());
                    summary.manual += 1;
                    continue;
                }
                match &cap.parts {
                    Some(p) if p.source == TextSource::Manual => summary.manual += 1,
                    Some(p) if !(refresh_fallbacks && p.source == TextSource::Fallback) => summary.skipped += 1,
                    _ => todo.push((ci, ki)),
                }
            }
        }
        let captions: Vec<String> = todo
            .iter()
            .map(|&(ci, ki)| self.clips[ci].captions[ki].text.clone())
            .collect();
        let results = decomposer.decompose_all(&captions, exec)?;
        for (&(ci, ki), parts) in todo.iter().zip(results) {
            match parts.source {
                TextSource::Llm => summary.llm += 1,
                TextSource::Cache => summary.cache += 1,
                TextSource::Fallback => summary.fallback += 1,
                TextSource::Manual => summary.manual += 1,
            }
            self.clips[ci].captions[ki].parts = Some(parts);
        }
        self.prompt_version = Some(decomposer.prompt_version().to_string());
        self.save()?;
        Ok(summary)
    }

    pub fn read_clip(&self, clip: &ClipRecord) -> Result<MotionSequence> {
        Ok(read_motion_file(&self.root.join(&clip.motion))?.0)
    }

    /// Every caption of the given clips with its crop of the clip (raw
    /// features). Captions without a decomposition are an error.
    pub fn captioned<'a>(&self, clips: impl IntoIterator<Item = &'a ClipRecord>) -> Result<Vec<CaptionedClip>> {
        let mut out = Vec::new();
        for clip in clips {
            let m = self.read_clip(clip)?;
            for cap in &clip.captions {
                let parts = cap.parts.clone().ok_or_else(|| {
                    dataset_error(
                        &self.root.join(&clip.motion),
                        format!("caption {:?} has no part decomposition; run decompose first", cap.text),
                    )
                })?;
                let line = crate::motion::CaptionLine {
                    text: cap.text.clone(),
                    start: cap.start,
                    end: cap.end,
                };
                let (s, e) = line.frame_range(m.frames(), clip.fps);
                out.push(CaptionedClip {
                    id: clip.id.clone(),
                    motion: m.crop(s, e)?,
                    caption: cap.text.clone(),
                    parts,
                });
            }
        }
        Ok(out)
    }

    /// Checks the invariant that every caption has a decomposition.
    pub fn check_decomposed(&self) -> Result<()> {
        for clip in &self.clips {
            if let Some(c) = clip.captions.iter().find(|c| c.parts.is_none()) {
                return Err(dataset_error(
                    &self.root.join(&clip.motion),
                    format!("caption {:?} has no part decomposition", c.text),
                ));
            }
        }
        Ok(())
    }
}

/// One-line rendering of the six part texts, for logs.
pub fn describe(parts: &PartTexts) -> String {
    PARTS
        .iter()
        .map(|p| format!("{}: {}", p.name(), parts.get(*p)))
        .collect::<Vec<_>>()
        .join("; ")
}
