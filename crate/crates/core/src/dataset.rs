//! Labeled-frame dataset manifest and its on-disk layout.
//!
//! A dataset directory holds `manifest.jsonl` (one record per labeled frame),
//! `scenarios.jsonl` (one scenario description per line) and `raw/`, with one
//! channel-major little-endian `i16` sample file per scenario.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::{FrameShaperConfig, IntensityStream};
use crate::siggen::{render_scenario, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub class_id: usize,
    pub split: Split,
    pub scenario_id: usize,
    pub channel: usize,
    pub frame_index: usize,
    pub k_b: usize,
    pub k_e: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: usize,
    pub class_id: usize,
    pub split: Split,
    pub spec: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub framing: FrameShaperConfig,
    pub scenarios: Vec<ScenarioRecord>,
    pub frames: Vec<FrameRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SCENARIOS_FILE: &str = "scenarios.jsonl";
pub const RAW_DIR: &str = "raw";

pub fn raw_path(dir: &Path, scenario_id: usize) -> PathBuf {
    dir.join(RAW_DIR).join(format!("scenario_{scenario_id:05}.i16"))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

impl DatasetManifest {
    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn scenario(&self, id: usize) -> Option<&ScenarioRecord> {
        match self.scenarios.get(id) {
            Some(s) if s.id == id => Some(s),
            _ => self.scenarios.iter().find(|s| s.id == id),
        }
    }

    /// Write manifest, scenario list and rendered raw streams.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(RAW_DIR))?;
        write_jsonl(&dir.join(MANIFEST_FILE), &self.frames)?;
        write_jsonl(&dir.join(SCENARIOS_FILE), &self.scenarios)?;
        for s in &self.scenarios {
            let (stream, _) = render_scenario(&s.spec)?;
            fs::write(raw_path(dir, s.id), stream.to_i16_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let frames: Vec<FrameRecord> = read_jsonl(&dir.join(MANIFEST_FILE))?;
        let scenarios: Vec<ScenarioRecord> = read_jsonl(&dir.join(SCENARIOS_FILE))?;
        let framing = scenarios.first().map(|s| s.spec.framing).unwrap_or_default();
        for (i, s) in scenarios.iter().enumerate() {
            if s.id != i {
                return Err(Error::Format(format!("scenario ids must be dense; line {} has id {}", i + 1, s.id)));
            }
        }
        if let Some(f) = frames.iter().find(|f| f.scenario_id >= scenarios.len()) {
            return Err(Error::Format(format!("frame {} references unknown scenario {}", f.frame_id, f.scenario_id)));
        }
        Ok(Self {
            framing,
            scenarios,
            frames,
        })
    }
}

/// Source of raw scenario streams: rendered on demand or read from disk.
pub enum StreamSource<'a> {
    Render,
    Directory(&'a Path),
}

impl StreamSource<'_> {
    pub fn load(&self, rec: &ScenarioRecord) -> Result<IntensityStream> {
        match self {
            StreamSource::Render => Ok(render_scenario(&rec.spec)?.0),
            StreamSource::Directory(dir) => {
                let path = raw_path(dir, rec.id);
                let bytes = fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
                    _ => Error::Io(e),
                })?;
                IntensityStream::from_i16_le_bytes(&bytes, rec.spec.channel_count)
            }
        }
    }
}
