//! Line-delimited JSON frame logs: one header line, then one frame per line.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{generate_frames, Camera, FrameRecord, Scenario};

pub const SCHEMA: &str = "lockon.framelog.v1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("empty log")]
    Empty,
    #[error("unsupported schema {0:?}")]
    Schema(String),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub camera: Camera,
    pub seed: u64,
    /// The scenario that produced the log, when simulated.
    #[serde(default)]
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub header: LogHeader,
    pub frames: Vec<FrameRecord>,
}

impl FrameLog {
    pub fn simulate(sc: &Scenario) -> Self {
        Self {
            header: LogHeader {
                schema: SCHEMA.into(),
                camera: sc.camera,
                seed: sc.seed,
                scenario: Some(sc.clone()),
            },
            frames: generate_frames(sc),
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), LogError> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header).map_err(|e| LogError::Io(e.into()))?;
        w.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, f).map_err(|e| LogError::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(LogError::Empty)?;
        let header: LogHeader = serde_json::from_str(&first?).map_err(|source| LogError::Parse { line: 1, source })?;
        if header.schema != SCHEMA {
            return Err(LogError::Schema(header.schema));
        }
        let mut frames: Vec<FrameRecord> = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let f: FrameRecord = serde_json::from_str(&line?).map_err(|source| LogError::Parse { line: line_no, source })?;
            let invalid = |msg: String| LogError::Invalid { line: line_no, msg };
            if !f.t.is_finite() {
                return Err(invalid("non-finite timestamp".into()));
            }
            if let Some(prev) = frames.last() {
                if !(f.t > prev.t) {
                    return Err(invalid(format!("timestamp {} does not increase past {}", f.t, prev.t)));
                }
            }
            for d in &f.detections {
                d.validate().map_err(|e| invalid(e.to_string()))?;
            }
            frames.push(f);
        }
        Ok(Self { header, frames })
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
