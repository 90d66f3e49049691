//! Hypnogram sources: EDF+ annotation files, plain text (one label per line),
//! and SHHS Profusion XML.

use std::fs;
use std::path::Path;

use super::edf::{self, TimedAnnotation};
use crate::error::{Error, Result};
use crate::stage::RawStage;

/// Scoring window length in seconds.
pub const EPOCH_SECONDS: u32 = 30;

/// One scored interval of a hypnogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageAnnotation {
    pub onset_s: f64,
    pub duration_s: f64,
    pub stage: RawStage,
}

impl StageAnnotation {
    /// Consecutive 30-second annotations starting at time zero.
    pub fn sequence(stages: &[RawStage]) -> Vec<StageAnnotation> {
        stages
            .iter()
            .enumerate()
            .map(|(i, &stage)| StageAnnotation {
                onset_s: (i as u32 * EPOCH_SECONDS) as f64,
                duration_s: EPOCH_SECONDS as f64,
                stage,
            })
            .collect()
    }
}

/// Keeps only sleep-stage annotations; other events (lights off, arousals) are ignored.
pub fn from_timed(list: &[TimedAnnotation]) -> Vec<StageAnnotation> {
    list.iter()
        .filter(|a| {
            let t = a.text.to_ascii_lowercase();
            t.starts_with("sleep stage") || t.starts_with("movement")
        })
        .map(|a| StageAnnotation {
            onset_s: a.onset_s,
            duration_s: a.duration_s.unwrap_or(EPOCH_SECONDS as f64),
            stage: RawStage::parse(&a.text),
        })
        .collect()
}

pub fn parse_text(text: &str) -> Vec<StageAnnotation> {
    let stages: Vec<RawStage> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(RawStage::parse)
        .collect();
    StageAnnotation::sequence(&stages)
}

/// Extracts the `<SleepStage>` sequence of a Profusion XML export.
pub fn parse_profusion_xml(text: &str) -> Result<Vec<StageAnnotation>> {
    const OPEN: &str = "<SleepStage>";
    const CLOSE: &str = "</SleepStage>";
    let mut stages = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(OPEN) {
        rest = &rest[start + OPEN.len()..];
        let end = rest
            .find(CLOSE)
            .ok_or_else(|| Error::Parse("unterminated <SleepStage> element".into()))?;
        stages.push(RawStage::parse(&rest[..end]));
        rest = &rest[end + CLOSE.len()..];
    }
    if stages.is_empty() {
        return Err(Error::Parse("no <SleepStage> elements found".into()));
    }
    Ok(StageAnnotation::sequence(&stages))
}

/// Loads a hypnogram, picking the parser from the file extension.
pub fn load(path: &Path) -> Result<Vec<StageAnnotation>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    match ext.as_str() {
        "edf" | "edf+" => Ok(from_timed(&edf::load_annotations(path)?)),
        "xml" => parse_profusion_xml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?),
        _ => Ok(parse_text(
            &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        )),
    }
}
