//! EDF / EDF+ reading and writing.
//!
//! Only what ingestion needs: the fixed ASCII header, one physical channel at a
//! time, and the "EDF Annotations" TAL stream used by Sleep-EDF hypnograms.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    fn to_physical(&self, digital: i16) -> f64 {
        (f64::from(digital) - f64::from(self.digital_min)) * self.gain() + self.physical_min
    }

    /// Multiplier converting this signal's physical unit to volts, if it is a voltage.
    fn volt_scale(&self) -> f64 {
        match self.physical_dimension.trim() {
            "uV" | "µV" | "uv" => 1e-6,
            "mV" | "mv" => 1e-3,
            "nV" => 1e-9,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub num_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    fn signal_offset(&self, index: usize) -> usize {
        self.signals[..index]
            .iter()
            .map(|s| s.samples_per_record * 2)
            .sum()
    }

    /// Index of the channel whose label matches `name`, either exactly or after
    /// stripping a modality prefix such as `"EEG "`.
    pub fn find_channel(&self, name: &str) -> Option<usize> {
        let want = name.trim().to_ascii_lowercase();
        let labels: Vec<String> = self
            .signals
            .iter()
            .map(|s| s.label.trim().to_ascii_lowercase())
            .collect();
        labels.iter().position(|l| *l == want).or_else(|| {
            labels.iter().position(|l| {
                l.split_once(' ')
                    .is_some_and(|(_, rest)| rest.trim() == want)
            })
        })
    }

    pub fn sampling_rate(&self, index: usize) -> Result<u32> {
        let rate = self.signals[index].samples_per_record as f64 / self.record_duration_s;
        let rounded = rate.round();
        if rounded < 1.0 || (rate - rounded).abs() > 1e-6 {
            return Err(Error::Parse(format!(
                "channel {:?} has non-integer sampling rate {rate}",
                self.signals[index].label
            )));
        }
        Ok(rounded as u32)
    }
}

fn field(bytes: &[u8], pos: &mut usize, len: usize) -> Result<String> {
    let end = *pos + len;
    let raw = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Parse("header truncated".into()))?;
    *pos = end;
    Ok(String::from_utf8_lossy(raw).trim().to_string())
}

fn number<T: std::str::FromStr>(text: &str, what: &str) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("invalid {what}: {text:?}")))
}

pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < 256 {
        return Err(Error::Parse(
            "file shorter than the 256-byte EDF header".into(),
        ));
    }
    let mut pos = 0;
    let version = field(bytes, &mut pos, 8)?;
    if version != "0" {
        return Err(Error::Parse(format!("unsupported EDF version {version:?}")));
    }
    let patient = field(bytes, &mut pos, 80)?;
    let recording = field(bytes, &mut pos, 80)?;
    let start_date = field(bytes, &mut pos, 8)?;
    let start_time = field(bytes, &mut pos, 8)?;
    let header_bytes: usize = number(&field(bytes, &mut pos, 8)?, "header size")?;
    let _reserved = field(bytes, &mut pos, 44)?;
    let num_records: i64 = number(&field(bytes, &mut pos, 8)?, "record count")?;
    let record_duration_s: f64 = number(&field(bytes, &mut pos, 8)?, "record duration")?;
    let ns: usize = number(&field(bytes, &mut pos, 4)?, "signal count")?;
    if header_bytes != 256 * (ns + 1) {
        return Err(Error::Parse(format!(
            "header size {header_bytes} inconsistent with {ns} signals"
        )));
    }
    if record_duration_s <= 0.0 {
        return Err(Error::Parse("record duration must be positive".into()));
    }

    let mut columns: Vec<Vec<String>> = Vec::new();
    for width in [16, 80, 8, 8, 8, 8, 8, 80, 8, 32] {
        let mut col = Vec::with_capacity(ns);
        for _ in 0..ns {
            col.push(field(bytes, &mut pos, width)?);
        }
        columns.push(col);
    }
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let signal = SignalHeader {
            label: columns[0][i].clone(),
            transducer: columns[1][i].clone(),
            physical_dimension: columns[2][i].clone(),
            physical_min: number(&columns[3][i], "physical minimum")?,
            physical_max: number(&columns[4][i], "physical maximum")?,
            digital_min: number(&columns[5][i], "digital minimum")?,
            digital_max: number(&columns[6][i], "digital maximum")?,
            prefiltering: columns[7][i].clone(),
            samples_per_record: number(&columns[8][i], "samples per record")?,
        };
        if signal.digital_max <= signal.digital_min {
            return Err(Error::Parse(format!(
                "signal {:?}: digital maximum must exceed minimum",
                signal.label
            )));
        }
        signals.push(signal);
    }

    let mut header = EdfHeader {
        patient,
        recording,
        start_date,
        start_time,
        header_bytes,
        num_records: 0,
        record_duration_s,
        signals,
    };
    let record_bytes = header.record_bytes();
    let available = bytes.len().saturating_sub(header_bytes);
    let complete = if record_bytes == 0 {
        0
    } else {
        available / record_bytes
    };
    header.num_records = if num_records < 0 {
        complete
    } else {
        (num_records as usize).min(complete)
    };
    Ok(header)
}

/// Physical samples of one channel, in volts when the channel is a voltage.
pub fn read_channel(bytes: &[u8], header: &EdfHeader, index: usize) -> Vec<f32> {
    let signal = &header.signals[index];
    let scale = signal.volt_scale();
    let record_bytes = header.record_bytes();
    let offset = header.signal_offset(index);
    let mut out = Vec::with_capacity(header.num_records * signal.samples_per_record);
    for r in 0..header.num_records {
        let start = header.header_bytes + r * record_bytes + offset;
        let chunk = &bytes[start..start + signal.samples_per_record * 2];
        out.extend(chunk.chunks_exact(2).map(|b| {
            let d = i16::from_le_bytes([b[0], b[1]]);
            (signal.to_physical(d) * scale) as f32
        }));
    }
    out
}

/// One entry of an EDF+ time-stamped annotation list.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedAnnotation {
    pub onset_s: f64,
    pub duration_s: Option<f64>,
    pub text: String,
}

/// Collects every non-empty annotation from the "EDF Annotations" channels.
pub fn read_annotations(bytes: &[u8], header: &EdfHeader) -> Result<Vec<TimedAnnotation>> {
    let record_bytes = header.record_bytes();
    let mut out = Vec::new();
    for (index, signal) in header.signals.iter().enumerate() {
        if !signal.is_annotation() {
            continue;
        }
        let offset = header.signal_offset(index);
        for r in 0..header.num_records {
            let start = header.header_bytes + r * record_bytes + offset;
            let chunk = &bytes[start..start + signal.samples_per_record * 2];
            parse_tal_block(chunk, &mut out)?;
        }
    }
    out.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    Ok(out)
}

fn parse_tal_block(block: &[u8], out: &mut Vec<TimedAnnotation>) -> Result<()> {
    for tal in block.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == 0x14);
        let Some(time) = parts.next() else { continue };
        let time = String::from_utf8_lossy(time);
        let (onset, duration) = match time.split_once('\u{15}') {
            Some((o, d)) => (o.to_string(), Some(d.to_string())),
            None => (time.to_string(), None),
        };
        let onset_s: f64 = number(&onset, "annotation onset")?;
        let duration_s = duration
            .filter(|d| !d.is_empty())
            .map(|d| number::<f64>(&d, "annotation duration"))
            .transpose()?;
        for text in parts {
            let text = String::from_utf8_lossy(text).trim().to_string();
            if !text.is_empty() {
                out.push(TimedAnnotation {
                    onset_s,
                    duration_s,
                    text,
                });
            }
        }
    }
    Ok(())
}

/// Reads one channel from an EDF file: samples, native rate, and the patient
/// field (used as a fallback subject identifier).
pub fn load_recording(path: &Path, channel: &str) -> Result<(Vec<f32>, u32, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    let index = header
        .find_channel(channel)
        .filter(|&i| !header.signals[i].is_annotation())
        .ok_or_else(|| Error::ChannelNotFound {
            channel: channel.to_string(),
            path: path.to_path_buf(),
        })?;
    let rate = header.sampling_rate(index)?;
    let samples = read_channel(&bytes, &header, index);
    if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("non-finite sample at index {bad}")));
    }
    let subject = header
        .patient
        .split_whitespace()
        .next()
        .unwrap_or_default()
        .to_string();
    Ok((samples, rate, subject))
}

pub fn load_annotations(path: &Path) -> Result<Vec<TimedAnnotation>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    read_annotations(&bytes, &header)
}

/// Signal payload for [`write_edf`].
#[derive(Debug, Clone)]
pub enum WriteSignal {
    /// Physical samples, quantised to 16 bits over `[physical_min, physical_max]`.
    Samples {
        label: String,
        physical_dimension: String,
        physical_min: f64,
        physical_max: f64,
        samples_per_record: usize,
        samples: Vec<f64>,
    },
    Annotations(Vec<TimedAnnotation>),
}

/// Writes a minimal EDF (or EDF+ when annotations are present) file.
pub fn write_edf(
    path: &Path,
    patient: &str,
    record_duration_s: f64,
    signals: &[WriteSignal],
) -> Result<()> {
    let num_records = signals
        .iter()
        .filter_map(|s| match s {
            WriteSignal::Samples {
                samples_per_record,
                samples,
                ..
            } => Some(samples.len().div_ceil(*samples_per_record)),
            WriteSignal::Annotations(_) => None,
        })
        .max()
        .unwrap_or(1)
        .max(1);

    // Annotation TALs are all placed in the first record; later records only
    // carry the mandatory time-keeping TAL.
    let mut tal_blocks: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut annotation_spr = Vec::new();
    for s in signals {
        if let WriteSignal::Annotations(list) = s {
            let mut blocks = Vec::with_capacity(num_records);
            for r in 0..num_records {
                let mut b = format!("+{}\x14\x14\x00", r as f64 * record_duration_s).into_bytes();
                if r == 0 {
                    for a in list {
                        b.extend_from_slice(format!("+{}", a.onset_s).as_bytes());
                        if let Some(d) = a.duration_s {
                            b.extend_from_slice(format!("\x15{d}").as_bytes());
                        }
                        b.extend_from_slice(format!("\x14{}\x14\x00", a.text).as_bytes());
                    }
                }
                blocks.push(b);
            }
            let longest = blocks.iter().map(Vec::len).max().unwrap_or(0);
            annotation_spr.push(longest.div_ceil(2).max(1));
            tal_blocks.push(blocks);
        }
    }

    let ns = signals.len();
    let is_plus = !tal_blocks.is_empty();
    let mut out = Vec::new();
    let mut put = |text: &str, width: usize| {
        let mut t: Vec<u8> = text.bytes().take(width).collect();
        t.resize(width, b' ');
        out.extend_from_slice(&t);
    };
    put("0", 8);
    put(patient, 80);
    put("Startdate X X X X", 80);
    put("01.01.00", 8);
    put("00.00.00", 8);
    put(&(256 * (ns + 1)).to_string(), 8);
    put(if is_plus { "EDF+C" } else { "" }, 44);
    put(&num_records.to_string(), 8);
    put(&format_g(record_duration_s), 8);
    put(&ns.to_string(), 4);

    let mut ann_i = 0;
    let mut rows: Vec<[String; 10]> = Vec::new();
    for s in signals {
        rows.push(match s {
            WriteSignal::Samples {
                label,
                physical_dimension,
                physical_min,
                physical_max,
                samples_per_record,
                ..
            } => [
                label.clone(),
                String::new(),
                physical_dimension.clone(),
                format_g(*physical_min),
                format_g(*physical_max),
                "-32768".into(),
                "32767".into(),
                String::new(),
                samples_per_record.to_string(),
                String::new(),
            ],
            WriteSignal::Annotations(_) => {
                let spr = annotation_spr[ann_i];
                ann_i += 1;
                [
                    ANNOTATION_LABEL.into(),
                    String::new(),
                    String::new(),
                    "-1".into(),
                    "1".into(),
                    "-32768".into(),
                    "32767".into(),
                    String::new(),
                    spr.to_string(),
                    String::new(),
                ]
            }
        });
    }
    for (col, width) in [16, 80, 8, 8, 8, 8, 8, 80, 8, 32].into_iter().enumerate() {
        for row in &rows {
            put(&row[col], width);
        }
    }

    for r in 0..num_records {
        let mut ann_i = 0;
        for s in signals {
            match s {
                WriteSignal::Samples {
                    physical_min,
                    physical_max,
                    samples_per_record,
                    samples,
                    ..
                } => {
                    let gain = (physical_max - physical_min) / 65535.0;
                    for j in 0..*samples_per_record {
                        let v = samples
                            .get(r * samples_per_record + j)
                            .copied()
                            .unwrap_or(0.0);
                        let d = ((v - physical_min) / gain - 32768.0).round();
                        let d = d.clamp(-32768.0, 32767.0) as i16;
                        out.extend_from_slice(&d.to_le_bytes());
                    }
                }
                WriteSignal::Annotations(_) => {
                    let mut block = tal_blocks[ann_i][r].clone();
                    block.resize(annotation_spr[ann_i] * 2, 0);
                    out.extend_from_slice(&block);
                    ann_i += 1;
                }
            }
        }
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

fn format_g(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 8 {
        s
    } else {
        format!("{v:.6e}").chars().take(8).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.edf");
        write_edf(
            &path,
            "s1",
            30.0,
            &[WriteSignal::Samples {
                label: "EEG Fpz-Cz".into(),
                physical_dimension: "uV".into(),
                physical_min: -100.0,
                physical_max: 100.0,
                samples_per_record: 3000,
                samples: vec![0.0; 3000],
            }],
        )
        .unwrap();
        let (samples, rate, subject) = load_recording(&path, "Fpz-Cz").unwrap();
        assert_eq!(rate, 100);
        assert_eq!(subject, "s1");
        assert_eq!(samples.len(), 3000);
        // 16-bit quantisation of 0 over a symmetric range lands within half a step.
        let step = 200.0 / 65535.0 * 1e-6;
        assert!(samples.iter().all(|v| v.abs() as f64 <= step));
    }

    #[test]
    fn missing_channel_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.edf");
        write_edf(
            &path,
            "s1",
            1.0,
            &[WriteSignal::Samples {
                label: "EEG C4-A1".into(),
                physical_dimension: "uV".into(),
                physical_min: -1.0,
                physical_max: 1.0,
                samples_per_record: 125,
                samples: vec![0.5; 250],
            }],
        )
        .unwrap();
        let (_, rate, _) = load_recording(&path, "C4-A1").unwrap();
        assert_eq!(rate, 125);
        assert!(matches!(
            load_recording(&path, "Fpz-Cz"),
            Err(Error::ChannelNotFound { .. })
        ));
    }

    #[test]
    fn malformed_header_is_parse_error() {
        assert!(matches!(parse_header(b"garbage"), Err(Error::Parse(_))));
        let mut bytes = vec![b' '; 512];
        bytes[..2].copy_from_slice(b"9 ");
        assert!(matches!(parse_header(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.edf");
        let list = vec![
            TimedAnnotation {
                onset_s: 0.0,
                duration_s: Some(60.0),
                text: "Sleep stage W".into(),
            },
            TimedAnnotation {
                onset_s: 60.0,
                duration_s: Some(30.0),
                text: "Sleep stage 4".into(),
            },
        ];
        write_edf(&path, "s1", 30.0, &[WriteSignal::Annotations(list.clone())]).unwrap();
        assert_eq!(load_annotations(&path).unwrap(), list);
    }
}
