//! Dataset files.
//!
//! Two encodings of the same logical schema:
//!
//! * text: JSON lines. The first line is a header object
//!   `{"format":"framefuse-dataset","version":1,"num_classes":..,"frames":..,
//!   "visual_dim":..,"audio_dim":..,"train_count":..,"records":..}`, then one
//!   object per video with `video_id`, `labels`, `frames`, row-major `rgb` and
//!   `audio`, `mean_rgb` and `mean_audio`.
//! * binary: magic `FFDSBIN\0`, little-endian `u32` version, six `u64` header
//!   fields, then length-prefixed records holding raw `f64` bit patterns.
//!
//! Both roundtrip bit-exactly. Record indices in errors are zero-based.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::classifier::LabelSet;
use crate::data::{Dataset, DatasetHeader, FrameExample};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const FORMAT_VERSION: u32 = 1;
const TEXT_FORMAT: &str = "framefuse-dataset";
pub const BINARY_MAGIC: &[u8; 8] = b"FFDSBIN\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Text,
    Binary,
}

impl DatasetFormat {
    /// `.bin` selects binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => DatasetFormat::Binary,
            _ => DatasetFormat::Text,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    parse_dataset(&bytes)
}

/// Detects the encoding from the leading bytes.
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.starts_with(BINARY_MAGIC) {
        parse_dataset_binary(bytes)
    } else {
        read_dataset_text(bytes)
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: DatasetFormat) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    match format {
        DatasetFormat::Text => write_dataset_text(dataset, &mut out)?,
        DatasetFormat::Binary => out.write_all(&encode_dataset_binary(dataset)?)?,
    }
    out.flush()?;
    Ok(())
}

fn check_finite(ex: &FrameExample, record: usize) -> Result<()> {
    let all = ex
        .visual
        .as_slice()
        .iter()
        .chain(ex.audio.as_slice())
        .chain(&ex.mean_visual)
        .chain(&ex.mean_audio);
    for v in all {
        if !v.is_finite() {
            return Err(Error::Validation {
                record,
                reason: format!("non-finite feature value {v} cannot be stored as text"),
            });
        }
    }
    Ok(())
}

pub fn write_dataset_text(dataset: &Dataset, out: &mut impl Write) -> Result<()> {
    let h = &dataset.header;
    let header = json!({
        "format": TEXT_FORMAT,
        "version": FORMAT_VERSION,
        "num_classes": h.num_classes,
        "frames": h.frames,
        "visual_dim": h.visual_dim,
        "audio_dim": h.audio_dim,
        "train_count": h.train_count,
        "records": dataset.examples.len(),
    });
    serde_json::to_writer(&mut *out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for (i, ex) in dataset.examples.iter().enumerate() {
        check_finite(ex, i)?;
        let rec = json!({
            "video_id": ex.video_id,
            "labels": ex.labels.iter().collect::<Vec<_>>(),
            "frames": ex.num_frames(),
            "rgb": ex.visual.as_slice(),
            "audio": ex.audio.as_slice(),
            "mean_rgb": ex.mean_visual,
            "mean_audio": ex.mean_audio,
        });
        serde_json::to_writer(&mut *out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    record: usize,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Value, record: usize) -> Result<Self> {
        match v.as_object() {
            Some(obj) => Ok(Fields { obj, record }),
            None => Err(Error::parse(record, "record", "expected a JSON object")),
        }
    }

    fn get(&self, name: &str) -> Result<&'a Value> {
        self.obj
            .get(name)
            .ok_or_else(|| Error::parse(self.record, name, "missing"))
    }

    fn count(&self, name: &str) -> Result<usize> {
        self.get(name)?
            .as_u64()
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| Error::parse(self.record, name, "expected a non-negative integer"))
    }

    fn string(&self, name: &str) -> Result<&'a str> {
        self.get(name)?
            .as_str()
            .ok_or_else(|| Error::parse(self.record, name, "expected a string"))
    }

    fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let arr = self
            .get(name)?
            .as_array()
            .ok_or_else(|| Error::parse(self.record, name, "expected an array of numbers"))?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64()
                    .ok_or_else(|| Error::parse(self.record, name, format!("element {i} is not a number")))
            })
            .collect()
    }

    fn labels(&self) -> Result<LabelSet> {
        let arr = self
            .get("labels")?
            .as_array()
            .ok_or_else(|| Error::parse(self.record, "labels", "expected an array of class ids"))?;
        let ids = arr
            .iter()
            .map(|v| {
                v.as_u64()
                    .and_then(|v| u32::try_from(v).ok())
                    .ok_or_else(|| Error::parse(self.record, "labels", format!("{v} is not a class id")))
            })
            .collect::<Result<Vec<u32>>>()?;
        LabelSet::new(ids).map_err(|e| Error::parse(self.record, "labels", e.to_string()))
    }
}

fn frames_matrix(data: Vec<f64>, frames: usize, record: usize, field: &str) -> Result<Matrix> {
    if frames == 0 {
        return Err(Error::Validation {
            record,
            reason: "video has no frames".into(),
        });
    }
    if !data.len().is_multiple_of(frames) {
        return Err(Error::parse(
            record,
            field,
            format!("{} values do not split into {frames} frames", data.len()),
        ));
    }
    let width = data.len() / frames;
    Matrix::from_vec(frames, width, data)
}

fn parse_header(line: &str) -> Result<(DatasetHeader, usize)> {
    let v: Value = serde_json::from_str(line).map_err(|e| Error::parse(0, "header", format!("invalid JSON: {e}")))?;
    let f = Fields::new(&v, 0).map_err(|_| Error::parse(0, "header", "expected a JSON object"))?;
    let field = |name: &str| {
        f.count(name)
            .map_err(|_| Error::parse(0, &format!("header.{name}"), "expected a non-negative integer"))
    };
    if f.obj.get("format").and_then(Value::as_str) != Some(TEXT_FORMAT) {
        return Err(Error::parse(0, "header.format", format!("expected \"{TEXT_FORMAT}\"")));
    }
    let version = field("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let header = DatasetHeader {
        num_classes: field("num_classes")?,
        frames: field("frames")?,
        visual_dim: field("visual_dim")?,
        audio_dim: field("audio_dim")?,
        train_count: field("train_count")?,
    };
    Ok((header, field("records")?))
}

fn parse_record(line: &str, record: usize) -> Result<FrameExample> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| Error::parse(record, "record", format!("invalid JSON: {e}")))?;
    let f = Fields::new(&v, record)?;
    let frames = f.count("frames")?;
    Ok(FrameExample {
        video_id: f.string("video_id")?.to_string(),
        labels: f.labels()?,
        visual: frames_matrix(f.floats("rgb")?, frames, record, "rgb")?,
        audio: frames_matrix(f.floats("audio")?, frames, record, "audio")?,
        mean_visual: f.floats("mean_rgb")?,
        mean_audio: f.floats("mean_audio")?,
    })
}

/// Parses the text encoding and validates every record against the header.
pub fn read_dataset_text(input: impl BufRead) -> Result<Dataset> {
    let mut lines = input.lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::parse(0, "header", "file is empty")),
    };
    let (header, declared) = parse_header(&header_line)?;
    let mut examples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = examples.len();
        if record == declared {
            return Err(Error::parse(
                record,
                "record",
                format!("header declares {declared} records, file has more"),
            ));
        }
        examples.push(parse_record(&line, record)?);
    }
    if examples.len() < declared {
        return Err(Error::parse(
            examples.len(),
            "record",
            format!("file ends after {} of {declared} records", examples.len()),
        ));
    }
    let dataset = Dataset { header, examples };
    dataset.validate()?;
    Ok(dataset)
}

pub fn encode_dataset_binary(dataset: &Dataset) -> Result<Vec<u8>> {
    let h = &dataset.header;
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        h.num_classes,
        h.frames,
        h.visual_dim,
        h.audio_dim,
        h.train_count,
        dataset.examples.len(),
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for (i, ex) in dataset.examples.iter().enumerate() {
        let id = ex.video_id.as_bytes();
        let id_len = u32::try_from(id.len()).map_err(|_| Error::Validation {
            record: i,
            reason: "video id too long".into(),
        })?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(ex.labels.len() as u32).to_le_bytes());
        for l in ex.labels.iter() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in [ex.num_frames(), ex.visual.cols(), ex.audio.cols()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        if ex.audio.rows() != ex.num_frames() {
            return Err(Error::Validation {
                record: i,
                reason: "visual and audio frame counts differ".into(),
            });
        }
        let values = ex
            .visual
            .as_slice()
            .iter()
            .chain(ex.audio.as_slice())
            .chain(&ex.mean_visual)
            .chain(&ex.mean_audio);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Bounds-checked little-endian reader over an in-memory buffer.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::parse(self.record, field, "unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn count(&mut self, field: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::parse(self.record, field, format!("{v} does not fit in memory")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// `n` floats, refusing counts the remaining bytes cannot hold.
    fn floats(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .filter(|&b| b <= self.remaining())
            .ok_or_else(|| Error::parse(self.record, field, format!("{n} values exceed the remaining data")))?;
        Ok(self
            .take(bytes, field)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn dims(rows: usize, cols: usize, record: usize, field: &str) -> Result<usize> {
    rows.checked_mul(cols)
        .ok_or_else(|| Error::parse(record, field, format!("{rows}x{cols} overflows")))
}

/// Parses the binary encoding and validates every record against the header.
pub fn parse_dataset_binary(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor {
        buf: bytes,
        pos: 0,
        record: 0,
    };
    if c.take(8, "header.magic")? != BINARY_MAGIC {
        return Err(Error::parse(0, "header.magic", "not a binary dataset"));
    }
    let version = c.u32("header.version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header = DatasetHeader {
        num_classes: c.count("header.num_classes")?,
        frames: c.count("header.frames")?,
        visual_dim: c.count("header.visual_dim")?,
        audio_dim: c.count("header.audio_dim")?,
        train_count: c.count("header.train_count")?,
    };
    let declared = c.count("header.records")?;
    let mut examples = Vec::new();
    for record in 0..declared {
        c.record = record;
        let id_len = c.u32("video_id")? as usize;
        let video_id = std::str::from_utf8(c.take(id_len, "video_id")?)
            .map_err(|_| Error::parse(record, "video_id", "not valid UTF-8"))?
            .to_string();
        let n_labels = c.u32("labels")? as usize;
        if n_labels.saturating_mul(4) > c.remaining() {
            return Err(Error::parse(record, "labels", "label count exceeds the remaining data"));
        }
        let ids = (0..n_labels).map(|_| c.u32("labels")).collect::<Result<Vec<_>>>()?;
        let labels = LabelSet::new(ids).map_err(|e| Error::parse(record, "labels", e.to_string()))?;
        let frames = c.count("frames")?;
        let dv = c.count("visual_dim")?;
        let da = c.count("audio_dim")?;
        if frames == 0 {
            return Err(Error::Validation {
                record,
                reason: "video has no frames".into(),
            });
        }
        let visual = c.floats(dims(frames, dv, record, "rgb")?, "rgb")?;
        let audio = c.floats(dims(frames, da, record, "audio")?, "audio")?;
        examples.push(FrameExample {
            video_id,
            labels,
            visual: Matrix::from_vec(frames, dv, visual)?,
            audio: Matrix::from_vec(frames, da, audio)?,
            mean_visual: c.floats(dv, "mean_rgb")?,
            mean_audio: c.floats(da, "mean_audio")?,
        });
    }
    if c.remaining() != 0 {
        return Err(Error::parse(
            declared,
            "record",
            format!("{} trailing bytes after the last record", c.remaining()),
        ));
    }
    let dataset = Dataset { header, examples };
    dataset.validate()?;
    Ok(dataset)
}
