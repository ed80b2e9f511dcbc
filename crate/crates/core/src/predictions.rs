//! Prediction CSV: header `VideoId,LabelConfidencePairs`, then one row per
//! video of the form `id,label conf label conf ...` with confidences in
//! descending order printed to six decimals.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::PredictionSet;

pub const HEADER: &str = "VideoId,LabelConfidencePairs";

pub fn write_predictions(preds: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    format_predictions(preds, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn format_predictions(preds: &PredictionSet, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for (record, (id, list)) in preds.iter().enumerate() {
        if id.is_empty() || id.contains([',', '\n', '\r']) {
            return Err(Error::Validation {
                record,
                reason: format!("video id {id:?} cannot be written to CSV"),
            });
        }
        write!(out, "{id},")?;
        for (i, (class, conf)) in list.iter().enumerate() {
            if i > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{class} {conf:.6}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    parse_predictions(&fs::read_to_string(path)?)
}

/// Inverse of [`format_predictions`]. Row indices in errors count data rows
/// from zero.
pub fn parse_predictions(text: &str) -> Result<PredictionSet> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    match lines.next() {
        Some(HEADER) => {}
        _ => return Err(Error::parse(0, "header", format!("expected `{HEADER}`"))),
    }
    let mut preds = PredictionSet::new();
    for (record, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let (id, pairs) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(record, "VideoId", "missing `,` separator"))?;
        if id.is_empty() {
            return Err(Error::parse(record, "VideoId", "empty video id"));
        }
        if preds.get(id).is_some() {
            return Err(Error::parse(record, "VideoId", format!("duplicate video id {id:?}")));
        }
        let tokens: Vec<&str> = pairs.split_whitespace().collect();
        if !tokens.len().is_multiple_of(2) {
            return Err(Error::parse(record, "LabelConfidencePairs", "odd number of tokens"));
        }
        let list = tokens
            .chunks_exact(2)
            .map(|pair| {
                let class: u32 = pair[0]
                    .parse()
                    .map_err(|_| Error::parse(record, "label", format!("{:?} is not a class id", pair[0])))?;
                let conf: f64 = pair[1].parse().ok().filter(|c: &f64| c.is_finite()).ok_or_else(|| {
                    Error::parse(record, "confidence", format!("{:?} is not a finite number", pair[1]))
                })?;
                Ok((class, conf))
            })
            .collect::<Result<Vec<_>>>()?;
        preds
            .insert(id, list)
            .map_err(|e| Error::parse(record, "LabelConfidencePairs", e.to_string()))?;
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(p: &PredictionSet) -> String {
        let mut out = Vec::new();
        format_predictions(p, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn row_format() {
        let mut p = PredictionSet::new();
        p.insert("v1", vec![(3, 0.5), (7, 0.9)]).unwrap();
        p.insert("v2", vec![]).unwrap();
        assert_eq!(
            render(&p),
            "VideoId,LabelConfidencePairs\nv1,7 0.900000 3 0.500000\nv2,\n"
        );
    }

    #[test]
    fn roundtrip_of_six_decimal_values() {
        let mut p = PredictionSet::new();
        p.insert("a", vec![(0, 0.123456), (4, 0.999999), (2, 0.0)]).unwrap();
        p.insert("b", vec![(1, 1.0)]).unwrap();
        assert_eq!(parse_predictions(&render(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_unwritable_ids() {
        let mut p = PredictionSet::new();
        p.insert("a,b", vec![]).unwrap();
        assert!(format_predictions(&p, &mut Vec::new()).is_err());
    }

    #[test]
    fn parse_errors() {
        let bad = |body: &str| parse_predictions(&format!("{HEADER}\n{body}\n")).unwrap_err();
        assert!(parse_predictions("nope\n").is_err());
        assert!(parse_predictions("").is_err());
        assert!(matches!(bad("v1"), Error::Parse { field, .. } if field == "VideoId"));
        assert!(matches!(bad("v1,3"), Error::Parse { field, .. } if field == "LabelConfidencePairs"));
        assert!(matches!(bad("v1,x 0.5"), Error::Parse { field, .. } if field == "label"));
        assert!(matches!(bad("v1,1 nan"), Error::Parse { field, .. } if field == "confidence"));
        assert!(matches!(bad("v1,1 0.5\nv1,2 0.5"), Error::Parse { record: 1, .. }));
        assert!(matches!(bad("v1,1 0.5 1 0.4"), Error::Parse { .. }));
    }

    #[test]
    fn crlf_accepted() {
        let p = parse_predictions("VideoId,LabelConfidencePairs\r\nv,1 0.500000\r\n").unwrap();
        assert_eq!(p.get("v").unwrap(), &[(1, 0.5)]);
    }
}
