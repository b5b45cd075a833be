//! Feature cache: a versioned JSON-lines file. The first line is a header
//! naming the codebook fingerprint; each further line holds one image's 72
//! blocks as (part, channel, aggregation, dim, values).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BodyPart;

use super::{Aggregation, BodyFeatures, Channel, FeatureBlock};

pub const FEATURE_CACHE_FORMAT: &str = "trendscope-features";
const FEATURE_CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    codebook: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockLine {
    part: BodyPart,
    channel: Channel,
    aggregation: Aggregation,
    dim: usize,
    empty: bool,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    codebook: String,
    blocks: Vec<BlockLine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: String,
    pub features: BodyFeatures,
}

pub fn write_cache(path: &Path, codebook_fingerprint: &str, entries: &[CacheEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut emit = |value: String| -> Result<()> {
        out.write_all(value.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    emit(serde_json::to_string(&Header {
        format: FEATURE_CACHE_FORMAT.into(),
        version: FEATURE_CACHE_VERSION,
        codebook: codebook_fingerprint.into(),
    })?)?;
    for entry in entries {
        if entry.features.codebook_fingerprint != codebook_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: codebook_fingerprint.into(),
                found: entry.features.codebook_fingerprint.clone(),
            });
        }
        let line = RecordLine {
            id: entry.id.clone(),
            codebook: codebook_fingerprint.into(),
            blocks: entry
                .features
                .blocks
                .iter()
                .map(|b| BlockLine {
                    part: b.part,
                    channel: b.channel,
                    aggregation: b.aggregation,
                    dim: b.histogram.len(),
                    empty: b.empty,
                    values: b.histogram.clone(),
                })
                .collect(),
        };
        emit(serde_json::to_string(&line)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a cache. Returns `Ok(None)` when the cache was built with a different
/// codebook (pass `None` to accept any).
pub fn read_cache(path: &Path, expected_codebook: Option<&str>) -> Result<Option<Vec<CacheEntry>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, message: String| Error::Parse {
        context: path.display().to_string(),
        line,
        message,
    };

    let header_text = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&header_text).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != FEATURE_CACHE_FORMAT || header.version != FEATURE_CACHE_VERSION {
        return Err(Error::Format(format!("{} v{}", header.format, header.version)));
    }
    if let Some(expected) = expected_codebook {
        if header.codebook != expected {
            return Ok(None);
        }
    }

    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e.to_string()))?;
        if rec.codebook != header.codebook {
            return Err(parse_err(i + 2, "record codebook differs from header".into()));
        }
        let mut blocks = Vec::with_capacity(rec.blocks.len());
        for b in rec.blocks {
            if b.dim != b.values.len() {
                return Err(parse_err(i + 2, format!("block dim {} but {} values", b.dim, b.values.len())));
            }
            blocks.push(FeatureBlock {
                part: b.part,
                channel: b.channel,
                aggregation: b.aggregation,
                histogram: b.values,
                empty: b.empty,
            });
        }
        let features = BodyFeatures::new(rec.codebook, blocks)
            .map_err(|e| parse_err(i + 2, e.to_string()))?;
        entries.push(CacheEntry { id: rec.id, features });
    }
    Ok(Some(entries))
}
