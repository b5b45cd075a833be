//! Corpus manifests, body-part regions and corpus statistics.
//!
//! A manifest is a UTF-8 file with one JSON object per line:
//!
//! ```text
//! {"id":"s14-001","path":"img/s14-001.png","source":"street_chic","year":2014,"month":5,
//!  "regions":[[30,20,40,80],...nine boxes...],"labels":{"skirt":1,"belt":0}}
//! ```
//!
//! Fields: `id`, `path` (relative to the manifest directory), `source`
//! (`fashion_show` | `street_chic`), `year`, optional `month` (1-12), optional
//! `regions` (nine `[x, y, width, height]` boxes in canonical part order),
//! optional `labels` (attribute id to 0/1), optional `width`/`height` in pixels.
//! Unknown fields are rejected. Records without regions are segmented with
//! [`default_part_regions`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::AttributeSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Torso,
    UpperLeftArm,
    UpperRightArm,
    LowerLeftArm,
    LowerRightArm,
    UpperLeftLeg,
    UpperRightLeg,
    LowerLeftLeg,
    LowerRightLeg,
}

impl BodyPart {
    /// Canonical part order used by manifests and feature blocks.
    pub const ALL: [BodyPart; 9] = [
        BodyPart::Torso,
        BodyPart::UpperLeftArm,
        BodyPart::UpperRightArm,
        BodyPart::LowerLeftArm,
        BodyPart::LowerRightArm,
        BodyPart::UpperLeftLeg,
        BodyPart::UpperRightLeg,
        BodyPart::LowerLeftLeg,
        BodyPart::LowerRightLeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BodyPart::Torso => "torso",
            BodyPart::UpperLeftArm => "upper_left_arm",
            BodyPart::UpperRightArm => "upper_right_arm",
            BodyPart::LowerLeftArm => "lower_left_arm",
            BodyPart::LowerRightArm => "lower_right_arm",
            BodyPart::UpperLeftLeg => "upper_left_leg",
            BodyPart::UpperRightLeg => "upper_right_leg",
            BodyPart::LowerLeftLeg => "lower_left_leg",
            BodyPart::LowerRightLeg => "lower_right_leg",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRegion {
    pub part: BodyPart,
    pub rect: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    FashionShow,
    StreetChic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::FashionShow => "fashion_show",
            Source::StreetChic => "street_chic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fashion_show" => Ok(Source::FashionShow),
            "street_chic" => Ok(Source::StreetChic),
            other => Err(Error::InvalidParameter(format!("unknown source `{other}`"))),
        }
    }
}

/// How a record obtained its part regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segmentation {
    Annotated([PartRegion; 9]),
    /// No annotation; the fixed grid is applied once the image size is known.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub source: Source,
    pub year: i32,
    pub month: Option<u8>,
    pub size: Option<(u32, u32)>,
    pub segmentation: Segmentation,
    pub labels: Option<BTreeMap<String, bool>>,
}

impl ImageRecord {
    pub fn is_fallback_segmented(&self) -> bool {
        matches!(self.segmentation, Segmentation::Fallback)
    }

    /// The nine part regions for an image of the given size.
    pub fn regions_for(&self, width: u32, height: u32) -> Result<[PartRegion; 9]> {
        match &self.segmentation {
            Segmentation::Annotated(regions) => {
                for r in regions {
                    if !r.rect.fits_within(width, height) {
                        return Err(Error::RegionOutOfBounds {
                            x: r.rect.x,
                            y: r.rect.y,
                            width: r.rect.width,
                            height: r.rect.height,
                            raster_width: width,
                            raster_height: height,
                        });
                    }
                }
                Ok(*regions)
            }
            Segmentation::Fallback => default_part_regions(width, height),
        }
    }

    /// Label vector in schema order; `None` entries are unlabeled attributes.
    pub fn label_vector(&self, schema: &AttributeSchema) -> Option<Vec<Option<bool>>> {
        let labels = self.labels.as_ref()?;
        Some(schema.ids().map(|id| labels.get(id).copied()).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<ImageRecord>,
    pub schema_version: String,
}

impl Corpus {
    pub fn new(records: Vec<ImageRecord>, schema: &AttributeSchema) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateImage(r.id.clone()));
            }
            if let Some(labels) = &r.labels {
                if let Some(bad) = labels.keys().find(|k| schema.index_of(k).is_none()) {
                    return Err(Error::InvalidRecord {
                        id: r.id.clone(),
                        message: Error::UnknownAttribute(bad.clone()).to_string(),
                    });
                }
            }
        }
        Ok(Corpus {
            records,
            schema_version: schema.version().to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ManifestLine {
    pub id: String,
    pub path: String,
    pub source: Source,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<[u32; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, u8>>,
}

/// Reads and validates a manifest file. Relative image paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: &Path, schema: &AttributeSchema) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base, schema)
}

pub fn parse_manifest(text: &str, base_dir: &Path, schema: &AttributeSchema) -> Result<Corpus> {
    let mut records = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            context: "manifest".into(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record_from_line(parsed, base_dir, schema)?);
    }
    Corpus::new(records, schema)
}

fn record_from_line(
    line: ManifestLine,
    base_dir: &Path,
    schema: &AttributeSchema,
) -> Result<ImageRecord> {
    let invalid = |message: String| Error::InvalidRecord {
        id: line.id.clone(),
        message,
    };
    if line.id.is_empty() {
        return Err(Error::InvalidRecord {
            id: String::new(),
            message: "empty id".into(),
        });
    }
    if let Some(m) = line.month {
        if !(1..=12).contains(&m) {
            return Err(invalid(format!("month {m} outside 1-12")));
        }
    }
    let size = match (line.width, line.height) {
        (Some(w), Some(h)) if w > 0 && h > 0 => Some((w, h)),
        (None, None) => None,
        _ => return Err(invalid("width and height must both be given and positive".into())),
    };

    let path = base_dir.join(&line.path);
    let segmentation = match &line.regions {
        Some(boxes) => {
            if boxes.len() != 9 {
                return Err(invalid(format!("expected 9 regions, found {}", boxes.len())));
            }
            let mut regions = [PartRegion {
                part: BodyPart::Torso,
                rect: Rect::new(0, 0, 1, 1),
            }; 9];
            for (slot, (part, b)) in regions.iter_mut().zip(BodyPart::ALL.into_iter().zip(boxes)) {
                let rect = Rect::new(b[0], b[1], b[2], b[3]);
                if rect.width == 0 || rect.height == 0 {
                    return Err(invalid(format!("region {part} has zero extent")));
                }
                if let Some((w, h)) = size {
                    if !rect.fits_within(w, h) {
                        return Err(invalid(format!("region {part} exceeds the {w}x{h} image")));
                    }
                }
                *slot = PartRegion { part, rect };
            }
            Segmentation::Annotated(regions)
        }
        None => Segmentation::Fallback,
    };

    let labels = match line.labels {
        Some(map) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                if schema.index_of(&k).is_none() {
                    return Err(invalid(format!("unknown attribute id `{k}` in labels")));
                }
                let present = match v {
                    0 => false,
                    1 => true,
                    other => return Err(invalid(format!("label `{k}` must be 0 or 1, found {other}"))),
                };
                out.insert(k, present);
            }
            Some(out)
        }
        None => None,
    };

    Ok(ImageRecord {
        id: line.id,
        path,
        source: line.source,
        year: line.year,
        month: line.month,
        size,
        segmentation,
        labels,
    })
}

/// Serializes a corpus back to manifest lines. Paths are written relative to
/// `base_dir` when possible.
pub fn write_manifest(corpus: &Corpus, base_dir: &Path) -> Result<String> {
    let mut out = String::new();
    for r in &corpus.records {
        let rel = r.path.strip_prefix(base_dir).unwrap_or(&r.path);
        let line = ManifestLine {
            id: r.id.clone(),
            path: rel.to_string_lossy().into_owned(),
            source: r.source,
            year: r.year,
            month: r.month,
            width: r.size.map(|s| s.0),
            height: r.size.map(|s| s.1),
            regions: match &r.segmentation {
                Segmentation::Annotated(regions) => Some(
                    regions
                        .iter()
                        .map(|p| [p.rect.x, p.rect.y, p.rect.width, p.rect.height])
                        .collect(),
                ),
                Segmentation::Fallback => None,
            },
            labels: r
                .labels
                .as_ref()
                .map(|m| m.iter().map(|(k, v)| (k.clone(), u8::from(*v))).collect()),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Record counts keyed by (source, year).
pub fn corpus_stats(corpus: &Corpus) -> BTreeMap<(Source, i32), usize> {
    let mut table = BTreeMap::new();
    for r in &corpus.records {
        *table.entry((r.source, r.year)).or_insert(0) += 1;
    }
    table
}

// Fixed-grid fallback fractions, as (numerator, denominator) of the image size.
const COL_LEFT_BAND: (u32, u32) = (3, 10);
const COL_MID: (u32, u32) = (1, 2);
const COL_RIGHT_BAND: (u32, u32) = (7, 10);
const ROW_TOP: (u32, u32) = (1, 10);
const ROW_ARM_SPLIT: (u32, u32) = (3, 10);
const ROW_WAIST: (u32, u32) = (1, 2);
const ROW_KNEE: (u32, u32) = (3, 4);

fn frac(len: u32, f: (u32, u32)) -> u32 {
    (u64::from(len) * u64::from(f.0) / u64::from(f.1)) as u32
}

/// Fixed-grid body decomposition used when no pose annotation is available.
///
/// The torso spans columns 30-70% and rows 10-50%. The arms fill the flanking
/// 30% columns over the same rows, split at row 30% into upper and lower. The
/// legs fill rows 50-100% of the torso columns, split at the vertical centre
/// line into left and right and at row 75% into upper and lower. "Left" is the
/// image left. Degenerate boxes are clamped to at least one pixel.
pub fn default_part_regions(width: u32, height: u32) -> Result<[PartRegion; 9]> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let c0 = 0;
    let c1 = frac(width, COL_LEFT_BAND);
    let c2 = frac(width, COL_MID);
    let c3 = frac(width, COL_RIGHT_BAND);
    let c4 = width;
    let r1 = frac(height, ROW_TOP);
    let r2 = frac(height, ROW_ARM_SPLIT);
    let r3 = frac(height, ROW_WAIST);
    let r4 = frac(height, ROW_KNEE);
    let r5 = height;

    let span = |lo: u32, hi: u32, limit: u32| -> (u32, u32) {
        let start = lo.min(limit - 1);
        let len = hi.saturating_sub(lo).max(1).min(limit - start);
        (start, len)
    };
    let make = |part, (x0, x1), (y0, y1)| {
        let (x, w) = span(x0, x1, width);
        let (y, h) = span(y0, y1, height);
        PartRegion {
            part,
            rect: Rect::new(x, y, w, h),
        }
    };

    Ok([
        make(BodyPart::Torso, (c1, c3), (r1, r3)),
        make(BodyPart::UpperLeftArm, (c0, c1), (r1, r2)),
        make(BodyPart::UpperRightArm, (c3, c4), (r1, r2)),
        make(BodyPart::LowerLeftArm, (c0, c1), (r2, r3)),
        make(BodyPart::LowerRightArm, (c3, c4), (r2, r3)),
        make(BodyPart::UpperLeftLeg, (c1, c2), (r3, r4)),
        make(BodyPart::UpperRightLeg, (c2, c3), (r3, r4)),
        make(BodyPart::LowerLeftLeg, (c1, c2), (r4, r5)),
        make(BodyPart::LowerRightLeg, (c2, c3), (r4, r5)),
    ])
}
