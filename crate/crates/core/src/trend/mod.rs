//! Attribute prevalence, year-over-year deltas and show/street correlations.

mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Source;
use crate::schema::{AttributeSchema, Category, CategoryGroup};

pub use report::{render_svg, write_report, ReportFiles};

pub const PREVALENCE_FORMAT: &str = "trendscope-prevalence";
const PREVALENCE_VERSION: u32 = 1;

/// Default `|delta|` above which a change counts for sign agreement.
pub const DEFAULT_SIGN_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CorpusTag {
    pub source: Source,
    pub year: i32,
}

impl std::fmt::Display for CorpusTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.source, self.year)
    }
}

/// Fraction of images in one tagged corpus decided positive for each
/// attribute, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub tag: CorpusTag,
    pub schema_version: String,
    pub attribute_ids: Vec<String>,
    pub fractions: Vec<f64>,
    pub images: usize,
}

impl PrevalenceTable {
    pub fn fraction(&self, attribute_id: &str) -> Option<f64> {
        self.attribute_ids
            .iter()
            .position(|a| a == attribute_id)
            .map(|i| self.fractions[i])
    }

    fn check_schema(&self, schema: &AttributeSchema) -> Result<()> {
        let same = self.schema_version == schema.version()
            && self.attribute_ids.len() == schema.len()
            && self.attribute_ids.iter().zip(schema.ids()).all(|(a, b)| a == b);
        if !same {
            return Err(Error::SchemaMismatch(format!(
                "prevalence table {} was computed under schema `{}`, not `{}`",
                self.tag,
                self.schema_version,
                schema.version()
            )));
        }
        Ok(())
    }
}

/// Per-attribute positive fractions over a set of decision vectors.
pub fn prevalence(decisions: &[Vec<bool>], tag: CorpusTag, schema: &AttributeSchema) -> Result<PrevalenceTable> {
    if decisions.is_empty() {
        return Err(Error::Empty(format!("no images tagged {tag}")));
    }
    let n = schema.len();
    let mut positives = vec![0usize; n];
    for row in decisions {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: row.len(),
            });
        }
        for (p, &d) in positives.iter_mut().zip(row) {
            *p += usize::from(d);
        }
    }
    Ok(PrevalenceTable {
        tag,
        schema_version: schema.version().to_string(),
        attribute_ids: schema.ids().map(str::to_string).collect(),
        fractions: positives.iter().map(|&p| p as f64 / decisions.len() as f64).collect(),
        images: decisions.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendDelta {
    pub attribute_id: String,
    pub delta: f64,
}

/// `p2 - p1` per attribute, in schema order, optionally without the classic
/// attributes.
pub fn deltas(
    p1: &PrevalenceTable,
    p2: &PrevalenceTable,
    schema: &AttributeSchema,
    exclude_classic: bool,
) -> Result<Vec<TrendDelta>> {
    p1.check_schema(schema)?;
    p2.check_schema(schema)?;
    Ok(schema
        .attributes()
        .iter()
        .enumerate()
        .filter(|(_, a)| !(exclude_classic && a.classic))
        .map(|(i, a)| TrendDelta {
            attribute_id: a.id.clone(),
            delta: p2.fractions[i] - p1.fractions[i],
        })
        .collect())
}

/// Sample Pearson correlation; `None` when either vector is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientExamples(format!(
            "correlation needs at least 2 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite value in correlation input".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Ok(None);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignAgreement {
    /// Both corpora moved the same way by more than the threshold.
    PositivelyCorrelated,
    /// Both moved by more than the threshold, in opposite directions.
    Divergent,
    Neutral,
}

impl SignAgreement {
    pub fn classify(show: f64, street: f64, threshold: f64) -> Self {
        if show.abs() <= threshold || street.abs() <= threshold {
            SignAgreement::Neutral
        } else if (show > 0.0) == (street > 0.0) {
            SignAgreement::PositivelyCorrelated
        } else {
            SignAgreement::Divergent
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignAgreement::PositivelyCorrelated => "positively_correlated",
            SignAgreement::Divergent => "divergent",
            SignAgreement::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationStatus {
    Defined,
    /// One of the delta vectors is constant.
    UndefinedConstant,
    /// Fewer than two attributes in scope.
    UndefinedTooFew,
}

impl CorrelationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationStatus::Defined => "defined",
            CorrelationStatus::UndefinedConstant => "undefined_constant",
            CorrelationStatus::UndefinedTooFew => "undefined_too_few",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub r: Option<f64>,
    pub status: CorrelationStatus,
}

impl Correlation {
    fn of(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Ok(Correlation {
                n,
                r: None,
                status: CorrelationStatus::UndefinedTooFew,
            });
        }
        let r = pearson(xs, ys)?;
        Ok(Correlation {
            n,
            r,
            status: if r.is_some() {
                CorrelationStatus::Defined
            } else {
                CorrelationStatus::UndefinedConstant
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub category: Category,
    pub attribute_id: String,
    pub display_name: String,
    pub show_delta: f64,
    pub street_delta: f64,
    pub sign_agreement: SignAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTrend {
    pub group: CategoryGroup,
    /// Non-classic attributes of the group, in schema order.
    pub rows: Vec<TrendRow>,
    /// Correlation over all rows of the group.
    pub correlation: Correlation,
    /// Per body-half correlations for the pooled groups.
    pub halves: Vec<(Category, Correlation)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub schema_version: String,
    pub show: [CorpusTag; 2],
    pub street: [CorpusTag; 2],
    pub sign_threshold: f64,
    pub categories: Vec<CategoryTrend>,
}

impl TrendReport {
    pub fn category(&self, group: CategoryGroup) -> &CategoryTrend {
        self.categories
            .iter()
            .find(|c| c.group == group)
            .expect("every report carries all three groups")
    }
}

/// Compares show and street year-over-year deltas per category group, with
/// classic attributes excluded.
pub fn build_report(
    show1: &PrevalenceTable,
    show2: &PrevalenceTable,
    street1: &PrevalenceTable,
    street2: &PrevalenceTable,
    schema: &AttributeSchema,
    sign_threshold: f64,
) -> Result<TrendReport> {
    if !(sign_threshold >= 0.0 && sign_threshold.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sign threshold must be non-negative, got {sign_threshold}"
        )));
    }
    let show = deltas(show1, show2, schema, true)?;
    let street = deltas(street1, street2, schema, true)?;

    let mut categories = Vec::new();
    for group in CategoryGroup::ALL {
        let rows: Vec<TrendRow> = show
            .iter()
            .zip(&street)
            .filter_map(|(s, t)| {
                let attr = schema.get(&s.attribute_id).expect("deltas follow the schema");
                (attr.category.group() == group).then(|| TrendRow {
                    category: attr.category,
                    attribute_id: attr.id.clone(),
                    display_name: attr.display_name.clone(),
                    show_delta: s.delta,
                    street_delta: t.delta,
                    sign_agreement: SignAgreement::classify(s.delta, t.delta, sign_threshold),
                })
            })
            .collect();
        let corr = |pred: &dyn Fn(&TrendRow) -> bool| -> Result<Correlation> {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| pred(r))
                .map(|r| (r.show_delta, r.street_delta))
                .unzip();
            Correlation::of(&xs, &ys)
        };
        let correlation = corr(&|_| true)?;
        let halves = Category::ALL
            .into_iter()
            .filter(|c| c.group() == group && *c != Category::Style)
            .map(|c| Ok((c, corr(&|r: &TrendRow| r.category == c)?)))
            .collect::<Result<Vec<_>>>()?;
        categories.push(CategoryTrend {
            group,
            rows,
            correlation,
            halves,
        });
    }
    Ok(TrendReport {
        schema_version: schema.version().to_string(),
        show: [show1.tag, show2.tag],
        street: [street1.tag, street2.tag],
        sign_threshold,
        categories,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrevalenceFile {
    format: String,
    version: u32,
    tables: Vec<PrevalenceTable>,
}

pub fn write_prevalence(path: &Path, tables: &[PrevalenceTable]) -> Result<()> {
    let text = serde_json::to_string_pretty(&PrevalenceFile {
        format: PREVALENCE_FORMAT.into(),
        version: PREVALENCE_VERSION,
        tables: tables.to_vec(),
    })? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_prevalence(path: &Path) -> Result<Vec<PrevalenceTable>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PrevalenceFile = serde_json::from_str(&text)?;
    if file.format != PREVALENCE_FORMAT || file.version != PREVALENCE_VERSION {
        return Err(Error::Format(format!("{} v{}", file.format, file.version)));
    }
    for t in &file.tables {
        if t.fractions.len() != t.attribute_ids.len() || t.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Format(format!("malformed prevalence table {}", t.tag)));
        }
    }
    Ok(file.tables)
}
