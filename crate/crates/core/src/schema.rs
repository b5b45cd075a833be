//! Attribute taxonomy.
//!
//! A schema is an ordered list of binary clothing attributes. Index positions
//! are what classifiers, CRF tables and prevalence tables key on, so the order
//! in the schema file is significant.
//!
//! Schema files are line oriented:
//!
//! ```text
//! # comment
//! version = default-60-v1
//! id=striped_upper; name=Striped (upper body); category=pattern_upper; classic=false
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_SCHEMA: &str = include_str!("../data/default_schema.txt");
const UNVERSIONED: &str = "unversioned";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ColorUpper,
    ColorLower,
    PatternUpper,
    PatternLower,
    Style,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ColorUpper,
        Category::ColorLower,
        Category::PatternUpper,
        Category::PatternLower,
        Category::Style,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ColorUpper => "color_upper",
            Category::ColorLower => "color_lower",
            Category::PatternUpper => "pattern_upper",
            Category::PatternLower => "pattern_lower",
            Category::Style => "style",
        }
    }

    /// The coarse grouping used for trend correlations: upper and lower body
    /// halves are pooled for color and pattern.
    pub fn group(self) -> CategoryGroup {
        match self {
            Category::ColorUpper | Category::ColorLower => CategoryGroup::Color,
            Category::PatternUpper | Category::PatternLower => CategoryGroup::Pattern,
            Category::Style => CategoryGroup::Style,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryGroup {
    Style,
    Pattern,
    Color,
}

impl CategoryGroup {
    pub const ALL: [CategoryGroup; 3] = [
        CategoryGroup::Style,
        CategoryGroup::Pattern,
        CategoryGroup::Color,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryGroup::Style => "style",
            CategoryGroup::Pattern => "pattern",
            CategoryGroup::Color => "color",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: String,
    pub display_name: String,
    pub category: Category,
    /// Classic attributes dominate every year and are left out of delta analysis.
    pub classic: bool,
}

#[derive(Debug, Clone)]
pub struct AttributeSchema {
    version: String,
    attributes: Vec<Attribute>,
    index: HashMap<String, usize>,
}

impl PartialEq for AttributeSchema {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.attributes == other.attributes
    }
}

impl Eq for AttributeSchema {}

impl AttributeSchema {
    /// Builds a schema from attributes in index order, validating ids, names
    /// and the version string.
    pub fn new(version: impl Into<String>, attributes: Vec<Attribute>) -> Result<Self> {
        let version = version.into();
        check_text_field("version", &version)?;
        if attributes.is_empty() {
            return Err(Error::EmptySchema);
        }
        let mut index = HashMap::with_capacity(attributes.len());
        for (i, attr) in attributes.iter().enumerate() {
            check_id(&attr.id)?;
            check_text_field("name", &attr.display_name)?;
            if index.insert(attr.id.clone(), i).is_some() {
                return Err(Error::DuplicateAttribute(attr.id.clone()));
            }
        }
        Ok(AttributeSchema {
            version,
            attributes,
            index,
        })
    }

    /// The bundled 60-attribute schema.
    pub fn default_schema() -> Self {
        load_schema(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Attribute> {
        self.index_of(id).map(|i| &self.attributes[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.id.as_str())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("# trendscope attribute schema\n");
        out.push_str(&format!("version = {}\n", self.version));
        for a in &self.attributes {
            out.push_str(&format!(
                "id={}; name={}; category={}; classic={}\n",
                a.id, a.display_name, a.category, a.classic
            ));
        }
        out
    }
}

/// Parses schema text. Attribute indices follow file order.
pub fn load_schema(source: &str) -> Result<AttributeSchema> {
    let mut version: Option<String> = None;
    let mut attributes = Vec::new();

    for (lineno, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            context: "schema".into(),
            line: lineno + 1,
            message,
        };

        if !line.contains(';') {
            if let Some((key, value)) = line.split_once('=') {
                if key.trim() == "version" {
                    if version.is_some() {
                        return Err(err("version declared twice".into()));
                    }
                    version = Some(value.trim().to_string());
                    continue;
                }
            }
        }

        let mut id = None;
        let mut name = None;
        let mut category = None;
        let mut classic = None;
        for field in line.split(';') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{field}`")))?;
            let value = value.trim().to_string();
            let slot = match key.trim() {
                "id" => &mut id,
                "name" => &mut name,
                "category" => &mut category,
                "classic" => &mut classic,
                other => return Err(err(format!("unknown field `{other}`"))),
            };
            if slot.replace(value).is_some() {
                return Err(err(format!("field `{}` repeated", key.trim())));
            }
        }

        let id = id.ok_or_else(|| err("missing `id`".into()))?;
        let category: Category = category
            .ok_or_else(|| err("missing `category`".into()))?
            .parse()?;
        let classic = match classic.as_deref() {
            None | Some("false") | Some("0") => false,
            Some("true") | Some("1") => true,
            Some(other) => return Err(err(format!("classic must be true/false, found `{other}`"))),
        };
        let display_name = name.unwrap_or_else(|| id.clone());
        attributes.push(Attribute {
            id,
            display_name,
            category,
            classic,
        });
    }

    AttributeSchema::new(version.unwrap_or_else(|| UNVERSIONED.to_string()), attributes)
}

/// Ids of the attributes flagged classic.
pub fn classic_ids(schema: &AttributeSchema) -> BTreeSet<String> {
    schema
        .attributes()
        .iter()
        .filter(|a| a.classic)
        .map(|a| a.id.clone())
        .collect()
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "attribute id `{id}` must be non-empty and use [A-Za-z0-9_.-]"
        )))
    }
}

fn check_text_field(what: &str, value: &str) -> Result<()> {
    if value.is_empty()
        || value.trim() != value
        || value.contains([';', '\n', '\r'])
    {
        return Err(Error::InvalidParameter(format!(
            "{what} `{value}` must be non-empty, trimmed, and free of ';' and newlines"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schema_has_sixty_attributes_in_five_categories() {
        let schema = AttributeSchema::default_schema();
        assert_eq!(schema.len(), 60);
        let cats: BTreeSet<_> = schema.attributes().iter().map(|a| a.category).collect();
        assert_eq!(cats.len(), 5);
        for id in ["collar", "necktie", "pants", "skirt", "belt", "accessories", "placket"] {
            assert!(schema.get(id).is_some(), "{id} missing");
        }
    }

    #[test]
    fn default_classics() {
        let classics = classic_ids(&AttributeSchema::default_schema());
        for id in [
            "black_upper",
            "white_upper",
            "gray_upper",
            "black_lower",
            "white_lower",
            "gray_lower",
            "solid_upper",
            "solid_lower",
            "skirt",
        ] {
            assert!(classics.contains(id), "{id} should be classic");
        }
        assert_eq!(classics.len(), 9);
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = "id=striped_upper; category=pattern_upper\nid=striped_upper; category=pattern_upper\n";
        assert!(matches!(
            load_schema(text),
            Err(Error::DuplicateAttribute(id)) if id == "striped_upper"
        ));
    }

    #[test]
    fn single_attribute_schema() {
        let s = load_schema("id=hat; name=Hat; category=style; classic=false").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.index_of("hat"), Some(0));
        assert_eq!(s.version(), UNVERSIONED);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(load_schema(""), Err(Error::EmptySchema)));
        assert!(matches!(load_schema("# only a comment\n"), Err(Error::EmptySchema)));
        assert!(matches!(
            load_schema("id=x; category=shoes"),
            Err(Error::UnknownCategory(_))
        ));
        assert!(matches!(
            load_schema("id=x; category=style; colour=red"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(load_schema("id=x; category=style; classic=maybe").is_err());
        assert!(load_schema("name=x; category=style").is_err());
    }

    #[test]
    fn classic_flag_extremes() {
        let none = load_schema("id=a; category=style\nid=b; category=style").unwrap();
        assert!(classic_ids(&none).is_empty());
        let all = load_schema("id=a; category=style; classic=true\nid=b; category=style; classic=1").unwrap();
        assert_eq!(classic_ids(&all).len(), 2);
    }

    fn arb_attribute() -> impl Strategy<Value = Attribute> {
        (
            "[a-z][a-z0-9_]{0,12}",
            "[A-Za-z][A-Za-z0-9 ()#=-]{0,20}[a-z]",
            0usize..5,
            any::<bool>(),
        )
            .prop_map(|(id, display_name, cat, classic)| Attribute {
                id,
                display_name,
                category: Category::ALL[cat],
                classic,
            })
    }

    proptest! {
        #[test]
        fn serialize_round_trip(
            version in "[a-z0-9][a-z0-9.-]{0,10}",
            attrs in proptest::collection::vec(arb_attribute(), 1..20),
        ) {
            let mut seen = BTreeSet::new();
            let attrs: Vec<_> = attrs.into_iter().filter(|a| seen.insert(a.id.clone())).collect();
            let schema = AttributeSchema::new(version, attrs).unwrap();
            let back = load_schema(&schema.serialize()).unwrap();
            prop_assert_eq!(&back, &schema);
            let classics = classic_ids(&back);
            for a in back.attributes() {
                prop_assert_eq!(classics.contains(&a.id), a.classic);
            }
        }
    }
}
