use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, validation, Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// The thirteen video attributes of the long-term benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttributeLabel {
    /// Background clutter.
    BC,
    /// Deformation.
    DEF,
    /// Motion blur.
    MB,
    /// Fast motion: per-frame centroid displacement above 20 px.
    FM,
    /// Low resolution: mean box/image area ratio below 0.1.
    LR,
    /// Occlusion.
    OCC,
    /// Out of view.
    OV,
    /// Scale variation: some pair of box areas with ratio outside [0.5, 2].
    SV,
    /// Dynamic background.
    DB,
    /// Shape complexity.
    SC,
    /// Appearance change.
    AC,
    /// Long-term reappearance after at least 100 invisible frames.
    LRA,
    /// Cross-temporal confusion: look-alikes that never co-occur with the target.
    CTC,
}

impl AttributeLabel {
    pub const ALL: [AttributeLabel; 13] = [
        Self::BC,
        Self::DEF,
        Self::MB,
        Self::FM,
        Self::LR,
        Self::OCC,
        Self::OV,
        Self::SV,
        Self::DB,
        Self::SC,
        Self::AC,
        Self::LRA,
        Self::CTC,
    ];

    /// Attributes computed from groundtruth masks.
    pub const QUANTITATIVE: [AttributeLabel; 5] = [Self::FM, Self::LR, Self::SV, Self::OV, Self::LRA];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BC => "BC",
            Self::DEF => "DEF",
            Self::MB => "MB",
            Self::FM => "FM",
            Self::LR => "LR",
            Self::OCC => "OCC",
            Self::OV => "OV",
            Self::SV => "SV",
            Self::DB => "DB",
            Self::SC => "SC",
            Self::AC => "AC",
            Self::LRA => "LRA",
            Self::CTC => "CTC",
        }
    }
}

impl fmt::Display for AttributeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| validation(format!("unknown attribute {s:?}")))
    }
}

impl TryFrom<String> for AttributeLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AttributeLabel> for String {
    fn from(a: AttributeLabel) -> String {
        a.as_str().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(validation(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Objects carry ids `1..=objects`.
    pub objects: u16,
    #[serde(default)]
    pub attributes: BTreeSet<AttributeLabel>,
}

impl ManifestEntry {
    pub fn object_ids(&self) -> BTreeSet<u16> {
        (1..=self.objects).collect()
    }
}

/// One split's list of sequences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub split: Split,
    pub sequences: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(split: Split, sequences: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { schema_version: MANIFEST_SCHEMA_VERSION, split, sequences };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(validation(format!(
                "manifest schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.sequences {
            if !seen.insert(e.id.as_str()) {
                return Err(validation(format!("duplicate sequence id {:?}", e.id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Json(j) => format_err(path, j.to_string()),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.sequences.iter().find(|e| e.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
  "schema_version": 1,
  "split": "valid",
  "sequences": [
    {"id": "long-lra-000", "objects": 1, "attributes": ["LRA", "OV"]},
    {"id": "short-easy-003", "objects": 2}
  ]
}"#;

    #[test]
    fn parses_example_and_round_trips() {
        let m = DatasetManifest::parse(EXAMPLE).unwrap();
        assert_eq!(m.split, Split::Valid);
        assert_eq!(m.sequences[0].attributes, BTreeSet::from([AttributeLabel::OV, AttributeLabel::LRA]));
        assert!(m.sequences[1].attributes.is_empty());
        let again = DatasetManifest::parse(&m.to_json()).unwrap();
        assert_eq!(again, m);
        assert_eq!(again.to_json(), m.to_json());
    }

    #[test]
    fn rejects_unknown_attribute_and_duplicates() {
        let bad = EXAMPLE.replace("\"LRA\"", "\"XYZ\"");
        assert!(DatasetManifest::parse(&bad).is_err());
        let dup = EXAMPLE.replace("short-easy-003", "long-lra-000");
        assert!(matches!(DatasetManifest::parse(&dup), Err(Error::Validation(_))));
        let version = EXAMPLE.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(DatasetManifest::parse(&version).is_err());
    }

    #[test]
    fn exactly_thirteen_attributes() {
        assert_eq!(AttributeLabel::ALL.len(), 13);
        for a in AttributeLabel::ALL {
            assert_eq!(a.as_str().parse::<AttributeLabel>().unwrap(), a);
        }
        assert!("FOO".parse::<AttributeLabel>().is_err());
    }
}
