//! Requirement mapping and predictor encoding.
//!
//! A [`MappingTable`] translates raw (element, level) text pairs into the
//! model predictors: a reorganized requirement name, numeric frequency and
//! intensity, and a requirement category. The same table doubles as the
//! level catalog used for structural group completion, so the level order
//! of each additive group is the order of its entries in the config file.

use std::collections::HashMap;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SurveyRecord;
use crate::regressor::{FeatureFrame, FeatureKind};

/// Mapping config excerpt for the Lifting/carrying requirement, shipped as a
/// built-in fixture.
const LIFTING_CARRYING_TOML: &str = include_str!("../fixtures/lifting_carrying.toml");

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("failed to read mapping config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse mapping config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("entry {index}: {field} = {value} outside [0, 100]")]
    ValueOutOfRange { index: usize, field: &'static str, value: f64 },
    #[error("duplicate mapping entry for element '{element}', level '{level}'")]
    DuplicatePair { element: String, level: String },
    #[error("duplicate level '{level}' within additive group {group}")]
    DuplicateLevel { group: u32, level: String },
    #[error("additive group {group} maps to both element '{a}' and element '{b}'")]
    InconsistentElement { group: u32, a: String, b: String },
    #[error("additive group {group} maps to both requirement '{a}' and requirement '{b}'")]
    InconsistentRequirement { group: u32, a: String, b: String },
    #[error("no mapping entry for element '{element}', level '{level}'")]
    UnmappedPair { element: String, level: String },
    #[error("no mapping entry for additive group {group}, level '{level}'")]
    UnmappedLevel { group: u32, level: String },
    #[error("SOC code '{0}' is shorter than 3 digits")]
    ShortSocCode(String),
    #[error("SOC code '{0}' contains non-digit characters")]
    NonDigitSocCode(String),
    #[error("unknown {kind} '{value}' absent from the fitted encoder")]
    UnknownCategory { kind: &'static str, value: String },
}

/// The four requirement categories carried by the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReqCategory {
    #[serde(rename = "COG")]
    Cog,
    #[serde(rename = "EDU")]
    Edu,
    #[serde(rename = "ENV")]
    Env,
    #[serde(rename = "PHY")]
    Phy,
}

impl ReqCategory {
    pub fn code(self) -> u32 {
        match self {
            ReqCategory::Cog => 0,
            ReqCategory::Edu => 1,
            ReqCategory::Env => 2,
            ReqCategory::Phy => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReqCategory::Cog => "COG",
            ReqCategory::Edu => "EDU",
            ReqCategory::Env => "ENV",
            ReqCategory::Phy => "PHY",
        }
    }
}

impl fmt::Display for ReqCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (element, level) row of the mapping config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingEntry {
    pub element: String,
    pub level: String,
    pub additive_group: u32,
    pub requirement: String,
    pub frequency: f64,
    pub intensity: f64,
    pub category: ReqCategory,
}

#[derive(Debug, Deserialize)]
struct MappingFile {
    #[serde(rename = "entry")]
    entries: Vec<MappingEntry>,
}

/// Per-additive-group view of the catalog: the element text, requirement
/// name, category, and the ordered level list.
#[derive(Debug, Clone)]
pub struct GroupCatalog {
    pub additive_group: u32,
    pub element: String,
    pub requirement: String,
    pub category: ReqCategory,
    /// Levels in config order; this order is the canonical level order.
    pub levels: Vec<String>,
}

/// Validated requirement mapping, indexed by (element, level) and by
/// (additive group, level).
#[derive(Debug, Clone)]
pub struct MappingTable {
    entries: Vec<MappingEntry>,
    by_pair: HashMap<(String, String), usize>,
    by_group_level: HashMap<(u32, String), usize>,
    groups: BTreeMap<u32, GroupCatalog>,
}

impl MappingTable {
    pub fn from_entries(entries: Vec<MappingEntry>) -> Result<Self, MappingError> {
        let mut by_pair = HashMap::new();
        let mut by_group_level = HashMap::new();
        let mut groups: BTreeMap<u32, GroupCatalog> = BTreeMap::new();

        for (index, e) in entries.iter().enumerate() {
            for (field, value) in [("frequency", e.frequency), ("intensity", e.intensity)] {
                if !(0.0..=100.0).contains(&value) {
                    return Err(MappingError::ValueOutOfRange { index, field, value });
                }
            }
            if by_pair
                .insert((e.element.clone(), e.level.clone()), index)
                .is_some()
            {
                return Err(MappingError::DuplicatePair {
                    element: e.element.clone(),
                    level: e.level.clone(),
                });
            }
            if by_group_level
                .insert((e.additive_group, e.level.clone()), index)
                .is_some()
            {
                return Err(MappingError::DuplicateLevel {
                    group: e.additive_group,
                    level: e.level.clone(),
                });
            }
            match groups.get_mut(&e.additive_group) {
                None => {
                    groups.insert(
                        e.additive_group,
                        GroupCatalog {
                            additive_group: e.additive_group,
                            element: e.element.clone(),
                            requirement: e.requirement.clone(),
                            category: e.category,
                            levels: vec![e.level.clone()],
                        },
                    );
                }
                Some(g) => {
                    if g.element != e.element {
                        return Err(MappingError::InconsistentElement {
                            group: e.additive_group,
                            a: g.element.clone(),
                            b: e.element.clone(),
                        });
                    }
                    if g.requirement != e.requirement {
                        return Err(MappingError::InconsistentRequirement {
                            group: e.additive_group,
                            a: g.requirement.clone(),
                            b: e.requirement.clone(),
                        });
                    }
                    g.levels.push(e.level.clone());
                }
            }
        }

        Ok(MappingTable { entries, by_pair, by_group_level, groups })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, MappingError> {
        let file: MappingFile = toml::from_str(s)?;
        Self::from_entries(file.entries)
    }

    pub fn load(path: &Path) -> Result<Self, MappingError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The built-in Lifting/carrying excerpt (23 entries across four
    /// additive groups).
    pub fn lifting_carrying_fixture() -> Self {
        Self::from_toml_str(LIFTING_CARRYING_TOML).expect("built-in fixture is valid")
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    pub fn lookup(&self, element: &str, level: &str) -> Result<&MappingEntry, MappingError> {
        self.by_pair
            .get(&(element.to_owned(), level.to_owned()))
            .map(|&i| &self.entries[i])
            .ok_or_else(|| MappingError::UnmappedPair {
                element: element.to_owned(),
                level: level.to_owned(),
            })
    }

    pub fn lookup_group(&self, group: u32, level: &str) -> Result<&MappingEntry, MappingError> {
        self.by_group_level
            .get(&(group, level.to_owned()))
            .map(|&i| &self.entries[i])
            .ok_or_else(|| MappingError::UnmappedLevel { group, level: level.to_owned() })
    }

    pub fn group(&self, group: u32) -> Option<&GroupCatalog> {
        self.groups.get(&group)
    }

    /// Additive groups in ascending id order.
    pub fn groups(&self) -> impl Iterator<Item = &GroupCatalog> {
        self.groups.values()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Index of `level` within its group's canonical level order.
    pub fn level_order(&self, group: u32, level: &str) -> Option<usize> {
        self.groups
            .get(&group)
            .and_then(|g| g.levels.iter().position(|l| l == level))
    }

    /// Number of distinct requirement names after reorganization.
    pub fn distinct_requirements(&self) -> usize {
        self.groups
            .values()
            .map(|g| g.requirement.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Split a SOC code into its 2- and 3-digit prefixes.
pub fn soc_prefixes(soc_code: &str) -> Result<(&str, &str), MappingError> {
    if !soc_code.chars().all(|c| c.is_ascii_digit()) {
        return Err(MappingError::NonDigitSocCode(soc_code.to_owned()));
    }
    if soc_code.len() < 3 {
        return Err(MappingError::ShortSocCode(soc_code.to_owned()));
    }
    Ok((&soc_code[..2], &soc_code[..3]))
}

/// Model predictors for one record, before categorical encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures<'a> {
    pub occupation: &'a str,
    pub requirement: &'a str,
    pub frequency: f64,
    pub intensity: f64,
    pub soc2: &'a str,
    pub soc3: &'a str,
    pub category: ReqCategory,
}

/// Look up the predictors for one record without encoding.
pub fn raw_features<'a>(
    record: &'a SurveyRecord,
    table: &'a MappingTable,
) -> Result<RawFeatures<'a>, MappingError> {
    let entry = table.lookup(&record.element, &record.level)?;
    let (soc2, soc3) = soc_prefixes(&record.soc_code)?;
    Ok(RawFeatures {
        occupation: &record.occupation,
        requirement: &entry.requirement,
        frequency: entry.frequency,
        intensity: entry.intensity,
        soc2,
        soc3,
        category: entry.category,
    })
}

/// Integer-encoded predictor vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub occupation: u32,
    pub requirement: u32,
    pub frequency: f64,
    pub intensity: f64,
    pub soc2: u32,
    pub soc3: u32,
    pub category: u32,
}

/// Persistable categorical dictionaries. Ids are indices into the sorted
/// value lists, so the encoding is reproducible from the corpus alone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureEncoder {
    occupations: Vec<String>,
    requirements: Vec<String>,
    soc2: Vec<String>,
    soc3: Vec<String>,
}

/// Column layout of the encoded feature frame.
pub const FEATURE_COLUMNS: [(&str, FeatureKind); 7] = [
    ("occupation", FeatureKind::Categorical),
    ("requirement", FeatureKind::Categorical),
    ("frequency", FeatureKind::Numeric),
    ("intensity", FeatureKind::Numeric),
    ("soc2", FeatureKind::Categorical),
    ("soc3", FeatureKind::Categorical),
    ("category", FeatureKind::Categorical),
];

impl FeatureEncoder {
    /// Build dictionaries from a corpus. Every record must be mappable.
    pub fn fit(records: &[SurveyRecord], table: &MappingTable) -> Result<Self, MappingError> {
        let mut occupations = BTreeSet::new();
        let mut requirements = BTreeSet::new();
        let mut soc2 = BTreeSet::new();
        let mut soc3 = BTreeSet::new();
        for r in records {
            let f = raw_features(r, table)?;
            occupations.insert(f.occupation.to_owned());
            requirements.insert(f.requirement.to_owned());
            soc2.insert(f.soc2.to_owned());
            soc3.insert(f.soc3.to_owned());
        }
        Ok(FeatureEncoder {
            occupations: occupations.into_iter().collect(),
            requirements: requirements.into_iter().collect(),
            soc2: soc2.into_iter().collect(),
            soc3: soc3.into_iter().collect(),
        })
    }

    fn code_of(list: &[String], value: &str, kind: &'static str) -> Result<u32, MappingError> {
        list.binary_search_by(|v| v.as_str().cmp(value))
            .map(|i| i as u32)
            .map_err(|_| MappingError::UnknownCategory { kind, value: value.to_owned() })
    }

    /// Encode one record. The dictionaries are closed: unseen values error.
    pub fn transform(
        &self,
        record: &SurveyRecord,
        table: &MappingTable,
    ) -> Result<FeatureVector, MappingError> {
        let f = raw_features(record, table)?;
        Ok(FeatureVector {
            occupation: Self::code_of(&self.occupations, f.occupation, "occupation")?,
            requirement: Self::code_of(&self.requirements, f.requirement, "requirement")?,
            frequency: f.frequency,
            intensity: f.intensity,
            soc2: Self::code_of(&self.soc2, f.soc2, "soc2")?,
            soc3: Self::code_of(&self.soc3, f.soc3, "soc3")?,
            category: f.category.code(),
        })
    }

    /// Encode a whole corpus into the regressor's frame layout.
    pub fn frame(
        &self,
        records: &[SurveyRecord],
        table: &MappingTable,
    ) -> Result<FeatureFrame, MappingError> {
        let mut values = Vec::with_capacity(records.len() * FEATURE_COLUMNS.len());
        for r in records {
            let v = self.transform(r, table)?;
            values.extend_from_slice(&[
                v.occupation as f64,
                v.requirement as f64,
                v.frequency,
                v.intensity,
                v.soc2 as f64,
                v.soc3 as f64,
                v.category as f64,
            ]);
        }
        let (names, kinds): (Vec<_>, Vec<_>) = FEATURE_COLUMNS
            .iter()
            .map(|(n, k)| ((*n).to_owned(), *k))
            .unzip();
        Ok(FeatureFrame::new(names, kinds, values).expect("encoded frame is well formed"))
    }

    pub fn occupation_count(&self) -> usize {
        self.occupations.len()
    }

    pub fn soc2_count(&self) -> usize {
        self.soc2.len()
    }

    pub fn soc3_count(&self) -> usize {
        self.soc3.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoder serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}
