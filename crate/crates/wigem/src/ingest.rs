//! Survey extract parsing, group keying, and structural data completion.
//!
//! The raw extract is delimited text in the long layout: each observation
//! appears as an estimate row and (usually) a standard-error row,
//! distinguished by a measurement column. Parsing filters to
//! percentage-distribution estimates, rescales values from [0, 100] into
//! [0, 1], merges the two measurement rows per observation, and drops the
//! corpus-wide summary occupation.
//!
//! Completion then makes the record set structurally closed: every
//! (occupation, additive group) pair carries one record per catalog level,
//! and groups missing a single estimate have it filled from the sum-to-one
//! constraint.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::MappingTable;

/// Tolerance for a group's known values overshooting 1 before it is treated
/// as data corruption rather than float noise.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("header is missing column '{0}'")]
    MissingColumn(String),
    #[error("line {line}: duplicate {kind} row for ('{occupation}', group {group}, level '{level}')")]
    DuplicateRow { line: u64, kind: &'static str, occupation: String, group: u32, level: String },
    #[error("duplicate record for ('{occupation}', group {group}, level '{level}')")]
    DuplicateRecord { occupation: String, group: u32, level: String },
    #[error("occupation '{occupation}' carries SOC codes '{a}' and '{b}'")]
    InconsistentSoc { occupation: String, a: String, b: String },
    #[error("additive group {0} appears in the data but not in the mapping catalog")]
    UncataloguedGroup(u32),
    #[error("level '{level}' of additive group {group} is not in the mapping catalog")]
    UncataloguedLevel { group: u32, level: String },
    #[error("group ('{occupation}', {group}): known values sum to {sum}, exceeding 1")]
    SumOverflow { occupation: String, group: u32, sum: f64 },
    #[error("record for ('{occupation}', group {group}, level '{level}') violates: {message}")]
    InvalidRecord { occupation: String, group: u32, level: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance of a record's estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    /// Present in the raw extract.
    Observed,
    /// Added by catalog completion; starts with no estimate.
    GeneratedLevel,
    /// Filled from the sum-to-one constraint in an N-1 group.
    NMinusOneFilled,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Observed => "observed",
            Origin::GeneratedLevel => "generated_level",
            Origin::NMinusOneFilled => "n_minus_one_filled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "observed" => Some(Origin::Observed),
            "generated_level" => Some(Origin::GeneratedLevel),
            "n_minus_one_filled" => Some(Origin::NMinusOneFilled),
            _ => None,
        }
    }
}

/// One observation of one level of one occupational group.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub occupation: String,
    pub soc_code: String,
    /// Raw element text (recoverable from `additive_group` via the catalog).
    pub element: String,
    /// Raw level text; unique within an occupational group.
    pub level: String,
    pub additive_group: u32,
    /// Estimate as a fraction in [0, 1]; `None` when missing.
    pub value: Option<f64>,
    /// Standard error as a fraction; `None` when unreported.
    pub std_error: Option<f64>,
    pub origin: Origin,
}

/// Key of an occupational group: all records sharing an occupation and an
/// additive group, whose estimates must sum to one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub occupation: String,
    pub additive_group: u32,
}

/// An occupational group with members in canonical (catalog) level order.
#[derive(Debug, Clone)]
pub struct OccupationalGroup {
    pub key: GroupKey,
    pub members: Vec<SurveyRecord>,
}

impl OccupationalGroup {
    pub fn known_sum(&self) -> f64 {
        self.members.iter().filter_map(|m| m.value).sum()
    }

    /// Remaining mass available to the group's missing members: 1 minus the
    /// sum of known values, clamped to [0, 1].
    pub fn residual(&self) -> f64 {
        (1.0 - self.known_sum()).clamp(0.0, 1.0)
    }

    pub fn missing_count(&self) -> usize {
        self.members.iter().filter(|m| m.value.is_none()).count()
    }
}

/// Column names of the raw extract, configurable because the public file
/// layout drifts independently of the field semantics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct ExtractColumns {
    pub occupation: String,
    pub soc_code: String,
    pub element: String,
    pub level: String,
    pub additive_group: String,
    /// Distinguishes estimate rows from standard-error rows.
    pub measurement: String,
    /// Optional filter column; rows not matching `labels.percent` are dropped.
    pub estimate_type: Option<String>,
    /// Optional filter column; rows not matching `labels.percentage` are dropped.
    pub unit: Option<String>,
    pub value: String,
}

impl Default for ExtractColumns {
    fn default() -> Self {
        ExtractColumns {
            occupation: "occupation_text".to_owned(),
            soc_code: "upper_soc_code".to_owned(),
            element: "data_element_text".to_owned(),
            level: "data_type_text".to_owned(),
            additive_group: "additive_group".to_owned(),
            measurement: "estimate_type_text".to_owned(),
            estimate_type: Some("estimate_type".to_owned()),
            unit: Some("unit_of_measure".to_owned()),
            value: "value".to_owned(),
        }
    }
}

/// Cell values that select and classify rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct ExtractLabels {
    pub estimate: String,
    pub std_error: String,
    pub percent: String,
    pub percentage: String,
    /// Summary occupation dropped from the corpus.
    pub all_workers: String,
}

impl Default for ExtractLabels {
    fn default() -> Self {
        ExtractLabels {
            estimate: "Estimate".to_owned(),
            std_error: "Standard Error".to_owned(),
            percent: "Percent".to_owned(),
            percentage: "Percentage".to_owned(),
            all_workers: "All Workers".to_owned(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct ExtractSchema {
    pub delimiter: char,
    pub columns: ExtractColumns,
    pub labels: ExtractLabels,
}

impl Default for ExtractSchema {
    fn default() -> Self {
        ExtractSchema {
            delimiter: ',',
            columns: ExtractColumns::default(),
            labels: ExtractLabels::default(),
        }
    }
}

/// A row skipped under lenient parsing.
#[derive(Debug, Clone)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

/// Result of parsing a raw extract.
#[derive(Debug)]
pub struct ParseOutcome {
    /// Records sorted by (occupation, additive group, level).
    pub records: Vec<SurveyRecord>,
    /// Row-level problems; empty under strict parsing (they error instead).
    pub issues: Vec<RowIssue>,
}

struct ColumnIndices {
    occupation: usize,
    soc_code: usize,
    element: usize,
    level: usize,
    additive_group: usize,
    measurement: usize,
    estimate_type: Option<usize>,
    unit: Option<usize>,
    value: usize,
}

impl ColumnIndices {
    fn resolve(headers: &csv::StringRecord, cols: &ExtractColumns) -> Result<Self, IngestError> {
        let find = |name: &str| -> Result<usize, IngestError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
        };
        Ok(ColumnIndices {
            occupation: find(&cols.occupation)?,
            soc_code: find(&cols.soc_code)?,
            element: find(&cols.element)?,
            level: find(&cols.level)?,
            additive_group: find(&cols.additive_group)?,
            measurement: find(&cols.measurement)?,
            estimate_type: cols.estimate_type.as_deref().map(find).transpose()?,
            unit: cols.unit.as_deref().map(find).transpose()?,
            value: find(&cols.value)?,
        })
    }
}

#[derive(Default)]
struct PartialRecord {
    soc_code: String,
    element: String,
    value: Option<f64>,
    std_error: Option<f64>,
    has_estimate_row: bool,
    has_error_row: bool,
}

/// Parse a raw extract, failing on the first malformed row.
pub fn parse_survey<R: Read>(reader: R, schema: &ExtractSchema) -> Result<Vec<SurveyRecord>, IngestError> {
    let outcome = parse_survey_inner(reader, schema, false)?;
    Ok(outcome.records)
}

/// Parse a raw extract, skipping malformed rows and reporting them.
pub fn parse_survey_lenient<R: Read>(
    reader: R,
    schema: &ExtractSchema,
) -> Result<ParseOutcome, IngestError> {
    parse_survey_inner(reader, schema, true)
}

fn parse_survey_inner<R: Read>(
    reader: R,
    schema: &ExtractSchema,
    lenient: bool,
) -> Result<ParseOutcome, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(false)
        .from_reader(reader);

    let mut issues = Vec::new();
    let mut partials: BTreeMap<(String, u32, String), PartialRecord> = BTreeMap::new();
    let mut soc_by_occupation: BTreeMap<String, String> = BTreeMap::new();

    // An empty stream has no header row and therefore no records.
    if rdr.headers().map(|h| h.is_empty()).unwrap_or(true) {
        return Ok(ParseOutcome { records: Vec::new(), issues });
    }
    let idx = ColumnIndices::resolve(rdr.headers()?, &schema.columns)?;

    let mut raw = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut raw) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or_default();
                if lenient {
                    issues.push(RowIssue { line, message: e.to_string() });
                    continue;
                }
                return Err(IngestError::Row { line, message: e.to_string() });
            }
        }
        let line = raw.position().map(|p| p.line()).unwrap_or_default();
        match ingest_row(&raw, line, &idx, schema, &mut partials, &mut soc_by_occupation) {
            Ok(()) => {}
            Err(e) if lenient => issues.push(RowIssue { line, message: e.to_string() }),
            Err(e) => return Err(e),
        }
    }

    let records = partials
        .into_iter()
        .map(|((occupation, additive_group, level), p)| SurveyRecord {
            occupation,
            soc_code: p.soc_code,
            element: p.element,
            level,
            additive_group,
            value: p.value,
            std_error: p.std_error,
            origin: Origin::Observed,
        })
        .collect();
    Ok(ParseOutcome { records, issues })
}

fn ingest_row(
    raw: &csv::StringRecord,
    line: u64,
    idx: &ColumnIndices,
    schema: &ExtractSchema,
    partials: &mut BTreeMap<(String, u32, String), PartialRecord>,
    soc_by_occupation: &mut BTreeMap<String, String>,
) -> Result<(), IngestError> {
    let field = |i: usize| raw.get(i).unwrap_or("").trim();
    let row_err = |message: String| IngestError::Row { line, message };

    if let Some(i) = idx.estimate_type {
        if field(i) != schema.labels.percent {
            return Ok(());
        }
    }
    if let Some(i) = idx.unit {
        if field(i) != schema.labels.percentage {
            return Ok(());
        }
    }
    let occupation = field(idx.occupation);
    if occupation == schema.labels.all_workers {
        return Ok(());
    }
    if occupation.is_empty() {
        return Err(row_err("empty occupation".to_owned()));
    }

    let soc_code = field(idx.soc_code).to_owned();
    if !soc_code.chars().all(|c| c.is_ascii_digit()) || soc_code.len() < 3 {
        return Err(row_err(format!("SOC code '{soc_code}' is not a digit string of >= 3 digits")));
    }
    let additive_group: u32 = field(idx.additive_group)
        .parse()
        .map_err(|_| row_err(format!("additive group '{}' is not an integer", field(idx.additive_group))))?;
    let element = field(idx.element).to_owned();
    let level = field(idx.level).to_owned();
    if level.is_empty() {
        return Err(row_err("empty level".to_owned()));
    }

    let value_text = field(idx.value);
    let value = if value_text.is_empty() || value_text == "NA" {
        None
    } else {
        let v: f64 = value_text
            .parse()
            .map_err(|_| row_err(format!("value '{value_text}' is not numeric")))?;
        if !(0.0..=100.0).contains(&v) {
            return Err(row_err(format!("value {v} outside [0, 100] before rescaling")));
        }
        Some(v / 100.0)
    };

    match soc_by_occupation.get(occupation) {
        None => {
            soc_by_occupation.insert(occupation.to_owned(), soc_code.clone());
        }
        Some(existing) if *existing != soc_code => {
            return Err(IngestError::InconsistentSoc {
                occupation: occupation.to_owned(),
                a: existing.clone(),
                b: soc_code,
            });
        }
        Some(_) => {}
    }

    let measurement = field(idx.measurement);
    let entry = partials
        .entry((occupation.to_owned(), additive_group, level.clone()))
        .or_default();
    if entry.element.is_empty() {
        entry.element = element;
        entry.soc_code = soc_code;
    } else if entry.element != element {
        return Err(row_err(format!(
            "level '{level}' of group {additive_group} maps to both element '{}' and '{element}'",
            entry.element
        )));
    }

    if measurement == schema.labels.estimate {
        if entry.has_estimate_row {
            return Err(IngestError::DuplicateRow {
                line,
                kind: "estimate",
                occupation: occupation.to_owned(),
                group: additive_group,
                level,
            });
        }
        entry.has_estimate_row = true;
        entry.value = value;
    } else if measurement == schema.labels.std_error {
        if entry.has_error_row {
            return Err(IngestError::DuplicateRow {
                line,
                kind: "standard-error",
                occupation: occupation.to_owned(),
                group: additive_group,
                level,
            });
        }
        entry.has_error_row = true;
        entry.std_error = value;
    } else {
        return Err(row_err(format!("unknown measurement kind '{measurement}'")));
    }
    Ok(())
}

/// Expand the record set to the full cross product of observed occupations
/// and catalog additive groups, one record per catalog level. Added records
/// get [`Origin::GeneratedLevel`] and no estimate.
pub fn complete_groups(
    records: &[SurveyRecord],
    catalog: &MappingTable,
) -> Result<Vec<SurveyRecord>, IngestError> {
    let mut soc_by_occupation: BTreeMap<&str, &str> = BTreeMap::new();
    for r in records {
        match soc_by_occupation.get(r.occupation.as_str()) {
            None => {
                soc_by_occupation.insert(&r.occupation, &r.soc_code);
            }
            Some(existing) if *existing != r.soc_code => {
                return Err(IngestError::InconsistentSoc {
                    occupation: r.occupation.clone(),
                    a: (*existing).to_owned(),
                    b: r.soc_code.clone(),
                });
            }
            Some(_) => {}
        }
    }

    let mut by_key: BTreeMap<(&str, u32, &str), &SurveyRecord> = BTreeMap::new();
    for r in records {
        let cat = catalog
            .group(r.additive_group)
            .ok_or(IngestError::UncataloguedGroup(r.additive_group))?;
        if !cat.levels.iter().any(|l| l == &r.level) {
            return Err(IngestError::UncataloguedLevel {
                group: r.additive_group,
                level: r.level.clone(),
            });
        }
        if by_key.insert((&r.occupation, r.additive_group, &r.level), r).is_some() {
            return Err(IngestError::DuplicateRecord {
                occupation: r.occupation.clone(),
                group: r.additive_group,
                level: r.level.clone(),
            });
        }
    }

    let mut out = Vec::new();
    for (&occupation, &soc_code) in &soc_by_occupation {
        for cat in catalog.groups() {
            for level in &cat.levels {
                match by_key.get(&(occupation, cat.additive_group, level.as_str())) {
                    Some(r) => out.push((*r).clone()),
                    None => out.push(SurveyRecord {
                        occupation: occupation.to_owned(),
                        soc_code: soc_code.to_owned(),
                        element: cat.element.clone(),
                        level: level.clone(),
                        additive_group: cat.additive_group,
                        value: None,
                        std_error: None,
                        origin: Origin::GeneratedLevel,
                    }),
                }
            }
        }
    }
    Ok(out)
}

/// Group completed records into occupational groups in canonical order:
/// occupation ascending, additive group ascending, members in catalog level
/// order.
pub fn group_records(
    records: &[SurveyRecord],
    catalog: &MappingTable,
) -> Result<Vec<OccupationalGroup>, IngestError> {
    let mut grouped: BTreeMap<GroupKey, Vec<SurveyRecord>> = BTreeMap::new();
    for r in records {
        if catalog.level_order(r.additive_group, &r.level).is_none() {
            return Err(IngestError::UncataloguedLevel {
                group: r.additive_group,
                level: r.level.clone(),
            });
        }
        grouped
            .entry(GroupKey {
                occupation: r.occupation.clone(),
                additive_group: r.additive_group,
            })
            .or_default()
            .push(r.clone());
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (key, mut members) in grouped {
        members.sort_by_key(|m| catalog.level_order(m.additive_group, &m.level).unwrap());
        for pair in members.windows(2) {
            if pair[0].level == pair[1].level {
                return Err(IngestError::DuplicateRecord {
                    occupation: key.occupation.clone(),
                    group: key.additive_group,
                    level: pair[0].level.clone(),
                });
            }
        }
        out.push(OccupationalGroup { key, members });
    }
    Ok(out)
}

/// Fill groups that miss exactly one estimate with `max(0, 1 - known_sum)`.
/// Groups with two or more missing estimates are untouched.
pub fn complete_n_minus_1(
    mut groups: Vec<OccupationalGroup>,
) -> Result<Vec<OccupationalGroup>, IngestError> {
    for group in &mut groups {
        let known_sum = group.known_sum();
        if known_sum > 1.0 + SUM_TOLERANCE {
            return Err(IngestError::SumOverflow {
                occupation: group.key.occupation.clone(),
                group: group.key.additive_group,
                sum: known_sum,
            });
        }
        if group.missing_count() == 1 {
            let member = group.members.iter_mut().find(|m| m.value.is_none()).unwrap();
            member.value = Some((1.0 - known_sum).max(0.0));
            member.origin = Origin::NMinusOneFilled;
        }
    }
    Ok(groups)
}

/// Flatten groups back into the canonical record order.
pub fn flatten_groups(groups: Vec<OccupationalGroup>) -> Vec<SurveyRecord> {
    groups.into_iter().flat_map(|g| g.members).collect()
}

/// Parse + catalog completion + N-1 completion in one step.
pub fn complete_corpus(
    records: &[SurveyRecord],
    catalog: &MappingTable,
) -> Result<Vec<SurveyRecord>, IngestError> {
    let completed = complete_groups(records, catalog)?;
    let groups = group_records(&completed, catalog)?;
    Ok(flatten_groups(complete_n_minus_1(groups)?))
}

/// Validate the invariants every record must satisfy.
pub fn validate_records(records: &[SurveyRecord]) -> Result<(), IngestError> {
    for r in records {
        let fail = |message: String| IngestError::InvalidRecord {
            occupation: r.occupation.clone(),
            group: r.additive_group,
            level: r.level.clone(),
            message,
        };
        if let Some(v) = r.value {
            if !(0.0..=1.0).contains(&v) {
                return Err(fail(format!("value {v} outside [0, 1]")));
            }
        }
        if let Some(s) = r.std_error {
            if !(s >= 0.0) {
                return Err(fail(format!("standard error {s} is negative")));
            }
        }
        if r.origin == Origin::NMinusOneFilled && r.value.is_none() {
            return Err(fail("n-1 filled record without a value".to_owned()));
        }
    }
    Ok(())
}

/// Corpus-level tallies used for summaries and full-extract checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Census {
    pub occupations: usize,
    pub additive_groups: usize,
    pub groups: usize,
    pub known_estimates: usize,
    pub missing_estimates: usize,
    /// Sum of known values divided by the group count (each group carries
    /// total mass 1).
    pub known_mass_fraction: f64,
}

pub fn census(groups: &[OccupationalGroup]) -> Census {
    let mut occupations = std::collections::BTreeSet::new();
    let mut additive_groups = std::collections::BTreeSet::new();
    let mut known = 0usize;
    let mut missing = 0usize;
    let mut known_mass = 0.0f64;
    for g in groups {
        occupations.insert(&g.key.occupation);
        additive_groups.insert(g.key.additive_group);
        for m in &g.members {
            match m.value {
                Some(v) => {
                    known += 1;
                    known_mass += v;
                }
                None => missing += 1,
            }
        }
    }
    Census {
        occupations: occupations.len(),
        additive_groups: additive_groups.len(),
        groups: groups.len(),
        known_estimates: known,
        missing_estimates: missing,
        known_mass_fraction: if groups.is_empty() { 0.0 } else { known_mass / groups.len() as f64 },
    }
}

pub const CANONICAL_HEADER: [&str; 7] =
    ["occupation", "soc_code", "additive_group", "level", "value", "std_error", "origin"];

/// Write records as the canonical delimited file. Absent values are empty
/// fields. Values round-trip exactly (shortest representation), since group
/// sums downstream are held to a 1e-9 tolerance that digit-truncation would
/// eat through.
pub fn write_records<W: Write>(writer: W, records: &[SurveyRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CANONICAL_HEADER)?;
    for r in records {
        w.write_record(&[
            r.occupation.as_str(),
            r.soc_code.as_str(),
            &r.additive_group.to_string(),
            r.level.as_str(),
            &r.value.map(|v| v.to_string()).unwrap_or_default(),
            &r.std_error.map(|v| v.to_string()).unwrap_or_default(),
            r.origin.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a canonical records file, resolving element text via the catalog.
pub fn read_records<R: Read>(
    reader: R,
    catalog: &MappingTable,
) -> Result<Vec<SurveyRecord>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
    };
    let cols: Vec<usize> = CANONICAL_HEADER.iter().map(|n| col(n)).collect::<Result<_, _>>()?;

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or_default();
        let field = |i: usize| row.get(cols[i]).unwrap_or("").trim();
        let row_err = |message: String| IngestError::Row { line, message };

        let additive_group: u32 = field(2)
            .parse()
            .map_err(|_| row_err(format!("additive group '{}' is not an integer", field(2))))?;
        let element = catalog
            .group(additive_group)
            .ok_or(IngestError::UncataloguedGroup(additive_group))?
            .element
            .clone();
        let parse_opt = |text: &str| -> Result<Option<f64>, IngestError> {
            if text.is_empty() {
                Ok(None)
            } else {
                text.parse()
                    .map(Some)
                    .map_err(|_| row_err(format!("value '{text}' is not numeric")))
            }
        };
        let origin = Origin::parse(field(6))
            .ok_or_else(|| row_err(format!("unknown origin '{}'", field(6))))?;
        out.push(SurveyRecord {
            occupation: field(0).to_owned(),
            soc_code: field(1).to_owned(),
            element,
            level: field(3).to_owned(),
            additive_group,
            value: parse_opt(field(4))?,
            std_error: parse_opt(field(5))?,
            origin,
        });
    }
    validate_records(&out)?;
    Ok(out)
}
