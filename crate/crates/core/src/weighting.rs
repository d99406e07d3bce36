//! Weight factors per item and per-release predictive variables.
//!
//! An item's weight is `sign · story_points · impact_factor`. A release's PV
//! is the sum of its items' weights and the CPV of release `k` is the sum of
//! PVs of releases `1..=k`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{tokenize, NbModel, TokenStream};
use crate::error::{Error, Result};
use crate::model::{BacklogItem, Dataset, Kind, Severity, Sign, StoryPoints};

/// Severity label to numeric impact factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct ImpactTable {
    factors: [f64; 4],
}

impl Default for ImpactTable {
    fn default() -> Self {
        ImpactTable {
            factors: [1.0, 0.75, 0.5, 0.25],
        }
    }
}

impl ImpactTable {
    pub fn factor(&self, severity: Severity) -> f64 {
        self.factors[severity.index()]
    }

    pub fn impact_factor_of(&self, label: &str) -> Result<f64> {
        Ok(self.factor(Severity::parse(label)?))
    }

    /// Loads overrides from `{"Critical": 1, "Minor": 0.1, ...}`. Labels
    /// not mentioned keep their default factor.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
        ImpactTable::try_from(map)
    }
}

impl TryFrom<BTreeMap<String, f64>> for ImpactTable {
    type Error = Error;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self> {
        let mut table = ImpactTable::default();
        for (label, factor) in map {
            let severity = Severity::parse(&label)?;
            if !(factor.is_finite() && factor >= 0.0) {
                return Err(Error::invalid(label, "impact factor must be non-negative"));
            }
            table.factors[severity.index()] = factor;
        }
        Ok(table)
    }
}

impl From<ImpactTable> for BTreeMap<String, f64> {
    fn from(table: ImpactTable) -> Self {
        Severity::ALL
            .into_iter()
            .map(|s| (s.to_string(), table.factor(s)))
            .collect()
    }
}

/// Factor for one of the four built-in impact scales.
pub fn impact_factor_of(label: &str) -> Result<f64> {
    ImpactTable::default().impact_factor_of(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactScale {
    pub scale: Severity,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedItem {
    pub item_id: String,
    pub kind: Kind,
    pub severity: Severity,
    pub story_points: StoryPoints,
    pub impact_factor: f64,
    pub sign: Sign,
    pub weight: f64,
}

impl WeightedItem {
    pub fn new(
        item_id: impl Into<String>,
        kind: Kind,
        severity: Severity,
        story_points: StoryPoints,
        table: &ImpactTable,
        sign: Sign,
    ) -> Self {
        let impact_factor = table.factor(severity);
        WeightedItem {
            item_id: item_id.into(),
            kind,
            severity,
            story_points,
            impact_factor,
            sign,
            weight: sign.value() * story_points.value() as f64 * impact_factor,
        }
    }
}

/// Optional models used to fill in missing severity or story points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimators {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<NbModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_points: Option<NbModel>,
}

/// Maps a document to a story-point size with a classifier trained on the
/// labels `"1"`, `"2"`, `"3"`, `"5"`, `"8"`.
pub fn estimate_story_point(doc: &TokenStream, model: &NbModel) -> Result<StoryPoints> {
    model.validate()?;
    let label = model.classify(doc).label;
    let value: i64 = label
        .parse()
        .map_err(|_| Error::UnknownLabel(format!("story-point class `{label}`")))?;
    StoryPoints::new(value)
}

pub fn estimate_severity(doc: &TokenStream, model: &NbModel) -> Result<Severity> {
    model.validate()?;
    Severity::parse(&model.classify(doc).label)
}

/// Resolves severity and story points (explicit values win over
/// estimators) and computes the item's weight.
pub fn weigh_item(
    item: &BacklogItem,
    table: &ImpactTable,
    estimators: &Estimators,
) -> Result<WeightedItem> {
    let mut doc = None;
    let mut tokens = || doc.get_or_insert_with(|| tokenize(&item.text())).clone();
    let severity = match (item.severity, &estimators.severity) {
        (Some(s), _) => s,
        (None, Some(model)) => estimate_severity(&tokens(), model)?,
        (None, None) => {
            return Err(Error::MissingAttribute {
                item: item.id.clone(),
                field: "severity",
            })
        }
    };
    let story_points = match (item.story_points, &estimators.story_points) {
        (Some(sp), _) => sp,
        (None, Some(model)) => estimate_story_point(&tokens(), model)?,
        (None, None) => {
            return Err(Error::MissingAttribute {
                item: item.id.clone(),
                field: "story_points",
            })
        }
    };
    Ok(WeightedItem::new(
        item.id.clone(),
        item.kind,
        severity,
        story_points,
        table,
        item.sign,
    ))
}

pub fn release_pv<'a, I>(items: I) -> f64
where
    I: IntoIterator<Item = &'a WeightedItem>,
{
    items.into_iter().fold(0.0, |acc, i| acc + i.weight)
}

pub fn cumulate_cpv(pvs: &[f64]) -> Vec<f64> {
    pvs.iter()
        .scan(0.0, |acc, pv| {
            *acc += pv;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseWeights {
    pub version: String,
    pub pv: f64,
    pub cpv: f64,
}

/// Weighs every item of every release in the dataset, in version order.
pub fn weigh_releases(
    dataset: &Dataset,
    table: &ImpactTable,
    estimators: &Estimators,
) -> Result<Vec<(ReleaseWeights, Vec<WeightedItem>)>> {
    let mut weighted = Vec::with_capacity(dataset.releases().len());
    for release in dataset.releases() {
        let items = dataset
            .release_items(release)
            .into_iter()
            .map(|i| weigh_item(i, table, estimators))
            .collect::<Result<Vec<_>>>()?;
        weighted.push((release.version.to_string(), items));
    }
    let pvs: Vec<f64> = weighted
        .iter()
        .map(|(_, items)| release_pv(items))
        .collect();
    let cpvs = cumulate_cpv(&pvs);
    Ok(weighted
        .into_iter()
        .zip(pvs.into_iter().zip(cpvs))
        .map(|((version, items), (pv, cpv))| (ReleaseWeights { version, pv, cpv }, items))
        .collect())
}

pub fn weights_to_csv(rows: &[ReleaseWeights]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["version", "pv", "cpv"])?;
    for r in rows {
        w.write_record([r.version.clone(), r.pv.to_string(), r.cpv.to_string()])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}
