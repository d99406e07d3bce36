//! Canonical data model: backlog items, environments, releases and the
//! validated [`Dataset`] that ties them together.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a backlog entry reports a defect or requests new behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Fault,
    Enhancement,
}

impl Kind {
    pub const ALL: [Kind; 2] = [Kind::Fault, Kind::Enhancement];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Fault => "fault",
            Kind::Enhancement => "enhancement",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "fault" => Ok(Kind::Fault),
            "enhancement" => Ok(Kind::Enhancement),
            _ => Err(Error::UnknownLabel(label.to_string())),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Impact scale of an item on response time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Critical,
    Major,
    Medium,
    Minor,
}

impl Severity {
    pub const ALL: [Severity; 4] = [
        Severity::Critical,
        Severity::Major,
        Severity::Medium,
        Severity::Minor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "Critical",
            Severity::Major => "Major",
            Severity::Medium => "Medium",
            Severity::Minor => "Minor",
        }
    }

    /// Case-insensitive label lookup.
    pub fn parse(label: &str) -> Result<Self> {
        Severity::ALL
            .into_iter()
            .find(|s| s.as_str().eq_ignore_ascii_case(label.trim()))
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A story-point size on the Fibonacci scale {1, 2, 3, 5, 8}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct StoryPoints(u8);

impl StoryPoints {
    pub const SCALE: [u8; 5] = [1, 2, 3, 5, 8];

    pub fn new(value: i64) -> Result<Self> {
        match u8::try_from(value) {
            Ok(v) if Self::SCALE.contains(&v) => Ok(StoryPoints(v)),
            _ => Err(Error::InvalidStoryPoints(value)),
        }
    }

    pub fn all() -> impl Iterator<Item = StoryPoints> {
        Self::SCALE.into_iter().map(StoryPoints)
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for StoryPoints {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        StoryPoints::new(value)
    }
}

impl From<StoryPoints> for i64 {
    fn from(sp: StoryPoints) -> i64 {
        sp.0 as i64
    }
}

impl fmt::Display for StoryPoints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Direction of an item's effect on response time. `Negative` marks
/// performance-improving work such as optimizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Sign {
    #[default]
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    fn is_positive(&self) -> bool {
        *self == Sign::Positive
    }
}

impl TryFrom<i64> for Sign {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        match value {
            1 => Ok(Sign::Positive),
            -1 => Ok(Sign::Negative),
            other => Err(Error::invalid("sign", format!("{other} is not +1 or -1"))),
        }
    }
}

impl From<Sign> for i64 {
    fn from(s: Sign) -> i64 {
        match s {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }
}

/// One fault report or enhancement request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacklogItem {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_points: Option<StoryPoints>,
    #[serde(default, skip_serializing_if = "Sign::is_positive")]
    pub sign: Sign,
}

impl BacklogItem {
    /// Title and description joined, the input to text classification.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum OsBits {
    Bits32,
    Bits64,
}

impl TryFrom<u32> for OsBits {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            32 => Ok(OsBits::Bits32),
            64 => Ok(OsBits::Bits64),
            other => Err(Error::invalid(
                "os_bits",
                format!("{other} is not 32 or 64"),
            )),
        }
    }
}

impl From<OsBits> for u32 {
    fn from(bits: OsBits) -> u32 {
        match bits {
            OsBits::Bits32 => 32,
            OsBits::Bits64 => 64,
        }
    }
}

/// Hardware and OS the measurements were taken on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub os_bits: OsBits,
    pub clock_ghz: f64,
    pub ram_gb: f64,
    pub disk_gb: f64,
}

impl EnvironmentSpec {
    /// The reference test bed: 64-bit OS on a 1.8 GHz host.
    pub fn reference() -> Self {
        EnvironmentSpec {
            os_bits: OsBits::Bits64,
            clock_ghz: 1.8,
            ram_gb: 8.0,
            disk_gb: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("clock_ghz", self.clock_ghz),
            ("ram_gb", self.ram_gb),
            ("disk_gb", self.disk_gb),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(field, format!("{value} must be positive")));
            }
        }
        Ok(())
    }
}

/// A release version compared component-wise: numeric components
/// numerically, anything else lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Version(pub String);

impl Version {
    pub fn new(v: impl Into<String>) -> Self {
        Version(v.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Dotted comparison. Two distinct strings may compare equal
    /// (`"5.0"` vs `"5.00"`), which makes them unorderable in a dataset.
    pub fn compare(&self, other: &Version) -> Ordering {
        let mut a = self.0.split('.');
        let mut b = other.0.split('.');
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ordering::Equal,
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
                (Some(x), Some(y)) => {
                    let ord = match (x.parse::<u64>(), y.parse::<u64>()) {
                        (Ok(x), Ok(y)) => x.cmp(&y),
                        _ => x.cmp(y),
                    };
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
            }
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A shipped (or planned) release with its measured response times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub version: Version,
    #[serde(default)]
    pub items: Vec<String>,
    pub env: EnvironmentSpec,
    #[serde(default)]
    pub rt_runs_ms: Vec<f64>,
}

impl ReleaseRecord {
    pub fn validate(&self) -> Result<()> {
        if self.version.0.trim().is_empty() {
            return Err(Error::UnorderableVersions("empty version string".into()));
        }
        self.env.validate()?;
        for &rt in &self.rt_runs_ms {
            if !(rt.is_finite() && rt > 0.0) {
                return Err(Error::invalid(
                    "rt_runs_ms",
                    format!("release {}: run {rt} must be positive", self.version),
                ));
            }
        }
        Ok(())
    }

    pub fn is_measured(&self) -> bool {
        !self.rt_runs_ms.is_empty()
    }
}

/// Mean of the per-run mean response times of a release.
pub fn mean_rt(release: &ReleaseRecord) -> Result<f64> {
    if release.rt_runs_ms.is_empty() {
        return Err(Error::NoMeasurements(release.version.to_string()));
    }
    Ok(release.rt_runs_ms.iter().sum::<f64>() / release.rt_runs_ms.len() as f64)
}

/// Sorts releases by version, rejecting duplicates and unorderable pairs.
pub fn sort_releases(releases: &mut [ReleaseRecord]) -> Result<()> {
    for r in releases.iter() {
        r.validate()?;
    }
    releases.sort_by(|a, b| a.version.compare(&b.version));
    for pair in releases.windows(2) {
        if pair[0].version.compare(&pair[1].version) == Ordering::Equal {
            return Err(Error::UnorderableVersions(format!(
                "{} and {} compare equal",
                pair[0].version, pair[1].version
            )));
        }
    }
    Ok(())
}

/// A validated collection of backlog items and ordered releases. Items not
/// referenced by any release form the open backlog.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: BTreeMap<String, BacklogItem>,
    releases: Vec<ReleaseRecord>,
}

impl Dataset {
    pub fn new(items: Vec<BacklogItem>, mut releases: Vec<ReleaseRecord>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for item in items {
            if item.id.is_empty() {
                return Err(Error::invalid("id", "empty id"));
            }
            if by_id.contains_key(&item.id) {
                return Err(Error::DuplicateId(item.id));
            }
            by_id.insert(item.id.clone(), item);
        }
        sort_releases(&mut releases)?;

        let mut owner: HashMap<&str, &Version> = HashMap::new();
        for release in &releases {
            for id in &release.items {
                if !by_id.contains_key(id) {
                    return Err(Error::UnknownItem {
                        version: release.version.to_string(),
                        item: id.clone(),
                    });
                }
                if let Some(first) = owner.insert(id, &release.version) {
                    return Err(Error::ItemInTwoReleases {
                        item: id.clone(),
                        first: first.to_string(),
                        second: release.version.to_string(),
                    });
                }
            }
        }
        Ok(Dataset {
            items: by_id,
            releases,
        })
    }

    pub fn items(&self) -> &BTreeMap<String, BacklogItem> {
        &self.items
    }

    pub fn item(&self, id: &str) -> Option<&BacklogItem> {
        self.items.get(id)
    }

    pub fn releases(&self) -> &[ReleaseRecord] {
        &self.releases
    }

    pub fn measured_releases(&self) -> impl Iterator<Item = &ReleaseRecord> {
        self.releases.iter().filter(|r| r.is_measured())
    }

    /// Items of a release, in the release's listed order.
    pub fn release_items<'a>(&'a self, release: &'a ReleaseRecord) -> Vec<&'a BacklogItem> {
        release.items.iter().map(|id| &self.items[id]).collect()
    }

    /// Items not delivered in any release, in id order.
    pub fn open_backlog(&self) -> Vec<&BacklogItem> {
        let delivered: std::collections::HashSet<&str> = self
            .releases
            .iter()
            .flat_map(|r| r.items.iter().map(String::as_str))
            .collect();
        self.items
            .values()
            .filter(|i| !delivered.contains(i.id.as_str()))
            .collect()
    }

    pub fn into_parts(self) -> (Vec<BacklogItem>, Vec<ReleaseRecord>) {
        (self.items.into_values().collect(), self.releases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn release(version: &str, runs: Vec<f64>) -> ReleaseRecord {
        ReleaseRecord {
            version: Version::new(version),
            items: vec![],
            env: EnvironmentSpec::reference(),
            rt_runs_ms: runs,
        }
    }

    fn item(id: &str) -> BacklogItem {
        BacklogItem {
            id: id.into(),
            title: String::new(),
            description: String::new(),
            kind: Kind::Fault,
            severity: None,
            story_points: None,
            sign: Sign::Positive,
        }
    }

    #[test]
    fn mean_rt_examples() {
        assert_eq!(
            mean_rt(&release("1", vec![9000.0, 9400.0])).unwrap(),
            9200.0
        );
        assert_eq!(mean_rt(&release("1", vec![500.0])).unwrap(), 500.0);
        assert!(matches!(
            mean_rt(&release("1", vec![])),
            Err(Error::NoMeasurements(_))
        ));
    }

    #[test]
    fn story_points_membership() {
        for v in [1, 2, 3, 5, 8] {
            assert_eq!(StoryPoints::new(v).unwrap().value() as i64, v);
        }
        for v in [0, 4, 6, 7, 9, 13, -1] {
            assert!(matches!(StoryPoints::new(v), Err(Error::InvalidStoryPoints(x)) if x == v));
        }
    }

    #[test]
    fn version_ordering() {
        let v = |s: &str| Version::new(s);
        assert_eq!(v("5.0.2").compare(&v("5.0.10")), Ordering::Less);
        assert_eq!(v("5.0").compare(&v("5.0.1")), Ordering::Less);
        assert_eq!(v("5.0.rc1").compare(&v("5.0.rc2")), Ordering::Less);
        assert_eq!(v("5.0").compare(&v("5.00")), Ordering::Equal);
        assert_eq!(v("10.0").compare(&v("9.9")), Ordering::Greater);
    }

    #[test]
    fn sort_rejects_equal_versions() {
        let mut rs = vec![release("5.0", vec![]), release("5.00", vec![])];
        assert!(matches!(
            sort_releases(&mut rs),
            Err(Error::UnorderableVersions(_))
        ));
    }

    #[test]
    fn dataset_rejects_shared_items() {
        let mut a = release("1.0", vec![]);
        a.items = vec!["B1".into()];
        let mut b = release("1.1", vec![]);
        b.items = vec!["B1".into()];
        let err = Dataset::new(vec![item("B1")], vec![a, b]).unwrap_err();
        assert!(matches!(err, Error::ItemInTwoReleases { .. }));
    }

    #[test]
    fn dataset_rejects_unknown_item_and_duplicates() {
        let mut a = release("1.0", vec![]);
        a.items = vec!["nope".into()];
        assert!(matches!(
            Dataset::new(vec![item("B1")], vec![a]),
            Err(Error::UnknownItem { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![item("B1"), item("B1")], vec![]),
            Err(Error::DuplicateId(id)) if id == "B1"
        ));
    }

    #[test]
    fn open_backlog_excludes_delivered() {
        let mut a = release("1.0", vec![1.0]);
        a.items = vec!["B1".into()];
        let ds = Dataset::new(vec![item("B1"), item("B2")], vec![a]).unwrap();
        let open: Vec<_> = ds
            .open_backlog()
            .into_iter()
            .map(|i| i.id.as_str())
            .collect();
        assert_eq!(open, vec!["B2"]);
    }

    #[test]
    fn env_validation() {
        let mut env = EnvironmentSpec::reference();
        assert!(env.validate().is_ok());
        env.clock_ghz = 0.0;
        assert!(env.validate().is_err());
    }
}
