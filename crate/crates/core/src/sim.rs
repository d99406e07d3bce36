//! Synthetic release histories generated from a known linear ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{backlog_to_json, releases_to_json};
use crate::model::{
    BacklogItem, Dataset, EnvironmentSpec, Kind, ReleaseRecord, Severity, Sign, StoryPoints,
    Version,
};
use crate::prognosis::{env_factor_chain, EnvAdjustment, EnvBaseline, DEFAULT_CLOCK_COEFFICIENT};
use crate::weighting::{cumulate_cpv, release_pv, ImpactTable, WeightedItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_releases: usize,
    pub slope_ms_per_wf: f64,
    pub intercept_ms: f64,
    pub noise_std_ms: f64,
    /// Inclusive range of items per release.
    pub items_per_release: (usize, usize),
    /// Probabilities of Critical, Major, Medium, Minor.
    pub severity_mix: [f64; 4],
    pub seed: u64,
    pub env: EnvironmentSpec,
    /// Environment changes keyed by 0-based release index; each stays in
    /// effect until the next change.
    pub env_schedule: BTreeMap<usize, EnvironmentSpec>,
    pub os_factor: f64,
    pub clock_coefficient: f64,
    pub runs_per_release: usize,
    /// Items left undelivered, forming the open backlog.
    pub open_backlog: usize,
    /// Probability that an item improves performance (sign −1).
    pub negative_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_releases: 10,
            slope_ms_per_wf: 100.0,
            intercept_ms: 2000.0,
            noise_std_ms: 40.0,
            items_per_release: (1, 3),
            severity_mix: [0.15, 0.25, 0.35, 0.25],
            seed: 42,
            env: EnvironmentSpec::reference(),
            env_schedule: BTreeMap::new(),
            os_factor: 1.25,
            clock_coefficient: DEFAULT_CLOCK_COEFFICIENT,
            runs_per_release: 3,
            open_backlog: 6,
            negative_fraction: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_releases < 3 {
            return Err(Error::invalid("n_releases", "must be at least 3"));
        }
        if !(self.noise_std_ms.is_finite() && self.noise_std_ms >= 0.0) {
            return Err(Error::invalid("noise_std_ms", "must be non-negative"));
        }
        let (lo, hi) = self.items_per_release;
        if lo > hi {
            return Err(Error::invalid("items_per_release", "min exceeds max"));
        }
        if self
            .severity_mix
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::invalid(
                "severity_mix",
                "probabilities must be non-negative",
            ));
        }
        let total: f64 = self.severity_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "severity_mix",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::invalid("negative_fraction", "must lie in [0, 1]"));
        }
        if self.runs_per_release == 0 {
            return Err(Error::invalid("runs_per_release", "must be at least 1"));
        }
        self.env.validate()?;
        for env in self.env_schedule.values() {
            env.validate()?;
        }
        self.adjustment().validate()?;
        Ok(())
    }

    pub fn adjustment(&self) -> EnvAdjustment {
        EnvAdjustment {
            clock_coefficient: self.clock_coefficient,
            os_factor_32_over_64: self.os_factor,
        }
    }
}

/// The generating model, written next to the dataset as `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub slope: f64,
    pub intercept: f64,
    pub os_factor: f64,
    pub clock_coefficient: f64,
    pub per_release_cpv: Vec<f64>,
    /// Noise-free mean response time per release, environment applied.
    pub per_release_rt_ms: Vec<f64>,
    pub per_release_env_factor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

const FAULT_WORDS: &[&str] = &[
    "crash",
    "error",
    "timeout",
    "exception",
    "failure",
    "hang",
    "leak",
    "broken",
    "corrupt",
    "regression",
];
const ENHANCEMENT_WORDS: &[&str] = &[
    "add",
    "feature",
    "support",
    "request",
    "improve",
    "option",
    "export",
    "allow",
    "integrate",
    "new",
];
const COMPONENT_WORDS: &[&str] = &[
    "search",
    "login",
    "report",
    "email",
    "query",
    "attachment",
    "admin",
    "api",
    "dashboard",
    "buglist",
];

fn severity_words(s: Severity) -> &'static [&'static str] {
    match s {
        Severity::Critical => &["outage", "blocker", "unusable"],
        Severity::Major => &["severe", "major", "degraded"],
        Severity::Medium => &["moderate", "noticeable", "intermittent"],
        Severity::Minor => &["cosmetic", "typo", "minor"],
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn draw_severity(rng: &mut ChaCha8Rng, mix: &[f64; 4]) -> Severity {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, p) in Severity::ALL.into_iter().zip(mix) {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // rounding in the cumulative sum: last scale with positive mass
    Severity::ALL
        .into_iter()
        .zip(mix)
        .rev()
        .find(|(_, p)| **p > 0.0)
        .map(|(s, _)| s)
        .unwrap_or(Severity::Minor)
}

fn draw_item(rng: &mut ChaCha8Rng, cfg: &SimConfig, id: String) -> BacklogItem {
    let kind = if rng.random_bool(0.5) {
        Kind::Fault
    } else {
        Kind::Enhancement
    };
    let severity = draw_severity(rng, &cfg.severity_mix);
    let story_points =
        StoryPoints::new(StoryPoints::SCALE[rng.random_range(0..StoryPoints::SCALE.len())] as i64)
            .expect("scale member");
    let sign = if rng.random_bool(cfg.negative_fraction) {
        Sign::Negative
    } else {
        Sign::Positive
    };
    let kind_words = match kind {
        Kind::Fault => FAULT_WORDS,
        Kind::Enhancement => ENHANCEMENT_WORDS,
    };
    let component = pick(rng, COMPONENT_WORDS);
    let title = format!(
        "{} {} {}",
        component,
        pick(rng, kind_words),
        pick(rng, kind_words)
    );
    let description = format!(
        "{} {} in {} module",
        pick(rng, severity_words(severity)),
        pick(rng, kind_words),
        component
    );
    BacklogItem {
        id,
        title,
        description,
        kind,
        severity: Some(severity),
        story_points: Some(story_points),
        sign,
    }
}

/// Truncated at zero by redrawing.
fn draw_run(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("validated std");
    loop {
        let v = normal.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

pub fn generate_dataset(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table = ImpactTable::default();
    let mut items = Vec::new();
    let mut release_items: Vec<Vec<String>> = Vec::with_capacity(cfg.n_releases);
    let mut pvs = Vec::with_capacity(cfg.n_releases);
    let mut next_id = 1;
    for _ in 0..cfg.n_releases {
        let count = rng.random_range(cfg.items_per_release.0..=cfg.items_per_release.1);
        let mut weighted = Vec::with_capacity(count);
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let item = draw_item(&mut rng, cfg, format!("SIM-{next_id:04}"));
            next_id += 1;
            weighted.push(WeightedItem::new(
                item.id.clone(),
                item.kind,
                item.severity.expect("drawn"),
                item.story_points.expect("drawn"),
                &table,
                item.sign,
            ));
            ids.push(item.id.clone());
            items.push(item);
        }
        pvs.push(release_pv(&weighted));
        release_items.push(ids);
    }
    for _ in 0..cfg.open_backlog {
        items.push(draw_item(&mut rng, cfg, format!("SIM-{next_id:04}")));
        next_id += 1;
    }

    let cpvs = cumulate_cpv(&pvs);
    let mut env = cfg.env;
    let envs: Vec<EnvironmentSpec> = (0..cfg.n_releases)
        .map(|k| {
            if let Some(e) = cfg.env_schedule.get(&k) {
                env = *e;
            }
            env
        })
        .collect();
    let factors = env_factor_chain(&EnvBaseline::at(envs[0]), &envs, &cfg.adjustment())?;

    let mut releases = Vec::with_capacity(cfg.n_releases);
    let mut true_rts = Vec::with_capacity(cfg.n_releases);
    for k in 0..cfg.n_releases {
        let line = cfg.intercept_ms + cfg.slope_ms_per_wf * cpvs[k];
        let rt = if factors[k] == 1.0 {
            line
        } else {
            line * factors[k]
        };
        if rt.is_nan() || rt <= 0.0 {
            return Err(Error::invalid(
                "intercept_ms",
                format!("true response time {rt} of release {k} is not positive"),
            ));
        }
        let runs = (0..cfg.runs_per_release)
            .map(|_| draw_run(&mut rng, rt, cfg.noise_std_ms))
            .collect();
        true_rts.push(rt);
        releases.push(ReleaseRecord {
            version: Version(format!("1.{k}.0")),
            items: std::mem::take(&mut release_items[k]),
            env: envs[k],
            rt_runs_ms: runs,
        });
    }

    Ok(SimOutput {
        dataset: Dataset::new(items, releases)?,
        truth: GroundTruth {
            slope: cfg.slope_ms_per_wf,
            intercept: cfg.intercept_ms,
            os_factor: cfg.os_factor,
            clock_coefficient: cfg.clock_coefficient,
            per_release_cpv: cpvs,
            per_release_rt_ms: true_rts,
            per_release_env_factor: factors,
        },
    })
}

/// Writes `backlog.json`, `releases.json` and `truth.json` into `dir`.
pub fn write_sim_output(out: &SimOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (items, releases) = out.dataset.clone().into_parts();
    let files = [
        ("backlog.json", backlog_to_json(&items)?),
        ("releases.json", releases_to_json(&releases)?),
        ("truth.json", serde_json::to_string_pretty(&out.truth)?),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
