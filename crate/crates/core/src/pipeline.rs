//! End-to-end operations shared by the command line and the HTTP service:
//! training a model bundle from a dataset and evaluating release plans
//! against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{tokenize, train_nb, NbModel};
use crate::cluster::{mean_silhouette, release_features, ReleaseClusterer, ReleaseFeatures};
use crate::error::{Error, Result};
use crate::model::{mean_rt, BacklogItem, Dataset, EnvironmentSpec, OsBits};
use crate::plan::{
    allocation_from_map, best_plan, evaluate_plan, PlanResult, PlanSpec, RtModel, Strategy,
    DEFAULT_ENUMERATION_CAP,
};
use crate::prognosis::{
    apply_env, env_factor_chain, EnvAdjustment, EnvBaseline, RtThreshold, RulEstimate,
};
use crate::regress::{
    evaluate, leave_one_out_mae, ols_fit, pearson_corr, split_train_test, CorrelationReport,
    ErrorMetrics, RegressionModel, DEFAULT_TRAIN_FRACTION,
};
use crate::weighting::{weigh_item, weigh_releases, Estimators, ImpactTable, WeightedItem};

/// Releases a cluster needs before it gets its own regression.
pub const MIN_RELEASES_PER_CLUSTER: usize = 4;
pub const DEFAULT_K_MAX: usize = 4;
pub const LOO_MAX_N: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub impact_table: ImpactTable,
    pub adjustment: EnvAdjustment,
    pub seed: u64,
    pub train_fraction: f64,
    pub k_max: usize,
    pub cluster: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            impact_table: ImpactTable::default(),
            adjustment: EnvAdjustment::default(),
            seed: 42,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            k_max: DEFAULT_K_MAX,
            cluster: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub train_n: usize,
    pub test_n: usize,
    pub model: RegressionModel,
    pub metrics: ErrorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModels {
    pub clusterer: ReleaseClusterer,
    pub models: Vec<RegressionModel>,
}

/// Everything needed to predict future releases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub global: RegressionModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterModels>,
    pub correlation: CorrelationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<HoldoutReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loo_mae_ms: Option<f64>,
    /// Environment the regression is expressed in.
    pub baseline_env: EnvironmentSpec,
    /// Environment of the latest release and its multiplier relative to
    /// `baseline_env`.
    pub current: EnvBaseline,
    pub current_cpv: f64,
    pub last_version: String,
    pub adjustment: EnvAdjustment,
    pub impact_table: ImpactTable,
    #[serde(default)]
    pub estimators: Estimators,
    /// Items not yet delivered when the model was trained; plans draw on
    /// these unless another backlog is supplied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub open_backlog: Vec<BacklogItem>,
}

impl TrainedModel {
    pub fn open_backlog_map(&self) -> BTreeMap<String, BacklogItem> {
        backlog_map(self.open_backlog.clone())
    }
}

impl RtModel for TrainedModel {
    fn model_for(&self, items: &[&WeightedItem]) -> &RegressionModel {
        match &self.clusters {
            Some(c) => c
                .clusterer
                .assign(&release_features(items))
                .ok()
                .and_then(|i| c.models.get(i))
                .unwrap_or(&self.global),
            None => &self.global,
        }
    }

    fn uniform(&self) -> Option<&RegressionModel> {
        self.clusters.is_none().then_some(&self.global)
    }
}

/// One row of training data: cumulative weight and environment-normalized
/// mean response time of a measured release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub version: String,
    pub cpv: f64,
    pub rt_ms: f64,
    pub features: Vec<f64>,
}

pub struct PreparedData {
    pub points: Vec<TrainingPoint>,
    pub baseline_env: EnvironmentSpec,
    pub current: EnvBaseline,
    pub current_cpv: f64,
    pub last_version: String,
}

pub fn prepare(
    dataset: &Dataset,
    table: &ImpactTable,
    estimators: &Estimators,
    adjustment: &EnvAdjustment,
) -> Result<PreparedData> {
    let releases = dataset.releases();
    let first = releases
        .first()
        .ok_or_else(|| Error::InsufficientData("dataset has no releases".into()))?;
    let weighted = weigh_releases(dataset, table, estimators)?;
    let envs: Vec<EnvironmentSpec> = releases.iter().map(|r| r.env).collect();
    let baseline_env = first.env;
    let factors = env_factor_chain(&EnvBaseline::at(baseline_env), &envs, adjustment)?;

    let mut points = Vec::new();
    for ((release, (w, items)), factor) in releases.iter().zip(&weighted).zip(&factors) {
        if !release.is_measured() {
            continue;
        }
        let rt = mean_rt(release)?;
        let refs: Vec<&WeightedItem> = items.iter().collect();
        points.push(TrainingPoint {
            version: w.version.clone(),
            cpv: w.cpv,
            rt_ms: if *factor == 1.0 { rt } else { rt / factor },
            features: release_features(&refs),
        });
    }
    let (last, _) = weighted.last().expect("non-empty");
    Ok(PreparedData {
        points,
        baseline_env,
        current: EnvBaseline {
            env: *envs.last().expect("non-empty"),
            factor: *factors.last().expect("non-empty"),
        },
        current_cpv: last.cpv,
        last_version: last.version.clone(),
    })
}

fn fit_clusters(points: &[TrainingPoint], opts: &TrainOptions) -> Result<Option<ClusterModels>> {
    if points.len() < 2 * MIN_RELEASES_PER_CLUSTER {
        return Ok(None);
    }
    let features: Vec<ReleaseFeatures> = points
        .iter()
        .map(|p| ReleaseFeatures {
            version: p.version.clone(),
            vector: p.features.clone(),
        })
        .collect();
    let clusterer = ReleaseClusterer::fit(&features, None, opts.k_max, opts.seed)?;
    if clusterer.standardizer.kept.is_empty() {
        return Ok(None);
    }
    let k = clusterer.model.k;
    let mut models = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&TrainingPoint> = points
            .iter()
            .zip(&clusterer.model.assignments)
            .filter(|(_, a)| **a == c)
            .map(|(p, _)| p)
            .collect();
        if members.len() < MIN_RELEASES_PER_CLUSTER {
            return Ok(None);
        }
        let xs: Vec<f64> = members.iter().map(|p| p.cpv).collect();
        let ys: Vec<f64> = members.iter().map(|p| p.rt_ms).collect();
        match ols_fit(&xs, &ys) {
            Ok(mut m) => {
                m.cluster_id = Some(c);
                models.push(m);
            }
            Err(Error::DegenerateDesign(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(ClusterModels { clusterer, models }))
}

pub fn train(
    dataset: &Dataset,
    estimators: Estimators,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    opts.adjustment.validate()?;
    let prepared = prepare(dataset, &opts.impact_table, &estimators, &opts.adjustment)?;
    let points = &prepared.points;
    let xs: Vec<f64> = points.iter().map(|p| p.cpv).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rt_ms).collect();
    let global = ols_fit(&xs, &ys)?;
    let correlation = pearson_corr(&xs, &ys)?;

    let holdout = if points.len() >= 5 {
        let pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        let (train_set, test_set) = split_train_test(&pairs, opts.train_fraction, opts.seed)?;
        let (tx, ty): (Vec<f64>, Vec<f64>) = train_set.into_iter().unzip();
        match ols_fit(&tx, &ty) {
            Ok(model) => Some(HoldoutReport {
                train_n: tx.len(),
                test_n: test_set.len(),
                metrics: evaluate(&model, &test_set)?,
                model,
            }),
            Err(Error::DegenerateDesign(_)) | Err(Error::InsufficientData(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let loo_mae_ms = if (4..=LOO_MAX_N).contains(&points.len()) {
        leave_one_out_mae(&xs, &ys).ok()
    } else {
        None
    };
    let clusters = if opts.cluster {
        fit_clusters(points, opts)?
    } else {
        None
    };

    Ok(TrainedModel {
        global,
        clusters,
        correlation,
        holdout,
        loo_mae_ms,
        baseline_env: prepared.baseline_env,
        current: prepared.current,
        current_cpv: prepared.current_cpv,
        last_version: prepared.last_version,
        adjustment: opts.adjustment,
        impact_table: opts.impact_table.clone(),
        estimators,
        open_backlog: dataset.open_backlog().into_iter().cloned().collect(),
    })
}

/// `plan.json`: items to schedule over `horizon` future releases, optional
/// environment changes keyed by 0-based release index, and for evaluation
/// an explicit item → release allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub horizon: usize,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env_overrides: BTreeMap<usize, EnvironmentSpec>,
    #[serde(default)]
    pub items: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumeration_cap: Option<u64>,
}

/// Resolves a plan file against the backlog and the trained model.
pub fn plan_spec(
    model: &TrainedModel,
    backlog: &BTreeMap<String, BacklogItem>,
    plan: &PlanFile,
) -> Result<PlanSpec> {
    let items = plan
        .items
        .iter()
        .map(|id| {
            let item = backlog
                .get(id)
                .ok_or_else(|| Error::InvalidPlan(format!("item `{id}` is not in the backlog")))?;
            weigh_item(item, &model.impact_table, &model.estimators)
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = PlanSpec {
        backlog: items,
        horizon: plan.horizon,
        base_env: model.current,
        env_overrides: plan.env_overrides.clone(),
        strategy: plan.strategy,
        adjustment: model.adjustment,
        enumeration_cap: plan.enumeration_cap.unwrap_or(DEFAULT_ENUMERATION_CAP),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn backlog_map(items: Vec<BacklogItem>) -> BTreeMap<String, BacklogItem> {
    items.into_iter().map(|i| (i.id.clone(), i)).collect()
}

/// Evaluates the plan file's explicit allocation.
pub fn evaluate_plan_file(
    model: &TrainedModel,
    backlog: &BTreeMap<String, BacklogItem>,
    plan: &PlanFile,
    threshold: RtThreshold,
) -> Result<PlanResult> {
    let spec = plan_spec(model, backlog, plan)?;
    let map = plan.allocation.as_ref().ok_or_else(|| {
        Error::InvalidPlan(
            "plan has no allocation; search for one with the best-plan operation".into(),
        )
    })?;
    let allocation = allocation_from_map(&spec, map)?;
    evaluate_plan(&allocation, &spec, model, model.current_cpv, threshold)
}

pub fn rul_for_plan_file(
    model: &TrainedModel,
    backlog: &BTreeMap<String, BacklogItem>,
    plan: &PlanFile,
    threshold: RtThreshold,
) -> Result<RulEstimate> {
    evaluate_plan_file(model, backlog, plan, threshold).map(|r| r.rul)
}

pub fn best_plan_file(
    model: &TrainedModel,
    backlog: &BTreeMap<String, BacklogItem>,
    plan: &PlanFile,
    threshold: RtThreshold,
) -> Result<PlanResult> {
    let spec = plan_spec(model, backlog, plan)?;
    best_plan(&spec, model, model.current_cpv, threshold)
}

/// Backlog attribute a text classifier can learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelField {
    Kind,
    Severity,
    StoryPoints,
}

/// Trains a classifier on the title and description of every item that
/// carries the label.
pub fn train_item_classifier(
    items: &[BacklogItem],
    field: LabelField,
    alpha: f64,
) -> Result<NbModel> {
    let docs: Vec<_> = items
        .iter()
        .filter_map(|i| {
            let label = match field {
                LabelField::Kind => Some(i.kind.to_string()),
                LabelField::Severity => i.severity.map(|s| s.to_string()),
                LabelField::StoryPoints => i.story_points.map(|sp| sp.value().to_string()),
            }?;
            Some((tokenize(&i.text()), label))
        })
        .collect();
    if docs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no items carry a {field:?} label"
        )));
    }
    train_nb(&docs, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseAssignment {
    pub version: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub silhouette: f64,
    pub releases: Vec<ReleaseAssignment>,
    pub clusterer: ReleaseClusterer,
}

/// Groups every release of the dataset by the make-up of its items.
pub fn cluster_releases(
    dataset: &Dataset,
    table: &ImpactTable,
    estimators: &Estimators,
    k: Option<usize>,
    k_max: usize,
    seed: u64,
) -> Result<ClusterReport> {
    let features: Vec<ReleaseFeatures> = weigh_releases(dataset, table, estimators)?
        .into_iter()
        .map(|(w, items)| {
            let refs: Vec<&WeightedItem> = items.iter().collect();
            ReleaseFeatures {
                version: w.version,
                vector: release_features(&refs),
            }
        })
        .collect();
    let clusterer = ReleaseClusterer::fit(&features, k, k_max, seed)?;
    let raw: Vec<Vec<f64>> = features
        .iter()
        .map(|f| clusterer.standardizer.transform(&f.vector))
        .collect();
    let model = &clusterer.model;
    Ok(ClusterReport {
        k: model.k,
        silhouette: mean_silhouette(&raw, &model.assignments, model.k),
        releases: clusterer
            .versions
            .iter()
            .zip(&model.assignments)
            .map(|(v, c)| ReleaseAssignment {
                version: v.clone(),
                cluster: *c,
            })
            .collect(),
        clusterer,
    })
}

/// What an ingested dataset contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub items: usize,
    pub releases: usize,
    pub measured_releases: usize,
    pub open_backlog: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_version: Option<String>,
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    let releases = dataset.releases();
    DatasetSummary {
        items: dataset.items().len(),
        releases: releases.len(),
        measured_releases: dataset.measured_releases().count(),
        open_backlog: dataset
            .open_backlog()
            .iter()
            .map(|i| i.id.clone())
            .collect(),
        first_version: releases.first().map(|r| r.version.to_string()),
        last_version: releases.last().map(|r| r.version.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cpv: f64,
    pub rt_ms: f64,
}

/// Predicted response time at cumulative weight `cpv`, in the environment
/// of the latest release.
pub fn predict(model: &TrainedModel, cpv: f64) -> Result<Prediction> {
    if !cpv.is_finite() {
        return Err(Error::invalid("cpv", "must be finite"));
    }
    let rt = model.global.predict(cpv);
    let factor = model.current.factor;
    Ok(Prediction {
        cpv,
        rt_ms: if factor == 1.0 { rt } else { rt * factor },
    })
}

/// One side of an environment what-if. A missing `os_bits` means "same as
/// the other side", or 64-bit when both are missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvPoint {
    pub clock_ghz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub os_bits: Option<OsBits>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustRequest {
    pub rt_ms: f64,
    pub from: EnvPoint,
    pub to: EnvPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub os_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_coefficient: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustResult {
    pub rt_ms: f64,
}

/// Moves a response time between environments. Parameters missing from
/// the request fall back to `defaults`.
pub fn adjust(req: &AdjustRequest, defaults: &EnvAdjustment) -> Result<AdjustResult> {
    let adj = EnvAdjustment {
        clock_coefficient: req.clock_coefficient.unwrap_or(defaults.clock_coefficient),
        os_factor_32_over_64: req.os_factor.unwrap_or(defaults.os_factor_32_over_64),
    };
    adj.validate()?;
    let bits_from = req
        .from
        .os_bits
        .or(req.to.os_bits)
        .unwrap_or(OsBits::Bits64);
    let bits_to = req.to.os_bits.unwrap_or(bits_from);
    let side = |bits, clock_ghz| EnvironmentSpec {
        os_bits: bits,
        clock_ghz,
        ..EnvironmentSpec::reference()
    };
    let from = side(bits_from, req.from.clock_ghz);
    let to = side(bits_to, req.to.clock_ghz);
    from.validate()?;
    to.validate()?;
    Ok(AdjustResult {
        rt_ms: apply_env(req.rt_ms, &from, &to, &adj)?,
    })
}
