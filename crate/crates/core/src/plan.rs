//! Search over allocations of backlog items to future releases.
//!
//! An allocation assigns every backlog item to one of `horizon` releases;
//! empty releases are allowed. Plans rank by remaining useful life, then by
//! lower final predicted response time, then by the lexicographically
//! smaller allocation vector.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EnvironmentSpec;
use crate::prognosis::{
    env_factor_chain, estimate_rul, EnvAdjustment, EnvBaseline, RtThreshold, RulEstimate,
    TrajectoryPoint,
};
use crate::regress::{predict_rt, RegressionModel};
use crate::weighting::WeightedItem;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Exhaustive,
    Greedy,
}

/// Chooses the regression model that predicts a planned release from the
/// items it contains.
pub trait RtModel: Sync {
    fn model_for(&self, items: &[&WeightedItem]) -> &RegressionModel;

    /// The model used for every release, if selection ignores the items.
    fn uniform(&self) -> Option<&RegressionModel> {
        None
    }
}

impl RtModel for RegressionModel {
    fn model_for(&self, _items: &[&WeightedItem]) -> &RegressionModel {
        self
    }

    fn uniform(&self) -> Option<&RegressionModel> {
        Some(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSpec {
    pub backlog: Vec<WeightedItem>,
    pub horizon: usize,
    /// Environment in effect before the first planned release.
    pub base_env: EnvBaseline,
    /// Environment changes keyed by 0-based release index. A change stays
    /// in effect for later releases until overridden again.
    pub env_overrides: BTreeMap<usize, EnvironmentSpec>,
    pub strategy: Strategy,
    pub adjustment: EnvAdjustment,
    pub enumeration_cap: u64,
}

impl PlanSpec {
    pub fn new(backlog: Vec<WeightedItem>, horizon: usize, base_env: EnvironmentSpec) -> Self {
        PlanSpec {
            backlog,
            horizon,
            base_env: EnvBaseline::at(base_env),
            env_overrides: BTreeMap::new(),
            strategy: Strategy::Exhaustive,
            adjustment: EnvAdjustment::default(),
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidPlan("horizon must be at least 1".into()));
        }
        if let Some(k) = self.env_overrides.keys().find(|k| **k >= self.horizon) {
            return Err(Error::InvalidPlan(format!(
                "environment override for release {k} is beyond horizon {}",
                self.horizon
            )));
        }
        for env in self.env_overrides.values() {
            env.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for item in &self.backlog {
            if !seen.insert(item.item_id.as_str()) {
                return Err(Error::DuplicateId(item.item_id.clone()));
            }
        }
        Ok(())
    }

    /// Environment of each planned release.
    pub fn release_envs(&self) -> Vec<EnvironmentSpec> {
        let mut env = self.base_env.env;
        (0..self.horizon)
            .map(|k| {
                if let Some(o) = self.env_overrides.get(&k) {
                    env = *o;
                }
                env
            })
            .collect()
    }

    fn env_factors(&self) -> Result<Vec<f64>> {
        env_factor_chain(&self.base_env, &self.release_envs(), &self.adjustment)
    }
}

pub fn release_label(index: usize) -> String {
    format!("R+{}", index + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedReleaseReport {
    pub version: String,
    pub items: Vec<String>,
    pub pv: f64,
    pub cpv: f64,
    pub env: EnvironmentSpec,
    pub rt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub allocation: BTreeMap<String, usize>,
    pub releases: Vec<PlannedReleaseReport>,
    pub rul: RulEstimate,
    pub final_rt_ms: f64,
}

impl PlanResult {
    /// `(rul_releases, final_rt_ms)`: the value part of the ranking key.
    pub fn rank_values(&self) -> (usize, f64) {
        (self.rul.rul_releases, self.final_rt_ms)
    }
}

fn count_allocations(n_items: usize, horizon: usize) -> f64 {
    (horizon as f64).powi(n_items as i32)
}

fn check_cap(n_items: usize, horizon: usize, cap: u64) -> Result<u64> {
    if horizon == 0 {
        return Err(Error::InvalidPlan("horizon must be at least 1".into()));
    }
    let count = count_allocations(n_items, horizon);
    if count > cap as f64 {
        return Err(Error::EnumerationCap { count, cap });
    }
    Ok(count as u64)
}

/// The `index`-th allocation in lexicographic order (item 0 most
/// significant).
fn decode(mut index: u64, n_items: usize, horizon: usize) -> Vec<usize> {
    let mut alloc = vec![0; n_items];
    for slot in alloc.iter_mut().rev() {
        *slot = (index % horizon as u64) as usize;
        index /= horizon as u64;
    }
    alloc
}

/// All `horizon^n_items` allocations in lexicographic order.
pub fn enumerate_allocations(
    n_items: usize,
    horizon: usize,
    cap: u64,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    let count = check_cap(n_items, horizon, cap)?;
    Ok((0..count).map(move |i| decode(i, n_items, horizon)))
}

/// Score of an allocation: `(rul, final_rt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    rul: usize,
    final_rt: f64,
}

/// Better-first ordering of scored allocations.
fn rank_cmp(a: (&Score, &[usize]), b: (&Score, &[usize])) -> Ordering {
    b.0.rul
        .cmp(&a.0.rul)
        .then(a.0.final_rt.total_cmp(&b.0.final_rt))
        .then_with(|| a.1.cmp(b.1))
}

fn rt_at(model: &RegressionModel, cpv: f64, factor: f64) -> f64 {
    let rt = predict_rt(model, cpv);
    if factor == 1.0 {
        rt
    } else {
        rt * factor
    }
}

/// Evaluation state shared by every allocation of one search.
struct Evaluator<'a, M: RtModel + ?Sized> {
    spec: &'a PlanSpec,
    model: &'a M,
    current_cpv: f64,
    threshold: RtThreshold,
    factors: Vec<f64>,
}

impl<'a, M: RtModel + ?Sized> Evaluator<'a, M> {
    fn new(
        spec: &'a PlanSpec,
        model: &'a M,
        current_cpv: f64,
        threshold: RtThreshold,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(Evaluator {
            spec,
            model,
            current_cpv,
            threshold,
            factors: spec.env_factors()?,
        })
    }

    fn check(&self, allocation: &[usize]) -> Result<()> {
        if allocation.len() != self.spec.backlog.len() {
            return Err(Error::InvalidPlan(format!(
                "allocation covers {} items, backlog has {}",
                allocation.len(),
                self.spec.backlog.len()
            )));
        }
        if let Some(r) = allocation.iter().find(|r| **r >= self.spec.horizon) {
            return Err(Error::InvalidPlan(format!(
                "release index {r} is beyond horizon {}",
                self.spec.horizon
            )));
        }
        Ok(())
    }

    /// Per-release PVs, summing item weights in backlog order. Items with
    /// `None` are not placed yet.
    fn pvs(&self, allocation: impl Iterator<Item = Option<usize>>) -> Vec<f64> {
        let mut pvs = vec![0.0; self.spec.horizon];
        for (item, slot) in self.spec.backlog.iter().zip(allocation) {
            if let Some(r) = slot {
                pvs[r] += item.weight;
            }
        }
        pvs
    }

    fn models(&self, allocation: &[Option<usize>]) -> Vec<&'a RegressionModel> {
        if let Some(m) = self.model.uniform() {
            return vec![m; self.spec.horizon];
        }
        let mut groups: Vec<Vec<&WeightedItem>> = vec![Vec::new(); self.spec.horizon];
        for (item, slot) in self.spec.backlog.iter().zip(allocation) {
            if let Some(r) = slot {
                groups[*r].push(item);
            }
        }
        groups.iter().map(|g| self.model.model_for(g)).collect()
    }

    fn rts(&self, allocation: &[Option<usize>]) -> Vec<f64> {
        let pvs = self.pvs(allocation.iter().copied());
        let models = self.models(allocation);
        let mut cpv = self.current_cpv;
        pvs.iter()
            .zip(models)
            .zip(&self.factors)
            .map(|((pv, model), factor)| {
                cpv += pv;
                rt_at(model, cpv, *factor)
            })
            .collect()
    }

    fn score(&self, allocation: &[usize]) -> Score {
        let slots: Vec<Option<usize>> = allocation.iter().map(|r| Some(*r)).collect();
        let rts = self.rts(&slots);
        let rul = rts
            .iter()
            .position(|rt| *rt >= self.threshold.value_ms)
            .unwrap_or(rts.len());
        Score {
            rul,
            final_rt: *rts.last().expect("horizon >= 1"),
        }
    }

    fn result(&self, allocation: &[usize]) -> PlanResult {
        let slots: Vec<Option<usize>> = allocation.iter().map(|r| Some(*r)).collect();
        let pvs = self.pvs(slots.iter().copied());
        let models = self.models(&slots);
        let envs = self.spec.release_envs();
        let mut releases = Vec::with_capacity(self.spec.horizon);
        let mut cpv = self.current_cpv;
        for k in 0..self.spec.horizon {
            cpv += pvs[k];
            releases.push(PlannedReleaseReport {
                version: release_label(k),
                items: self
                    .spec
                    .backlog
                    .iter()
                    .zip(allocation)
                    .filter(|(_, r)| **r == k)
                    .map(|(i, _)| i.item_id.clone())
                    .collect(),
                pv: pvs[k],
                cpv,
                env: envs[k],
                rt_ms: rt_at(models[k], cpv, self.factors[k]),
            });
        }
        let trajectory = releases
            .iter()
            .map(|r| TrajectoryPoint {
                version: r.version.clone(),
                rt_ms: r.rt_ms,
            })
            .collect();
        let rul = estimate_rul(trajectory, self.threshold);
        PlanResult {
            allocation: self
                .spec
                .backlog
                .iter()
                .zip(allocation)
                .map(|(i, r)| (i.item_id.clone(), *r))
                .collect(),
            final_rt_ms: releases.last().expect("horizon >= 1").rt_ms,
            releases,
            rul,
        }
    }
}

pub fn evaluate_plan<M: RtModel + ?Sized>(
    allocation: &[usize],
    spec: &PlanSpec,
    model: &M,
    current_cpv: f64,
    threshold: RtThreshold,
) -> Result<PlanResult> {
    let eval = Evaluator::new(spec, model, current_cpv, threshold)?;
    eval.check(allocation)?;
    Ok(eval.result(allocation))
}

/// Converts an item-id keyed allocation into backlog order.
pub fn allocation_from_map(spec: &PlanSpec, map: &BTreeMap<String, usize>) -> Result<Vec<usize>> {
    if map.len() != spec.backlog.len() {
        let missing: Vec<&str> = spec
            .backlog
            .iter()
            .filter(|i| !map.contains_key(&i.item_id))
            .map(|i| i.item_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidPlan(format!(
                "items not allocated: {}",
                missing.join(", ")
            )));
        }
        return Err(Error::InvalidPlan(
            "allocation names items that are not in the plan".into(),
        ));
    }
    spec.backlog
        .iter()
        .map(|i| {
            map.get(&i.item_id)
                .copied()
                .ok_or_else(|| Error::InvalidPlan(format!("item `{}` is not allocated", i.item_id)))
        })
        .collect()
}

pub fn best_plan<M: RtModel + ?Sized>(
    spec: &PlanSpec,
    model: &M,
    current_cpv: f64,
    threshold: RtThreshold,
) -> Result<PlanResult> {
    let eval = Evaluator::new(spec, model, current_cpv, threshold)?;
    let allocation = match spec.strategy {
        Strategy::Exhaustive => exhaustive(&eval)?,
        Strategy::Greedy => greedy(&eval),
    };
    Ok(eval.result(&allocation))
}

fn exhaustive<M: RtModel + ?Sized>(eval: &Evaluator<'_, M>) -> Result<Vec<usize>> {
    let n = eval.spec.backlog.len();
    let h = eval.spec.horizon;
    let count = check_cap(n, h, eval.spec.enumeration_cap)?;
    let best = (0..count)
        .into_par_iter()
        .map(|i| {
            let alloc = decode(i, n, h);
            (eval.score(&alloc), alloc)
        })
        .reduce_with(|a, b| {
            if rank_cmp((&b.0, &b.1), (&a.0, &a.1)) == Ordering::Less {
                b
            } else {
                a
            }
        })
        .expect("at least one allocation");
    Ok(best.1)
}

/// Places items by descending |weight| into the release that minimizes the
/// trajectory's maximum response time, then its sum, then the release
/// index.
fn greedy<M: RtModel + ?Sized>(eval: &Evaluator<'_, M>) -> Vec<usize> {
    let backlog = &eval.spec.backlog;
    let mut order: Vec<usize> = (0..backlog.len()).collect();
    order.sort_by(|&a, &b| backlog[b].weight.abs().total_cmp(&backlog[a].weight.abs()));

    let mut slots: Vec<Option<usize>> = vec![None; backlog.len()];
    for item in order {
        let mut best: Option<(f64, f64, usize)> = None;
        for r in 0..eval.spec.horizon {
            slots[item] = Some(r);
            let rts = eval.rts(&slots);
            let max = rts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = rts.iter().sum();
            let better = match best {
                None => true,
                Some((bm, bs, _)) => max < bm || (max == bm && sum < bs),
            };
            if better {
                best = Some((max, sum, r));
            }
        }
        slots[item] = best.map(|b| b.2);
    }
    slots
        .into_iter()
        .map(|s| s.expect("every item placed"))
        .collect()
}
