//! Response-time trajectories over planned releases, remaining useful life
//! against a threshold, and environment adjustments.
//!
//! Clock changes scale response time by `1 - coeff · (new - old) / old`
//! where the default coefficient 1.227 encodes a 12.27% response-time drop
//! per 10% clock increase. OS word-size changes scale by the measured ratio
//! of 32-bit to 64-bit response times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnvironmentSpec, OsBits};
use crate::regress::{predict_rt, RegressionModel};

pub const DEFAULT_THRESHOLD_MS: f64 = 10_000.0;
/// Relative RT change per relative clock change (12.27% per 10%).
pub const DEFAULT_CLOCK_COEFFICIENT: f64 = 1.227;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtThreshold {
    pub value_ms: f64,
}

impl RtThreshold {
    pub fn from_ms(value_ms: f64) -> Result<Self> {
        if !(value_ms.is_finite() && value_ms > 0.0) {
            return Err(Error::invalid(
                "threshold",
                format!("{value_ms} ms must be positive"),
            ));
        }
        Ok(RtThreshold { value_ms })
    }

    pub fn from_seconds(seconds: f64) -> Result<Self> {
        RtThreshold::from_ms(seconds * 1000.0)
    }
}

impl Default for RtThreshold {
    fn default() -> Self {
        RtThreshold {
            value_ms: DEFAULT_THRESHOLD_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRelease {
    pub version: String,
    pub pv: f64,
    pub env: EnvironmentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub version: String,
    pub rt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulEstimate {
    pub trajectory: Vec<TrajectoryPoint>,
    pub rul_releases: usize,
    pub censored: bool,
    pub threshold_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAdjustment {
    pub clock_coefficient: f64,
    pub os_factor_32_over_64: f64,
}

impl Default for EnvAdjustment {
    fn default() -> Self {
        EnvAdjustment {
            clock_coefficient: DEFAULT_CLOCK_COEFFICIENT,
            os_factor_32_over_64: 1.0,
        }
    }
}

impl EnvAdjustment {
    /// Rejects non-positive parameters; returns a warning when the OS
    /// factor says 32-bit is faster than 64-bit.
    pub fn validate(&self) -> Result<Option<String>> {
        if !(self.clock_coefficient.is_finite() && self.clock_coefficient > 0.0) {
            return Err(Error::invalid("clock_coefficient", "must be positive"));
        }
        if !(self.os_factor_32_over_64.is_finite() && self.os_factor_32_over_64 > 0.0) {
            return Err(Error::invalid("os_factor_32_over_64", "must be positive"));
        }
        Ok((self.os_factor_32_over_64 < 1.0).then(|| {
            format!(
                "OS factor {} < 1 implies 32-bit runs faster than 64-bit",
                self.os_factor_32_over_64
            )
        }))
    }
}

/// Multiplier that moves a response time measured at `hz_o` to `hz_n`.
pub fn clock_factor(hz_o: f64, hz_n: f64, coeff: f64) -> Result<f64> {
    if !(hz_o.is_finite() && hz_o > 0.0) {
        return Err(Error::invalid("hz_o", format!("{hz_o} must be positive")));
    }
    if !(hz_n.is_finite() && hz_n > 0.0) {
        return Err(Error::invalid("hz_n", format!("{hz_n} must be positive")));
    }
    let factor = 1.0 - coeff * (hz_n - hz_o) / hz_o;
    if factor <= 0.0 {
        return Err(Error::OutsideCalibratedRange { hz_o, hz_n, factor });
    }
    Ok(factor)
}

pub fn adjust_clock_speed(rt_o_ms: f64, hz_o: f64, hz_n: f64, coeff: f64) -> Result<f64> {
    Ok(rt_o_ms * clock_factor(hz_o, hz_n, coeff)?)
}

/// Mean of per-release `rt32 / rt64` ratios.
pub fn estimate_os_factor(paired: &[(f64, f64)]) -> Result<f64> {
    if paired.is_empty() {
        return Err(Error::InsufficientData("no paired measurements".into()));
    }
    if let Some(bad) = paired
        .iter()
        .find(|(a, b)| !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0))
    {
        return Err(Error::invalid(
            "paired",
            format!("{bad:?}: response times must be positive"),
        ));
    }
    Ok(paired.iter().map(|(rt32, rt64)| rt32 / rt64).sum::<f64>() / paired.len() as f64)
}

fn apply_os(rt: f64, from: OsBits, to: OsBits, adj: &EnvAdjustment) -> f64 {
    match (from, to) {
        (OsBits::Bits64, OsBits::Bits32) => rt * adj.os_factor_32_over_64,
        (OsBits::Bits32, OsBits::Bits64) => rt / adj.os_factor_32_over_64,
        _ => rt,
    }
}

/// Moves `rt_ms` from the `baseline` environment to `target`: OS factor
/// first, then the clock adjustment.
pub fn apply_env(
    rt_ms: f64,
    baseline: &EnvironmentSpec,
    target: &EnvironmentSpec,
    adj: &EnvAdjustment,
) -> Result<f64> {
    if !(rt_ms.is_finite() && rt_ms > 0.0) {
        return Err(Error::invalid("rt_ms", format!("{rt_ms} must be positive")));
    }
    let rt = apply_os(rt_ms, baseline.os_bits, target.os_bits, adj);
    if baseline.clock_ghz == target.clock_ghz {
        return Ok(rt);
    }
    adjust_clock_speed(
        rt,
        baseline.clock_ghz,
        target.clock_ghz,
        adj.clock_coefficient,
    )
}

/// Multiplier equivalent to [`apply_env`] for one environment transition.
pub fn env_step_factor(
    from: &EnvironmentSpec,
    to: &EnvironmentSpec,
    adj: &EnvAdjustment,
) -> Result<f64> {
    let os = apply_os(1.0, from.os_bits, to.os_bits, adj);
    if from.clock_ghz == to.clock_ghz {
        return Ok(os);
    }
    Ok(os * clock_factor(from.clock_ghz, to.clock_ghz, adj.clock_coefficient)?)
}

/// Where a trajectory starts: the environment in effect and its cumulative
/// multiplier relative to the environment the model was fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvBaseline {
    pub env: EnvironmentSpec,
    pub factor: f64,
}

impl EnvBaseline {
    pub fn at(env: EnvironmentSpec) -> Self {
        EnvBaseline { env, factor: 1.0 }
    }
}

/// Cumulative multipliers for a sequence of environments, each step
/// relative to the previous one.
pub fn env_factor_chain(
    start: &EnvBaseline,
    envs: &[EnvironmentSpec],
    adj: &EnvAdjustment,
) -> Result<Vec<f64>> {
    let mut prev = start.env;
    let mut factor = start.factor;
    envs.iter()
        .map(|env| {
            if *env != prev {
                factor *= env_step_factor(&prev, env, adj)?;
                prev = *env;
            }
            Ok(factor)
        })
        .collect()
}

/// Predicts each planned release with its own model; `models[k]` serves
/// `plan[k]`.
pub fn predict_trajectory_per_release(
    models: &[&RegressionModel],
    current_cpv: f64,
    plan: &[PlannedRelease],
    start: &EnvBaseline,
    adj: &EnvAdjustment,
) -> Result<Vec<TrajectoryPoint>> {
    debug_assert_eq!(models.len(), plan.len());
    let envs: Vec<EnvironmentSpec> = plan.iter().map(|p| p.env).collect();
    let factors = env_factor_chain(start, &envs, adj)?;
    let mut cpv = current_cpv;
    Ok(plan
        .iter()
        .zip(models)
        .zip(factors)
        .map(|((release, model), factor)| {
            cpv += release.pv;
            let rt = predict_rt(model, cpv);
            TrajectoryPoint {
                version: release.version.clone(),
                rt_ms: if factor == 1.0 { rt } else { rt * factor },
            }
        })
        .collect())
}

pub fn predict_trajectory(
    model: &RegressionModel,
    current_cpv: f64,
    plan: &[PlannedRelease],
    start: &EnvBaseline,
    adj: &EnvAdjustment,
) -> Result<Vec<TrajectoryPoint>> {
    let models = vec![model; plan.len()];
    predict_trajectory_per_release(&models, current_cpv, plan, start, adj)
}

pub fn estimate_rul(trajectory: Vec<TrajectoryPoint>, threshold: RtThreshold) -> RulEstimate {
    let crossing = trajectory
        .iter()
        .position(|p| p.rt_ms >= threshold.value_ms);
    RulEstimate {
        rul_releases: crossing.unwrap_or(trajectory.len()),
        censored: crossing.is_none(),
        threshold_ms: threshold.value_ms,
        trajectory,
    }
}

pub fn trajectory_to_csv(estimate: &RulEstimate) -> String {
    let mut out = String::from("version,rt_ms,below_threshold\n");
    for p in &estimate.trajectory {
        let version = if p.version.contains([',', '"']) {
            format!("\"{}\"", p.version.replace('"', "\"\""))
        } else {
            p.version.clone()
        };
        out.push_str(&format!(
            "{version},{},{}\n",
            p.rt_ms,
            p.rt_ms < estimate.threshold_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(intercept: f64, slope: f64) -> RegressionModel {
        RegressionModel {
            slope,
            intercept,
            n: 10,
            r_squared: 1.0,
            adj_r_squared: 1.0,
            slope_p_value: 0.0,
            residual_std: 0.0,
            cluster_id: None,
        }
    }

    fn env(bits: OsBits, ghz: f64) -> EnvironmentSpec {
        EnvironmentSpec {
            os_bits: bits,
            clock_ghz: ghz,
            ram_gb: 8.0,
            disk_gb: 100.0,
        }
    }

    fn plan(pvs: &[f64]) -> Vec<PlannedRelease> {
        pvs.iter()
            .enumerate()
            .map(|(i, pv)| PlannedRelease {
                version: format!("r{i}"),
                pv: *pv,
                env: EnvironmentSpec::reference(),
            })
            .collect()
    }

    fn rts(t: &[TrajectoryPoint]) -> Vec<f64> {
        t.iter().map(|p| p.rt_ms).collect()
    }

    fn traj(values: &[f64]) -> Vec<TrajectoryPoint> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| TrajectoryPoint {
                version: i.to_string(),
                rt_ms: *v,
            })
            .collect()
    }

    #[test]
    fn trajectory_examples() {
        let m = line(1000.0, 500.0);
        let start = EnvBaseline::at(EnvironmentSpec::reference());
        let adj = EnvAdjustment::default();
        let t = predict_trajectory(&m, 0.0, &plan(&[4.0, 8.0]), &start, &adj).unwrap();
        assert_eq!(rts(&t), vec![3000.0, 7000.0]);
        assert!(predict_trajectory(&m, 0.0, &[], &start, &adj)
            .unwrap()
            .is_empty());
        let t = predict_trajectory(&m, 3.0, &plan(&[0.0, 0.0, 0.0]), &start, &adj).unwrap();
        assert_eq!(rts(&t), vec![2500.0; 3]);
    }

    #[test]
    fn rul_examples() {
        let th = RtThreshold::default();
        let r = estimate_rul(traj(&[3000.0, 5000.0, 7000.0, 9000.0, 11000.0]), th);
        assert_eq!((r.rul_releases, r.censored), (4, false));
        let r = estimate_rul(traj(&[11000.0, 3000.0]), th);
        assert_eq!((r.rul_releases, r.censored), (0, false));
        let r = estimate_rul(traj(&[1.0, 2.0, 3.0]), th);
        assert_eq!((r.rul_releases, r.censored), (3, true));
        // crossing is inclusive
        let r = estimate_rul(traj(&[10000.0]), th);
        assert_eq!(r.rul_releases, 0);
    }

    #[test]
    fn clock_examples() {
        let c = DEFAULT_CLOCK_COEFFICIENT;
        assert!((adjust_clock_speed(10000.0, 1.0, 1.1, c).unwrap() - 8773.0).abs() < 1e-9);
        assert_eq!(adjust_clock_speed(5000.0, 2.0, 2.0, c).unwrap(), 5000.0);
        let expected = 8000.0 * (1.0 - 1.227 * (0.2 / 1.8));
        assert!((adjust_clock_speed(8000.0, 1.8, 2.0, c).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 6909.333333).abs() < 1e-3);
        assert!(matches!(
            adjust_clock_speed(1000.0, 1.0, 2.0, c),
            Err(Error::OutsideCalibratedRange { .. })
        ));
        assert!(adjust_clock_speed(1000.0, 0.0, 2.0, c).is_err());
    }

    #[test]
    fn os_factor_examples() {
        let f = estimate_os_factor(&[(12000.0, 10000.0), (14000.0, 10500.0)]).unwrap();
        assert!((f - (1.2 + 14000.0 / 10500.0) / 2.0).abs() < 1e-12);
        assert!((f - 1.266_666_7).abs() < 1e-6);
        assert_eq!(estimate_os_factor(&[(5.0, 5.0), (7.0, 7.0)]).unwrap(), 1.0);
        assert!((estimate_os_factor(&[(11000.0, 10000.0)]).unwrap() - 1.1).abs() < 1e-12);
        assert!(estimate_os_factor(&[]).is_err());
    }

    #[test]
    fn apply_env_examples() {
        let adj = EnvAdjustment {
            clock_coefficient: DEFAULT_CLOCK_COEFFICIENT,
            os_factor_32_over_64: 1.25,
        };
        let e64 = env(OsBits::Bits64, 1.8);
        assert_eq!(apply_env(1234.5, &e64, &e64, &adj).unwrap(), 1234.5);
        let e32 = env(OsBits::Bits32, 1.8);
        assert_eq!(apply_env(8000.0, &e64, &e32, &adj).unwrap(), 10000.0);
        let up = env(OsBits::Bits64, 2.0);
        let got = apply_env(10000.0, &e32, &up, &adj).unwrap();
        assert!((got - 6909.33).abs() < 0.01);
    }

    #[test]
    fn env_chain_composes_stepwise() {
        let adj = EnvAdjustment::default();
        let start = EnvBaseline::at(env(OsBits::Bits64, 1.8));
        let envs = [
            env(OsBits::Bits64, 1.8),
            env(OsBits::Bits64, 2.0),
            env(OsBits::Bits64, 2.4),
        ];
        let f = env_factor_chain(&start, &envs, &adj).unwrap();
        let step1 = 1.0 - 1.227 * (0.2 / 1.8);
        let step2 = 1.0 - 1.227 * (0.4 / 2.0);
        assert_eq!(f[0], 1.0);
        assert!((f[1] - step1).abs() < 1e-12);
        assert!((f[2] - step1 * step2).abs() < 1e-12);
    }

    #[test]
    fn trajectory_applies_env_per_release() {
        let m = line(1000.0, 500.0);
        let adj = EnvAdjustment::default();
        let start = EnvBaseline::at(EnvironmentSpec::reference());
        let mut p = plan(&[4.0, 8.0]);
        p[1].env.clock_ghz = 2.0;
        let t = predict_trajectory(&m, 0.0, &p, &start, &adj).unwrap();
        assert_eq!(t[0].rt_ms, 3000.0);
        assert!((t[1].rt_ms - 7000.0 * (1.0 - 1.227 * 0.2 / 1.8)).abs() < 1e-9);
    }

    #[test]
    fn csv_export() {
        let r = estimate_rul(traj(&[9000.0, 11000.0]), RtThreshold::default());
        assert_eq!(
            trajectory_to_csv(&r),
            "version,rt_ms,below_threshold\n0,9000,true\n1,11000,false\n"
        );
    }

    #[test]
    fn adjustment_warns_below_one() {
        let adj = EnvAdjustment {
            os_factor_32_over_64: 0.9,
            ..EnvAdjustment::default()
        };
        assert!(adj.validate().unwrap().is_some());
        assert!(EnvAdjustment::default().validate().unwrap().is_none());
    }
}
