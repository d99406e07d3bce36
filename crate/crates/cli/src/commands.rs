use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use swphm_core::classify::{tokenize, NbModel};
use swphm_core::ingest::{
    backlog_to_json, parse_backlog, parse_measurements_as, parse_os_pairs, releases_to_json, Format,
};
use swphm_core::model::{BacklogItem, Dataset, OsBits};
use swphm_core::pipeline::{
    adjust, backlog_map, best_plan_file, cluster_releases, evaluate_plan_file, predict, summarize,
    train, train_item_classifier, AdjustRequest, EnvPoint, LabelField, PlanFile, TrainOptions,
    TrainedModel,
};
use swphm_core::plan::Strategy;
use swphm_core::prognosis::{
    estimate_os_factor, trajectory_to_csv, EnvAdjustment, RtThreshold, DEFAULT_CLOCK_COEFFICIENT,
};
use swphm_core::sim::{generate_dataset, write_sim_output, SimConfig};
use swphm_core::weighting::{weigh_releases, weights_to_csv, Estimators, ImpactTable};

use crate::{
    ClassifyAction, Cli, Command, DatasetArgs, FileFormat, LabelArg, OutputArgs, PlanArgs,
    StrategyArg, UsageError, WeightArgs,
};

const DEFAULT_SEED: u64 = 42;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest { data, out_dir, out } => {
            let dataset = load(&data)?;
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let (items, releases) = dataset.clone().into_parts();
                write_file(
                    &dir.join("backlog.json"),
                    &(backlog_to_json(&items)? + "\n"),
                )?;
                write_file(
                    &dir.join("releases.json"),
                    &(releases_to_json(&releases)? + "\n"),
                )?;
            }
            emit_json(&out, &summarize(&dataset))
        }
        Command::Classify { action } => classify(action),
        Command::Weigh {
            data,
            weights,
            format,
            out,
        } => {
            let dataset = load(&data)?;
            let (table, estimators) = weight_inputs(&weights)?;
            let rows: Vec<_> = weigh_releases(&dataset, &table, &estimators)?
                .into_iter()
                .map(|(w, _)| w)
                .collect();
            match format {
                FileFormat::Json => emit_json(&out, &rows),
                FileFormat::Csv => emit(&out, &weights_to_csv(&rows)?),
            }
        }
        Command::Cluster {
            data,
            weights,
            k,
            k_max,
            out,
        } => {
            let dataset = load(&data)?;
            let (table, estimators) = weight_inputs(&weights)?;
            let seed = seed.unwrap_or(DEFAULT_SEED);
            emit_json(
                &out,
                &cluster_releases(&dataset, &table, &estimators, k, k_max, seed)?,
            )
        }
        Command::Train {
            data,
            weights,
            model_out,
            os_factor,
            os_pairs,
            clock_coefficient,
            train_fraction,
            k_max,
            no_cluster,
            out,
        } => {
            let dataset = load(&data)?;
            let (impact_table, estimators) = weight_inputs(&weights)?;
            let os_factor = match (os_factor, os_pairs) {
                (Some(f), _) => f,
                (None, Some(path)) => estimate_os_factor(&parse_os_pairs(&path)?)?,
                (None, None) => EnvAdjustment::default().os_factor_32_over_64,
            };
            let adjustment = EnvAdjustment {
                clock_coefficient: clock_coefficient.unwrap_or(DEFAULT_CLOCK_COEFFICIENT),
                os_factor_32_over_64: os_factor,
            };
            if let Some(warning) = adjustment.validate()? {
                eprintln!("warning: {warning}");
            }
            let opts = TrainOptions {
                impact_table,
                adjustment,
                seed: seed.unwrap_or(DEFAULT_SEED),
                train_fraction,
                k_max,
                cluster: !no_cluster,
            };
            let model = train(&dataset, estimators, &opts)?;
            write_file(&model_out, &to_json(&model)?)?;
            emit_json(&out, &TrainReport::from(&model))
        }
        Command::Predict { model, cpv, out } => {
            let model: TrainedModel = read_json(&model)?;
            emit_json(&out, &predict(&model, cpv)?)
        }
        Command::Rul { plan, out } => {
            let (model, backlog, plan_file, threshold) = plan_inputs(&plan)?;
            let result = evaluate_plan_file(&model, &backlog, &plan_file, threshold)?;
            if let Some(path) = &plan.trajectory_csv {
                write_file(path, &trajectory_to_csv(&result.rul))?;
            }
            emit_json(&out, &result.rul)
        }
        Command::Plan {
            plan,
            strategy,
            out,
        } => {
            let (model, backlog, mut plan_file, threshold) = plan_inputs(&plan)?;
            if let Some(s) = strategy {
                plan_file.strategy = match s {
                    StrategyArg::Exhaustive => Strategy::Exhaustive,
                    StrategyArg::Greedy => Strategy::Greedy,
                };
            }
            let result = best_plan_file(&model, &backlog, &plan_file, threshold)?;
            if let Some(path) = &plan.trajectory_csv {
                write_file(path, &trajectory_to_csv(&result.rul))?;
            }
            emit_json(&out, &result)
        }
        Command::Adjust {
            rt,
            from_ghz,
            to_ghz,
            from_bits,
            to_bits,
            os_factor,
            clock_coefficient,
            model,
            pairs,
            out,
        } => {
            if let Some(path) = pairs {
                let pairs = parse_os_pairs(&path)?;
                let factor = estimate_os_factor(&pairs)?;
                return emit_json(
                    &out,
                    &serde_json::json!({ "os_factor": factor, "pairs": pairs.len() }),
                );
            }
            let defaults = match model {
                Some(path) => read_json::<TrainedModel>(&path)?.adjustment,
                None => EnvAdjustment::default(),
            };
            let bits = |b: Option<String>| -> Option<OsBits> {
                b.map(|b| {
                    if b == "32" {
                        OsBits::Bits32
                    } else {
                        OsBits::Bits64
                    }
                })
            };
            let (Some(rt), Some(from_ghz), Some(to_ghz)) = (rt, from_ghz, to_ghz) else {
                return Err(UsageError("--rt, --from-ghz and --to-ghz are required".into()).into());
            };
            let req = AdjustRequest {
                rt_ms: rt,
                from: EnvPoint {
                    clock_ghz: from_ghz,
                    os_bits: bits(from_bits),
                },
                to: EnvPoint {
                    clock_ghz: to_ghz,
                    os_bits: bits(to_bits),
                },
                os_factor,
                clock_coefficient,
            };
            emit_json(&out, &adjust(&req, &defaults)?)
        }
        Command::Simulate { config, out_dir } => {
            let mut cfg: SimConfig = match config {
                Some(path) => read_json(&path)?,
                None => SimConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = generate_dataset(&cfg)?;
            write_sim_output(&output, &out_dir)?;
            Ok(())
        }
        Command::Serve {
            host,
            port,
            state_dir,
            cors_origin,
        } => serve(
            &host,
            port,
            state_dir.as_deref(),
            cors_origin.as_deref(),
            seed,
        ),
    }
}

fn classify(action: ClassifyAction) -> Result<()> {
    match action {
        ClassifyAction::Train {
            backlog,
            label,
            alpha,
            out,
        } => {
            let items = parse_backlog(&backlog, Format::from_path(&backlog))?;
            let field = match label {
                LabelArg::Kind => LabelField::Kind,
                LabelArg::Severity => LabelField::Severity,
                LabelArg::StoryPoints => LabelField::StoryPoints,
            };
            emit_json(&out, &train_item_classifier(&items, field, alpha)?)
        }
        ClassifyAction::Apply {
            model,
            backlog,
            out,
        } => {
            let model: NbModel = read_json(&model)?;
            model.validate()?;
            let items = parse_backlog(&backlog, Format::from_path(&backlog))?;
            let rows: Vec<ItemLabel> = items
                .iter()
                .map(|item| {
                    let c = model.classify(&tokenize(&item.text()));
                    ItemLabel {
                        id: item.id.clone(),
                        label: c.label,
                        posteriors: model.classes.iter().cloned().zip(c.posteriors).collect(),
                        no_evidence: c.no_evidence,
                    }
                })
                .collect();
            emit_json(&out, &rows)
        }
    }
}

#[derive(Serialize)]
struct ItemLabel {
    id: String,
    label: String,
    posteriors: BTreeMap<String, f64>,
    no_evidence: bool,
}

/// Summary statistics printed by `train`; the full model goes to a file.
#[derive(Serialize)]
struct TrainReport<'a> {
    n: usize,
    slope: f64,
    intercept: f64,
    r: f64,
    r_squared: f64,
    adj_r_squared: f64,
    p_value: f64,
    residual_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    holdout: Option<&'a swphm_core::pipeline::HoldoutReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loo_mae_ms: Option<f64>,
    clusters: usize,
    current_cpv: f64,
    last_version: &'a str,
    os_factor: f64,
    clock_coefficient: f64,
}

impl<'a> From<&'a TrainedModel> for TrainReport<'a> {
    fn from(m: &'a TrainedModel) -> Self {
        TrainReport {
            n: m.global.n,
            slope: m.global.slope,
            intercept: m.global.intercept,
            r: m.correlation.r,
            r_squared: m.global.r_squared,
            adj_r_squared: m.global.adj_r_squared,
            p_value: m.global.slope_p_value,
            residual_std: m.global.residual_std,
            holdout: m.holdout.as_ref(),
            loo_mae_ms: m.loo_mae_ms,
            clusters: m.clusters.as_ref().map_or(1, |c| c.models.len()),
            current_cpv: m.current_cpv,
            last_version: &m.last_version,
            os_factor: m.adjustment.os_factor_32_over_64,
            clock_coefficient: m.adjustment.clock_coefficient,
        }
    }
}

fn serve(
    host: &str,
    port: u16,
    state_dir: Option<&Path>,
    cors_origin: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let defaults = TrainOptions {
        seed: seed.unwrap_or(DEFAULT_SEED),
        ..TrainOptions::default()
    };
    let state = match state_dir {
        Some(dir) => swphm_server::AppState::open(dir, defaults)?,
        None => swphm_server::AppState::new(defaults),
    };
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        swphm_server::serve(listener, Arc::new(state), cors_origin).await?;
        Ok(())
    })
}

fn format_of(arg: Option<FileFormat>, path: &Path) -> Format {
    match arg {
        Some(FileFormat::Json) => Format::Json,
        Some(FileFormat::Csv) => Format::Csv,
        None => Format::from_path(path),
    }
}

fn load(args: &DatasetArgs) -> Result<Dataset> {
    let items = parse_backlog(&args.backlog, format_of(args.input_format, &args.backlog))?;
    let releases =
        parse_measurements_as(&args.releases, format_of(args.input_format, &args.releases))?;
    Ok(Dataset::new(items, releases)?)
}

fn weight_inputs(args: &WeightArgs) -> Result<(ImpactTable, Estimators)> {
    let table = match &args.impact_table {
        Some(path) => ImpactTable::from_json(&read_text(path)?)?,
        None => ImpactTable::default(),
    };
    let estimators = Estimators {
        severity: args.severity_model.as_deref().map(read_json).transpose()?,
        story_points: args
            .story_points_model
            .as_deref()
            .map(read_json)
            .transpose()?,
    };
    Ok((table, estimators))
}

fn plan_inputs(
    args: &PlanArgs,
) -> Result<(
    TrainedModel,
    BTreeMap<String, BacklogItem>,
    PlanFile,
    RtThreshold,
)> {
    let threshold = RtThreshold::from_seconds(args.threshold)?;
    let model: TrainedModel = read_json(&args.model)?;
    let plan: PlanFile = read_json(&args.plan)?;
    let backlog = match &args.backlog {
        Some(path) => backlog_map(parse_backlog(path, Format::from_path(path))?),
        None => model.open_backlog_map(),
    };
    Ok((model, backlog, plan, threshold))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| swphm_core::Error::io(path, e).into())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(swphm_core::Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| swphm_core::Error::io(path, e).into())
}

fn emit(out: &OutputArgs, text: &str) -> Result<()> {
    match &out.output {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: &OutputArgs, value: &T) -> Result<()> {
    emit(out, &to_json(value)?)
}
