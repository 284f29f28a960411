use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spinboson_ml::datapipe::{
    holdout_indices, parameter_grid, read_dataset_csv, read_trajectory_set, split_subtrain, write_dataset_csv,
    write_trajectory_set, Dataset, GridSpec, SplitManifest, SplitTag,
};
use spinboson_ml::forecast::{
    run_benchmark, write_errors_json, write_plot_data, write_report_csv, BenchmarkModel, Forecaster, HoldoutSet,
};
use spinboson_ml::krr::{self, hyperparameter_search, KernelFamily, KernelSpec, KrrModel, SearchOutcome};
use spinboson_ml::nnet::{self, LayerSpec, NetModel, NetSpec, TrainOpts};
use spinboson_ml::pso::{self, round_position, PsoConfig};
use spinboson_ml::refdyn::heom_propagate_report;
use spinboson_ml::{Error, Result};

use crate::config::{is_krr, RunConfig, Seeds};
use crate::manifest::{relative, Manifest, StageRecord};
use crate::{Cli, Command, Failure, GridChoice, OUT_ENV};

const CONFIG_FILE: &str = "config.json";

struct Ctx {
    input: PathBuf,
    out: PathBuf,
    config: RunConfig,
    argv: Vec<String>,
    inputs: Vec<String>,
    artifacts: Vec<PathBuf>,
}

impl Ctx {
    fn read(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    fn wrote(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.config.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::invalid("threads", e.to_string()))
    }

    /// Saves the resolved config and records the stage in the manifest.
    fn finish(mut self, key: String) -> Result<()> {
        let cfg_path = self.out.join(CONFIG_FILE);
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.config)? + "\n")?;
        self.wrote(cfg_path);
        let mut manifest = Manifest::load_or_default(&self.out)?;
        let mut artifacts: Vec<String> = self.artifacts.iter().map(|p| relative(&self.out, p)).collect();
        artifacts.sort();
        artifacts.dedup();
        manifest.record(
            key,
            StageRecord {
                argv: self.argv,
                config_hash: self.config.hash(),
                seeds: self.config.seeds,
                inputs: self.inputs,
                artifacts,
            },
        );
        manifest.save(&self.out)?;
        Ok(())
    }
}

fn default_run_dir() -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join("default")
}

pub(crate) fn dispatch(cli: Cli, argv: Vec<String>) -> std::result::Result<(), Failure> {
    let out = cli.out.clone().or_else(|| cli.input.clone()).unwrap_or_else(default_run_dir);
    let input = cli.input.clone().unwrap_or_else(|| out.clone());
    let mut inputs = Vec::new();
    let mut config = match &cli.config {
        Some(p) => {
            inputs.push(p.display().to_string());
            RunConfig::load(p)?
        }
        None if input.join(CONFIG_FILE).exists() => RunConfig::load(&input.join(CONFIG_FILE))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seeds = Seeds::from_master(s);
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    match &cli.command {
        Command::Generate { grid: Some(g) } => {
            config.grid = match g {
                GridChoice::Full => GridSpec::full(),
                GridChoice::Symmetric => GridSpec::symmetric(),
                GridChoice::Asymmetric => GridSpec::asymmetric(),
            }
        }
        Command::Slice { window: Some(t) } => config.dataset.slice_length = t + 1,
        _ => {}
    }
    config.validate()?;
    fs::create_dir_all(&out).map_err(Error::from)?;
    let mut ctx = Ctx {
        input,
        out,
        config,
        argv,
        inputs,
        artifacts: Vec::new(),
    };
    let key = match cli.command {
        Command::Generate { .. } => {
            generate(&mut ctx)?;
            "generate".to_string()
        }
        Command::Slice { .. } => {
            slice(&mut ctx)?;
            "slice".to_string()
        }
        Command::Search { models } => {
            search(&mut ctx, &models)?;
            format!("search:{}", models.join(","))
        }
        Command::Train { model, samples, epochs } => {
            train(&mut ctx, &model, samples, epochs)?;
            format!("train:{model}")
        }
        Command::Forecast { model, holdout } => {
            forecast(&mut ctx, &[model.clone()], holdout, Some(&model))?;
            format!("forecast:{model}")
        }
        Command::Benchmark { models, holdout } => {
            let models = if models.is_empty() {
                ctx.config.models.iter().map(|m| m.id.clone()).collect()
            } else {
                models
            };
            forecast(&mut ctx, &models, holdout, None)?;
            "benchmark".to_string()
        }
        Command::Report => {
            report(&mut ctx)?;
            "report".to_string()
        }
    };
    ctx.finish(key)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GenerationRow {
    grid_id: usize,
    epsilon: f64,
    lambda: f64,
    omega_c: f64,
    beta: f64,
    split: &'static str,
    depth: usize,
    n_matsubara: usize,
    residual: f64,
    max_trace_error: f64,
    min_eigenvalue: f64,
}

fn generate(ctx: &mut Ctx) -> std::result::Result<(), Failure> {
    let cfg = &ctx.config;
    let points = parameter_grid(&cfg.grid)?;
    let holdout = holdout_indices(points.len(), cfg.dataset.n_holdout, cfg.seeds.holdout)
        .map_err(|e| Error::invalid("dataset.n_holdout", e.to_string()))?;
    log::info!("propagating {} grid points", points.len());
    let done = AtomicUsize::new(0);
    let total = points.len();
    let results: Vec<_> = ctx.pool()?.install(|| {
        points
            .par_iter()
            .map(|p| {
                let r = heom_propagate_report(p, &cfg.hierarchy);
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n % 25 == 0 || n == total {
                    log::info!("{n}/{total} trajectories");
                }
                r
            })
            .collect()
    });
    let mut train = Vec::new();
    let mut held = Vec::new();
    let mut rows = Vec::with_capacity(total);
    for (i, r) in results.into_iter().enumerate() {
        let (traj, rep) = r.map_err(|error| Failure {
            error,
            context: Some(format!("generate: grid point {i} {:?}", points[i])),
        })?;
        let is_holdout = holdout.binary_search(&i).is_ok();
        let p = traj.params;
        rows.push(GenerationRow {
            grid_id: i,
            epsilon: p.epsilon,
            lambda: p.lambda,
            omega_c: p.omega_c,
            beta: p.beta,
            split: if is_holdout { "holdout" } else { "train" },
            depth: rep.depth,
            n_matsubara: rep.n_matsubara,
            residual: rep.residual,
            max_trace_error: rep.max_trace_error,
            min_eigenvalue: rep.min_eigenvalue,
        });
        if is_holdout {
            held.push((i, traj));
        } else {
            train.push((i, traj));
        }
    }
    for (name, set) in [("trajectories", &train), ("holdout", &held)] {
        let dir = ctx.out.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(Error::from)?;
        }
        for p in write_trajectory_set(&dir, set)? {
            ctx.wrote(p);
        }
    }
    let log_path = ctx.out.join("generation.csv");
    let mut w = csv::Writer::from_path(&log_path).map_err(Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    ctx.wrote(log_path);
    log::info!("{} training and {} hold-out trajectories", train.len(), held.len());
    Ok(())
}

fn data_dir(dir: &Path) -> PathBuf {
    dir.join("data")
}

fn slice(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.config.clone();
    let traj_dir = ctx.input.join("trajectories");
    let trajectories = read_trajectory_set(&traj_dir)?;
    ctx.read(&traj_dir);
    let train = Dataset::from_trajectories(
        trajectories.iter().map(|(i, t)| (*i, t)),
        cfg.dataset.slice_length,
        SplitTag::Train,
    )?;
    let (sub, val) = split_subtrain(&train, cfg.dataset.subtrain_fraction, cfg.seeds.split)?;
    let dir = data_dir(&ctx.out);
    fs::create_dir_all(&dir)?;
    let mut manifest = SplitManifest::new(cfg.seeds.split, train.window_length);
    manifest.insert(SplitTag::Train, train.grid_ids());
    manifest.insert(SplitTag::Subtrain, sub.grid_ids());
    manifest.insert(SplitTag::Validation, val.grid_ids());
    let holdout_dir = ctx.input.join("holdout");
    if holdout_dir.exists() {
        let held = read_trajectory_set(&holdout_dir)?;
        manifest.insert(SplitTag::Holdout, held.iter().map(|(i, _)| *i).collect());
    }
    for (name, d) in [("train.csv", &train), ("subtrain.csv", &sub), ("validation.csv", &val)] {
        let p = dir.join(name);
        write_dataset_csv(&p, d)?;
        ctx.wrote(p);
    }
    let p = dir.join("splits.json");
    manifest.save(&p)?;
    ctx.wrote(p);
    log::info!(
        "{} trajectories -> {} samples ({} sub-train, {} validation)",
        trajectories.len(),
        train.len(),
        sub.len(),
        val.len()
    );
    Ok(())
}

fn load_split(ctx: &mut Ctx, tag: SplitTag) -> Result<Dataset> {
    let p = data_dir(&ctx.input).join(format!("{tag}.csv"));
    let d = read_dataset_csv(&p, tag)?;
    ctx.read(&p);
    let t = ctx.config.dataset.window_length();
    if d.window_length != t {
        return Err(Error::shape(format!("window length of {}", p.display()), t, d.window_length));
    }
    Ok(d)
}

fn limit(d: Dataset, n: Option<usize>, seed: u64) -> Dataset {
    match n {
        Some(n) if n < d.len() => d.subsample(n, seed),
        _ => d,
    }
}

fn search(ctx: &mut Ctx, ids: &[String]) -> std::result::Result<(), Failure> {
    for id in ids {
        ctx.config.check_model_id(id)?;
        if !is_krr(id) && id != "cnn1d" {
            return Err(Error::invalid("model id", format!("no search defined for {id}; use a krr id or cnn1d")).into());
        }
    }
    let cfg = ctx.config.clone();
    let sub = load_split(ctx, SplitTag::Subtrain)?;
    let val = load_split(ctx, SplitTag::Validation)?;
    let dir = ctx.out.join("search");
    fs::create_dir_all(&dir).map_err(Error::from)?;

    let krr_ids: Vec<&String> = ids.iter().filter(|id| is_krr(id)).collect();
    if !krr_ids.is_empty() {
        let val = limit(val.clone(), cfg.search.validation_samples, cfg.seeds.search);
        let outcomes: Vec<Result<SearchOutcome>> = ctx.pool()?.install(|| {
            krr_ids
                .par_iter()
                .map(|id| {
                    let family = KernelFamily::from_model_id(id).expect("checked above");
                    hyperparameter_search(&sub, &val, family, &cfg.search.krr, cfg.seeds.search)
                })
                .collect()
        });
        for (id, out) in krr_ids.iter().zip(outcomes) {
            let out = out.map_err(|error| Failure {
                error,
                context: Some(format!("search {id}")),
            })?;
            log::info!("{id}: {:?} lambda {:e} validation MAE {:e}", out.spec, out.lambda_reg, out.mae);
            let p = dir.join(format!("{id}.json"));
            fs::write(&p, serde_json::to_string_pretty(&out).map_err(Error::from)? + "\n").map_err(Error::from)?;
            ctx.wrote(p);
        }
    }
    if ids.iter().any(|id| id == "cnn1d") {
        let (p_json, p_csv) = cnn_search(&cfg, &sub, &val, &dir)?;
        ctx.wrote(p_json);
        ctx.wrote(p_csv);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ConvSearchResult {
    /// `[filters1, kernel1, filters2, kernel2]`
    conv: [usize; 4],
    best_position: Vec<f64>,
    validation_mae: f64,
}

fn cnn_spec(t: usize, conv: [usize; 4]) -> Result<NetSpec> {
    let mut spec = NetSpec::architecture("cnn1d", t)?;
    spec.layers[0] = LayerSpec::conv(conv[0], conv[1]);
    spec.layers[1] = LayerSpec::conv(conv[2], conv[3]);
    Ok(spec)
}

fn cnn_search(cfg: &RunConfig, sub: &Dataset, val: &Dataset, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let o = &cfg.search.pso;
    let seed = cfg.seeds.search;
    let train = limit(sub.clone(), o.train_samples, seed);
    let val = limit(val.clone(), o.validation_samples, seed);
    let t = cfg.dataset.window_length();
    let opts = TrainOpts {
        epochs: o.epochs,
        batch_size: o.batch_size,
        seed: cfg.seeds.shuffle,
        ..cfg.training
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let r = round_position(x);
        let conv = [r[0].max(1), r[1].max(1), r[2].max(1), r[3].max(1)];
        let spec = cnn_spec(t, conv)?;
        if spec.validate().is_err() {
            log::info!("pso candidate {conv:?}: invalid for window {t}");
            return Ok(f64::INFINITY);
        }
        let mut model = NetModel::new(spec, cfg.seeds.init)?;
        match nnet::train(&mut model, &train, Some(&val), &opts) {
            Ok(out) => {
                let mae = out.history.last().map_or(f64::INFINITY, |h| h.val_mae);
                log::info!("pso candidate {conv:?}: validation MAE {mae:e}");
                Ok(mae)
            }
            Err(Error::NonFinite { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let pso_cfg = PsoConfig {
        n_particles: o.n_particles,
        n_generations: o.n_generations,
        bounds: o.bounds.clone(),
        seed,
        stochastic: o.stochastic,
        ..PsoConfig::new(o.bounds.clone())
    };
    let result = pso::pso_optimize(objective, &pso_cfg)?;
    let r = round_position(&result.best_position);
    let best = ConvSearchResult {
        conv: [r[0], r[1], r[2], r[3]],
        best_position: result.best_position.clone(),
        validation_mae: result.best_fitness,
    };
    let p_csv = dir.join("cnn1d_pso.csv");
    pso::write_history_csv(&p_csv, &result)?;
    let p_json = dir.join("cnn1d.json");
    fs::write(&p_json, serde_json::to_string_pretty(&best)? + "\n")?;
    Ok((p_json, p_csv))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    id: String,
    file: String,
    parameters: usize,
    train_samples: usize,
    training_time_s: f64,
    #[serde(default)]
    kernel: Option<KernelSpec>,
    #[serde(default)]
    lambda_reg: Option<f64>,
    #[serde(default)]
    final_val_mse: Option<f64>,
}

fn models_dir(dir: &Path) -> PathBuf {
    dir.join("models")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn train(ctx: &mut Ctx, id: &str, samples: Option<usize>, epochs: Option<usize>) -> Result<()> {
    ctx.config.check_model_id(id)?;
    if let Some(e) = epochs {
        ctx.config.training.epochs = e;
        ctx.config.validate()?;
    }
    let cfg = ctx.config.clone();
    let mc = cfg.model(id);
    let dir = models_dir(&ctx.out);
    fs::create_dir_all(&dir)?;
    let seed = cfg.seeds.subsample;
    let meta = if is_krr(id) {
        let (spec, lambda_reg) = match (mc.kernel, mc.lambda_reg) {
            (Some(k), Some(l)) => (k, l),
            _ => {
                let p = ctx.input.join("search").join(format!("{id}.json"));
                if !p.exists() {
                    return Err(Error::invalid(
                        format!("models.{id}.kernel"),
                        "not set and no search result; run `search` first or set kernel and lambda_reg",
                    ));
                }
                let s: SearchOutcome = read_json(&p)?;
                ctx.read(&p);
                (mc.kernel.unwrap_or(s.spec), mc.lambda_reg.unwrap_or(s.lambda_reg))
            }
        };
        if KernelFamily::from_model_id(&spec.model_id()) != KernelFamily::from_model_id(id) {
            return Err(Error::invalid(
                format!("models.{id}.kernel"),
                format!("kernel {} does not match the model id", spec.model_id()),
            ));
        }
        let data = load_split(ctx, SplitTag::Train)?;
        let data = limit(data, samples.or(mc.train_samples).or(cfg.dataset.krr_train_samples), seed);
        log::info!("fitting {id} on {} samples", data.len());
        let start = Instant::now();
        let model = krr::krr_train(&data, spec, lambda_reg)?;
        let elapsed = start.elapsed();
        let p = dir.join(format!("{id}.krr"));
        krr::save_model(&p, &model)?;
        ctx.wrote(p);
        ModelMeta {
            id: id.into(),
            file: format!("{id}.krr"),
            parameters: model.alphas.len(),
            train_samples: data.len(),
            training_time_s: elapsed.as_secs_f64(),
            kernel: Some(spec),
            lambda_reg: Some(lambda_reg),
            final_val_mse: None,
        }
    } else {
        let t = cfg.dataset.window_length();
        let conv = match mc.conv {
            Some(c) => Some(c),
            None if id == "cnn1d" => {
                let p = ctx.input.join("search").join("cnn1d.json");
                if p.exists() {
                    ctx.read(&p);
                    Some(read_json::<ConvSearchResult>(&p)?.conv)
                } else {
                    None
                }
            }
            None => None,
        };
        let spec = match conv {
            Some(c) if id == "cnn1d" => cnn_spec(t, c)?,
            Some(_) => return Err(Error::invalid(format!("models.{id}.conv"), "only applies to cnn1d")),
            None => NetSpec::architecture(id, t)?,
        };
        let sub = load_split(ctx, SplitTag::Subtrain)?;
        let val = load_split(ctx, SplitTag::Validation)?;
        let sub = limit(sub, samples.or(mc.train_samples).or(cfg.dataset.nn_train_samples), seed);
        let val = limit(val, cfg.dataset.nn_validation_samples, seed);
        let mut model = NetModel::new(spec, cfg.seeds.init)?;
        log::info!(
            "training {id} ({} parameters) on {} samples, {} validation",
            model.parameter_count(),
            sub.len(),
            val.len()
        );
        let opts = TrainOpts {
            seed: cfg.seeds.shuffle,
            ..cfg.training
        };
        let outcome = nnet::train(&mut model, &sub, Some(&val), &opts)?;
        let p = dir.join(format!("{id}.net"));
        nnet::save_model(&p, &model)?;
        ctx.wrote(p);
        let h = dir.join(format!("{id}_history.csv"));
        nnet::write_history_csv(&h, &outcome.history)?;
        ctx.wrote(h);
        ModelMeta {
            id: id.into(),
            file: format!("{id}.net"),
            parameters: model.parameter_count(),
            train_samples: sub.len(),
            training_time_s: outcome.wall_time.as_secs_f64(),
            kernel: None,
            lambda_reg: None,
            final_val_mse: outcome.history.last().map(|s| s.val_mse),
        }
    };
    let p = dir.join(format!("{id}.json"));
    fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n")?;
    ctx.wrote(p);
    log::info!("{id}: trained in {:.3} s", meta.training_time_s);
    Ok(())
}

enum Loaded {
    Krr(KrrModel),
    Net(NetModel),
}

impl Loaded {
    fn forecaster(&self) -> &dyn Forecaster {
        match self {
            Loaded::Krr(m) => m,
            Loaded::Net(m) => m,
        }
    }
}

fn load_trained(ctx: &mut Ctx, id: &str) -> Result<(Loaded, Option<Duration>)> {
    ctx.config.check_model_id(id)?;
    let dir = models_dir(&ctx.input);
    let model = if is_krr(id) {
        let p = dir.join(format!("{id}.krr"));
        let m = Loaded::Krr(krr::load_model(&p)?);
        ctx.read(&p);
        m
    } else {
        let p = dir.join(format!("{id}.net"));
        let m = Loaded::Net(nnet::load_model(&p)?);
        ctx.read(&p);
        m
    };
    let meta = dir.join(format!("{id}.json"));
    let time = if meta.exists() {
        ctx.read(&meta);
        Some(Duration::from_secs_f64(read_json::<ModelMeta>(&meta)?.training_time_s))
    } else {
        None
    };
    Ok((model, time))
}

/// Hold-out trajectories grouped into symmetric (ε = 0) and asymmetric sets.
fn holdout_sets(dir: &Path) -> Result<Vec<HoldoutSet>> {
    let trajs = read_trajectory_set(dir)?;
    let (sym, asym): (Vec<_>, Vec<_>) = trajs.into_iter().map(|(_, t)| t).partition(|t| t.params.epsilon == 0.0);
    let sets: Vec<HoldoutSet> = [("symmetric", sym), ("asymmetric", asym)]
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(name, trajectories)| HoldoutSet {
            name: name.into(),
            trajectories,
        })
        .collect();
    if sets.is_empty() {
        return Err(Error::invalid("holdout", format!("{} holds no trajectories", dir.display())));
    }
    Ok(sets)
}

/// Shared by `forecast` (one model, `forecast/<id>/`) and `benchmark`.
fn forecast(ctx: &mut Ctx, ids: &[String], holdout: Option<PathBuf>, single: Option<&str>) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::invalid("models", "no models given; pass --models or list them in the config"));
    }
    let holdout = holdout.unwrap_or_else(|| ctx.input.join("holdout"));
    let sets = holdout_sets(&holdout)?;
    ctx.read(&holdout);
    let mut loaded = Vec::with_capacity(ids.len());
    for id in ids {
        loaded.push(load_trained(ctx, id)?);
    }
    let models: Vec<BenchmarkModel> = loaded
        .iter()
        .map(|(m, time)| BenchmarkModel {
            forecaster: m.forecaster(),
            training_time: *time,
        })
        .collect();
    let report = run_benchmark(&models, &sets, &ctx.config.benchmark)?;
    for r in &report.rows {
        let maes: Vec<String> = r.mae.iter().map(|(s, m)| format!("{s} {m:e}")).collect();
        log::info!("{}: MAE {}", r.model, maes.join(", "));
    }
    let dir = match single {
        Some(id) => ctx.out.join("forecast").join(id),
        None => ctx.out.join("benchmark"),
    };
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let p = dir.join("report.csv");
    write_report_csv(&p, &report)?;
    ctx.wrote(p);
    let p = dir.join("errors.json");
    write_errors_json(&p, &report)?;
    ctx.wrote(p);
    for p in write_plot_data(&dir.join("plots"), &report)? {
        ctx.wrote(p);
    }
    Ok(())
}

fn report(ctx: &mut Ctx) -> Result<()> {
    let src = ctx.input.join("benchmark").join("report.csv");
    if !src.exists() {
        return Err(Error::MissingInput(src));
    }
    ctx.read(&src);
    let mut rdr = csv::Reader::from_path(&src)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut md = String::new();
    md.push_str(&format!("| {} |\n", headers.join(" | ")));
    md.push_str(&format!("|{}\n", " --- |".repeat(headers.len())));
    for rec in rdr.records() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().map(|c| if c.is_empty() { "-" } else { c }).collect();
        md.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    print!("{md}");
    let p = ctx.out.join("report.md");
    fs::write(&p, md)?;
    ctx.wrote(p);
    Ok(())
}
