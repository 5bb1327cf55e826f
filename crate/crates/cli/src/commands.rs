//! The five pipeline commands. Each writes its artifacts under the output
//! directory and returns their paths for the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use windsr_core::baselines::Regressor;
use windsr_core::checkpoint::{Checkpoint, GridMeta, Predictor};
use windsr_core::datapipe::{
    context_frames, inference_t0s, prefetch, store_paths, synth_generate, Batch, BatchGenerator,
    BatchMode, BatchSpec, DatasetPair, DatasetStore, Role,
};
use windsr_core::diffusion::{DiffusionNet, OracleDenoiser, Trainer};
use windsr_core::ensemble::ensemble_sample;
use windsr_core::grids::{bilinear_resample, Field, FieldSeries, Grid2D, Units};
use windsr_core::metrics::{
    mean_ssim_map, mse, write_map_csv, write_map_pgm, MetricReport, ModelMetrics,
};
use windsr_core::models::{ModelSpec, PredictorKind, Tensor};
use windsr_core::validation::{
    build_validation_set, parse_observations, prepare_observations, score, Product, ScoreTable,
};
use windsr_core::{Error, Result};

use crate::config::RunConfig;

pub const CHECKPOINT_NAME: &str = "checkpoint.wsr";
pub const TRAIN_LOG_NAME: &str = "train_log.csv";
pub const PREDICTION_NAME: &str = "prediction";
pub const SAMPLE_INFO_NAME: &str = "sample_info.json";

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("{what} is not set")))
}

fn store_files(path: &Path) -> Vec<PathBuf> {
    let (bin, json) = store_paths(path);
    vec![bin, json]
}

fn open_store(path: &Path, what: &str) -> Result<DatasetStore> {
    let (bin, _) = store_paths(path);
    if !bin.exists() {
        return Err(Error::Config(format!(
            "{what} {} does not exist",
            bin.display()
        )));
    }
    DatasetStore::open(path)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = cfg.out_dir();
    create_out(&out)?;
    let s = synth_generate(&cfg.synth, &out)?;
    let mut files = Vec::new();
    for store in [
        Some(&s.train_lr),
        Some(&s.train_hr),
        s.test_lr.as_ref(),
        s.test_hr.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        files.extend(store_files(store.path()));
    }
    let config = out.join("synth_config.json");
    fs::write(&config, serde_json::to_string_pretty(&cfg.synth)? + "\n")
        .map_err(|e| Error::io(&config, e))?;
    files.push(config);
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

enum Learner {
    Diffusion(Trainer),
    Regression(Regressor),
}

impl Learner {
    fn set_epoch(&mut self, e: usize) {
        match self {
            Learner::Diffusion(t) => t.set_epoch(e),
            Learner::Regression(r) => r.set_epoch(e),
        }
    }

    fn step(&mut self, batch: &Batch) -> Result<f64> {
        match self {
            Learner::Diffusion(t) => t.train_step(&batch.cond, &batch.target),
            Learner::Regression(r) => r.train_step(batch),
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        match self {
            Learner::Diffusion(t) => Checkpoint::from_diffusion(t.net()),
            Learner::Regression(r) => Checkpoint::from_model(r.model()),
        }
    }
}

/// Trains the configured predictor; writes the checkpoint and the loss log.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let lr = open_store(
        require(&cfg.paths.lr_store, "paths.lr_store")?,
        "low-res store",
    )?;
    let hr = open_store(
        require(&cfg.paths.hr_store, "paths.hr_store")?,
        "high-res store",
    )?;
    let (lr_grid, hr_grid) = (*lr.grid(), *hr.grid());
    let (lr_max, hr_max) = (lr.norm_max(), hr.norm_max());
    let out = cfg.out_dir();
    create_out(&out)?;
    let tc = cfg.train.clone();
    let gen = BatchGenerator::new(
        DatasetPair::new(lr, hr),
        BatchSpec {
            batch_size: tc.batch_size,
            mode: BatchMode::Random,
            seed: tc.seed,
        },
    )?;
    let mut learner = match &cfg.model {
        ModelSpec::DiffusionUnet(spec) => {
            let net = DiffusionNet::new(spec.clone(), tc.seed, cfg.output)?;
            Learner::Diffusion(Trainer::new(net, tc.clone())?)
        }
        other => Learner::Regression(Regressor::new(other, lr_grid, hr_grid, tc.clone())?),
    };
    log::info!(
        "training {} on {} windows, {} batches per epoch",
        cfg.model.kind().name(),
        gen.valid_t0s().len(),
        gen.batches_per_epoch()
    );
    let mut records = Vec::new();
    for epoch in 0..tc.epochs {
        learner.set_epoch(epoch);
        let start = Instant::now();
        let mut sum = 0.0;
        let mut n = 0usize;
        for batch in prefetch(gen.epoch(epoch as u64), 2) {
            let loss = learner.step(&batch?)?;
            records.push(LossRecord {
                epoch,
                step: records.len(),
                loss,
            });
            sum += loss;
            n += 1;
        }
        log::info!(
            "epoch {epoch}: mean loss {:.5} ({:.1}s)",
            sum / n.max(1) as f64,
            start.elapsed().as_secs_f64()
        );
    }

    let log_path = out.join(TRAIN_LOG_NAME);
    let mut w = csv::Writer::from_path(&log_path).map_err(Error::from)?;
    for r in &records {
        w.serialize(r).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;

    let mut ck = learner.checkpoint();
    ck.header.lr_norm_max = lr_max;
    ck.header.hr_norm_max = hr_max;
    ck.header.hr_grid = Some(GridMeta::of(&hr_grid));
    ck.header.train = Some(tc.clone());
    ck.header.epochs_completed = tc.epochs;
    let ck_path = cfg
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_NAME));
    ck.save(&ck_path)?;
    Ok(vec![log_path, ck_path])
}

/// Summary of a sampling run, read back by `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub model: String,
    pub members: Option<usize>,
    pub steps: Option<usize>,
    pub seed: u64,
    pub windows: usize,
    pub skipped: usize,
    pub member_stores: Vec<String>,
}

#[allow(clippy::large_enum_variant)]
enum Sampler {
    Diffusion(DiffusionNet<f32>),
    Oracle(DatasetStore),
    Regression(Regressor),
}

fn member_name(k: usize) -> String {
    format!("{PREDICTION_NAME}_member_{k:02}")
}

/// Downscales every window of the low-res store that has full context.
pub fn cmd_sample(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ck_path = require(&cfg.paths.checkpoint, "paths.checkpoint")?;
    if !ck_path.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} does not exist",
            ck_path.display()
        )));
    }
    let ck = Checkpoint::load(ck_path)?;
    let lr = open_store(
        require(&cfg.paths.lr_store, "paths.lr_store")?,
        "low-res store",
    )?;
    let out = cfg.out_dir();
    create_out(&out)?;

    let (sampler, hr_grid, hr_max) = match &ck.header.predictor {
        Predictor::Oracle { targets } => {
            let t = open_store(targets, "oracle target store")?;
            let (g, m) = (*t.grid(), t.norm_max());
            (Sampler::Oracle(t), g, m)
        }
        Predictor::Network { model, .. } => {
            let grid = match (&ck.header.hr_grid, &cfg.paths.hr_store) {
                (Some(g), _) => g.grid()?,
                (None, Some(p)) => *open_store(p, "high-res store")?.grid(),
                (None, None) => {
                    return Err(Error::Config(
                        "checkpoint has no high-res grid; set paths.hr_store".into(),
                    ))
                }
            };
            let sampler = if model.kind() == PredictorKind::DiffusionUnet {
                Sampler::Diffusion(ck.diffusion_net()?)
            } else {
                let tc = ck.header.train.clone().unwrap_or_default();
                Sampler::Regression(Regressor::from_model(ck.model()?, *lr.grid(), grid, tc)?)
            };
            (sampler, grid, ck.header.hr_norm_max)
        }
    };

    let t0s = inference_t0s(&lr);
    let marks = lr
        .times()
        .iter()
        .filter(|t| t.timestamp() % (3 * 3600) == 0)
        .count();
    let skipped = marks - t0s.len();
    if skipped > 0 {
        log::info!("skipping {skipped} windows without full context");
    }
    if t0s.is_empty() {
        return Err(Error::EmptyDataset(
            "no window of the low-res store has full context".into(),
        ));
    }
    for pair in t0s.windows(2) {
        if pair[1] - pair[0] != Duration::hours(3) {
            return Err(Error::Data(
                "windows with full context are not contiguous".into(),
            ));
        }
    }

    let ens = cfg.sampling.ensemble();
    ens.validate()?;
    let keep = cfg.sampling.keep_members && !matches!(sampler, Sampler::Regression(_));
    let chunk = match sampler {
        Sampler::Regression(_) => cfg.train.batch_size.max(1),
        _ => (ens.max_batch / ens.members).max(1),
    };
    let mut frames: Vec<Field> = Vec::with_capacity(t0s.len());
    let mut member_frames: Vec<Vec<Field>> = vec![Vec::new(); if keep { ens.members } else { 0 }];
    let started = Instant::now();
    for (ci, c) in t0s.chunks(chunk).enumerate() {
        let batch = conditioning_batch(&lr, c, &hr_grid)?;
        let (mean, members) = match &sampler {
            Sampler::Diffusion(net) => {
                let o = ensemble_sample(net, &batch.cond, &ens, keep)?;
                (o.mean, o.members)
            }
            Sampler::Oracle(targets) => {
                let mut data = Vec::with_capacity(c.len() * hr_grid.len());
                for &t in c {
                    let i = targets.index_of(t).ok_or_else(|| {
                        Error::Boundary(format!("oracle store has no frame at {t}"))
                    })?;
                    data.extend(targets.read_normalized(i)?.into_vec());
                }
                let oracle = OracleDenoiser::new(Tensor::from_vec(
                    [c.len(), 1, hr_grid.rows(), hr_grid.cols()],
                    data,
                )?)?;
                let o = ensemble_sample(&oracle, &batch.cond, &ens, keep)?;
                (o.mean, o.members)
            }
            Sampler::Regression(r) => (r.predict(&batch)?, Vec::new()),
        };
        frames.extend(tensor_fields(&mean, &hr_grid)?);
        for (k, m) in members.iter().enumerate() {
            member_frames[k].extend(tensor_fields(m, &hr_grid)?);
        }
        if ci % 10 == 9 {
            log::info!(
                "sampled {} of {} windows ({:.0}s)",
                frames.len(),
                t0s.len(),
                started.elapsed().as_secs_f64()
            );
        }
    }

    let mut files = Vec::new();
    let pred = out.join(PREDICTION_NAME);
    DatasetStore::create(
        &pred,
        &FieldSeries::new(t0s[0], 3, frames)?,
        Some(Role::HighRes),
        hr_max,
    )?;
    files.extend(store_files(&pred));
    let mut member_stores = Vec::new();
    for (k, m) in member_frames.into_iter().enumerate() {
        let p = out.join(member_name(k));
        DatasetStore::create(
            &p,
            &FieldSeries::new(t0s[0], 3, m)?,
            Some(Role::HighRes),
            hr_max,
        )?;
        files.extend(store_files(&p));
        member_stores.push(member_name(k));
    }
    let kind = ck.kind().map_or("oracle", PredictorKind::name);
    let is_ensemble = !matches!(sampler, Sampler::Regression(_));
    let info = SampleInfo {
        model: kind.to_string(),
        members: is_ensemble.then_some(ens.members),
        steps: is_ensemble.then_some(ens.steps),
        seed: ens.base_seed,
        windows: t0s.len(),
        skipped,
        member_stores,
    };
    let info_path = out.join(SAMPLE_INFO_NAME);
    fs::write(&info_path, serde_json::to_string_pretty(&info)? + "\n")
        .map_err(|e| Error::io(&info_path, e))?;
    files.push(info_path);
    Ok(files)
}

fn conditioning_batch(lr: &DatasetStore, t0s: &[DateTime<Utc>], hr_grid: &Grid2D) -> Result<Batch> {
    let (mut cond, mut native) = (Vec::new(), Vec::new());
    for &t in t0s {
        for f in context_frames(lr, t)? {
            cond.extend(bilinear_resample(&f, hr_grid)?.into_vec());
            native.extend(f.into_vec());
        }
    }
    let n = t0s.len();
    let lg = lr.grid();
    Ok(Batch {
        t0s: t0s.to_vec(),
        cond: Tensor::from_vec([n, 4, hr_grid.rows(), hr_grid.cols()], cond)?,
        target: Tensor::zeros([n, 1, hr_grid.rows(), hr_grid.cols()]),
        lr: Tensor::from_vec([n, 4, lg.rows(), lg.cols()], native)?,
    })
}

fn tensor_fields(t: &Tensor<f32>, grid: &Grid2D) -> Result<Vec<Field>> {
    (0..t.n())
        .map(|i| Field::from_vec(*grid, t.sample(i).to_vec(), Units::Normalized))
        .collect()
}

/// Normalised frames of `store` at `times`, failing on any missing time.
fn frames_at(store: &DatasetStore, times: &[DateTime<Utc>], what: &str) -> Result<Vec<Field>> {
    times
        .iter()
        .map(|&t| {
            let i = store
                .index_of(t)
                .ok_or_else(|| Error::Alignment(format!("{what} has no frame at {t}")))?;
            store.read_normalized(i)
        })
        .collect()
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Scores prediction stores (and the bilinear baseline) against the truth.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let truth = open_store(
        require(&cfg.paths.hr_store, "paths.hr_store")?,
        "truth store",
    )?;
    let hr_max = truth
        .norm_max()
        .ok_or_else(|| Error::Config("truth store has no norm_max".into()))?;
    let lr = match &cfg.paths.lr_store {
        Some(p) if cfg.metrics.bilinear => Some(open_store(p, "low-res store")?),
        _ => None,
    };
    if cfg.paths.predictions.is_empty() && lr.is_none() {
        return Err(Error::Config(
            "nothing to evaluate: set paths.predictions or paths.lr_store".into(),
        ));
    }
    let out = cfg.out_dir();
    create_out(&out)?;
    let m = &cfg.metrics;
    m.ssim.validate()?;

    let preds = cfg
        .paths
        .predictions
        .iter()
        .map(|np| {
            Ok((
                np,
                open_store(&np.path, &format!("prediction {}", np.name))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let times = match (preds.first(), &lr) {
        (Some((_, p)), _) => p.times(),
        (None, Some(l)) => inference_t0s(l)
            .into_iter()
            .filter(|&t| truth.index_of(t).is_some())
            .collect(),
        (None, None) => unreachable!(),
    };
    for (np, p) in &preds {
        if p.times() != times {
            return Err(Error::Alignment(format!(
                "prediction {} covers different times",
                np.name
            )));
        }
    }
    if times.is_empty() {
        return Err(Error::Alignment(
            "no common times between predictions and truth".into(),
        ));
    }
    let truth_frames = frames_at(&truth, &times, "truth store")?;

    let mut report = MetricReport::new(m.aggregate, m.batch_frames, m.ssim);
    let mut files = Vec::new();
    let mut scored: Vec<(String, Vec<Field>)> = Vec::new();
    if let Some(l) = &lr {
        let frames = times
            .iter()
            .map(|&t| {
                let i = l.index_of(t).ok_or_else(|| {
                    Error::Alignment(format!("low-res store has no frame at {t}"))
                })?;
                let up = bilinear_resample(&l.read_physical(i)?, truth.grid())?;
                Ok(up
                    .map(|v| (v as f64 / hr_max) as f32)?
                    .with_units(Units::Normalized))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.push((PredictorKind::Bilinear.name().to_string(), frames));
    }
    for (np, p) in &preds {
        scored.push((np.name.clone(), frames_at(p, &times, &np.name)?));
    }

    for (name, frames) in &scored {
        let mut mm = ModelMetrics::compute(
            name,
            frames,
            &truth_frames,
            m.batch_frames,
            &m.ssim,
            m.aggregate,
        )?;
        if !m.series {
            mm.series.clear();
        }
        if let Some((np, _)) = preds.iter().find(|(np, _)| &np.name == name) {
            attach_sample_info(&mut mm, &np.path, &times, &truth_frames)?;
        }
        report.models.push(mm);
        if m.mean_map {
            let map = mean_ssim_map(frames, &truth_frames, &m.ssim)?;
            let stem = out.join(format!("ssim_map_{}", safe_name(name)));
            let (csv, pgm) = (stem.with_extension("csv"), stem.with_extension("pgm"));
            write_map_csv(&map, &csv)?;
            write_map_pgm(&map, &pgm)?;
            let mut side = pgm.clone().into_os_string();
            side.push(".json");
            files.extend([csv, pgm, PathBuf::from(side)]);
        }
    }

    let (json, csv) = (out.join("report.json"), out.join("report.csv"));
    report.write_json(&json)?;
    report.write_csv(&csv)?;
    files.extend([json, csv]);
    if m.series {
        let series = out.join("series.csv");
        report.write_series_csv(&series)?;
        files.push(series);
    }
    for mm in &report.models {
        println!(
            "{:<16} MSE {:.4e}  PSNR {:>7.3} dB  SSIM {:.4}  (global PSNR {:.3} dB)",
            mm.model, mm.headline.mse, mm.headline.psnr, mm.headline.ssim, mm.global.psnr
        );
    }
    Ok(files)
}

/// Adds member/step counts and per-member MSE when the prediction came from
/// `sample` and its members were kept.
fn attach_sample_info(
    mm: &mut ModelMetrics,
    pred: &Path,
    times: &[DateTime<Utc>],
    truth: &[Field],
) -> Result<()> {
    let (bin, _) = store_paths(pred);
    let dir = bin.parent().map(Path::to_path_buf).unwrap_or_default();
    let info_path = dir.join(SAMPLE_INFO_NAME);
    if !info_path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
    let info: SampleInfo = serde_json::from_str(&text)?;
    mm.members = info.members;
    mm.steps = info.steps;
    for name in &info.member_stores {
        let store = DatasetStore::open(dir.join(name))?;
        mm.member_mse
            .push(mse(&frames_at(&store, times, name)?, truth)?);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub table: ScoreTable,
    pub observations: usize,
    pub rejected_rows: usize,
    pub collapsed: usize,
    pub dropped_missing: usize,
    pub dropped_outside: usize,
}

/// Scores gridded products against station observations.
pub fn cmd_validate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let v = &cfg.validation;
    let stations = require(&v.stations, "validation.stations")?;
    if !stations.exists() {
        return Err(Error::Config(format!(
            "station file {} does not exist",
            stations.display()
        )));
    }
    if v.products.is_empty() {
        return Err(Error::Config("validation.products is empty".into()));
    }
    let out = cfg.out_dir();
    create_out(&out)?;
    let parsed = parse_observations(stations)?;
    let mut files = Vec::new();
    if !parsed.errors.is_empty() {
        log::warn!("{} malformed station rows rejected", parsed.errors.len());
        let p = out.join("rejected_rows.csv");
        let mut w = csv::Writer::from_path(&p).map_err(Error::from)?;
        for e in &parsed.errors {
            w.serialize(e).map_err(Error::from)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    let collapsed = prepare_observations(&parsed.records, &v.slot)?;
    let products = v
        .products
        .iter()
        .map(|p| match (&p.path, &p.u, &p.v) {
            (Some(path), None, None) => Product::from_store(&p.name, &open_store(path, &p.name)?),
            (None, Some(u), Some(vv)) => Product::from_components(
                &p.name,
                &open_store(u, &p.name)?,
                &open_store(vv, &p.name)?,
            ),
            _ => Err(Error::Config(format!(
                "product {} needs either path or both u and v",
                p.name
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let set = build_validation_set(&collapsed, &products, v.extraction)?;
    let table = score(&set)?;

    let (csv, json, txt, records) = (
        out.join("validation_table.csv"),
        out.join("validation_table.json"),
        out.join("validation_table.txt"),
        out.join("validation_records.json"),
    );
    table.write_csv(&csv)?;
    let summary = ValidationSummary {
        table: table.clone(),
        observations: parsed.records.len(),
        rejected_rows: parsed.errors.len(),
        collapsed: collapsed.len(),
        dropped_missing: set.dropped_missing,
        dropped_outside: set.dropped_outside,
    };
    fs::write(&json, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(|e| Error::io(&json, e))?;
    fs::write(&txt, table.render()).map_err(|e| Error::io(&txt, e))?;
    fs::write(&records, serde_json::to_string_pretty(&set)? + "\n")
        .map_err(|e| Error::io(&records, e))?;
    print!("{}", table.render());
    files.extend([csv, json, txt, records]);
    Ok(files)
}
