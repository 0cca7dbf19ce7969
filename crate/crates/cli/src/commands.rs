use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;
use skytemp::dataset::{
    load_manifest, load_masks, parse_timestamp, read_image, select_hour_slot, split_single_image, synth_generate,
    write_manifest, ImageLoader, ImageRecord, Region, SynthConfig,
};
use skytemp::evaluation::{
    compare_regions, eval_sequence, eval_single, export_curve, predict_image, predict_sequence, sequence_baselines,
    sequence_data, sweep_hours, sweep_sequence_length, write_curve_csv, write_sweep_csv, EvalReport,
    ExperimentOptions, SweepRow,
};
use skytemp::saliency::{block_variation_map, render_map};
use skytemp::training::{
    load_checkpoint, save_checkpoint, train_sequence, train_single, Checkpoint, EpochStats, Task, TrainConfig,
};
use skytemp::Error;

use crate::{
    Command, CurveArgs, DataArgs, EvalSeqArgs, EvalSingleArgs, Failure, FormatArg, PredictArgs, ProtocolArgs,
    SaliencyArgs, SeqArgs, SweepHoursArgs, SweepNArgs, SynthArgs, TrainSingleArgs,
};

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(a) => synth(a),
        Command::TrainSingle(a) => train_single_cmd(a),
        Command::TrainSeq(a) => train_seq(a),
        Command::EvalSingle(a) => eval_single_cmd(a),
        Command::EvalSeq(a) => eval_seq(a),
        Command::SweepN(a) => sweep_n(a),
        Command::SweepHours(a) => sweep_hours_cmd(a),
        Command::Regions(a) => regions(a),
        Command::Predict(a) => predict(a),
        Command::Curve(a) => curve(a),
        Command::Saliency(a) => saliency(a),
    }
}

fn out_dir(path: &Path) -> Result<&Path, Failure> {
    fs::create_dir_all(path).map_err(Error::from)?;
    Ok(path)
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

fn read_records(manifest: &Path) -> Result<Vec<ImageRecord>, Failure> {
    // absolute paths keep derived manifests valid wherever they are written
    let manifest = manifest
        .canonicalize()
        .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", manifest.display())))?;
    let m = load_manifest(&manifest)?;
    if m.skipped > 0 {
        warn!("{} manifest rows skipped", m.skipped);
    }
    if m.records.is_empty() {
        return Err(Error::Data(format!("manifest {} has no records", manifest.display())).into());
    }
    info!("{} records from {}", m.records.len(), manifest.display());
    Ok(m.records)
}

fn cameras(records: &[ImageRecord]) -> Vec<&str> {
    let mut ids: Vec<&str> = records.iter().map(|r| r.camera_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn loader_for(size: usize, region: Region, masks: Option<&Path>, records: &[ImageRecord]) -> Result<ImageLoader, Failure> {
    if region == Region::Entire {
        return Ok(ImageLoader::new(size));
    }
    let dir = masks.ok_or_else(|| Failure::Usage(format!("--region {region} needs --masks")))?;
    Ok(ImageLoader::with_region(size, region, load_masks(dir, &cameras(records))?))
}

fn options(p: &ProtocolArgs) -> ExperimentOptions {
    ExperimentOptions {
        hours: p.hours.clone(),
        test_slot: p.hour,
        max_deviation_min: p.max_deviation,
        train_limit: p.train_limit,
        test_limit: p.test_limit,
        decode: p.decode.into(),
    }
}

/// Logs each epoch and collects the rows for `losses.csv`.
struct LossLog(Vec<EpochStats>);

impl LossLog {
    fn sink(&mut self) -> impl FnMut(&EpochStats) + '_ {
        |s| {
            info!("epoch {} loss {:.6} ({:.1}s)", s.epoch, s.mean_loss, s.elapsed_s);
            self.0.push(*s);
        }
    }

    fn write(&self, path: PathBuf) -> Result<(), Failure> {
        let mut text = format!("{}\n", EpochStats::CSV_HEADER);
        for s in &self.0 {
            text.push_str(&s.csv_line());
            text.push('\n');
        }
        fs::write(path, text).map_err(Error::from)?;
        Ok(())
    }
}

fn save_training(out: &Path, ckpt: &Checkpoint, log: &LossLog) -> Result<(), Failure> {
    save_checkpoint(ckpt, out.join("model.ckpt"))?;
    write_json(out.join("config.json"), &ckpt.config)?;
    log.write(out.join("losses.csv"))?;
    println!("checkpoint {} (params crc32 {:08x})", out.join("model.ckpt").display(), ckpt.param_checksum());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let config = SynthConfig {
        num_cameras: a.cameras,
        days: a.days,
        slots: a.slots,
        image_size: a.image_size,
        noise_sd: a.noise_sd,
        seed: a.seed,
        cues: a.cues.into(),
        image_noise_sd: a.image_noise_sd,
        drop_rate: a.drop_rate,
        jitter_minutes: a.jitter_minutes,
        ..SynthConfig::default()
    };
    let out = synth_generate(&config, out_dir(&a.out)?)?;
    println!("{} images, manifest {}", out.records.len(), out.manifest_path.display());
    Ok(())
}

fn train_single_cmd(a: TrainSingleArgs) -> Result<(), Failure> {
    let config = a.train.config(Task::Single)?;
    let mut records = read_records(&a.data.manifest)?;
    if let Some(h) = a.hour {
        records = select_hour_slot(&records, h, a.max_deviation)?
            .into_iter()
            .map(|p| p.record)
            .collect();
    }
    let loader = loader_for(config.input_size, config.region, a.data.masks.as_deref(), &records)?;
    let out = out_dir(&a.out)?;
    let (train, test) = split_single_image(&records, a.folds, a.fold, config.seed)?;
    info!("fold {}/{}: {} training and {} test images", a.fold, a.folds, train.len(), test.len());
    let mut log = LossLog(Vec::new());
    let ckpt = train_single(&config, &train, &loader, &mut log.sink())?;
    write_manifest(out.join("train.csv"), &train)?;
    write_manifest(out.join("test.csv"), &test)?;
    save_training(out, &ckpt, &log)
}

fn train_seq(a: SeqArgs) -> Result<(), Failure> {
    let config = a.train.config(Task::Sequence)?;
    let records = read_records(&a.data.manifest)?;
    let loader = loader_for(config.input_size, config.region, a.data.masks.as_deref(), &records)?;
    let out = out_dir(&a.out)?;
    let data = sequence_data(&records, config.sequence_length, &options(&a.protocol), a.protocol.hour, config.seed)?;
    info!("{} training sequences, slot {} held out", data.train.len(), a.protocol.hour);
    let mut log = LossLog(Vec::new());
    let ckpt = train_sequence(&config, &data.train, &loader, &mut log.sink())?;
    save_training(out, &ckpt, &log)
}

fn checkpoint_loader(ckpt: &Checkpoint, data: &DataArgs, records: &[ImageRecord]) -> Result<ImageLoader, Failure> {
    let c = &ckpt.config;
    loader_for(c.input_size, c.region, data.masks.as_deref(), records)
}

fn write_report(out: &Path, report: &EvalReport) -> Result<(), Failure> {
    report.write_json(out.join("report.json"))?;
    report.write_table_csv(out.join("table.csv"))?;
    report.write_predictions_csv(out.join("predictions.csv"))?;
    Ok(())
}

fn eval_single_cmd(a: EvalSingleArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let records = read_records(&a.data.manifest)?;
    let loader = checkpoint_loader(&ckpt, &a.data, &records)?;
    let out = out_dir(&a.out)?;
    let report = eval_single(&ckpt, &records, &loader, a.decode.into())?;
    write_report(out, &report)?;
    println!("average RMSE {:.3} over {} images", report.average_rmse, report.samples);
    Ok(())
}

fn eval_seq(a: EvalSeqArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let records = read_records(&a.data.manifest)?;
    let loader = checkpoint_loader(&ckpt, &a.data, &records)?;
    let out = out_dir(&a.out)?;
    let c = &ckpt.config;
    let data = sequence_data(&records, c.sequence_length, &options(&a.protocol), a.protocol.hour, c.seed)?;
    let model = eval_sequence(&ckpt, &data.test, &loader, a.protocol.decode.into())?;
    let (persistence, climatology) = sequence_baselines(&data)?;
    write_report(out, &model)?;
    write_json(
        out.join("baselines.json"),
        &json!({ "persistence": persistence, "climatology": climatology }),
    )?;
    let mut table = String::from("method,average_rmse,samples\n");
    for r in [&model, &persistence, &climatology] {
        table.push_str(&format!("{},{},{}\n", r.method, r.average_rmse, r.samples));
        println!("{:<12} RMSE {:.3}", r.method, r.average_rmse);
    }
    fs::write(out.join("comparison.csv"), table).map_err(Error::from)?;
    Ok(())
}

fn write_sweep(out: &Path, rows: &[SweepRow]) -> Result<(), Failure> {
    write_sweep_csv(rows, out.join("sweep.csv"))?;
    write_json(out.join("sweep.json"), &rows)?;
    for r in rows {
        println!(
            "{:<8} model {:.3}  persistence {:.3}  climatology {:.3}",
            r.setting, r.model_rmse, r.persistence_rmse, r.climatology_rmse
        );
    }
    Ok(())
}

fn sweep_setup(a: &SeqArgs) -> Result<(TrainConfig, Vec<ImageRecord>, ImageLoader, &Path), Failure> {
    let config = a.train.config(Task::Sequence)?;
    let records = read_records(&a.data.manifest)?;
    let loader = loader_for(config.input_size, config.region, a.data.masks.as_deref(), &records)?;
    Ok((config, records, loader, out_dir(&a.out)?))
}

fn sweep_n(a: SweepNArgs) -> Result<(), Failure> {
    let (config, records, loader, out) = sweep_setup(&a.seq)?;
    let rows = sweep_sequence_length(&config, &records, &loader, &a.lengths, &options(&a.seq.protocol))?;
    write_sweep(out, &rows)
}

fn sweep_hours_cmd(a: SweepHoursArgs) -> Result<(), Failure> {
    let (config, records, loader, out) = sweep_setup(&a.seq)?;
    let rows = sweep_hours(&config, &records, &loader, &a.test_hours, &options(&a.seq.protocol))?;
    write_sweep(out, &rows)
}

fn regions(a: SeqArgs) -> Result<(), Failure> {
    let config = a.train.config(Task::Sequence)?;
    let dir = a.data.masks.as_deref().ok_or_else(|| Failure::Usage("regions needs --masks".into()))?;
    let records = read_records(&a.data.manifest)?;
    let masks = load_masks(dir, &cameras(&records))?;
    let out = out_dir(&a.out)?;
    let rows = compare_regions(&config, &records, &masks, &options(&a.protocol))?;
    write_sweep(out, &rows)
}

fn predict(a: PredictArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let c = &ckpt.config;
    let camera = match (&a.camera, c.region) {
        (Some(cam), _) => cam.clone(),
        (None, Region::Entire) => "camera".to_string(),
        (None, r) => return Err(Failure::Usage(format!("a {r}-region model needs --camera and --masks"))),
    };
    let when = parse_timestamp("2000-01-01T00:00:00+00:00")?;
    let records = a
        .images
        .iter()
        .map(|p| ImageRecord::new(camera.as_str(), when, p, 0.0))
        .collect::<Result<Vec<_>, _>>()?;
    let loader = loader_for(c.input_size, c.region, a.masks.as_deref(), &records)?;
    let images = records
        .iter()
        .map(|r| loader.load(r).map(|t| (*t).clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let decode = a.decode.into();
    let temp = match ckpt.task() {
        Task::Single if images.len() == 1 => predict_image(&ckpt, &images[0], decode)?,
        Task::Single => {
            return Err(Failure::Usage(format!("single-image model takes 1 image, got {}", images.len())));
        }
        Task::Sequence => predict_sequence(&ckpt, &images, decode)?,
    };
    println!("{temp:.1}");
    Ok(())
}

fn curve(a: CurveArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let records = read_records(&a.data.manifest)?;
    let loader = checkpoint_loader(&ckpt, &a.data, &records)?;
    let out = out_dir(&a.out)?;
    let c = &ckpt.config;
    let data = sequence_data(&records, c.sequence_length, &options(&a.protocol), a.protocol.hour, c.seed)?;
    let (rows, report) = export_curve(&ckpt, &a.camera, &data.test, &loader, a.protocol.decode.into())?;
    write_curve_csv(&rows, out.join("curve.csv"))?;
    report.write_json(out.join("report.json"))?;
    println!("{} days, RMSE {:.3}", rows.len(), report.average_rmse);
    Ok(())
}

fn saliency(a: SaliencyArgs) -> Result<(), Failure> {
    let records: Vec<ImageRecord> = read_records(&a.manifest)?
        .into_iter()
        .filter(|r| r.camera_id == a.camera)
        .collect();
    if records.is_empty() {
        return Err(Error::Data(format!("camera '{}' has no records", a.camera)).into());
    }
    let records = match a.hour {
        Some(h) => select_hour_slot(&records, h, a.max_deviation)?
            .into_iter()
            .map(|p| p.record)
            .collect(),
        None => records,
    };
    let images = records
        .iter()
        .map(|r| read_image(&r.image_path))
        .collect::<Result<Vec<_>, _>>()?;
    let map = block_variation_map(&images, a.block_size)?;
    let out = out_dir(&a.out)?;
    let name = match a.format {
        FormatArg::Png => "saliency.png",
        FormatArg::Pgm => "saliency.pgm",
    };
    render_map(&map, out.join(name))?;
    let mut text = String::from("row,col,rho,rho_hat\n");
    for r in 0..map.rows {
        for c in 0..map.cols {
            text.push_str(&format!("{r},{c},{},{}\n", map.rho_at(r, c), map.rho_hat_at(r, c)));
        }
    }
    fs::write(out.join("blocks.csv"), text).map_err(Error::from)?;
    println!("{}x{} blocks from {} images", map.rows, map.cols, images.len());
    Ok(())
}
