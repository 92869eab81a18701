use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array3;
use siamte::baselines::TransformSpec;
use siamte::data::{scan_dataset, DatasetManifest};
use siamte::forensics::{
    trace_origin_accuracy, visualize_trace, CameraFingerprint, ClassificationSettings,
    ClusteringSettings, EvaluationReport, Labeled, Suite, WaveletWiener,
};
use siamte::forensics::report::reports_to_csv;
use siamte::imaging::{load_rgb, rgb_to_array, save_png};
use siamte::metrics::{fit_niqe_model, NiqePristineModel};
use siamte::models::{CameraClassifier, Checkpoint, ResidualEraser};
use siamte::parallel::map_indexed;
use siamte::synth::{generate_corpus, SynthConfig};
use siamte::training::{
    extract_trace, train_classifier, train_classifier_with, train_eraser, write_metrics_csv, TrainConfig,
};
use siamte::Error;
use walkdir::WalkDir;

use crate::run::{manifest_path, Recorder};
use crate::*;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::Scan(a) => scan(a),
        Command::TrainClassifier(a) => train_classifier_cmd(a),
        Command::Train(a) => train(a),
        Command::Erase(a) => erase(a),
        Command::Attack(a) => attack(a),
        Command::Fingerprint(a) => fingerprint(a),
        Command::FitNiqe(a) => fit_niqe(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Visualize(a) => visualize(a),
        Command::Report(a) => report(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()).into());
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn train_config(path: &Path) -> Result<TrainConfig> {
    Ok(TrainConfig::from_toml(&read_text(path)?)?)
}

/// A dataset directory is scanned; anything else is read as a manifest.
fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        Ok(scan_dataset(path)?)
    } else {
        Ok(DatasetManifest::load(path)?)
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_classifier(path: &Path) -> Result<CameraClassifier<f32>> {
    Ok(CameraClassifier::from_checkpoint(&load_checkpoint(path)?)?)
}

fn load_eraser(path: &Path) -> Result<ResidualEraser<f32>> {
    Ok(ResidualEraser::from_checkpoint(&load_checkpoint(path)?)?)
}

/// Every image of the manifest with its label and its path relative to the
/// dataset root.
fn load_labeled(manifest: &DatasetManifest) -> Result<(Vec<Labeled>, Vec<PathBuf>)> {
    let entries: Vec<(usize, PathBuf)> = manifest
        .cameras
        .iter()
        .enumerate()
        .flat_map(|(label, cam)| cam.images.iter().map(move |e| (label, e.path.clone())))
        .collect();
    let images = map_indexed(entries.len(), |i| {
        load_rgb(&manifest.root.join(&entries[i].1)).map(|img| (rgb_to_array(&img), entries[i].0))
    })
    .into_iter()
    .collect::<siamte::Result<Vec<_>>>()?;
    Ok((images, entries.into_iter().map(|(_, p)| p).collect()))
}

/// `<camera>/<stem>.png` for a dataset-relative image path.
fn png_path(rel: &Path) -> PathBuf {
    rel.with_extension("png")
}

fn write_images(out: &Path, rels: &[PathBuf], images: &[Array3<f32>]) -> Result<()> {
    for rel in rels {
        if let Some(parent) = out.join(rel).parent() {
            fs::create_dir_all(parent)?;
        }
    }
    map_indexed(rels.len(), |i| save_png(&images[i], &out.join(png_path(&rels[i]))))
        .into_iter()
        .collect::<siamte::Result<Vec<_>>>()?;
    Ok(())
}

fn synth_corpus(a: SynthArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    let mut rec = Recorder::new("synth-corpus", &config, Some(config.seed))?;
    if let Some(p) = &a.config {
        rec.input(p);
    }
    let n = generate_corpus(&config, &a.out, a.pristine.as_deref())?;
    log::info!("wrote {n} images to {}", a.out.display());
    rec.output(&a.out);
    if let Some(p) = &a.pristine {
        rec.output(p);
    }
    rec.finish(&manifest_path(&a.out))
}

fn scan(a: ScanArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => train_config(p)?,
        None => TrainConfig::default(),
    };
    let manifest = scan_dataset(&a.root)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let d = &config.data;
    let split = manifest.partition(d.val_fraction, d.test_fraction, d.split_seed)?;
    fs::create_dir_all(&a.out)?;
    let mut rec = Recorder::new("scan", &config.data, Some(d.split_seed))?;
    rec.input(&a.root);
    for (name, m) in [("manifest", &manifest), ("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let path = a.out.join(format!("{name}.json"));
        m.save(&path)?;
        rec.output(&path);
    }
    log::info!(
        "{} camera types, {} images ({} train / {} val / {} test)",
        manifest.cameras.len(),
        manifest.num_images(),
        split.train.num_images(),
        split.val.num_images(),
        split.test.num_images()
    );
    rec.finish(&manifest_path(&a.out))
}

fn train_classifier_cmd(a: TrainClassifierArgs) -> Result<()> {
    let config = train_config(&a.config)?;
    let d = &config.data;
    let split = load_manifest(&a.data)?.partition(d.val_fraction, d.test_fraction, d.split_seed)?;
    let train = split.train.load_corpus()?;
    let val = split.val.load_corpus()?;
    let mut rec = Recorder::new("train-classifier", &config, Some(config.optim.seed))?;
    rec.input(&a.config);
    rec.input(&a.data);
    let run = match &a.trace_eraser {
        Some(p) => {
            rec.input(p);
            let eraser = load_eraser(p)?;
            train_classifier_with(&train, &val, &config, |x| extract_trace(&eraser, x))?
        }
        None => train_classifier(&train, &val, &config)?,
    };
    log::info!("best validation accuracy {:.4} at step {}", run.best_accuracy, run.best_step);
    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("classifier.ckpt");
    run.classifier.to_checkpoint(run.best_step as u64)?.save(&ckpt)?;
    let log_path = a.out.join("classifier_log.csv");
    let mut csv = String::from("step,train_loss,val_accuracy\n");
    for e in &run.log {
        csv.push_str(&format!("{},{},{}\n", e.step, e.train_loss, e.val_accuracy));
    }
    fs::write(&log_path, csv)?;
    rec.output(&ckpt);
    rec.output(&log_path);
    rec.finish(&manifest_path(&a.out))
}

pub fn step_checkpoint_name(step: usize) -> String {
    format!("eraser_step{step:06}.ckpt")
}

fn train(a: TrainArgs) -> Result<()> {
    let config = train_config(&a.config)?;
    let d = &config.data;
    let split = load_manifest(&a.data)?.partition(d.val_fraction, d.test_fraction, d.split_seed)?;
    let train = split.train.load_corpus()?;
    let classifier = load_classifier(&a.classifier)?;
    if classifier.vocabulary() != train.manifest.vocabulary().as_slice() {
        bail!(Error::data("classifier vocabulary does not match the dataset's camera types"));
    }
    let mut rec = Recorder::new("train", &config, Some(config.optim.seed))?;
    rec.input(&a.config);
    rec.input(&a.data);
    rec.input(&a.classifier);
    let ckpt_dir = a.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut written = Vec::new();
    let run = train_eraser(&train, &classifier, &classifier, &config, |step, eraser| {
        let path = ckpt_dir.join(step_checkpoint_name(step));
        eraser.to_checkpoint(step as u64)?.save(&path)?;
        written.push(path);
        Ok(())
    })?;
    let final_path = a.out.join("eraser.ckpt");
    run.eraser.to_checkpoint(config.optim.steps as u64)?.save(&final_path)?;
    let metrics = a.out.join("metrics.csv");
    let mut buf = Vec::new();
    write_metrics_csv(&run.log, &mut buf)?;
    fs::write(&metrics, buf)?;
    for p in &written {
        rec.output(p);
    }
    rec.output(&final_path);
    rec.output(&metrics);
    rec.finish(&manifest_path(&a.out))
}

fn erase(a: EraseArgs) -> Result<()> {
    let eraser = load_eraser(&a.ckpt)?;
    let manifest = load_manifest(&a.input)?;
    let mut rec = Recorder::new("erase", &a, None)?;
    rec.input(&a.input);
    rec.input(&a.ckpt);
    let (images, rels) = load_labeled(&manifest)?;
    let erased = map_indexed(images.len(), |i| eraser.forward(&images[i].0))
        .into_iter()
        .collect::<siamte::Result<Vec<_>>>()?;
    write_images(&a.out, &rels, &erased)?;
    log::info!("erased {} images into {}", erased.len(), a.out.display());
    rec.output(&a.out);
    rec.finish(&manifest_path(&a.out))
}

fn attack(a: AttackArgs) -> Result<()> {
    let method = a.method.trim().to_ascii_lowercase();
    if method == "siamte" {
        let ckpt = a
            .ckpt
            .clone()
            .ok_or_else(|| Error::config("ckpt", "`--method siamte` needs an eraser checkpoint"))?;
        return erase(EraseArgs {
            input: a.input,
            ckpt,
            out: a.out,
        });
    }
    let spec: TransformSpec = method.parse()?;
    let manifest = load_manifest(&a.input)?;
    let mut rec = Recorder::new("attack", &a, None)?;
    rec.input(&a.input);
    let classifier = match (&a.classifier, spec.needs_classifier()) {
        (Some(p), true) => {
            rec.input(p);
            Some(load_classifier(p)?)
        }
        (None, true) => bail!(Error::config("classifier", format!("`{spec}` needs --classifier"))),
        _ => None,
    };
    let (images, rels) = load_labeled(&manifest)?;
    let vocab = manifest.vocabulary();
    let processed = map_indexed(images.len(), |i| -> Result<Array3<f32>> {
        let oracle = match &classifier {
            Some(c) => {
                let name = &vocab[images[i].1];
                let label = c
                    .vocabulary()
                    .iter()
                    .position(|v| v == name)
                    .ok_or_else(|| anyhow!(Error::data(format!("classifier does not know camera `{name}`"))))?;
                Some((c, label))
            }
            None => None,
        };
        Ok(spec.apply(&images[i].0, oracle)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    write_images(&a.out, &rels, &processed)?;
    log::info!("applied {spec} to {} images", processed.len());
    rec.output(&a.out);
    rec.finish(&manifest_path(&a.out))
}

fn fingerprint(a: FingerprintArgs) -> Result<()> {
    let manifest = load_manifest(&a.data)?;
    let crop = match a.crop {
        Some(c) => c,
        None => manifest
            .cameras
            .iter()
            .flat_map(|c| &c.images)
            .map(|e| e.width.min(e.height) as usize)
            .min()
            .unwrap_or(0)
            .min(512),
    };
    let extractor = WaveletWiener::default();
    let mut rec = Recorder::new("fingerprint", serde_json::json!({ "crop": crop, "extractor": extractor }), None)?;
    rec.input(&a.data);
    fs::create_dir_all(&a.out)?;
    let (images, _) = load_labeled(&manifest)?;
    for (label, cam) in manifest.cameras.iter().enumerate() {
        let own: Vec<Array3<f32>> = images.iter().filter(|(_, l)| *l == label).map(|(x, _)| x.clone()).collect();
        let fp = siamte::forensics::fingerprint_from_images(&cam.name, &own, &extractor, crop)?;
        let path = a.out.join(format!("{}.fp", cam.name));
        fp.save(&path)?;
        rec.output(&path);
    }
    rec.finish(&manifest_path(&a.out))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()).into());
    }
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn fit_niqe(a: FitNiqeArgs) -> Result<()> {
    let files = image_files(&a.images)?;
    let images = map_indexed(files.len(), |i| load_rgb(&files[i]).map(|img| rgb_to_array(&img)))
        .into_iter()
        .collect::<siamte::Result<Vec<_>>>()?;
    let model = fit_niqe_model(&images, a.patch)?;
    let mut rec = Recorder::new("fit-niqe", &a, None)?;
    rec.input(&a.images);
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent)?;
    }
    model.save(&a.out)?;
    rec.output(&a.out);
    rec.finish(&manifest_path(&a.out))
}

fn load_fingerprints(dir: &Path) -> Result<Vec<CameraFingerprint>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()).into());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "fp"))
        .collect();
    paths.sort();
    Ok(paths.iter().map(|p| CameraFingerprint::load(p)).collect::<siamte::Result<Vec<_>>>()?)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&a.original)?;
    let vocab = manifest.vocabulary();
    let mut rec = Recorder::new("evaluate", &a, Some(a.seed))?;
    rec.input(&a.original);
    let (original, rels) = load_labeled(&manifest)?;
    let processed = match &a.processed {
        Some(dir) => {
            rec.input(dir);
            map_indexed(rels.len(), |i| -> Result<Labeled> {
                let mut path = dir.join(png_path(&rels[i]));
                if !path.exists() {
                    path = dir.join(&rels[i]);
                }
                Ok((rgb_to_array(&load_rgb(&path)?), original[i].1))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        }
        None => original.clone(),
    };
    let classifier = match &a.classifier {
        Some(p) => {
            rec.input(p);
            let c = load_classifier(p)?;
            if c.vocabulary() != vocab.as_slice() {
                bail!(Error::data("classifier vocabulary does not match the dataset's camera types"));
            }
            Some(c)
        }
        None => None,
    };
    let fingerprints = match &a.fingerprints {
        Some(p) => {
            rec.input(p);
            Some(load_fingerprints(p)?)
        }
        None => None,
    };
    let niqe_model = match &a.niqe_model {
        Some(p) => {
            rec.input(p);
            Some(NiqePristineModel::load(p)?)
        }
        None => None,
    };
    let extractor = WaveletWiener::default();
    let classification = ClassificationSettings {
        patch: a.patch,
        crops: a.crops,
        repeats: a.repeats,
        seed: a.seed,
    };
    let clusters = a.clusters.unwrap_or(vocab.len());
    let suite = Suite {
        vocabulary: &vocab,
        classifier: classifier.as_ref(),
        classification,
        clustering: (clusters > 0).then_some(ClusteringSettings {
            clusters,
            patch: a.patch,
            patches_per_image: a.cluster_patches,
            repeats: a.repeats,
            restarts: a.restarts,
            seed: a.seed,
        }),
        fingerprints: fingerprints.as_deref().map(|f| (f, &extractor)),
        exclusion_radius: a.exclusion_radius,
        niqe_model: niqe_model.as_ref(),
    };
    let mut reports = suite.run(&a.method, &original, &processed)?;
    if let (Some(e), Some(t)) = (&a.eraser, &a.trace_classifier) {
        rec.input(e);
        rec.input(t);
        let eraser = load_eraser(e)?;
        let tc = load_classifier(t)?;
        let traces = map_indexed(original.len(), |i| extract_trace(&eraser, &original[i].0).map(|x| (x, original[i].1)))
            .into_iter()
            .collect::<siamte::Result<Vec<_>>>()?;
        reports.push(trace_origin_accuracy(&a.method, &traces, &tc, &vocab, &classification)?);
    }
    for r in &reports {
        log::info!("{} {}: {:.4} ± {:.4}", r.method, r.task, r.mean, r.std);
    }
    write_reports(&a.out, &reports, &mut rec)?;
    rec.finish(&manifest_path(&a.out))
}

fn write_reports(out: &Path, reports: &[EvaluationReport], rec: &mut Recorder) -> Result<()> {
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let is_csv = out.extension().is_some_and(|e| e == "csv");
    if is_csv {
        fs::write(out, reports_to_csv(reports))?;
        rec.output(out);
    } else {
        fs::write(out, serde_json::to_string_pretty(reports)?)?;
        let csv = out.with_extension("csv");
        fs::write(&csv, reports_to_csv(reports))?;
        rec.output(out);
        rec.output(&csv);
    }
    Ok(())
}

fn visualize(a: VisualizeArgs) -> Result<()> {
    let eraser = load_eraser(&a.ckpt)?;
    let x = rgb_to_array(&load_rgb(&a.image)?);
    let trace = extract_trace(&eraser, &x)?;
    let stem = a.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let mut rec = Recorder::new("visualize", &a, None)?;
    rec.input(&a.image);
    rec.input(&a.ckpt);
    let (spatial, spectrum) = visualize_trace(&trace, &a.out, &stem)?;
    rec.output(&spatial);
    rec.output(&spectrum);
    rec.finish(&manifest_path(&a.out))
}

fn read_reports(path: &Path) -> Result<Vec<EvaluationReport>> {
    let text = read_text(path)?;
    let reports: Vec<EvaluationReport> = if path.extension().is_some_and(|e| e == "csv") {
        siamte::forensics::report::reports_from_csv(&text, path)?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
    };
    for r in &reports {
        r.validate()?;
    }
    Ok(reports)
}

fn report(a: ReportArgs) -> Result<()> {
    use siamte::forensics::report::{merge_table, table_from_csv, table_to_csv};
    let mut rec = Recorder::new("report", &a, None)?;
    let mut all = Vec::new();
    for p in &a.inputs {
        rec.input(p);
        all.extend(read_reports(p)?);
    }
    let rows = merge_table(&all);
    let text = table_to_csv(&rows);
    if table_from_csv(&text, &a.out)? != rows {
        bail!(Error::numerical("table does not survive a CSV round trip"));
    }
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, &text)?;
    print!("{text}");
    rec.output(&a.out);
    rec.finish(&manifest_path(&a.out))
}
