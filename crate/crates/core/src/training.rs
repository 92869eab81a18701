//! Origin-classifier pretraining and Siamese eraser training.

use std::io::Write;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, ImageGroup};
use crate::losses::{hybrid_loss_from_signals, LossConfig};
use crate::models::{
    argmax, CameraClassifier, ClassifierConfig, Embedder, EraserConfig, OriginClassifier, ResidualEraser,
};
use crate::nn::{cross_entropy, Adam, AdamConfig, Parameters};
use crate::parallel::map_indexed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset root; the CLI may override it.
    pub root: Option<String>,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub patch_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: None,
            val_fraction: 0.2,
            test_fraction: 0.2,
            split_seed: 0,
            patch_size: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub eraser_depth: usize,
    pub eraser_width: usize,
    pub classifier_width: usize,
    pub classifier_highpass: bool,
    pub classifier_truncation: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            eraser_depth: 4,
            eraser_width: 16,
            classifier_width: 8,
            classifier_highpass: true,
            classifier_truncation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierOptim {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Validation cadence in steps; 0 validates only at the end.
    pub eval_every: usize,
    pub val_patches_per_camera: usize,
}

impl Default for ClassifierOptim {
    fn default() -> Self {
        ClassifierOptim {
            steps: 2000,
            batch_size: 16,
            learning_rate: 3e-3,
            eval_every: 200,
            val_patches_per_camera: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub group_size: usize,
    pub groups_per_batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Fractions of the run after which the learning rate is multiplied by
    /// `decay_factor`.
    pub decay_at: Vec<f64>,
    pub decay_factor: f64,
    pub classifier: ClassifierOptim,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            group_size: 4,
            groups_per_batch: 8,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 1000,
            seed: 0,
            checkpoint_every: 0,
            decay_at: vec![0.6, 0.85],
            decay_factor: 0.5,
            classifier: ClassifierOptim::default(),
        }
    }
}

/// Run configuration, stored as TOML with `[data]`, `[model]`, `[loss]` and
/// `[optim]` sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub optim: OptimSection,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optim;
        if o.group_size < 2 {
            return Err(Error::config("optim.group_size", "must be >= 2"));
        }
        if o.groups_per_batch < 1 {
            return Err(Error::config("optim.groups_per_batch", "must be >= 1"));
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::config("optim.learning_rate", "must be > 0"));
        }
        if !(o.classifier.learning_rate > 0.0 && o.classifier.learning_rate.is_finite()) {
            return Err(Error::config("optim.classifier.learning_rate", "must be > 0"));
        }
        if o.classifier.batch_size < 1 {
            return Err(Error::config("optim.classifier.batch_size", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return Err(Error::config("optim.beta1", "Adam coefficients must satisfy 0 <= beta < 1, epsilon > 0"));
        }
        if o.decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) || !(o.decay_factor > 0.0) {
            return Err(Error::config("optim.decay_at", "fractions must lie in [0, 1] with a positive factor"));
        }
        if self.data.patch_size < CameraClassifier::<f32>::MIN_INPUT {
            return Err(Error::config(
                "data.patch_size",
                format!("must be >= {}", CameraClassifier::<f32>::MIN_INPUT),
            ));
        }
        let d = &self.data;
        if d.val_fraction < 0.0 || d.test_fraction < 0.0 || d.val_fraction + d.test_fraction >= 1.0 {
            return Err(Error::config("data.val_fraction", "split fractions must be >= 0 and sum below 1"));
        }
        self.loss.validate()?;
        self.eraser_config().validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[s].lines().next().unwrap_or("").trim().to_string())
                .unwrap_or_default();
            Error::config(if field.is_empty() { "config".to_string() } else { field }, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn eraser_config(&self) -> EraserConfig {
        EraserConfig {
            depth: self.model.eraser_depth,
            width: self.model.eraser_width,
            residual: true,
            seed: self.optim.seed,
        }
    }

    pub fn classifier_config(&self, vocabulary: Vec<String>) -> ClassifierConfig {
        ClassifierConfig {
            width: self.model.classifier_width,
            vocabulary,
            highpass: self.model.classifier_highpass,
            truncation: self.model.classifier_truncation,
            seed: self.optim.seed,
        }
    }

    pub fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            epsilon: self.optim.epsilon,
        }
    }
}

/// Step-decay schedule: `base * factor^(milestones passed)` where milestone
/// `f` sits at step `floor(f * total)`.
pub fn learning_rate_at(base: f64, step: usize, total: usize, decay_at: &[f64], factor: f64) -> f64 {
    let passed = decay_at
        .iter()
        .filter(|f| step >= (**f * total as f64).floor() as usize)
        .count();
    base * factor.powi(passed as i32)
}

/// Adds `scale * src` into `acc` parameter-wise.
pub fn accumulate<P: Parameters<f32>>(acc: &mut P, src: &P, scale: f32) {
    let srcs: Vec<Vec<f32>> = src.named_params().into_iter().map(|(_, _, v)| v.to_vec()).collect();
    for (dst, s) in acc.params_mut().into_iter().zip(srcs) {
        for (d, v) in dst.iter_mut().zip(s) {
            *d += scale * v;
        }
    }
}

fn adam_step<P: Parameters<f32>>(adam: &mut Adam, lr: f64, model: &mut P, grads: &P) {
    let g: Vec<&[f32]> = grads.named_params().into_iter().map(|(_, _, v)| v).collect();
    adam.step(lr, model.params_mut(), g);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub step: usize,
    /// Mean training cross-entropy since the previous record.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    /// Parameters from the record with the best validation accuracy.
    pub classifier: CameraClassifier<f32>,
    pub best_step: usize,
    pub best_accuracy: f64,
    pub log: Vec<ClassifierEpoch>,
}

/// Fixed labelled patches for validation, drawn once from `corpus`.
pub fn validation_patches(corpus: &Corpus, patch: usize, per_camera: usize, seed: u64) -> Result<Vec<(Array3<f32>, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_FA11);
    let mut out = Vec::with_capacity(per_camera * corpus.num_cameras());
    for camera in 0..corpus.num_cameras() {
        for _ in 0..per_camera {
            out.push((corpus.random_patch(camera, patch, &mut rng)?.pixels, camera));
        }
    }
    Ok(out)
}

/// Fraction of `patches` whose argmax prediction matches the label.
pub fn patch_accuracy<C: OriginClassifier<f32> + ?Sized>(classifier: &C, patches: &[(Array3<f32>, usize)]) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::data("no validation patches"));
    }
    let hits = map_indexed(patches.len(), |i| {
        classifier
            .logits(&patches[i].0)
            .map(|l| (argmax(&l) == patches[i].1) as usize)
    });
    let hits: usize = hits.into_iter().collect::<Result<Vec<_>>>()?.into_iter().sum();
    Ok(hits as f64 / patches.len() as f64)
}

/// Supervised training of a camera classifier on random patches.
///
/// `transform` maps each sampled patch before it is classified; pass the
/// identity for image classification or a trace extractor to train on
/// traces.
pub fn train_classifier_with<F>(
    train: &Corpus,
    val: &Corpus,
    config: &TrainConfig,
    transform: F,
) -> Result<ClassifierRun>
where
    F: Fn(&Array3<f32>) -> Result<Array3<f32>> + Sync,
{
    config.validate()?;
    let vocabulary = train.manifest.vocabulary();
    if vocabulary.len() < 2 {
        return Err(Error::data("classifier training needs at least 2 camera types"));
    }
    if val.manifest.vocabulary() != vocabulary {
        return Err(Error::data("training and validation splits have different camera types"));
    }
    let opt = &config.optim.classifier;
    let patch = config.data.patch_size;
    let mut classifier = CameraClassifier::<f32>::build(config.classifier_config(vocabulary))?;
    let mut adam = Adam::new(config.adam(opt.learning_rate));
    let val_set = validation_patches(val, patch, opt.val_patches_per_camera, config.optim.seed)?
        .into_iter()
        .map(|(p, l)| transform(&p).map(|t| (t, l)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.optim.seed);
    let cameras = train.num_cameras();

    let mut log = vec![ClassifierEpoch {
        step: 0,
        train_loss: f64::NAN,
        val_accuracy: patch_accuracy(&classifier, &val_set)?,
    }];
    let mut best = (classifier.clone(), 0, log[0].val_accuracy);
    let mut running = (0.0, 0usize);
    let eval_every = if opt.eval_every == 0 { opt.steps.max(1) } else { opt.eval_every };

    for step in 1..=opt.steps {
        let mut batch = Vec::with_capacity(opt.batch_size);
        for _ in 0..opt.batch_size {
            let camera = rng.random_range(0..cameras);
            batch.push((train.random_patch(camera, patch, &mut rng)?.pixels, camera));
        }
        let parts = map_indexed(batch.len(), |i| -> Result<(f32, CameraClassifier<f32>)> {
            let x = transform(&batch[i].0)?;
            let (features, tape) = classifier.forward_taped(&x)?;
            let logits = classifier.logits_from_features(&features);
            let (loss, dlogits) = cross_entropy(&logits, batch[i].1);
            let mut grads = classifier.zeros_like();
            classifier.backward(&tape, &dlogits, Some(&mut grads), false);
            Ok((loss, grads))
        });
        let mut grads = classifier.zeros_like();
        let scale = 1.0 / batch.len() as f32;
        let mut loss = 0.0f64;
        for part in parts {
            let (l, g) = part?;
            loss += l as f64 / batch.len() as f64;
            accumulate(&mut grads, &g, scale);
        }
        if !loss.is_finite() {
            return Err(Error::numerical(format!("non-finite classifier loss at step {step}")));
        }
        running.0 += loss;
        running.1 += 1;
        let lr = learning_rate_at(opt.learning_rate, step - 1, opt.steps, &config.optim.decay_at, config.optim.decay_factor);
        adam_step(&mut adam, lr, &mut classifier, &grads);

        if step % eval_every == 0 || step == opt.steps {
            let acc = patch_accuracy(&classifier, &val_set)?;
            log::info!("classifier step {step}: loss {:.4} val acc {acc:.4}", running.0 / running.1 as f64);
            log.push(ClassifierEpoch {
                step,
                train_loss: running.0 / running.1 as f64,
                val_accuracy: acc,
            });
            running = (0.0, 0);
            if acc > best.2 {
                best = (classifier.clone(), step, acc);
            }
        }
    }
    Ok(ClassifierRun {
        classifier: best.0,
        best_step: best.1,
        best_accuracy: best.2,
        log,
    })
}

pub fn train_classifier(train: &Corpus, val: &Corpus, config: &TrainConfig) -> Result<ClassifierRun> {
    train_classifier_with(train, val, config, |x| Ok(x.clone()))
}

/// One row of the eraser training log; terms are averaged over the groups
/// of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub l_es: f64,
    pub l_tf: f64,
    pub l_ci: f64,
    pub hybrid: f64,
}

#[derive(Debug, Clone)]
pub struct EraserRun {
    pub eraser: ResidualEraser<f32>,
    pub log: Vec<StepLog>,
}

/// Hybrid loss and eraser gradient for one group.
pub fn group_step<E, C>(
    eraser: &ResidualEraser<f32>,
    group: &ImageGroup,
    embedder: &E,
    classifier: &C,
    loss: &LossConfig,
) -> Result<(StepLog, ResidualEraser<f32>)>
where
    E: Embedder<f32> + ?Sized,
    C: OriginClassifier<f32> + ?Sized,
{
    let inputs: Vec<Array3<f32>> = group.patches.iter().map(|p| p.pixels.clone()).collect();
    let mut signals = Vec::with_capacity(inputs.len());
    let mut tapes = Vec::with_capacity(inputs.len());
    for x in &inputs {
        let (s, t) = eraser.forward_taped(x)?;
        signals.push(s);
        tapes.push(t);
    }
    let h = hybrid_loss_from_signals(&inputs, &signals, &group.labels, embedder, classifier, loss)?;
    let mut grads = eraser.zeros_like();
    for (tape, g) in tapes.iter().zip(&h.grad) {
        eraser.backward(tape, g, &mut grads, false);
    }
    let row = StepLog {
        step: 0,
        l_es: h.es as f64,
        l_tf: h.tf as f64,
        l_ci: h.ci as f64,
        hybrid: h.total as f64,
    };
    Ok((row, grads))
}

/// Siamese eraser training with the hybrid loss. The classifier and
/// embedder are only read. `on_checkpoint` is called with the current
/// parameters at step 0, every `checkpoint_every` steps and at the end.
pub fn train_eraser<E, C, K>(
    train: &Corpus,
    embedder: &E,
    classifier: &C,
    config: &TrainConfig,
    mut on_checkpoint: K,
) -> Result<EraserRun>
where
    E: Embedder<f32> + ?Sized,
    C: OriginClassifier<f32> + ?Sized,
    K: FnMut(usize, &ResidualEraser<f32>) -> Result<()>,
{
    config.validate()?;
    let o = &config.optim;
    if classifier.num_classes() != train.num_cameras() {
        return Err(Error::data(format!(
            "classifier knows {} camera types, corpus has {}",
            classifier.num_classes(),
            train.num_cameras()
        )));
    }
    let mut eraser = ResidualEraser::<f32>::build(config.eraser_config())?;
    let mut adam = Adam::new(config.adam(o.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed.wrapping_add(1));
    let mut log = Vec::with_capacity(o.steps);
    on_checkpoint(0, &eraser)?;

    for step in 1..=o.steps {
        let groups = (0..o.groups_per_batch)
            .map(|_| train.sample_group_with(o.group_size, config.data.patch_size, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let parts = map_indexed(groups.len(), |i| group_step(&eraser, &groups[i], embedder, classifier, &config.loss));
        let mut grads = eraser.zeros_like();
        let n = groups.len() as f64;
        let mut row = StepLog {
            step,
            l_es: 0.0,
            l_tf: 0.0,
            l_ci: 0.0,
            hybrid: 0.0,
        };
        for part in parts {
            let (r, g) = part?;
            row.l_es += r.l_es / n;
            row.l_tf += r.l_tf / n;
            row.l_ci += r.l_ci / n;
            accumulate(&mut grads, &g, (1.0 / n) as f32);
        }
        row.hybrid = config.loss.lambda_es * row.l_es + config.loss.lambda_tf * row.l_tf + config.loss.lambda_ci * row.l_ci;
        if ![row.l_es, row.l_tf, row.l_ci, row.hybrid].iter().all(|v| v.is_finite())
            || grads.named_params().iter().any(|(_, _, v)| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::numerical(format!("non-finite loss or gradient at step {step}")));
        }
        let lr = learning_rate_at(o.learning_rate, step - 1, o.steps, &o.decay_at, o.decay_factor);
        adam_step(&mut adam, lr, &mut eraser, &grads);
        if step % 50 == 0 || step == o.steps {
            log::info!(
                "eraser step {step}: hybrid {:.4} (es {:.4} tf {:.5} ci {:.4})",
                row.hybrid,
                row.l_es,
                row.l_tf,
                row.l_ci
            );
        }
        log.push(row);
        if (o.checkpoint_every > 0 && step % o.checkpoint_every == 0) || step == o.steps {
            on_checkpoint(step, &eraser)?;
        }
    }
    Ok(EraserRun { eraser, log })
}

pub const METRICS_HEADER: &str = "step,l_es,l_tf,l_ci,hybrid";

pub fn write_metrics_csv<W: Write>(log: &[StepLog], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in log {
        writeln!(out, "{},{},{},{},{}", r.step, r.l_es, r.l_tf, r.l_ci, r.hybrid)?;
    }
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<StepLog>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected header `{METRICS_HEADER}`"),
        });
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format {
                path: path.to_path_buf(),
                reason: format!("malformed row `{line}`"),
            };
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(StepLog {
                step: f[0].parse().map_err(|_| bad())?,
                l_es: num(f[1])?,
                l_tf: num(f[2])?,
                l_ci: num(f[3])?,
                hybrid: num(f[4])?,
            })
        })
        .collect()
}

/// Erases a patch and returns its trace `x - F(x)`.
pub fn extract_trace(eraser: &ResidualEraser<f32>, x: &Array3<f32>) -> Result<Array3<f32>> {
    Ok(x - &eraser.forward(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scan_dataset;
    use crate::models::parameter_hash;
    use crate::synth::{generate_corpus, CameraProfile, SynthConfig};

    fn tiny_corpus(dir: &Path, cameras: usize) -> Corpus {
        let cfg = SynthConfig {
            seed: 5,
            images_per_camera: 4,
            width: 32,
            height: 32,
            pristine_images: 0,
            profiles: CameraProfile::defaults(cameras),
        };
        generate_corpus(&cfg, dir, None).unwrap();
        scan_dataset(dir).unwrap().load_corpus().unwrap()
    }

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.data.patch_size = 16;
        cfg.model.eraser_depth = 2;
        cfg.model.eraser_width = 4;
        cfg.model.classifier_width = 4;
        cfg.optim.groups_per_batch = 2;
        cfg.optim.group_size = 3;
        cfg.optim.steps = 3;
        cfg.optim.classifier.steps = 4;
        cfg.optim.classifier.batch_size = 4;
        cfg.optim.classifier.eval_every = 2;
        cfg.optim.classifier.val_patches_per_camera = 2;
        cfg
    }

    #[test]
    fn schedule_halves_at_milestones() {
        let lr = |s| learning_rate_at(1.0, s, 100, &[0.6, 0.85], 0.5);
        assert_eq!(lr(0), 1.0);
        assert_eq!(lr(59), 1.0);
        assert_eq!(lr(60), 0.5);
        assert_eq!(lr(84), 0.5);
        assert_eq!(lr(85), 0.25);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let parsed = TrainConfig::from_toml("[optim]\ngroup_size = 6\n[loss]\nlambda_tf = 10.0\n").unwrap();
        assert_eq!(parsed.optim.group_size, 6);
        assert_eq!(parsed.loss.lambda_tf, 10.0);
        assert!(TrainConfig::from_toml("[optim]\ngroup_size = 1\n").is_err());
        assert!(TrainConfig::from_toml("[optim]\nlearning_rate = 0.0\n").is_err());
        assert!(TrainConfig::from_toml("[optim]\nbogus = 1\n").is_err());
        assert!(TrainConfig::from_toml("[data]\npatch_size = 8\n").is_err());
    }

    #[test]
    fn classifier_training_is_deterministic_and_rejects_one_class() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), 3);
        let cfg = tiny_config();
        let a = train_classifier(&corpus, &corpus, &cfg).unwrap();
        let b = train_classifier(&corpus, &corpus, &cfg).unwrap();
        assert_eq!(a.log.len(), 3);
        assert_eq!(format!("{:?}", a.log), format!("{:?}", b.log));
        assert_eq!(a.classifier, b.classifier);

        let mut zero = cfg.clone();
        zero.optim.classifier.steps = 0;
        let z = train_classifier(&corpus, &corpus, &zero).unwrap();
        assert_eq!(z.best_step, 0);
        assert_eq!(z.log.len(), 1);

        let mut single = corpus.clone();
        single.manifest.cameras.truncate(1);
        single.images.truncate(1);
        assert!(train_classifier(&single, &single, &cfg).is_err());
    }

    #[test]
    fn eraser_training_leaves_classifier_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), 3);
        let cfg = tiny_config();
        let classifier = train_classifier(&corpus, &corpus, &cfg).unwrap().classifier;
        let before = parameter_hash(&classifier);
        let mut seen = Vec::new();
        let run = train_eraser(&corpus, &classifier, &classifier, &cfg, |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(parameter_hash(&classifier), before);
        assert_eq!(seen, vec![0, 3]);
        assert_eq!(run.log.len(), 3);
        for r in &run.log {
            let expect = 3.0 * r.l_es + 1000.0 * r.l_tf + r.l_ci;
            assert!((r.hybrid - expect).abs() <= 1e-6 * expect.abs().max(1.0));
        }
        let again = train_eraser(&corpus, &classifier, &classifier, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(again.eraser, run.eraser);

        let mut buf = Vec::new();
        write_metrics_csv(&run.log, &mut buf).unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), run.log);
    }

    #[test]
    fn eraser_training_needs_enough_cameras() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus(dir.path(), 2);
        let mut cfg = tiny_config();
        cfg.optim.classifier.steps = 0;
        let classifier = train_classifier(&corpus, &corpus, &cfg).unwrap().classifier;
        assert!(train_eraser(&corpus, &classifier, &classifier, &cfg, |_, _| Ok(())).is_err());
    }
}
