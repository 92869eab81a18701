//! Majority-vote classification, clustering and verification over labelled
//! image sets.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fingerprint::CameraFingerprint;
use super::pce::pce;
use super::report::{EvaluationReport, Summary, Task};
use super::residual::ResidualExtractor;
use crate::imaging::{center_crop, crop};
use crate::models::{Embedder, OriginClassifier};
use crate::parallel::map_indexed;
use crate::{Error, Result};

/// An image in display units and its camera label.
pub type Labeled = (Array3<f32>, usize);

fn crop_rng(seed: u64, repeat: usize, image: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repeat as u64) << 32) | image as u64);
    rng
}

fn random_crop<R: Rng>(image: &Array3<f32>, patch: usize, rng: &mut R) -> Result<Array3<f32>> {
    let (_, h, w) = image.dim();
    if h < patch || w < patch {
        return Err(Error::shape(format!(
            "image {h}x{w} is smaller than the {patch}x{patch} classifier input"
        )));
    }
    let top = rng.random_range(0..=h - patch);
    let left = rng.random_range(0..=w - patch);
    Ok(crop(image, top, left, patch, patch))
}

/// The most frequent label; ties go to the lowest label.
pub fn majority_vote(labels: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (label, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l)
}

/// Classifies `crops` random `patch x patch` crops and returns the majority
/// prediction.
pub fn classify_majority<C: OriginClassifier<f32> + ?Sized>(
    image: &Array3<f32>,
    classifier: &C,
    patch: usize,
    crops: usize,
    seed: u64,
) -> Result<usize> {
    classify_majority_with(image, classifier, patch, crops, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn classify_majority_with<C: OriginClassifier<f32> + ?Sized, R: Rng>(
    image: &Array3<f32>,
    classifier: &C,
    patch: usize,
    crops: usize,
    rng: &mut R,
) -> Result<usize> {
    if crops == 0 {
        return Err(Error::config("crops", "must be >= 1"));
    }
    let mut preds = Vec::with_capacity(crops);
    for _ in 0..crops {
        preds.push(classifier.predict(&random_crop(image, patch, rng)?)?);
    }
    Ok(majority_vote(&preds).expect("at least one crop"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationSettings {
    pub patch: usize,
    pub crops: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ClassificationSettings {
    fn default() -> Self {
        ClassificationSettings {
            patch: 96,
            crops: 4,
            repeats: 10,
            seed: 0,
        }
    }
}

fn per_camera_means(vocabulary: &[String], sums: &[f64], counts: &[usize]) -> BTreeMap<String, f64> {
    vocabulary
        .iter()
        .zip(sums.iter().zip(counts))
        .filter(|(_, (_, &n))| n > 0)
        .map(|(name, (&s, &n))| (name.clone(), s / n as f64))
        .collect()
}

/// Fraction of images whose majority prediction equals their label, over
/// `repeats` independent crop draws.
pub fn classification_accuracy<C: OriginClassifier<f32> + ?Sized>(
    method: &str,
    images: &[Labeled],
    classifier: &C,
    vocabulary: &[String],
    settings: &ClassificationSettings,
) -> Result<EvaluationReport> {
    classification_report(method, Task::Classification, images, classifier, vocabulary, settings)
}

/// Accuracy of a classifier trained on traces, applied to trace inputs.
pub fn trace_origin_accuracy<C: OriginClassifier<f32> + ?Sized>(
    method: &str,
    traces: &[Labeled],
    classifier: &C,
    vocabulary: &[String],
    settings: &ClassificationSettings,
) -> Result<EvaluationReport> {
    classification_report(method, Task::Trace, traces, classifier, vocabulary, settings)
}

fn classification_report<C: OriginClassifier<f32> + ?Sized>(
    method: &str,
    task: Task,
    images: &[Labeled],
    classifier: &C,
    vocabulary: &[String],
    settings: &ClassificationSettings,
) -> Result<EvaluationReport> {
    if images.is_empty() {
        return Err(Error::data("no images to classify"));
    }
    if settings.repeats == 0 {
        return Err(Error::config("repeats", "must be >= 1"));
    }
    let k = vocabulary.len();
    if let Some((_, l)) = images.iter().find(|(_, l)| *l >= k) {
        return Err(Error::data(format!("label {l} outside vocabulary of {k}")));
    }
    let mut accuracies = Vec::with_capacity(settings.repeats);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for repeat in 0..settings.repeats {
        let hits = map_indexed(images.len(), |i| {
            let mut rng = crop_rng(settings.seed, repeat, i);
            classify_majority_with(&images[i].0, classifier, settings.patch, settings.crops, &mut rng)
                .map(|p| p == images[i].1)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (hit, (_, label)) in hits.iter().zip(images) {
            sums[*label] += *hit as u8 as f64;
            counts[*label] += 1;
        }
        accuracies.push(hits.iter().filter(|h| **h).count() as f64 / images.len() as f64);
    }
    Ok(EvaluationReport::new(
        method,
        task,
        Summary::of(&accuracies)?,
        settings.repeats,
        per_camera_means(vocabulary, &sums, &counts),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_once<R: Rng>(points: &Array2<f64>, k: usize, rng: &mut R) -> KMeans {
    let (n, dim) = points.dim();
    let mut centroids = Array2::zeros((k, dim));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points.outer_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&points.row(pick));
        for (i, p) in points.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(j)));
        }
    }
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.outer_iter().enumerate() {
            let (j, _) = nearest(p, &centroids);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, p) in points.outer_iter().enumerate() {
            let mut row = sums.row_mut(assignments[i]);
            row += &p;
            counts[assignments[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&mean);
            }
        }
    }
    let inertia = points
        .outer_iter()
        .zip(&assignments)
        .map(|(p, &j)| sq_dist(p, centroids.row(j)))
        .sum();
    KMeans {
        centroids,
        assignments,
        inertia,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// inertia is kept.
pub fn kmeans(points: &Array2<f64>, k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::config("clusters", "must be >= 1"));
    }
    if k > n {
        return Err(Error::data(format!("{k} clusters requested for {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Each cluster is labelled with its most frequent true label (lowest label
/// on ties); returns the fraction of samples matching their cluster's label.
pub fn cluster_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() || labels.is_empty() {
        return Err(Error::data("need one label per clustered sample"));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&c, &l) in assignments.iter().zip(labels) {
        members.entry(c).or_default().push(l);
    }
    let correct: usize = members
        .values()
        .map(|ls| {
            let major = majority_vote(ls).expect("non-empty cluster");
            ls.iter().filter(|&&l| l == major).count()
        })
        .sum();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteringSettings {
    pub clusters: usize,
    pub patch: usize,
    pub patches_per_image: usize,
    pub repeats: usize,
    pub restarts: usize,
    pub seed: u64,
}

/// Embeds `patches_per_image` random crops of every image, clusters the
/// normalised features and scores the clusters per patch.
pub fn clustering_accuracy<E: Embedder<f32> + ?Sized>(
    method: &str,
    images: &[Labeled],
    embedder: &E,
    vocabulary: &[String],
    settings: &ClusteringSettings,
) -> Result<EvaluationReport> {
    if images.is_empty() {
        return Err(Error::data("no images to cluster"));
    }
    if settings.repeats == 0 || settings.patches_per_image == 0 {
        return Err(Error::config("repeats", "repeats and patches per image must be >= 1"));
    }
    let k = vocabulary.len();
    let mut accuracies = Vec::with_capacity(settings.repeats);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for repeat in 0..settings.repeats {
        let feats = map_indexed(images.len(), |i| -> Result<Vec<Vec<f64>>> {
            let mut rng = crop_rng(settings.seed, repeat, i);
            (0..settings.patches_per_image)
                .map(|_| {
                    let f = embedder.embed(&random_crop(&images[i].0, settings.patch, &mut rng)?)?;
                    let v: Vec<f64> = f.iter().map(|x| *x as f64).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    Ok(v.into_iter().map(|x| x / norm).collect())
                })
                .collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let dim = embedder.feature_len();
        let rows: Vec<f64> = feats.iter().flatten().flatten().copied().collect();
        let n = rows.len() / dim;
        let points = Array2::from_shape_vec((n, dim), rows).map_err(|e| Error::shape(e.to_string()))?;
        let labels: Vec<usize> = images
            .iter()
            .flat_map(|(_, l)| std::iter::repeat_n(*l, settings.patches_per_image))
            .collect();
        let fit = kmeans(&points, settings.clusters, settings.restarts, settings.seed ^ repeat as u64)?;
        accuracies.push(cluster_accuracy(&fit.assignments, &labels)?);
        let mut majors = BTreeMap::new();
        for c in 0..settings.clusters {
            let ls: Vec<usize> = labels
                .iter()
                .zip(&fit.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(l, _)| *l)
                .collect();
            if let Some(m) = majority_vote(&ls) {
                majors.insert(c, m);
            }
        }
        for (&l, a) in labels.iter().zip(&fit.assignments) {
            if l < k {
                sums[l] += (majors[a] == l) as u8 as f64;
                counts[l] += 1;
            }
        }
    }
    Ok(EvaluationReport::new(
        method,
        Task::Clustering,
        Summary::of(&accuracies)?,
        settings.repeats,
        per_camera_means(vocabulary, &sums, &counts),
    ))
}

/// Mean PCE between every image's residual and its camera's fingerprint.
/// Images are center-cropped to the fingerprint size.
pub fn verification_report<X: ResidualExtractor + ?Sized>(
    method: &str,
    images: &[Labeled],
    fingerprints: &[CameraFingerprint],
    vocabulary: &[String],
    extractor: &X,
    exclusion_radius: usize,
) -> Result<EvaluationReport> {
    if images.is_empty() {
        return Err(Error::data("no images to verify"));
    }
    let lookup = |label: usize| -> Result<&CameraFingerprint> {
        let name = vocabulary
            .get(label)
            .ok_or_else(|| Error::data(format!("label {label} outside vocabulary")))?;
        fingerprints
            .iter()
            .find(|f| &f.camera == name)
            .ok_or_else(|| Error::data(format!("no fingerprint for camera type `{name}`")))
    };
    for (_, l) in images {
        lookup(*l)?;
    }
    let values = map_indexed(images.len(), |i| {
        let fp = lookup(images[i].1)?;
        let (h, w) = fp.residual.dim();
        let residual = extractor.extract_rgb(&center_crop(&images[i].0, h, w)?)?;
        pce(&residual, &fp.residual, exclusion_radius)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![0.0; vocabulary.len()];
    let mut counts = vec![0usize; vocabulary.len()];
    for (v, (_, l)) in values.iter().zip(images) {
        sums[*l] += v;
        counts[*l] += 1;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(EvaluationReport::new(
        method,
        Task::Verification,
        Summary { mean, std: 0.0 },
        1,
        per_camera_means(vocabulary, &sums, &counts),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        outputs: Vec<usize>,
        calls: AtomicUsize,
        classes: usize,
    }

    impl OriginClassifier<f32> for Scripted {
        type ClassifyTape = ();
        fn num_classes(&self) -> usize {
            self.classes
        }
        fn logits_taped(&self, _: &Array3<f32>) -> Result<(Array1<f32>, ())> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            let mut l = Array1::zeros(self.classes);
            l[self.outputs[i % self.outputs.len()]] = 1.0;
            Ok((l, ()))
        }
        fn logits_backward(&self, _: &(), _: &Array1<f32>) -> Array3<f32> {
            unreachable!()
        }
    }

    fn scripted(outputs: Vec<usize>, classes: usize) -> Scripted {
        Scripted {
            outputs,
            calls: AtomicUsize::new(0),
            classes,
        }
    }

    /// Reads the label back from the image's constant value.
    struct Oracle;
    impl OriginClassifier<f32> for Oracle {
        type ClassifyTape = ();
        fn num_classes(&self) -> usize {
            3
        }
        fn logits_taped(&self, x: &Array3<f32>) -> Result<(Array1<f32>, ())> {
            let mut l = Array1::zeros(3);
            l[x[[0, 0, 0]] as usize] = 1.0;
            Ok((l, ()))
        }
        fn logits_backward(&self, _: &(), _: &Array1<f32>) -> Array3<f32> {
            unreachable!()
        }
    }

    fn img(v: f32) -> Array3<f32> {
        Array3::from_elem((3, 20, 20), v)
    }

    #[test]
    fn majority_rule() {
        assert_eq!(majority_vote(&[2, 2, 2, 2]), Some(2));
        assert_eq!(majority_vote(&[0, 0, 1, 2]), Some(0));
        assert_eq!(majority_vote(&[3, 1, 3, 1]), Some(1));
        assert_eq!(majority_vote(&[]), None);
        let x = img(0.0);
        assert_eq!(classify_majority(&x, &scripted(vec![1, 1, 0, 2], 3), 16, 4, 0).unwrap(), 1);
        assert_eq!(classify_majority(&x, &scripted(vec![2, 0, 2, 0], 3), 16, 4, 0).unwrap(), 0);
        assert!(classify_majority(&x, &scripted(vec![0], 3), 24, 4, 0).is_err());
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let vocab: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let images: Vec<Labeled> = (0..9).map(|i| (img((i % 3) as f32), i % 3)).collect();
        let settings = ClassificationSettings {
            patch: 16,
            crops: 4,
            repeats: 3,
            seed: 1,
        };
        let r = classification_accuracy("ori", &images, &Oracle, &vocab, &settings).unwrap();
        assert_eq!((r.mean, r.std, r.repeats), (1.0, 0.0, 3));
        assert_eq!(r.per_camera.len(), 3);
        assert!(classification_accuracy("ori", &[], &Oracle, &vocab, &settings).is_err());
    }

    #[test]
    fn cluster_scoring() {
        assert_eq!(cluster_accuracy(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!((cluster_accuracy(&[0, 0, 0], &[0, 0, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cluster_accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.5);
        let mixed = cluster_accuracy(&[0, 0, 0, 0, 0, 0], &[0, 0, 0, 1, 1, 2]).unwrap();
        let split = cluster_accuracy(&[0, 0, 0, 1, 1, 2], &[0, 0, 0, 1, 1, 2]).unwrap();
        assert!(split >= mixed);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let fit = kmeans(&pts, 2, 10, 3).unwrap();
        assert_eq!(cluster_accuracy(&fit.assignments, &[0, 0, 0, 1, 1, 1]).unwrap(), 1.0);
        assert!(fit.inertia < 0.1);
        assert!(kmeans(&pts, 7, 10, 0).is_err());
        assert_eq!(kmeans(&pts, 2, 10, 3).unwrap(), fit);
    }
}
