//! One method's full evaluation: every task whose inputs are available.

use std::collections::BTreeMap;

use super::evaluate::{
    classification_accuracy, clustering_accuracy, verification_report, ClassificationSettings, ClusteringSettings,
    Labeled,
};
use super::fingerprint::CameraFingerprint;
use super::report::{EvaluationReport, Summary, Task};
use super::residual::ResidualExtractor;
use crate::metrics::{l1_distance, niqe, NiqePristineModel};
use crate::models::CameraClassifier;
use crate::parallel::map_indexed;
use crate::{Error, Result};

pub struct Suite<'a, X: ResidualExtractor + ?Sized> {
    pub vocabulary: &'a [String],
    pub classifier: Option<&'a CameraClassifier<f32>>,
    pub classification: ClassificationSettings,
    pub clustering: Option<ClusteringSettings>,
    pub fingerprints: Option<(&'a [CameraFingerprint], &'a X)>,
    pub exclusion_radius: usize,
    pub niqe_model: Option<&'a NiqePristineModel>,
}

fn per_image_report(
    method: &str,
    task: Task,
    values: &[f64],
    images: &[Labeled],
    vocabulary: &[String],
) -> Result<EvaluationReport> {
    let mut per: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (v, (_, l)) in values.iter().zip(images) {
        let e = per.entry(vocabulary[*l].clone()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    Ok(EvaluationReport::new(
        method,
        task,
        Summary::of(values)?,
        1,
        per.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    ))
}

/// Mean L1 distance between paired images, per camera and overall. The std
/// is taken across images.
pub fn l1_report(method: &str, original: &[Labeled], processed: &[Labeled], vocabulary: &[String]) -> Result<EvaluationReport> {
    if original.len() != processed.len() {
        return Err(Error::data("original and processed sets differ in size"));
    }
    let values = map_indexed(original.len(), |i| l1_distance(&original[i].0, &processed[i].0))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    per_image_report(method, Task::L1, &values, processed, vocabulary)
}

pub fn niqe_report(method: &str, images: &[Labeled], model: &NiqePristineModel, vocabulary: &[String]) -> Result<EvaluationReport> {
    let values = map_indexed(images.len(), |i| niqe(&images[i].0, model))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    per_image_report(method, Task::Niqe, &values, images, vocabulary)
}

impl<X: ResidualExtractor + ?Sized> Suite<'_, X> {
    /// Reports for `processed`, in task order. L1 is computed against
    /// `original` (pairs share an index).
    pub fn run(&self, method: &str, original: &[Labeled], processed: &[Labeled]) -> Result<Vec<EvaluationReport>> {
        if original.len() != processed.len() {
            return Err(Error::data("original and processed sets differ in size"));
        }
        if original.iter().zip(processed).any(|(a, b)| a.1 != b.1) {
            return Err(Error::data("original and processed labels are not paired"));
        }
        let mut out = Vec::new();
        if let Some(c) = self.classifier {
            out.push(classification_accuracy(method, processed, c, self.vocabulary, &self.classification)?);
            if let Some(settings) = &self.clustering {
                out.push(clustering_accuracy(method, processed, c, self.vocabulary, settings)?);
            }
        }
        if let Some((fps, extractor)) = self.fingerprints {
            out.push(verification_report(method, processed, fps, self.vocabulary, extractor, self.exclusion_radius)?);
        }
        if let Some(model) = self.niqe_model {
            out.push(niqe_report(method, processed, model, self.vocabulary)?);
        }
        out.push(l1_report(method, original, processed, self.vocabulary)?);
        for r in &out {
            r.validate()?;
        }
        Ok(out)
    }
}
