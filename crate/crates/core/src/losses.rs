//! Hybrid loss for Siamese trace erasing.
//!
//! All three terms are evaluated over a group of `G` patches from distinct
//! cameras. Pairwise terms use the cyclic-shift schedule: for every step
//! `k = 1..G-1` item `g` is paired with item `(g + k) mod G`, so the `G - 1`
//! passes together visit every ordered pair of distinct indices once.
//!
//! Every loss returns its value together with the gradient with respect to
//! the erased patches (the eraser outputs); the training loop pushes that
//! gradient through the eraser.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::models::{Embedder, OriginClassifier, TraceEraser};
use crate::nn::{cross_entropy, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the embedded similarity term.
    pub lambda_es: f64,
    /// Weight of the truncated fidelity term.
    pub lambda_tf: f64,
    /// Weight of the cross identity term.
    pub lambda_ci: f64,
    /// Hinge margin on normalised embedding distances.
    pub margin: f64,
    /// Per-pixel deviation (8-bit units) below which fidelity is free.
    pub threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_es: 3.0,
            lambda_tf: 1000.0,
            lambda_ci: 1.0,
            margin: 0.5,
            threshold: 3.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("loss.lambda_es", self.lambda_es),
            ("loss.lambda_tf", self.lambda_tf),
            ("loss.lambda_ci", self.lambda_ci),
            ("loss.margin", self.margin),
            ("loss.threshold", self.threshold),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to each erased patch.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Vec<Array3<T>>,
}

/// `output[g] = input[(g + k) mod G]`.
pub fn cyclic_shift<I: Clone>(items: &[I], k: usize) -> Vec<I> {
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|g| items[(g + k) % n].clone()).collect()
}

fn require_pairs(g: usize) -> Result<()> {
    if g < 2 {
        return Err(Error::data("group too small for pairwise loss"));
    }
    Ok(())
}

/// `G x F` matrix of L2-normalised embeddings plus the norms they had.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    pub features: Array2<T>,
    pub norms: Array1<T>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    /// Normalises each raw feature vector. Zero vectors are rejected.
    pub fn normalize(raw: &[Array1<T>]) -> Result<Self> {
        let f = raw.first().map(|r| r.len()).unwrap_or(0);
        let mut features = Array2::zeros((raw.len(), f));
        let mut norms = Array1::zeros(raw.len());
        for (i, r) in raw.iter().enumerate() {
            if r.len() != f {
                return Err(Error::shape("embeddings of different lengths"));
            }
            let norm = r.dot(r).sqrt();
            if !(norm > T::zero()) || !norm.is_finite() {
                return Err(Error::numerical(format!("embedding {i} has zero or non-finite norm")));
            }
            features.row_mut(i).assign(&(r / norm));
            norms[i] = norm;
        }
        Ok(EmbeddingBatch { features, norms })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hinged-distance loss over the cyclic-shift schedule and its gradient
    /// with respect to the *raw* (pre-normalisation) features.
    pub fn hinge_loss(&self, margin: T) -> Result<(T, Array2<T>)> {
        let g = self.len();
        require_pairs(g)?;
        let mut loss = T::zero();
        let mut dn = Array2::zeros(self.features.dim());
        let weight = T::one() / T::from_usize(g * (g - 1)).unwrap();
        for k in 1..g {
            let mut step = T::zero();
            for a in 0..g {
                let b = (a + k) % g;
                let diff = &self.features.row(a) - &self.features.row(b);
                let dist = diff.dot(&diff).sqrt();
                if dist > margin {
                    step += dist - margin;
                    let pull = diff * (weight / dist);
                    let mut ra = dn.row_mut(a);
                    ra += &pull;
                    let mut rb = dn.row_mut(b);
                    rb -= &pull;
                }
            }
            loss += step / T::from_usize(g).unwrap();
        }
        loss = loss / T::from_usize(g - 1).unwrap();
        // Chain rule through n = f / |f|: df = (dn - n <n, dn>) / |f|.
        let mut df = dn;
        for i in 0..g {
            let n = self.features.row(i);
            let proj = n.dot(&df.row(i));
            let mut row = df.row_mut(i);
            row.scaled_add(-proj, &n);
            row /= self.norms[i];
        }
        Ok((loss, df))
    }
}

/// Embedded similarity loss `L_es` of a group of erased patches.
///
/// Each patch is embedded and L2-normalised; for `k = 1..G-1` the mean over
/// `g` of `max(0, |n_g - n_{(g+k) mod G}| - margin)` is accumulated, and the
/// sum is divided by `G - 1`.
pub fn embedded_similarity_loss<T: Scalar, E: Embedder<T> + ?Sized>(
    signals: &[Array3<T>],
    embedder: &E,
    margin: T,
) -> Result<LossGrad<T>> {
    require_pairs(signals.len())?;
    let mut raw = Vec::with_capacity(signals.len());
    let mut tapes = Vec::with_capacity(signals.len());
    for s in signals {
        let (f, tape) = embedder.embed_taped(s)?;
        raw.push(f);
        tapes.push(tape);
    }
    let batch = EmbeddingBatch::normalize(&raw)?;
    let (value, dfeat) = batch.hinge_loss(margin)?;
    let grad = tapes
        .iter()
        .zip(dfeat.outer_iter())
        .map(|(tape, df)| embedder.embed_backward(tape, &df.to_owned()))
        .collect();
    Ok(LossGrad { value, grad })
}

/// Truncated fidelity loss `L_tf` of one patch: the mean over all elements
/// of `d = |input - output|`, where elements with `d <= threshold` count as 0.
/// The returned gradient is with respect to `output`; it is 0 on the
/// truncated branch, including exactly at `d == threshold`.
pub fn truncated_fidelity_loss<T: Scalar>(
    input: &Array3<T>,
    output: &Array3<T>,
    threshold: T,
) -> Result<(T, Array3<T>)> {
    if input.dim() != output.dim() {
        return Err(Error::shape(format!(
            "fidelity input {:?} vs output {:?}",
            input.dim(),
            output.dim()
        )));
    }
    let n = T::from_usize(input.len().max(1)).unwrap();
    let mut total = T::zero();
    let mut grad = Array3::zeros(output.dim());
    ndarray::Zip::from(&mut grad)
        .and(input)
        .and(output)
        .for_each(|g, &x, &y| {
            let d = (x - y).abs();
            if d > threshold {
                total += d;
                *g = (y - x).signum() / n;
            }
        });
    Ok((total / n, grad))
}

/// Cross identity loss `L_ci`.
///
/// With `trace[g] = input[g] - signal[g]`, for each `k = 1..G-1` the batch
/// `signal + shift(trace, k)` is classified and the mean cross-entropy
/// against `shift(labels, k)` is accumulated; the sum is divided by `G - 1`.
/// The classifier is read-only; gradients flow only to the signals (both
/// directly and through the traces).
pub fn cross_identity_loss<T: Scalar, C: OriginClassifier<T> + ?Sized>(
    inputs: &[Array3<T>],
    signals: &[Array3<T>],
    labels: &[usize],
    classifier: &C,
) -> Result<LossGrad<T>> {
    let g = inputs.len();
    require_pairs(g)?;
    if signals.len() != g || labels.len() != g {
        return Err(Error::shape("inputs, signals and labels must have equal length"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classifier.num_classes()) {
        return Err(Error::data(format!(
            "label {bad} outside classifier vocabulary of {}",
            classifier.num_classes()
        )));
    }
    let traces: Vec<Array3<T>> = inputs.iter().zip(signals).map(|(x, s)| x - s).collect();
    let weight = T::one() / T::from_usize(g * (g - 1)).unwrap();
    let mut grad: Vec<Array3<T>> = signals.iter().map(|s| Array3::zeros(s.dim())).collect();
    let mut loss = T::zero();
    for k in 1..g {
        let shifted_traces = cyclic_shift(&traces, k);
        let shifted_labels = cyclic_shift(labels, k);
        let mut step = T::zero();
        for a in 0..g {
            let synthetic = &signals[a] + &shifted_traces[a];
            let (logits, tape) = classifier.logits_taped(&synthetic)?;
            let (ce, dlogits) = cross_entropy(&logits, shifted_labels[a]);
            step += ce;
            let dx = classifier.logits_backward(&tape, &(dlogits * weight));
            grad[a] += &dx;
            grad[(a + k) % g] -= &dx;
        }
        loss += step / T::from_usize(g).unwrap();
    }
    Ok(LossGrad {
        value: loss / T::from_usize(g - 1).unwrap(),
        grad,
    })
}

/// Value and per-term breakdown of the hybrid loss.
#[derive(Debug, Clone)]
pub struct HybridLoss<T> {
    pub total: T,
    pub es: T,
    pub tf: T,
    pub ci: T,
    /// Gradient of `total` with respect to each erased patch.
    pub grad: Vec<Array3<T>>,
}

/// `lambda_es * L_es + lambda_tf * L_tf + lambda_ci * L_ci` for erased
/// patches `signals` of `inputs`. `L_tf` is averaged over the group members.
/// All three raw terms are always evaluated for logging; gradients are only
/// computed for terms with a non-zero weight.
pub fn hybrid_loss_from_signals<T, E, C>(
    inputs: &[Array3<T>],
    signals: &[Array3<T>],
    labels: &[usize],
    embedder: &E,
    classifier: &C,
    config: &LossConfig,
) -> Result<HybridLoss<T>>
where
    T: Scalar,
    E: Embedder<T> + ?Sized,
    C: OriginClassifier<T> + ?Sized,
{
    config.validate()?;
    let g = inputs.len();
    require_pairs(g)?;
    let lam = |v: f64| T::from_f64_lossy(v);
    let mut grad: Vec<Array3<T>> = signals.iter().map(|s| Array3::zeros(s.dim())).collect();

    let es = embedded_similarity_loss(signals, embedder, lam(config.margin))?;
    if config.lambda_es != 0.0 {
        for (acc, g) in grad.iter_mut().zip(&es.grad) {
            acc.scaled_add(lam(config.lambda_es), g);
        }
    }

    let mut tf = T::zero();
    let member = T::one() / T::from_usize(g).unwrap();
    for ((x, s), acc) in inputs.iter().zip(signals).zip(grad.iter_mut()) {
        let (v, dg) = truncated_fidelity_loss(x, s, lam(config.threshold))?;
        tf += v * member;
        if config.lambda_tf != 0.0 {
            acc.scaled_add(lam(config.lambda_tf) * member, &dg);
        }
    }

    let ci = if config.lambda_ci != 0.0 {
        let ci = cross_identity_loss(inputs, signals, labels, classifier)?;
        for (acc, g) in grad.iter_mut().zip(&ci.grad) {
            acc.scaled_add(lam(config.lambda_ci), g);
        }
        ci.value
    } else {
        cross_identity_value(inputs, signals, labels, classifier)?
    };

    let total = lam(config.lambda_es) * es.value + lam(config.lambda_tf) * tf + lam(config.lambda_ci) * ci;
    Ok(HybridLoss {
        total,
        es: es.value,
        tf,
        ci,
        grad,
    })
}

/// Forward-only `L_ci`, used for logging when its weight is zero.
fn cross_identity_value<T: Scalar, C: OriginClassifier<T> + ?Sized>(
    inputs: &[Array3<T>],
    signals: &[Array3<T>],
    labels: &[usize],
    classifier: &C,
) -> Result<T> {
    let g = inputs.len();
    let mut loss = T::zero();
    for k in 1..g {
        for a in 0..g {
            let b = (a + k) % g;
            let synthetic = &signals[a] + &(&inputs[b] - &signals[b]);
            let (ce, _) = cross_entropy(&classifier.logits(&synthetic)?, labels[b]);
            loss += ce;
        }
    }
    Ok(loss / T::from_usize(g * (g - 1)).unwrap())
}

/// Erases every input with `eraser`, then evaluates the hybrid loss.
pub fn hybrid_loss<T, R, E, C>(
    inputs: &[Array3<T>],
    labels: &[usize],
    eraser: &R,
    embedder: &E,
    classifier: &C,
    config: &LossConfig,
) -> Result<HybridLoss<T>>
where
    T: Scalar,
    R: TraceEraser<T> + ?Sized,
    E: Embedder<T> + ?Sized,
    C: OriginClassifier<T> + ?Sized,
{
    let signals = inputs.iter().map(|x| eraser.erase(x)).collect::<Result<Vec<_>>>()?;
    hybrid_loss_from_signals(inputs, &signals, labels, embedder, classifier, config)
}
