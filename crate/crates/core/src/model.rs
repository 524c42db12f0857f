//! MLP encoder, class-proxy classifier, the two training losses and plain SGD.

use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};
use crate::ClassId;

/// A trainable tensor together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f64> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    /// Adds `g` into the gradient accumulator.
    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.grad.shape() {
            return Err(Error::shape("accumulate", self.grad.shape(), g.shape()));
        }
        for (a, &v) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += v;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
}

/// `p ← p − lr·g` for every parameter, then clears the gradients.
pub fn sgd_step<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Parameter<T>>, lr: T) -> Result<()> {
    if !(lr > T::zero()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    for p in params {
        if p.value.shape() != p.grad.shape() {
            return Err(Error::shape("sgd_step", p.value.shape(), p.grad.shape()));
        }
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data_mut()) {
            *v -= lr * *g;
            *g = T::zero();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl EncoderSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.embed_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f64> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

/// Multilayer perceptron `f_θ`: affine layers with ReLU between them and a
/// linear embedding layer on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T = f64> {
    spec: EncoderSpec,
    layers: Vec<Linear<T>>,
}

impl<T: Scalar> Encoder<T> {
    /// He-uniform weights for ReLU layers, Glorot-uniform for the embedding
    /// layer, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: EncoderSpec, rng: &mut R) -> Result<Self> {
        let widths = spec.widths();
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!("layer widths must be positive: {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = if i + 1 < n {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect();
                Linear {
                    weight: Parameter::new(format!("encoder.{i}.weight"), Tensor::from_parts(vec![fan_in, fan_out], data)),
                    bias: Parameter::new(format!("encoder.{i}.bias"), Tensor::zeros(&[fan_out])),
                }
            })
            .collect();
        Ok(Encoder { spec, layers })
    }

    /// Builds an encoder from explicit `(weight[in×out], bias[out])` pairs.
    pub fn from_layers(layers: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
        }
        let mut widths = Vec::new();
        let mut out = Vec::new();
        for (i, (w, b)) in layers.into_iter().enumerate() {
            let (fan_in, fan_out) = w
                .dims2()
                .ok_or_else(|| Error::shape("encoder layer", w.shape(), b.shape()))?;
            if b.numel() != fan_out || widths.last().is_some_and(|&prev| prev != fan_in) {
                return Err(Error::shape("encoder layer", w.shape(), b.shape()));
            }
            if widths.is_empty() {
                widths.push(fan_in);
            }
            widths.push(fan_out);
            let b = Tensor::from_parts(vec![fan_out], b.into_data());
            out.push(Linear {
                weight: Parameter::new(format!("encoder.{i}.weight"), w),
                bias: Parameter::new(format!("encoder.{i}.bias"), b),
            });
        }
        let spec = EncoderSpec {
            input_dim: widths[0],
            hidden: widths[1..widths.len() - 1].to_vec(),
            embed_dim: *widths.last().unwrap(),
        };
        Ok(Encoder { spec, layers: out })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear<T>] {
        &self.layers
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            &[_, d] if d == self.spec.input_dim => Ok(()),
            _ => Err(Error::shape("encode", shape, &[0, self.spec.input_dim])),
        }
    }

    /// Taped forward pass; `vars` holds the leaves bound by [`Model::bind`].
    pub fn encode(&self, tape: &mut Tape<T>, vars: &[(Var, Var)], x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let mut h = x;
        for (i, &(w, b)) in vars.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_row_bias(h, b)?;
            if i + 1 < vars.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Untaped forward pass for evaluation.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let n = x.shape()[0];
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (k, m) = layer.weight.value.dims2().unwrap();
            let mut out = vec![T::zero(); n * m];
            tensor::matmul_into(&h, layer.weight.value.data(), &mut out, n, k, m);
            for row in out.chunks_mut(m) {
                for (o, &b) in row.iter_mut().zip(layer.bias.value.data()) {
                    *o += b;
                    if i < last && *o < T::zero() {
                        *o = T::zero();
                    }
                }
            }
            h = out;
        }
        Ok(Tensor::from_parts(vec![n, self.spec.embed_dim], h))
    }
}

/// Proxy classifier `g_φ`: one learnable proxy row per observed class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyClassifier<T = f64> {
    embed_dim: usize,
    proxies: Option<Parameter<T>>,
    rows: IndexMap<ClassId, usize>,
}

impl<T: Scalar> ProxyClassifier<T> {
    pub fn new(embed_dim: usize) -> Self {
        ProxyClassifier {
            embed_dim,
            proxies: None,
            rows: IndexMap::new(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    /// Classes in proxy-row order.
    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.rows.keys().copied()
    }

    pub fn row_of(&self, class: ClassId) -> Option<usize> {
        self.rows.get(&class).copied()
    }

    pub fn proxies(&self) -> Option<&Parameter<T>> {
        self.proxies.as_ref()
    }

    /// Appends a proxy for `class` drawn from U(−0.05, 0.05); no-op for known classes.
    pub fn add_class<R: Rng + ?Sized>(&mut self, class: ClassId, rng: &mut R) -> usize {
        let row: Vec<T> = (0..self.embed_dim)
            .map(|_| T::of(rng.random_range(-0.05..0.05)))
            .collect();
        self.add_class_with(class, row)
    }

    pub fn add_class_with(&mut self, class: ClassId, row: Vec<T>) -> usize {
        if let Some(&r) = self.rows.get(&class) {
            return r;
        }
        assert_eq!(row.len(), self.embed_dim, "proxy row has the wrong width");
        let idx = self.rows.len();
        let mut data = self
            .proxies
            .take()
            .map(|p| p.value.into_data())
            .unwrap_or_default();
        data.extend(row);
        let value = Tensor::from_parts(vec![idx + 1, self.embed_dim], data);
        self.proxies = Some(Parameter::new("proxies", value));
        self.rows.insert(class, idx);
        idx
    }

    /// `z · Wᵀ` over every known class.
    pub fn logits(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let proxies = self
            .proxies
            .as_ref()
            .ok_or_else(|| Error::Contract("classifier has no proxies yet".into()))?;
        let (n, d) = z
            .dims2()
            .filter(|&(_, d)| d == self.embed_dim)
            .ok_or_else(|| Error::shape("logits", z.shape(), proxies.value.shape()))?;
        let c = self.rows.len();
        let mut out = vec![T::zero(); n * c];
        tensor::matmul_bt_into(z.data(), proxies.value.data(), &mut out, n, d, c);
        Ok(Tensor::from_parts(vec![n, c], out))
    }
}

/// Leaves bound to one tape for a single forward/backward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub layers: Vec<(Var, Var)>,
    pub proxies: Var,
}

/// The proxy-based contrastive loss over the classes present in the batch.
///
/// `-(1/N) Σᵢ log( exp(zᵢ·W_{yᵢ}/τ) / Σ_{L ∈ batch_classes} exp(zᵢ·W_L/τ) )`
pub fn pcl_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    labels: &[ClassId],
    classifier: &ProxyClassifier<T>,
    proxies: Var,
    tau: T,
    batch_classes: &[ClassId],
) -> Result<Var> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    check_batch(tape, z, labels)?;
    let mut classes: Vec<ClassId> = Vec::with_capacity(batch_classes.len());
    for &c in batch_classes {
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    if let Some(&y) = labels.iter().find(|y| !classes.contains(y)) {
        return Err(Error::InvalidArgument(format!("label {y} is not in the batch class set")));
    }
    if classes.len() == 1 {
        return Err(Error::DegenerateBatch(classes[0]));
    }
    let rows = classes
        .iter()
        .map(|&c| classifier.row_of(c).ok_or(Error::UnknownClass(c)))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<usize> = labels
        .iter()
        .map(|y| classes.iter().position(|c| c == y).unwrap())
        .collect();
    let w = tape.gather_rows(proxies, &rows)?;
    let logits = tape.matmul_bt(z, w)?;
    let logits = tape.scale(logits, T::one() / tau);
    nll_mean(tape, logits, &targets)
}

/// Softmax cross-entropy over every known class (no temperature).
pub fn ce_loss<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    labels: &[ClassId],
    classifier: &ProxyClassifier<T>,
    proxies: Var,
) -> Result<Var> {
    check_batch(tape, z, labels)?;
    let targets = labels
        .iter()
        .map(|&y| classifier.row_of(y).ok_or(Error::UnknownClass(y)))
        .collect::<Result<Vec<_>>>()?;
    let logits = tape.matmul_bt(z, proxies)?;
    nll_mean(tape, logits, &targets)
}

fn check_batch<T: Scalar>(tape: &Tape<T>, z: Var, labels: &[ClassId]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let rows = tape.value(z).shape()[0];
    if rows != labels.len() {
        return Err(Error::shape("loss", tape.value(z).shape(), &[labels.len()]));
    }
    Ok(())
}

fn nll_mean<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_cols(logp, targets)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    Pcl,
    Ce,
}

/// Encoder plus proxy classifier, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f64> {
    pub encoder: Encoder<T>,
    pub classifier: ProxyClassifier<T>,
    /// L2-normalize embeddings before the inner product with proxies.
    pub normalize: bool,
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng + ?Sized>(spec: EncoderSpec, rng: &mut R) -> Result<Self> {
        let embed = spec.embed_dim;
        Ok(Model {
            encoder: Encoder::new(spec, rng)?,
            classifier: ProxyClassifier::new(embed),
            normalize: false,
        })
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundParams> {
        let layers = self
            .encoder
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.value.clone()), tape.leaf(l.bias.value.clone())))
            .collect();
        let proxies = self
            .classifier
            .proxies
            .as_ref()
            .ok_or_else(|| Error::Contract("classifier has no proxies yet".into()))?;
        let proxies = tape.leaf(proxies.value.clone());
        Ok(BoundParams { layers, proxies })
    }

    /// Taped embedding `z = f_θ(x)`.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundParams, x: Var) -> Result<Var> {
        let z = self.encoder.encode(tape, &bound.layers, x)?;
        if self.normalize {
            tape.l2_normalize_rows(z)
        } else {
            Ok(z)
        }
    }

    /// Configured loss; PCL uses the classes present in `labels` as its denominator set.
    pub fn loss(
        &self,
        kind: LossKind,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        z: Var,
        labels: &[ClassId],
        tau: T,
    ) -> Result<Var> {
        match kind {
            LossKind::Pcl => {
                let mut classes = labels.to_vec();
                classes.sort_unstable();
                classes.dedup();
                pcl_loss(tape, z, labels, &self.classifier, bound.proxies, tau, &classes)
            }
            LossKind::Ce => ce_loss(tape, z, labels, &self.classifier, bound.proxies),
        }
    }

    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients<T>) -> Result<()> {
        for (layer, &(w, b)) in self.encoder.layers.iter_mut().zip(&bound.layers) {
            layer.weight.accumulate(&grads.wrt(w))?;
            layer.bias.accumulate(&grads.wrt(b))?;
        }
        if let Some(p) = self.classifier.proxies.as_mut() {
            p.accumulate(&grads.wrt(bound.proxies))?;
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = Vec::new();
        for l in &self.encoder.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend(self.classifier.proxies.as_ref());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend(self.classifier.proxies.as_mut());
        out
    }

    pub fn sgd_step(&mut self, lr: T) -> Result<()> {
        sgd_step(self.parameters_mut(), lr)
    }

    /// Untaped embeddings.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = self.encoder.infer(x)?;
        if !self.normalize {
            return Ok(z);
        }
        let d = z.shape()[1];
        let mut data = z.into_data();
        for row in data.chunks_mut(d) {
            let n = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt().max(T::of(1e-12));
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Tensor::from_parts(vec![data.len() / d, d], data))
    }

    /// `f_θ(x) · Wᵀ` over every known class, in proxy-row order.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.classifier.logits(&self.embed(x)?)
    }

    /// Argmax class over every known proxy (first maximum wins).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<ClassId>> {
        let logits = self.logits(x)?;
        let classes: Vec<ClassId> = self.classifier.classes().collect();
        let c = classes.len();
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                classes[best]
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            encoder: self.encoder.spec.clone(),
            normalize: self.normalize,
            classes: self.classifier.classes().collect(),
            params: self
                .parameters()
                .into_iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let n_layers = ck.encoder.hidden.len() + 1;
        let expected = 2 * n_layers + usize::from(!ck.classes.is_empty());
        if ck.params.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} tensors, expected {expected}",
                ck.params.len()
            )));
        }
        let tensors = ck
            .params
            .iter()
            .map(|p| Tensor::new(p.shape.clone(), p.values.iter().map(|&v| T::of(v)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let layers = tensors[..2 * n_layers]
            .chunks(2)
            .map(|wb| (wb[0].clone(), wb[1].clone()))
            .collect();
        let encoder = Encoder::from_layers(layers)?;
        if encoder.spec != ck.encoder {
            return Err(Error::InvalidArgument("checkpoint layer shapes disagree with its descriptor".into()));
        }
        let mut classifier = ProxyClassifier::new(ck.encoder.embed_dim);
        if let Some(w) = tensors.get(2 * n_layers) {
            if w.shape() != [ck.classes.len(), ck.encoder.embed_dim] {
                return Err(Error::shape("checkpoint proxies", w.shape(), &[ck.classes.len(), ck.encoder.embed_dim]));
            }
            for (i, &c) in ck.classes.iter().enumerate() {
                classifier.add_class_with(c, w.row(i).to_vec());
            }
        }
        Ok(Model {
            encoder,
            classifier,
            normalize: ck.normalize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "acr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: layer descriptor, class order and every parameter as
/// shape + row-major values. Parameters appear as
/// `encoder.0.weight, encoder.0.bias, …, proxies`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderSpec,
    pub normalize: bool,
    pub classes: Vec<ClassId>,
    pub params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye2() -> Tensor {
        Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let enc = Encoder::<f64>::from_layers(vec![(Tensor::zeros(&[3, 2]), Tensor::zeros(&[2]))]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(enc.infer(&x).unwrap(), Tensor::zeros(&[1, 2]));
    }

    #[test]
    fn identity_encoder() {
        let enc = Encoder::from_layers(vec![(eye2(), Tensor::zeros(&[2]))]).unwrap();
        let x = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(enc.infer(&x).unwrap().data(), &[3.0, 4.0]);
        let mut tape = Tape::new();
        let l = enc.layers();
        let vars = vec![(tape.leaf(l[0].weight.value().clone()), tape.leaf(l[0].bias.value().clone()))];
        let xv = tape.leaf(x);
        let z = enc.encode(&mut tape, &vars, xv).unwrap();
        assert_eq!(tape.value(z).data(), &[3.0, 4.0]);
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let enc = Encoder::from_layers(vec![(eye2(), Tensor::zeros(&[2]))]).unwrap();
        assert!(enc.infer(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = Parameter::new("p", Tensor::scalar(1.0));
        p.accumulate(&Tensor::scalar(2.0)).unwrap();
        sgd_step([&mut p], 0.5).unwrap();
        assert_eq!(p.value().data(), &[0.0]);
        assert_eq!(p.grad().data(), &[0.0]);
        sgd_step([&mut p], 0.5).unwrap();
        assert_eq!(p.value().data(), &[0.0]);
        assert!(sgd_step([&mut p], 0.0).is_err());
        assert!(p.accumulate(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn sgd_on_quadratic() {
        // (p-3)^2 from p=0, two steps of lr=0.1: 0 -> 0.6 -> 1.08
        let mut p = Parameter::new("p", Tensor::scalar(0.0f64));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let v = tape.leaf(p.value().clone());
            let three = tape.leaf(Tensor::scalar(3.0));
            let d = tape.sub(v, three).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let g = tape.backward(sq).unwrap();
            p.accumulate(&g.wrt(v)).unwrap();
            sgd_step([&mut p], 0.1).unwrap();
        }
        assert!((p.value().data()[0] - 1.08).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pcl_is_ln2() {
        let mut clf = ProxyClassifier::<f64>::new(2);
        clf.add_class_with(0, vec![1.0, 0.0]);
        clf.add_class_with(1, vec![0.0, 1.0]);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[vec![0.7, 0.7]]).unwrap());
        let w = tape.leaf(clf.proxies().unwrap().value().clone());
        let l = pcl_loss(&mut tape, z, &[0], &clf, w, 1.0, &[0, 1]).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn pcl_error_paths() {
        let mut clf = ProxyClassifier::<f64>::new(2);
        clf.add_class_with(0, vec![1.0, 0.0]);
        clf.add_class_with(1, vec![0.0, 1.0]);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[vec![0.7, 0.1], vec![0.2, 0.3]]).unwrap());
        let w = tape.leaf(clf.proxies().unwrap().value().clone());
        assert!(pcl_loss(&mut tape, z, &[0, 1], &clf, w, 0.0, &[0, 1]).is_err());
        assert!(matches!(
            pcl_loss(&mut tape, z, &[0, 0], &clf, w, 1.0, &[0]),
            Err(Error::DegenerateBatch(0))
        ));
        assert!(matches!(
            pcl_loss(&mut tape, z, &[0, 7], &clf, w, 1.0, &[0, 7]),
            Err(Error::UnknownClass(7))
        ));
        assert!(pcl_loss(&mut tape, z, &[0, 1], &clf, w, 1.0, &[0]).is_err());
        assert!(pcl_loss(&mut tape, z, &[], &clf, w, 1.0, &[0, 1]).is_err());
    }

    #[test]
    fn ce_limits() {
        let mut clf = ProxyClassifier::<f64>::new(1);
        for c in 0..4 {
            clf.add_class_with(c, vec![0.0]);
        }
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let w = tape.leaf(clf.proxies().unwrap().value().clone());
        let l = ce_loss(&mut tape, z, &[2], &clf, w).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);

        let mut clf = ProxyClassifier::<f64>::new(1);
        clf.add_class_with(0, vec![50.0]);
        clf.add_class_with(1, vec![0.0]);
        let w = tape.leaf(clf.proxies().unwrap().value().clone());
        let l = ce_loss(&mut tape, z, &[0], &clf, w).unwrap();
        assert!(tape.value(l).data()[0] < 1e-20);
    }

    #[test]
    fn proxies_grow_once_per_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut clf = ProxyClassifier::<f64>::new(3);
        assert_eq!(clf.add_class(5, &mut rng), 0);
        assert_eq!(clf.add_class(9, &mut rng), 1);
        assert_eq!(clf.add_class(5, &mut rng), 0);
        let p = clf.proxies().unwrap().value();
        assert_eq!(p.shape(), &[2, 3]);
        assert!(p.data().iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = EncoderSpec { input_dim: 4, hidden: vec![5], embed_dim: 3 };
        let mut m = Model::<f64>::new(spec, &mut rng).unwrap();
        m.classifier.add_class(2, &mut rng);
        m.classifier.add_class(0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(Model::<f64>::load(&path).unwrap(), m);
        let as_f32 = Model::<f32>::load(&path).unwrap();
        assert_eq!(as_f32.classifier.classes().collect::<Vec<_>>(), vec![2, 0]);
    }
}
