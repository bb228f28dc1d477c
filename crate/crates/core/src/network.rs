//! Small sequential CNN: forward pass, penultimate-layer feature extraction,
//! backpropagation, SGD fine-tuning with a replaceable classification head,
//! and per-channel activation dumps.
//!
//! A network is a [`NetworkSpec`] (layer list, input shape, class names)
//! paired with a [`WeightStore`]. Every valid spec ends in
//! `dense(K) -> softmax`; the activation feeding that head is the feature
//! vector handed to the SVM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledChipSet;
use crate::error::{Error, Result};
use crate::raster::GrayImage;
use crate::rng::SplitMix64;
use crate::tensor::{self, ConvGeometry, Tensor};

/// The reference "mini-CNN" architecture, also shipped as `configs/mini_cnn.json`.
pub const MINI_CNN_JSON: &str = include_str!("../configs/mini_cnn.json");

/// Range of the freshly initialized head weights.
pub const HEAD_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Kernels,
    Weights,
    Bias,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Kernels => "kernels",
            ParamKind::Weights => "weights",
            ParamKind::Bias => "bias",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "kernels" => Some(ParamKind::Kernels),
            "weights" => Some(ParamKind::Weights),
            "bias" => Some(ParamKind::Bias),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub layer_index: usize,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Parameter blocks in layer order; within a layer the kernel/weight block
/// precedes the bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    pub blocks: Vec<ParamBlock>,
}

impl WeightStore {
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        // serde ignores extra keys on field-less tagged variants
        if let Some(layers) = value.get("layers").and_then(|l| l.as_array()) {
            for (i, layer) in layers.iter().enumerate() {
                let kind = layer.get("kind").and_then(|k| k.as_str());
                if let (Some(kind @ ("relu" | "flatten" | "softmax")), Some(obj)) = (kind, layer.as_object()) {
                    if obj.len() > 1 {
                        return Err(Error::Spec(format!("layer {i} ({kind}) takes no parameters")));
                    }
                }
            }
        }
        let spec: NetworkSpec = serde_json::from_value(value)?;
        spec.shape_chain()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network spec serializes")
    }

    /// The reference architecture with the given class names.
    pub fn mini_cnn(class_names: &[&str]) -> Self {
        let mut spec: NetworkSpec = serde_json::from_str(MINI_CNN_JSON).expect("bundled config parses");
        spec.class_names = class_names.iter().map(|s| s.to_string()).collect();
        if let Some(LayerSpec::Dense { units }) = spec.layers.iter_mut().rev().nth(1) {
            *units = class_names.len();
        }
        spec
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Output shape of every layer, validating the whole chain.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        if self.class_names.is_empty() {
            return Err(Error::Spec("class_names is empty".into()));
        }
        for (i, name) in self.class_names.iter().enumerate() {
            if self.class_names[..i].contains(name) {
                return Err(Error::Spec(format!("duplicate class name {name:?}")));
            }
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Spec(format!("input_shape {:?} has a zero axis", self.input_shape)));
        }
        let n = self.layers.len();
        match self.layers.as_slice() {
            [.., LayerSpec::Dense { units }, LayerSpec::Softmax] if *units == self.class_names.len() => {}
            _ => {
                return Err(Error::Spec(format!(
                    "network must end in dense({}) -> softmax",
                    self.class_names.len()
                )))
            }
        }
        let mut shape = self.input_shape.to_vec();
        let mut chain = Vec::with_capacity(n);
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Spec(format!("layer {i} ({}): {msg}", layer.name()));
            shape = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                } => {
                    let [_, h, w] = shape[..] else {
                        return Err(bad(format!("expects [C,H,W] input, got {shape:?}")));
                    };
                    if out_channels == 0 || kernel_size == 0 || stride == 0 {
                        return Err(bad("out_channels, kernel_size and stride must be positive".into()));
                    }
                    let (Some(oh), Some(ow)) = (
                        tensor::window_output(h, kernel_size, stride, padding),
                        tensor::window_output(w, kernel_size, stride, padding),
                    ) else {
                        return Err(bad(format!("kernel {kernel_size} does not fit {h}x{w} with padding {padding}")));
                    };
                    vec![out_channels, oh, ow]
                }
                LayerSpec::Maxpool { window, stride } => {
                    let [c, h, w] = shape[..] else {
                        return Err(bad(format!("expects [C,H,W] input, got {shape:?}")));
                    };
                    if window == 0 || stride == 0 {
                        return Err(bad("window and stride must be positive".into()));
                    }
                    if window > h || window > w {
                        return Err(bad(format!("window {window} exceeds {h}x{w}")));
                    }
                    vec![c, (h - window) / stride + 1, (w - window) / stride + 1]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(bad(format!("expects a flat vector, got {shape:?}")));
                    }
                    if units == 0 {
                        return Err(bad("units must be positive".into()));
                    }
                    vec![units]
                }
                LayerSpec::Softmax => {
                    if i != n - 1 {
                        return Err(bad("softmax is only allowed as the final layer".into()));
                    }
                    shape
                }
            };
            chain.push(shape.clone());
        }
        Ok(chain)
    }

    /// Expected `(layer_index, kind, shape)` of every parameter block.
    pub fn param_layout(&self) -> Result<Vec<(usize, ParamKind, Vec<usize>)>> {
        let chain = self.shape_chain()?;
        let mut layout = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input: &[usize] = if i == 0 { &self.input_shape } else { &chain[i - 1] };
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    layout.push((i, ParamKind::Kernels, vec![out_channels, input[0], kernel_size, kernel_size]));
                    layout.push((i, ParamKind::Bias, vec![out_channels]));
                }
                LayerSpec::Dense { units } => {
                    layout.push((i, ParamKind::Weights, vec![units, input[0]]));
                    layout.push((i, ParamKind::Bias, vec![units]));
                }
                _ => {}
            }
        }
        Ok(layout)
    }
}

/// Layer outputs `y_1 .. y_n` for one image, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("non-empty trace")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Layers with index below this are not updated.
    pub freeze_depth: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            freeze_depth: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub network: Network,
    /// Mean cross-entropy over each epoch's examples.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ActivationImage {
    pub layer_index: usize,
    pub channel: usize,
    pub image: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: WeightStore,
    chain: Vec<Vec<usize>>,
    /// Per layer: indices of its (weights, bias) blocks.
    params: Vec<Option<(usize, usize)>>,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: WeightStore) -> Result<Self> {
        let chain = spec.shape_chain()?;
        let layout = spec.param_layout()?;
        if layout.len() != weights.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "spec needs {} parameter blocks, store has {}",
                layout.len(),
                weights.blocks.len()
            )));
        }
        let mut params = vec![None; spec.layers.len()];
        for (bi, ((layer, kind, shape), block)) in layout.iter().zip(&weights.blocks).enumerate() {
            if block.layer_index != *layer || block.kind != *kind || block.shape != *shape {
                return Err(Error::ShapeMismatch(format!(
                    "block {bi}: expected layer {layer} {} {shape:?}, found layer {} {} {:?}",
                    kind.as_str(),
                    block.layer_index,
                    block.kind.as_str(),
                    block.shape
                )));
            }
            if block.values.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "block {bi}: {} values for shape {shape:?}",
                    block.values.len()
                )));
            }
            if block.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("weight block"));
            }
            if *kind == ParamKind::Bias {
                params[*layer] = Some((bi - 1, bi));
            }
        }
        Ok(Network {
            spec,
            weights,
            chain,
            params,
        })
    }

    /// He-uniform initialization (`±sqrt(6 / fan_in)`), zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let blocks = spec
            .param_layout()?
            .into_iter()
            .map(|(layer_index, kind, shape)| {
                let n: usize = shape.iter().product();
                let values = match kind {
                    ParamKind::Bias => vec![0.0; n],
                    _ => {
                        let fan_in: usize = shape[1..].iter().product();
                        let bound = (6.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| rng.uniform(-bound, bound)).collect()
                    }
                };
                ParamBlock {
                    layer_index,
                    kind,
                    shape,
                    values,
                }
            })
            .collect();
        Network::new(spec, WeightStore { blocks })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn into_parts(self) -> (NetworkSpec, WeightStore) {
        (self.spec, self.weights)
    }

    pub fn class_names(&self) -> &[String] {
        &self.spec.class_names
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layers.len()
    }

    /// Output shape of each layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.chain
    }

    /// Index of the layer whose output is the penultimate feature vector.
    pub fn feature_layer(&self) -> usize {
        self.num_layers() - 3
    }

    pub fn feature_dim(&self) -> usize {
        self.chain[self.feature_layer()].iter().product()
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.spec.input_shape {
            return Err(Error::dim(format!(
                "image shape {:?} does not match network input {:?}",
                image.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn conv_geometry(&self, layer: usize) -> ConvGeometry {
        let LayerSpec::Conv {
            out_channels,
            kernel_size,
            stride,
            padding,
        } = self.spec.layers[layer]
        else {
            unreachable!("layer {layer} is not a conv layer")
        };
        let input = self.layer_input_shape(layer);
        ConvGeometry {
            in_channels: input[0],
            height: input[1],
            width: input[2],
            out_channels,
            kernel_h: kernel_size,
            kernel_w: kernel_size,
            stride,
            padding,
        }
    }

    fn layer_input_shape(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.spec.input_shape
        } else {
            &self.chain[layer - 1]
        }
    }

    fn block(&self, idx: usize) -> &[f64] {
        &self.weights.blocks[idx].values
    }

    fn apply_layer(&self, layer: usize, input: &Tensor) -> Tensor {
        let out_shape = self.chain[layer].clone();
        let n: usize = out_shape.iter().product();
        let data = match self.spec.layers[layer] {
            LayerSpec::Conv { .. } => {
                let (wi, bi) = self.params[layer].expect("conv has params");
                let mut out = vec![0.0; n];
                tensor::conv2d_raw(&self.conv_geometry(layer), input.data(), self.block(wi), self.block(bi), &mut out);
                out
            }
            LayerSpec::Relu => input.data().iter().map(|&x| x.max(0.0)).collect(),
            LayerSpec::Maxpool { window, stride } => {
                let s = input.shape();
                let mut out = vec![0.0; n];
                tensor::maxpool2d_raw((s[0], s[1], s[2]), window, stride, input.data(), &mut out);
                out
            }
            LayerSpec::Flatten => input.data().to_vec(),
            LayerSpec::Dense { .. } => {
                let (wi, bi) = self.params[layer].expect("dense has params");
                let mut out = vec![0.0; n];
                tensor::dense_raw(input.data(), self.block(wi), self.block(bi), &mut out);
                out
            }
            LayerSpec::Softmax => {
                let mut out = vec![0.0; n];
                tensor::softmax_raw(input.data(), &mut out);
                out
            }
        };
        Tensor::from_parts(out_shape, data)
    }

    /// Runs layers `0..=last` and returns their outputs.
    pub fn forward_to(&self, image: &Tensor, last: usize) -> Result<ForwardTrace> {
        self.check_input(image)?;
        if last >= self.num_layers() {
            return Err(Error::arg(format!(
                "layer {last} out of range ({} layers)",
                self.num_layers()
            )));
        }
        let mut activations: Vec<Tensor> = Vec::with_capacity(last + 1);
        for layer in 0..=last {
            let out = self.apply_layer(layer, activations.last().unwrap_or(image));
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardTrace> {
        self.forward_to(image, self.num_layers() - 1)
    }

    /// Class probabilities (the final softmax output).
    pub fn predict(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.output().data().to_vec())
    }

    /// Argmax of the softmax output, lowest index on ties.
    pub fn classify(&self, image: &Tensor) -> Result<(usize, f64)> {
        let p = self.predict(image)?;
        Ok(crate::argmax(&p))
    }

    /// The penultimate representation: the activation feeding the final dense head.
    pub fn extract_features(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.extract_features_at(image, self.feature_layer())
    }

    /// Flattened output of an arbitrary layer, for experimenting with tap depth.
    pub fn extract_features_at(&self, image: &Tensor, layer: usize) -> Result<Vec<f64>> {
        let trace = self.forward_to(image, layer)?;
        Ok(trace.activations.into_iter().last().expect("non-empty").into_data())
    }

    /// Cross-entropy loss of one example and its gradient for every parameter
    /// block (aligned with `weights().blocks`). Blocks of layers below
    /// `stop_at` are left zero and not backpropagated into.
    pub fn backprop(&self, image: &Tensor, label: usize, stop_at: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        if label >= self.spec.num_classes() {
            return Err(Error::arg(format!("label {label} out of range")));
        }
        let n = self.num_layers();
        let trace = self.forward_to(image, n - 2)?;
        let logits = trace.activations[n - 2].data();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - logits[label];

        let mut grads: Vec<Vec<f64>> = self.weights.blocks.iter().map(|b| vec![0.0; b.values.len()]).collect();
        // d loss / d logits = softmax(logits) - onehot(label)
        let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        grad[label] -= 1.0;

        for layer in (stop_at..n - 1).rev() {
            let input = if layer == 0 { image } else { &trace.activations[layer - 1] };
            let need_input_grad = layer > stop_at;
            grad = match self.spec.layers[layer] {
                LayerSpec::Conv { .. } => {
                    let (wi, bi) = self.params[layer].expect("conv has params");
                    let g = self.conv_geometry(layer);
                    let (gw, gb) = split_two(&mut grads, wi, bi);
                    let mut gin = if need_input_grad { vec![0.0; input.len()] } else { Vec::new() };
                    tensor::conv2d_backward_raw(
                        &g,
                        input.data(),
                        self.block(wi),
                        &grad,
                        need_input_grad.then_some(gin.as_mut_slice()),
                        gw,
                        gb,
                    );
                    gin
                }
                LayerSpec::Dense { .. } => {
                    let (wi, bi) = self.params[layer].expect("dense has params");
                    let x = input.data();
                    let (gw, gb) = split_two(&mut grads, wi, bi);
                    let cols = x.len();
                    for (j, &gj) in grad.iter().enumerate() {
                        gb[j] += gj;
                        if gj != 0.0 {
                            for (d, &xv) in gw[j * cols..(j + 1) * cols].iter_mut().zip(x) {
                                *d += gj * xv;
                            }
                        }
                    }
                    if need_input_grad {
                        let w = self.block(wi);
                        let mut gin = vec![0.0; cols];
                        for (j, &gj) in grad.iter().enumerate() {
                            if gj != 0.0 {
                                for (d, &wv) in gin.iter_mut().zip(&w[j * cols..(j + 1) * cols]) {
                                    *d += gj * wv;
                                }
                            }
                        }
                        gin
                    } else {
                        Vec::new()
                    }
                }
                LayerSpec::Relu => grad
                    .iter()
                    .zip(input.data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
                LayerSpec::Maxpool { window, stride } => {
                    let s = input.shape();
                    let mut gin = vec![0.0; input.len()];
                    tensor::maxpool2d_backward_raw((s[0], s[1], s[2]), window, stride, input.data(), &grad, &mut gin);
                    gin
                }
                LayerSpec::Flatten => grad,
                LayerSpec::Softmax => unreachable!("softmax is handled with the loss"),
            };
        }
        Ok((loss, grads))
    }

    /// Mean cross-entropy over a set whose class names match this network.
    pub fn mean_loss(&self, set: &LabeledChipSet) -> Result<f64> {
        let labels = self.map_labels(set)?;
        let losses: Result<Vec<f64>> = set
            .chips()
            .par_iter()
            .zip(&labels)
            .map(|(chip, &label)| {
                let logits = self.forward_to(&chip.image.to_tensor(), self.num_layers() - 2)?;
                let z = logits.output().data();
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - z[label])
            })
            .collect();
        let losses = losses?;
        Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
    }

    fn map_labels(&self, set: &LabeledChipSet) -> Result<Vec<usize>> {
        let mapping: Vec<usize> = set
            .class_names()
            .iter()
            .map(|name| {
                self.spec
                    .class_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::UnknownClass(name.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(set.chips().iter().map(|c| mapping[c.label]).collect())
    }

    /// Swaps the final dense layer for a fresh one sized to `class_names`,
    /// initialized uniform in `±HEAD_INIT_RANGE` with zero bias. Earlier
    /// parameters are copied verbatim.
    pub fn replace_head(&self, class_names: &[String], seed: u64) -> Result<Network> {
        if class_names.is_empty() {
            return Err(Error::arg("replacement head needs at least one class"));
        }
        let mut spec = self.spec.clone();
        spec.class_names = class_names.to_vec();
        let head = self.num_layers() - 2;
        spec.layers[head] = LayerSpec::Dense {
            units: class_names.len(),
        };
        let feature_dim = self.feature_dim();
        let mut rng = SplitMix64::new(seed);
        let mut blocks: Vec<ParamBlock> = self
            .weights
            .blocks
            .iter()
            .filter(|b| b.layer_index != head)
            .cloned()
            .collect();
        let k = class_names.len();
        blocks.push(ParamBlock {
            layer_index: head,
            kind: ParamKind::Weights,
            shape: vec![k, feature_dim],
            values: (0..k * feature_dim)
                .map(|_| rng.uniform(-HEAD_INIT_RANGE, HEAD_INIT_RANGE))
                .collect(),
        });
        blocks.push(ParamBlock {
            layer_index: head,
            kind: ParamKind::Bias,
            shape: vec![k],
            values: vec![0.0; k],
        });
        Network::new(spec, WeightStore { blocks })
    }

    /// Mini-batch SGD with momentum on cross-entropy. Examples are reshuffled
    /// every epoch from `config.seed`; per-example gradients within a batch
    /// are computed in parallel and summed in a fixed order.
    pub fn fine_tune(&self, train: &LabeledChipSet, config: &FineTuneConfig) -> Result<FineTuneOutcome> {
        if train.is_empty() {
            return Err(Error::TrainingData("training set is empty".into()));
        }
        if config.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate must be finite and nonnegative"));
        }
        let labels = self.map_labels(train)?;
        // every class the set declares must be populated; network classes the
        // set does not name are simply not trained towards
        if let Some(k) = train.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::TrainingData(format!(
                "class {:?} has no training examples",
                train.class_names()[k]
            )));
        }
        let inputs: Vec<Tensor> = train.chips().iter().map(|c| c.image.to_tensor()).collect();
        if let Some(bad) = inputs.iter().find(|t| t.shape() != self.spec.input_shape) {
            return Err(Error::TrainingData(format!(
                "chip shape {:?} does not match network input {:?}",
                bad.shape(),
                self.spec.input_shape
            )));
        }

        let mut net = self.clone();
        let stop_at = config.freeze_depth.min(net.num_layers() - 1);
        let trainable: Vec<bool> = net.weights.blocks.iter().map(|b| b.layer_index >= stop_at).collect();
        let mut velocity: Vec<Vec<f64>> = net.weights.blocks.iter().map(|b| vec![0.0; b.values.len()]).collect();
        let mut rng = SplitMix64::new(config.seed);
        let mut loss_history = Vec::with_capacity(config.epochs);

        for _ in 0..config.epochs {
            let order = rng.permutation(inputs.len());
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
                    .par_iter()
                    .map(|&i| net.backprop(&inputs[i], labels[i], stop_at))
                    .collect();
                let mut sum: Option<Vec<Vec<f64>>> = None;
                for r in results {
                    let (loss, g) = r?;
                    epoch_loss += loss;
                    match sum.as_mut() {
                        None => sum = Some(g),
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                for (x, y) in a.iter_mut().zip(b) {
                                    *x += y;
                                }
                            }
                        }
                    }
                }
                let sum = sum.expect("non-empty batch");
                let step = config.learning_rate / batch.len() as f64;
                for (bi, block) in net.weights.blocks.iter_mut().enumerate() {
                    if !trainable[bi] {
                        continue;
                    }
                    for ((w, v), g) in block.values.iter_mut().zip(&mut velocity[bi]).zip(&sum[bi]) {
                        *v = config.momentum * *v - step * g;
                        *w += *v;
                    }
                }
            }
            let mean = epoch_loss / inputs.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Training("loss diverged (non-finite)".into()));
            }
            log::debug!("epoch {} loss {mean:.6}", loss_history.len());
            loss_history.push(mean);
        }
        if net.weights.blocks.iter().any(|b| b.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training("weights diverged (non-finite)".into()));
        }
        Ok(FineTuneOutcome {
            network: net,
            loss_history,
        })
    }

    /// Each channel of each selected spatial layer output, min-max scaled to
    /// `[0, 255]`. A channel with zero range is emitted as uniform 128.
    pub fn dump_activations(&self, image: &Tensor, layer_indices: &[usize]) -> Result<Vec<ActivationImage>> {
        for &l in layer_indices {
            if l >= self.num_layers() {
                return Err(Error::arg(format!(
                    "layer index {l} out of range ({} layers)",
                    self.num_layers()
                )));
            }
            if self.chain[l].len() != 3 {
                return Err(Error::arg(format!(
                    "layer {l} ({}) output {:?} is not spatial",
                    self.spec.layers[l].name(),
                    self.chain[l]
                )));
            }
        }
        let Some(&deepest) = layer_indices.iter().max() else {
            return Ok(Vec::new());
        };
        let trace = self.forward_to(image, deepest)?;
        let mut out = Vec::new();
        for &l in layer_indices {
            let act = &trace.activations[l];
            let (c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
            for ch in 0..c {
                let plane = &act.data()[ch * h * w..(ch + 1) * h * w];
                out.push(ActivationImage {
                    layer_index: l,
                    channel: ch,
                    image: GrayImage::new(w, h, normalize_to_u8(plane))?,
                });
            }
        }
        Ok(out)
    }
}

fn normalize_to_u8(plane: &[f64]) -> Vec<u8> {
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![128; plane.len()];
    }
    plane
        .iter()
        .map(|v| ((v - lo) / range * 255.0).round() as u8)
        .collect()
}

fn split_two(grads: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
