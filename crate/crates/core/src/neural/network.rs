use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    batch_norm_backward, batch_norm_forward, concat_backward, concat_forward, conv_backward, conv_forward,
    relu_backward, relu_forward, BatchNormParams, BnCache, ConvWeights, Mode, BN_EPS,
};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    BatchNorm,
    Relu,
    /// Concatenates the output of layer `id` (channels first) with the
    /// previous layer's output.
    ConcatFrom(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv3x3,
            in_channels,
            out_channels,
            trainable: true,
        }
    }

    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv1x1,
            in_channels,
            out_channels,
            trainable: true,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        Self {
            kind: LayerKind::BatchNorm,
            in_channels: channels,
            out_channels: channels,
            trainable: true,
        }
    }

    pub fn relu(channels: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            in_channels: channels,
            out_channels: channels,
            trainable: false,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv3x3 | LayerKind::Conv1x1)
    }

    fn kernel_size(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Toy,
}

impl Preset {
    pub fn conv_layers(self) -> usize {
        match self {
            Preset::Full => 28,
            Preset::Toy => 8,
        }
    }

    pub fn default_width(self) -> usize {
        match self {
            Preset::Full => 64,
            Preset::Toy => 16,
        }
    }

    /// Nested symmetric `(source block, destination block)` pairs, 1-based.
    pub fn default_bypasses(self) -> Vec<(usize, usize)> {
        match self {
            Preset::Full => vec![(2, 27), (5, 24), (8, 21), (11, 18)],
            Preset::Toy => vec![(2, 7), (3, 6)],
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Parameter(format!("unknown network preset {other:?} (full|toy)"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Toy => "toy",
        })
    }
}

/// Ordered layer list plus the bypass edges it was built from.
///
/// Bypass `(s, t)` concatenates the activated output of conv block `s` onto
/// the input of conv block `t` (blocks numbered from 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub bypasses: Vec<(usize, usize)>,
    pub width: usize,
    pub input_channels: usize,
}

impl NetworkSpec {
    /// Arbitrary layer list; checks channel flow and concat sources.
    pub fn new(layers: Vec<LayerSpec>, bypasses: Vec<(usize, usize)>, width: usize, input_channels: usize) -> Result<Self> {
        let spec = Self {
            layers,
            bypasses,
            width,
            input_channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Conv blocks `conv -> batch_norm -> relu`, the last one a bare 1x1 conv
    /// producing one channel, with the given bypasses.
    pub fn blocks(conv_layers: usize, width: usize, bypasses: Vec<(usize, usize)>, input_channels: usize) -> Result<Self> {
        if conv_layers < 1 {
            return Err(Error::Parameter("network needs at least one conv layer".into()));
        }
        if width < 1 || input_channels < 1 {
            return Err(Error::Parameter("width and input channels must be >= 1".into()));
        }
        for (i, &(s, t)) in bypasses.iter().enumerate() {
            if s < 1 || t <= s || t > conv_layers {
                return Err(Error::Parameter(format!(
                    "bypass {i} ({s} -> {t}) must satisfy 1 <= source < destination <= {conv_layers}"
                )));
            }
            if s == conv_layers {
                return Err(Error::Parameter("the last conv block cannot be a bypass source".into()));
            }
        }
        let mut layers = Vec::new();
        let mut block_out = vec![0usize; conv_layers + 1];
        let mut channels = input_channels;
        for block in 1..=conv_layers {
            for &(s, _) in bypasses.iter().filter(|&&(_, t)| t == block) {
                layers.push(LayerSpec {
                    kind: LayerKind::ConcatFrom(block_out[s]),
                    in_channels: channels,
                    out_channels: channels + width,
                    trainable: false,
                });
                channels += width;
            }
            if block < conv_layers {
                layers.push(LayerSpec::conv3x3(channels, width));
                layers.push(LayerSpec::batch_norm(width));
                layers.push(LayerSpec::relu(width));
                channels = width;
                block_out[block] = layers.len() - 1;
            } else {
                layers.push(LayerSpec::conv1x1(channels, 1));
            }
        }
        Self::new(layers, bypasses, width, input_channels)
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conv()).count()
    }

    pub fn concat_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::ConcatFrom(_)))
            .count()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = l.kernel_size();
                    l.out_channels * l.in_channels * k * k + l.out_channels
                }
                LayerKind::BatchNorm => 2 * l.out_channels,
                _ => 0,
            })
            .sum()
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(self.input_channels, |l| l.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Parameter("network has no layers".into()));
        }
        let mut channels = self.input_channels;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels != channels {
                return Err(Error::shape(
                    format!("layer {i} input of {channels} channels"),
                    format!("{} declared", l.in_channels),
                ));
            }
            let ok = match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => l.out_channels >= 1,
                LayerKind::BatchNorm | LayerKind::Relu => l.out_channels == l.in_channels,
                LayerKind::ConcatFrom(src) => {
                    if src >= i {
                        return Err(Error::Parameter(format!(
                            "layer {i} concatenates layer {src}, which is not an earlier output"
                        )));
                    }
                    l.out_channels == l.in_channels + self.layers[src].out_channels
                }
            };
            if !ok {
                return Err(Error::Parameter(format!("layer {i} ({:?}) has inconsistent channels", l.kind)));
            }
            channels = l.out_channels;
        }
        Ok(())
    }

    /// Structural check of a block network: `convs` conv layers, all but the
    /// last 3x3 followed by batch norm then ReLU, the last a bare 1x1 conv with
    /// one output channel, and `bypasses` concatenations.
    pub fn check_block_structure(&self, convs: usize, bypasses: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if self.conv_count() != convs {
            return fail(format!("expected {convs} conv layers, found {}", self.conv_count()));
        }
        if self.concat_count() != bypasses {
            return fail(format!("expected {bypasses} bypasses, found {}", self.concat_count()));
        }
        let conv_idx: Vec<usize> = (0..self.layers.len()).filter(|&i| self.layers[i].is_conv()).collect();
        for (n, &i) in conv_idx.iter().enumerate() {
            let last = n + 1 == conv_idx.len();
            let l = &self.layers[i];
            if last {
                if l.kind != LayerKind::Conv1x1 || l.out_channels != 1 || i + 1 != self.layers.len() {
                    return fail("last layer must be a 1x1 conv with one output channel".into());
                }
            } else {
                let follow: Vec<LayerKind> = self.layers[i + 1..].iter().take(2).map(|l| l.kind).collect();
                if l.kind != LayerKind::Conv3x3 || follow != [LayerKind::BatchNorm, LayerKind::Relu] {
                    return fail(format!("conv {} must be 3x3 followed by batch_norm, relu", n + 1));
                }
            }
        }
        Ok(())
    }
}

/// Block network for a preset with its default bypass placement.
pub fn build_paper_network(width: usize, preset: Preset) -> Result<NetworkSpec> {
    build_network(width, preset, preset.default_bypasses(), 1)
}

pub fn build_network(
    width: usize,
    preset: Preset,
    bypasses: Vec<(usize, usize)>,
    input_channels: usize,
) -> Result<NetworkSpec> {
    if width < 4 {
        return Err(Error::Parameter(format!("channel width must be >= 4, got {width}")));
    }
    let expected = preset.default_bypasses().len();
    if bypasses.len() != expected {
        return Err(Error::Parameter(format!(
            "{preset} preset has {expected} bypasses, got {}",
            bypasses.len()
        )));
    }
    let spec = NetworkSpec::blocks(preset.conv_layers(), width, bypasses, input_channels)?;
    spec.check_block_structure(preset.conv_layers(), expected)?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv(ConvWeights),
    BatchNorm(BatchNormParams),
    None,
}

/// Trainable state of a network. Every mutation bumps a version counter so
/// backward passes can detect caches from older parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    layers: Vec<LayerParams>,
    version: u64,
}

impl ParameterSet {
    /// He-normal kernels, zero biases, unit gains; values rounded to f32 so
    /// that saved models reproduce forward outputs exactly.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let base = seeding::derive(seed, "init");
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = l.kernel_size();
                    let mut w = ConvWeights::zeros(l.in_channels, l.out_channels, k);
                    let std = (2.0 / (l.in_channels * k * k) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let mut rng = seeding::stream(base, i as u64);
                    w.kernel.iter_mut().for_each(|v| *v = normal.sample(&mut rng) as f32 as f64);
                    LayerParams::Conv(w)
                }
                LayerKind::BatchNorm => LayerParams::BatchNorm(BatchNormParams::new(l.out_channels)),
                _ => LayerParams::None,
            })
            .collect();
        Self { layers, version: 0 }
    }

    pub fn from_layers(spec: &NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        let set = Self { layers, version: 0 };
        set.check(spec)?;
        Ok(set)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::shape(
                format!("{} layer parameter entries", spec.layers.len()),
                self.layers.len(),
            ));
        }
        for (i, (p, l)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let ok = match (p, l.kind) {
                (LayerParams::Conv(w), LayerKind::Conv3x3 | LayerKind::Conv1x1) => {
                    let k = l.kernel_size();
                    w.size == k
                        && w.in_channels == l.in_channels
                        && w.out_channels == l.out_channels
                        && w.kernel.len() == l.out_channels * l.in_channels * k * k
                        && w.bias.len() == l.out_channels
                }
                (LayerParams::BatchNorm(b), LayerKind::BatchNorm) => {
                    let c = l.out_channels;
                    b.gain.len() == c && b.shift.len() == c && b.running_mean.len() == c && b.running_var.len() == c
                }
                (LayerParams::None, LayerKind::Relu | LayerKind::ConcatFrom(_)) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::shape(format!("parameters for layer {i} ({:?})", l.kind), "mismatched entry"));
            }
        }
        Ok(())
    }

    /// Rounds every stored value to the nearest f32.
    pub fn quantize_f32(&mut self) {
        let q = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        for p in self.layers_mut() {
            match p {
                LayerParams::Conv(w) => {
                    q(&mut w.kernel);
                    q(&mut w.bias);
                }
                LayerParams::BatchNorm(b) => {
                    q(&mut b.gain);
                    q(&mut b.shift);
                    q(&mut b.running_mean);
                    q(&mut b.running_var);
                }
                LayerParams::None => {}
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|p| match p {
            LayerParams::Conv(w) => w.kernel.iter().chain(&w.bias).all(|v| v.is_finite()),
            LayerParams::BatchNorm(b) => b
                .gain
                .iter()
                .chain(&b.shift)
                .chain(&b.running_mean)
                .chain(&b.running_var)
                .all(|v| v.is_finite()),
            LayerParams::None => true,
        })
    }

    /// Sum of squared conv kernel entries (biases and batch norm excluded).
    pub fn kernel_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|p| match p {
                LayerParams::Conv(w) => w.kernel.iter().map(|v| v * v).sum(),
                _ => 0.0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Conv(ConvWeights),
    BatchNorm { gain: Vec<f64>, shift: Vec<f64> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|p| match p {
                LayerParams::Conv(w) => LayerGrad::Conv(ConvWeights::zeros(w.in_channels, w.out_channels, w.size)),
                LayerParams::BatchNorm(b) => LayerGrad::BatchNorm {
                    gain: vec![0.0; b.channels()],
                    shift: vec![0.0; b.channels()],
                },
                LayerParams::None => LayerGrad::None,
            })
            .collect();
        Self { layers }
    }

    /// All gradient values in layer order: kernel, bias, gain, shift.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Conv(w) => {
                    out.extend_from_slice(&w.kernel);
                    out.extend_from_slice(&w.bias);
                }
                LayerGrad::BatchNorm { gain, shift } => {
                    out.extend_from_slice(gain);
                    out.extend_from_slice(shift);
                }
                LayerGrad::None => {}
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Tensor4>,
    bn: Vec<Option<BnCache>>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor4 {
        self.activations.last().expect("cache holds at least the input")
    }
}

fn check_input(spec: &NetworkSpec, x: &Tensor4) -> Result<()> {
    if x.channels() != spec.input_channels {
        return Err(Error::shape(
            format!("{} input channels", spec.input_channels),
            format!("{} channels", x.channels()),
        ));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

/// Runs the layers; returns the cache and, in train mode, the updated batch
/// norm parameters keyed by layer index.
fn run(
    spec: &NetworkSpec,
    params: &ParameterSet,
    x: &Tensor4,
    mode: Mode,
    keep: bool,
) -> Result<(ForwardCache, Vec<(usize, BatchNormParams)>)> {
    check_input(spec, x)?;
    params.check(spec)?;
    let n = spec.layers.len();
    let concat_sources: Vec<usize> = spec
        .layers
        .iter()
        .filter_map(|l| match l.kind {
            LayerKind::ConcatFrom(src) => Some(src + 1),
            _ => None,
        })
        .collect();
    let mut activations = Vec::with_capacity(n + 1);
    activations.push(x.clone());
    let mut bn = vec![None; n];
    let mut updated = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        let prev = &activations[i];
        let out = match (&params.layers[i], l.kind) {
            (LayerParams::Conv(w), _) => conv_forward(prev, w)?,
            (LayerParams::BatchNorm(p), _) => {
                let mut p = p.clone();
                let (out, cache) = batch_norm_forward(prev, &mut p, mode, BN_EPS, i)?;
                if keep {
                    bn[i] = Some(cache);
                }
                if mode == Mode::Train {
                    updated.push((i, p));
                }
                out
            }
            (LayerParams::None, LayerKind::Relu) => relu_forward(prev),
            (LayerParams::None, LayerKind::ConcatFrom(src)) => concat_forward(&activations[src + 1], prev)?,
            _ => unreachable!("parameters checked against spec"),
        };
        activations.push(out);
        if !keep && i >= 1 && !concat_sources.contains(&i) {
            // drop activations nothing downstream reads
            activations[i] = Tensor4::zeros([1, 1, 1, 1]);
        }
    }
    let cache = ForwardCache {
        activations,
        bn,
        version: params.version,
    };
    Ok((cache, updated))
}

/// Inference-mode forward pass (running batch norm statistics); pure.
pub fn forward(spec: &NetworkSpec, params: &ParameterSet, x: &Tensor4) -> Result<Tensor4> {
    let (mut cache, _) = run(spec, params, x, Mode::Infer, false)?;
    Ok(cache.activations.pop().expect("output present"))
}

/// Forward pass that keeps activations for [`backward`]. Train mode uses batch
/// statistics and updates the running statistics.
pub fn forward_cached(spec: &NetworkSpec, params: &mut ParameterSet, x: &Tensor4, mode: Mode) -> Result<ForwardCache> {
    let (mut cache, updated) = run(spec, params, x, mode, true)?;
    if mode == Mode::Train {
        let layers = params.layers_mut();
        for (i, p) in updated {
            layers[i] = LayerParams::BatchNorm(p);
        }
        cache.version = params.version;
    }
    Ok(cache)
}

/// Returns parameter gradients and the gradient with respect to the input.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    cache: &ForwardCache,
    grad_out: &Tensor4,
) -> Result<(Gradients, Tensor4)> {
    if cache.version != params.version || cache.activations.len() != spec.layers.len() + 1 {
        return Err(Error::StaleCache);
    }
    if grad_out.dims() != cache.output().dims() {
        return Err(Error::shape(
            format!("gradient of dims {:?}", cache.output().dims()),
            format!("{:?}", grad_out.dims()),
        ));
    }
    let n = spec.layers.len();
    let mut grads = Gradients::zeros_like(params);
    let mut act_grad: Vec<Option<Tensor4>> = vec![None; n + 1];
    act_grad[n] = Some(grad_out.clone());
    let accumulate = |slot: &mut Option<Tensor4>, g: Tensor4| match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    };
    for i in (0..n).rev() {
        let Some(g) = act_grad[i + 1].take() else {
            continue;
        };
        let input = &cache.activations[i];
        match (&params.layers[i], &mut grads.layers[i], spec.layers[i].kind) {
            (LayerParams::Conv(w), LayerGrad::Conv(gw), _) => {
                let gx = conv_backward(input, w, &g, gw);
                accumulate(&mut act_grad[i], gx);
            }
            (LayerParams::BatchNorm(p), LayerGrad::BatchNorm { gain, shift }, _) => {
                let bc = cache.bn[i].as_ref().ok_or(Error::StaleCache)?;
                let gx = batch_norm_backward(bc, p, &g, gain, shift);
                accumulate(&mut act_grad[i], gx);
            }
            (LayerParams::None, _, LayerKind::Relu) => {
                let gx = relu_backward(&cache.activations[i + 1], &g);
                accumulate(&mut act_grad[i], gx);
            }
            (LayerParams::None, _, LayerKind::ConcatFrom(src)) => {
                let (gs, gc) = concat_backward(&g, spec.layers[src].out_channels);
                accumulate(&mut act_grad[src + 1], gs);
                accumulate(&mut act_grad[i], gc);
            }
            _ => unreachable!("parameters checked against spec"),
        }
    }
    let gx = act_grad[0].take().unwrap_or_else(|| Tensor4::zeros(cache.activations[0].dims()));
    Ok((grads, gx))
}

/// One SGD step. Weight decay applies to conv kernels only; `velocity`, when
/// given, carries momentum state shaped like `grads`.
pub fn sgd_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    lr: f64,
    weight_decay: f64,
    momentum: f64,
    velocity: Option<&mut Gradients>,
) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::shape(format!("{} gradient entries", params.layers.len()), grads.layers.len()));
    }
    let owned;
    let step: &Gradients = match velocity {
        Some(v) if momentum > 0.0 => {
            for (vl, gl) in v.layers.iter_mut().zip(&grads.layers) {
                match (vl, gl) {
                    (LayerGrad::Conv(vw), LayerGrad::Conv(gw)) => {
                        for (a, b) in vw.kernel.iter_mut().zip(&gw.kernel) {
                            *a = momentum * *a + b;
                        }
                        for (a, b) in vw.bias.iter_mut().zip(&gw.bias) {
                            *a = momentum * *a + b;
                        }
                    }
                    (LayerGrad::BatchNorm { gain: vg, shift: vs }, LayerGrad::BatchNorm { gain, shift }) => {
                        for (a, b) in vg.iter_mut().zip(gain) {
                            *a = momentum * *a + b;
                        }
                        for (a, b) in vs.iter_mut().zip(shift) {
                            *a = momentum * *a + b;
                        }
                    }
                    _ => {}
                }
            }
            owned = v.clone();
            &owned
        }
        _ => grads,
    };
    let shrink = 1.0 - lr * weight_decay;
    for (p, g) in params.layers_mut().iter_mut().zip(&step.layers) {
        match (p, g) {
            (LayerParams::Conv(w), LayerGrad::Conv(gw)) => {
                for (k, d) in w.kernel.iter_mut().zip(&gw.kernel) {
                    *k = *k * shrink - lr * d;
                }
                for (b, d) in w.bias.iter_mut().zip(&gw.bias) {
                    *b -= lr * d;
                }
            }
            (LayerParams::BatchNorm(b), LayerGrad::BatchNorm { gain, shift }) => {
                for (v, d) in b.gain.iter_mut().zip(gain) {
                    *v -= lr * d;
                }
                for (v, d) in b.shift.iter_mut().zip(shift) {
                    *v -= lr * d;
                }
            }
            (LayerParams::None, LayerGrad::None) => {}
            _ => return Err(Error::shape("gradient layout matching parameters", "mismatched entry")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framelets::{decode, encode, FilterBank, FramePair};
    use rand::Rng;

    fn random_input(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = seeding::stream(seed, 0);
        Tensor4::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn full_preset_structure() {
        let spec = build_paper_network(64, Preset::Full).unwrap();
        assert_eq!(spec.conv_count(), 28);
        assert_eq!(spec.concat_count(), 4);
        assert_eq!(spec.bypasses.len(), 4);
        spec.check_block_structure(28, 4).unwrap();
        let last = spec.layers.last().unwrap();
        assert_eq!(last.kind, LayerKind::Conv1x1);
        assert_eq!(last.out_channels, 1);
        let convs: Vec<&LayerSpec> = spec.layers.iter().filter(|l| l.is_conv()).collect();
        assert_eq!(convs.iter().filter(|l| l.kind == LayerKind::Conv3x3).count(), 27);
    }

    #[test]
    fn toy_preset_shape_preserving() {
        let spec = build_paper_network(16, Preset::Toy).unwrap();
        assert_eq!((spec.conv_count(), spec.concat_count()), (8, 2));
        let params = ParameterSet::init(&spec, 1);
        let mut p = params.clone();
        // populate running statistics first
        forward_cached(&spec, &mut p, &random_input([2, 1, 16, 48], 1), Mode::Train).unwrap();
        let out = forward(&spec, &p, &random_input([1, 1, 16, 48], 2)).unwrap();
        assert_eq!(out.dims(), [1, 1, 16, 48]);
        assert!(out.all_finite());
        let out = forward(&spec, &p, &random_input([1, 1, 7, 11], 3)).unwrap();
        assert_eq!(out.dims(), [1, 1, 7, 11]);
    }

    #[test]
    fn preset_rejects_narrow_width_and_bad_bypasses() {
        assert!(build_paper_network(3, Preset::Toy).is_err());
        assert!(build_network(8, Preset::Toy, vec![(2, 7)], 1).is_err());
        assert!(build_network(8, Preset::Toy, vec![(7, 2), (3, 6)], 1).is_err());
        assert!(build_network(8, Preset::Toy, vec![(1, 8), (4, 5)], 1).is_ok());
    }

    #[test]
    fn infer_before_training_is_an_error() {
        let spec = build_paper_network(4, Preset::Toy).unwrap();
        let params = ParameterSet::init(&spec, 1);
        assert!(matches!(
            forward(&spec, &params, &random_input([1, 1, 4, 4], 1)),
            Err(Error::UninitializedStats(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = build_paper_network(8, Preset::Toy).unwrap();
        let mut params = ParameterSet::init(&spec, 4);
        forward_cached(&spec, &mut params, &random_input([2, 1, 6, 8], 4), Mode::Train).unwrap();
        let x = random_input([1, 1, 6, 8], 5);
        let a = forward(&spec, &params, &x).unwrap();
        let b = forward(&spec, &params, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let spec = build_paper_network(4, Preset::Toy).unwrap();
        let mut params = ParameterSet::init(&spec, 2);
        let cache = forward_cached(&spec, &mut params, &random_input([2, 1, 4, 5], 2), Mode::Train).unwrap();
        let (g, gx) = backward(&spec, &params, &cache, &Tensor4::zeros([2, 1, 4, 5])).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_detected() {
        let spec = build_paper_network(4, Preset::Toy).unwrap();
        let mut params = ParameterSet::init(&spec, 2);
        let x = random_input([1, 1, 4, 5], 2);
        let cache = forward_cached(&spec, &mut params, &x, Mode::Train).unwrap();
        let grads = Gradients::zeros_like(&params);
        sgd_step(&mut params, &grads, 0.1, 0.0, 0.0, None).unwrap();
        assert!(matches!(
            backward(&spec, &params, &cache, &Tensor4::zeros([1, 1, 4, 5])),
            Err(Error::StaleCache)
        ));
        let fresh = forward_cached(&spec, &mut params, &x, Mode::Train).unwrap();
        assert!(backward(&spec, &params, &fresh, &Tensor4::zeros([1, 1, 4, 5])).is_ok());
    }

    fn loss_and_grad(spec: &NetworkSpec, params: &ParameterSet, x: &Tensor4, target: &Tensor4) -> (f64, Gradients) {
        let mut p = params.clone();
        let cache = forward_cached(spec, &mut p, x, Mode::Train).unwrap();
        let out = cache.output();
        let n = out.len() as f64;
        let mut g = out.clone();
        let mut loss = 0.0;
        for (gv, t) in g.data_mut().iter_mut().zip(target.data()) {
            let r = *gv - t;
            loss += r * r / n;
            *gv = 2.0 * r / n;
        }
        let (grads, _) = backward(spec, &p, &cache, &g).unwrap();
        (loss, grads)
    }

    fn perturb(params: &ParameterSet, index: usize, delta: f64) -> ParameterSet {
        let mut p = params.clone();
        let mut k = index;
        for layer in p.layers_mut() {
            let slots: Vec<&mut Vec<f64>> = match layer {
                LayerParams::Conv(w) => vec![&mut w.kernel, &mut w.bias],
                LayerParams::BatchNorm(b) => vec![&mut b.gain, &mut b.shift],
                LayerParams::None => vec![],
            };
            for s in slots {
                if k < s.len() {
                    s[k] += delta;
                    return p;
                }
                k -= s.len();
            }
        }
        panic!("index out of range");
    }

    /// Central differences over every trainable parameter of a toy net. Where
    /// both gradients are below 1e-7 (biases feeding batch norm have exactly
    /// zero gradient) the absolute difference must be below 1e-9 instead.
    #[test]
    fn toy_network_gradients_match_finite_differences() {
        let spec = build_paper_network(4, Preset::Toy).unwrap();
        for seed in 0..2 {
            let mut params = ParameterSet::init(&spec, seed);
            // non-trivial batch norm parameters
            let mut rng = seeding::stream(seed, 99);
            for l in params.layers_mut() {
                if let LayerParams::BatchNorm(b) = l {
                    b.gain.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
                    b.shift.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
                }
            }
            let x = random_input([2, 1, 4, 5], seed + 10);
            let target = random_input([2, 1, 4, 5], seed + 20);
            let (_, grads) = loss_and_grad(&spec, &params, &x, &target);
            let analytic = grads.flatten();
            let h = 1e-5;
            let mut worst = 0.0f64;
            for (i, &a) in analytic.iter().enumerate() {
                let (lp, _) = loss_and_grad(&spec, &perturb(&params, i, h), &x, &target);
                let (lm, _) = loss_and_grad(&spec, &perturb(&params, i, -h), &x, &target);
                let fd = (lp - lm) / (2.0 * h);
                let scale = a.abs().max(fd.abs());
                if scale < 1e-7 {
                    assert!((a - fd).abs() < 1e-9, "param {i}: {a} vs {fd}");
                } else {
                    worst = worst.max((a - fd).abs() / scale);
                }
            }
            assert!(worst <= 1e-4, "max relative error {worst}");
        }
    }

    #[test]
    fn weight_decay_shrinks_kernels_exactly() {
        let spec = build_paper_network(4, Preset::Toy).unwrap();
        let mut params = ParameterSet::init(&spec, 3);
        let before = params.kernel_norm_sq().sqrt();
        let zero = Gradients::zeros_like(&params);
        let lr = 0.5;
        sgd_step(&mut params, &zero, lr, 1e-4, 0.0, None).unwrap();
        let after = params.kernel_norm_sq().sqrt();
        assert!((after / before - (1.0 - lr * 1e-4)).abs() < 1e-14);
    }

    /// A two-conv linear network loaded with a Haar analysis/synthesis pair
    /// reproduces the framelet decode(encode(f)) identity on a periodically
    /// padded 1 x n image.
    #[test]
    fn framelet_pair_as_two_layer_network() {
        let bank = FilterBank::haar();
        let (d, q) = (bank.taps(), bank.filters());
        let spec = NetworkSpec::new(vec![LayerSpec::conv3x3(1, q), LayerSpec::conv3x3(q, 1)], vec![], q, 1).unwrap();
        let mut enc = ConvWeights::zeros(1, q, 3);
        let mut dec = ConvWeights::zeros(q, 1, 3);
        for j in 0..q {
            for t in 0..d {
                // response[i] = sum_t f[i + t] psi[t]: kernel offset +t
                *enc.at_mut(j, 0, 1, 1 + t) = bank.filter(j, 0)[t];
                // adjoint lift: out[m] = (1/d) sum_t C[m - t] psi~[t]: offset -t
                *dec.at_mut(0, j, 1, 1 - t) = bank.dual_filter(j, 0)[t] / d as f64;
            }
        }
        let params =
            ParameterSet::from_layers(&spec, vec![LayerParams::Conv(enc), LayerParams::Conv(dec)]).unwrap();
        let n = 16;
        let mut rng = seeding::stream(5, 0);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pad = 2;
        let padded: Vec<f64> = (0..n + 2 * pad).map(|i| f[(i + n - pad) % n]).collect();
        let x = Tensor4::from_vec([1, 1, 1, n + 2 * pad], padded).unwrap();
        let out = forward(&spec, &params, &x).unwrap();
        let frame = FramePair::identity(n);
        let reference = decode(&encode(&f, &frame, &bank).unwrap(), &frame, &bank).unwrap();
        for i in 0..n {
            assert!((out.data()[i + pad] - f[i]).abs() <= 1e-8);
            assert!((out.data()[i + pad] - reference[i]).abs() <= 1e-8);
        }
    }
}
