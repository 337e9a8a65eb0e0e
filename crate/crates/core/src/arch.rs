//! U-Net and W-Net builders.
//!
//! A model is `u_passes` U structures in sequence followed by a
//! classification head. Each U is:
//!
//! * an encoder of `depth` levels, each two 3x3 conv+ReLU then a 2x2 max-pool,
//!   with `base_channels * 2^level` channels;
//! * a bottleneck of two conv+ReLU at `base_channels * 2^(depth-1)` channels;
//! * a decoder that, per level from the deepest up, up-samples, concatenates
//!   the same U's encoder output at that level and applies two conv+ReLU
//!   back down to that level's channel count.
//!
//! The second and later U's take the previous U's full-resolution
//! `base_channels` output as input. The head is global average pooling over
//! the last U's output followed by a dense layer to `num_classes` logits.
//!
//! Parameter names are `u{pass}.enc{level}.conv{0|1}.{weight|bias}`,
//! `u{pass}.mid.conv{0|1}.*`, `u{pass}.dec{level}.conv{0|1}.*` and
//! `head.{weight|bias}`, in that order.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::layers::chw;
use crate::tensor::{Element, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Unet,
    Wnet,
}

impl Arch {
    pub fn default_passes(self) -> usize {
        match self {
            Arch::Unet => 1,
            Arch::Wnet => 2,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Unet => "unet",
            Arch::Wnet => "wnet",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Arch::Unet),
            "wnet" => Ok(Arch::Wnet),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_size: usize,
    pub input_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub num_classes: usize,
    pub u_passes: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// 400x400 single-channel input, 32 base channels, four pooling stages.
    pub fn paper(arch: Arch, num_classes: usize) -> Self {
        ModelConfig {
            arch,
            input_size: 400,
            input_channels: 1,
            base_channels: 32,
            depth: 4,
            num_classes,
            u_passes: arch.default_passes(),
            seed: 0,
        }
    }

    /// Small configuration used for desk-scale training.
    pub fn mini(arch: Arch, num_classes: usize) -> Self {
        ModelConfig {
            input_size: 64,
            base_channels: 8,
            depth: 2,
            ..Self::paper(arch, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_size == 0 || self.input_channels == 0 || self.base_channels == 0 {
            return bad("input size, input channels and base channels must be >= 1".into());
        }
        if self.depth >= usize::BITS as usize - 1 || self.input_size % (1usize << self.depth) != 0 {
            return bad(format!(
                "input size {} is not divisible by 2^{} (depth)",
                self.input_size, self.depth
            ));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.u_passes == 0 {
            return bad("u_passes must be >= 1".into());
        }
        if self.arch == Arch::Unet && self.u_passes != 1 {
            return bad(format!("a U-Net has exactly one U pass, got {}", self.u_passes));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        if self.depth == 0 {
            self.base_channels
        } else {
            self.level_channels(self.depth - 1)
        }
    }
}

/// `(channels, height, width)` of one stage.
pub type StageShape = (usize, usize, usize);

/// Encoder stage outputs (before pooling) for each level, then the
/// bottleneck. With depth 0 the only stage is the full-resolution block.
pub fn stage_shapes(config: &ModelConfig) -> Vec<StageShape> {
    let s = config.input_size;
    let mut shapes: Vec<StageShape> = (0..config.depth)
        .map(|l| (config.level_channels(l), s >> l, s >> l))
        .collect();
    shapes.push((config.bottleneck_channels(), s >> config.depth, s >> config.depth));
    shapes
}

/// Names and shapes of every parameter, in build order.
pub fn parameter_inventory(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut inv = Vec::new();
    let mut conv = |prefix: String, cin: usize, cout: usize| {
        inv.push((format!("{prefix}.weight"), vec![cout, cin, 3, 3]));
        inv.push((format!("{prefix}.bias"), vec![cout]));
    };
    for pass in 0..config.u_passes {
        let input = if pass == 0 { config.input_channels } else { config.base_channels };
        let mut cin = input;
        for level in 0..config.depth {
            let c = config.level_channels(level);
            conv(format!("u{pass}.enc{level}.conv0"), cin, c);
            conv(format!("u{pass}.enc{level}.conv1"), c, c);
            cin = c;
        }
        let mid = config.bottleneck_channels();
        conv(format!("u{pass}.mid.conv0"), cin, mid);
        conv(format!("u{pass}.mid.conv1"), mid, mid);
        let mut below = mid;
        for level in (0..config.depth).rev() {
            let c = config.level_channels(level);
            conv(format!("u{pass}.dec{level}.conv0"), below + c, c);
            conv(format!("u{pass}.dec{level}.conv1"), c, c);
            below = c;
        }
    }
    let top = config.base_channels;
    inv.push(("head.weight".into(), vec![config.num_classes, top]));
    inv.push(("head.bias".into(), vec![config.num_classes]));
    inv
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

/// An instantiated network: its configuration and named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T = f32> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
}

/// Shapes realized by one U during a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassTrace {
    /// Encoder stage outputs, top level first.
    pub encoder: Vec<StageShape>,
    pub bottleneck: StageShape,
    /// Channel counts right after each skip concatenation, deepest first.
    pub concat_channels: Vec<usize>,
    /// Decoder stage outputs, deepest first.
    pub decoder: Vec<StageShape>,
}

/// Node ids of a recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// One leaf per parameter, in parameter order.
    pub params: Vec<NodeId>,
    pub input: NodeId,
    /// Final U's full-resolution output, `[base_channels, S, S]`.
    pub features: NodeId,
    pub logits: NodeId,
    pub trace: Vec<PassTrace>,
}

/// Builds a model with He-scaled normal weights (std `sqrt(2 / fan_in)`) and
/// zero biases, drawn from `rng` in parameter order.
pub fn build_model<T: Element>(config: &ModelConfig, rng: &mut Rng) -> Result<ModelGraph<T>> {
    config.validate()?;
    let params = parameter_inventory(config)
        .into_iter()
        .map(|(name, shape)| {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(&shape)?
            } else {
                let fan_in: usize = shape[1..].iter().product();
                rng.fill_normal(&shape, 0.0, (2.0 / fan_in as f64).sqrt())?
            };
            Ok(Parameter { name, value })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelGraph {
        config: config.clone(),
        params,
    })
}

impl<T: Element> ModelGraph<T> {
    /// Builds with a generator seeded from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        build_model(config, &mut Rng::new(config.seed))
    }

    /// Reassembles a model from stored parameters, checking them against the
    /// configuration's inventory.
    pub fn from_parameters(config: ModelConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        config.validate()?;
        let inv = parameter_inventory(&config);
        if inv.len() != params.len() {
            return Err(Error::Shape(format!(
                "configuration needs {} parameter tensors, got {}",
                inv.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in inv.iter().zip(&params) {
            if name != &p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "expected parameter {name} {shape:?}, got {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(ModelGraph { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn stage_shapes(&self) -> Vec<StageShape> {
        stage_shapes(&self.config)
    }

    pub fn cast<U: Element>(&self) -> ModelGraph<U> {
        ModelGraph {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let expected = [c.input_channels, c.input_size, c.input_size];
        if image.shape() != expected {
            return Err(Error::Shape(format!(
                "model expects an image of shape {expected:?}, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `image` on `graph`.
    pub fn record(&self, graph: &mut Graph<T>, image: &Tensor<T>) -> Result<ForwardNodes> {
        self.check_image(image)?;
        let params: Vec<NodeId> = self.params.iter().map(|p| graph.leaf(p.value.clone())).collect();
        let input = graph.leaf(image.clone());
        let mut next = params.iter().copied();
        let mut conv_relu = |g: &mut Graph<T>, x: NodeId| -> Result<NodeId> {
            let w = next.next().expect("inventory covers every conv");
            let b = next.next().expect("inventory covers every conv");
            let y = g.conv2d(x, w, b)?;
            g.relu(y)
        };
        let shape_of = |g: &Graph<T>, id: NodeId| chw(g.value(id));

        let mut x = input;
        let mut trace = Vec::with_capacity(self.config.u_passes);
        for _ in 0..self.config.u_passes {
            let mut pass = PassTrace::default();
            let mut skips = Vec::with_capacity(self.config.depth);
            for _ in 0..self.config.depth {
                x = conv_relu(graph, x)?;
                x = conv_relu(graph, x)?;
                pass.encoder.push(shape_of(graph, x)?);
                skips.push(x);
                x = graph.maxpool2x2(x)?;
            }
            x = conv_relu(graph, x)?;
            x = conv_relu(graph, x)?;
            pass.bottleneck = shape_of(graph, x)?;
            for skip in skips.into_iter().rev() {
                let up = graph.upsample2x(x)?;
                x = graph.concat_channels(up, skip)?;
                pass.concat_channels.push(shape_of(graph, x)?.0);
                x = conv_relu(graph, x)?;
                x = conv_relu(graph, x)?;
                pass.decoder.push(shape_of(graph, x)?);
            }
            trace.push(pass);
        }
        let features = x;
        let pooled = graph.global_avg_pool(features)?;
        let (hw, hb) = (next.next().expect("head weight"), next.next().expect("head bias"));
        let logits = graph.dense(pooled, hw, hb)?;
        Ok(ForwardNodes {
            params,
            input,
            features,
            logits,
            trace,
        })
    }

    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let nodes = self.record(&mut g, image)?;
        Ok(g.value(nodes.logits).clone())
    }

    /// Class probabilities for one `[input_channels, S, S]` image.
    pub fn forward_classify(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(crate::layers::softmax(&self.logits(image)?))
    }

    /// Cross-entropy loss, probabilities and per-parameter gradients for one
    /// labelled image.
    pub fn loss_and_gradients(&self, image: &Tensor<T>, target: usize) -> Result<SampleGradients<T>> {
        if target >= self.config.num_classes {
            return Err(Error::Usage(format!(
                "target class {target} out of range for {} classes",
                self.config.num_classes
            )));
        }
        let mut g = Graph::new();
        let nodes = self.record(&mut g, image)?;
        let loss = g.softmax_cross_entropy(nodes.logits, target)?;
        g.backward(loss)?;
        Ok(SampleGradients {
            loss: g.value(loss).data()[0],
            probabilities: g.probabilities(loss).expect("loss node").clone(),
            gradients: nodes
                .params
                .iter()
                .map(|&id| g.gradient(id).expect("backward ran").clone())
                .collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SampleGradients<T> {
    pub loss: T,
    pub probabilities: Tensor<T>,
    /// In parameter order.
    pub gradients: Vec<Tensor<T>>,
}
