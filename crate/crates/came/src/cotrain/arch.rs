//! Encoder architectures: a tiny MLP for oracle and gradient tests, LeNet-5
//! for digit-scale data, and CIFAR-style DenseNet / ResNet backbones.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::NodeId;
use super::layers::{BatchNorm2d, Conv2d, Linear, ParamStore, Runtime};
use super::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("unknown architecture tag `{0}`")]
    UnknownTag(String),
    #[error("densenet depth {0} must satisfy (depth - 4) % 3 == 0")]
    BadDenseNetDepth(usize),
    #[error("resnet depth {0} must satisfy (depth - 2) % 6 == 0")]
    BadResNetDepth(usize),
    #[error("architecture `{tag}` needs input {expect}, got {got}")]
    BadInput {
        tag: String,
        expect: String,
        got: String,
    },
}

/// Parsed architecture tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchTag {
    TinyMlp,
    LeNet5,
    DenseNet { depth: usize, growth: usize },
    ResNet { depth: usize },
}

impl ArchTag {
    /// Parse tags like `tiny-mlp`, `lenet5`, `densenet-40-12`, `resnet-20`.
    pub fn parse(tag: &str) -> Result<Self, ArchError> {
        if tag == "tiny-mlp" {
            return Ok(ArchTag::TinyMlp);
        }
        if tag == "lenet5" {
            return Ok(ArchTag::LeNet5);
        }
        if let Some(rest) = tag.strip_prefix("densenet-") {
            let parts: Vec<&str> = rest.split('-').collect();
            if parts.len() == 2 {
                if let (Ok(depth), Ok(growth)) = (parts[0].parse(), parts[1].parse()) {
                    if (depth as i64 - 4) % 3 != 0 || depth < 7 {
                        return Err(ArchError::BadDenseNetDepth(depth));
                    }
                    return Ok(ArchTag::DenseNet { depth, growth });
                }
            }
        }
        if let Some(rest) = tag.strip_prefix("resnet-") {
            if let Ok(depth) = rest.parse::<usize>() {
                if depth < 8 || (depth - 2) % 6 != 0 {
                    return Err(ArchError::BadResNetDepth(depth));
                }
                return Ok(ArchTag::ResNet { depth });
            }
        }
        Err(ArchError::UnknownTag(tag.to_string()))
    }
}

impl std::fmt::Display for ArchTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchTag::TinyMlp => f.write_str("tiny-mlp"),
            ArchTag::LeNet5 => f.write_str("lenet5"),
            ArchTag::DenseNet { depth, growth } => write!(f, "densenet-{depth}-{growth}"),
            ArchTag::ResNet { depth } => write!(f, "resnet-{depth}"),
        }
    }
}

/// Resolved geometry of a built encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Architecture {
    pub tag: ArchTag,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
}

pub struct DenseLayer {
    bn: BatchNorm2d,
    conv: Conv2d,
}

pub struct Transition {
    bn: BatchNorm2d,
    conv: Conv2d,
}

pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
}

/// The shared encoder `f`, mapping image batches to feature vectors.
pub enum EncoderNet {
    TinyMlp {
        fc1: Linear,
        fc2: Linear,
    },
    LeNet5 {
        conv1: Conv2d,
        conv2: Conv2d,
        fc1: Linear,
        fc2: Linear,
    },
    DenseNet {
        stem: Conv2d,
        blocks: Vec<Vec<DenseLayer>>,
        transitions: Vec<Transition>,
        final_bn: BatchNorm2d,
    },
    ResNet {
        stem: Conv2d,
        stem_bn: BatchNorm2d,
        stages: Vec<Vec<BasicBlock>>,
    },
}

/// Build an encoder for the given tag and input geometry, registering all
/// parameters into `store`. Returns the encoder and its feature dimension.
pub fn build_encoder<T: Scalar>(
    tag: ArchTag,
    in_channels: usize,
    height: usize,
    width: usize,
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
) -> Result<(EncoderNet, usize), ArchError> {
    match tag {
        ArchTag::TinyMlp => {
            let input = in_channels * height * width;
            let hidden = 32;
            let feat = 16;
            let fc1 = Linear::init(store, "enc.fc1", input, hidden, rng);
            let fc2 = Linear::init(store, "enc.fc2", hidden, feat, rng);
            Ok((EncoderNet::TinyMlp { fc1, fc2 }, feat))
        }
        ArchTag::LeNet5 => {
            let check = |dim: usize| dim >= 12 && (dim - 4) % 2 == 0 && ((dim - 4) / 2 - 4) % 2 == 0;
            if !check(height) || !check(width) {
                return Err(ArchError::BadInput {
                    tag: tag.to_string(),
                    expect: "spatial dims compatible with two 5x5 conv + 2x2 pool stages (e.g. 28 or 32)"
                        .to_string(),
                    got: format!("{height}x{width}"),
                });
            }
            let conv1 = Conv2d::init(store, "enc.conv1", in_channels, 6, 5, 1, 0, rng);
            let conv2 = Conv2d::init(store, "enc.conv2", 6, 16, 5, 1, 0, rng);
            let h2 = ((height - 4) / 2 - 4) / 2;
            let w2 = ((width - 4) / 2 - 4) / 2;
            let flat = 16 * h2 * w2;
            let fc1 = Linear::init(store, "enc.fc1", flat, 120, rng);
            let fc2 = Linear::init(store, "enc.fc2", 120, 84, rng);
            Ok((
                EncoderNet::LeNet5 {
                    conv1,
                    conv2,
                    fc1,
                    fc2,
                },
                84,
            ))
        }
        ArchTag::DenseNet { depth, growth } => {
            if depth < 7 || (depth - 4) % 3 != 0 {
                return Err(ArchError::BadDenseNetDepth(depth));
            }
            let per_block = (depth - 4) / 3;
            let mut channels = 16usize;
            let stem = Conv2d::init(store, "enc.stem", in_channels, channels, 3, 1, 1, rng);
            let mut blocks = Vec::new();
            let mut transitions = Vec::new();
            for b in 0..3 {
                let mut layers = Vec::new();
                for l in 0..per_block {
                    let name = format!("enc.block{b}.layer{l}");
                    let bn = BatchNorm2d::init(store, &format!("{name}.bn"), channels);
                    let conv = Conv2d::init(store, &format!("{name}.conv"), channels, growth, 3, 1, 1, rng);
                    layers.push(DenseLayer { bn, conv });
                    channels += growth;
                }
                blocks.push(layers);
                if b < 2 {
                    let name = format!("enc.trans{b}");
                    let bn = BatchNorm2d::init(store, &format!("{name}.bn"), channels);
                    let conv = Conv2d::init(store, &format!("{name}.conv"), channels, channels, 1, 1, 0, rng);
                    transitions.push(Transition { bn, conv });
                }
            }
            let final_bn = BatchNorm2d::init(store, "enc.final_bn", channels);
            Ok((
                EncoderNet::DenseNet {
                    stem,
                    blocks,
                    transitions,
                    final_bn,
                },
                channels,
            ))
        }
        ArchTag::ResNet { depth } => {
            if depth < 8 || (depth - 2) % 6 != 0 {
                return Err(ArchError::BadResNetDepth(depth));
            }
            let per_stage = (depth - 2) / 6;
            let widths = [16usize, 32, 64];
            let stem = Conv2d::init(store, "enc.stem", in_channels, widths[0], 3, 1, 1, rng);
            let stem_bn = BatchNorm2d::init(store, "enc.stem_bn", widths[0]);
            let mut stages = Vec::new();
            let mut in_c = widths[0];
            for (s, &out_c) in widths.iter().enumerate() {
                let mut stage = Vec::new();
                for b in 0..per_stage {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let name = format!("enc.stage{s}.block{b}");
                    let conv1 = Conv2d::init(store, &format!("{name}.conv1"), in_c, out_c, 3, stride, 1, rng);
                    let bn1 = BatchNorm2d::init(store, &format!("{name}.bn1"), out_c);
                    let conv2 = Conv2d::init(store, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1, rng);
                    let bn2 = BatchNorm2d::init(store, &format!("{name}.bn2"), out_c);
                    let down = if stride != 1 || in_c != out_c {
                        let dconv =
                            Conv2d::init(store, &format!("{name}.down"), in_c, out_c, 1, stride, 0, rng);
                        let dbn = BatchNorm2d::init(store, &format!("{name}.down_bn"), out_c);
                        Some((dconv, dbn))
                    } else {
                        None
                    };
                    stage.push(BasicBlock {
                        conv1,
                        bn1,
                        conv2,
                        bn2,
                        down,
                    });
                    in_c = out_c;
                }
                stages.push(stage);
            }
            Ok((EncoderNet::ResNet { stem, stem_bn, stages }, widths[2]))
        }
    }
}

impl EncoderNet {
    /// Map an NCHW batch to [n, feature_dim] features.
    pub fn forward<T: Scalar>(&self, rt: &mut Runtime<'_, T>, x: NodeId) -> NodeId {
        match self {
            EncoderNet::TinyMlp { fc1, fc2 } => {
                let flat = rt.graph.flatten(x);
                let h = fc1.forward(rt, flat);
                let h = rt.graph.relu(h);
                fc2.forward(rt, h)
            }
            EncoderNet::LeNet5 {
                conv1,
                conv2,
                fc1,
                fc2,
            } => {
                let c1 = conv1.forward(rt, x);
                let a1 = rt.graph.relu(c1);
                let p1 = rt.graph.max_pool2(a1);
                let c2 = conv2.forward(rt, p1);
                let a2 = rt.graph.relu(c2);
                let p2 = rt.graph.max_pool2(a2);
                let flat = rt.graph.flatten(p2);
                let f1 = fc1.forward(rt, flat);
                let f1 = rt.graph.relu(f1);
                let f2 = fc2.forward(rt, f1);
                rt.graph.relu(f2)
            }
            EncoderNet::DenseNet {
                stem,
                blocks,
                transitions,
                final_bn,
            } => {
                let mut h = stem.forward(rt, x);
                for (b, block) in blocks.iter().enumerate() {
                    for layer in block {
                        let n = layer.bn.forward(rt, h);
                        let a = rt.graph.relu(n);
                        let grown = layer.conv.forward(rt, a);
                        h = rt.graph.concat_channels(h, grown);
                    }
                    if b < transitions.len() {
                        let t = &transitions[b];
                        let n = t.bn.forward(rt, h);
                        let a = rt.graph.relu(n);
                        let c = t.conv.forward(rt, a);
                        h = rt.graph.avg_pool2(c);
                    }
                }
                let n = final_bn.forward(rt, h);
                let a = rt.graph.relu(n);
                rt.graph.global_avg_pool(a)
            }
            EncoderNet::ResNet { stem, stem_bn, stages } => {
                let mut h = stem.forward(rt, x);
                h = stem_bn.forward(rt, h);
                h = rt.graph.relu(h);
                for stage in stages {
                    for block in stage {
                        let identity = match &block.down {
                            Some((dconv, dbn)) => {
                                let d = dconv.forward(rt, h);
                                dbn.forward(rt, d)
                            }
                            None => h,
                        };
                        let c1 = block.conv1.forward(rt, h);
                        let b1 = block.bn1.forward(rt, c1);
                        let a1 = rt.graph.relu(b1);
                        let c2 = block.conv2.forward(rt, a1);
                        let b2 = block.bn2.forward(rt, c2);
                        let sum = rt.graph.add(b2, identity);
                        h = rt.graph.relu(sum);
                    }
                }
                rt.graph.global_avg_pool(h)
            }
        }
    }
}
