use rand_chacha::ChaCha8Rng;

use super::{BackboneKind, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Linear, Module, PreActBlock};

/// A backbone split into stages. The output of every stage except the
/// last is a tap point for shallow heads; the last stage yields the shared
/// representation.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub(crate) stages: Vec<Module>,
    /// Output shape (without batch dim) of each tap stage.
    pub(crate) tap_shapes: Vec<Vec<usize>>,
}

fn conv_block(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Vec<Module> {
    vec![
        Module::Conv2d(Conv2d::new(cin, cout, 3, 1, 1, false, rng)),
        Module::BatchNorm2d(BatchNorm2d::new(cout)),
        Module::Relu,
        Module::MaxPool2,
    ]
}

fn preact_layer(in_planes: usize, planes: usize, blocks: usize, stride: usize, rng: &mut ChaCha8Rng) -> Vec<Module> {
    let mut layer = Vec::with_capacity(blocks);
    let mut cin = in_planes;
    for b in 0..blocks {
        let s = if b == 0 { stride } else { 1 };
        layer.push(Module::PreActBlock(Box::new(PreActBlock::new(cin, planes, s, rng))));
        cin = planes;
    }
    layer
}

fn image_dims(input_shape: &[usize], what: &str, min_side: usize) -> Result<(usize, usize, usize)> {
    match input_shape {
        [c, h, w] if *h >= min_side && *w >= min_side => Ok((*c, *h, *w)),
        _ => Err(Error::shape(format!(
            "{what} expects [channels, height, width] inputs of at least {min_side}x{min_side}, got {input_shape:?}"
        ))),
    }
}

impl Backbone {
    pub fn build(cfg: &ModelConfig, input_shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.feature_dim;
        match cfg.backbone {
            BackboneKind::TinyMlp => {
                let [dim] = input_shape else {
                    return Err(Error::shape(format!(
                        "tiny-mlp expects flat feature vectors, got shape {input_shape:?}"
                    )));
                };
                let stages = vec![
                    Module::Sequential(vec![Module::Linear(Linear::new(*dim, d, rng)), Module::Relu]),
                    Module::Sequential(vec![Module::Linear(Linear::new(d, d, rng)), Module::Relu]),
                ];
                Ok(Self {
                    stages,
                    tap_shapes: vec![vec![d]],
                })
            }
            BackboneKind::SmallCnn => {
                let (c, h, w) = image_dims(input_shape, "small-cnn", 8)?;
                let mut last = conv_block(64, d, rng);
                last.push(Module::GlobalAvgPool);
                let stages = vec![
                    Module::Sequential(conv_block(c, 32, rng)),
                    Module::Sequential(conv_block(32, 64, rng)),
                    Module::Sequential(last),
                ];
                Ok(Self {
                    stages,
                    tap_shapes: vec![vec![32, h / 2, w / 2], vec![64, h / 4, w / 4]],
                })
            }
            BackboneKind::PreactResnet34 => {
                let (c, h, w) = image_dims(input_shape, "preact-resnet34", 8)?;
                let mut stage0 = vec![Module::Conv2d(Conv2d::new(c, 64, 3, 1, 1, false, rng))];
                stage0.extend(preact_layer(64, 64, 3, 1, rng));
                let stage1 = preact_layer(64, 128, 4, 2, rng);
                let stage2 = preact_layer(128, 256, 6, 2, rng);
                let mut stage3 = preact_layer(256, 512, 3, 2, rng);
                stage3.push(Module::GlobalAvgPool);
                let down = |s: usize, k: usize| (s + (1 << k) - 1) >> k;
                Ok(Self {
                    stages: vec![
                        Module::Sequential(stage0),
                        Module::Sequential(stage1),
                        Module::Sequential(stage2),
                        Module::Sequential(stage3),
                    ],
                    tap_shapes: vec![
                        vec![64, h, w],
                        vec![128, down(h, 1), down(w, 1)],
                        vec![256, down(h, 2), down(w, 2)],
                    ],
                })
            }
        }
    }
}
