use super::backbone::Backbone;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Cache, Linear, Module, Param, Tensor};
use crate::rng::{stream_rng, Stream};

/// Per-sample outputs of every head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub positive_logits: Vec<f32>,
    pub negative_logits: Vec<f32>,
    pub shallow_logits: Vec<Vec<f32>>,
    /// Adapted shallow features, each the same length as `deep_feature`.
    pub shallow_features: Vec<Vec<f32>>,
    pub deep_feature: Vec<f32>,
}

/// Batched head outputs; every tensor is `[N, ·]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    pub positive: Tensor,
    pub negative: Tensor,
    pub shallow_logits: Vec<Tensor>,
    pub shallow_features: Vec<Tensor>,
    pub deep_feature: Tensor,
}

impl BatchOutputs {
    pub fn len(&self) -> usize {
        self.positive.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> HeadOutputs {
        HeadOutputs {
            positive_logits: self.positive.row(i).to_vec(),
            negative_logits: self.negative.row(i).to_vec(),
            shallow_logits: self.shallow_logits.iter().map(|t| t.row(i).to_vec()).collect(),
            shallow_features: self.shallow_features.iter().map(|t| t.row(i).to_vec()).collect(),
            deep_feature: self.deep_feature.row(i).to_vec(),
        }
    }
}

/// Gradients of the objective w.r.t. each output of [`BatchOutputs`].
/// `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub positive: Option<Tensor>,
    pub negative: Option<Tensor>,
    pub shallow_logits: Vec<Option<Tensor>>,
    pub shallow_features: Vec<Option<Tensor>>,
}

#[derive(Debug)]
pub struct ForwardCache {
    stages: Vec<Cache>,
    positive: Cache,
    negative: Cache,
    adapters: Vec<Cache>,
    shallow: Vec<Cache>,
    batch: usize,
}

/// Shared backbone with a positive head, a negative head and optional
/// shallow heads. Both main heads are single linear layers on the same
/// representation.
#[derive(Debug, Clone)]
pub struct TwoHeadModel {
    config: ModelConfig,
    input_shape: Vec<usize>,
    backbone: Backbone,
    positive: Module,
    negative: Module,
    adapters: Vec<Module>,
    shallow_heads: Vec<Module>,
    /// Backbone stage each shallow head taps.
    tap_stage: Vec<usize>,
}

impl TwoHeadModel {
    pub fn new(config: &ModelConfig, input_shape: &[usize], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0, 0);
        let backbone = Backbone::build(config, input_shape, &mut rng)?;
        let (d, c, t) = (config.feature_dim, config.num_classes, config.num_shallow_heads);
        let positive = Module::Linear(Linear::new(d, c, &mut rng));
        let negative = Module::Linear(Linear::new(d, c, &mut rng));
        let taps = backbone.tap_shapes.len();
        let tap_stage: Vec<usize> = (taps - t..taps).collect();
        let mut adapters = Vec::with_capacity(t);
        let mut shallow_heads = Vec::with_capacity(t);
        for &s in &tap_stage {
            let shape = &backbone.tap_shapes[s];
            // Pool-then-project equals a 1x1 convolution followed by pooling.
            let adapter = if shape.len() == 1 {
                Module::Sequential(vec![Module::Linear(Linear::new(shape[0], d, &mut rng))])
            } else {
                Module::Sequential(vec![
                    Module::GlobalAvgPool,
                    Module::Linear(Linear::new(shape[0], d, &mut rng)),
                ])
            };
            adapters.push(adapter);
            shallow_heads.push(Module::Linear(Linear::new(d, c, &mut rng)));
        }
        Ok(Self {
            config: config.clone(),
            input_shape: input_shape.to_vec(),
            backbone,
            positive,
            negative,
            adapters,
            shallow_heads,
            tap_stage,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_shallow_heads(&self) -> usize {
        self.shallow_heads.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "model expects samples of shape {:?}, got batch {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<BatchOutputs> {
        self.check_input(x)?;
        let mut taps = Vec::with_capacity(self.backbone.stages.len());
        let mut h = x.clone();
        for stage in &self.backbone.stages {
            h = stage.forward(&h)?;
            taps.push(h.clone());
        }
        let deep = taps.pop().expect("backbone has stages");
        let mut shallow_features = Vec::new();
        let mut shallow_logits = Vec::new();
        for ((adapter, head), &s) in self.adapters.iter().zip(&self.shallow_heads).zip(&self.tap_stage) {
            let f = adapter.forward(&taps[s])?;
            shallow_logits.push(head.forward(&f)?);
            shallow_features.push(f);
        }
        Ok(BatchOutputs {
            positive: self.positive.forward(&deep)?,
            negative: self.negative.forward(&deep)?,
            shallow_logits,
            shallow_features,
            deep_feature: deep,
        })
    }

    /// Training forward pass; batch-norm layers use batch statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(BatchOutputs, ForwardCache)> {
        self.check_input(x)?;
        let mut stage_caches = Vec::with_capacity(self.backbone.stages.len());
        let mut taps = Vec::with_capacity(self.backbone.stages.len());
        let mut h = x.clone();
        for stage in &mut self.backbone.stages {
            let (y, c) = stage.forward_train(&h)?;
            stage_caches.push(c);
            taps.push(y.clone());
            h = y;
        }
        let deep = taps.pop().expect("backbone has stages");
        let mut adapter_caches = Vec::new();
        let mut shallow_caches = Vec::new();
        let mut shallow_features = Vec::new();
        let mut shallow_logits = Vec::new();
        for ((adapter, head), &s) in self
            .adapters
            .iter_mut()
            .zip(&mut self.shallow_heads)
            .zip(&self.tap_stage)
        {
            let (f, ac) = adapter.forward_train(&taps[s])?;
            let (z, hc) = head.forward_train(&f)?;
            adapter_caches.push(ac);
            shallow_caches.push(hc);
            shallow_logits.push(z);
            shallow_features.push(f);
        }
        let (pos, pc) = self.positive.forward_train(&deep)?;
        let (neg, nc) = self.negative.forward_train(&deep)?;
        Ok((
            BatchOutputs {
                positive: pos,
                negative: neg,
                shallow_logits,
                shallow_features,
                deep_feature: deep,
            },
            ForwardCache {
                stages: stage_caches,
                positive: pc,
                negative: nc,
                adapters: adapter_caches,
                shallow: shallow_caches,
                batch: x.rows(),
            },
        ))
    }

    /// Accumulate parameter gradients for the given output gradients.
    pub fn backward(&mut self, cache: ForwardCache, grads: &OutputGrads) -> Result<()> {
        let n = cache.batch;
        let (d, c) = (self.config.feature_dim, self.config.num_classes);
        let t = self.shallow_heads.len();
        if grads.shallow_logits.len() > t || grads.shallow_features.len() > t {
            return Err(Error::shape(format!("gradients for more than {t} shallow heads")));
        }
        let zeros_c = || Tensor::zeros(&[n, c]);
        let mut g_deep = Tensor::zeros(&[n, d]);
        let g_pos = grads.positive.clone().unwrap_or_else(zeros_c);
        g_deep.add_assign(&self.positive.backward(cache.positive, &g_pos)?)?;
        let g_neg = grads.negative.clone().unwrap_or_else(zeros_c);
        g_deep.add_assign(&self.negative.backward(cache.negative, &g_neg)?)?;

        let mut tap_grads: Vec<Option<Tensor>> = vec![None; self.backbone.stages.len()];
        for (j, (ac, hc)) in cache.adapters.into_iter().zip(cache.shallow).enumerate() {
            let g_z = grads.shallow_logits.get(j).cloned().flatten().unwrap_or_else(zeros_c);
            let mut g_f = self.shallow_heads[j].backward(hc, &g_z)?;
            if let Some(Some(gf)) = grads.shallow_features.get(j) {
                g_f.add_assign(gf)?;
            }
            let g_tap = self.adapters[j].backward(ac, &g_f)?;
            let slot = &mut tap_grads[self.tap_stage[j]];
            match slot {
                Some(acc) => acc.add_assign(&g_tap)?,
                None => *slot = Some(g_tap),
            }
        }

        let mut g = g_deep;
        for (s, stage_cache) in cache.stages.into_iter().enumerate().rev() {
            if let Some(tg) = &tap_grads[s] {
                g.add_assign(tg)?;
            }
            g = self.backbone.stages[s].backward(stage_cache, &g)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.backbone.stages.iter().flat_map(|m| m.params()).collect();
        v.extend(self.positive.params());
        v.extend(self.negative.params());
        v.extend(self.adapters.iter().flat_map(|m| m.params()));
        v.extend(self.shallow_heads.iter().flat_map(|m| m.params()));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.backbone.stages.iter_mut().flat_map(|m| m.params_mut()).collect();
        v.extend(self.positive.params_mut());
        v.extend(self.negative.params_mut());
        v.extend(self.adapters.iter_mut().flat_map(|m| m.params_mut()));
        v.extend(self.shallow_heads.iter_mut().flat_map(|m| m.params_mut()));
        v
    }

    pub fn backbone_params(&self) -> Vec<&Param> {
        self.backbone.stages.iter().flat_map(|m| m.params()).collect()
    }

    pub fn positive_head_params(&self) -> Vec<&Param> {
        self.positive.params()
    }

    pub fn negative_head_params(&self) -> Vec<&Param> {
        self.negative.params()
    }

    pub fn shallow_head_params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.adapters.iter().flat_map(|m| m.params()).collect();
        v.extend(self.shallow_heads.iter().flat_map(|m| m.params()));
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Every tensor that defines the model: parameters, then buffers.
    pub fn state(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.params().into_iter().map(|p| &p.value).collect();
        v.extend(self.backbone.stages.iter().flat_map(|m| m.buffers()));
        v
    }

    /// Replace parameters and buffers from tensors in [`Self::state`] order.
    pub fn load_state(&mut self, tensors: &[Tensor]) -> Result<()> {
        let expected = self.state().len();
        if tensors.len() != expected {
            return Err(Error::shape(format!(
                "model state has {expected} tensors, got {}",
                tensors.len()
            )));
        }
        for (slot, t) in self.state().iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "state tensor shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
        }
        let mut src = tensors.iter();
        for p in self.params_mut() {
            p.value = src.next().expect("length checked").clone();
        }
        for b in self.backbone.stages.iter_mut().flat_map(|m| m.buffers_mut()) {
            *b = src.next().expect("length checked").clone();
        }
        Ok(())
    }
}
