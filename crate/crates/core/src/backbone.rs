//! Shared convolutional trunks: the C3D stack through its fifth pooling
//! stage, the multiscale dilated trunk, and the reusable dilated
//! context-aggregation block.
//!
//! Both trunks expose five tagged capture points (`c1`…`c5`) so frozen
//! activations can be probed layer by layer, and both keep per-layer
//! activation caches during train-mode forwards for the hand-written
//! backward passes.

use ndarray::Array5;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use aqa_nn::ops::{relu_backward_inplace, relu_inplace};
use aqa_nn::param::{with_prefix, NamedParams, NamedParamsMut};
use aqa_nn::{BatchNorm3d, Conv3d, Dropout, MaxPool3d, Scalar};

use crate::error::AqaError;
use crate::Result;

/// Temporal length of one trunk input clip.
pub const CLIP_FRAMES: usize = 16;
/// Default per-clip spatial extent for the C3D trunk.
pub const C3D_HW: (usize, usize) = (112, 112);
/// Default spatial extent for the multiscale dilated trunk.
pub const MSCADC_HW: (usize, usize) = (180, 180);

/// Identifies one of the five probe-able activation stages of a trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerTag {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl LayerTag {
    pub const ALL: [LayerTag; 5] = [
        LayerTag::C1,
        LayerTag::C2,
        LayerTag::C3,
        LayerTag::C4,
        LayerTag::C5,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerTag::C1 => "c1",
            LayerTag::C2 => "c2",
            LayerTag::C3 => "c3",
            LayerTag::C4 => "c4",
            LayerTag::C5 => "c5",
        }
    }

    pub fn parse(s: &str) -> Result<LayerTag> {
        LayerTag::ALL
            .into_iter()
            .find(|t| t.name() == s.to_lowercase())
            .ok_or_else(|| AqaError::Config(format!("unknown layer tag '{s}' (expected c1..c5)")))
    }
}

/// A captured intermediate activation, shaped `(N, C, T, H, W)`, tagged with
/// the stage it came from.
#[derive(Debug, Clone)]
pub struct FeatureMap<F: Scalar> {
    pub tag: LayerTag,
    pub data: Array5<F>,
}

fn check_clip_shape(context: &str, x: &Array5<impl Scalar>, want: [usize; 4]) -> Result<()> {
    let (n, c, t, h, w) = x.dim();
    if n == 0 || [c, t, h, w] != want {
        return Err(AqaError::Data(format!(
            "{context}: expected input (N, {}, {}, {}, {}), got {:?}",
            want[0],
            want[1],
            want[2],
            want[3],
            x.dim()
        )));
    }
    Ok(())
}

/// Channel widths of the five C3D stages and the expected clip resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct C3dTrunkConfig {
    pub channels: [usize; 5],
    pub hw: (usize, usize),
}

impl Default for C3dTrunkConfig {
    fn default() -> Self {
        C3dTrunkConfig {
            channels: [64, 128, 256, 512, 512],
            hw: C3D_HW,
        }
    }
}

impl C3dTrunkConfig {
    /// Spatial extent after the fifth pool: four plain halvings, then a
    /// padded halving. `(112, 112)` inputs land on `(4, 4)`.
    pub fn out_hw(&self) -> (usize, usize) {
        let trace = |mut e: usize| {
            for _ in 0..4 {
                e /= 2;
            }
            e / 2 + 1
        };
        (trace(self.hw.0), trace(self.hw.1))
    }
}

struct TrunkStage<F: Scalar> {
    convs: Vec<(String, Conv3d<F>)>,
    pool: MaxPool3d,
}

/// The C3D convolutional stack: five stages of 3×3×3 convolutions with ReLU,
/// each closed by a max-pool, ending at the fifth pooling stage. With the
/// standard widths, a `(3, 16, 112, 112)` clip comes out `(512, 1, 4, 4)`.
pub struct C3dTrunk<F: Scalar> {
    stages: Vec<TrunkStage<F>>,
    acts: Vec<Array5<F>>,
    config: C3dTrunkConfig,
}

impl<F: Scalar> C3dTrunk<F> {
    pub fn new(config: C3dTrunkConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3, c4, c5] = config.channels;
        let plan: [(&[(&str, usize, usize)], [usize; 3], [usize; 3]); 5] = [
            (&[("conv1", 3, c1)], [1, 2, 2], [0, 0, 0]),
            (&[("conv2", c1, c2)], [2, 2, 2], [0, 0, 0]),
            (&[("conv3a", c2, c3), ("conv3b", c3, c3)], [2, 2, 2], [0, 0, 0]),
            (&[("conv4a", c3, c4), ("conv4b", c4, c4)], [2, 2, 2], [0, 0, 0]),
            (&[("conv5a", c4, c5), ("conv5b", c5, c5)], [2, 2, 2], [0, 1, 1]),
        ];
        let stages = plan
            .into_iter()
            .map(|(convs, kernel, padding)| TrunkStage {
                convs: convs
                    .iter()
                    .map(|&(name, cin, cout)| {
                        (
                            name.to_string(),
                            Conv3d::new(cin, cout, [3, 3, 3], [1, 1, 1], rng),
                        )
                    })
                    .collect(),
                pool: MaxPool3d::new(kernel, padding),
            })
            .collect();
        C3dTrunk {
            stages,
            acts: Vec::new(),
            config,
        }
    }

    pub fn config(&self) -> &C3dTrunkConfig {
        &self.config
    }

    /// Flattened pool-5 feature length (channels × pooled spatial extent).
    pub fn feature_len(&self) -> usize {
        let (h, w) = self.config.out_hw();
        self.config.channels[4] * h * w
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        for stage in &self.stages {
            for (name, conv) in &stage.convs {
                out.extend(with_prefix(name, conv.params()));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for (name, conv) in &mut stage.convs {
                out.extend(with_prefix(name, conv.params_mut()));
            }
        }
        out
    }

    /// Runs the stack. In train mode every post-ReLU activation is cached
    /// for [`C3dTrunk::backward`].
    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        self.forward_impl(x, train, None)
    }

    /// Forward plus clones of the five stage activations: `c1`…`c4` are the
    /// pooled stage outputs, `c5` is the final convolution's ReLU output
    /// just before the fifth pool.
    pub fn forward_with_captures(
        &mut self,
        x: &Array5<F>,
        train: bool,
    ) -> Result<(Array5<F>, Vec<FeatureMap<F>>)> {
        let mut captures = Vec::with_capacity(5);
        let out = self.forward_impl(x, train, Some(&mut captures))?;
        Ok((out, captures))
    }

    fn forward_impl(
        &mut self,
        x: &Array5<F>,
        train: bool,
        mut captures: Option<&mut Vec<FeatureMap<F>>>,
    ) -> Result<Array5<F>> {
        let (h, w) = self.config.hw;
        check_clip_shape("c3d trunk", x, [3, CLIP_FRAMES, h, w])?;
        self.acts.clear();
        let last_stage = self.stages.len() - 1;
        let mut cur = x.clone();
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (_, conv) in &mut stage.convs {
                let mut y = conv.forward(&cur, train)?;
                relu_inplace(&mut y);
                if train {
                    self.acts.push(y.clone());
                }
                cur = y;
            }
            if si == last_stage {
                if let Some(captures) = captures.as_deref_mut() {
                    captures.push(FeatureMap {
                        tag: LayerTag::C5,
                        data: cur.clone(),
                    });
                }
            }
            cur = stage.pool.forward(&cur, train)?;
            if si < last_stage {
                if let Some(captures) = captures.as_deref_mut() {
                    captures.push(FeatureMap {
                        tag: LayerTag::ALL[si],
                        data: cur.clone(),
                    });
                }
            }
        }
        Ok(cur)
    }

    /// Backpropagates through the whole stack, accumulating parameter
    /// gradients. Requires a preceding train-mode forward.
    pub fn backward(&mut self, dy: &Array5<F>) {
        assert_eq!(
            self.acts.len(),
            self.stages.iter().map(|s| s.convs.len()).sum::<usize>(),
            "backward requires a train-mode forward"
        );
        let mut grad = dy.clone();
        let first_stage = 0;
        for (si, stage) in self.stages.iter_mut().enumerate().rev() {
            grad = stage.pool.backward(&grad);
            for (ci, (_, conv)) in stage.convs.iter_mut().enumerate().rev() {
                let act = self.acts.pop().expect("activation cache");
                relu_backward_inplace(&mut grad, &act);
                let need_dx = !(si == first_stage && ci == 0);
                match conv.backward(&grad, need_dx) {
                    Some(dx) => grad = dx,
                    None => break,
                }
            }
        }
    }
}

/// Width and spatial dilation schedule of the context-aggregation block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextNetConfig {
    pub channels: usize,
    pub dilations: Vec<usize>,
}

impl Default for ContextNetConfig {
    fn default() -> Self {
        ContextNetConfig {
            channels: 12,
            dilations: vec![1, 1, 2, 4, 8, 1],
        }
    }
}

/// A constant-width cascade of 3×3×3 convolutions whose spatial dilation
/// grows and then resets, aggregating context at multiple scales without
/// changing the feature-map shape. Dilation is spatial only; the temporal
/// extent is too short to dilate.
pub struct ContextNet<F: Scalar> {
    convs: Vec<Conv3d<F>>,
    acts: Vec<Array5<F>>,
    config: ContextNetConfig,
}

impl<F: Scalar> ContextNet<F> {
    pub fn new(config: ContextNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let convs = config
            .dilations
            .iter()
            .map(|&d| Conv3d::new(config.channels, config.channels, [3, 3, 3], [1, d, d], rng))
            .collect();
        ContextNet {
            convs,
            acts: Vec::new(),
            config,
        }
    }

    pub fn config(&self) -> &ContextNetConfig {
        &self.config
    }

    /// Smallest spatial extent the dilation schedule can consume: the widest
    /// layer spans `2·max_dilation + 1` pixels.
    pub fn min_spatial_extent(&self) -> usize {
        2 * self.config.dilations.iter().copied().max().unwrap_or(1) + 1
    }

    /// Spatial receptive field of the full cascade: each layer adds
    /// `2·dilation`.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.config.dilations.iter().sum::<usize>()
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.extend(with_prefix(&format!("ctx{i}"), conv.params()));
        }
        out
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("ctx{i}"), conv.params_mut()));
        }
        out
    }

    /// Shape-preserving forward with ReLU between layers (none after the
    /// last).
    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let (_, c, _, h, w) = x.dim();
        if c != self.config.channels {
            return Err(AqaError::Data(format!(
                "context net: expected {} channels, got {c}",
                self.config.channels
            )));
        }
        let min = self.min_spatial_extent();
        if h < min || w < min {
            return Err(AqaError::Data(format!(
                "context net: spatial extent {h}×{w} below the {min}×{min} minimum \
                 required by the dilation schedule"
            )));
        }
        self.acts.clear();
        let last = self.convs.len() - 1;
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            let mut y = conv.forward(&cur, train)?;
            if i < last {
                relu_inplace(&mut y);
                if train {
                    self.acts.push(y.clone());
                }
            }
            cur = y;
        }
        Ok(cur)
    }

    /// Backward through the cascade, returning the input gradient.
    pub fn backward(&mut self, dy: &Array5<F>) -> Array5<F> {
        let last = self.convs.len() - 1;
        let mut grad = dy.clone();
        for (i, conv) in self.convs.iter_mut().enumerate().rev() {
            if i < last {
                let act = self.acts.pop().expect("activation cache");
                relu_backward_inplace(&mut grad, &act);
            }
            grad = conv.backward(&grad, true).expect("dx requested");
        }
        grad
    }
}

/// Channel widths of the four multiscale-trunk stages, its dropout rate,
/// and the expected input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MscadcTrunkConfig {
    pub channels: [usize; 4],
    pub dropout: f64,
    pub hw: (usize, usize),
}

impl Default for MscadcTrunkConfig {
    fn default() -> Self {
        MscadcTrunkConfig {
            channels: [32, 64, 128, 256],
            dropout: 0.5,
            hw: MSCADC_HW,
        }
    }
}

impl MscadcTrunkConfig {
    /// Spatial extent after the three interleaved pools; `(180, 180)` inputs
    /// land on `(22, 22)`.
    pub fn out_hw(&self) -> (usize, usize) {
        let trace = |mut e: usize| {
            for _ in 0..3 {
                e /= 2;
            }
            e
        };
        (trace(self.hw.0), trace(self.hw.1))
    }

    /// Temporal extent after the pools (16-frame input assumed).
    pub fn out_t(&self) -> usize {
        CLIP_FRAMES / 4
    }
}

struct ConvBn<F: Scalar> {
    name: String,
    conv: Conv3d<F>,
    bn: BatchNorm3d<F>,
}

/// The multiscale dilated trunk: batch-normalized 3×3×3 convolutions with
/// three interleaved max-pools, topped by two spatially dilated layers and
/// dropout. A `(3, 16, 180, 180)` input leaves as `(256, 4, 22, 22)` at the
/// standard widths.
pub struct MscadcTrunk<F: Scalar> {
    layers: Vec<ConvBn<F>>,
    pools: Vec<MaxPool3d>,
    dropout: Dropout<F>,
    acts: Vec<Array5<F>>,
    config: MscadcTrunkConfig,
}

/// Pool positions: a pool runs after layers 0, 1, and 3.
const MSCADC_POOL_AFTER: [usize; 3] = [0, 1, 3];
/// Capture tags: `c1`..`c3` after each pool, `c4` after the plain 4th-stage
/// pair, `c5` after the dilated pair.
const MSCADC_CAPTURE_AFTER: [usize; 2] = [5, 7];

impl<F: Scalar> MscadcTrunk<F> {
    pub fn new(config: MscadcTrunkConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3, c4] = config.channels;
        let plan: [(&str, usize, usize, usize); 8] = [
            ("conv1", 3, c1, 1),
            ("conv2", c1, c2, 1),
            ("conv3a", c2, c3, 1),
            ("conv3b", c3, c3, 1),
            ("conv4a", c3, c4, 1),
            ("conv4b", c4, c4, 1),
            ("conv5a", c4, c4, 2),
            ("conv5b", c4, c4, 2),
        ];
        let layers = plan
            .into_iter()
            .map(|(name, cin, cout, dilation)| ConvBn {
                name: name.to_string(),
                conv: Conv3d::new(cin, cout, [3, 3, 3], [1, dilation, dilation], rng),
                bn: BatchNorm3d::new(cout),
            })
            .collect();
        let pools = vec![
            MaxPool3d::new([1, 2, 2], [0, 0, 0]),
            MaxPool3d::new([2, 2, 2], [0, 0, 0]),
            MaxPool3d::new([2, 2, 2], [0, 0, 0]),
        ];
        MscadcTrunk {
            layers,
            pools,
            dropout: Dropout::new(config.dropout),
            acts: Vec::new(),
            config,
        }
    }

    pub fn config(&self) -> &MscadcTrunkConfig {
        &self.config
    }

    pub fn out_channels(&self) -> usize {
        self.config.channels[3]
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(with_prefix(&layer.name, layer.conv.params()));
            out.extend(with_prefix(
                &layer.name.replace("conv", "bn"),
                layer.bn.params(),
            ));
        }
        out
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            let bn_name = layer.name.replace("conv", "bn");
            out.extend(with_prefix(&layer.name, layer.conv.params_mut()));
            out.extend(with_prefix(&bn_name, layer.bn.params_mut()));
        }
        out
    }

    /// Named batch-norm running statistics, for checkpointing.
    pub fn state(&self) -> Vec<(String, ndarray::Array1<F>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let bn_name = layer.name.replace("conv", "bn");
            for (name, tensor) in layer.bn.state() {
                out.push((format!("{bn_name}.{name}"), tensor));
            }
        }
        out
    }

    /// Restores batch-norm running statistics saved by [`MscadcTrunk::state`].
    pub fn set_state(&mut self, name: &str, tensor: ndarray::Array1<F>) -> Result<()> {
        for layer in &mut self.layers {
            let bn_name = layer.name.replace("conv", "bn");
            let slot = if name == format!("{bn_name}.running_mean") {
                Some(&mut layer.bn.running_mean)
            } else if name == format!("{bn_name}.running_var") {
                Some(&mut layer.bn.running_var)
            } else {
                None
            };
            if let Some(slot) = slot {
                if slot.len() != tensor.len() {
                    return Err(AqaError::Data(format!(
                        "running-stat length mismatch for {name}: {} vs {}",
                        slot.len(),
                        tensor.len()
                    )));
                }
                *slot = tensor;
                return Ok(());
            }
        }
        Err(AqaError::Data(format!("unknown running-stat name {name}")))
    }

    pub fn forward(
        &mut self,
        x: &Array5<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array5<F>> {
        Ok(self.forward_impl(x, train, rng, None)?)
    }

    /// Forward plus the five tagged stage activations: `c1`–`c3` after each
    /// pool, `c4` after the plain fourth-stage pair, `c5` after the dilated
    /// pair (before dropout).
    pub fn forward_with_captures(
        &mut self,
        x: &Array5<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array5<F>, Vec<FeatureMap<F>>)> {
        let mut captures = Vec::with_capacity(5);
        let out = self.forward_impl(x, train, rng, Some(&mut captures))?;
        Ok((out, captures))
    }

    fn forward_impl(
        &mut self,
        x: &Array5<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
        mut captures: Option<&mut Vec<FeatureMap<F>>>,
    ) -> Result<Array5<F>> {
        let (h, w) = self.config.hw;
        check_clip_shape("mscadc trunk", x, [3, CLIP_FRAMES, h, w])?;
        self.acts.clear();
        let mut cur = x.clone();
        let mut tag_iter = LayerTag::ALL.into_iter();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let y = layer.conv.forward(&cur, train)?;
            let mut y = layer.bn.forward(&y, train);
            relu_inplace(&mut y);
            if train {
                self.acts.push(y.clone());
            }
            cur = y;
            if let Some(pi) = MSCADC_POOL_AFTER.iter().position(|&p| p == li) {
                cur = self.pools[pi].forward(&cur, train)?;
            }
            let capture_here = MSCADC_POOL_AFTER.contains(&li) || MSCADC_CAPTURE_AFTER.contains(&li);
            if capture_here {
                if let Some(captures) = captures.as_deref_mut() {
                    let tag = tag_iter.next().expect("five capture points");
                    captures.push(FeatureMap {
                        tag,
                        data: cur.clone(),
                    });
                }
            }
        }
        Ok(self.dropout.forward(&cur, train, rng))
    }

    /// Backward through dropout, the conv/BN/ReLU stack, and the pools.
    pub fn backward(&mut self, dy: &Array5<F>) {
        assert_eq!(
            self.acts.len(),
            self.layers.len(),
            "backward requires a train-mode forward"
        );
        let mut grad = self.dropout.backward(dy);
        for (li, layer) in self.layers.iter_mut().enumerate().rev() {
            if let Some(pi) = MSCADC_POOL_AFTER.iter().position(|&p| p == li) {
                grad = self.pools[pi].backward(&grad);
            }
            let act = self.acts.pop().expect("activation cache");
            relu_backward_inplace(&mut grad, &act);
            grad = layer.bn.backward(&grad);
            match layer.conv.backward(&grad, li > 0) {
                Some(dx) => grad = dx,
                None => break,
            }
        }
    }
}
