//! Full multitask networks: clip-averaged C3D and the multiscale dilated
//! variant, each with score, classification, and captioning heads.
//!
//! The clip-averaged model splits a video into 16-frame clips, pushes each
//! through the shared C3D trunk, and averages the flattened pool-5 features
//! before two fully connected layers feed the score and classification
//! heads; the captioner consumes the per-clip features as a sequence. The
//! multiscale model runs its trunk once per video and gives every active
//! task an independent head (1×1×1 projection → context aggregation →
//! pool → conv/BN); the captioner there reads the head feature map as a
//! temporal sequence.
//!
//! Training memory for the clip-averaged model stays flat via recompute:
//! the forward pass runs the trunk cache-free per clip, and the backward
//! pass re-runs each clip with caches enabled and immediately consumes
//! them. The trunk has no dropout or batch norm, so the replay is
//! bit-identical to the original pass.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Array5, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use aqa_nn::checkpoint::{assign_matching, Checkpoint, LoadReport};
use aqa_nn::ops::{relu_backward_inplace, relu_inplace};
use aqa_nn::param::{with_prefix, NamedParams, NamedParamsMut};
use aqa_nn::pool::{global_avg_pool, global_avg_pool_backward};
use aqa_nn::{BatchNorm3d, Conv3d, Dropout, Linear, MaxPool3d, Scalar};

use crate::backbone::{
    C3dTrunk, C3dTrunkConfig, ContextNet, ContextNetConfig, LayerTag, MscadcTrunk,
    MscadcTrunkConfig, CLIP_FRAMES, C3D_HW, MSCADC_HW,
};
use crate::captioning::{Captioner, CaptionerConfig};
use crate::data::{CaptionTokens, DiveLabelSchema};
use crate::error::AqaError;
use crate::Result;

/// Which task heads are active. Score regression is always on; the other two
/// drive the four ablation arms (score only, +classification, +captioning,
/// all three).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub classification: bool,
    pub captioning: bool,
}

impl TaskConfig {
    pub fn all() -> Self {
        TaskConfig {
            classification: true,
            captioning: true,
        }
    }

    pub fn aqa_only() -> Self {
        TaskConfig {
            classification: false,
            captioning: false,
        }
    }

    pub fn with_classification() -> Self {
        TaskConfig {
            classification: true,
            captioning: false,
        }
    }

    pub fn with_captioning() -> Self {
        TaskConfig {
            classification: false,
            captioning: true,
        }
    }

    /// The standard ablation arms in reporting order, single-task first.
    pub fn ablation_arms() -> [(&'static str, TaskConfig); 4] {
        [
            ("aqa", TaskConfig::aqa_only()),
            ("aqa+cls", TaskConfig::with_classification()),
            ("aqa+cap", TaskConfig::with_captioning()),
            ("aqa+cls+cap", TaskConfig::all()),
        ]
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::all()
    }
}

/// The two backbone families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    C3dAvg,
    Mscadc,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::C3dAvg => "c3d_avg",
            Architecture::Mscadc => "mscadc",
        }
    }

    pub fn parse(s: &str) -> Result<Architecture> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "c3d_avg" | "c3davg" => Ok(Architecture::C3dAvg),
            "mscadc" => Ok(Architecture::Mscadc),
            other => Err(AqaError::Config(format!(
                "unknown architecture '{other}' (expected c3d_avg or mscadc)"
            ))),
        }
    }
}

/// Everything needed to build a model deterministically. The serialized
/// form doubles as the checkpoint fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub schema: DiveLabelSchema,
    pub vocab: usize,
    /// Total input frames (a multiple of 16 for the clip-averaged model,
    /// exactly 16 for the multiscale one).
    pub frames: usize,
    pub frame_hw: (usize, usize),
    pub c3d_channels: [usize; 5],
    pub fc_dim: usize,
    /// Share the fully connected stack between the score and classification
    /// heads (the default), or give each its own.
    pub shared_fc: bool,
    pub fc_dropout: f64,
    pub mscadc_channels: [usize; 4],
    pub trunk_dropout: f64,
    pub head_channels: usize,
    pub ctx_dilations: Vec<usize>,
    pub caption_hidden: usize,
    pub caption_embed: usize,
    pub caption_dropout: f64,
    pub max_decode_steps: usize,
}

impl ModelConfig {
    /// Publication-scale defaults for the given backbone.
    pub fn full(architecture: Architecture, vocab: usize) -> Self {
        let (frames, frame_hw) = match architecture {
            Architecture::C3dAvg => (96, C3D_HW),
            Architecture::Mscadc => (CLIP_FRAMES, MSCADC_HW),
        };
        ModelConfig {
            architecture,
            schema: DiveLabelSchema::default(),
            vocab,
            frames,
            frame_hw,
            c3d_channels: [64, 128, 256, 512, 512],
            fc_dim: 4096,
            shared_fc: true,
            fc_dropout: 0.5,
            mscadc_channels: [32, 64, 128, 256],
            trunk_dropout: 0.5,
            head_channels: 12,
            ctx_dilations: vec![1, 1, 2, 4, 8, 1],
            caption_hidden: 512,
            caption_embed: 512,
            caption_dropout: 0.2,
            max_decode_steps: 100,
        }
    }

    /// A reduced-width, reduced-resolution, regularization-free preset for
    /// fast deterministic tests and smoke runs.
    pub fn tiny(architecture: Architecture, vocab: usize) -> Self {
        let mut config = ModelConfig::full(architecture, vocab);
        let (frames, frame_hw) = match architecture {
            Architecture::C3dAvg => (32, (48, 48)),
            Architecture::Mscadc => (CLIP_FRAMES, (64, 64)),
        };
        config.frames = frames;
        config.frame_hw = frame_hw;
        config.c3d_channels = [4, 8, 12, 12, 12];
        config.fc_dim = 32;
        config.fc_dropout = 0.0;
        config.mscadc_channels = [4, 6, 8, 12];
        config.trunk_dropout = 0.0;
        config.head_channels = 4;
        config.ctx_dilations = vec![1, 1, 2, 1];
        config.caption_hidden = 32;
        config.caption_embed = 16;
        config.caption_dropout = 0.0;
        config
    }

    pub fn validate(&self) -> Result<()> {
        match self.architecture {
            Architecture::C3dAvg => {
                if self.frames == 0 || self.frames % CLIP_FRAMES != 0 {
                    return Err(AqaError::Config(format!(
                        "clip-averaged input needs a multiple of {CLIP_FRAMES} frames, got {}",
                        self.frames
                    )));
                }
                if self.frame_hw.0 < 16 || self.frame_hw.1 < 16 {
                    return Err(AqaError::Config(format!(
                        "c3d input must be at least 16×16, got {:?}",
                        self.frame_hw
                    )));
                }
            }
            Architecture::Mscadc => {
                if self.frames != CLIP_FRAMES {
                    return Err(AqaError::Config(format!(
                        "multiscale input is a single {CLIP_FRAMES}-frame clip, got {} frames",
                        self.frames
                    )));
                }
                let (oh, ow) = self.mscadc_config().out_hw();
                let need = 2 * self.ctx_dilations.iter().copied().max().unwrap_or(1) + 1;
                if oh < need || ow < need {
                    return Err(AqaError::Config(format!(
                        "trunk output {oh}×{ow} is below the {need}×{need} minimum required \
                         by the context dilation schedule; raise the input resolution or \
                         shrink the dilations"
                    )));
                }
            }
        }
        if self.fc_dim == 0 || self.head_channels == 0 {
            return Err(AqaError::Config("head widths must be positive".into()));
        }
        self.captioner_config().validate()?;
        Ok(())
    }

    /// Number of 16-frame clips per video.
    pub fn clips(&self) -> usize {
        self.frames / CLIP_FRAMES
    }

    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("model config serializes")
    }

    fn c3d_config(&self) -> C3dTrunkConfig {
        C3dTrunkConfig {
            channels: self.c3d_channels,
            hw: self.frame_hw,
        }
    }

    fn mscadc_config(&self) -> MscadcTrunkConfig {
        MscadcTrunkConfig {
            channels: self.mscadc_channels,
            dropout: self.trunk_dropout,
            hw: self.frame_hw,
        }
    }

    fn ctx_config(&self) -> ContextNetConfig {
        ContextNetConfig {
            channels: self.head_channels,
            dilations: self.ctx_dilations.clone(),
        }
    }

    /// The captioner sized for this backbone: the clip-averaged model feeds
    /// it per-clip pool-5 features, the multiscale one the flattened head
    /// map per temporal step.
    pub fn captioner_config(&self) -> CaptionerConfig {
        let feature_dim = match self.architecture {
            Architecture::C3dAvg => {
                let (h, w) = self.c3d_config().out_hw();
                self.c3d_channels[4] * h * w
            }
            Architecture::Mscadc => {
                let (oh, ow) = self.mscadc_config().out_hw();
                self.head_channels * (oh / 2) * (ow / 2)
            }
        };
        CaptionerConfig {
            feature_dim,
            hidden: self.caption_hidden,
            embed: self.caption_embed,
            vocab: self.vocab,
            dropout: self.caption_dropout,
            max_decode_steps: self.max_decode_steps,
        }
    }
}

/// Per-task model outputs, converted to `f64` for the losses and metrics.
///
/// `class_logits` holds five `(N, k)` matrices in sub-task order;
/// `caption_logits` holds one `(steps, vocab)` matrix per sample and is
/// present whenever gold captions were supplied.
#[derive(Debug, Clone)]
pub struct MtlOutput {
    pub scores: Array1<f64>,
    pub class_logits: Option<Vec<Array2<f64>>>,
    pub caption_logits: Option<Vec<Array2<f64>>>,
}

/// Internal tensor shapes from one diagnostic forward, surfaced so the
/// documented shape contract stays checkable from outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeTrace {
    /// Trunk output: the per-clip pool-5 volume for the clip-averaged model,
    /// the dilated body output for the multiscale one.
    pub body: [usize; 5],
    /// Task-stem feature map (multiscale model only).
    pub head: Option<[usize; 5]>,
}

fn dims5<F: Scalar>(x: &Array5<F>) -> [usize; 5] {
    let d = x.dim();
    [d.0, d.1, d.2, d.3, d.4]
}

/// Upstream gradients mirroring [`MtlOutput`]; `None` skips that branch.
#[derive(Debug, Clone)]
pub struct MtlGrads {
    pub scores: Array1<f64>,
    pub class_logits: Option<Vec<Array2<f64>>>,
    pub caption_logits: Option<Vec<Array2<f64>>>,
}

fn to_f64_2<F: Scalar>(x: &Array2<F>) -> Array2<f64> {
    x.mapv(|v| v.to_f64())
}

fn from_f64_1<F: Scalar>(x: &Array1<f64>) -> Array1<F> {
    x.mapv(F::from_f64)
}

fn from_f64_2<F: Scalar>(x: &Array2<f64>) -> Array2<F> {
    x.mapv(F::from_f64)
}

/// Two fully connected layers with ReLU and dropout, feeding the
/// clip-averaged model's scalar heads.
struct FcStack<F: Scalar> {
    fc6: Linear<F>,
    fc7: Linear<F>,
    drop6: Dropout<F>,
    drop7: Dropout<F>,
    act6: Option<Array2<F>>,
    act7: Option<Array2<F>>,
}

impl<F: Scalar> FcStack<F> {
    fn new(input: usize, dim: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        FcStack {
            fc6: Linear::new(input, dim, rng),
            fc7: Linear::new(dim, dim, rng),
            drop6: Dropout::new(dropout),
            drop7: Dropout::new(dropout),
            act6: None,
            act7: None,
        }
    }

    fn forward(&mut self, x: &Array2<F>, train: bool, rng: &mut ChaCha8Rng) -> Result<Array2<F>> {
        let mut a = self.fc6.forward(x, train)?;
        relu_inplace(&mut a);
        if train {
            self.act6 = Some(a.clone());
        }
        let a = self.drop6.forward(&a, train, rng);
        let mut b = self.fc7.forward(&a, train)?;
        relu_inplace(&mut b);
        if train {
            self.act7 = Some(b.clone());
        }
        Ok(self.drop7.forward(&b, train, rng))
    }

    fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let mut g = self.drop7.backward(dy);
        relu_backward_inplace(&mut g, &self.act7.take().expect("train-mode forward"));
        let g = self.fc7.backward(&g);
        let mut g = self.drop6.backward(&g);
        relu_backward_inplace(&mut g, &self.act6.take().expect("train-mode forward"));
        self.fc6.backward(&g)
    }

    fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("fc6", self.fc6.params()));
        out.extend(with_prefix("fc7", self.fc7.params()));
        out
    }

    fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("fc6", self.fc6.params_mut()));
        out.extend(with_prefix("fc7", self.fc7.params_mut()));
        out
    }
}

/// C3D trunk over 16-frame clips with feature averaging before the heads.
pub struct C3dAvgMtl<F: Scalar> {
    trunk: C3dTrunk<F>,
    stacks: Vec<(String, FcStack<F>)>,
    score_head: Linear<F>,
    class_heads: Vec<Linear<F>>,
    captioner: Captioner<F>,
    config: ModelConfig,
}

impl<F: Scalar> C3dAvgMtl<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let trunk = C3dTrunk::new(config.c3d_config(), rng);
        let feat = trunk.feature_len();
        let stacks = if config.shared_fc {
            vec![(
                "fc".to_string(),
                FcStack::new(feat, config.fc_dim, config.fc_dropout, rng),
            )]
        } else {
            vec![
                (
                    "fc_aqa".to_string(),
                    FcStack::new(feat, config.fc_dim, config.fc_dropout, rng),
                ),
                (
                    "fc_cls".to_string(),
                    FcStack::new(feat, config.fc_dim, config.fc_dropout, rng),
                ),
            ]
        };
        let score_head = Linear::new(config.fc_dim, 1, rng);
        let class_heads = config
            .schema
            .cardinalities()
            .iter()
            .map(|&k| Linear::new(config.fc_dim, k, rng))
            .collect();
        let captioner = Captioner::new(config.captioner_config(), rng)?;
        Ok(C3dAvgMtl {
            trunk,
            stacks,
            score_head,
            class_heads,
            captioner,
            config,
        })
    }

    fn check_video(&self, video: &Array5<F>) -> Result<(usize, usize)> {
        let (n, c, t, h, w) = video.dim();
        let want = (3, self.config.frames, self.config.frame_hw.0, self.config.frame_hw.1);
        if n == 0 || (c, t, h, w) != want {
            return Err(AqaError::Data(format!(
                "clip-averaged model expects videos shaped (N, {}, {}, {}, {}), got {:?}",
                want.0,
                want.1,
                want.2,
                want.3,
                video.dim()
            )));
        }
        Ok((n, self.config.clips()))
    }

    /// Per-clip pool-5 features, `(N, clips, feature_len)`. The trunk runs
    /// cache-free here; training gradients recompute per clip in
    /// [`C3dAvgMtl::backward`].
    fn clip_features(&mut self, video: &Array5<F>) -> Result<Array3<F>> {
        let (n, clips) = self.check_video(video)?;
        let feat = self.trunk.feature_len();
        let mut out = Array3::zeros((n, clips, feat));
        for k in 0..clips {
            let clip = video
                .slice(s![.., .., k * CLIP_FRAMES..(k + 1) * CLIP_FRAMES, .., ..])
                .to_owned();
            let pooled = self.trunk.forward(&clip, false)?;
            let flat = pooled
                .into_shape_with_order((n, feat))
                .expect("pooled features are contiguous");
            out.slice_mut(s![.., k, ..]).assign(&flat);
        }
        Ok(out)
    }

    /// Average clip features so that identical clips average to exactly the
    /// per-clip value: `x₀ + Σ(xₖ − x₀)/clips` keeps the deltas at literal
    /// zero in that case, immune to rounding.
    fn average(feats: &Array3<F>) -> Array2<F> {
        let (n, clips, dim) = feats.dim();
        let first = feats.index_axis(Axis(1), 0).to_owned();
        let mut delta = Array2::<F>::zeros((n, dim));
        for k in 1..clips {
            delta = delta + &(&feats.index_axis(Axis(1), k) - &first);
        }
        let inv = F::from_f64(1.0 / clips as f64);
        first + &delta.mapv(|v| v * inv)
    }

    pub fn forward(
        &mut self,
        video: &Array5<F>,
        captions: Option<&[CaptionTokens]>,
        tasks: TaskConfig,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<MtlOutput> {
        let feats = self.clip_features(video)?;
        let avg = Self::average(&feats);

        let z_aqa = self.stacks[0].1.forward(&avg, train, rng)?;
        let score = self.score_head.forward(&z_aqa, train)?;
        let scores = score.index_axis(Axis(1), 0).mapv(|v| v.to_f64());

        let class_logits = if tasks.classification {
            let z_cls = if self.config.shared_fc {
                z_aqa
            } else {
                self.stacks[1].1.forward(&avg, train, rng)?
            };
            let mut logits = Vec::with_capacity(self.class_heads.len());
            for head in &mut self.class_heads {
                logits.push(to_f64_2(&head.forward(&z_cls, train)?));
            }
            Some(logits)
        } else {
            None
        };

        let caption_logits = match (tasks.captioning, captions) {
            (true, Some(captions)) => {
                let states = self.captioner.encode(&feats, train, rng)?;
                let logits = self
                    .captioner
                    .decode_teacher_forced(&states, captions, train, rng)?;
                Some(logits.iter().map(to_f64_2).collect())
            }
            (true, None) if train => {
                return Err(AqaError::Data(
                    "captioning is enabled but no gold captions were supplied".into(),
                ))
            }
            _ => None,
        };

        Ok(MtlOutput {
            scores,
            class_logits,
            caption_logits,
        })
    }

    /// Backpropagates the supplied head gradients, re-running the trunk per
    /// clip with caches enabled. Requires the same `video` as the preceding
    /// train-mode forward.
    pub fn backward(&mut self, video: &Array5<F>, grads: &MtlGrads) -> Result<()> {
        let (n, clips) = self.check_video(video)?;
        let feat = self.trunk.feature_len();

        let d_score = from_f64_1::<F>(&grads.scores)
            .insert_axis(Axis(1))
            .to_owned();
        let dz_aqa = self.score_head.backward(&d_score);

        let dz_cls = match &grads.class_logits {
            Some(per_task) => {
                let mut acc = Array2::<F>::zeros(dz_aqa.dim());
                for (head, g) in self.class_heads.iter_mut().zip(per_task) {
                    acc = acc + head.backward(&from_f64_2::<F>(g));
                }
                Some(acc)
            }
            None => None,
        };

        let d_avg = if self.config.shared_fc {
            let dz = match dz_cls {
                Some(dz_cls) => dz_aqa + &dz_cls,
                None => dz_aqa,
            };
            self.stacks[0].1.backward(&dz)
        } else {
            let mut d = self.stacks[0].1.backward(&dz_aqa);
            if let Some(dz_cls) = dz_cls {
                d = d + self.stacks[1].1.backward(&dz_cls);
            }
            d
        };

        let mut d_feats = Array3::<F>::zeros((n, clips, feat));
        if let Some(caption_grads) = &grads.caption_logits {
            let per_sample: Vec<Array2<F>> = caption_grads.iter().map(from_f64_2).collect();
            let d_states = self.captioner.backward_decode(&per_sample);
            d_feats = self.captioner.backward_encode(&d_states);
        }

        let inv = F::from_f64(1.0 / clips as f64);
        let d_avg_share = d_avg.mapv(|v| v * inv);
        let (c5, (oh, ow)) = (self.config.c3d_channels[4], self.trunk.config().out_hw());
        for k in 0..clips {
            let d_clip = (&d_feats.index_axis(Axis(1), k) + &d_avg_share)
                .into_shape_with_order((n, c5, 1, oh, ow))
                .expect("gradient is contiguous");
            let clip = video
                .slice(s![.., .., k * CLIP_FRAMES..(k + 1) * CLIP_FRAMES, .., ..])
                .to_owned();
            self.trunk.forward(&clip, true)?;
            self.trunk.backward(&d_clip);
        }
        Ok(())
    }

    /// Global-average-pooled trunk activations for every stage, `(N, C)` per
    /// layer, averaged over clips. The frozen-feature input of the linear
    /// probe.
    pub fn pooled_captures(&mut self, video: &Array5<F>) -> Result<Vec<(LayerTag, Array2<f64>)>> {
        let (_, clips) = self.check_video(video)?;
        let mut pooled: Vec<(LayerTag, Array2<f64>)> = Vec::new();
        for k in 0..clips {
            let clip = video
                .slice(s![.., .., k * CLIP_FRAMES..(k + 1) * CLIP_FRAMES, .., ..])
                .to_owned();
            let (_, captures) = self.trunk.forward_with_captures(&clip, false)?;
            for (i, map) in captures.into_iter().enumerate() {
                let gap = global_avg_pool(&map.data).mapv(|v| v.to_f64());
                if k == 0 {
                    pooled.push((map.tag, gap));
                } else {
                    pooled[i].1 += &gap;
                }
            }
        }
        for (_, m) in &mut pooled {
            *m /= clips as f64;
        }
        Ok(pooled)
    }

    /// Shapes from one eval-mode diagnostic forward of the first clip.
    pub fn shape_trace(&mut self, video: &Array5<F>) -> Result<ShapeTrace> {
        self.check_video(video)?;
        let clip = video.slice(s![.., .., 0..CLIP_FRAMES, .., ..]).to_owned();
        let body = self.trunk.forward(&clip, false)?;
        Ok(ShapeTrace {
            body: dims5(&body),
            head: None,
        })
    }

    /// Greedy (or beam) captions for each sample, decoding in eval mode.
    pub fn generate_captions(
        &mut self,
        video: &Array5<F>,
        beam: Option<usize>,
    ) -> Result<Vec<CaptionTokens>> {
        let feats = self.clip_features(video)?;
        let mut cold = ChaCha8Rng::seed_from_u64(0);
        let states = self.captioner.encode(&feats, false, &mut cold)?;
        let mut out = Vec::with_capacity(states.nrows());
        for i in 0..states.nrows() {
            out.push(match beam {
                Some(width) => self.captioner.decode_beam(states.row(i), width)?,
                None => self.captioner.decode_greedy(states.row(i))?,
            });
        }
        Ok(out)
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("trunk", self.trunk.params()));
        for (name, stack) in &self.stacks {
            out.extend(with_prefix(name, stack.params()));
        }
        out.extend(with_prefix("score", self.score_head.params()));
        for (i, head) in self.class_heads.iter().enumerate() {
            out.extend(with_prefix(&format!("class{i}"), head.params()));
        }
        out.extend(with_prefix("captioner", self.captioner.params()));
        out
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("trunk", self.trunk.params_mut()));
        for (name, stack) in &mut self.stacks {
            out.extend(with_prefix(name, stack.params_mut()));
        }
        out.extend(with_prefix("score", self.score_head.params_mut()));
        for (i, head) in self.class_heads.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("class{i}"), head.params_mut()));
        }
        out.extend(with_prefix("captioner", self.captioner.params_mut()));
        out
    }
}

/// Shared front of each multiscale task head: 1×1×1 projection, context
/// aggregation, a pool, and a batch-normalized convolution.
struct HeadStem<F: Scalar> {
    proj: Conv3d<F>,
    ctx: ContextNet<F>,
    pool: MaxPool3d,
    conv: Conv3d<F>,
    bn: BatchNorm3d<F>,
    act: Option<Array5<F>>,
}

impl<F: Scalar> HeadStem<F> {
    fn new(in_channels: usize, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let hc = config.head_channels;
        HeadStem {
            proj: Conv3d::new(in_channels, hc, [1, 1, 1], [1, 1, 1], rng),
            ctx: ContextNet::new(config.ctx_config(), rng),
            pool: MaxPool3d::new([2, 2, 2], [0, 0, 0]),
            conv: Conv3d::new(hc, hc, [3, 3, 3], [1, 1, 1], rng),
            bn: BatchNorm3d::new(hc),
            act: None,
        }
    }

    fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let y = self.proj.forward(x, train)?;
        let y = self.ctx.forward(&y, train)?;
        let y = self.pool.forward(&y, train)?;
        let y = self.conv.forward(&y, train)?;
        let mut y = self.bn.forward(&y, train);
        relu_inplace(&mut y);
        if train {
            self.act = Some(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Array5<F>) -> Array5<F> {
        let mut g = dy.clone();
        relu_backward_inplace(&mut g, &self.act.take().expect("train-mode forward"));
        let g = self.bn.backward(&g);
        let g = self.conv.backward(&g, true).expect("dx requested");
        let g = self.pool.backward(&g);
        let g = self.ctx.backward(&g);
        self.proj.backward(&g, true).expect("dx requested")
    }

    fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("proj", self.proj.params()));
        out.extend(self.ctx.params());
        out.extend(with_prefix("conv", self.conv.params()));
        out.extend(with_prefix("bn", self.bn.params()));
        out
    }

    fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("proj", self.proj.params_mut()));
        out.extend(self.ctx.params_mut());
        out.extend(with_prefix("conv", self.conv.params_mut()));
        out.extend(with_prefix("bn", self.bn.params_mut()));
        out
    }

    fn state(&self) -> Vec<(String, Array1<F>)> {
        self.bn
            .state()
            .into_iter()
            .map(|(name, t)| (format!("bn.{name}"), t))
            .collect()
    }

    fn set_state(&mut self, name: &str, tensor: Array1<F>) -> Result<()> {
        let slot = match name {
            "bn.running_mean" => &mut self.bn.running_mean,
            "bn.running_var" => &mut self.bn.running_var,
            _ => return Err(AqaError::Data(format!("unknown running-stat name {name}"))),
        };
        if slot.len() != tensor.len() {
            return Err(AqaError::Data(format!(
                "running-stat length mismatch for {name}"
            )));
        }
        *slot = tensor;
        Ok(())
    }
}

/// Multiscale dilated trunk with one independent head stem per task.
pub struct MscadcMtl<F: Scalar> {
    trunk: MscadcTrunk<F>,
    aqa_stem: HeadStem<F>,
    aqa_out: Conv3d<F>,
    cls_stem: HeadStem<F>,
    cls_out: Vec<Conv3d<F>>,
    cap_stem: HeadStem<F>,
    captioner: Captioner<F>,
    config: ModelConfig,
}

impl<F: Scalar> MscadcMtl<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let trunk = MscadcTrunk::new(config.mscadc_config(), rng);
        let body_ch = trunk.out_channels();
        let hc = config.head_channels;
        let aqa_stem = HeadStem::new(body_ch, &config, rng);
        let aqa_out = Conv3d::new(hc, 1, [3, 3, 3], [1, 1, 1], rng);
        let cls_stem = HeadStem::new(body_ch, &config, rng);
        let cls_out = config
            .schema
            .cardinalities()
            .iter()
            .map(|&k| Conv3d::new(hc, k, [3, 3, 3], [1, 1, 1], rng))
            .collect();
        let cap_stem = HeadStem::new(body_ch, &config, rng);
        let captioner = Captioner::new(config.captioner_config(), rng)?;
        Ok(MscadcMtl {
            trunk,
            aqa_stem,
            aqa_out,
            cls_stem,
            cls_out,
            cap_stem,
            captioner,
            config,
        })
    }

    fn check_video(&self, video: &Array5<F>) -> Result<usize> {
        let (n, c, t, h, w) = video.dim();
        let want = (3, CLIP_FRAMES, self.config.frame_hw.0, self.config.frame_hw.1);
        if n == 0 || (c, t, h, w) != want {
            return Err(AqaError::Data(format!(
                "multiscale model expects videos shaped (N, {}, {}, {}, {}), got {:?}",
                want.0,
                want.1,
                want.2,
                want.3,
                video.dim()
            )));
        }
        Ok(n)
    }

    /// Head feature-map extents: stem output `(t, h, w)` after its pool.
    fn stem_dims(&self) -> (usize, usize, usize) {
        let (oh, ow) = self.trunk.config().out_hw();
        (self.trunk.config().out_t() / 2, oh / 2, ow / 2)
    }

    /// Reads the captioning stem output as a per-frame-group sequence:
    /// step `t` is the flattened `(channels, h, w)` slice.
    fn map_to_sequence(&self, map: &Array5<F>) -> Array3<F> {
        let (n, c, t, h, w) = map.dim();
        let mut seq = Array3::<F>::zeros((n, t, c * h * w));
        for i in 0..n {
            for step in 0..t {
                let slice = map.slice(s![i, .., step, .., ..]);
                for (j, &v) in slice.iter().enumerate() {
                    seq[[i, step, j]] = v;
                }
            }
        }
        seq
    }

    fn sequence_to_map(&self, seq: &Array3<F>, dims: (usize, usize, usize)) -> Array5<F> {
        let (n, t, _) = seq.dim();
        let (c, h, w) = (self.config.head_channels, dims.1, dims.2);
        let mut map = Array5::<F>::zeros((n, c, t, h, w));
        for i in 0..n {
            for step in 0..t {
                let mut slice = map.slice_mut(s![i, .., step, .., ..]);
                for (j, v) in slice.iter_mut().enumerate() {
                    *v = seq[[i, step, j]];
                }
            }
        }
        map
    }

    pub fn forward(
        &mut self,
        video: &Array5<F>,
        captions: Option<&[CaptionTokens]>,
        tasks: TaskConfig,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<MtlOutput> {
        self.check_video(video)?;
        let body = self.trunk.forward(video, train, rng)?;

        let a = self.aqa_stem.forward(&body, train)?;
        let s_map = self.aqa_out.forward(&a, train)?;
        let scores = global_avg_pool(&s_map)
            .index_axis(Axis(1), 0)
            .mapv(|v| v.to_f64());

        let class_logits = if tasks.classification {
            let z = self.cls_stem.forward(&body, train)?;
            let mut logits = Vec::with_capacity(self.cls_out.len());
            for head in &mut self.cls_out {
                let m = head.forward(&z, train)?;
                logits.push(to_f64_2(&global_avg_pool(&m)));
            }
            Some(logits)
        } else {
            None
        };

        let caption_logits = match (tasks.captioning, captions) {
            (true, Some(captions)) => {
                let z = self.cap_stem.forward(&body, train)?;
                let seq = self.map_to_sequence(&z);
                let states = self.captioner.encode(&seq, train, rng)?;
                let logits = self
                    .captioner
                    .decode_teacher_forced(&states, captions, train, rng)?;
                Some(logits.iter().map(to_f64_2).collect())
            }
            (true, None) if train => {
                return Err(AqaError::Data(
                    "captioning is enabled but no gold captions were supplied".into(),
                ))
            }
            _ => None,
        };

        Ok(MtlOutput {
            scores,
            class_logits,
            caption_logits,
        })
    }

    pub fn backward(&mut self, video: &Array5<F>, grads: &MtlGrads) -> Result<()> {
        let n = self.check_video(video)?;
        let (st, sh, sw) = self.stem_dims();

        let d_score = from_f64_1::<F>(&grads.scores)
            .insert_axis(Axis(1))
            .to_owned();
        let d_map = global_avg_pool_backward(&d_score, (n, 1, st, sh, sw));
        let d_a = self.aqa_out.backward(&d_map, true).expect("dx requested");
        let mut d_body = self.aqa_stem.backward(&d_a);

        if let Some(per_task) = &grads.class_logits {
            let mut d_stem: Option<Array5<F>> = None;
            for (head, g) in self.cls_out.iter_mut().zip(per_task) {
                let k = g.ncols();
                let d_m = global_avg_pool_backward(&from_f64_2::<F>(g), (n, k, st, sh, sw));
                let d = head.backward(&d_m, true).expect("dx requested");
                d_stem = Some(match d_stem {
                    Some(acc) => acc + &d,
                    None => d,
                });
            }
            if let Some(d_stem) = d_stem {
                d_body = d_body + &self.cls_stem.backward(&d_stem);
            }
        }

        if let Some(caption_grads) = &grads.caption_logits {
            let per_sample: Vec<Array2<F>> = caption_grads.iter().map(from_f64_2).collect();
            let d_states = self.captioner.backward_decode(&per_sample);
            let d_seq = self.captioner.backward_encode(&d_states);
            let d_map = self.sequence_to_map(&d_seq, (st, sh, sw));
            d_body = d_body + &self.cap_stem.backward(&d_map);
        }

        self.trunk.backward(&d_body);
        Ok(())
    }

    /// Global-average-pooled trunk activations for every stage, `(N, C)` per
    /// layer. The frozen-feature input of the linear probe.
    pub fn pooled_captures(&mut self, video: &Array5<F>) -> Result<Vec<(LayerTag, Array2<f64>)>> {
        self.check_video(video)?;
        let mut cold = ChaCha8Rng::seed_from_u64(0);
        let (_, captures) = self.trunk.forward_with_captures(video, false, &mut cold)?;
        Ok(captures
            .into_iter()
            .map(|m| (m.tag, global_avg_pool(&m.data).mapv(|v| v.to_f64())))
            .collect())
    }

    /// Shapes from one eval-mode diagnostic forward: the dilated body output
    /// and the score stem's feature map.
    pub fn shape_trace(&mut self, video: &Array5<F>) -> Result<ShapeTrace> {
        self.check_video(video)?;
        let mut cold = ChaCha8Rng::seed_from_u64(0);
        let body = self.trunk.forward(video, false, &mut cold)?;
        let head = self.aqa_stem.forward(&body, false)?;
        Ok(ShapeTrace {
            body: dims5(&body),
            head: Some(dims5(&head)),
        })
    }

    pub fn generate_captions(
        &mut self,
        video: &Array5<F>,
        beam: Option<usize>,
    ) -> Result<Vec<CaptionTokens>> {
        let mut cold = ChaCha8Rng::seed_from_u64(0);
        let body = self.trunk.forward(video, false, &mut cold)?;
        let z = self.cap_stem.forward(&body, false)?;
        let seq = self.map_to_sequence(&z);
        let states = self.captioner.encode(&seq, false, &mut cold)?;
        let mut out = Vec::with_capacity(states.nrows());
        for i in 0..states.nrows() {
            out.push(match beam {
                Some(width) => self.captioner.decode_beam(states.row(i), width)?,
                None => self.captioner.decode_greedy(states.row(i))?,
            });
        }
        Ok(out)
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("trunk", self.trunk.params()));
        out.extend(with_prefix("head_aqa", self.aqa_stem.params()));
        out.extend(with_prefix("head_aqa.out", self.aqa_out.params()));
        out.extend(with_prefix("head_cls", self.cls_stem.params()));
        for (i, head) in self.cls_out.iter().enumerate() {
            out.extend(with_prefix(&format!("head_cls.out{i}"), head.params()));
        }
        out.extend(with_prefix("head_cap", self.cap_stem.params()));
        out.extend(with_prefix("captioner", self.captioner.params()));
        out
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("trunk", self.trunk.params_mut()));
        out.extend(with_prefix("head_aqa", self.aqa_stem.params_mut()));
        out.extend(with_prefix("head_aqa.out", self.aqa_out.params_mut()));
        out.extend(with_prefix("head_cls", self.cls_stem.params_mut()));
        for (i, head) in self.cls_out.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("head_cls.out{i}"), head.params_mut()));
        }
        out.extend(with_prefix("head_cap", self.cap_stem.params_mut()));
        out.extend(with_prefix("captioner", self.captioner.params_mut()));
        out
    }

    fn state_tensors(&self) -> Vec<(String, Array1<F>)> {
        let mut out = Vec::new();
        for (name, t) in self.trunk.state() {
            out.push((format!("trunk.{name}"), t));
        }
        for (prefix, stem) in [
            ("head_aqa", &self.aqa_stem),
            ("head_cls", &self.cls_stem),
            ("head_cap", &self.cap_stem),
        ] {
            for (name, t) in stem.state() {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out
    }

    fn set_state_tensor(&mut self, name: &str, tensor: Array1<F>) -> Result<()> {
        if let Some(rest) = name.strip_prefix("trunk.") {
            return self.trunk.set_state(rest, tensor);
        }
        for (prefix, stem) in [
            ("head_aqa.", &mut self.aqa_stem),
            ("head_cls.", &mut self.cls_stem),
            ("head_cap.", &mut self.cap_stem),
        ] {
            if let Some(rest) = name.strip_prefix(prefix) {
                return stem.set_state(rest, tensor);
            }
        }
        Err(AqaError::Data(format!("unknown state tensor {name}")))
    }
}

/// Either multitask network behind one interface.
pub enum MtlModel<F: Scalar> {
    C3dAvg(Box<C3dAvgMtl<F>>),
    Mscadc(Box<MscadcMtl<F>>),
}

impl<F: Scalar> MtlModel<F> {
    /// Builds the architecture named in `config` with seeded initialization:
    /// the same seed always yields bit-identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config.architecture {
            Architecture::C3dAvg => MtlModel::C3dAvg(Box::new(C3dAvgMtl::new(config, seed)?)),
            Architecture::Mscadc => MtlModel::Mscadc(Box::new(MscadcMtl::new(config, seed)?)),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            MtlModel::C3dAvg(m) => &m.config,
            MtlModel::Mscadc(m) => &m.config,
        }
    }

    pub fn forward(
        &mut self,
        video: &Array5<F>,
        captions: Option<&[CaptionTokens]>,
        tasks: TaskConfig,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<MtlOutput> {
        match self {
            MtlModel::C3dAvg(m) => m.forward(video, captions, tasks, train, rng),
            MtlModel::Mscadc(m) => m.forward(video, captions, tasks, train, rng),
        }
    }

    pub fn backward(&mut self, video: &Array5<F>, grads: &MtlGrads) -> Result<()> {
        match self {
            MtlModel::C3dAvg(m) => m.backward(video, grads),
            MtlModel::Mscadc(m) => m.backward(video, grads),
        }
    }

    pub fn generate_captions(
        &mut self,
        video: &Array5<F>,
        beam: Option<usize>,
    ) -> Result<Vec<CaptionTokens>> {
        match self {
            MtlModel::C3dAvg(m) => m.generate_captions(video, beam),
            MtlModel::Mscadc(m) => m.generate_captions(video, beam),
        }
    }

    /// Frozen per-stage features for the linear probe: one `(N, C)` matrix
    /// per trunk stage, global-average-pooled (and clip-averaged for the
    /// clip-based model).
    pub fn pooled_captures(&mut self, video: &Array5<F>) -> Result<Vec<(LayerTag, Array2<f64>)>> {
        match self {
            MtlModel::C3dAvg(m) => m.pooled_captures(video),
            MtlModel::Mscadc(m) => m.pooled_captures(video),
        }
    }

    /// Runs the trunk (and, for the dilated model, the assessment stem) in
    /// eval mode and reports the intermediate tensor shapes.
    pub fn shape_trace(&mut self, video: &Array5<F>) -> Result<ShapeTrace> {
        match self {
            MtlModel::C3dAvg(m) => m.shape_trace(video),
            MtlModel::Mscadc(m) => m.shape_trace(video),
        }
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        match self {
            MtlModel::C3dAvg(m) => m.params(),
            MtlModel::Mscadc(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        match self {
            MtlModel::C3dAvg(m) => m.params_mut(),
            MtlModel::Mscadc(m) => m.params_mut(),
        }
    }

    fn state_tensors(&self) -> Vec<(String, Array1<F>)> {
        match self {
            MtlModel::C3dAvg(_) => Vec::new(),
            MtlModel::Mscadc(m) => m.state_tensors(),
        }
    }

    /// Serializes every parameter and running statistic, fingerprinted with
    /// the model configuration.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(self.config().fingerprint());
        ck.push_params(self.params());
        for (name, t) in self.state_tensors() {
            ck.push_tensor(name, &t.into_dyn());
        }
        ck.save(path)?;
        Ok(())
    }

    /// Restores a checkpoint saved by [`MtlModel::save_checkpoint`]. The
    /// configuration fingerprint must match exactly; any tensor mismatch is
    /// reported in full.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(AqaError::MissingInput(path.to_path_buf()));
        }
        let ck = Checkpoint::load(path)?;
        if ck.fingerprint != self.config().fingerprint() {
            return Err(AqaError::Config(format!(
                "checkpoint at {} was built for a different model configuration:\n  \
                 checkpoint: {}\n  requested:  {}",
                path.display(),
                ck.fingerprint,
                self.config().fingerprint()
            )));
        }
        let report = assign_matching(&ck, self.params_mut())?;
        if !report.missing.is_empty() {
            return Err(AqaError::Data(format!(
                "checkpoint at {} lacks parameters: {}",
                path.display(),
                report.missing.join(", ")
            )));
        }
        let expected: Vec<String> = self.state_tensors().into_iter().map(|(n, _)| n).collect();
        for name in &report.unexpected {
            if !expected.contains(name) {
                return Err(AqaError::Data(format!(
                    "checkpoint at {} contains unknown tensor {name}",
                    path.display()
                )));
            }
        }
        for name in expected {
            let entry = ck.find(&name).ok_or_else(|| {
                AqaError::Data(format!(
                    "checkpoint at {} lacks running statistic {name}",
                    path.display()
                ))
            })?;
            let arr = entry.to_array::<F>()?;
            let arr = arr
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|_| AqaError::Data(format!("running statistic {name} is not 1-D")))?;
            if let MtlModel::Mscadc(m) = self {
                m.set_state_tensor(&name, arr)?;
            }
        }
        Ok(())
    }

    /// Writes only the trunk parameters, for reuse as a pretrained backbone.
    pub fn save_trunk_checkpoint(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(format!("trunk:{}", self.config().architecture.name()));
        match self {
            MtlModel::C3dAvg(m) => ck.push_params(m.trunk.params()),
            MtlModel::Mscadc(m) => {
                ck.push_params(m.trunk.params());
                for (name, t) in m.trunk.state() {
                    ck.push_tensor(name, &t.into_dyn());
                }
            }
        }
        ck.save(path)?;
        Ok(())
    }

    /// Loads trunk parameters from a checkpoint written by
    /// [`MtlModel::save_trunk_checkpoint`], leaving the heads at their
    /// random initialization. Returns which tensors matched.
    pub fn load_pretrained_trunk(&mut self, path: &Path) -> Result<LoadReport> {
        if !path.exists() {
            return Err(AqaError::MissingInput(path.to_path_buf()));
        }
        let ck = Checkpoint::load(path)?;
        let report = match self {
            MtlModel::C3dAvg(m) => assign_matching(&ck, m.trunk.params_mut())?,
            MtlModel::Mscadc(m) => {
                let report = assign_matching(&ck, m.trunk.params_mut())?;
                for (name, _) in m.trunk.state() {
                    if let Some(entry) = ck.find(&name) {
                        let arr = entry
                            .to_array::<F>()?
                            .into_dimensionality::<ndarray::Ix1>()
                            .map_err(|_| {
                                AqaError::Data(format!("running statistic {name} is not 1-D"))
                            })?;
                        m.trunk.set_state(&name, arr)?;
                    }
                }
                report
            }
        };
        if !report.missing.is_empty() {
            return Err(AqaError::Data(format!(
                "pretrained trunk at {} lacks parameters: {}",
                path.display(),
                report.missing.join(", ")
            )));
        }
        Ok(report)
    }
}
