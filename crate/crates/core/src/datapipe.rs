//! Dataset ingestion and preprocessing: frame-directory loading, temporal
//! resampling, train-time augmentation, and a deterministic synthetic
//! renderer for desk-scale end-to-end runs.
//!
//! Videos arrive as directories of pre-extracted PNG frames
//! (`<video_root>/<video_path>/%06d.png`); decode, resize, augmentation, and
//! normalization all happen here. Every random choice is drawn from an
//! explicit per-sample rng, so loading is reproducible and could be
//! parallelized without coordination.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;
use ndarray::{s, Array1, Array3, Array4, Array5, ArrayView3, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    label_from_record, read_annotations, write_annotations, AnnotationHeader, AnnotationRecord,
    AqaScore, CaptionTokens, DiveLabel, DiveLabelSchema, VideoSample, Vocabulary,
};
use crate::error::AqaError;
use crate::mtl::{Architecture, ModelConfig};
use crate::Result;

/// Spatial and temporal preprocessing parameters. Dimension pairs are
/// `(height, width)`, matching the frame array layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Frame count after temporal resampling.
    pub target_frames: usize,
    /// Frame size after spatial resize, before cropping.
    pub resize: (usize, usize),
    /// Center-crop size; must fit inside `resize`.
    pub crop: (usize, usize),
    /// Probability of horizontally flipping all frames (train mode only).
    pub hflip_prob: f64,
    /// Maximum temporal start jitter in frames, applied as a uniform shift
    /// in `-jitter..=jitter` (train mode only).
    pub temporal_jitter: usize,
    /// Per-channel means subtracted after scaling pixels to `[0, 1]`.
    pub channel_means: [f64; 3],
}

impl PreprocessConfig {
    /// The clip-averaged pipeline: 96 frames, 171×128 resize, 112×112 crop.
    pub fn c3d_avg() -> Self {
        PreprocessConfig {
            target_frames: 96,
            resize: (128, 171),
            crop: (112, 112),
            hflip_prob: 0.5,
            temporal_jitter: 3,
            channel_means: [0.45; 3],
        }
    }

    /// The multiscale pipeline: 16 frames, 640×360 resize, 180×180 crop.
    pub fn mscadc() -> Self {
        PreprocessConfig {
            target_frames: 16,
            resize: (360, 640),
            crop: (180, 180),
            hflip_prob: 0.5,
            temporal_jitter: 3,
            channel_means: [0.45; 3],
        }
    }

    /// The pipeline matching a model's input geometry. Starts from the
    /// architecture's standard preset and, when the model runs at a reduced
    /// size, scales the resize dimensions proportionally to the crop.
    pub fn for_model(config: &ModelConfig) -> Self {
        let mut pp = match config.architecture {
            Architecture::C3dAvg => PreprocessConfig::c3d_avg(),
            Architecture::Mscadc => PreprocessConfig::mscadc(),
        };
        if config.frame_hw != pp.crop || config.frames != pp.target_frames {
            let scale = |crop: usize, full_resize: usize, full_crop: usize| {
                (crop * full_resize + full_crop / 2) / full_crop
            };
            pp.resize = (
                scale(config.frame_hw.0, pp.resize.0, pp.crop.0),
                scale(config.frame_hw.1, pp.resize.1, pp.crop.1),
            );
            pp.crop = config.frame_hw;
            pp.target_frames = config.frames;
        }
        pp
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_frames == 0 {
            return Err(AqaError::Config("target_frames must be positive".into()));
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return Err(AqaError::Config("crop must be positive".into()));
        }
        if self.crop.0 > self.resize.0 || self.crop.1 > self.resize.1 {
            return Err(AqaError::Config(format!(
                "crop {:?} does not fit inside resize {:?}",
                self.crop, self.resize
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(AqaError::Config(format!(
                "hflip_prob must be in [0, 1], got {}",
                self.hflip_prob
            )));
        }
        Ok(())
    }
}

/// Uniform temporal resampling: the indices `round(k·(count−1)/(target−1))`
/// for `k = 0…target−1`. Duplicates frames when `count < target`; the
/// identity when `count == target`.
pub fn temporal_normalize(count: usize, target: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(AqaError::Data("cannot resample an empty video".into()));
    }
    if target == 0 {
        return Err(AqaError::Data("target frame count must be positive".into()));
    }
    if target == 1 {
        return Ok(vec![0]);
    }
    let step = (count - 1) as f64 / (target - 1) as f64;
    Ok((0..target)
        .map(|k| (k as f64 * step).round() as usize)
        .collect())
}

/// SplitMix64-style mixer deriving independent rng streams from a base seed.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded rng for stream `stream` of a run keyed by `base`.
pub fn sample_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, stream))
}

/// Path of one extracted frame: `<video_root>/<video_path>/<index:06>.png`.
pub fn frame_path(video_root: &Path, video_path: &str, index: usize) -> PathBuf {
    video_root.join(video_path).join(format!("{index:06}.png"))
}

/// Loads the inclusive frame range of one video as a `(T, H, W, 3)` array.
/// All frames must share one size.
pub fn load_frames(
    video_root: &Path,
    video_path: &str,
    frame_range: (usize, usize),
) -> Result<Array4<u8>> {
    let (start, end) = frame_range;
    if end < start {
        return Err(AqaError::Data(format!(
            "frame_range {frame_range:?} is reversed"
        )));
    }
    let count = end - start + 1;
    let mut frames: Option<Array4<u8>> = None;
    for (k, index) in (start..=end).enumerate() {
        let path = frame_path(video_root, video_path, index);
        if !path.exists() {
            return Err(AqaError::MissingInput(path));
        }
        let img = image::open(&path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let stack = frames.get_or_insert_with(|| Array4::zeros((count, h, w, 3)));
        if stack.dim().1 != h || stack.dim().2 != w {
            return Err(AqaError::Data(format!(
                "frame {} of {video_path} is {w}×{h}, expected {}×{}",
                index,
                stack.dim().2,
                stack.dim().1
            )));
        }
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                stack[[k, y as usize, x as usize, c]] = px.0[c];
            }
        }
    }
    Ok(frames.expect("count >= 1"))
}

fn resize_frame(frame: ArrayView3<'_, u8>, out_hw: (usize, usize)) -> Array3<u8> {
    let (h, w, _) = frame.dim();
    let (oh, ow) = out_hw;
    if (h, w) == (oh, ow) {
        return frame.to_owned();
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            px.0[c] = frame[[y as usize, x as usize, c]];
        }
    }
    let resized = image::imageops::resize(&img, ow as u32, oh as u32, FilterType::Triangle);
    let mut out = Array3::zeros((oh, ow, 3));
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = px.0[c];
        }
    }
    out
}

/// Turns raw frames into a normalized `(3, target, crop_h, crop_w)` tensor.
///
/// Train mode draws a temporal start jitter, then the resample indices, then
/// a single horizontal-flip decision for the whole video; eval mode is fully
/// deterministic (no jitter, no flip). Each selected frame is resized, then
/// optionally flipped, then center-cropped, and pixels are scaled to
/// `[0, 1]` minus the per-channel mean.
pub fn preprocess(
    frames: &ArrayView4<'_, u8>,
    config: &PreprocessConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<f32>> {
    config.validate()?;
    let (t, _, _, c) = frames.dim();
    if t == 0 {
        return Err(AqaError::Data("video has no frames".into()));
    }
    if c != 3 {
        return Err(AqaError::Data(format!("expected 3 channels, got {c}")));
    }

    let jitter = if train && config.temporal_jitter > 0 {
        let j = config.temporal_jitter as i64;
        rng.gen_range(-j..=j)
    } else {
        0
    };
    let mut indices = temporal_normalize(t, config.target_frames)?;
    if jitter != 0 {
        for i in &mut indices {
            *i = (*i as i64 + jitter).clamp(0, t as i64 - 1) as usize;
        }
    }
    let flip = train && rng.gen_bool(config.hflip_prob);

    let (ch, cw) = config.crop;
    let top = (config.resize.0 - ch) / 2;
    let left = (config.resize.1 - cw) / 2;
    let means = config.channel_means.map(|m| m as f32);

    let mut out = Array4::zeros((3, config.target_frames, ch, cw));
    let mut cached: Option<(usize, Array3<u8>)> = None;
    for (k, &fi) in indices.iter().enumerate() {
        if cached.as_ref().map(|(i, _)| *i) != Some(fi) {
            cached = Some((fi, resize_frame(frames.index_axis(Axis(0), fi), config.resize)));
        }
        let resized = &cached.as_ref().unwrap().1;
        let frame = if flip {
            resized.slice(s![.., ..;-1, ..])
        } else {
            resized.view()
        };
        let window = frame.slice(s![top..top + ch, left..left + cw, ..]);
        for y in 0..ch {
            for x in 0..cw {
                for cc in 0..3 {
                    out[[cc, k, y, x]] = window[[y, x, cc]] as f32 / 255.0 - means[cc];
                }
            }
        }
    }
    Ok(out)
}

/// Preprocesses a batch into the `(N, 3, T, H, W)` model input. Sample `i`
/// draws from rng stream `mix_seed(base_seed, i)`, so a batch is
/// reproducible regardless of how it is assembled.
pub fn preprocess_batch(
    samples: &[&VideoSample],
    config: &PreprocessConfig,
    train: bool,
    base_seed: u64,
) -> Result<Array5<f32>> {
    if samples.is_empty() {
        return Err(AqaError::Data("empty batch".into()));
    }
    let (ch, cw) = config.crop;
    let mut out = Array5::zeros((samples.len(), 3, config.target_frames, ch, cw));
    for (i, sample) in samples.iter().enumerate() {
        let mut rng = sample_rng(base_seed, i as u64);
        let x = preprocess(&sample.frames.view(), config, train, &mut rng)?;
        out.index_axis_mut(Axis(0), i).assign(&x);
    }
    Ok(out)
}

/// Collects the training targets of a batch: normalized scores, dive
/// labels, and captions, in sample order.
pub fn batch_targets(samples: &[&VideoSample]) -> (Array1<f64>, Vec<DiveLabel>, Vec<CaptionTokens>) {
    let scores = Array1::from_iter(samples.iter().map(|s| s.score.normalized()));
    let labels = samples.iter().map(|s| s.label).collect();
    let captions = samples.iter().map(|s| s.caption.clone()).collect();
    (scores, labels, captions)
}

/// Per-sample failures encountered while a dataset load continued past them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub loaded: usize,
    /// `(sample_id, reason)` for every sample that could not be loaded.
    pub skipped: Vec<(String, String)>,
}

/// Reads a newline-separated list of sample ids. Blank lines and `#`
/// comments are ignored.
pub fn read_split_manifest(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(AqaError::MissingInput(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Builds the caption vocabulary from the annotation file, restricted to
/// `manifest` ids when given (normally the training split, so test-only
/// words map to the unknown token).
pub fn build_vocabulary(annotation_path: &Path, manifest: Option<&[String]>) -> Result<Vocabulary> {
    let af = read_annotations(annotation_path)?;
    let keep: Option<HashSet<&str>> = manifest.map(|ids| ids.iter().map(String::as_str).collect());
    Ok(Vocabulary::build(
        af.records
            .iter()
            .filter(|r| {
                keep.as_ref()
                    .map_or(true, |ids| ids.contains(r.sample_id.as_str()))
            })
            .map(|r| r.caption_text.as_str()),
    ))
}

/// Loads every annotated sample (optionally restricted to a split manifest),
/// decoding its frames and resolving its labels. Samples that fail to load
/// are skipped and reported in the summary; a manifest id missing from the
/// annotations rejects the call.
pub fn load_dataset(
    annotation_path: &Path,
    video_root: &Path,
    schema: &DiveLabelSchema,
    vocab: &Vocabulary,
    manifest: Option<&[String]>,
) -> Result<(Vec<VideoSample>, DatasetSummary)> {
    let af = read_annotations(annotation_path)?;
    let records: Vec<&AnnotationRecord> = match manifest {
        Some(ids) => {
            let known: HashSet<&str> = af.records.iter().map(|r| r.sample_id.as_str()).collect();
            let unknown: Vec<&str> = ids
                .iter()
                .map(String::as_str)
                .filter(|id| !known.contains(id))
                .collect();
            if !unknown.is_empty() {
                return Err(AqaError::Data(format!(
                    "split manifest names unknown sample ids: {}",
                    unknown.join(", ")
                )));
            }
            let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
            af.records
                .iter()
                .filter(|r| keep.contains(r.sample_id.as_str()))
                .collect()
        }
        None => af.records.iter().collect(),
    };

    let mut samples = Vec::with_capacity(records.len());
    let mut summary = DatasetSummary::default();
    for rec in records {
        let loaded = label_from_record(rec, schema).and_then(|label| {
            let score = AqaScore::new(rec.raw_score, af.header.score_normalizer)?;
            let frames = load_frames(video_root, &rec.video_path, rec.frame_range)?;
            Ok(VideoSample {
                sample_id: rec.sample_id.clone(),
                frames,
                score,
                label,
                caption: CaptionTokens::encode(&rec.caption_text, vocab),
            })
        });
        match loaded {
            Ok(sample) => samples.push(sample),
            Err(e) => summary.skipped.push((rec.sample_id.clone(), e.to_string())),
        }
    }
    summary.loaded = samples.len();
    if !summary.skipped.is_empty() {
        log::warn!(
            "loaded {} of {} samples; skipped: {}",
            summary.loaded,
            summary.loaded + summary.skipped.len(),
            summary
                .skipped
                .iter()
                .map(|(id, why)| format!("{id} ({why})"))
                .collect::<Vec<_>>()
                .join("; ")
        );
    }
    Ok((samples, summary))
}

/// Caption words for the three speed classes, indexed by class.
pub const SPEED_WORDS: [&str; 3] = ["slow", "steady", "fast"];
/// Caption words for the four travel directions, indexed by class.
pub const DIRECTION_WORDS: [&str; 4] = ["rightward", "leftward", "downward", "upward"];
/// Caption words for the two shape classes, indexed by class.
pub const SIZE_WORDS: [&str; 2] = ["wide", "tall"];

/// Parameters of the synthetic renderer. One sample is a bright rectangle
/// moving over a dark background; its five motion latents map one-to-one
/// onto the five dive-label fields, its ground-truth score is a documented
/// closed form of the latents and trajectory, and its caption is a template
/// sentence naming every latent (26 distinct words, far under the 64-token
/// budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub sample_count: usize,
    /// Rendered frames per sample.
    pub frames: usize,
    /// Native frame size `(height, width)`; the preprocessing pipeline
    /// resizes from here.
    pub frame_size: (usize, usize),
    /// Largest bounce count drawn (capped by the somersault cardinality).
    pub max_bounces: usize,
    /// Largest oscillation count drawn (capped by the twist cardinality).
    pub max_oscillations: usize,
}

impl SyntheticSpec {
    pub fn new(seed: u64, sample_count: usize) -> Self {
        SyntheticSpec {
            seed,
            sample_count,
            frames: 96,
            frame_size: (64, 64),
            max_bounces: 9,
            max_oscillations: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(AqaError::Config("sample_count must be positive".into()));
        }
        if self.frames < 2 {
            return Err(AqaError::Config("need at least 2 frames".into()));
        }
        if self.frame_size.0 < 16 || self.frame_size.1 < 16 {
            return Err(AqaError::Config(format!(
                "frame_size {:?} is below the 16×16 minimum",
                self.frame_size
            )));
        }
        if self.max_bounces > 9 || self.max_oscillations > 7 {
            return Err(AqaError::Config(
                "bounce/oscillation ranges exceed the label schema (9 and 7)".into(),
            ));
        }
        Ok(())
    }
}

/// The latent motion parameters of one synthetic sample. `speed`,
/// `direction`, and `size` are class indices (see the word tables); the
/// counts are raw. `perp_offset` is the only free continuous parameter:
/// the trajectory's off-axis placement, in `[-0.1, 0.1]` of the range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLatents {
    pub speed: usize,
    pub direction: usize,
    pub size: usize,
    pub bounces: usize,
    pub oscillations: usize,
    pub perp_offset: f64,
}

impl SyntheticLatents {
    fn draw(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        SyntheticLatents {
            speed: rng.gen_range(0..SPEED_WORDS.len()),
            direction: rng.gen_range(0..DIRECTION_WORDS.len()),
            size: rng.gen_range(0..SIZE_WORDS.len()),
            bounces: rng.gen_range(0..=spec.max_bounces),
            oscillations: rng.gen_range(0..=spec.max_oscillations),
            perp_offset: rng.gen_range(-0.1..0.1),
        }
    }

    /// The one-to-one latent-to-label mapping: speed → position,
    /// size → armstand, direction → rotation, bounces → somersault index,
    /// oscillations → twist index.
    pub fn to_label(self, schema: &DiveLabelSchema) -> Result<DiveLabel> {
        DiveLabel::from_indices(
            [
                self.speed,
                self.size,
                self.direction,
                self.bounces,
                self.oscillations,
            ],
            schema,
        )
    }

    /// The template caption naming every latent.
    pub fn caption(&self) -> String {
        format!(
            "a {} {} {} object with {} bounces and {} oscillations",
            SPEED_WORDS[self.speed],
            DIRECTION_WORDS[self.direction],
            SIZE_WORDS[self.size],
            self.bounces,
            self.oscillations
        )
    }
}

/// Rectangle half-extents `(half_h, half_w)` for a shape class: equal area,
/// different aspect, so mean frame brightness depends only on the fill
/// intensity.
fn rect_half_extents(size: usize, frame_size: (usize, usize)) -> (f64, f64) {
    let base = frame_size.0.min(frame_size.1) as f64;
    let (short, long) = (base / 16.0, base / 8.0);
    if size == 0 {
        (short, long)
    } else {
        (long, short)
    }
}

/// The rectangle's center at every frame.
///
/// The primary axis (horizontal for rightward/leftward travel, vertical
/// otherwise) follows a triangle wave anchored at the starting wall with
/// exactly `bounces` reversals; its amplitude covers 45%, 72.5%, or 100% of
/// the available range by speed class. The perpendicular axis is a sinusoid
/// with `oscillations` full periods, offset by `perp_offset`.
pub fn synthetic_trajectory(
    latents: &SyntheticLatents,
    frames: usize,
    frame_size: (usize, usize),
) -> Vec<(f64, f64)> {
    let (h, w) = (frame_size.0 as f64, frame_size.1 as f64);
    let margin = frame_size.0.min(frame_size.1) as f64 / 8.0 + 1.0;
    let (y_lo, y_hi) = (margin, h - 1.0 - margin);
    let (x_lo, x_hi) = (margin, w - 1.0 - margin);

    let horizontal = latents.direction < 2;
    let reverse = latents.direction % 2 == 1;
    let (p_lo, p_hi) = if horizontal { (x_lo, x_hi) } else { (y_lo, y_hi) };
    let (q_lo, q_hi) = if horizontal { (y_lo, y_hi) } else { (x_lo, x_hi) };

    let extent = (p_hi - p_lo) * (0.45 + 0.275 * latents.speed as f64);
    let q_mid = (q_lo + q_hi) / 2.0 + latents.perp_offset * (q_hi - q_lo);
    let q_amp = 0.12 * (q_hi - q_lo);

    let denom = (frames - 1).max(1) as f64;
    (0..frames)
        .map(|k| {
            let t = k as f64 / denom;
            let phase = (t * (latents.bounces + 1) as f64).rem_euclid(2.0);
            let tri = if phase <= 1.0 { phase } else { 2.0 - phase };
            let p = if reverse {
                p_hi - extent * tri
            } else {
                p_lo + extent * tri
            };
            let q = (q_mid
                + q_amp * (std::f64::consts::TAU * latents.oscillations as f64 * t).sin())
            .clamp(q_lo, q_hi);
            if horizontal {
                (q, p)
            } else {
                (p, q)
            }
        })
        .collect()
}

/// Mean second-difference magnitude of the trajectory, scaled by 2: the
/// roughness term subtracted from the synthetic score.
pub fn smoothness_penalty(trajectory: &[(f64, f64)]) -> f64 {
    if trajectory.len() < 3 {
        return 0.0;
    }
    let total: f64 = trajectory
        .windows(3)
        .map(|w| {
            let ay = w[2].0 - 2.0 * w[1].0 + w[0].0;
            let ax = w[2].1 - 2.0 * w[1].1 + w[0].1;
            (ay * ay + ax * ax).sqrt()
        })
        .sum();
    2.0 * total / trajectory.len() as f64
}

/// The synthetic ground-truth score:
/// `30 + 8·speed + 5·direction + 4·size + 2.5·bounces + 1.5·oscillations`
/// minus the trajectory's [`smoothness_penalty`], floored at 5. The range
/// fits the 100-point normalizer the generator writes.
pub fn synthetic_score(latents: &SyntheticLatents, trajectory: &[(f64, f64)]) -> f64 {
    let base = 30.0
        + 8.0 * latents.speed as f64
        + 5.0 * latents.direction as f64
        + 4.0 * latents.size as f64
        + 2.5 * latents.bounces as f64
        + 1.5 * latents.oscillations as f64;
    (base - smoothness_penalty(trajectory)).max(5.0)
}

fn render_frame(
    center: (f64, f64),
    half: (f64, f64),
    fill: u8,
    frame_size: (usize, usize),
) -> RgbImage {
    const BACKGROUND: u8 = 10;
    let (h, w) = frame_size;
    let y0 = (center.0 - half.0).round().max(0.0) as u32;
    let y1 = ((center.0 + half.0).round() as u32).min(h as u32 - 1);
    let x0 = (center.1 - half.1).round().max(0.0) as u32;
    let x1 = ((center.1 + half.1).round() as u32).min(w as u32 - 1);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = if y >= y0 && y <= y1 && x >= x0 && x <= x1 {
            fill
        } else {
            BACKGROUND
        };
        image::Rgb([v, v, v])
    })
}

/// One line of the latent sidecar: everything needed to regenerate a
/// sample's trajectory and verify its stored score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub sample_id: String,
    pub latents: SyntheticLatents,
    pub raw_score: f64,
}

/// Where [`generate_synthetic`] put everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub out_dir: PathBuf,
    pub annotation_path: PathBuf,
    pub video_root: PathBuf,
    pub latents_path: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub sample_count: usize,
}

/// Renders a synthetic dataset to disk: PNG frame directories under
/// `frames/`, an `annotations.jsonl` in the standard format (normalizer
/// 100), a `latents.json` sidecar, and 3:1 train/test split manifests.
/// The same spec always produces byte-identical files. The rectangle's fill
/// intensity encodes the score, so quality is linearly readable from pixel
/// statistics.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedDataset> {
    spec.validate()?;
    let schema = DiveLabelSchema::default();
    let video_root = out_dir.join("frames");
    fs::create_dir_all(&video_root)?;

    let mut records = Vec::with_capacity(spec.sample_count);
    let mut sidecar = Vec::with_capacity(spec.sample_count);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();

    for i in 0..spec.sample_count {
        let sample_id = format!("synth_{i:04}");
        let mut rng = sample_rng(spec.seed, i as u64);
        let latents = SyntheticLatents::draw(spec, &mut rng);
        let trajectory = synthetic_trajectory(&latents, spec.frames, spec.frame_size);
        let raw_score = synthetic_score(&latents, &trajectory);
        let fill = (90.0 + 165.0 * raw_score / 100.0).round().clamp(0.0, 255.0) as u8;
        let half = rect_half_extents(latents.size, spec.frame_size);

        let dir = video_root.join(&sample_id);
        fs::create_dir_all(&dir)?;
        for (k, &center) in trajectory.iter().enumerate() {
            let img = render_frame(center, half, fill, spec.frame_size);
            img.save(dir.join(format!("{k:06}.png")))?;
        }

        records.push(AnnotationRecord {
            sample_id: sample_id.clone(),
            video_path: sample_id.clone(),
            frame_range: (0, spec.frames - 1),
            raw_score,
            position: schema.position_classes[latents.speed].clone(),
            armstand: schema.armstand_classes[latents.size].clone(),
            rotation: schema.rotation_classes[latents.direction].clone(),
            somersaults: latents.bounces as f64 * 0.5,
            twists: latents.oscillations as f64 * 0.5,
            caption_text: latents.caption(),
        });
        sidecar.push(SyntheticRecord {
            sample_id: sample_id.clone(),
            latents,
            raw_score,
        });
        if i % 4 == 3 {
            test_ids.push(sample_id);
        } else {
            train_ids.push(sample_id);
        }
    }

    let annotation_path = out_dir.join("annotations.jsonl");
    let header = AnnotationHeader {
        schema_version: 1,
        score_normalizer: 100.0,
    };
    write_annotations(&annotation_path, &header, &records)?;

    let latents_path = out_dir.join("latents.json");
    fs::write(&latents_path, serde_json::to_string_pretty(&sidecar)?)?;

    let train_manifest = out_dir.join("train.txt");
    let test_manifest = out_dir.join("test.txt");
    for (path, ids) in [(&train_manifest, &train_ids), (&test_manifest, &test_ids)] {
        let mut f = fs::File::create(path)?;
        for id in ids {
            writeln!(f, "{id}")?;
        }
    }

    Ok(GeneratedDataset {
        out_dir: out_dir.to_path_buf(),
        annotation_path,
        video_root,
        latents_path,
        train_manifest,
        test_manifest,
        sample_count: spec.sample_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::END;

    #[test]
    fn resampling_matches_the_index_formula() {
        assert_eq!(temporal_normalize(4, 2).unwrap(), vec![0, 3]);
        assert_eq!(temporal_normalize(2, 4).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(temporal_normalize(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(temporal_normalize(7, 1).unwrap(), vec![0]);
        assert!(temporal_normalize(0, 4).is_err());
        assert!(temporal_normalize(4, 0).is_err());
    }

    #[test]
    fn resampling_is_idempotent_at_the_target_length() {
        for count in [1, 3, 16, 96] {
            let idx = temporal_normalize(count, count).unwrap();
            assert_eq!(idx, (0..count).collect::<Vec<_>>());
        }
    }

    fn striped_frames(t: usize, h: usize, w: usize) -> Array4<u8> {
        Array4::from_shape_fn((t, h, w, 3), |(k, y, x, c)| {
            (k * 31 + y * 7 + x * 3 + c) as u8
        })
    }

    fn test_config() -> PreprocessConfig {
        PreprocessConfig {
            target_frames: 4,
            resize: (20, 24),
            crop: (16, 16),
            hflip_prob: 0.5,
            temporal_jitter: 3,
            channel_means: [0.45; 3],
        }
    }

    #[test]
    fn eval_preprocessing_is_deterministic_and_shaped() {
        let frames = striped_frames(9, 20, 24);
        let config = test_config();
        let a = preprocess(&frames.view(), &config, false, &mut sample_rng(1, 0)).unwrap();
        let b = preprocess(&frames.view(), &config, false, &mut sample_rng(2, 7)).unwrap();
        assert_eq!(a.dim(), (3, 4, 16, 16));
        assert_eq!(a, b, "eval mode must ignore the rng");
    }

    #[test]
    fn eval_preprocessing_is_resize_plus_center_crop() {
        let frames = striped_frames(2, 20, 24);
        let config = test_config();
        let out = preprocess(&frames.view(), &config, false, &mut sample_rng(0, 0)).unwrap();
        // resize is the identity here (frames already 20×24), so the output
        // pixel grid is the centered window offset by (2, 4).
        let want = frames[[0, 2 + 5, 4 + 6, 1]] as f32 / 255.0 - 0.45;
        assert!((out[[1, 0, 5, 6]] - want).abs() < 1e-6);
    }

    #[test]
    fn train_preprocessing_is_reproducible_under_the_same_stream() {
        let frames = striped_frames(9, 20, 24);
        let config = test_config();
        let a = preprocess(&frames.view(), &config, true, &mut sample_rng(1, 3)).unwrap();
        let b = preprocess(&frames.view(), &config, true, &mut sample_rng(1, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flipping_twice_restores_the_original_window() {
        let frames = striped_frames(2, 20, 24);
        let flipped_once = Array4::from_shape_fn(frames.dim(), |(k, y, x, c)| {
            frames[[k, y, frames.dim().2 - 1 - x, c]]
        });
        let flipped_twice = Array4::from_shape_fn(frames.dim(), |(k, y, x, c)| {
            flipped_once[[k, y, frames.dim().2 - 1 - x, c]]
        });
        assert_eq!(frames, flipped_twice);
    }

    #[test]
    fn jitter_shifts_are_clamped_to_the_frame_range() {
        let frames = striped_frames(4, 20, 24);
        let mut config = test_config();
        config.temporal_jitter = 100;
        for stream in 0..8 {
            let out = preprocess(&frames.view(), &config, true, &mut sample_rng(5, stream));
            out.unwrap();
        }
    }

    #[test]
    fn preset_geometry_matches_the_published_protocol() {
        let c3d = PreprocessConfig::c3d_avg();
        assert_eq!(
            (c3d.target_frames, c3d.resize, c3d.crop),
            (96, (128, 171), (112, 112))
        );
        let ms = PreprocessConfig::mscadc();
        assert_eq!(
            (ms.target_frames, ms.resize, ms.crop),
            (16, (360, 640), (180, 180))
        );
        c3d.validate().unwrap();
        ms.validate().unwrap();

        let full = PreprocessConfig::for_model(&ModelConfig::full(Architecture::C3dAvg, 32));
        assert_eq!(full, c3d);
        let tiny = PreprocessConfig::for_model(&ModelConfig::tiny(Architecture::C3dAvg, 32));
        assert_eq!(tiny.crop, (48, 48));
        assert_eq!(tiny.target_frames, 32);
        tiny.validate().unwrap();
    }

    #[test]
    fn crop_larger_than_resize_is_rejected() {
        let mut config = test_config();
        config.crop = (30, 16);
        assert!(config.validate().is_err());
    }

    #[test]
    fn seed_mixing_separates_streams() {
        let a = mix_seed(7, 0);
        let b = mix_seed(7, 1);
        let c = mix_seed(8, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(7, 0));
    }

    #[test]
    fn trajectory_reversal_count_matches_the_bounce_latent() {
        for bounces in [0, 1, 4, 9] {
            let latents = SyntheticLatents {
                speed: 2,
                direction: 0,
                size: 0,
                bounces,
                oscillations: 0,
                perp_offset: 0.0,
            };
            let traj = synthetic_trajectory(&latents, 96, (64, 64));
            let xs: Vec<f64> = traj.iter().map(|p| p.1).collect();
            let mut reversals = 0;
            let mut last_sign = 0.0f64;
            for w in xs.windows(2) {
                let d = w[1] - w[0];
                if d != 0.0 {
                    if last_sign != 0.0 && d.signum() != last_sign {
                        reversals += 1;
                    }
                    last_sign = d.signum();
                }
            }
            assert_eq!(reversals, bounces, "bounces={bounces}");
        }
    }

    #[test]
    fn trajectory_direction_classes_are_pixel_distinguishable() {
        let base = SyntheticLatents {
            speed: 1,
            direction: 0,
            size: 0,
            bounces: 0,
            oscillations: 0,
            perp_offset: 0.0,
        };
        let starts: Vec<(f64, f64)> = (0..4)
            .map(|direction| {
                let traj = synthetic_trajectory(
                    &SyntheticLatents { direction, ..base },
                    96,
                    (64, 64),
                );
                let (first, second) = (traj[0], traj[1]);
                (second.0 - first.0, second.1 - first.1)
            })
            .collect();
        assert!(starts[0].1 > 0.0, "rightward moves +x");
        assert!(starts[1].1 < 0.0, "leftward moves -x");
        assert!(starts[2].0 > 0.0, "downward moves +y");
        assert!(starts[3].0 < 0.0, "upward moves -y");
    }

    #[test]
    fn score_formula_matches_its_documentation() {
        let latents = SyntheticLatents {
            speed: 2,
            direction: 3,
            size: 1,
            bounces: 4,
            oscillations: 2,
            perp_offset: 0.05,
        };
        let traj = synthetic_trajectory(&latents, 96, (64, 64));
        let want = 30.0 + 16.0 + 15.0 + 4.0 + 10.0 + 3.0 - smoothness_penalty(&traj);
        assert_eq!(synthetic_score(&latents, &traj), want.max(5.0));
    }

    #[test]
    fn smooth_trajectories_incur_less_penalty_than_bouncy_ones() {
        let calm = SyntheticLatents {
            speed: 0,
            direction: 0,
            size: 0,
            bounces: 0,
            oscillations: 0,
            perp_offset: 0.0,
        };
        let busy = SyntheticLatents {
            bounces: 9,
            oscillations: 7,
            ..calm
        };
        let quiet = smoothness_penalty(&synthetic_trajectory(&calm, 96, (64, 64)));
        let rough = smoothness_penalty(&synthetic_trajectory(&busy, 96, (64, 64)));
        assert!(quiet < rough);
        assert!(rough < 25.0, "penalty must not dominate the score");
    }

    #[test]
    fn generated_dataset_round_trips_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            frames: 12,
            frame_size: (32, 32),
            ..SyntheticSpec::new(9, 5)
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        assert_eq!(out.sample_count, 5);

        let schema = DiveLabelSchema::default();
        let train_ids = read_split_manifest(&out.train_manifest).unwrap();
        let test_ids = read_split_manifest(&out.test_manifest).unwrap();
        assert_eq!(train_ids.len(), 4);
        assert_eq!(test_ids.len(), 1);

        let vocab = build_vocabulary(&out.annotation_path, Some(&train_ids)).unwrap();
        assert!(vocab.len() <= 64);

        let (samples, summary) =
            load_dataset(&out.annotation_path, &out.video_root, &schema, &vocab, None).unwrap();
        assert_eq!(samples.len(), 5);
        assert!(summary.skipped.is_empty());
        for s in &samples {
            assert_eq!(s.frames.dim(), (12, 32, 32, 3));
            assert_eq!(*s.caption.indices().last().unwrap(), END);
            assert!(s.score.raw() >= 5.0 && s.score.raw() <= 100.0);
        }

        let (train, _) = load_dataset(
            &out.annotation_path,
            &out.video_root,
            &schema,
            &vocab,
            Some(&train_ids),
        )
        .unwrap();
        assert_eq!(train.len(), 4);
        assert!(train.iter().all(|s| train_ids.contains(&s.sample_id)));
    }

    #[test]
    fn identical_specs_produce_byte_identical_datasets() {
        let spec = SyntheticSpec {
            frames: 6,
            frame_size: (24, 24),
            ..SyntheticSpec::new(21, 3)
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let out_a = generate_synthetic(&spec, dir_a.path()).unwrap();
        let out_b = generate_synthetic(&spec, dir_b.path()).unwrap();

        assert_eq!(
            fs::read(&out_a.annotation_path).unwrap(),
            fs::read(&out_b.annotation_path).unwrap()
        );
        assert_eq!(
            fs::read(&out_a.latents_path).unwrap(),
            fs::read(&out_b.latents_path).unwrap()
        );
        for i in 0..3 {
            for k in 0..6 {
                let rel = format!("synth_{i:04}/{k:06}.png");
                assert_eq!(
                    fs::read(out_a.video_root.join(&rel)).unwrap(),
                    fs::read(out_b.video_root.join(&rel)).unwrap(),
                    "{rel} differs"
                );
            }
        }
    }

    #[test]
    fn latent_sidecar_reproduces_every_stored_score() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            frames: 24,
            frame_size: (32, 32),
            ..SyntheticSpec::new(33, 6)
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        let sidecar: Vec<SyntheticRecord> =
            serde_json::from_str(&fs::read_to_string(&out.latents_path).unwrap()).unwrap();
        assert_eq!(sidecar.len(), 6);
        let schema = DiveLabelSchema::default();
        for rec in &sidecar {
            let traj = synthetic_trajectory(&rec.latents, spec.frames, spec.frame_size);
            assert_eq!(synthetic_score(&rec.latents, &traj), rec.raw_score);
            rec.latents.to_label(&schema).unwrap();
        }
    }

    #[test]
    fn annotation_labels_invert_back_to_the_latents() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            frames: 4,
            frame_size: (24, 24),
            ..SyntheticSpec::new(5, 8)
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        let sidecar: Vec<SyntheticRecord> =
            serde_json::from_str(&fs::read_to_string(&out.latents_path).unwrap()).unwrap();
        let schema = DiveLabelSchema::default();
        let af = read_annotations(&out.annotation_path).unwrap();
        for (rec, synth) in af.records.iter().zip(sidecar.iter()) {
            let label = label_from_record(rec, &schema).unwrap();
            assert_eq!(label, synth.latents.to_label(&schema).unwrap());
        }
    }

    #[test]
    fn manifest_with_unknown_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            frames: 4,
            frame_size: (24, 24),
            ..SyntheticSpec::new(1, 2)
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        let vocab = build_vocabulary(&out.annotation_path, None).unwrap();
        let schema = DiveLabelSchema::default();
        let manifest = vec!["synth_0000".to_string(), "ghost".to_string()];
        let err = load_dataset(
            &out.annotation_path,
            &out.video_root,
            &schema,
            &vocab,
            Some(&manifest),
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"), "got: {err}");
    }

    #[test]
    fn missing_frame_directory_is_skipped_with_a_report() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            frames: 4,
            frame_size: (24, 24),
            ..SyntheticSpec::new(2, 3)
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        fs::remove_dir_all(out.video_root.join("synth_0001")).unwrap();
        let vocab = build_vocabulary(&out.annotation_path, None).unwrap();
        let schema = DiveLabelSchema::default();
        let (samples, summary) =
            load_dataset(&out.annotation_path, &out.video_root, &schema, &vocab, None).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(summary.skipped.len(), 1);
        assert_eq!(summary.skipped[0].0, "synth_0001");
    }

    #[test]
    fn batch_assembly_stacks_samples_and_targets() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            frames: 8,
            frame_size: (32, 32),
            ..SyntheticSpec::new(4, 3)
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        let vocab = build_vocabulary(&out.annotation_path, None).unwrap();
        let schema = DiveLabelSchema::default();
        let (samples, _) =
            load_dataset(&out.annotation_path, &out.video_root, &schema, &vocab, None).unwrap();
        let refs: Vec<&VideoSample> = samples.iter().collect();

        let config = PreprocessConfig {
            target_frames: 4,
            resize: (24, 24),
            crop: (16, 16),
            hflip_prob: 0.5,
            temporal_jitter: 2,
            channel_means: [0.45; 3],
        };
        let batch = preprocess_batch(&refs, &config, true, 77).unwrap();
        assert_eq!(batch.dim(), (3, 3, 4, 16, 16));
        let again = preprocess_batch(&refs, &config, true, 77).unwrap();
        assert_eq!(batch, again);

        let (scores, labels, captions) = batch_targets(&refs);
        assert_eq!(scores.len(), 3);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert_eq!(labels.len(), 3);
        assert_eq!(captions.len(), 3);
    }
}
