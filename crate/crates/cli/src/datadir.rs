//! The on-disk dataset convention shared by every subcommand: a directory
//! holding `annotations.jsonl`, a `frames/` tree of PNG frame directories,
//! and `train.txt`/`test.txt` split manifests — exactly what `aqa synth`
//! writes. The vocabulary is always built from the training split, so a
//! model evaluated later sees the same token table it was trained with.

use std::path::{Path, PathBuf};

use aqa_core::data::{DiveLabelSchema, VideoSample, Vocabulary};
use aqa_core::datapipe::{build_vocabulary, load_dataset, read_split_manifest};
use aqa_core::error::AqaError;
use aqa_core::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

pub struct DataDir {
    pub annotations: PathBuf,
    pub video_root: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

impl DataDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let annotations = dir.join("annotations.jsonl");
        if !annotations.exists() {
            return Err(AqaError::MissingInput(annotations));
        }
        Ok(DataDir {
            annotations,
            video_root: dir.join("frames"),
            train_manifest: dir.join("train.txt"),
            test_manifest: dir.join("test.txt"),
        })
    }
}

pub struct LoadedSplits {
    pub train: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
    pub vocab: Vocabulary,
}

/// Loads both splits of a dataset directory. Per-sample load failures are
/// logged and skipped (mirroring the loader's contract); an unreadable
/// manifest or annotation file fails the call.
pub fn load_splits(dir: &Path) -> Result<LoadedSplits> {
    let data = DataDir::open(dir)?;
    let schema = DiveLabelSchema::default();
    let train_ids = read_split_manifest(&data.train_manifest)?;
    let test_ids = read_split_manifest(&data.test_manifest)?;
    let vocab = build_vocabulary(&data.annotations, Some(&train_ids))?;
    let (train, train_summary) = load_dataset(
        &data.annotations,
        &data.video_root,
        &schema,
        &vocab,
        Some(&train_ids),
    )?;
    let (test, test_summary) = load_dataset(
        &data.annotations,
        &data.video_root,
        &schema,
        &vocab,
        Some(&test_ids),
    )?;
    for (id, reason) in train_summary.skipped.iter().chain(&test_summary.skipped) {
        log::warn!("skipped {id}: {reason}");
    }
    Ok(LoadedSplits { train, test, vocab })
}
