//! Shared domain types: dive labels and their schema, judged scores, caption
//! tokens and vocabularies, and the line-oriented annotation file format.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use crate::error::AqaError;
use crate::Result;

/// Padding token index, fixed for checkpoint portability.
pub const PAD: usize = 0;
/// Sequence-start token index.
pub const START: usize = 1;
/// Sequence-end token index.
pub const END: usize = 2;
/// Unknown-token index.
pub const UNK: usize = 3;
/// Number of reserved vocabulary slots.
pub const RESERVED_TOKENS: usize = 4;
/// Hard cap on caption content length (tokens between START and END).
pub const MAX_CAPTION_TOKENS: usize = 100;

const RESERVED_NAMES: [&str; RESERVED_TOKENS] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Human-readable names of the five classification sub-tasks, in the order
/// used by every per-sub-task array in the crate.
pub const SUB_TASKS: [&str; 5] = ["position", "armstand", "rotation", "somersaults", "twists"];

/// Class lists for the five factorized dive-label fields.
///
/// Three categorical fields are named classes; somersault and twist counts
/// are half-unit grids. The default schema is the standard one: positions
/// (Free, Tuck, Pike), armstand (No, Yes), rotations (Inward, Reverse,
/// Backward, Forward), somersaults 0–4.5, twists 0–3.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiveLabelSchema {
    pub position_classes: Vec<String>,
    pub armstand_classes: Vec<String>,
    pub rotation_classes: Vec<String>,
    pub somersault_classes: Vec<f64>,
    pub twist_classes: Vec<f64>,
}

fn half_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * 0.5).collect()
}

impl Default for DiveLabelSchema {
    fn default() -> Self {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        DiveLabelSchema {
            position_classes: names(&["Free", "Tuck", "Pike"]),
            armstand_classes: names(&["No", "Yes"]),
            rotation_classes: names(&["Inward", "Reverse", "Backward", "Forward"]),
            somersault_classes: half_grid(10),
            twist_classes: half_grid(8),
        }
    }
}

impl DiveLabelSchema {
    /// Class counts per sub-task, in [`SUB_TASKS`] order.
    pub fn cardinalities(&self) -> [usize; 5] {
        [
            self.position_classes.len(),
            self.armstand_classes.len(),
            self.rotation_classes.len(),
            self.somersault_classes.len(),
            self.twist_classes.len(),
        ]
    }

    /// Length of the concatenated one-hot encoding (sum of cardinalities).
    pub fn total_classes(&self) -> usize {
        self.cardinalities().iter().sum()
    }

    /// Checks the structural invariants: fixed cardinalities and strictly
    /// increasing half-unit numeric grids starting at zero.
    pub fn validate(&self) -> Result<()> {
        if self.cardinalities() != [3, 2, 4, 10, 8] {
            return Err(AqaError::Data(format!(
                "schema cardinalities must be (3, 2, 4, 10, 8), got {:?}",
                self.cardinalities()
            )));
        }
        for (name, grid) in [
            ("somersault_classes", &self.somersault_classes),
            ("twist_classes", &self.twist_classes),
        ] {
            for (i, &v) in grid.iter().enumerate() {
                if (v - i as f64 * 0.5).abs() > 1e-12 {
                    return Err(AqaError::Data(format!(
                        "{name} must be 0.0, 0.5, … in order; entry {i} is {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A dive label as class indices into a [`DiveLabelSchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiveLabel {
    pub position: usize,
    pub armstand: usize,
    pub rotation: usize,
    pub somersaults: usize,
    pub twists: usize,
}

impl DiveLabel {
    /// The five indices in [`SUB_TASKS`] order.
    pub fn indices(&self) -> [usize; 5] {
        [
            self.position,
            self.armstand,
            self.rotation,
            self.somersaults,
            self.twists,
        ]
    }

    /// Builds a label from indices, validating each against the schema.
    pub fn from_indices(indices: [usize; 5], schema: &DiveLabelSchema) -> Result<Self> {
        let cards = schema.cardinalities();
        for (i, (&idx, &card)) in indices.iter().zip(cards.iter()).enumerate() {
            if idx >= card {
                return Err(AqaError::Data(format!(
                    "{} index {idx} out of range (cardinality {card})",
                    SUB_TASKS[i]
                )));
            }
        }
        Ok(DiveLabel {
            position: indices[0],
            armstand: indices[1],
            rotation: indices[2],
            somersaults: indices[3],
            twists: indices[4],
        })
    }

    /// Concatenated one-hot encoding: one block per sub-task, exactly five
    /// ones in total.
    pub fn one_hot(&self, schema: &DiveLabelSchema) -> Array1<f64> {
        let mut v = Array1::zeros(schema.total_classes());
        let mut offset = 0;
        for (&idx, &card) in self.indices().iter().zip(schema.cardinalities().iter()) {
            v[offset + idx] = 1.0;
            offset += card;
        }
        v
    }
}

/// A judged action-quality score: the raw competition value plus its
/// normalized form in `[0, 1]` (raw divided by the dataset's normalizer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AqaScore {
    raw: f64,
    normalized: f64,
}

impl AqaScore {
    /// Normalizes `raw` by `normalizer` (the maximum raw training score of
    /// the owning dataset). Rejects negative scores, non-positive
    /// normalizers, and raw values exceeding the normalizer.
    pub fn new(raw: f64, normalizer: f64) -> Result<Self> {
        if !normalizer.is_finite() || normalizer <= 0.0 {
            return Err(AqaError::Data(format!(
                "score normalizer must be positive and finite, got {normalizer}"
            )));
        }
        if !raw.is_finite() || raw < 0.0 {
            return Err(AqaError::Data(format!(
                "raw score must be non-negative and finite, got {raw}"
            )));
        }
        let normalized = raw / normalizer;
        if normalized > 1.0 {
            return Err(AqaError::Data(format!(
                "raw score {raw} exceeds normalizer {normalizer}"
            )));
        }
        Ok(AqaScore { raw, normalized })
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn normalized(&self) -> f64 {
        self.normalized
    }
}

/// Token table with fixed reserved indices (PAD=0, START=1, END=2, UNK=3).
///
/// Serializes as the plain index-to-token list; deserialization re-checks the
/// reserved prefix so checkpoints stay portable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    index_to_token: Vec<String>,
    token_to_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from a caption corpus. Tokens enter in first
    /// occurrence order after [`tokenize`], so the result is deterministic
    /// in the corpus order.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index_to_token: Vec<String> =
            RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut token_to_index: HashMap<String, usize> = index_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for caption in captions {
            for token in tokenize(caption) {
                if !token_to_index.contains_key(&token) {
                    token_to_index.insert(token.clone(), index_to_token.len());
                    index_to_token.push(token);
                }
            }
        }
        Vocabulary {
            index_to_token,
            token_to_index,
        }
    }

    /// Total size including the four reserved slots.
    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `token`, falling back to [`UNK`] for out-of-vocabulary words.
    pub fn index_of(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(UNK)
    }

    /// Token string at `index`, if in range.
    pub fn token(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(|s| s.as_str())
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.index_to_token
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(index_to_token: Vec<String>) -> std::result::Result<Self, String> {
        if index_to_token.len() < RESERVED_TOKENS
            || index_to_token[..RESERVED_TOKENS] != RESERVED_NAMES
        {
            return Err(format!(
                "vocabulary must begin with the reserved tokens {RESERVED_NAMES:?}"
            ));
        }
        let token_to_index: HashMap<String, usize> = index_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if token_to_index.len() != index_to_token.len() {
            return Err("vocabulary contains duplicate tokens".to_string());
        }
        Ok(Vocabulary {
            index_to_token,
            token_to_index,
        })
    }
}

/// Lowercases, splits on whitespace, and strips non-alphanumeric edge
/// characters from each token. Tokens that strip to nothing are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|word| {
            let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// An encoded caption: `START`, at most [`MAX_CAPTION_TOKENS`] content
/// tokens, then `END`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionTokens {
    indices: Vec<usize>,
}

impl CaptionTokens {
    /// Tokenizes and encodes `text`, truncating to the content-length cap.
    /// Empty text yields exactly `(START, END)`.
    pub fn encode(text: &str, vocab: &Vocabulary) -> Self {
        let mut indices = vec![START];
        indices.extend(
            tokenize(text)
                .iter()
                .take(MAX_CAPTION_TOKENS)
                .map(|t| vocab.index_of(t)),
        );
        indices.push(END);
        CaptionTokens { indices }
    }

    /// Wraps a raw index sequence, validating the START…END frame and the
    /// length cap.
    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        if indices.len() < 2 || indices[0] != START || *indices.last().unwrap() != END {
            return Err(AqaError::Data(
                "caption must begin with START and end with END".to_string(),
            ));
        }
        if indices.len() - 2 > MAX_CAPTION_TOKENS {
            return Err(AqaError::Data(format!(
                "caption has {} content tokens (cap {MAX_CAPTION_TOKENS})",
                indices.len() - 2
            )));
        }
        Ok(CaptionTokens { indices })
    }

    /// Full sequence including the START/END frame.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Content length (tokens between START and END).
    pub fn content_len(&self) -> usize {
        self.indices.len() - 2
    }

    /// Per-step prediction targets for teacher forcing: everything after
    /// START, i.e. the content tokens followed by END.
    pub fn targets(&self) -> &[usize] {
        &self.indices[1..]
    }

    /// Number of teacher-forced decoder steps (content length + 1; the
    /// decoder predicts through END).
    pub fn steps(&self) -> usize {
        self.indices.len() - 1
    }

    /// Reconstructs the token text, skipping reserved indices.
    pub fn decode(&self, vocab: &Vocabulary) -> String {
        self.indices
            .iter()
            .filter(|&&i| i >= RESERVED_TOKENS)
            .filter_map(|&i| vocab.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for CaptionTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.indices)
    }
}

/// A fully loaded training sample: decoded frames plus every label.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub sample_id: String,
    /// Frames shaped (T, H, W, 3), 8-bit color.
    pub frames: Array4<u8>,
    pub score: AqaScore,
    pub label: DiveLabel,
    pub caption: CaptionTokens,
}

/// First line of an annotation file: format version plus the dataset's
/// score-normalization constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationHeader {
    pub schema_version: u32,
    pub score_normalizer: f64,
}

impl Default for AnnotationHeader {
    fn default() -> Self {
        AnnotationHeader {
            schema_version: 1,
            score_normalizer: 1.0,
        }
    }
}

/// One dataset row: sample identity, frame location, raw score, the five
/// human-readable dive fields, and the caption text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub video_path: String,
    /// Inclusive (start, end) frame indices within the video directory.
    pub frame_range: (usize, usize),
    pub raw_score: f64,
    pub position: String,
    pub armstand: String,
    pub rotation: String,
    pub somersaults: f64,
    pub twists: f64,
    pub caption_text: String,
}

fn resolve_name(field: &str, classes: &[String], given: &str) -> Result<usize> {
    let want = given.trim().to_lowercase();
    let position = |needle: &str| {
        classes
            .iter()
            .position(|name| name.to_lowercase() == needle)
    };
    if let Some(i) = position(&want) {
        return Ok(i);
    }
    // Annotations sometimes pluralize direction names ("Backwards"); accept
    // a single trailing 's' that the schema name lacks.
    if let Some(stripped) = want.strip_suffix('s') {
        if let Some(i) = position(stripped) {
            return Ok(i);
        }
    }
    Err(AqaError::Data(format!(
        "{field} '{given}' is not one of {classes:?}"
    )))
}

fn resolve_half_step(field: &str, classes: &[f64], value: f64) -> Result<usize> {
    let scaled = value * 2.0;
    if !scaled.is_finite() || (scaled - scaled.round()).abs() > 1e-9 {
        return Err(AqaError::Data(format!(
            "{field} {value} is not on the 0.5 grid"
        )));
    }
    let idx = scaled.round();
    if idx < 0.0 || idx >= classes.len() as f64 {
        return Err(AqaError::Data(format!(
            "{field} {value} out of range (0 to {})",
            classes.last().copied().unwrap_or(0.0)
        )));
    }
    Ok(idx as usize)
}

/// Resolves a record's human-readable dive fields to schema indices.
/// Name lookup is case-insensitive and tolerates a pluralizing trailing 's';
/// numeric fields must sit on the half-unit grid inside the schema range.
pub fn label_from_record(rec: &AnnotationRecord, schema: &DiveLabelSchema) -> Result<DiveLabel> {
    Ok(DiveLabel {
        position: resolve_name("position", &schema.position_classes, &rec.position)?,
        armstand: resolve_name("armstand", &schema.armstand_classes, &rec.armstand)?,
        rotation: resolve_name("rotation", &schema.rotation_classes, &rec.rotation)?,
        somersaults: resolve_half_step("somersaults", &schema.somersault_classes, rec.somersaults)?,
        twists: resolve_half_step("twists", &schema.twist_classes, rec.twists)?,
    })
}

/// A parsed annotation file: the header plus all records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub header: AnnotationHeader,
    pub records: Vec<AnnotationRecord>,
}

/// Reads a JSON-lines annotation file. The first non-blank line is the
/// header; each following line is one record. Every malformed line is
/// collected and reported together with its line number, and duplicate
/// sample ids reject the whole file. An empty file yields an empty record
/// list under a default header (with a warning).
pub fn read_annotations(path: &Path) -> Result<AnnotationFile> {
    if !path.exists() {
        return Err(AqaError::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let Some((header_no, header_line)) = lines.next() else {
        log::warn!("annotation file {} is empty", path.display());
        return Ok(AnnotationFile {
            header: AnnotationHeader::default(),
            records: Vec::new(),
        });
    };

    let mut problems: Vec<String> = Vec::new();
    let header: AnnotationHeader = match serde_json::from_str(header_line) {
        Ok(h) => h,
        Err(e) => {
            problems.push(format!("line {header_no}: bad header: {e}"));
            AnnotationHeader::default()
        }
    };
    if header.score_normalizer <= 0.0 {
        problems.push(format!(
            "line {header_no}: score_normalizer must be positive, got {}",
            header.score_normalizer
        ));
    }

    let mut records = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (line_no, line) in lines {
        match serde_json::from_str::<AnnotationRecord>(line) {
            Ok(rec) => {
                if !seen_ids.insert(rec.sample_id.clone()) {
                    problems.push(format!(
                        "line {line_no}: duplicate sample_id '{}'",
                        rec.sample_id
                    ));
                } else if rec.frame_range.1 < rec.frame_range.0 {
                    problems.push(format!(
                        "line {line_no}: frame_range {:?} is reversed",
                        rec.frame_range
                    ));
                } else if rec.raw_score < 0.0 {
                    problems.push(format!(
                        "line {line_no}: raw_score {} is negative",
                        rec.raw_score
                    ));
                } else {
                    records.push(rec);
                }
            }
            Err(e) => problems.push(format!("line {line_no}: {e}")),
        }
    }

    if problems.is_empty() {
        Ok(AnnotationFile { header, records })
    } else {
        Err(AqaError::Data(format!(
            "annotation file {}: {}",
            path.display(),
            problems.join("; ")
        )))
    }
}

/// Writes an annotation file in the format [`read_annotations`] expects.
pub fn write_annotations(
    path: &Path,
    header: &AnnotationHeader,
    records: &[AnnotationRecord],
) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{}", serde_json::to_string(header)?)?;
    for rec in records {
        writeln!(out, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        position: &str,
        armstand: &str,
        rotation: &str,
        somersaults: f64,
        twists: f64,
    ) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: "s0".to_string(),
            video_path: "s0".to_string(),
            frame_range: (0, 95),
            raw_score: 50.0,
            position: position.to_string(),
            armstand: armstand.to_string(),
            rotation: rotation.to_string(),
            somersaults,
            twists,
            caption_text: "a dive".to_string(),
        }
    }

    #[test]
    fn default_schema_has_expected_cardinalities() {
        let schema = DiveLabelSchema::default();
        schema.validate().unwrap();
        assert_eq!(schema.cardinalities(), [3, 2, 4, 10, 8]);
        assert_eq!(schema.total_classes(), 27);
    }

    #[test]
    fn tuck_backwards_dive_resolves_to_expected_indices() {
        let schema = DiveLabelSchema::default();
        let label = label_from_record(&record("Tuck", "No", "Backwards", 3.5, 0.0), &schema)
            .unwrap();
        assert_eq!(label.indices(), [1, 0, 2, 7, 0]);
    }

    #[test]
    fn free_armstand_dive_resolves_to_expected_indices() {
        let schema = DiveLabelSchema::default();
        let label = label_from_record(&record("Free", "Yes", "Backwards", 2.0, 2.5), &schema)
            .unwrap();
        assert_eq!(label.indices(), [0, 1, 2, 4, 5]);
    }

    #[test]
    fn name_resolution_is_case_insensitive() {
        let schema = DiveLabelSchema::default();
        let label = label_from_record(&record("pike", "NO", "forwards", 1.0, 0.5), &schema)
            .unwrap();
        assert_eq!(label.indices(), [2, 0, 3, 2, 1]);
    }

    #[test]
    fn out_of_range_somersaults_are_rejected() {
        let schema = DiveLabelSchema::default();
        let err = label_from_record(&record("Tuck", "No", "Backward", 5.0, 0.0), &schema)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("somersaults"), "message was: {msg}");
        assert!(msg.contains("out of range"), "message was: {msg}");
    }

    #[test]
    fn off_grid_twists_are_rejected() {
        let schema = DiveLabelSchema::default();
        let err = label_from_record(&record("Tuck", "No", "Backward", 1.0, 0.3), &schema)
            .unwrap_err();
        assert!(err.to_string().contains("0.5 grid"));
    }

    #[test]
    fn unknown_position_names_the_field() {
        let schema = DiveLabelSchema::default();
        let err = label_from_record(&record("Swan", "No", "Backward", 1.0, 0.0), &schema)
            .unwrap_err();
        assert!(err.to_string().contains("position 'Swan'"));
    }

    #[test]
    fn one_hot_sets_exactly_five_ones_at_block_offsets() {
        let schema = DiveLabelSchema::default();
        let label = DiveLabel::from_indices([1, 0, 2, 7, 0], &schema).unwrap();
        let v = label.one_hot(&schema);
        assert_eq!(v.len(), 27);
        assert_eq!(v.sum(), 5.0);
        // Block offsets: 0, 3, 5, 9, 19.
        for hot in [1, 3, 5 + 2, 9 + 7, 19] {
            assert_eq!(v[hot], 1.0, "expected a one at {hot}");
        }
    }

    #[test]
    fn label_indices_are_validated_against_schema() {
        let schema = DiveLabelSchema::default();
        assert!(DiveLabel::from_indices([0, 0, 0, 9, 7], &schema).is_ok());
        assert!(DiveLabel::from_indices([3, 0, 0, 0, 0], &schema).is_err());
        assert!(DiveLabel::from_indices([0, 0, 0, 10, 0], &schema).is_err());
    }

    #[test]
    fn score_normalization_divides_by_dataset_constant() {
        let score = AqaScore::new(76.8, 102.6).unwrap();
        assert_eq!(score.raw(), 76.8);
        assert!((score.normalized() - 76.8 / 102.6).abs() < 1e-15);
    }

    #[test]
    fn scores_outside_unit_range_are_rejected() {
        assert!(AqaScore::new(120.0, 100.0).is_err());
        assert!(AqaScore::new(-1.0, 100.0).is_err());
        assert!(AqaScore::new(1.0, 0.0).is_err());
    }

    #[test]
    fn tokenize_lowercases_and_strips_edge_punctuation() {
        assert_eq!(
            tokenize("A Great dive, really!  (10m)"),
            vec!["a", "great", "dive", "really", "10m"]
        );
        assert_eq!(tokenize("  ...  "), Vec::<String>::new());
    }

    #[test]
    fn vocabulary_reserves_fixed_indices_and_maps_unknowns() {
        let vocab = Vocabulary::build(["good dive", "great dive"]);
        assert_eq!(vocab.index_of("good"), 4);
        assert_eq!(vocab.index_of("dive"), 5);
        assert_eq!(vocab.index_of("great"), 6);
        assert_eq!(vocab.index_of("splash"), UNK);
        assert_eq!(vocab.token(PAD), Some("<pad>"));
        assert_eq!(vocab.token(START), Some("<start>"));
        assert_eq!(vocab.token(END), Some("<end>"));
        assert_eq!(vocab.token(UNK), Some("<unk>"));
        assert_eq!(vocab.len(), 7);
    }

    #[test]
    fn vocabulary_round_trips_through_json() {
        let vocab = Vocabulary::build(["a twisting dive"]);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
    }

    #[test]
    fn vocabulary_json_without_reserved_prefix_is_rejected() {
        let err = serde_json::from_str::<Vocabulary>(r#"["dive", "good"]"#);
        assert!(err.is_err());
    }

    #[test]
    fn empty_caption_encodes_to_start_end() {
        let vocab = Vocabulary::build(["good dive"]);
        let caption = CaptionTokens::encode("", &vocab);
        assert_eq!(caption.indices(), [START, END]);
        assert_eq!(caption.content_len(), 0);
        assert_eq!(caption.steps(), 1);
    }

    #[test]
    fn known_words_encode_to_their_indices() {
        let vocab = Vocabulary::build(["good dive"]);
        let caption = CaptionTokens::encode("good dive", &vocab);
        assert_eq!(
            caption.indices(),
            [START, vocab.index_of("good"), vocab.index_of("dive"), END]
        );
        assert_eq!(caption.content_len(), 2);
        assert_eq!(caption.targets().len(), caption.steps());
    }

    #[test]
    fn long_caption_truncates_to_the_cap_with_end_last() {
        let text = (0..150).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let vocab = Vocabulary::build([text.as_str()]);
        let caption = CaptionTokens::encode(&text, &vocab);
        assert_eq!(caption.content_len(), MAX_CAPTION_TOKENS);
        assert_eq!(*caption.indices().last().unwrap(), END);
    }

    #[test]
    fn caption_round_trip_reproduces_normalized_text() {
        let vocab = Vocabulary::build(["a Fine, twisting entry!"]);
        let caption = CaptionTokens::encode("A fine twisting ENTRY", &vocab);
        assert_eq!(caption.decode(&vocab), "a fine twisting entry");
    }

    #[test]
    fn caption_frames_are_validated() {
        assert!(CaptionTokens::from_indices(vec![START, 5, END]).is_ok());
        assert!(CaptionTokens::from_indices(vec![5, END]).is_err());
        assert!(CaptionTokens::from_indices(vec![START, 5]).is_err());
        let too_long: Vec<usize> = std::iter::once(START)
            .chain(std::iter::repeat(5).take(MAX_CAPTION_TOKENS + 1))
            .chain(std::iter::once(END))
            .collect();
        assert!(CaptionTokens::from_indices(too_long).is_err());
    }

    #[test]
    fn annotation_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let header = AnnotationHeader {
            schema_version: 1,
            score_normalizer: 102.6,
        };
        let records = vec![record("Tuck", "No", "Backward", 3.5, 0.0)];
        write_annotations(&path, &header, &records).unwrap();
        let file = read_annotations(&path).unwrap();
        assert_eq!(file.header, header);
        assert_eq!(file.records, records);
    }

    #[test]
    fn empty_annotation_file_yields_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let file = read_annotations(&path).unwrap();
        assert!(file.records.is_empty());
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let header = serde_json::to_string(&AnnotationHeader::default()).unwrap();
        let good = serde_json::to_string(&record("Tuck", "No", "Backward", 1.0, 0.0)).unwrap();
        fs::write(&path, format!("{header}\n{good}\nnot json\n{{\"sample_id\": 3}}\n")).unwrap();
        let err = read_annotations(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message was: {msg}");
        assert!(msg.contains("line 4"), "message was: {msg}");
    }

    #[test]
    fn duplicate_sample_ids_reject_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let header = AnnotationHeader::default();
        let rec = record("Tuck", "No", "Backward", 1.0, 0.0);
        write_annotations(&path, &header, &[rec.clone(), rec]).unwrap();
        let err = read_annotations(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate sample_id 's0'"));
    }

    #[test]
    fn missing_annotation_file_names_the_path() {
        let err = read_annotations(Path::new("/nonexistent/ann.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ann.jsonl"));
        assert!(err.is_validation());
    }
}
