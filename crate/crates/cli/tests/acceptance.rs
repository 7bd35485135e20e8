//! Release gates for the workspace, one test per numbered criterion. Each
//! test exercises a property end to end — hand-checked loss values, finite
//! difference gradients, publication-scale tensor shapes, clip-order
//! invariance, metric oracles, small-set memorization, the experiment
//! drivers, and bit-level determinism — and prints one
//! `ACCEPTANCE <n> PASS` line with the measured figures.
//!
//! The memorization and experiment-driver gates train real (tiny-preset)
//! models for hundreds of epochs and are the slow part of the suite; the
//! full-size shape and invariance gates push batches through the
//! publication-scale networks and take a few minutes of CPU each.

use std::path::Path;
use std::process::{Command, Output};

use aqa_core::captioning::{Captioner, CaptionerConfig};
use aqa_core::data::{
    CaptionTokens, DiveLabel, DiveLabelSchema, VideoSample, Vocabulary, END, START,
};
use aqa_core::datapipe::{
    build_vocabulary, generate_synthetic, load_dataset, sample_rng, SyntheticSpec,
};
use aqa_core::harness::{train, LrSchedule, TrainConfig};
use aqa_core::losses::{
    aqa_loss, aqa_loss_grad, captioning_loss, captioning_loss_grad, classification_loss,
    classification_loss_grad, total_loss, CaptionNorm, LossWeights,
};
use aqa_core::metrics::{bleu_corpus, spearman};
use aqa_core::mtl::{Architecture, ModelConfig, MtlModel, TaskConfig};
use aqa_nn::gradcheck::{central_diff, max_rel_err};
use ndarray::{arr1, s, Array, Array1, Array2, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

/// Generates a labeled synthetic dataset and loads every sample of it.
fn synth_samples(
    dir: &Path,
    n: usize,
    seed: u64,
    frames: usize,
    hw: usize,
) -> (Vec<VideoSample>, Vocabulary) {
    let spec = SyntheticSpec {
        frames,
        frame_size: (hw, hw),
        ..SyntheticSpec::new(seed, n)
    };
    let out = generate_synthetic(&spec, dir).unwrap();
    let vocab = build_vocabulary(&out.annotation_path, None).unwrap();
    let schema = DiveLabelSchema::default();
    let (samples, summary) =
        load_dataset(&out.annotation_path, &out.video_root, &schema, &vocab, None).unwrap();
    assert!(summary.skipped.is_empty());
    (samples, vocab)
}

fn random_video(config: &ModelConfig, batch: usize, seed: u64) -> Array5<f32> {
    let (h, w) = config.frame_hw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_shape_simple_fn((batch, 3, config.frames, h, w), || {
        rng.gen_range(0.0f32..1.0)
    })
}

#[test]
fn criterion_1_loss_values_match_hand_arithmetic() {
    // (1, 2) vs (1, 4): ((0² + 0) + (2² + 2)) / 2 = 3; (3) vs (1): 4 + 2 = 6.
    let two = aqa_loss(arr1(&[1.0, 2.0]).view(), arr1(&[1.0, 4.0]).view()).unwrap();
    assert!((two - 3.0).abs() < 1e-6, "got {two}");
    let one = aqa_loss(arr1(&[3.0]).view(), arr1(&[1.0]).view()).unwrap();
    assert!((one - 6.0).abs() < 1e-6, "got {one}");

    // Uniform logits over the factorized label space cost the sum of the
    // per-sub-task log cardinalities: ln(3·2·4·10·8) = ln 1920.
    let schema = DiveLabelSchema::default();
    let labels = vec![DiveLabel::from_indices([2, 1, 0, 4, 3], &schema).unwrap()];
    let logits: Vec<Array2<f64>> = schema
        .cardinalities()
        .iter()
        .map(|&k| Array2::zeros((1, k)))
        .collect();
    let cls = classification_loss(&logits, &labels).unwrap();
    assert!((cls - 1920f64.ln()).abs() < 1e-6, "got {cls}");
    assert!((cls - 7.560080465021827).abs() < 1e-6, "got {cls}");

    // One content token plus END over a 10-token vocabulary: 2·ln 10.
    let step_logits = vec![Array2::<f64>::zeros((2, 10))];
    let targets: Vec<&[usize]> = vec![&[5, 2]];
    let cap = captioning_loss(&step_logits, &targets, CaptionNorm::SumSteps).unwrap();
    assert!((cap - 4.605170185988091).abs() < 1e-6, "got {cap}");

    // Weighted combination at the default (1, 1, 0.01) weights:
    // 3 + 7.4759 + 0.01·4.60517 = 10.5219517.
    let report = total_loss(
        3.0,
        7.4759,
        4.60517,
        &LossWeights::default(),
        &TaskConfig::all(),
    );
    assert!((report.total - 10.5219517).abs() < 1e-6, "got {}", report.total);

    println!(
        "ACCEPTANCE 1 PASS: loss oracles within 1e-6 (aqa {two:.1}/{one:.1}, \
         classification ln1920 = {cls:.9}, caption 2ln10 = {cap:.9}, total {:.7})",
        report.total
    );
}

#[test]
fn criterion_2_analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    // Score regression, constructed so every |x − y| clears the 1e-2 band
    // around the absolute-error kink.
    let target: Array1<f64> = Array::from_shape_simple_fn(10, || rng.gen_range(0.0..1.0));
    let pred = &target
        + &Array::from_shape_simple_fn(10, || {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.05..0.5)
        });
    assert!(pred
        .iter()
        .zip(target.iter())
        .all(|(&x, &y)| (x - y).abs() >= 1e-2));
    let analytic = aqa_loss_grad(pred.view(), target.view()).unwrap().into_dyn();
    let numeric = central_diff(
        |x| aqa_loss(x.view().into_dimensionality().unwrap(), target.view()).unwrap(),
        &pred.into_dyn(),
        1e-4,
    );
    let aqa_err = max_rel_err(&analytic, &numeric, 1e-8);
    assert!(aqa_err < 1e-4, "aqa gradient error {aqa_err:.2e}");

    // Factorized classification, each sub-task logit matrix in turn.
    let schema = DiveLabelSchema::default();
    let labels = vec![
        DiveLabel::from_indices([0, 1, 3, 4, 2], &schema).unwrap(),
        DiveLabel::from_indices([2, 0, 1, 9, 7], &schema).unwrap(),
        DiveLabel::from_indices([1, 1, 2, 0, 5], &schema).unwrap(),
    ];
    let logits: Vec<Array2<f64>> = schema
        .cardinalities()
        .iter()
        .map(|&k| Array::from_shape_simple_fn((3, k), || rng.gen_range(-1.5..1.5)))
        .collect();
    let grads = classification_loss_grad(&logits, &labels).unwrap();
    let mut cls_err = 0f64;
    for task in 0..5 {
        let numeric = central_diff(
            |x| {
                let mut perturbed = logits.clone();
                perturbed[task] = x.view().into_dimensionality().unwrap().to_owned();
                classification_loss(&perturbed, &labels).unwrap()
            },
            &logits[task].clone().into_dyn(),
            1e-4,
        );
        cls_err = cls_err.max(max_rel_err(&grads[task].clone().into_dyn(), &numeric, 1e-8));
    }
    assert!(cls_err < 1e-4, "classification gradient error {cls_err:.2e}");

    // Teacher-forced captioning, per-sample step logits.
    let gold: Vec<&[usize]> = vec![&[4, 6, 2], &[5, 2]];
    let step_logits: Vec<Array2<f64>> = vec![
        Array::from_shape_simple_fn((3, 9), || rng.gen_range(-1.0..1.0)),
        Array::from_shape_simple_fn((2, 9), || rng.gen_range(-1.0..1.0)),
    ];
    let cap_grads = captioning_loss_grad(&step_logits, &gold, CaptionNorm::SumSteps).unwrap();
    let mut cap_err = 0f64;
    for i in 0..step_logits.len() {
        let numeric = central_diff(
            |x| {
                let mut perturbed = step_logits.clone();
                perturbed[i] = x.view().into_dimensionality().unwrap().to_owned();
                captioning_loss(&perturbed, &gold, CaptionNorm::SumSteps).unwrap()
            },
            &step_logits[i].clone().into_dyn(),
            1e-4,
        );
        cap_err = cap_err.max(max_rel_err(&cap_grads[i].clone().into_dyn(), &numeric, 1e-8));
    }
    assert!(cap_err < 1e-4, "caption gradient error {cap_err:.2e}");

    // Recurrent path: the decoder NLL differentiated back to the encoder
    // states, through every GRU step, in f64 with dropout off.
    let config = CaptionerConfig {
        feature_dim: 6,
        hidden: 8,
        embed: 5,
        vocab: 11,
        dropout: 0.0,
        max_decode_steps: 10,
    };
    let mut captioner = Captioner::<f64>::new(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let captions = vec![
        CaptionTokens::from_indices(vec![START, 7, 4, 9, END]).unwrap(),
        CaptionTokens::from_indices(vec![START, 5, END]).unwrap(),
    ];
    let caption_targets: Vec<&[usize]> = captions.iter().map(|c| c.targets()).collect();
    let states: Array2<f64> = Array::from_shape_simple_fn((2, 8), || rng.gen_range(-0.8..0.8));
    let logits = captioner
        .decode_teacher_forced(&states, &captions, true, &mut sample_rng(0, 0))
        .unwrap();
    let d_logits = captioning_loss_grad(&logits, &caption_targets, CaptionNorm::SumSteps).unwrap();
    let analytic = captioner.backward_decode(&d_logits).into_dyn();
    let numeric = central_diff(
        |x| {
            let states = x.view().into_dimensionality().unwrap().to_owned();
            let logits = captioner
                .decode_teacher_forced(&states, &captions, false, &mut sample_rng(0, 0))
                .unwrap();
            captioning_loss(&logits, &caption_targets, CaptionNorm::SumSteps).unwrap()
        },
        &states.into_dyn(),
        1e-4,
    );
    let recurrent_err = max_rel_err(&analytic, &numeric, 1e-8);
    assert!(recurrent_err < 1e-3, "recurrent gradient error {recurrent_err:.2e}");

    println!(
        "ACCEPTANCE 2 PASS: finite-difference gradients agree (aqa {aqa_err:.1e}, \
         classification {cls_err:.1e}, caption {cap_err:.1e} < 1e-4; \
         recurrent {recurrent_err:.1e} < 1e-3)"
    );
}

#[test]
fn criterion_3_full_size_networks_produce_the_documented_shapes() {
    let vocab = Vocabulary::build(["forward dive with a tight tuck"]);
    let schema = DiveLabelSchema::default();
    let captions: Vec<CaptionTokens> = (0..3)
        .map(|i| CaptionTokens::from_indices(vec![START, 4 + i, 5, END]).unwrap())
        .collect();

    let config = ModelConfig::full(Architecture::C3dAvg, vocab.len());
    let mut model = MtlModel::<f32>::new(config.clone(), 7).unwrap();
    let video = random_video(&config, 3, 70);
    let out = model
        .forward(&video, Some(&captions), TaskConfig::all(), false, &mut sample_rng(0, 0))
        .unwrap();
    assert_eq!(out.scores.len(), 3);
    let class_logits = out.class_logits.as_ref().unwrap();
    assert_eq!(class_logits.len(), 5);
    for (m, k) in class_logits.iter().zip(schema.cardinalities()) {
        assert_eq!(m.dim(), (3, k));
    }
    for (m, c) in out.caption_logits.as_ref().unwrap().iter().zip(&captions) {
        assert_eq!(m.dim(), (c.steps(), vocab.len()));
    }
    let c3d_trace = model.shape_trace(&video).unwrap();
    assert_eq!(c3d_trace.body, [3, 512, 1, 4, 4]);
    assert_eq!(c3d_trace.head, None);

    let config = ModelConfig::full(Architecture::Mscadc, vocab.len());
    let mut model = MtlModel::<f32>::new(config.clone(), 7).unwrap();
    let video = random_video(&config, 3, 71);
    let out = model
        .forward(&video, Some(&captions), TaskConfig::all(), false, &mut sample_rng(0, 0))
        .unwrap();
    assert_eq!(out.scores.len(), 3);
    let class_logits = out.class_logits.as_ref().unwrap();
    assert_eq!(class_logits.len(), 5);
    for (m, k) in class_logits.iter().zip(schema.cardinalities()) {
        assert_eq!(m.dim(), (3, k));
    }
    for (m, c) in out.caption_logits.as_ref().unwrap().iter().zip(&captions) {
        assert_eq!(m.dim(), (c.steps(), vocab.len()));
    }
    let mscadc_trace = model.shape_trace(&video).unwrap();
    assert_eq!(mscadc_trace.body, [3, 256, 4, 22, 22]);
    assert_eq!(mscadc_trace.head, Some([3, 12, 2, 11, 11]));

    println!(
        "ACCEPTANCE 3 PASS: batch-3 outputs check out; c3d pool-5 {:?}, \
         mscadc body {:?} / head {:?}",
        &c3d_trace.body[1..],
        &mscadc_trace.body[1..],
        &mscadc_trace.head.unwrap()[1..]
    );
}

#[test]
fn criterion_4_clip_aggregation_is_order_invariant_and_exact_on_repeats() {
    let vocab = Vocabulary::build(["forward dive with a tight tuck"]);
    let config = ModelConfig::full(Architecture::C3dAvg, vocab.len());
    let clips = config.clips();
    assert_eq!(clips, 6);
    let tasks = TaskConfig::with_classification();
    let mut model = MtlModel::<f32>::new(config.clone(), 11).unwrap();

    // Reversing the six clips must not move the video-level outputs by more
    // than float noise.
    let video = random_video(&config, 1, 31);
    let mut reversed = video.clone();
    for k in 0..clips {
        reversed
            .slice_mut(s![.., .., 16 * k..16 * (k + 1), .., ..])
            .assign(&video.slice(s![.., .., 16 * (clips - 1 - k)..16 * (clips - k), .., ..]));
    }
    let base = model
        .forward(&video, None, tasks, false, &mut sample_rng(0, 0))
        .unwrap();
    let permuted = model
        .forward(&reversed, None, tasks, false, &mut sample_rng(0, 0))
        .unwrap();
    let score_delta = (base.scores[0] - permuted.scores[0]).abs();
    assert!(score_delta < 1e-5, "score moved by {score_delta:.2e}");
    let mut logit_delta = 0f64;
    for (a, b) in base
        .class_logits
        .as_ref()
        .unwrap()
        .iter()
        .zip(permuted.class_logits.as_ref().unwrap())
    {
        for (&x, &y) in a.iter().zip(b.iter()) {
            logit_delta = logit_delta.max((x - y).abs());
        }
    }
    assert!(logit_delta < 1e-5, "logits moved by {logit_delta:.2e}");

    // A video of six copies of one clip must reproduce — bit for bit — what
    // a single-clip model with identical weights computes on that clip.
    let mut single_config = config.clone();
    single_config.frames = 16;
    let mut single = MtlModel::<f32>::new(single_config.clone(), 11).unwrap();
    let clip = random_video(&single_config, 1, 32);
    let mut tiled = Array5::<f32>::zeros((1, 3, config.frames, 112, 112));
    for k in 0..clips {
        tiled
            .slice_mut(s![.., .., 16 * k..16 * (k + 1), .., ..])
            .assign(&clip);
    }
    let tiled_out = model
        .forward(&tiled, None, tasks, false, &mut sample_rng(0, 0))
        .unwrap();
    let single_out = single
        .forward(&clip, None, tasks, false, &mut sample_rng(0, 0))
        .unwrap();
    assert_eq!(tiled_out.scores[0], single_out.scores[0]);
    for (a, b) in tiled_out
        .class_logits
        .as_ref()
        .unwrap()
        .iter()
        .zip(single_out.class_logits.as_ref().unwrap())
    {
        assert_eq!(a, b);
    }

    println!(
        "ACCEPTANCE 4 PASS: reversing 6 clips moved score {score_delta:.1e} and \
         logits {logit_delta:.1e} (< 1e-5); identical clips matched the \
         single-clip model exactly"
    );
}

/// Average ranks (1-based, ties averaged) by direct counting.
fn brute_force_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&o| o < x).count() as f64;
            let equal = xs.iter().filter(|&&o| o == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[test]
fn criterion_5_metric_oracles() {
    // Rank correlation against a quadratic-time reimplementation.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0f64;
    for _ in 0..100 {
        let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let got = spearman(&a, &b).unwrap();
        let want = pearson(&brute_force_ranks(&a), &brute_force_ranks(&b));
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-12, "worst brute-force gap {worst:.2e}");

    // The textbook length-3 case: ranks (1,2,3) vs (3,1,2) → −0.5.
    let hand = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
    assert!((hand + 0.5).abs() < 1e-12, "got {hand}");

    // Strictly increasing transforms leave the statistic bit-identical.
    let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let base = spearman(&a, &b).unwrap();
    let exp_a: Vec<f64> = a.iter().map(|&x| x.exp()).collect();
    assert_eq!(spearman(&exp_a, &b).unwrap(), base);
    let affine_b: Vec<f64> = b.iter().map(|&x| 3.0 * x + 11.0).collect();
    assert_eq!(spearman(&a, &affine_b).unwrap(), base);

    // BLEU-1 hand case: "the dive" against "the good dive" has perfect
    // unigram precision shortened by the brevity penalty e^(1 − 3/2).
    let hyps = vec![vec!["the".to_string(), "dive".to_string()]];
    let refs = vec![vec![
        "the".to_string(),
        "good".to_string(),
        "dive".to_string(),
    ]];
    let [b1, _, _, _] = bleu_corpus(&hyps, &refs).unwrap();
    assert!((b1 - (-0.5f64).exp()).abs() < 1e-4, "got {b1}");
    assert!((b1 - 0.6065).abs() < 1e-4, "got {b1}");

    println!(
        "ACCEPTANCE 5 PASS: spearman matches brute force within {worst:.1e} \
         over 100 draws, hand case {hand:.1}, monotone transforms exact; \
         BLEU-1 {b1:.6} ≈ e^-0.5"
    );
}

#[test]
fn criterion_6_both_architectures_memorize_eight_samples() {
    let data_dir = tempdir().unwrap();
    let (samples, vocab) = synth_samples(data_dir.path(), 8, 42, 24, 32);
    assert_eq!(samples.len(), 8);

    let mut lines = Vec::new();
    for arch in [Architecture::C3dAvg, Architecture::Mscadc] {
        let mut config = TrainConfig::new(ModelConfig::tiny(arch, vocab.len()));
        config.lr = 1e-3;
        config.epochs = 200;
        config.augment = false;
        config.weights = LossWeights {
            aqa: 1.0,
            classification: 1.0,
            caption: 1.0,
        };
        config.seed = 5;
        let run = tempdir().unwrap();
        let outcome = train(&config, &samples, &samples, &vocab, run.path()).unwrap();

        let eval = &outcome.final_eval;
        assert!(
            eval.spearman >= 0.95,
            "{}: train spearman {:.4}",
            arch.name(),
            eval.spearman
        );
        for (task, acc) in [
            ("position", eval.acc_position),
            ("armstand", eval.acc_armstand),
            ("rotation", eval.acc_rotation),
            ("somersaults", eval.acc_somersaults),
            ("twists", eval.acc_twists),
        ] {
            assert_eq!(acc, Some(1.0), "{}: {task} accuracy {acc:?}", arch.name());
        }
        let first_nll = outcome.history.first().unwrap().loss.caption;
        let last_nll = outcome.history.last().unwrap().loss.caption;
        assert!(
            last_nll <= 0.2 * first_nll,
            "{}: caption NLL {first_nll:.3} → {last_nll:.3} ({}% of epoch 1)",
            arch.name(),
            (100.0 * last_nll / first_nll).round()
        );
        lines.push(format!(
            "{} spearman {:.3}, caption NLL {:.2} → {:.2}",
            arch.name(),
            eval.spearman,
            first_nll,
            last_nll
        ));
    }

    println!(
        "ACCEPTANCE 6 PASS: 8 samples memorized over 200 epochs — {}; all five \
         sub-task accuracies 100%",
        lines.join("; ")
    );
}

fn aqa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aqa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn expect_success(output: &Output) -> String {
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| line.split(',').map(str::to_string).collect())
        .collect()
}

fn cell(rows: &[Vec<String>], row: usize, col: usize) -> f64 {
    rows[row][col]
        .parse()
        .unwrap_or_else(|_| panic!("cell ({row},{col}) = {:?} is not a number", rows[row][col]))
}

#[test]
fn criterion_7_experiment_drivers_emit_the_reported_tables() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    expect_success(&aqa(
        &[
            "synth",
            "--seed",
            "7",
            "--samples",
            "32",
            "--set",
            "frames=24",
            "--set",
            "frame_size=[32,32]",
            "--out",
            data.to_str().unwrap(),
        ],
        tmp.path(),
    ));
    let data = data.to_str().unwrap();

    // Task-arm grid: 4 rows (single-task first) × both architectures.
    let ablation_dir = tmp.path().join("ablation");
    let stdout = expect_success(&aqa(
        &[
            "ablate",
            "--data",
            data,
            "--out",
            ablation_dir.to_str().unwrap(),
            "--set",
            "preset=tiny",
            "--set",
            "epochs=1",
            "--format",
            "csv",
        ],
        tmp.path(),
    ));
    let grid = csv_rows(stdout.trim());
    assert_eq!(grid[0], ["tasks", "c3d_avg", "mscadc"]);
    let arms: Vec<&str> = grid[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(arms, ["aqa", "aqa+cls", "aqa+cap", "aqa+cls+cap"]);
    for row in 1..5 {
        for col in 1..3 {
            let v = cell(&grid, row, col);
            assert!((-1.0..=1.0).contains(&v), "ablation cell {v}");
        }
    }

    // Training-set-size sweep: one STL and one MTL column per size.
    let sweep_dir = tmp.path().join("sweep");
    let stdout = expect_success(&aqa(
        &[
            "sweep",
            "--data",
            data,
            "--out",
            sweep_dir.to_str().unwrap(),
            "--set",
            "preset=tiny",
            "--set",
            "epochs=1",
            "--set",
            "sizes=[4,8]",
            "--format",
            "csv",
        ],
        tmp.path(),
    ));
    let sweep = csv_rows(stdout.trim());
    assert_eq!(sweep[0], ["size", "stl_spearman", "mtl_spearman"]);
    assert_eq!(sweep.len(), 3);
    for (row, size) in [(1, 4.0), (2, 8.0)] {
        assert_eq!(cell(&sweep, row, 0), size);
        for col in [1, 2] {
            let v = cell(&sweep, row, col);
            assert!((-1.0..=1.0).contains(&v), "sweep cell {v}");
        }
    }

    // Linear probe on a score-trained trunk: five layer rows, and the last
    // stage must decode the (linearly encoded) synthetic score well.
    let run = tmp.path().join("probe_run");
    expect_success(&aqa(
        &[
            "train",
            "--data",
            data,
            "--out",
            run.to_str().unwrap(),
            "--set",
            "preset=tiny",
            "--set",
            "architecture=mscadc",
            "--set",
            "tasks.classification=false",
            "--set",
            "tasks.captioning=false",
            "--set",
            "epochs=40",
            "--set",
            "lr=0.001",
            "--set",
            "augment=false",
            "--seed",
            "1",
        ],
        tmp.path(),
    ));
    let ckpt = run.join("ckpt_final");
    let stdout = expect_success(&aqa(
        &[
            "probe",
            "--data",
            data,
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--format",
            "csv",
        ],
        tmp.path(),
    ));
    let probe = csv_rows(stdout.trim());
    assert_eq!(probe[0], ["layer", "spearman"]);
    let layers: Vec<&str> = probe[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(layers, ["c1", "c2", "c3", "c4", "c5"]);
    let mut c5 = f64::NAN;
    for row in 1..6 {
        let v = cell(&probe, row, 1);
        assert!((-1.0..=1.0).contains(&v), "probe cell {v}");
        if probe[row][0] == "c5" {
            c5 = v;
        }
    }
    assert!(c5 >= 0.8, "c5 probe spearman {c5:.4}");

    println!(
        "ACCEPTANCE 7 PASS: ablate 4×2 grid, sweep sizes [4, 8], probe rows \
         c1–c5 all in [−1, 1]; trained-trunk c5 probe spearman {c5:.3} ≥ 0.8"
    );
}

fn file_inventory(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn criterion_8_identical_seeds_reproduce_losses_and_datasets() {
    // Two generations of the same dataset must agree file by file, byte by
    // byte.
    let spec = SyntheticSpec {
        frames: 24,
        frame_size: (32, 32),
        ..SyntheticSpec::new(9, 6)
    };
    let (dir_a, dir_b) = (tempdir().unwrap(), tempdir().unwrap());
    generate_synthetic(&spec, dir_a.path()).unwrap();
    generate_synthetic(&spec, dir_b.path()).unwrap();
    let (inv_a, inv_b) = (file_inventory(dir_a.path()), file_inventory(dir_b.path()));
    assert!(!inv_a.is_empty());
    assert_eq!(inv_a.len(), inv_b.len());
    let bytes: usize = inv_a.iter().map(|(_, data)| data.len()).sum();
    for ((name_a, data_a), (name_b, data_b)) in inv_a.iter().zip(&inv_b) {
        assert_eq!(name_a, name_b);
        assert_eq!(data_a, data_b, "{name_a} differs between generations");
    }

    // Two trainings from the same seed and config must report the same
    // epoch-1 total loss.
    let data_dir = tempdir().unwrap();
    let (samples, vocab) = synth_samples(data_dir.path(), 6, 3, 24, 32);
    let mut config = TrainConfig::new(ModelConfig::tiny(Architecture::C3dAvg, vocab.len()));
    config.epochs = 1;
    config.seed = 17;
    let (run_a, run_b) = (tempdir().unwrap(), tempdir().unwrap());
    let first = train(&config, &samples, &samples, &vocab, run_a.path()).unwrap();
    let second = train(&config, &samples, &samples, &vocab, run_b.path()).unwrap();
    let (loss_a, loss_b) = (
        first.history[0].loss.total,
        second.history[0].loss.total,
    );
    assert!(
        (loss_a - loss_b).abs() <= 1e-6,
        "epoch-1 losses {loss_a} vs {loss_b}"
    );

    println!(
        "ACCEPTANCE 8 PASS: {} files / {bytes} bytes regenerate identically; \
         epoch-1 total loss reproduced ({loss_a:.9} vs {loss_b:.9})",
        inv_a.len()
    );
}
