//! Sequence-to-sequence commentary generator.
//!
//! A learned linear projection maps each per-step visual feature into the
//! recurrent width, a single-layer GRU encoder folds the feature sequence
//! into one state, and a GRU decoder with a token embedding and an output
//! projection emits the caption. Dropout is applied to inputs (projected
//! features, token embeddings) and to the decoder outputs feeding the
//! vocabulary projection — never to the recurrent state itself.
//!
//! Training uses teacher forcing: step `t` consumes gold token `t` and is
//! scored against gold token `t+1`, so a caption with `k` content tokens
//! contributes `k + 1` prediction steps, the last one predicting the end
//! marker. Inference decodes greedily (or with a small beam) until the end
//! marker or the content-length cap.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use aqa_nn::ops::softmax_1d;
use aqa_nn::param::{with_prefix, NamedParams, NamedParamsMut};
use aqa_nn::{Dropout, Embedding, GruCell, Linear, Scalar};

use crate::data::{CaptionTokens, END, MAX_CAPTION_TOKENS, RESERVED_TOKENS, START};
use crate::error::AqaError;
use crate::Result;

/// Shape and regularization knobs of the captioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerConfig {
    /// Length of one visual feature step.
    pub feature_dim: usize,
    /// GRU state width (encoder and decoder).
    pub hidden: usize,
    /// Token embedding width.
    pub embed: usize,
    /// Vocabulary size including the reserved tokens.
    pub vocab: usize,
    /// Dropout rate on inputs and decoder outputs.
    pub dropout: f64,
    /// Greedy/beam decoding stops after this many content tokens.
    pub max_decode_steps: usize,
}

impl CaptionerConfig {
    pub fn new(feature_dim: usize, vocab: usize) -> Self {
        CaptionerConfig {
            feature_dim,
            hidden: 512,
            embed: 512,
            vocab,
            dropout: 0.2,
            max_decode_steps: MAX_CAPTION_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(AqaError::Config(
                "captioner dimensions must be positive".into(),
            ));
        }
        if self.vocab <= RESERVED_TOKENS {
            return Err(AqaError::Config(format!(
                "captioner vocabulary must exceed the {RESERVED_TOKENS} reserved tokens, got {}",
                self.vocab
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AqaError::Config(format!(
                "captioner dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.max_decode_steps == 0 || self.max_decode_steps > MAX_CAPTION_TOKENS {
            return Err(AqaError::Config(format!(
                "max_decode_steps must be in 1..={MAX_CAPTION_TOKENS}, got {}",
                self.max_decode_steps
            )));
        }
        Ok(())
    }
}

/// GRU encoder/decoder over visual feature sequences.
pub struct Captioner<F: Scalar> {
    proj: Linear<F>,
    enc_dropout: Dropout<F>,
    encoder: GruCell<F>,
    embedding: Embedding<F>,
    emb_dropout: Dropout<F>,
    decoder: GruCell<F>,
    out_dropout: Dropout<F>,
    output: Linear<F>,
    config: CaptionerConfig,
    enc_shape: (usize, usize),
    dec_steps: Vec<usize>,
}

impl<F: Scalar> Captioner<F> {
    pub fn new(config: CaptionerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(Captioner {
            proj: Linear::new(config.feature_dim, config.hidden, rng),
            enc_dropout: Dropout::new(config.dropout),
            encoder: GruCell::new(config.hidden, config.hidden, rng),
            embedding: Embedding::new(config.vocab, config.embed, rng),
            emb_dropout: Dropout::new(config.dropout),
            decoder: GruCell::new(config.embed, config.hidden, rng),
            out_dropout: Dropout::new(config.dropout),
            output: Linear::new(config.hidden, config.vocab, rng),
            config,
            enc_shape: (0, 0),
            dec_steps: Vec::new(),
        })
    }

    pub fn config(&self) -> &CaptionerConfig {
        &self.config
    }

    pub fn params(&self) -> NamedParams<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("proj", self.proj.params()));
        out.extend(with_prefix("encoder", self.encoder.params()));
        out.extend(with_prefix("embedding", self.embedding.params()));
        out.extend(with_prefix("decoder", self.decoder.params()));
        out.extend(with_prefix("output", self.output.params()));
        out
    }

    pub fn params_mut(&mut self) -> NamedParamsMut<'_, F> {
        let mut out = Vec::new();
        out.extend(with_prefix("proj", self.proj.params_mut()));
        out.extend(with_prefix("encoder", self.encoder.params_mut()));
        out.extend(with_prefix("embedding", self.embedding.params_mut()));
        out.extend(with_prefix("decoder", self.decoder.params_mut()));
        out.extend(with_prefix("output", self.output.params_mut()));
        out
    }

    /// Folds `(N, S, feature_dim)` step sequences into `(N, hidden)` states.
    pub fn encode(
        &mut self,
        features: &Array3<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>> {
        let (n, steps, dim) = features.dim();
        if n == 0 || steps == 0 {
            return Err(AqaError::Data(
                "captioner: empty feature sequence".into(),
            ));
        }
        if dim != self.config.feature_dim {
            return Err(AqaError::Data(format!(
                "captioner: expected feature dim {}, got {dim}",
                self.config.feature_dim
            )));
        }
        let flat = features
            .view()
            .into_shape_with_order((n * steps, dim))
            .expect("feature tensor is contiguous")
            .to_owned();
        let projected = self.proj.forward(&flat, train)?;
        let projected = self.enc_dropout.forward(&projected, train, rng);

        self.encoder.clear_cache();
        let mut states = Array2::zeros((n, self.config.hidden));
        for i in 0..n {
            let mut h = Array1::zeros(self.config.hidden);
            for t in 0..steps {
                let x = projected.row(i * steps + t).to_owned();
                h = self.encoder.step(&x, &h, train);
            }
            states.row_mut(i).assign(&h);
        }
        self.enc_shape = (n, steps);
        Ok(states)
    }

    /// Backward through the encoder, returning the gradient w.r.t. the
    /// feature sequences. Requires a preceding train-mode [`Captioner::encode`].
    pub fn backward_encode(&mut self, d_states: &Array2<F>) -> Array3<F> {
        let (n, steps) = self.enc_shape;
        assert_eq!(d_states.dim(), (n, self.config.hidden), "state grad shape");
        let mut d_proj = Array2::<F>::zeros((n * steps, self.config.hidden));
        for i in (0..n).rev() {
            let mut dh = d_states.row(i).to_owned();
            for t in (0..steps).rev() {
                let (dx, dh_prev) = self.encoder.backward_step(&dh);
                d_proj.row_mut(i * steps + t).assign(&dx);
                dh = dh_prev;
            }
        }
        let d_proj = self.enc_dropout.backward(&d_proj);
        let d_flat = self.proj.backward(&d_proj);
        d_flat
            .into_shape_with_order((n, steps, self.config.feature_dim))
            .expect("gradient tensor is contiguous")
    }

    /// Teacher-forced decoding: returns per-sample logits shaped
    /// `(content + 1, vocab)`, where row `t` predicts gold token `t + 1`.
    pub fn decode_teacher_forced(
        &mut self,
        states: &Array2<F>,
        captions: &[CaptionTokens],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Array2<F>>> {
        let n = states.nrows();
        if captions.len() != n {
            return Err(AqaError::Data(format!(
                "captioner: {n} encoder states but {} captions",
                captions.len()
            )));
        }
        let steps: Vec<usize> = captions.iter().map(|c| c.steps()).collect();
        let total: usize = steps.iter().sum();
        let mut flat_tokens = Vec::with_capacity(total);
        for c in captions {
            let idx = c.indices();
            flat_tokens.extend_from_slice(&idx[..idx.len() - 1]);
        }

        let embedded = self.embedding.forward(&flat_tokens, train)?;
        let embedded = self.emb_dropout.forward(&embedded, train, rng);

        self.decoder.clear_cache();
        let mut hidden = Array2::<F>::zeros((total, self.config.hidden));
        let mut offset = 0;
        for (i, &k) in steps.iter().enumerate() {
            let mut h = states.row(i).to_owned();
            for t in 0..k {
                let x = embedded.row(offset + t).to_owned();
                h = self.decoder.step(&x, &h, train);
                hidden.row_mut(offset + t).assign(&h);
            }
            offset += k;
        }

        let dropped = self.out_dropout.forward(&hidden, train, rng);
        let logits = self.output.forward(&dropped, train)?;
        self.dec_steps = steps.clone();

        let mut out = Vec::with_capacity(n);
        let mut offset = 0;
        for &k in &steps {
            out.push(logits.slice(s![offset..offset + k, ..]).to_owned());
            offset += k;
        }
        Ok(out)
    }

    /// Backward through the decoder, returning the gradient w.r.t. the
    /// encoder states. Requires a preceding train-mode teacher-forced pass.
    pub fn backward_decode(&mut self, d_logits: &[Array2<F>]) -> Array2<F> {
        let steps = std::mem::take(&mut self.dec_steps);
        assert_eq!(d_logits.len(), steps.len(), "per-sample gradient count");
        let total: usize = steps.iter().sum();
        let mut flat = Array2::<F>::zeros((total, self.config.vocab));
        let mut offset = 0;
        for (g, &k) in d_logits.iter().zip(&steps) {
            assert_eq!(g.dim(), (k, self.config.vocab), "logit grad shape");
            flat.slice_mut(s![offset..offset + k, ..]).assign(g);
            offset += k;
        }

        let d_dropped = self.output.backward(&flat);
        let d_hidden = self.out_dropout.backward(&d_dropped);

        let mut d_embedded = Array2::<F>::zeros((total, self.config.embed));
        let mut d_states = Array2::<F>::zeros((steps.len(), self.config.hidden));
        let mut offset = total;
        for (i, &k) in steps.iter().enumerate().rev() {
            offset -= k;
            let mut dh = Array1::<F>::zeros(self.config.hidden);
            for t in (0..k).rev() {
                dh = &dh + &d_hidden.row(offset + t);
                let (dx, dh_prev) = self.decoder.backward_step(&dh);
                d_embedded.row_mut(offset + t).assign(&dx);
                dh = dh_prev;
            }
            d_states.row_mut(i).assign(&dh);
        }

        let d_embedded = self.emb_dropout.backward(&d_embedded);
        self.embedding.backward(&d_embedded);
        d_states
    }

    /// Greedy decoding from one encoder state: repeatedly feed the argmax
    /// token back until the end marker or the content-length cap. The
    /// returned caption is always terminated.
    pub fn decode_greedy(&mut self, state: ArrayView1<F>) -> Result<CaptionTokens> {
        let mut indices = vec![START];
        let mut h = state.to_owned();
        let mut token = START;
        let mut cold = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..self.config.max_decode_steps + 1 {
            let logits = self.step_eval(token, &mut h, &mut cold)?;
            let next = argmax(&logits);
            if next == END {
                break;
            }
            indices.push(next);
            token = next;
            if indices.len() - 1 == self.config.max_decode_steps {
                break;
            }
        }
        indices.push(END);
        CaptionTokens::from_indices(indices)
    }

    /// Beam-search decoding with log-probability scoring. A width of 1
    /// reproduces greedy decoding.
    pub fn decode_beam(&mut self, state: ArrayView1<F>, width: usize) -> Result<CaptionTokens> {
        if width == 0 {
            return Err(AqaError::Config("beam width must be positive".into()));
        }
        struct Hypothesis<F> {
            tokens: Vec<usize>,
            state: Array1<F>,
            score: f64,
            done: bool,
        }
        let mut cold = ChaCha8Rng::seed_from_u64(0);
        let mut beam = vec![Hypothesis {
            tokens: vec![START],
            state: state.to_owned(),
            score: 0.0,
            done: false,
        }];
        for _ in 0..self.config.max_decode_steps + 1 {
            if beam.iter().all(|h| h.done) {
                break;
            }
            let mut pool = Vec::new();
            for hyp in beam {
                if hyp.done {
                    pool.push(hyp);
                    continue;
                }
                let mut h = hyp.state.clone();
                let logits = self.step_eval(*hyp.tokens.last().unwrap(), &mut h, &mut cold)?;
                let logits = logits.mapv(|v| v.to_f64());
                let probs = softmax_1d(&logits.view());
                let mut ranked: Vec<usize> = (0..probs.len()).collect();
                ranked.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
                for &tok in ranked.iter().take(width) {
                    let mut tokens = hyp.tokens.clone();
                    if tok != END {
                        tokens.push(tok);
                    }
                    let done = tok == END || tokens.len() - 1 >= self.config.max_decode_steps;
                    pool.push(Hypothesis {
                        tokens,
                        state: h.clone(),
                        score: hyp.score + probs[tok].max(f64::MIN_POSITIVE).ln(),
                        done,
                    });
                }
            }
            pool.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            pool.truncate(width);
            beam = pool;
        }
        let best = beam
            .into_iter()
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
            .expect("beam is never empty");
        let mut indices = best.tokens;
        indices.push(END);
        CaptionTokens::from_indices(indices)
    }

    /// One eval-mode decoder step: embed `token`, advance `h`, return logits.
    fn step_eval(
        &mut self,
        token: usize,
        h: &mut Array1<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array1<F>> {
        let embedded = self.embedding.forward(&[token], false)?;
        let x = embedded.row(0).to_owned();
        *h = self.decoder.step(&x, h, false);
        let hin = h.view().insert_axis(Axis(0)).to_owned();
        let dropped = self.out_dropout.forward(&hin, false, rng);
        let logits = self.output.forward(&dropped, false)?;
        Ok(logits.row(0).to_owned())
    }
}

fn argmax<F: Scalar>(v: &Array1<F>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
