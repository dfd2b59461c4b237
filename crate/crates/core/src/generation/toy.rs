//! Deterministic softmax decoder.
//!
//! The next-token distribution is `softmax(W_o · h_t + b_o)` with
//!
//! ```text
//! h_t = ( mean(fragment embeddings) + mean(embeddings of tokens emitted so far) ) / 2
//! ```
//!
//! where each mean is the zero vector when its set is empty and fragment
//! embeddings are truncated or zero-padded to the hidden width. Decoding is
//! greedy (argmax, ties to the lowest vocabulary index).

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};

use super::{FinishReason, GenerationCondition, GenerationError, GenerationRecord, Generator};
use crate::index::FragmentIndex;
use crate::ingest::{is_content_token, normalize};

/// End-of-sequence symbol used by [`ToyDecoderParams::from_index`]. The
/// tokenizer strips `<` and `>`, so it never collides with a text token.
pub const END_TOKEN: &str = "<eos>";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoderParams {
    vocab: Vec<String>,
    end_index: usize,
    /// `|vocab| x h`, fed back for emitted tokens.
    token_embeddings: Array2<f64>,
    /// `|vocab| x h`.
    output_weight: Array2<f64>,
    output_bias: Array1<f64>,
}

impl ToyDecoderParams {
    pub fn new(
        vocab: Vec<String>,
        end_token: &str,
        token_embeddings: Array2<f64>,
        output_weight: Array2<f64>,
        output_bias: Array1<f64>,
    ) -> Result<Self, GenerationError> {
        let shape = |m: String| Err(GenerationError::Shape(m));
        let v = vocab.len();
        if v == 0 {
            return shape("empty vocabulary".into());
        }
        let ends: Vec<usize> = vocab
            .iter()
            .enumerate()
            .filter(|(_, t)| t.as_str() == end_token)
            .map(|(i, _)| i)
            .collect();
        if ends.len() != 1 {
            return shape(format!("end token must occur exactly once, found {}", ends.len()));
        }
        let h = output_weight.ncols();
        if h == 0 || output_weight.nrows() != v {
            return shape(format!("W_o is {:?}, expected ({v}, h>=1)", output_weight.dim()));
        }
        if token_embeddings.dim() != (v, h) {
            return shape(format!(
                "token embeddings are {:?}, expected ({v}, {h})",
                token_embeddings.dim()
            ));
        }
        if output_bias.len() != v {
            return shape(format!("b_o has length {}, expected {v}", output_bias.len()));
        }
        Ok(ToyDecoderParams {
            vocab,
            end_index: ends[0],
            token_embeddings,
            output_weight,
            output_bias,
        })
    }

    /// Builds a decoder whose vocabulary is the content tokens of the
    /// indexed payloads (sorted) followed by [`END_TOKEN`].
    ///
    /// The output row of a token is the L2-normalized mean embedding of the
    /// fragments that contain it, so tokens from fragments resembling the
    /// conditioning set score highest. Input embeddings are the negated
    /// output rows: emitting a token lowers its own next logit. The end
    /// token has a zero row and bias `end_bias`.
    pub fn from_index(index: &FragmentIndex, end_bias: f64) -> Result<Self, GenerationError> {
        let h = index.dim();
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for entry in index.entries() {
            let mut tokens: Vec<String> = normalize(&entry.payload)
                .into_iter()
                .filter(|t| is_content_token(t))
                .collect();
            tokens.sort_unstable();
            tokens.dedup();
            for t in tokens {
                let row = rows.entry(t).or_insert_with(|| vec![0.0; h]);
                for (r, x) in row.iter_mut().zip(entry.embedding.as_slice()) {
                    *r += x;
                }
            }
        }

        let v = rows.len() + 1;
        let mut output_weight = Array2::zeros((v, h));
        let mut vocab = Vec::with_capacity(v);
        for (i, (token, row)) in rows.into_iter().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                output_weight
                    .row_mut(i)
                    .assign(&ArrayView1::from(&row[..]).mapv(|x| x / norm));
            }
            vocab.push(token);
        }
        vocab.push(END_TOKEN.to_string());
        let mut output_bias = Array1::zeros(v);
        output_bias[v - 1] = end_bias;
        let token_embeddings = output_weight.mapv(|x| -x);
        Self::new(vocab, END_TOKEN, token_embeddings, output_weight, output_bias)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn end_index(&self) -> usize {
        self.end_index
    }

    pub fn hidden_dim(&self) -> usize {
        self.output_weight.ncols()
    }

    pub fn output_bias(&self) -> &Array1<f64> {
        &self.output_bias
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, GenerationError> {
    if logits.is_empty() || logits.iter().any(|x| !x.is_finite()) {
        return Err(GenerationError::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn hidden_state(
    params: &ToyDecoderParams,
    condition: &GenerationCondition,
    emitted: &[usize],
) -> Result<Array1<f64>, GenerationError> {
    let h = params.hidden_dim();
    let mut fragment_mean = Array1::<f64>::zeros(h);
    if !condition.fragments.is_empty() {
        for f in &condition.fragments {
            // Truncate or zero-pad to h.
            for (m, x) in fragment_mean.iter_mut().zip(f.embedding.as_slice()) {
                *m += x;
            }
        }
        fragment_mean /= condition.fragments.len() as f64;
    }
    let mut token_mean = Array1::<f64>::zeros(h);
    if !emitted.is_empty() {
        for &t in emitted {
            if t >= params.vocab.len() {
                return Err(GenerationError::Shape(format!("token index {t} out of vocabulary")));
            }
            token_mean += &params.token_embeddings.row(t);
        }
        token_mean /= emitted.len() as f64;
    }
    Ok((fragment_mean + token_mean) / 2.0)
}

/// Next-token distribution over the vocabulary.
pub fn toy_step(
    params: &ToyDecoderParams,
    condition: &GenerationCondition,
    emitted: &[usize],
) -> Result<Vec<f64>, GenerationError> {
    if emitted.len() >= condition.max_tokens {
        return Err(GenerationError::InvalidCondition(format!(
            "{} tokens already emitted, max_tokens is {}",
            emitted.len(),
            condition.max_tokens
        )));
    }
    let h = hidden_state(params, condition, emitted)?;
    let logits = params.output_weight.dot(&h) + &params.output_bias;
    softmax(logits.as_slice().expect("contiguous"))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn decode_greedy(
    params: &ToyDecoderParams,
    condition: &GenerationCondition,
) -> Result<GenerationRecord, GenerationError> {
    condition.validate()?;
    if condition.end_token != params.end_index {
        return Err(GenerationError::InvalidCondition(format!(
            "condition end token {} differs from decoder end token {}",
            condition.end_token, params.end_index
        )));
    }
    let mut emitted = Vec::new();
    let finished_by = loop {
        if emitted.len() == condition.max_tokens {
            break FinishReason::MaxTokens;
        }
        let next = argmax(&toy_step(params, condition, &emitted)?);
        if next == params.end_index {
            break FinishReason::EndToken;
        }
        emitted.push(next);
    };
    let tokens: Vec<String> = emitted.iter().map(|&i| params.vocab[i].clone()).collect();
    Ok(GenerationRecord {
        query: condition.query.clone(),
        fragment_ids: condition.fragment_ids(),
        answer: tokens.join(" "),
        tokens,
        finished_by,
    })
}

#[derive(Debug, Clone)]
pub struct ToyGenerator {
    params: ToyDecoderParams,
}

impl ToyGenerator {
    pub fn new(params: ToyDecoderParams) -> Self {
        ToyGenerator { params }
    }

    pub fn params(&self) -> &ToyDecoderParams {
        &self.params
    }
}

impl Generator for ToyGenerator {
    fn generate(&self, condition: &GenerationCondition) -> Result<GenerationRecord, GenerationError> {
        decode_greedy(&self.params, condition)
    }

    fn end_token(&self) -> usize {
        self.params.end_index
    }
}
