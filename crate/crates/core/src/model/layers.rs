//! The two sublayers of a decoder block.

use super::ops::{masked_softmax, silu};
use super::tensor::{dot, Matrix};
use super::{HiddenStream, ModelError};

/// Weights of one decoder block. Matrices act on row vectors (`x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `d_model x d_inter`
    pub w_gate: Matrix,
    /// `d_model x d_inter`
    pub w_up: Matrix,
    /// `d_inter x d_model`
    pub w_down: Matrix,
    /// `d_model x d_mid`
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl LayerWeights {
    pub fn zeros(d_model: usize, d_inter: usize, d_mid: usize) -> Self {
        LayerWeights {
            w_gate: Matrix::zeros(d_model, d_inter),
            w_up: Matrix::zeros(d_model, d_inter),
            w_down: Matrix::zeros(d_inter, d_model),
            w_q: Matrix::zeros(d_model, d_mid),
            w_k: Matrix::zeros(d_model, d_mid),
            w_v: Matrix::zeros(d_model, d_mid),
        }
    }

    pub(crate) fn matrices(&self) -> [(&'static str, &Matrix); 6] {
        [
            ("w_gate", &self.w_gate),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
        ]
    }

    pub(crate) fn matrices_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.w_gate,
            &mut self.w_up,
            &mut self.w_down,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
        ]
    }

    pub fn check_shapes(
        &self,
        d_model: usize,
        d_inter: usize,
        d_mid: usize,
    ) -> Result<(), ModelError> {
        let expected = [
            (d_model, d_inter),
            (d_model, d_inter),
            (d_inter, d_model),
            (d_model, d_mid),
            (d_model, d_mid),
            (d_model, d_mid),
        ];
        for ((name, m), shape) in self.matrices().into_iter().zip(expected) {
            if m.shape() != shape {
                return Err(ModelError::Shape(format!(
                    "{name} is {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FfnOutput {
    pub output: HiddenStream,
    /// `x W_up` per position.
    pub up_projection: Vec<Vec<f64>>,
}

/// Gated FFN: `(SiLU(x W_gate) * x W_up) W_down` per position.
pub fn ffn_forward(x: &HiddenStream, w: &LayerWeights) -> Result<FfnOutput, ModelError> {
    let d_model = w.w_gate.rows();
    if w.w_up.rows() != d_model
        || w.w_up.cols() != w.w_gate.cols()
        || w.w_down.shape() != (w.w_gate.cols(), d_model)
    {
        return Err(ModelError::Shape("inconsistent FFN weight shapes".into()));
    }
    x.check_width(d_model)?;
    let mut output = Vec::with_capacity(x.len());
    let mut up_projection = Vec::with_capacity(x.len());
    for state in &x.states {
        let gate = w.w_gate.left_mul(state);
        let up = w.w_up.left_mul(state);
        let inter: Vec<f64> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
        output.push(w.w_down.left_mul(&inter));
        up_projection.push(up);
    }
    Ok(FfnOutput {
        output: HiddenStream { states: output },
        up_projection,
    })
}

#[derive(Debug, Clone)]
pub struct MhsaOutput {
    pub output: HiddenStream,
    /// `[head][query][key]` attention probabilities.
    pub patterns: Vec<Vec<Vec<f64>>>,
}

impl MhsaOutput {
    /// The attention row of every head at query position `t`.
    pub fn rows_at(&self, t: usize) -> Vec<&[f64]> {
        self.patterns.iter().map(|h| h[t].as_slice()).collect()
    }
}

/// Multi-head self-attention without an output projection: per head
/// `softmax(Q K^T / sqrt(d_head)) V`, heads concatenated.
pub fn mhsa_forward(
    x: &HiddenStream,
    w: &LayerWeights,
    num_heads: usize,
    causal: bool,
) -> Result<MhsaOutput, ModelError> {
    let d_model = w.w_q.rows();
    let d_mid = w.w_q.cols();
    if w.w_k.shape() != (d_model, d_mid) || w.w_v.shape() != (d_model, d_mid) {
        return Err(ModelError::Shape(
            "inconsistent attention weight shapes".into(),
        ));
    }
    if num_heads == 0 || !d_mid.is_multiple_of(num_heads) {
        return Err(ModelError::Shape(format!(
            "d_mid {d_mid} not divisible into {num_heads} heads"
        )));
    }
    x.check_width(d_model)?;
    let n = x.len();
    if n == 0 {
        return Err(ModelError::EmptyInput("attention input"));
    }
    let hd = d_mid / num_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q: Vec<Vec<f64>> = x.states.iter().map(|s| w.w_q.left_mul(s)).collect();
    let k: Vec<Vec<f64>> = x.states.iter().map(|s| w.w_k.left_mul(s)).collect();
    let v: Vec<Vec<f64>> = x.states.iter().map(|s| w.w_v.left_mul(s)).collect();

    let mut output = vec![vec![0.0; d_mid]; n];
    let mut patterns = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = h * hd..(h + 1) * hd;
        let mut head_rows = Vec::with_capacity(n);
        for t in 0..n {
            let qt = &q[t][cols.clone()];
            let scores: Vec<f64> = k
                .iter()
                .map(|ks| dot(qt, &ks[cols.clone()]) * scale)
                .collect();
            let last = if causal { t } else { n - 1 };
            let probs = masked_softmax(&scores, last);
            let out = &mut output[t][cols.clone()];
            for (s, p) in probs.iter().enumerate().take(last + 1) {
                for (o, vv) in out.iter_mut().zip(&v[s][cols.clone()]) {
                    *o += p * vv;
                }
            }
            head_rows.push(probs);
        }
        patterns.push(head_rows);
    }
    Ok(MhsaOutput {
        output: HiddenStream { states: output },
        patterns,
    })
}
