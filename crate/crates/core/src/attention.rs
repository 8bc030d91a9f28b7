//! Graph attention over fully connected node sets built from a window.
//!
//! Temporal attention treats each of the `w` time steps as a node with an
//! `m`-dimensional feature vector; variable attention treats each of the `m`
//! variables as a node whose features are its `w` observations. Every node
//! attends to every node, itself included.
//!
//! Two scoring rules are available:
//!
//! * dynamic: `e[i, j] = a^T LeakyReLU(W [x_i || x_j])`, with `W: h x 2d`
//!   and `a: h`. The ranking of neighbours `j` can depend on the query `i`.
//! * static: `e[i, j] = LeakyReLU(a^T [W x_i || W x_j])`, with `W: h x d` and
//!   `a: 2h`. Because the score is monotone in `a_right^T W x_j`, every query
//!   ranks its neighbours identically.
//!
//! Scores are normalised with a row softmax and the output for node `i` is
//! `sigma(sum_j alpha[i, j] x_j)`.

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{fan_in_uniform, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::params::{join, take, Leaves, ParamTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Dynamic,
    Static,
}

impl FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Self::Dynamic),
            "static" => Ok(Self::Static),
            other => Err(Error::Parameter(format!("unknown attention mode {other:?}"))),
        }
    }
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dynamic => "dynamic",
            Self::Static => "static",
        }
    }
}

/// Output nonlinearity applied to the attention-weighted average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Parameter(format!("unknown activation {other:?}"))),
        }
    }
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        }
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Self::Sigmoid => tape.sigmoid(x),
            Self::Tanh => tape.tanh(x),
            Self::Identity => Ok(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `h x 2d` (dynamic) or `h x d` (static).
    pub weight: Tensor,
    /// `h` (dynamic) or `2h` (static).
    pub score: Tensor,
    pub mode: AttentionMode,
    pub activation: Activation,
    pub slope: f64,
}

impl AttentionParams {
    pub fn new(weight: Tensor, score: Tensor, mode: AttentionMode, activation: Activation) -> Self {
        Self {
            weight,
            score,
            mode,
            activation,
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Random parameters for `d`-dimensional node features with hidden size `d`.
    pub fn init<R: Rng + ?Sized>(d: usize, mode: AttentionMode, activation: Activation, rng: &mut R) -> Self {
        let (weight, score) = match mode {
            AttentionMode::Dynamic => (fan_in_uniform(&[d, 2 * d], 2 * d, rng), fan_in_uniform(&[d], d, rng)),
            AttentionMode::Static => (fan_in_uniform(&[d, d], d, rng), fan_in_uniform(&[2 * d], 2 * d, rng)),
        };
        Self::new(weight, score, mode, activation)
    }

    pub fn hidden(&self) -> usize {
        self.weight.rows()
    }

    /// Node feature dimension these parameters accept.
    pub fn feature_dim(&self) -> usize {
        match self.mode {
            AttentionMode::Dynamic => self.weight.cols() / 2,
            AttentionMode::Static => self.weight.cols(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let (h, cols) = self.weight.dims2("attention")?;
        let (want_cols, want_score) = match self.mode {
            AttentionMode::Dynamic => (2 * d, h),
            AttentionMode::Static => (d, 2 * h),
        };
        if cols != want_cols || self.score.len() != want_score {
            return Err(Error::dim(
                "attention",
                format!(
                    "{} attention over {d}-dim nodes needs W with {want_cols} columns and a of length {want_score}, got W {:?}, a {}",
                    self.mode.as_str(),
                    self.weight.shape(),
                    self.score.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn bind(&self, leaves: &mut Leaves<'_>) -> BoundAttention {
        BoundAttention {
            weight: take(leaves),
            score: take(leaves),
            mode: self.mode,
            activation: self.activation,
            slope: self.slope,
        }
    }
}

impl ParamTree for AttentionParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "score"), &self.score));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.score);
    }
}

/// Attention parameters placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundAttention {
    pub weight: Var,
    pub score: Var,
    pub mode: AttentionMode,
    pub activation: Activation,
    pub slope: f64,
}

impl BoundAttention {
    fn check(&self, tape: &Tape, x: Var) -> Result<usize> {
        let (_, d) = tape.value(x).dims2("attention")?;
        let (h, cols) = tape.value(self.weight).dims2("attention")?;
        let score_len = tape.value(self.score).len();
        let ok = match self.mode {
            AttentionMode::Dynamic => cols == 2 * d && score_len == h,
            AttentionMode::Static => cols == d && score_len == 2 * h,
        };
        if !ok {
            return Err(Error::dim(
                "attention",
                format!(
                    "{}-dim nodes with W {:?} and a of length {score_len}",
                    d,
                    tape.value(self.weight).shape()
                ),
            ));
        }
        Ok(d)
    }

    /// Raw pairwise scores `e[i, j]` for node matrix `x [n x d]`.
    pub fn scores(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let d = self.check(tape, x)?;
        match self.mode {
            AttentionMode::Dynamic => {
                let left = tape.slice_cols(self.weight, 0, d)?;
                let right = tape.slice_cols(self.weight, d, 2 * d)?;
                let left_t = tape.transpose(left)?;
                let right_t = tape.transpose(right)?;
                let p = tape.matmul(x, left_t)?;
                let q = tape.matmul(x, right_t)?;
                tape.pairwise_dynamic(p, q, self.score, self.slope)
            }
            AttentionMode::Static => {
                let h = tape.value(self.weight).rows();
                let w_t = tape.transpose(self.weight)?;
                let projected = tape.matmul(x, w_t)?;
                let a_row = tape.reshape(self.score, &[1, 2 * h])?;
                let a_left = tape.slice_cols(a_row, 0, h)?;
                let a_right = tape.slice_cols(a_row, h, 2 * h)?;
                let a_left = tape.transpose(a_left)?;
                let a_right = tape.transpose(a_right)?;
                let s = tape.matmul(projected, a_left)?;
                let t = tape.matmul(projected, a_right)?;
                let e = tape.outer_add(s, t)?;
                tape.leaky_relu(e, self.slope)
            }
        }
    }

    /// Returns `(aggregated [n x d], weights [n x n])`.
    pub fn attend(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let e = self.scores(tape, x)?;
        let alpha = tape.softmax_rows(e)?;
        let mixed = tape.matmul(alpha, x)?;
        let out = self.activation.apply(tape, mixed)?;
        Ok((out, alpha))
    }

    /// Attention across the `w` time-step nodes of `x [w x m]`.
    pub fn temporal(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(self.attend(tape, x)?.0)
    }

    /// Attention across the `m` variable nodes of `x [w x m]`, returned as `w x m`.
    pub fn variable(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xt = tape.transpose(x)?;
        let (out, _) = self.attend(tape, xt)?;
        tape.transpose(out)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub aggregated: Tensor,
    pub weights: Tensor,
}

fn run<T>(params: &AttentionParams, f: impl FnOnce(&mut Tape, BoundAttention) -> Result<T>) -> Result<T> {
    let mut tape = Tape::new();
    let leaves = [
        tape.leaf(params.weight.clone(), false),
        tape.leaf(params.score.clone(), false),
    ];
    let bound = params.bind(&mut leaves.iter().copied());
    f(&mut tape, bound)
}

/// `e[i, j] = a^T LeakyReLU(W [x_i || x_j])`.
pub fn dynamic_scores(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let params = AttentionParams {
        mode: AttentionMode::Dynamic,
        ..params.clone()
    };
    scores(x, &params)
}

/// `e[i, j] = LeakyReLU(a^T [W x_i || W x_j])`.
pub fn static_scores(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let params = AttentionParams {
        mode: AttentionMode::Static,
        ..params.clone()
    };
    scores(x, &params)
}

/// Scores under the mode recorded in `params`.
pub fn scores(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    run(params, |tape, b| {
        let xv = tape.leaf(x.clone(), false);
        let e = b.scores(tape, xv)?;
        Ok(tape.value(e).clone())
    })
}

pub fn attend(x: &Tensor, params: &AttentionParams) -> Result<AttentionOutput> {
    run(params, |tape, b| {
        let xv = tape.leaf(x.clone(), false);
        let (agg, w) = b.attend(tape, xv)?;
        Ok(AttentionOutput {
            aggregated: tape.value(agg).clone(),
            weights: tape.value(w).clone(),
        })
    })
}

pub fn temporal_attention(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    run(params, |tape, b| {
        let xv = tape.leaf(x.clone(), false);
        let out = b.temporal(tape, xv)?;
        Ok(tape.value(out).clone())
    })
}

pub fn variable_attention(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    run(params, |tape, b| {
        let xv = tape.leaf(x.clone(), false);
        let out = b.variable(tape, xv)?;
        Ok(tape.value(out).clone())
    })
}
