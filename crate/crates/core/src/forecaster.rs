//! The full next-step forecaster.
//!
//! ```text
//! X [w x m] -> causal conv (kernel 7, m -> m) -> H
//!   H, temporal_attention(H), variable_attention(H) -> concat [w x 3m]
//!   -> TCN stack [w x C] -> last step [C] -> MLP -> prediction [m]
//! ```
//!
//! Either attention branch can be switched off, in which case its columns
//! are simply absent from the concatenation and its parameters from the
//! checkpoint.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{Activation, AttentionMode, AttentionParams, BoundAttention};
use crate::error::{Error, Result};
use crate::numerics::{fan_in_uniform, reborrow_rng, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::params::{bind_leaves, join, take, Leaves, ParamTree};
use crate::tcn::{BoundStack, ConvLayer, TcnStackParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub window: usize,
    pub conv_kernel: usize,
    pub tcn_kernel: usize,
    pub tcn_channels: usize,
    pub dilations: Vec<usize>,
    pub convs_per_block: usize,
    pub mlp_hidden_layers: usize,
    pub mlp_units: usize,
    pub dropout: f64,
    pub attention_activation: Activation,
    pub attention_mode: AttentionMode,
    pub temporal_attention: bool,
    pub variable_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 100,
            conv_kernel: 7,
            tcn_kernel: 4,
            tcn_channels: 32,
            dilations: vec![1, 2, 4],
            convs_per_block: 2,
            mlp_hidden_layers: 2,
            mlp_units: 32,
            dropout: 0.1,
            attention_activation: Activation::Sigmoid,
            attention_mode: AttentionMode::Dynamic,
            temporal_attention: true,
            variable_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("conv_kernel", self.conv_kernel),
            ("tcn_kernel", self.tcn_kernel),
            ("tcn_channels", self.tcn_channels),
            ("convs_per_block", self.convs_per_block),
            ("mlp_units", self.mlp_units),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Parameter(format!("dilations must be positive, got {:?}", self.dilations)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of the concatenated representation fed to the TCN.
    pub fn concat_width(&self, features: usize) -> usize {
        features * (1 + usize::from(self.temporal_attention) + usize::from(self.variable_attention))
    }
}

/// Fully connected layer `x W + b` with `W: in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    fn init(fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            weight: fan_in_uniform(&[fan_in, fan_out], fan_in, rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecasterParams {
    pub preconv: ConvLayer,
    pub temporal: Option<AttentionParams>,
    pub variable: Option<AttentionParams>,
    pub tcn: TcnStackParams,
    pub mlp: Vec<DenseLayer>,
}

impl ParamTree for ForecasterParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "preconv.filters"), &self.preconv.filters));
        out.push((join(prefix, "preconv.bias"), &self.preconv.bias));
        if let Some(t) = &self.temporal {
            t.visit(&join(prefix, "temporal"), out);
        }
        if let Some(v) = &self.variable {
            v.visit(&join(prefix, "variable"), out);
        }
        self.tcn.visit(&join(prefix, "tcn"), out);
        for (i, layer) in self.mlp.iter().enumerate() {
            out.push((join(prefix, &format!("mlp{i}.weight")), &layer.weight));
            out.push((join(prefix, &format!("mlp{i}.bias")), &layer.bias));
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.preconv.filters);
        out.push(&mut self.preconv.bias);
        if let Some(t) = &mut self.temporal {
            t.visit_mut(out);
        }
        if let Some(v) = &mut self.variable {
            v.visit_mut(out);
        }
        self.tcn.visit_mut(out);
        for layer in &mut self.mlp {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
    }
}

struct BoundForecaster {
    preconv: (Var, Var),
    temporal: Option<BoundAttention>,
    variable: Option<BoundAttention>,
    tcn: BoundStack,
    mlp: Vec<(Var, Var)>,
}

impl ForecasterParams {
    fn bind(&self, leaves: &mut Leaves<'_>) -> BoundForecaster {
        let preconv = (take(leaves), take(leaves));
        let temporal = self.temporal.as_ref().map(|t| t.bind(leaves));
        let variable = self.variable.as_ref().map(|v| v.bind(leaves));
        let tcn = self.tcn.bind(leaves);
        let mlp = self.mlp.iter().map(|_| (take(leaves), take(leaves))).collect();
        BoundForecaster {
            preconv,
            temporal,
            variable,
            tcn,
            mlp,
        }
    }
}

/// Configuration, feature count and trained weights of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub features: usize,
    pub seed: u64,
    pub params: ForecasterParams,
}

impl Forecaster {
    /// Fresh fan-in-scaled uniform initialization from `seed`.
    pub fn new(config: ModelConfig, features: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if features == 0 {
            return Err(Error::Parameter("a model needs at least one feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = features;
        let w = config.window;
        let preconv = ConvLayer::init(config.conv_kernel, m, m, &mut rng);
        let temporal = config
            .temporal_attention
            .then(|| AttentionParams::init(m, config.attention_mode, config.attention_activation, &mut rng));
        let variable = config
            .variable_attention
            .then(|| AttentionParams::init(w, config.attention_mode, config.attention_activation, &mut rng));
        let tcn = TcnStackParams::init(
            config.concat_width(m),
            config.tcn_channels,
            config.tcn_kernel,
            &config.dilations,
            config.convs_per_block,
            config.dropout,
            &mut rng,
        );
        let mut mlp = Vec::with_capacity(config.mlp_hidden_layers + 1);
        let mut width = config.tcn_channels;
        for _ in 0..config.mlp_hidden_layers {
            mlp.push(DenseLayer::init(width, config.mlp_units, &mut rng));
            width = config.mlp_units;
        }
        mlp.push(DenseLayer::init(width, m, &mut rng));
        Ok(Self {
            config,
            features,
            seed,
            params: ForecasterParams {
                preconv,
                temporal,
                variable,
                tcn,
                mlp,
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (w, m) = x.dims2("forecaster")?;
        if w != self.config.window || m != self.features {
            return Err(Error::dim(
                "forecaster",
                format!(
                    "model expects a {}x{} window, got {w}x{m}",
                    self.config.window, self.features
                ),
            ));
        }
        Ok(())
    }

    /// Records a forward pass of `x` on `tape` using already bound parameters.
    fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &BoundForecaster,
        x: Var,
        mut train_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let slope = DEFAULT_LEAKY_SLOPE;
        let (filters, bias) = bound.preconv;
        let h = tape.causal_conv1d(x, filters, 1)?;
        let h = tape.add_bias(h, bias)?;
        let h = tape.leaky_relu(h, slope)?;

        let mut parts = vec![h];
        if let Some(t) = &bound.temporal {
            parts.push(t.temporal(tape, h)?);
        }
        if let Some(v) = &bound.variable {
            parts.push(v.variable(tape, h)?);
        }
        let z = if parts.len() == 1 { h } else { tape.concat_cols(&parts)? };

        let encoded = bound.tcn.forward(tape, z, reborrow_rng(&mut train_rng))?;
        let mut y = tape.row(encoded, self.config.window - 1)?;
        let last = bound.mlp.len() - 1;
        for (i, &(weight, bias)) in bound.mlp.iter().enumerate() {
            y = tape.linear(y, weight, bias)?;
            if i < last {
                y = tape.leaky_relu(y, slope)?;
                if let Some(rng) = reborrow_rng(&mut train_rng) {
                    y = tape.dropout(y, self.config.dropout, true, rng)?;
                }
            }
        }
        tape.flatten(y)
    }

    /// Builds the forward graph on `tape`, binding every parameter as a leaf.
    /// Returns the parameter leaves (in [`ParamTree`] order) and the prediction.
    pub fn record(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        requires_grad: bool,
        train_rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<Var>, Var)> {
        self.check_input(x)?;
        let leaves = bind_leaves(&self.params, tape, requires_grad);
        let xv = tape.leaf(x.clone(), false);
        let pred = self.record_with(tape, &leaves, xv, train_rng)?;
        Ok((leaves, pred))
    }

    /// Forward pass over caller-provided parameter leaves (in [`ParamTree`]
    /// order) and input node.
    pub fn record_with(
        &self,
        tape: &mut Tape,
        leaves: &[Var],
        x: Var,
        train_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let expected = self.params.named_tensors().len();
        if leaves.len() != expected {
            return Err(Error::dim("forecaster", format!("{} parameter leaves, model has {expected}", leaves.len())));
        }
        self.check_input(tape.value(x))?;
        let bound = self.params.bind(&mut leaves.iter().copied());
        self.forward_bound(tape, &bound, x, train_rng)
    }

    /// Inference-mode prediction of the next `m`-vector.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (_, pred) = self.record(&mut tape, x, false, None)?;
        Ok(tape.value(pred).clone())
    }

    /// RMSE of one sample and its gradient for every parameter tensor.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        target: &Tensor,
        train_rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let (leaves, pred) = self.record(&mut tape, x, true, train_rng)?;
        let target = tape.leaf(target.clone(), false);
        let loss = tape.rmse(pred, target)?;
        tape.backward(loss)?;
        let grads = leaves
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec)
            })
            .collect();
        Ok((tape.value(loss).item(), grads))
    }
}

/// RMSE between a prediction and its target.
pub fn loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(crate::numerics::rmse(pred.data(), target.data()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            window: 8,
            tcn_channels: 4,
            mlp_units: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn full_scale_shapes() {
        let model = Forecaster::new(ModelConfig::default(), 25, 1).unwrap();
        assert_eq!(model.config.concat_width(25), 75);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = fan_in_uniform(&[100, 25], 1, &mut rng);
        let mut tape = Tape::new();
        let (_, pred) = model.record(&mut tape, &x, false, None).unwrap();
        assert_eq!(tape.value(pred).shape(), &[25]);
    }

    #[test]
    fn disabled_branches_shrink_concat_and_checkpoint() {
        let full = Forecaster::new(tiny(), 3, 1).unwrap();
        let bare = Forecaster::new(
            ModelConfig {
                temporal_attention: false,
                variable_attention: false,
                ..tiny()
            },
            3,
            1,
        )
        .unwrap();
        assert_eq!(bare.config.concat_width(3), 3);
        assert_eq!(bare.params.tcn.blocks[0].in_channels(), 3);
        let names: Vec<String> = bare.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().all(|n| !n.starts_with("temporal") && !n.starts_with("variable")));
        assert!(bare.parameter_count() < full.parameter_count());
    }

    #[test]
    fn inference_is_deterministic() {
        let model = Forecaster::new(tiny(), 3, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = fan_in_uniform(&[8, 3], 1, &mut rng);
        let a = model.predict(&x).unwrap();
        let b = Forecaster::new(tiny(), 3, 7).unwrap().predict(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn window_mismatch_is_an_error() {
        let model = Forecaster::new(tiny(), 3, 7).unwrap();
        assert!(model.predict(&Tensor::zeros(&[8, 4])).is_err());
        assert!(model.predict(&Tensor::zeros(&[9, 3])).is_err());
    }

    #[test]
    fn loss_cases() {
        let p = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(loss(&p, &p).unwrap(), 0.0);
        let shifted = Tensor::vector(vec![1.5, 2.5, 3.5]);
        assert!((loss(&shifted, &p).unwrap() - 0.5).abs() < 1e-15);
        let neg = Tensor::vector(vec![0.0, 1.0, 2.0]);
        assert!((loss(&neg, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_align_with_parameters() {
        let model = Forecaster::new(tiny(), 3, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = fan_in_uniform(&[8, 3], 1, &mut rng);
        let (l, grads) = model.loss_and_grads(&x, &Tensor::vector(vec![0.1, 0.2, 0.3]), None).unwrap();
        assert!(l > 0.0);
        let named = model.params.named_tensors();
        assert_eq!(grads.len(), named.len());
        for (g, (_, t)) in grads.iter().zip(&named) {
            assert_eq!(g.len(), t.len());
        }
    }
}
