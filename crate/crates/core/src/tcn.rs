//! Stacked residual blocks of dilated causal convolutions.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numerics::{fan_in_uniform, reborrow_rng, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::params::{join, take, Leaves, ParamTree};

/// One causal convolution: filters `K x c_in x c_out` plus a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub filters: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn init<R: Rng + ?Sized>(kernel: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            filters: fan_in_uniform(&[kernel, c_in, c_out], kernel * c_in, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn kernel(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[2]
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.filters.ndim() != 3 || self.bias.len() != self.out_channels() {
            return Err(Error::dim(
                "tcn",
                format!("{what}: filters {:?} with bias {:?}", self.filters.shape(), self.bias.shape()),
            ));
        }
        if self.kernel() == 0 {
            return Err(Error::Parameter(format!("{what}: kernel size must be at least 1")));
        }
        Ok(())
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "filters"), &self.filters));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.filters);
        out.push(&mut self.bias);
    }

    fn bind(&self, leaves: &mut Leaves<'_>) -> (Var, Var) {
        (take(leaves), take(leaves))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnBlockParams {
    pub convs: Vec<ConvLayer>,
    /// 1x1 projection used when input and output widths differ.
    pub downsample: Option<ConvLayer>,
    pub dilation: usize,
    pub dropout: f64,
    pub slope: f64,
}

impl TcnBlockParams {
    pub fn init<R: Rng + ?Sized>(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        dilation: usize,
        convs: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let convs = (0..convs)
            .map(|i| ConvLayer::init(kernel, if i == 0 { c_in } else { c_out }, c_out, rng))
            .collect();
        let downsample = (c_in != c_out).then(|| ConvLayer::init(1, c_in, c_out, rng));
        Self {
            convs,
            downsample,
            dilation,
            dropout,
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.convs.first().map_or(0, ConvLayer::in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map_or(0, ConvLayer::out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return Err(Error::Parameter("dilation must be at least 1".into()));
        }
        if self.convs.is_empty() {
            return Err(Error::Parameter("a residual block needs at least one convolution".into()));
        }
        let mut width = self.in_channels();
        for (i, conv) in self.convs.iter().enumerate() {
            conv.validate(&format!("conv {i}"))?;
            if conv.in_channels() != width {
                return Err(Error::dim("tcn", format!("conv {i} expects {} channels, gets {width}", conv.in_channels())));
            }
            width = conv.out_channels();
        }
        match &self.downsample {
            Some(ds) => {
                ds.validate("downsample")?;
                if ds.kernel() != 1 || ds.in_channels() != self.in_channels() || ds.out_channels() != width {
                    return Err(Error::dim("tcn", format!("downsample filters {:?}", ds.filters.shape())));
                }
            }
            None if self.in_channels() != width => {
                return Err(Error::dim(
                    "tcn",
                    format!("identity residual needs equal widths, got {} -> {width}", self.in_channels()),
                ));
            }
            None => {}
        }
        Ok(())
    }

    /// Input steps one output depends on, counting the current one.
    pub fn receptive_field(&self) -> usize {
        1 + self.convs.iter().map(|c| (c.kernel() - 1) * self.dilation).sum::<usize>()
    }

    pub fn bind(&self, leaves: &mut Leaves<'_>) -> BoundBlock {
        BoundBlock {
            convs: self.convs.iter().map(|c| c.bind(leaves)).collect(),
            downsample: self.downsample.as_ref().map(|c| c.bind(leaves)),
            dilation: self.dilation,
            dropout: self.dropout,
            slope: self.slope,
        }
    }
}

impl ParamTree for TcnBlockParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), out);
        }
        if let Some(ds) = &self.downsample {
            ds.visit(&join(prefix, "downsample"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for c in &mut self.convs {
            c.visit_mut(out);
        }
        if let Some(ds) = &mut self.downsample {
            ds.visit_mut(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundBlock {
    convs: Vec<(Var, Var)>,
    downsample: Option<(Var, Var)>,
    dilation: usize,
    dropout: f64,
    slope: f64,
}

impl BoundBlock {
    /// `F_d(x) + residual(x)`; `train_rng` enables dropout.
    pub fn forward(&self, tape: &mut Tape, x: Var, mut train_rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let mut h = x;
        for &(filters, bias) in &self.convs {
            h = tape.causal_conv1d(h, filters, self.dilation)?;
            h = tape.add_bias(h, bias)?;
            h = tape.leaky_relu(h, self.slope)?;
            if let Some(rng) = reborrow_rng(&mut train_rng) {
                h = tape.dropout(h, self.dropout, true, rng)?;
            }
        }
        let residual = match self.downsample {
            Some((filters, bias)) => {
                let r = tape.causal_conv1d(x, filters, 1)?;
                tape.add_bias(r, bias)?
            }
            None => x,
        };
        tape.add(h, residual)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnStackParams {
    pub blocks: Vec<TcnBlockParams>,
}

impl TcnStackParams {
    /// One block per dilation, each `convs_per_block` convolutions wide.
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        channels: usize,
        kernel: usize,
        dilations: &[usize],
        convs_per_block: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut width = c_in;
        let blocks = dilations
            .iter()
            .map(|&d| {
                let b = TcnBlockParams::init(kernel, width, channels, d, convs_per_block, dropout, rng);
                width = channels;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dilation).collect()
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(0, TcnBlockParams::out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = None;
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if let Some(w) = width {
                if b.in_channels() != w {
                    return Err(Error::dim("tcn", format!("block {i} expects {} channels, gets {w}", b.in_channels())));
                }
            }
            width = Some(b.out_channels());
        }
        Ok(())
    }

    pub fn bind(&self, leaves: &mut Leaves<'_>) -> BoundStack {
        BoundStack {
            blocks: self.blocks.iter().map(|b| b.bind(leaves)).collect(),
        }
    }
}

impl ParamTree for TcnStackParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for b in &mut self.blocks {
            b.visit_mut(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundStack {
    blocks: Vec<BoundBlock>,
}

impl BoundStack {
    pub fn forward(&self, tape: &mut Tape, x: Var, mut train_rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(tape, h, reborrow_rng(&mut train_rng))?;
        }
        Ok(h)
    }
}

/// `1 + sum over blocks and their convolutions of (K - 1) * d`.
pub fn receptive_field(params: &TcnStackParams) -> usize {
    1 + params.blocks.iter().map(|b| b.receptive_field() - 1).sum::<usize>()
}

fn run_stack(params: &TcnStackParams, x: &Tensor, train_rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
    params.validate()?;
    let mut tape = Tape::new();
    let leaves = crate::params::bind_leaves(params, &mut tape, false);
    let bound = params.bind(&mut leaves.iter().copied());
    let xv = tape.leaf(x.clone(), false);
    let out = bound.forward(&mut tape, xv, train_rng)?;
    Ok(tape.value(out).clone())
}

/// Runs one residual block; pass an RNG to apply dropout (training mode).
pub fn tcn_block_forward(x: &Tensor, params: &TcnBlockParams, train_rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
    run_stack(
        &TcnStackParams {
            blocks: vec![params.clone()],
        },
        x,
        train_rng,
    )
}

pub fn tcn_forward(x: &Tensor, params: &TcnStackParams, train_rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
    run_stack(params, x, train_rng)
}
