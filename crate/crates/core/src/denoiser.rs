//! Conditional noise estimator: an MLP over
//! `[x_n | sinusoidal(n) | condition features or learned null token]`
//! with hand-written reverse-mode gradients.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::toyworld::{ConditionEncoder, ConditionSpec, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Silu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Silu => z / (1.0 + (-z).exp()),
            Nonlinearity::Tanh => z.tanh(),
            Nonlinearity::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Nonlinearity::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Nonlinearity::Silu),
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" => Ok(Nonlinearity::Identity),
            other => Err(Error::Config(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Nonlinearity::Silu => "silu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        })
    }
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub sample_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub vocab_size: usize,
    pub max_events: usize,
    /// Width of the frozen condition code; 0 feeds the slot-by-event one-hot.
    #[serde(default)]
    pub cond_embed_dim: usize,
    pub nonlinearity: Nonlinearity,
}

impl Arch {
    pub fn cond_dim(&self) -> usize {
        if self.cond_embed_dim == 0 {
            self.vocab_size * self.max_events
        } else {
            self.cond_embed_dim
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sample_dim + self.time_embed_dim + self.cond_dim()
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.sample_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum::<usize>()
            + self.cond_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_dim == 0 || self.cond_dim() == 0 {
            return Err(Error::Config("sample_dim and condition size must be positive".into()));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// `[sin(n f_0), .., sin(n f_{h-1}), cos(n f_0), .., cos(n f_{h-1})]` with
/// geometrically spaced frequencies `f_i = 10000^(-i/h)`.
pub fn timestep_embedding(n: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let angle = n as f64 * freq;
        out[i] = angle.sin();
        out[i + half] = angle.cos();
    }
    out
}

/// Intermediate values of one forward pass, enough to run the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the network input; `activations[l]` the output of
    /// hidden layer `l`.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    unconditional: bool,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Sample {
        Sample(self.output)
    }
}

/// Parameters plus architecture. Layout of `params`: for each layer the
/// row-major `fan_out x fan_in` weight matrix then its bias, followed by the
/// null-condition token.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    arch: Arch,
    params: Vec<f64>,
    encoder: ConditionEncoder,
}

impl Denoiser {
    /// Weights uniform in `[-a, a]` with `a = init_scale / sqrt(fan_in)`, zero
    /// biases and null token.
    pub fn init(arch: Arch, seed: u64, init_scale: f64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::rng_from(seed);
        let mut params = Vec::with_capacity(arch.n_params());
        for (fan_in, fan_out) in arch.layer_shapes() {
            let a = init_scale / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if a > 0.0 {
                    r.random_range(-a..=a)
                } else {
                    0.0
                });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params.extend(std::iter::repeat_n(0.0, arch.cond_dim()));
        Ok(Self::assemble(arch, params))
    }

    pub fn from_params(arch: Arch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::Shape {
                what: "parameter vector",
                expected: arch.n_params(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(Self::assemble(arch, params))
    }

    fn assemble(arch: Arch, params: Vec<f64>) -> Self {
        let encoder = ConditionEncoder::new(arch.vocab_size, arch.max_events, arch.cond_embed_dim);
        Self { arch, params, encoder }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn null_token_offset(&self) -> usize {
        self.params.len() - self.arch.cond_dim()
    }

    fn build_input(&self, x: &Sample, n: usize, cond: Option<&ConditionSpec>) -> Result<Vec<f64>> {
        let a = &self.arch;
        if x.dim() != a.sample_dim {
            return Err(Error::Shape {
                what: "denoiser input",
                expected: a.sample_dim,
                got: x.dim(),
            });
        }
        let mut input = Vec::with_capacity(a.input_dim());
        input.extend_from_slice(&x.0);
        input.extend(timestep_embedding(n, a.time_embed_dim));
        match cond {
            Some(c) => {
                c.validate(a.vocab_size, a.max_events)?;
                input.extend(self.encoder.encode(c));
            }
            None => input.extend_from_slice(&self.params[self.null_token_offset()..]),
        }
        Ok(input)
    }

    /// Forward pass keeping intermediates for [`Denoiser::backward_trace`].
    pub fn forward_trace(
        &self,
        x: &Sample,
        n: usize,
        cond: Option<&ConditionSpec>,
    ) -> Result<Trace> {
        let input = self.build_input(x, n, cond)?;
        let shapes = self.arch.layer_shapes();
        let last = shapes.len() - 1;
        let act = self.arch.nonlinearity;
        let mut activations = vec![input];
        let mut pre = Vec::with_capacity(last);
        let mut off = 0;
        let mut output = Vec::new();
        for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let a_prev = &activations[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| dot(&w[o * fan_in..(o + 1) * fan_in], a_prev) + b[o])
                .collect();
            if l == last {
                output = z;
            } else {
                activations.push(z.iter().map(|&v| act.apply(v)).collect());
                pre.push(z);
            }
        }
        Ok(Trace {
            activations,
            pre,
            output,
            unconditional: cond.is_none(),
        })
    }

    /// Predicted noise.
    pub fn forward(&self, x: &Sample, n: usize, cond: Option<&ConditionSpec>) -> Result<Sample> {
        Ok(self.forward_trace(x, n, cond)?.into_output())
    }

    /// Accumulate `scale * d<output, upstream>/d params` into `grad`.
    pub fn backward_trace_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if upstream.len() != self.arch.sample_dim {
            return Err(Error::Shape {
                what: "upstream gradient",
                expected: self.arch.sample_dim,
                got: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::Shape {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let shapes = self.arch.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(i, o) in &shapes {
            offsets.push(off);
            off += i * o + o;
        }
        let act = self.arch.nonlinearity;
        let mut delta: Vec<f64> = upstream.iter().map(|g| g * scale).collect();
        for l in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[l];
            let wo = offsets[l];
            let a_prev = &trace.activations[l];
            {
                let (gw, gb) = grad[wo..wo + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (g, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(a_prev) {
                            *g += d * a;
                        }
                    }
                    gb[o] += d;
                }
            }
            let need_input_grad = l > 0 || trace.unconditional;
            if !need_input_grad {
                break;
            }
            let w = &self.params[wo..wo + fan_in * fan_out];
            let mut back = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    for (b, wv) in back.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *b += d * wv;
                    }
                }
            }
            if l == 0 {
                let start = self.arch.sample_dim + self.arch.time_embed_dim;
                let nt = self.null_token_offset();
                for (g, b) in grad[nt..].iter_mut().zip(&back[start..]) {
                    *g += b;
                }
            } else {
                delta = back
                    .iter()
                    .zip(&trace.pre[l - 1])
                    .map(|(b, &z)| b * act.derivative(z))
                    .collect();
            }
        }
        Ok(())
    }

    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_trace_into(trace, upstream, 1.0, &mut g)?;
        Ok(g)
    }

    /// Gradient of `<forward(x, n, cond), upstream>` with respect to the parameters.
    pub fn backward(
        &self,
        x: &Sample,
        n: usize,
        cond: Option<&ConditionSpec>,
        upstream: &Sample,
    ) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x, n, cond)?;
        self.backward_trace(&trace, &upstream.0)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociation.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}
