use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::nnet::autodiff::{silu, Graph, Var};
use crate::nnet::tensor::Tensor;

/// What the network output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// Output is the injected noise ε̂.
    Epsilon,
    /// Output is the clean latent x̂.
    X,
}

impl Parameterization {
    pub fn as_str(self) -> &'static str {
        match self {
            Parameterization::Epsilon => "eps",
            Parameterization::X => "x",
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" | "epsilon" => Ok(Parameterization::Epsilon),
            "x" => Ok(Parameterization::X),
            other => Err(Error::InvalidArgument(format!(
                "unknown parameterization '{other}' (expected eps or x)"
            ))),
        }
    }
}

/// A conditional denoising network usable by the trainer, samplers and
/// distiller.
pub trait Denoiser: Clone + Send + Sync {
    fn parameterization(&self) -> Parameterization;

    /// Changes how the output is interpreted without touching parameters.
    fn set_parameterization(&mut self, p: Parameterization);

    fn latent_dim(&self) -> usize;

    fn params(&self) -> &[Tensor];

    fn params_mut(&mut self) -> &mut [Tensor];

    /// Raw network output for a batch with per-row times and conditions.
    fn forward_batch(&self, z: &Tensor, ts: &[f64], conds: &[usize]) -> Result<Tensor>;

    /// Same computation recorded on `g`, with parameters supplied as leaves.
    fn forward_graph(
        &self,
        g: &mut Graph,
        params: &[Var],
        z: Var,
        ts: &[f64],
        conds: &[usize],
    ) -> Result<Var>;

    /// Forward pass with one time and one condition shared by the batch.
    fn forward(&self, z: &Tensor, t: f64, cond: usize) -> Result<Tensor> {
        let rows = z.rows();
        self.forward_batch(z, &vec![t; rows], &vec![cond; rows])
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }
}

/// Evaluates a scalar loss built on a fresh graph and differentiates it with
/// respect to every model parameter.
pub fn loss_and_gradients<M, F>(model: &M, build: F) -> Result<(f64, Vec<Tensor>)>
where
    M: Denoiser,
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = model.params().iter().map(|p| g.leaf(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let value = g.value(loss).data()[0];
    let out = vars
        .iter()
        .zip(model.params())
        .map(|(v, p)| grads.wrt(*v, p))
        .collect();
    Ok((value, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub num_frequencies: usize,
    pub hidden: Vec<usize>,
    pub parameterization: Parameterization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            num_classes: 8,
            embed_dim: 8,
            num_frequencies: 8,
            hidden: vec![128, 128],
            parameterization: Parameterization::Epsilon,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + 2 * self.num_frequencies + self.embed_dim
    }

    /// Shapes of the parameter tensors in storage order: embedding table,
    /// then `(weight, bias)` per layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.num_classes, self.embed_dim]];
        let mut fan_in = self.input_dim();
        for &h in self.hidden.iter().chain(std::iter::once(&self.latent_dim)) {
            shapes.push(vec![fan_in, h]);
            shapes.push(vec![h]);
            fan_in = h;
        }
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string()];
        for layer in 0..=self.hidden.len() {
            names.push(format!("layer{layer}.weight"));
            names.push(format!("layer{layer}.bias"));
        }
        names
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.num_classes == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "latent_dim, num_classes and embed_dim must be positive".into(),
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal features of diffusion time: `[sin(ω_k t), cos(ω_k t)]` with
/// `ω_k = (π/2)·2^k`.
pub fn time_features(ts: &[f64], num_frequencies: usize) -> Tensor {
    let cols = 2 * num_frequencies;
    let mut data = Vec::with_capacity(ts.len() * cols);
    for &t in ts {
        for k in 0..num_frequencies {
            let w = 0.5 * PI * (1u64 << k) as f64;
            data.push((w * t).sin());
            data.push((w * t).cos());
        }
    }
    if cols == 0 {
        return Tensor::zeros(&[ts.len().max(1), 1]);
    }
    Tensor::matrix(ts.len(), cols, data).expect("time feature shape")
}

/// MLP denoiser conditioned by concatenating `[z_t, time features, class
/// embedding]` at the input; SiLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl DenoiserModel {
    /// Uniform `±1/√fan_in` for layers and unit normal for embeddings.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        let mut params = Vec::with_capacity(shapes.len());
        for (i, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if i == 0 {
                (0..n).map(|_| StandardNormal.sample(rng)).collect()
            } else {
                let fan_in = if shape.len() == 2 {
                    shape[0]
                } else {
                    shapes[i - 1][0]
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("bound > 0");
                (0..n).map(|_| dist.sample(rng)).collect()
            };
            params.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(Self { config, params })
    }

    /// All parameters zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .param_shapes()
            .iter()
            .map(|s| Tensor::zeros(s))
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {i} has shape {:?}, expected {s:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same weights, different output interpretation.
    pub fn with_parameterization(mut self, p: Parameterization) -> Self {
        self.config.parameterization = p;
        self
    }

    fn check_inputs(&self, z: &Tensor, ts: &[f64], conds: &[usize]) -> Result<()> {
        let rows = z.rows();
        if z.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "latent batch must be 2-D (batch, latent_dim), got shape {:?}",
                z.shape()
            )));
        }
        if z.cols() != self.config.latent_dim {
            return Err(Error::Shape {
                context: "denoiser input latent_dim",
                dim: 1,
                expected: self.config.latent_dim,
                actual: z.cols(),
            });
        }
        if ts.len() != rows {
            return Err(Error::Shape {
                context: "denoiser times per row",
                dim: 0,
                expected: rows,
                actual: ts.len(),
            });
        }
        if conds.len() != rows {
            return Err(Error::Shape {
                context: "denoiser conditions per row",
                dim: 0,
                expected: rows,
                actual: conds.len(),
            });
        }
        if let Some(&t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::OutOfRange {
                name: "t",
                value: t,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if let Some(&c) = conds.iter().find(|&&c| c >= self.config.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "condition {c} >= num_classes {}",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    fn input_matrix(&self, z: &Tensor, ts: &[f64], conds: &[usize]) -> Result<Tensor> {
        let tf = time_features(ts, self.config.num_frequencies);
        let embed = &self.params[0];
        let in_dim = self.config.input_dim();
        let mut data = Vec::with_capacity(z.rows() * in_dim);
        for (r, &c) in conds.iter().enumerate() {
            data.extend_from_slice(z.row(r));
            if self.config.num_frequencies > 0 {
                data.extend_from_slice(tf.row(r));
            }
            data.extend_from_slice(embed.row(c));
        }
        Tensor::matrix(z.rows(), in_dim, data)
    }
}

fn add_bias_inplace(x: &mut Tensor, bias: &Tensor) {
    let cols = x.cols();
    for row in x.data_mut().chunks_mut(cols) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
}

impl Denoiser for DenoiserModel {
    fn parameterization(&self) -> Parameterization {
        self.config.parameterization
    }

    fn set_parameterization(&mut self, p: Parameterization) {
        self.config.parameterization = p;
    }

    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn forward_batch(&self, z: &Tensor, ts: &[f64], conds: &[usize]) -> Result<Tensor> {
        self.check_inputs(z, ts, conds)?;
        let mut h = self.input_matrix(z, ts, conds)?;
        let layers = self.params[1..].chunks(2);
        let n_layers = layers.len();
        for (i, wb) in layers.enumerate() {
            h = h.matmul(&wb[0])?;
            add_bias_inplace(&mut h, &wb[1]);
            if i + 1 < n_layers {
                h = h.map(silu);
            }
        }
        Ok(h)
    }

    fn forward_graph(
        &self,
        g: &mut Graph,
        params: &[Var],
        z: Var,
        ts: &[f64],
        conds: &[usize],
    ) -> Result<Var> {
        self.check_inputs(g.value(z), ts, conds)?;
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let emb = g.gather_rows(params[0], conds)?;
        let h0 = if self.config.num_frequencies > 0 {
            let tf = g.leaf(time_features(ts, self.config.num_frequencies));
            g.concat_cols(&[z, tf, emb])?
        } else {
            g.concat_cols(&[z, emb])?
        };
        let mut h = h0;
        let n_layers = (params.len() - 1) / 2;
        for i in 0..n_layers {
            let w = params[1 + 2 * i];
            let b = params[2 + 2 * i];
            let lin = g.matmul(h, w)?;
            h = g.add_row(lin, b)?;
            if i + 1 < n_layers {
                h = g.silu(h);
            }
        }
        Ok(h)
    }
}
