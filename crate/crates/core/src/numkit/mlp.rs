//! Dense multilayer perceptrons with explicit forward caches and backprop.
//!
//! Weights are stored `in_dim × out_dim` so a layer computes `X·W + b` on a
//! row batch `X`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::seed;

/// LeakyReLU slope used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> (u8, f64) {
        match self {
            Activation::Identity => (0, 0.0),
            Activation::Relu => (1, 0.0),
            Activation::LeakyRelu(s) => (2, s),
        }
    }

    pub(crate) fn from_code(code: u8, slope: f64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::LeakyRelu(slope)),
            other => Err(Error::invalid(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn leaky(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Activation::LeakyRelu(LEAKY_SLOPE))
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::invalid("layer dimensions must be >= 1"));
        }
        if let Activation::LeakyRelu(s) = self.activation {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::invalid(format!("leaky slope {s} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Teacher,
    Student,
    Generator,
    Classifier,
}

impl Role {
    pub(crate) fn code(self) -> u8 {
        match self {
            Role::Teacher => 0,
            Role::Student => 1,
            Role::Generator => 2,
            Role::Classifier => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Role::Teacher,
            1 => Role::Student,
            2 => Role::Generator,
            3 => Role::Classifier,
            other => return Err(Error::invalid(format!("unknown role code {other}"))),
        })
    }
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Parameters of a role-tagged dense network.
#[derive(Debug)]
pub struct Mlp {
    role: Role,
    layers: Vec<LayerSpec>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    seed: u64,
    // identifies this exact parameter state; forward caches carry it
    stamp: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            role: self.role,
            layers: self.layers.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            seed: self.seed,
            stamp: fresh_stamp(),
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role
            && self.layers == other.layers
            && self.weights == other.weights
            && self.biases == other.biases
            && self.seed == other.seed
    }
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    // inputs[l] is the input to layer l
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

/// Gradients with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &Mlp) -> Self {
        MlpGrads {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat coordinate access in the same order as [`Mlp::param`].
    pub fn get(&self, index: usize) -> f64 {
        let mut i = index;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if i < w.data().len() {
                return w.data()[i];
            }
            i -= w.data().len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("gradient index {index} out of range");
    }

    pub fn get_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.data().len();
            if i < n {
                return &mut w.data_mut()[i];
            }
            i -= n;
            if i < b.len() {
                return &mut b[i];
            }
            i -= b.len();
        }
        panic!("gradient index {index} out of range");
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().flat_map(|m| m.data()).map(|v| v * v).sum();
        let b: f64 = self.biases.iter().flatten().map(|v| v * v).sum();
        (w + b).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.data().iter().all(|&v| v == 0.0))
            && self.biases.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    /// Initializes a network with uniform weights in `±sqrt(6/(in+out))`
    /// and zero biases. Generators must end in a ReLU layer.
    pub fn init(specs: &[LayerSpec], role: Role, seed: u64) -> Result<Self> {
        validate_chain(specs)?;
        if role == Role::Generator && specs.last().map(|s| s.activation) != Some(Activation::Relu) {
            return Err(Error::invalid("generator output layer must be ReLU"));
        }
        let mut rng = seed::rng(seed);
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for spec in specs {
            let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let data = (0..spec.in_dim * spec.out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(Matrix::from_vec(spec.in_dim, spec.out_dim, data)?);
            biases.push(vec![0.0; spec.out_dim]);
        }
        Ok(Mlp {
            role,
            layers: specs.to_vec(),
            weights,
            biases,
            seed,
            stamp: fresh_stamp(),
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(
        role: Role,
        specs: &[LayerSpec],
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        validate_chain(specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::shape("parameter count does not match layer count"));
        }
        for (l, spec) in specs.iter().enumerate() {
            if weights[l].shape() != (spec.in_dim, spec.out_dim) || biases[l].len() != spec.out_dim {
                return Err(Error::shape(format!("layer {l} parameters do not match spec")));
            }
        }
        Ok(Mlp {
            role,
            layers: specs.to_vec(),
            weights,
            biases,
            seed,
            stamp: fresh_stamp(),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Mutable access to weights and biases; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> (&mut [Matrix], &mut [Vec<f64>]) {
        self.stamp = fresh_stamp();
        (&mut self.weights, &mut self.biases)
    }

    /// Flat parameter coordinate: per layer, weights row-major then biases.
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if i < w.data().len() {
                return w.data()[i];
            }
            i -= w.data().len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        self.stamp = fresh_stamp();
        let mut i = index;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.data().len();
            if i < n {
                w.data_mut()[i] = value;
                return;
            }
            i -= n;
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Applies the network to a row batch, keeping what backward needs.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (l, spec) in self.layers.iter().enumerate() {
            let mut z = current.matmul(&self.weights[l])?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&self.biases[l]) {
                    *v += b;
                }
            }
            let act = spec.activation;
            let out = z.map(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = out;
        }
        Ok((
            current,
            ForwardCache {
                stamp: self.stamp,
                inputs,
                pre_activations: pre,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the network output).
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if cache.stamp != self.stamp || cache.inputs.len() != self.layers.len() {
            return Err(Error::invalid("forward cache is stale or belongs to another network"));
        }
        let rows = cache.inputs[0].rows();
        if upstream.shape() != (rows, self.output_dim()) {
            return Err(Error::shape(format!(
                "upstream gradient {:?}, expected {:?}",
                upstream.shape(),
                (rows, self.output_dim())
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let act = self.layers[l].activation;
            let z = &cache.pre_activations[l];
            for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
                *d *= act.derivative(zv);
            }
            grads.weights[l] = cache.inputs[l].t_matmul(&delta)?;
            let gb = &mut grads.biases[l];
            for r in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            delta = delta.matmul_t(&self.weights[l])?;
        }
        Ok((grads, delta))
    }

    /// Canonical little-endian weight serialization.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(weight_blob_len(&self.layers));
        out.extend_from_slice(WEIGHT_MAGIC);
        out.push(self.role.code());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for spec in &self.layers {
            let (code, slope) = spec.activation.code();
            out.extend_from_slice(&(spec.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(spec.out_dim as u32).to_le_bytes());
            out.push(code);
            out.extend_from_slice(&slope.to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.data().iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(Error::invalid("weight blob has bad magic"));
        }
        let role = Role::from_code(r.u8()?)?;
        let seed = r.u64()?;
        let n = r.u32()? as usize;
        let mut specs = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let code = r.u8()?;
            let slope = r.f64()?;
            specs.push(LayerSpec::new(in_dim, out_dim, Activation::from_code(code, slope)?));
        }
        validate_chain(&specs)?;
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for spec in &specs {
            let w = r.f64s(spec.in_dim * spec.out_dim)?;
            weights.push(Matrix::from_vec(spec.in_dim, spec.out_dim, w)?);
            biases.push(r.f64s(spec.out_dim)?);
        }
        if !r.is_empty() {
            return Err(Error::invalid("trailing bytes after weight blob"));
        }
        Mlp::from_parts(role, &specs, weights, biases, seed)
    }
}

pub(crate) const WEIGHT_MAGIC: &[u8; 4] = b"AZW1";

/// Size in bytes of the canonical serialization of a network with `specs`.
pub fn weight_blob_len(specs: &[LayerSpec]) -> usize {
    let header = 4 + 1 + 8 + 4 + specs.len() * (4 + 4 + 1 + 8);
    header + 8 * specs.iter().map(LayerSpec::param_count).sum::<usize>()
}

fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("network needs at least one layer"));
    }
    for spec in specs {
        spec.validate()?;
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::invalid(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Cursor over little-endian encoded bytes.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::invalid(format!(
                "truncated input: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::invalid("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
