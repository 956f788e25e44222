//! Small fully connected networks with hand-written backpropagation and Adam.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"POSGNN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 1,
            Activation::Identity => 0,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            c => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }
}

/// One affine layer followed by an elementwise activation. Weights are
/// stored `input × output`, so a batch forward is `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations saved by a batch forward pass: `values[0]` is the input and
/// `values[i + 1]` the post-activation output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    values: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("cache holds the input at least")
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &self.layers {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &mut self.layers {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Malformed("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Malformed(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Malformed(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(Self { layers })
    }

    /// Tanh hidden layers and an identity output layer. Weights are
    /// Xavier-uniform, biases zero, and the output layer is multiplied by
    /// `output_scale`.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let scale = if i == last { output_scale } else { 1.0 };
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng) * scale);
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if i == last { Activation::Identity } else { Activation::Tanh },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass for one input, keeping the cache for [`DenseNet::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        let cache = self.forward_batch(x)?;
        let out = cache.output().row(0).to_vec();
        Ok((out, cache))
    }

    /// Forward pass for a batch laid out one example per row.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Malformed(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_owned());
        for layer in &self.layers {
            let mut z = values.last().unwrap().dot(&layer.weights);
            z += &layer.bias;
            if layer.activation == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            values.push(z);
        }
        Ok(ForwardCache { values })
    }

    /// Cache-free single-input forward pass.
    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut x = Array1::from(input.to_vec());
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights);
            z += &layer.bias;
            if layer.activation == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            x = z;
        }
        x.to_vec()
    }

    /// Reverse-mode gradients of `Σ_rows ⟨output_gradient, output⟩` with
    /// respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: ArrayView2<'_, f64>) -> Result<Gradients> {
        if cache.values.len() != self.layers.len() + 1 {
            return Err(Error::Malformed("forward cache does not match network depth".into()));
        }
        if output_gradient.dim() != cache.output().dim() {
            return Err(Error::Malformed(format!(
                "output gradient shape {:?} does not match output shape {:?}",
                output_gradient.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_gradient.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Tanh {
                let y = &cache.values[i + 1];
                ndarray::Zip::from(&mut delta).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
            }
            let input = &cache.values[i];
            let mut gw = input.t().dot(&delta);
            if !gw.is_standard_layout() {
                gw = gw.as_standard_layout().into_owned();
            }
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights.t());
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    /// Mutable views of every parameter tensor, in the same order as
    /// [`Gradients::slices`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weights.len(), l.bias.len()]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.input_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.output_dim() as u32).to_le_bytes())?;
            w.write_all(&[l.activation.code()])?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a network file".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let count = read_u32(&mut r)? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let input = read_u32(&mut r)? as usize;
            let output = read_u32(&mut r)? as usize;
            let mut act = [0u8; 1];
            r.read_exact(&mut act)?;
            shapes.push((input, output, Activation::from_code(act[0])?));
        }
        let mut f64buf = [0u8; 8];
        let mut read_vec = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut f64buf)?;
                    Ok(f64::from_le_bytes(f64buf))
                })
                .collect()
        };
        let mut layers = Vec::with_capacity(count);
        for (input, output, activation) in shapes {
            let w = read_vec(&mut r, input * output)?;
            let b = read_vec(&mut r, output)?;
            layers.push(Dense {
                weights: Array2::from_shape_vec((input, output), w)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
                bias: Array1::from(b),
                activation,
            });
        }
        Self::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moment accumulators for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Descend along `grads`. Fails without touching anything if a gradient
    /// is not finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Malformed(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != p.len() {
                return Err(Error::Malformed(format!("tensor {i} shape mismatch")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient in tensor {i}")));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Rescale gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / (norm + 1e-12);
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= k));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, b: f64, act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![Dense {
            weights: array![[w]],
            bias: array![b],
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn forward_examples() {
        let zero = DenseNet::from_layers(vec![Dense {
            weights: Array2::zeros((3, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(zero.forward(&[1.0, 2.0, 3.0]).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(single(2.0, 1.0, Activation::Identity).forward(&[3.0]).unwrap().0, vec![7.0]);
        assert_eq!(single(0.0, 0.0, Activation::Tanh).forward(&[42.0]).unwrap().0, vec![0.0]);
        assert!(zero.forward(&[1.0]).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = single(0.5, 0.0, Activation::Identity);
        let (_, cache) = net.forward(&[3.0]).unwrap();
        let g = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].0[[0, 0]], 3.0);
        assert_eq!(g.layers[0].1[0], 1.0);
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::mlp(3, &[5, 4], 2, 1.0, &mut rng);
        let (_, cache) = net.forward(&[0.1, -0.2, 0.3]).unwrap();
        let g = net.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(net.backward(&cache, Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn predict_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::mlp(4, &[64, 64], 3, 0.01, &mut rng);
        let x = [0.3, -1.0, 0.5, 2.0];
        let (a, _) = net.forward(&x).unwrap();
        let b = net.predict(&x);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = DenseNet::mlp(4, &[64, 64], 4, 0.01, &mut ChaCha8Rng::seed_from_u64(1));
        let b = DenseNet::mlp(4, &[64, 64], 4, 0.01, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut adam = AdamState::new(AdamConfig::default(), &[2]);
        adam.step(&mut [&mut p[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g² at t = 1, so Δ = −lr·g/(|g| + ε).
        let mut p = vec![0.0];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &[1]);
        adam.step(&mut [&mut p[..]], &[&[1.0]]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let run = || {
            let mut p = vec![0.5, 0.25];
            let mut adam = AdamState::new(AdamConfig::default(), &[2]);
            adam.step(&mut [&mut p[..]], &[&[0.3, -0.7]]).unwrap();
            (p, adam)
        };
        assert_eq!(run(), run());
        let mut p = vec![0.0];
        let mut adam = AdamState::new(AdamConfig::default(), &[1]);
        let err = adam.step(&mut [&mut p[..]], &[&[f64::NAN]]);
        assert!(matches!(err, Err(Error::Divergence(_))));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn save_load_round_trip() {
        let net = DenseNet::mlp(4, &[8, 8], 2, 0.01, &mut ChaCha8Rng::seed_from_u64(5));
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..7], b"POSGNN1");
        assert_eq!(DenseNet::read_from(&bytes[..]).unwrap(), net);
        assert!(DenseNet::read_from(&b"NOTANET0000"[..]).is_err());
    }

    #[test]
    fn grad_norm_clipping() {
        let mut a = vec![3.0];
        let mut b = vec![4.0];
        let n = clip_grad_norm(&mut [&mut a[..], &mut b[..]], 1.0);
        assert_eq!(n, 5.0);
        assert!(((a[0] * a[0] + b[0] * b[0]).sqrt() - 1.0).abs() < 1e-9);
    }
}
