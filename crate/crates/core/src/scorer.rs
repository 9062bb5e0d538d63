//! Linear and multilayer-perceptron scorers with hand-written reverse mode.
//!
//! Parameters live in one flat vector. Layer `l` maps `in_l -> out_l` and stores
//! its weight matrix row-major (`out_l x in_l`) followed by its bias (`out_l`).
//! Every forward and backward traversal is tallied so training code can report
//! exact traversal counts.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::losses::ScoreVector;

const CHECKPOINT_FORMAT: &str = "robust-l2d-scorer";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, v)`, subgradient 0 at the kink.
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Shape of a scorer. An empty `hidden` list gives a linear scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ScorerSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: Vec::new(),
            activation: Activation::Identity,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "scorer widths must be >= 1: input {}, hidden {:?}, output {}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Offset of the weight block of each layer in the flat vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers()
            .iter()
            .map(|(i, o)| {
                let here = off;
                off += i * o + o;
                here
            })
            .collect()
    }
}

/// Running tallies of forward and backward traversals.
#[derive(Debug, Default)]
pub struct TraversalCounter {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl TraversalCounter {
    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backward(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }

    /// Adds tallies recorded elsewhere, e.g. on a per-sample copy.
    pub fn add(&self, forward: u64, backward: u64) {
        self.forward.fetch_add(forward, Ordering::Relaxed);
        self.backward.fetch_add(backward, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.backward.store(0, Ordering::Relaxed);
    }
}

impl Clone for TraversalCounter {
    fn clone(&self) -> Self {
        Self {
            forward: AtomicU64::new(self.forward()),
            backward: AtomicU64::new(self.backward()),
        }
    }
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer; `inputs[0]` is the feature vector.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl ForwardCache {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// A scorer: shape plus flat parameters.
#[derive(Debug, Clone)]
pub struct Scorer {
    spec: ScorerSpec,
    params: Vec<f64>,
    counter: TraversalCounter,
}

impl PartialEq for Scorer {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl Scorer {
    pub fn new(spec: ScorerSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_len(spec.num_params(), params.len(), "parameter vector")?;
        Ok(Self {
            spec,
            params,
            counter: TraversalCounter::default(),
        })
    }

    pub fn zeros(spec: ScorerSpec) -> Result<Self> {
        let n = spec.num_params();
        Self::new(spec, vec![0.0; n])
    }

    /// Symmetric uniform init with `a = sqrt(6 / (fan_in + fan_out))`; biases start at 0.
    pub fn init(spec: ScorerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.num_params());
        for (fan_in, fan_out) in spec.layers() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self::new(spec, params)
    }

    /// Copy with its own, zeroed traversal counter.
    pub fn detached(&self) -> Scorer {
        Scorer {
            spec: self.spec.clone(),
            params: self.params.clone(),
            counter: TraversalCounter::default(),
        }
    }

    pub fn spec(&self) -> &ScorerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        check_len(self.params.len(), params.len(), "parameter vector")?;
        self.params = params;
        Ok(())
    }

    pub fn traversals(&self) -> &TraversalCounter {
        &self.counter
    }

    /// Forward pass; counts one traversal.
    pub fn forward(&self, x: &[f64]) -> Result<ScoreVector> {
        Ok(ScoreVector(self.forward_cached(x)?.scores))
    }

    /// Forward pass keeping activations; counts one traversal.
    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_len(self.spec.input_dim, x.len(), "scorer input")?;
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
        let layers = self.spec.layers();
        let last = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(last);
        inputs.push(x.to_vec());
        let mut off = 0;
        let mut scores = Vec::new();
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let h = &inputs[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + b[o]
                })
                .collect();
            if l == last {
                scores = z;
            } else {
                inputs.push(z.iter().map(|v| self.spec.activation.apply(*v)).collect());
                pre.push(z);
            }
        }
        Ok(ForwardCache {
            inputs,
            pre,
            scores,
        })
    }

    /// Backward pass for one cached forward: adds `d(upstream . scores)/d params`
    /// into `param_grad` and returns the input gradient. Counts one traversal.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        param_grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.counter.backward.fetch_add(1, Ordering::Relaxed);
        self.backward_uncounted(cache, upstream, Some(param_grad))
    }

    /// Backward pass that only produces the input gradient. Counts one traversal.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.counter.backward.fetch_add(1, Ordering::Relaxed);
        self.backward_uncounted(cache, upstream, None)
    }

    /// One backward traversal through several cached forwards of the same
    /// sample (its clean pass and its adversarial copies). Parameter gradients
    /// are accumulated in the given order.
    pub fn backward_combined(
        &self,
        parts: &[(&ForwardCache, &[f64])],
        param_grad: &mut [f64],
    ) -> Result<()> {
        self.counter.backward.fetch_add(1, Ordering::Relaxed);
        for (cache, upstream) in parts {
            self.backward_uncounted(cache, upstream, Some(&mut *param_grad))?;
        }
        Ok(())
    }

    fn backward_uncounted(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        check_len(self.spec.output_dim, upstream.len(), "upstream gradient")?;
        if let Some(g) = param_grad.as_deref() {
            check_len(self.params.len(), g.len(), "parameter gradient")?;
        }
        let layers = self.spec.layers();
        let offsets = self.spec.layer_offsets();
        let mut delta = upstream.to_vec();
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let off = offsets[l];
            let h = &cache.inputs[l];
            if let Some(pg) = param_grad.as_deref_mut() {
                let (gw, gb) = pg[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, hv) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(h) {
                        *g += d * hv;
                    }
                    gb[o] += d;
                }
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut below = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (b, wv) in below.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *b += d * wv;
                }
            }
            if l > 0 {
                let act = self.spec.activation;
                for (b, z) in below.iter_mut().zip(&cache.pre[l - 1]) {
                    *b *= act.derivative(*z);
                }
            }
            delta = below;
        }
        Ok(delta)
    }

    /// Gradient of `upstream . r(x)` with respect to the parameters.
    pub fn grad_params(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x)?;
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(&cache, upstream, &mut g)?;
        Ok(g)
    }

    /// Gradient of `upstream . r(x)` with respect to the input.
    pub fn grad_input(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x)?;
        self.backward_input(&cache, upstream)
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self.params.clone(),
        };
        let text = serde_json::to_string_pretty(&ck)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Self::new(ck.spec, ck.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self.params.clone(),
        })?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: ScorerSpec,
    params: Vec<f64>,
}
