//! Frozen multi-head network the adapters attach to.
//!
//! Layer `l` sends its input `x` (n x k) through every head's effective weight
//! `W_{l,h} + alpha * B A` (d x k), concatenates the head outputs (n x H*d),
//! applies a frozen mixing matrix (k x H*d), then `tanh`. The last layer skips
//! the nonlinearity. Gradients are derived by hand and checked against finite
//! differences in the tests.

use sha2::{Digest, Sha256};

use crate::adapter::LoraAdapter;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, Op};
use crate::rng::{self, STREAM_ADAPTER_INIT, STREAM_BASE_WEIGHTS, STREAM_MIXING};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Output dimension of each head weight.
    pub d: usize,
    /// Input (and output) dimension of every layer.
    pub k: usize,
    /// Seed for the frozen weights.
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d == 0 || self.k == 0 {
            return Err(Error::invalid("layers, heads, d and k must all be >= 1"));
        }
        Ok(())
    }

    pub fn num_heads(&self) -> usize {
        self.layers * self.heads
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    config: ModelConfig,
    base: Vec<Matrix>,
    mixing: Vec<Matrix>,
    pub adapters: Vec<LoraAdapter>,
}

#[derive(Debug, Clone)]
pub struct HeadGradient {
    pub grad_b: Matrix,
    pub grad_a: Matrix,
    pub grad_alpha: f64,
}

/// Task-loss gradients for every head plus the loss itself.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub loss: f64,
    pub heads: Vec<HeadGradient>,
}

struct LayerTape {
    input: Matrix,
    /// Stacked effective weights, (H*d) x k.
    weights: Matrix,
    /// Post-activation output.
    output: Matrix,
}

impl ModelState {
    /// Seeded frozen weights and fresh rank-`r0` adapters.
    ///
    /// Base weights are `N(0, 1/k)`. Mixing matrices come from [`block_mixing`].
    pub fn new(config: ModelConfig, r0: usize) -> Result<Self> {
        config.validate()?;
        let ModelConfig { layers, heads, d, k, seed } = config;
        let mut rng = rng::rng_from(seed, &[STREAM_BASE_WEIGHTS]);
        let base = (0..layers * heads)
            .map(|_| Matrix::gaussian(d, k, 1.0 / (k as f64).sqrt(), &mut rng))
            .collect();
        let mut rng = rng::rng_from(seed, &[STREAM_MIXING]);
        let mixing = (0..layers).map(|_| block_mixing(heads, d, k, &mut rng)).collect();
        let adapter_seed = rng::derive_seed(seed, &[STREAM_ADAPTER_INIT]);
        let mut adapters = Vec::with_capacity(layers * heads);
        for l in 0..layers {
            for h in 0..heads {
                adapters.push(LoraAdapter::new(l, h, d, k, r0, adapter_seed)?);
            }
        }
        Ok(ModelState { config, base, mixing, adapters })
    }

    /// Assembles a state from explicit parts, checking every shape.
    pub fn from_parts(
        config: ModelConfig,
        base: Vec<Matrix>,
        mixing: Vec<Matrix>,
        adapters: Vec<LoraAdapter>,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.num_heads();
        if base.len() != n || adapters.len() != n || mixing.len() != config.layers {
            return Err(Error::invalid("parameter grid does not match (layers, heads)"));
        }
        if base.iter().any(|w| w.shape() != (config.d, config.k)) {
            return Err(Error::invalid("base weight with wrong shape"));
        }
        if mixing.iter().any(|m| m.shape() != (config.k, config.heads * config.d)) {
            return Err(Error::invalid("mixing matrix with wrong shape"));
        }
        if adapters.iter().any(|a| a.d() != config.d || a.k() != config.k) {
            return Err(Error::invalid("adapter with wrong shape"));
        }
        Ok(ModelState { config, base, mixing, adapters })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn base(&self) -> &[Matrix] {
        &self.base
    }

    pub fn mixing(&self) -> &[Matrix] {
        &self.mixing
    }

    /// Flat index of head `(layer, head)`.
    pub fn index(&self, layer: usize, head: usize) -> usize {
        layer * self.config.heads + head
    }

    /// Replaces every adapter, keeping the frozen weights.
    pub fn with_adapters(&self, adapters: Vec<LoraAdapter>) -> Result<Self> {
        ModelState::from_parts(self.config, self.base.clone(), self.mixing.clone(), adapters)
    }

    /// SHA-256 over the frozen weights, in a fixed order.
    pub fn base_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for m in self.base.iter().chain(&self.mixing) {
            for v in m.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Sum of trainable parameters over all adapters.
    pub fn param_count(&self) -> usize {
        self.adapters.iter().map(LoraAdapter::param_count).sum()
    }

    fn layer_weights(&self, layer: usize) -> Matrix {
        let ModelConfig { heads, d, k, .. } = self.config;
        let mut w = Matrix::zeros(heads * d, k);
        for h in 0..heads {
            let i = self.index(layer, h);
            let base = &self.base[i];
            let delta = self.adapters[i].forward_delta();
            let dst = &mut w.data_mut()[h * d * k..(h + 1) * d * k];
            for ((o, b), dv) in dst.iter_mut().zip(base.data()).zip(delta.data()) {
                *o = b + dv;
            }
        }
        w
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.k {
            return Err(Error::invalid(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.config.k
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Matrix) -> Result<Vec<LayerTape>> {
        self.check_input(x)?;
        let layers = self.config.layers;
        let mut tapes: Vec<LayerTape> = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = match tapes.last() {
                Some(t) => t.output.clone(),
                None => x.clone(),
            };
            let weights = self.layer_weights(l);
            let z = gemm(&input, Op::N, &weights, Op::T)?;
            let mut output = gemm(&z, Op::N, &self.mixing[l], Op::T)?;
            if l + 1 < layers {
                output.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            }
            tapes.push(LayerTape { input, weights, output });
        }
        Ok(tapes)
    }

    /// Network output for a batch of row-vector inputs (n x k).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.run(x)?.pop().expect("at least one layer").output)
    }

    /// Exact gradients of the mean-squared task loss with respect to every
    /// adapter factor and scale. Frozen weights get nothing.
    pub fn backward(&self, x: &Matrix, target: &Matrix) -> Result<GradientBundle> {
        let tapes = self.run(x)?;
        let pred = &tapes.last().expect("at least one layer").output;
        if pred.shape() != target.shape() {
            return Err(Error::invalid("target shape does not match model output"));
        }
        let loss = task_loss(pred, target)?;
        let ModelConfig { layers, heads, d, k, .. } = self.config;

        let scale = 2.0 / pred.data().len() as f64;
        let mut upstream = pred.sub(target)?.scale(scale);
        let mut grads: Vec<Option<HeadGradient>> = vec![None; layers * heads];

        for l in (0..layers).rev() {
            let tape = &tapes[l];
            if l + 1 < layers {
                for (g, y) in upstream.data_mut().iter_mut().zip(tape.output.data()) {
                    *g *= 1.0 - y * y;
                }
            }
            let dz = gemm(&upstream, Op::N, &self.mixing[l], Op::N)?;
            let dw = gemm(&dz, Op::T, &tape.input, Op::N)?;
            for h in 0..heads {
                let i = self.index(l, h);
                let ad = &self.adapters[i];
                let g = Matrix::from_vec(d, k, dw.data()[h * d * k..(h + 1) * d * k].to_vec())?;
                let grad_b = gemm(&g, Op::N, ad.a(), Op::T)?.scale(ad.alpha());
                let grad_a = gemm(ad.b(), Op::T, &g, Op::N)?.scale(ad.alpha());
                let grad_alpha = g.frobenius_dot(&ad.product())?;
                grads[i] = Some(HeadGradient { grad_b, grad_a, grad_alpha });
            }
            if l > 0 {
                upstream = gemm(&dz, Op::N, &tape.weights, Op::N)?;
            }
        }
        Ok(GradientBundle {
            loss,
            heads: grads.into_iter().map(|g| g.expect("every head visited")).collect(),
        })
    }
}

/// Output rows `[h k / H, (h + 1) k / H)` of the layer belong to head `h`.
pub fn head_rows(head: usize, heads: usize, k: usize) -> std::ops::Range<usize> {
    head * k / heads..(head + 1) * k / heads
}

/// Frozen `k x (H d)` mixing matrix in which every output row reads from a
/// single head: the block for head `h` is `N(0, 1/d)` on [`head_rows`] and
/// zero elsewhere. Heads therefore never share an output coordinate, and
/// each head's update is observable on its own.
pub fn block_mixing<R: rand::Rng + ?Sized>(heads: usize, d: usize, k: usize, rng: &mut R) -> Matrix {
    let dense = Matrix::gaussian(k, heads * d, 1.0 / (d as f64).sqrt(), rng);
    Matrix::from_fn(k, heads * d, |r, c| {
        if head_rows(c / d, heads, k).contains(&r) {
            dense[(r, c)]
        } else {
            0.0
        }
    })
}

/// Mean squared error over every element of the batch.
pub fn task_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid("prediction and target shapes differ"));
    }
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n as f64)
}
