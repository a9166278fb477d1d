//! Multilayer perceptron with retained-activation backprop.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math::Real;
use crate::nn::kernels::{activation_backward, activation_forward, linear_backward, linear_forward};
use crate::nn::{Activation, ParamLayout};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Architecture of an MLP: layer widths `[in, h1, ..., out]` plus the hidden
/// activation. The final layer is always linear.
#[derive(Debug, Clone)]
pub struct MlpArch {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert!(widths.iter().all(|&w| w > 0));
        MlpArch { widths, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::default();
        for l in 0..self.num_layers() {
            layout.push(format!("layer{l}.weight"), vec![self.widths[l], self.widths[l + 1]]);
            layout.push(format!("layer{l}.bias"), vec![self.widths[l + 1]]);
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layout().total()
    }

    /// Forward pass over a `[batch, in]` slice; returns `[batch, out]`.
    /// Generic so the gradient checker can run it at f64.
    pub fn forward_generic<F: Real>(&self, params: &[F], input: &[F], batch: usize) -> Vec<F> {
        debug_assert_eq!(input.len(), batch * self.input_dim());
        let mut cur: Vec<F> = input.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (i_dim, o_dim) = (self.widths[l], self.widths[l + 1]);
            let w = &params[offset..offset + i_dim * o_dim];
            let b = &params[offset + i_dim * o_dim..offset + i_dim * o_dim + o_dim];
            offset += i_dim * o_dim + o_dim;
            let mut z = vec![F::ZERO; batch * o_dim];
            linear_forward(&cur, w, b, batch, i_dim, o_dim, &mut z);
            if l + 1 < self.num_layers() {
                let mut a = vec![F::ZERO; z.len()];
                activation_forward(self.activation, &z, &mut a);
                cur = a;
            } else {
                cur = z;
            }
        }
        cur
    }
}

/// Retained activations from a training forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    batch: usize,
    /// Layer inputs: `acts[0]` is the network input, `acts[l]` the input to
    /// layer `l`; pre-activations `zs[l]` for every hidden layer.
    acts: Vec<Vec<f32>>,
    zs: Vec<Vec<f32>>,
    populated: bool,
}

/// Dense feed-forward network; parameters live in one flat vector described
/// by [`MlpArch::layout`].
#[derive(Debug, Clone)]
pub struct Mlp {
    arch: MlpArch,
    params: Vec<f32>,
}

impl Mlp {
    /// Random initialization: He-style scale `sqrt(2/fan_in)`, zero biases.
    pub fn new(widths: Vec<usize>, activation: Activation, rng: &mut Rng) -> Self {
        let arch = MlpArch::new(widths, activation);
        let mut params = vec![0.0f32; arch.param_count()];
        let mut offset = 0;
        for l in 0..arch.num_layers() {
            let (i_dim, o_dim) = (arch.widths[l], arch.widths[l + 1]);
            let scale = libm::sqrtf(2.0 / i_dim as f32);
            crate::nn::init_normal(&mut params[offset..offset + i_dim * o_dim], scale, rng);
            offset += i_dim * o_dim + o_dim;
        }
        Mlp { arch, params }
    }

    pub fn from_params(widths: Vec<usize>, activation: Activation, params: Vec<f32>) -> Result<Self> {
        let arch = MlpArch::new(widths, activation);
        if params.len() != arch.param_count() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} parameters", arch.param_count()),
                got: params.len().to_string(),
            });
        }
        Ok(Mlp { arch, params })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn layout(&self) -> ParamLayout {
        self.arch.layout()
    }

    /// Inference forward pass. Validates the input width and that the output
    /// is finite.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let shape = input.shape();
        if shape.is_empty() || shape[shape.len() - 1] != self.arch.input_dim() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("last dimension {}", self.arch.input_dim()),
                got: format!("{shape:?}"),
            });
        }
        let batch = input.len() / self.arch.input_dim();
        let out = self.arch.forward_generic(&self.params, input.data(), batch);
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = self.arch.output_dim();
        let t = Tensor::new(out_shape, out)?;
        t.ensure_finite("mlp output")?;
        Ok(t)
    }

    /// Forward pass that retains activations for [`Mlp::backward`].
    pub fn forward_train(&self, input: &[f32], batch: usize, cache: &mut MlpCache) -> Vec<f32> {
        cache.batch = batch;
        cache.acts.clear();
        cache.zs.clear();
        cache.acts.push(input.to_vec());
        let mut offset = 0;
        let mut cur = input.to_vec();
        for l in 0..self.arch.num_layers() {
            let (i_dim, o_dim) = (self.arch.widths[l], self.arch.widths[l + 1]);
            let w = &self.params[offset..offset + i_dim * o_dim];
            let b = &self.params[offset + i_dim * o_dim..offset + i_dim * o_dim + o_dim];
            offset += i_dim * o_dim + o_dim;
            let mut z = vec![0.0f32; batch * o_dim];
            linear_forward(&cur, w, b, batch, i_dim, o_dim, &mut z);
            if l + 1 < self.arch.num_layers() {
                let mut a = vec![0.0f32; z.len()];
                activation_forward(self.arch.activation, &z, &mut a);
                cache.zs.push(z);
                cache.acts.push(a.clone());
                cur = a;
            } else {
                cur = z;
            }
        }
        cache.populated = true;
        cur
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the network
    /// output, `[batch, out]`) through the retained activations.
    ///
    /// Accumulates parameter gradients into `grads` (flat, same layout as
    /// `params`) and, if `d_input` is given, writes the gradient w.r.t. the
    /// input. Errors if no forward pass populated the cache.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &[f32],
        grads: &mut [f32],
        mut d_input: Option<&mut [f32]>,
    ) -> Result<()> {
        if !cache.populated {
            return Err(CoreError::State(
                "mlp backward called without a prior forward_train".to_string(),
            ));
        }
        if grads.len() != self.params.len() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} gradient slots", self.params.len()),
                got: grads.len().to_string(),
            });
        }
        let batch = cache.batch;
        debug_assert_eq!(d_out.len(), batch * self.arch.output_dim());

        // Per-layer parameter offsets.
        let n_layers = self.arch.num_layers();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            offset += self.arch.widths[l] * self.arch.widths[l + 1] + self.arch.widths[l + 1];
        }

        let mut dz: Vec<f32> = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (i_dim, o_dim) = (self.arch.widths[l], self.arch.widths[l + 1]);
            let off = offsets[l];
            let wsz = i_dim * o_dim;
            let x = &cache.acts[l];
            let w = &self.params[off..off + wsz];
            let (dw, rest) = grads[off..off + wsz + o_dim].split_at_mut(wsz);
            let db = rest;

            let need_dx = l > 0 || d_input.is_some();
            let mut dx = if need_dx { vec![0.0f32; batch * i_dim] } else { Vec::new() };
            linear_backward(
                x,
                w,
                &dz,
                batch,
                i_dim,
                o_dim,
                dw,
                db,
                if need_dx { Some(&mut dx) } else { None },
            );

            if l > 0 {
                // dx is the gradient w.r.t. the previous layer's activation;
                // push it through that activation.
                let z_prev = &cache.zs[l - 1];
                let mut dz_prev = vec![0.0f32; dx.len()];
                activation_backward(self.arch.activation, z_prev, &dx, &mut dz_prev);
                dz = dz_prev;
            } else if let Some(d_input) = d_input.as_deref_mut() {
                d_input.copy_from_slice(&dx);
            }
        }
        Ok(())
    }
}
