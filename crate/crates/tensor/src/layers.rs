//! Parameterised building blocks over [`Graph`] for `[channels, time]` sequences.

use rand::Rng;

use crate::{Graph, ParamId, ParamStore, Result, Scalar, Tensor, Var};

/// Weight initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `1/sqrt(fan_in)`.
    FanIn,
    Normal(f64),
    Zeros,
}

impl Init {
    fn make<T: Scalar, R: Rng + ?Sized>(self, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::FanIn => Tensor::randn(rows, cols, 1.0 / (fan_in.max(1) as f64).sqrt(), rng),
            Init::Normal(std) => Tensor::randn(rows, cols, std, rng),
            Init::Zeros => Tensor::zeros(rows, cols),
        }
    }
}

/// 1-D convolution with "same"-style zero padding (or explicit padding).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1d {
    /// Stride-1 convolution preserving length.
    #[allow(clippy::too_many_arguments)]
    pub fn same<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let total = dilation * (kernel - 1);
        Self::with_padding(
            store,
            name,
            in_channels,
            out_channels,
            kernel,
            dilation,
            1,
            (total / 2, total - total / 2),
            init,
            rng,
        )
    }

    /// Pointwise (kernel 1) projection.
    pub fn pointwise<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        Self::same(store, name, in_channels, out_channels, 1, 1, init, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_padding<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        (pad_left, pad_right): (usize, usize),
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel;
        let weight = store.register(
            format!("{name}.weight"),
            init.make(out_channels, fan_in, fan_in, rng),
        )?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(out_channels, 1))?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            dilation,
            stride,
            pad_left,
            pad_right,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        assert_eq!(
            g.shape(x).0,
            self.in_channels,
            "conv expects {} input channels",
            self.in_channels
        );
        let cols = if self.kernel == 1 && self.stride == 1 && self.pad_left == 0 && self.pad_right == 0 {
            x
        } else {
            g.im2col(x, self.kernel, self.dilation, self.stride, self.pad_left, self.pad_right)
        };
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(w, cols);
        g.add(y, b)
    }
}

/// Transposed convolution with stride `factor`, kernel `2·factor`, mapping
/// `[C_in, T] → [C_out, T·factor]`. `factor` must be even.
#[derive(Debug, Clone)]
pub struct Upsample1d {
    conv: Conv1d,
    pub factor: usize,
}

impl Upsample1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        factor: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if factor == 0 || !factor.is_multiple_of(2) {
            return Err(crate::TensorError::Shape(format!(
                "upsample factor must be a positive even number, got {factor}"
            )));
        }
        let kernel = 2 * factor;
        // transposed conv (stride f, padding f/2) == conv over zero-stuffed input
        // padded by kernel − 1 − f/2 on each side
        let pad = kernel - 1 - factor / 2;
        let conv = Conv1d::with_padding(
            store,
            name,
            in_channels,
            out_channels,
            kernel,
            1,
            1,
            (pad, pad),
            init,
            rng,
        )?;
        Ok(Self { conv, factor })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let stuffed = if self.factor == 1 {
            x
        } else {
            g.zero_stuff_cols(x, self.factor)
        };
        self.conv.forward(g, store, stuffed)
    }
}

/// Layer normalisation over channels (rows) independently for each frame.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl ChannelNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.register(format!("{name}.gamma"), Tensor::full(channels, 1, T::one()))?;
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(channels, 1))?;
        Ok(Self { gamma, beta, channels })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let inv_c = T::one() / T::lit(self.channels as f64);
        let s = g.col_sums(x);
        let mu = g.scale(s, inv_c);
        let xc = g.sub(x, mu);
        let sq = g.square(xc);
        let s2 = g.col_sums(sq);
        let var = g.affine(s2, inv_c, T::lit(1e-5));
        let inv_std = g.powf(var, T::lit(-0.5));
        let y = g.mul(xc, inv_std);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul(y, gamma);
        g.add(y, beta)
    }
}
