use super::Tensor;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};

/// Batch-norm epsilon (inference form).
pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Wrap the column (azimuth) axis, zero-pad rows.
    CircularWidth,
    Zero,
}

/// Convolution followed by inference batch-norm and an optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvParams {
    /// (out, in, kh, kw)
    pub kernel: Tensor,
    pub bias: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
    pub bn_mean: Tensor,
    pub bn_var: Tensor,
    pub relu: bool,
}

impl ConvParams {
    /// A convolution with the given kernel, zero bias and a batch-norm whose
    /// variance is `1 - BN_EPS` so that it is exactly the identity.
    pub fn with_identity_bn(kernel: Tensor, relu: bool) -> Result<Self> {
        let out = *kernel
            .shape()
            .first()
            .ok_or_else(|| Error::shape("empty kernel"))?;
        Ok(ConvParams {
            kernel,
            bias: Tensor::zeros(&[out]),
            bn_scale: Tensor::full(&[out], 1.0),
            bn_shift: Tensor::zeros(&[out]),
            bn_mean: Tensor::zeros(&[out]),
            bn_var: Tensor::full(&[out], 1.0 - BN_EPS),
            relu,
        })
    }

    /// 1x1 kernel that copies input channel `i` to output channel `i`.
    pub fn identity(channels: usize, relu: bool) -> Result<Self> {
        let mut k = vec![0.0; channels * channels];
        for i in 0..channels {
            k[i * channels + i] = 1.0;
        }
        Self::with_identity_bn(Tensor::new(vec![channels, channels, 1, 1], k)?, relu)
    }

    pub fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        match self.kernel.shape()[..] {
            [o, i, kh, kw] => Ok((o, i, kh, kw)),
            _ => Err(Error::shape(format!(
                "kernel must be (out, in, kh, kw), got {:?}",
                self.kernel.shape()
            ))),
        }
    }

    fn validate(&self) -> Result<(usize, usize, usize, usize)> {
        let (o, i, kh, kw) = self.dims()?;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!("kernel extents must be odd, got {kh}x{kw}")));
        }
        for (name, t) in [
            ("bias", &self.bias),
            ("bn.scale", &self.bn_scale),
            ("bn.shift", &self.bn_shift),
            ("bn.mean", &self.bn_mean),
            ("bn.var", &self.bn_var),
        ] {
            if t.shape() != [o] {
                return Err(Error::shape(format!(
                    "{name} must be ({o}), got {:?}",
                    t.shape()
                )));
            }
        }
        if let Some(v) = self.bn_var.data().iter().find(|v| **v <= 0.0) {
            return Err(Error::invalid(format!("batch-norm variance must be positive, got {v}")));
        }
        Ok((o, i, kh, kw))
    }
}

pub fn conv2d(x: &Tensor, p: &ConvParams, stride: usize, pad: PadMode) -> Result<Tensor> {
    conv2d_with(Exec::default(), x, p, stride, pad)
}

/// 'Same' convolution with stride 1 or 2; output extents are `ceil(H / stride)`
/// by `ceil(W / stride)`. Output channels are computed independently.
pub fn conv2d_with(
    exec: Exec,
    x: &Tensor,
    p: &ConvParams,
    stride: usize,
    pad: PadMode,
) -> Result<Tensor> {
    let (cin, h, w) = x.dims3()?;
    let (cout, kin, kh, kw) = p.validate()?;
    if kin != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels, kernel expects {kin}"
        )));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::invalid(format!("stride must be 1 or 2, got {stride}")));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);

    // Source column for each (kernel column, output column); None = zero pad.
    let cols: Vec<Vec<Option<usize>>> = (0..kw)
        .map(|kx| {
            (0..wo)
                .map(|ox| {
                    let ix = (ox * stride + kx) as isize - pw as isize;
                    match pad {
                        PadMode::CircularWidth => Some(ix.rem_euclid(w as isize) as usize),
                        PadMode::Zero => (0..w as isize).contains(&ix).then_some(ix as usize),
                    }
                })
                .collect()
        })
        .collect();

    let kernel = p.kernel.data();
    let xin = x.data();
    let plane = ho * wo;
    let mut out = vec![0.0f32; cout * plane];
    exec::for_each_chunk(exec, &mut out, plane, |oc, acc| {
        for ic in 0..cin {
            let src = &xin[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for (kx, col) in cols.iter().enumerate() {
                    let wgt = kernel[((oc * cin + ic) * kh + ky) * kw + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut acc[oy * wo..(oy + 1) * wo];
                        for (d, c) in dst.iter_mut().zip(col) {
                            if let Some(c) = *c {
                                *d += wgt * row[c];
                            }
                        }
                    }
                }
            }
        }
        let bias = p.bias.data()[oc];
        let inv = p.bn_scale.data()[oc] / (p.bn_var.data()[oc] + BN_EPS).sqrt();
        let mean = p.bn_mean.data()[oc];
        let shift = p.bn_shift.data()[oc];
        for v in acc.iter_mut() {
            let y = (*v + bias - mean) * inv + shift;
            *v = if p.relu { y.max(0.0) } else { y };
        }
    });
    Tensor::from_parts(vec![cout, ho, wo], out, "conv2d")
}
