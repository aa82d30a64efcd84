use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// Mean over rows and columns: (C, H, W) -> (C, 1, 1).
    Spatial,
    /// Mean over channels: (C, H, W) -> (1, H, W).
    Channel,
}

/// 2x2 max pooling with stride 2. Odd extents are rejected.
pub fn maxpool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if x.is_empty() {
        return Err(Error::shape("maxpool2 on empty tensor"));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool2 needs even extents, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let d = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        let p = &d[ci * h * w..(ci + 1) * h * w];
        for oy in 0..ho {
            let (r0, r1) = (&p[2 * oy * w..], &p[(2 * oy + 1) * w..]);
            for ox in 0..wo {
                let m = r0[2 * ox].max(r0[2 * ox + 1]).max(r1[2 * ox]).max(r1[2 * ox + 1]);
                out.push(m);
            }
        }
    }
    Tensor::from_parts(vec![c, ho, wo], out, "maxpool2")
}

pub fn avgpool(x: &Tensor, over: Pool) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if x.is_empty() {
        return Err(Error::shape("avgpool on empty tensor"));
    }
    let d = x.data();
    let plane = h * w;
    match over {
        Pool::Spatial => {
            let out = (0..c)
                .map(|ci| {
                    let s: f64 = d[ci * plane..(ci + 1) * plane].iter().map(|v| *v as f64).sum();
                    (s / plane as f64) as f32
                })
                .collect();
            Tensor::from_parts(vec![c, 1, 1], out, "avgpool")
        }
        Pool::Channel => {
            let out = (0..plane)
                .map(|i| {
                    let s: f64 = (0..c).map(|ci| d[ci * plane + i] as f64).sum();
                    (s / c as f64) as f32
                })
                .collect();
            Tensor::from_parts(vec![1, h, w], out, "avgpool")
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

fn sigmoid_scalar(v: f32) -> f32 {
    if v > 40.0 {
        1.0
    } else if v < -40.0 {
        0.0
    } else {
        1.0 / (1.0 + (-v).exp())
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

/// `ln(1 + e^v)`, linear above 20.
pub fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        ((v as f64).exp().ln_1p()) as f32
    }
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor {
        shape: x.shape().to_vec(),
        data: x.data().iter().map(|v| f(*v)).collect(),
    }
}

/// Softmax across the channel axis at every pixel (max-subtracted).
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if c == 0 {
        return Err(Error::shape("softmax needs at least one channel"));
    }
    let plane = h * w;
    let d = x.data();
    let mut out = vec![0.0f32; d.len()];
    let mut e = vec![0.0f64; c];
    for i in 0..plane {
        let m = (0..c).map(|ci| d[ci * plane + i]).fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0f64;
        for (ci, ev) in e.iter_mut().enumerate() {
            *ev = ((d[ci * plane + i] - m) as f64).exp();
            s += *ev;
        }
        for (ci, ev) in e.iter().enumerate() {
            out[ci * plane + i] = (ev / s) as f32;
        }
    }
    Tensor::from_parts(vec![c, h, w], out, "softmax")
}

/// Sub-pixel upsampling: `out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::shape(format!(
            "pixel_shuffle: {c} channels not divisible by {r}^2"
        )));
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let d = x.data();
    let mut out = vec![0.0f32; d.len()];
    for oc in 0..co {
        for i in 0..r {
            for j in 0..r {
                let ic = oc * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out[(oc * ho + y * r + i) * wo + xx * r + j] = d[(ic * h + y) * w + xx];
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![co, ho, wo], out, "pixel_shuffle")
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::shape(format!(
            "pixel_unshuffle: {h}x{w} not divisible by {r}"
        )));
    }
    let (ho, wo) = (h / r, w / r);
    let d = x.data();
    let mut out = vec![0.0f32; d.len()];
    for ic in 0..c {
        for i in 0..r {
            for j in 0..r {
                let oc = ic * r * r + i * r + j;
                for y in 0..ho {
                    for xx in 0..wo {
                        out[(oc * ho + y) * wo + xx] = d[(ic * h + y * r + i) * w + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![c * r * r, ho, wo], out, "pixel_unshuffle")
}

pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    let (_, h, w) = first.dims3()?;
    let mut c = 0;
    let mut data = Vec::new();
    for t in xs {
        let (ci, hi, wi) = t.dims3()?;
        if (hi, wi) != (h, w) {
            return Err(Error::shape(format!(
                "concat: spatial extents {hi}x{wi} vs {h}x{w}"
            )));
        }
        c += ci;
        data.extend_from_slice(t.data());
    }
    Tensor::from_parts(vec![c, h, w], data, "concat")
}

fn zip_same(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data, op)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "add", |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "mul", |x, y| x * y)
}

/// Multiplies `x` (C, H, W) by a gate of shape (C, 1, 1), (1, H, W) or (C, H, W).
pub fn mul_broadcast(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let (gc, gh, gw) = gate.dims3()?;
    let plane = h * w;
    let g = gate.data();
    let idx: Box<dyn Fn(usize, usize) -> usize> = match (gc, gh, gw) {
        (gc, 1, 1) if gc == c => Box::new(|ci, _| ci),
        (1, gh, gw) if (gh, gw) == (h, w) => Box::new(|_, i| i),
        (gc, gh, gw) if (gc, gh, gw) == (c, h, w) => Box::new(move |ci, i| ci * plane + i),
        _ => {
            return Err(Error::shape(format!(
                "cannot broadcast gate {:?} over {:?}",
                gate.shape(),
                x.shape()
            )))
        }
    };
    let d = x.data();
    let data = (0..c)
        .flat_map(|ci| (0..plane).map(move |i| (ci, i)))
        .map(|(ci, i)| d[ci * plane + i] * g[idx(ci, i)])
        .collect();
    Tensor::from_parts(vec![c, h, w], data, "mul_broadcast")
}

/// Per-pixel linear map across channels: `y[o] = sum_i w[o, i] x[i] + b[o]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let (o, i) = match weight.shape()[..] {
        [o, i] => (o, i),
        [o, i, 1, 1] => (o, i),
        _ => return Err(Error::shape(format!("linear weight {:?}", weight.shape()))),
    };
    if i != c {
        return Err(Error::shape(format!("linear expects {i} input channels, got {c}")));
    }
    if bias.shape() != [o] {
        return Err(Error::shape(format!("linear bias {:?}, expected ({o})", bias.shape())));
    }
    let plane = h * w;
    let (d, wt, b) = (x.data(), weight.data(), bias.data());
    let mut out = vec![0.0f32; o * plane];
    for oc in 0..o {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        for ic in 0..c {
            let k = wt[oc * i + ic];
            if k == 0.0 {
                continue;
            }
            let src = &d[ic * plane..(ic + 1) * plane];
            for (y, s) in dst.iter_mut().zip(src) {
                *y += k * s;
            }
        }
        for y in dst.iter_mut() {
            *y += b[oc];
        }
    }
    Tensor::from_parts(vec![o, h, w], out, "linear")
}
