//! Network stages composed from the tensor kernels. Every F_RBC here is a
//! 3x3 (or 1x1) convolution with inference batch-norm and ReLU.

use super::WeightStore;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{
    add, avgpool, concat_channels, conv2d_with, linear, maxpool2, mul_broadcast, pixel_shuffle,
    sigmoid, softmax_channels, ConvParams, PadMode, Pool, Tensor,
};

/// The two gate paths of the channel-then-spatial attention.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// (C, C, 1, 1) on the spatially pooled map.
    pub channel: ConvParams,
    /// (1, 1, 3, 3) on the channel-pooled map.
    pub spatial: ConvParams,
}

impl AttentionParams {
    pub fn from_store(w: &WeightStore, prefix: &str) -> Result<Self> {
        Ok(AttentionParams {
            channel: w.conv(&format!("{prefix}.channel"), true)?,
            spatial: w.conv(&format!("{prefix}.spatial"), true)?,
        })
    }
}

/// Channel stage then spatial stage, each `x <- x * F_RBC(AvgPool(x))`.
pub fn attention_hwc(exec: Exec, x: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let g = conv2d_with(exec, &avgpool(x, Pool::Spatial)?, &p.channel, 1, PadMode::Zero)
        .map_err(|e| e.at("channel"))?;
    let x = mul_broadcast(x, &g)?;
    let g = conv2d_with(exec, &avgpool(&x, Pool::Channel)?, &p.spatial, 1, PadMode::Zero)
        .map_err(|e| e.at("spatial"))?;
    mul_broadcast(&x, &g)
}

fn conv_at(exec: Exec, x: &Tensor, w: &WeightStore, prefix: &str, pad: PadMode) -> Result<Tensor> {
    let p = w.conv(prefix, true)?;
    conv2d_with(exec, x, &p, 1, pad).map_err(|e| e.at(prefix))
}

/// `base + Attention_hwc(F_RBC(Cat(base, other)))` on the BEV grid. Serves
/// both the range-view fusion and the semantic fusion.
pub fn fuse(exec: Exec, base: &Tensor, other: &Tensor, w: &WeightStore, prefix: &str) -> Result<Tensor> {
    base.dims3()?;
    other.dims3()?;
    if base.shape()[1..] != other.shape()[1..] {
        return Err(Error::shape(format!(
            "{prefix}: extents {:?} vs {:?}",
            base.shape(),
            other.shape()
        )));
    }
    let cat = concat_channels(&[base, other])?;
    let y = conv_at(exec, &cat, w, &format!("{prefix}.conv"), PadMode::Zero)?;
    let attn = AttentionParams::from_store(w, &format!("{prefix}.attn"))?;
    let y = attention_hwc(exec, &y, &attn).map_err(|e| e.at(format!("{prefix}.attn")))?;
    add(base, &y)
}

pub fn fuse_bev_rv(exec: Exec, x_bev: &Tensor, x_r2b: &Tensor, w: &WeightStore, scale: usize) -> Result<Tensor> {
    fuse(exec, x_bev, x_r2b, w, &format!("motion.fuse_rv.{scale}"))
}

pub fn fuse_semantic_down(exec: Exec, x_motion: &Tensor, x_sem: &Tensor, w: &WeightStore, scale: usize) -> Result<Tensor> {
    fuse(exec, x_motion, x_sem, w, &format!("motion.fuse_sem.{scale}"))
}

/// `F_RBC(maxpool2(x))`.
pub fn down_step(exec: Exec, x: &Tensor, w: &WeightStore, prefix: &str, pad: PadMode) -> Result<Tensor> {
    conv_at(exec, &maxpool2(x)?, w, &format!("{prefix}.conv"), pad)
}

/// Range-view encoder step with circular padding.
pub fn motion_down_step(exec: Exec, x_rv: &Tensor, w: &WeightStore, scale: usize) -> Result<Tensor> {
    down_step(exec, x_rv, w, &format!("motion.rv.down.{scale}"), PadMode::CircularWidth)
}

/// `F_RBC(Cat(pixel_shuffle(below, 2), skip))`.
pub fn up_step(exec: Exec, below: &Tensor, skip: &Tensor, w: &WeightStore, prefix: &str) -> Result<Tensor> {
    let up = pixel_shuffle(below, 2).map_err(|e| e.at(prefix))?;
    if up.shape()[1..] != skip.shape()[1..] {
        return Err(Error::shape(format!(
            "upsampled {:?} vs skip {:?}",
            up.shape(),
            skip.shape()
        ))
        .at(prefix));
    }
    conv_at(exec, &concat_channels(&[&up, skip])?, w, &format!("{prefix}.conv"), PadMode::Zero)
}

pub fn semantic_up_step(exec: Exec, x_sem_below: &Tensor, x_sem: &Tensor, w: &WeightStore, scale: usize) -> Result<Tensor> {
    up_step(exec, x_sem_below, x_sem, w, &format!("semantic.up.{scale}"))
}

/// Motion decoder step; the skip path is `Cat(x_sout, x_fused)`.
pub fn motion_up_step(
    exec: Exec,
    x_below: &Tensor,
    x_sout: &Tensor,
    x_fused: &Tensor,
    w: &WeightStore,
    scale: usize,
) -> Result<Tensor> {
    let skip = concat_channels(&[x_sout, x_fused])?;
    up_step(exec, x_below, &skip, w, &format!("motion.up.{scale}"))
}

/// Intermediates of the semantic-motion gate.
#[derive(Debug, Clone)]
pub struct GateOutput {
    pub out: Tensor,
    /// `F_m * Sigmoid(Conv1x1(F_s))`
    pub gated: Tensor,
    /// (C, 1, 1) softmax over channels.
    pub channel_weights: Tensor,
}

/// `F_m' = F_m * Sigmoid(Conv1x1(F_s))`,
/// `F_out = F_m + F_m' * Softmax_c(Conv1x1(AvgPool(F_m')))`.
pub fn saff_gate(f_s: &Tensor, f_m: &Tensor, w: &WeightStore, prefix: &str) -> Result<GateOutput> {
    let (_, h, wd) = f_m.dims3()?;
    let (_, hs, ws) = f_s.dims3()?;
    if (h, wd) != (hs, ws) {
        return Err(Error::shape(format!("gate inputs {:?} vs {:?}", f_s.shape(), f_m.shape())));
    }
    let lin = |x: &Tensor, name: &str| {
        let p = format!("{prefix}.{name}");
        linear(x, w.get(&format!("{p}.weight"))?, w.get(&format!("{p}.bias"))?).map_err(|e| e.at(p))
    };
    let gated = crate::tensor::mul(f_m, &sigmoid(&lin(f_s, "spatial")?))?;
    let channel_weights = softmax_channels(&lin(&avgpool(&gated, Pool::Spatial)?, "channel")?)?;
    let out = add(f_m, &mul_broadcast(&gated, &channel_weights)?)?;
    Ok(GateOutput {
        out,
        gated,
        channel_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::tensor::BN_EPS;

    #[test]
    fn attention_identity_squares_constants_per_stage() {
        let c = 1.5f32;
        let x = Tensor::full(&[3, 4, 4], c);
        let p = AttentionParams {
            channel: ConvParams::identity(3, true).unwrap(),
            spatial: ConvParams::identity(1, true).unwrap(),
        };
        let y = attention_hwc(Exec::Sequential, &x, &p).unwrap();
        // Channel stage gives c*c; the spatial stage squares that again.
        assert!(y.data().iter().all(|v| (*v - c.powi(4)).abs() < 1e-5));
        let z = attention_hwc(Exec::Sequential, &Tensor::zeros(&[3, 4, 4]), &p).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_down_step_is_max_pool() {
        let mut w = WeightStore::new();
        w.insert_conv("motion.rv.down.0.conv", ConvParams::identity(16, true).unwrap());
        let x = Tensor::from_fn((16, 8, 16), |c, y, xx| ((c * 31 + y * 7 + xx * 3) % 11) as f32).unwrap();
        let y = motion_down_step(Exec::Sequential, &x, &w, 0).unwrap();
        assert_eq!(y, maxpool2(&x).unwrap());
    }

    #[test]
    fn constant_input_constant_output() {
        let mut p = ConvParams::with_identity_bn(Tensor::full(&[2, 2, 3, 3], 0.25), true).unwrap();
        p.bn_var = Tensor::full(&[2], 4.0 - BN_EPS);
        let mut w = WeightStore::new();
        w.insert_conv("motion.rv.down.0.conv", p);
        let y = motion_down_step(Exec::Sequential, &Tensor::full(&[2, 6, 8], 2.0), &w, 0).unwrap();
        // Interior rows see the full 3x3 window: 2 * 0.25 * 18 / 2 = 4.5.
        for x in 0..4 {
            assert!((y.get(0, 1, x) - 4.5).abs() < 1e-6);
        }
        assert_eq!(y.get(0, 1, 0), y.get(0, 1, 3));
    }

    #[test]
    fn fusion_with_silent_branch_is_identity() {
        let cfg = NetworkConfig::desk();
        let mut w = WeightStore::random(&cfg, 5);
        w.zero_matching(&["motion.fuse_rv.1.conv.kernel", "motion.fuse_rv.1.conv.bias"]);
        let x_bev = Tensor::from_fn((32, 8, 8), |c, y, x| (c + y * x) as f32 * 0.01).unwrap();
        let zero = Tensor::zeros(&[32, 8, 8]);
        assert_eq!(fuse_bev_rv(Exec::Sequential, &x_bev, &zero, &w, 1).unwrap(), x_bev);
        let other = Tensor::full(&[32, 8, 8], 0.7);
        assert_eq!(fuse_bev_rv(Exec::Sequential, &x_bev, &other, &w, 1).unwrap(), x_bev);
        assert!(fuse_bev_rv(Exec::Sequential, &x_bev, &Tensor::zeros(&[32, 4, 8]), &w, 1).is_err());
    }

    #[test]
    fn gate_zero_weights_trace() {
        let cfg = NetworkConfig::desk();
        let mut w = WeightStore::random(&cfg, 2);
        w.zero_matching(&["fusion.gate.spatial.weight", "fusion.gate.spatial.bias", "fusion.gate.channel.weight", "fusion.gate.channel.bias"]);
        let c = cfg.bottleneck_channels();
        let f_s = Tensor::from_fn((128, 2, 2), |a, b, d| (a + b + d) as f32).unwrap();
        let f_m = Tensor::from_fn((c, 2, 2), |a, b, d| (a as f32 - 7.0) * (b + 2 * d) as f32 * 0.1).unwrap();
        let g = saff_gate(&f_s, &f_m, &w, "fusion.gate").unwrap();
        let k = 1.0 + 0.5 / c as f32;
        for (o, i) in g.out.data().iter().zip(f_m.data()) {
            assert!((o - i * k).abs() <= 1e-6 * (1.0 + i.abs()));
        }
        let zero = saff_gate(&f_s, &Tensor::zeros(&[c, 2, 2]), &w, "fusion.gate").unwrap();
        assert!(zero.out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gate_is_bounded_and_weights_normalized() {
        let cfg = NetworkConfig::desk();
        let w = WeightStore::random(&cfg, 9);
        let c = cfg.bottleneck_channels();
        let f_s = Tensor::from_fn((128, 3, 2), |a, b, d| ((a * 3 + b * 5 + d) as f32).sin()).unwrap();
        let f_m = Tensor::from_fn((c, 3, 2), |a, b, d| ((a * 7 + b + d * 11) as f32).cos()).unwrap();
        let g = saff_gate(&f_s, &f_m, &w, "fusion.gate").unwrap();
        let s: f32 = g.channel_weights.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        let scaled = Tensor::new(f_s.shape().to_vec(), f_s.data().iter().map(|v| v * 3.0).collect()).unwrap();
        let g2 = saff_gate(&scaled, &f_m, &w, "fusion.gate").unwrap();
        for ((a, b), m) in g.gated.data().iter().zip(g2.gated.data()).zip(f_m.data()) {
            assert!(a.abs() <= m.abs() && b.abs() <= m.abs());
            assert!(a * m >= 0.0);
            assert_eq!(a.signum(), b.signum());
        }
    }
}
