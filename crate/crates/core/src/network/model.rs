use super::blocks::{
    down_step, fuse_bev_rv, fuse_semantic_down, motion_down_step, motion_up_step, saff_gate,
    semantic_up_step,
};
use super::ss2d::{ss2d_block_with, Ss2dParams};
use super::{NetworkConfig, WeightStore};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::projection::{grid_sample_r2b, BevImage, ProjectionConfig, ViewCorrespondence};
use crate::residual::ResidualStack;
use crate::tensor::{conv2d_with, linear, PadMode, Tensor};

/// Per-cell class scores of both heads, each (3, H̃, W̃).
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub moving: Tensor,
    pub movable: Tensor,
}

/// Full-resolution correspondence plus its 2x, 4x, ... reductions, one per scale.
pub fn correspondence_pyramid(corr: &ViewCorrespondence, scales: usize) -> Result<Vec<ViewCorrespondence>> {
    let mut out = vec![corr.clone()];
    for i in 1..scales {
        out.push(corr.downsample(1 << i)?);
    }
    Ok(out)
}

/// Validated graph, weights and projection binding.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetworkConfig,
    proj: ProjectionConfig,
    weights: WeightStore,
    exec: Exec,
}

impl Network {
    pub fn new(cfg: NetworkConfig, proj: ProjectionConfig, weights: WeightStore) -> Result<Self> {
        cfg.validate(&proj)?;
        proj.validate()?;
        weights.validate(&cfg, false)?;
        Ok(Network {
            cfg,
            proj,
            weights,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn projection(&self) -> &ProjectionConfig {
        &self.proj
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    /// `corrs` holds one correspondence per scale, see [`correspondence_pyramid`].
    pub fn forward(&self, stack: &ResidualStack, semantic: &BevImage, corrs: &[ViewCorrespondence]) -> Result<Logits> {
        forward_full_with(self.exec, stack, semantic, corrs, &self.weights, &self.cfg, &self.proj)
    }
}

fn stem(exec: Exec, x: &Tensor, w: &WeightStore, prefix: &str, pad: PadMode) -> Result<Tensor> {
    let p = w.conv(prefix, true)?;
    conv2d_with(exec, x, &p, 1, pad).map_err(|e| e.at(prefix))
}

fn head(x: &Tensor, w: &WeightStore, prefix: &str) -> Result<Tensor> {
    linear(x, w.get(&format!("{prefix}.weight"))?, w.get(&format!("{prefix}.bias"))?).map_err(|e| e.at(prefix))
}

fn check_inputs(
    stack: &ResidualStack,
    semantic: &BevImage,
    corrs: &[ViewCorrespondence],
    cfg: &NetworkConfig,
    proj: &ProjectionConfig,
) -> Result<()> {
    let n = cfg.window;
    let want_rv = [n, proj.rv.height, proj.rv.width];
    let want_bev = [n, proj.bev.height, proj.bev.width];
    if stack.rv.shape() != want_rv || stack.bev.shape() != want_bev {
        return Err(Error::shape(format!(
            "residual stack rv {:?} / bev {:?}, expected {want_rv:?} / {want_bev:?}",
            stack.rv.shape(),
            stack.bev.shape()
        )));
    }
    if semantic.values.shape() != [1, proj.bev.height, proj.bev.width] {
        return Err(Error::shape(format!("semantic input {:?}", semantic.values.shape())));
    }
    if corrs.len() != cfg.scales() {
        return Err(Error::shape(format!(
            "{} correspondences for {} scales",
            corrs.len(),
            cfg.scales()
        )));
    }
    for (i, c) in corrs.iter().enumerate() {
        let want = (proj.bev.height >> i, proj.bev.width >> i);
        if (c.bev_height, c.bev_width) != want || (c.rv_height, c.rv_width) != (proj.rv.height, proj.rv.width) {
            return Err(Error::shape(format!(
                "correspondence {i} is {}x{} -> {}x{}, expected {want:?} over the {}x{} range image",
                c.bev_height, c.bev_width, c.rv_height, c.rv_width, proj.rv.height, proj.rv.width
            )));
        }
    }
    Ok(())
}

pub fn forward_full(
    stack: &ResidualStack,
    semantic: &BevImage,
    corrs: &[ViewCorrespondence],
    weights: &WeightStore,
    cfg: &NetworkConfig,
    proj: &ProjectionConfig,
) -> Result<Logits> {
    forward_full_with(Exec::default(), stack, semantic, corrs, weights, cfg, proj)
}

/// Motion branch over both views, semantic branch, bottleneck SS2D and gate,
/// then the semantic decoder (movable head) and the guided motion decoder
/// (moving head).
pub fn forward_full_with(
    exec: Exec,
    stack: &ResidualStack,
    semantic: &BevImage,
    corrs: &[ViewCorrespondence],
    w: &WeightStore,
    cfg: &NetworkConfig,
    proj: &ProjectionConfig,
) -> Result<Logits> {
    check_inputs(stack, semantic, corrs, cfg, proj)?;
    let s = cfg.scales();

    let mut x_rv = vec![stem(exec, &stack.rv, w, "motion.rv.stem.conv", PadMode::CircularWidth)?];
    let mut x_sem = vec![stem(exec, &semantic.values, w, "semantic.stem.conv", PadMode::Zero)?];
    for i in 0..s - 1 {
        x_rv.push(motion_down_step(exec, &x_rv[i], w, i)?);
        x_sem.push(down_step(exec, &x_sem[i], w, &format!("semantic.down.{i}"), PadMode::Zero)?);
    }

    let mut x_bev = stem(exec, &stack.bev, w, "motion.bev.stem.conv", PadMode::Zero)?;
    let mut x_fused = Vec::with_capacity(s);
    for i in 0..s {
        let (_, h, wd) = x_bev.dims3()?;
        let r2b = grid_sample_r2b(&x_rv[i], &corrs[i], (h, wd)).map_err(|e| e.at(format!("motion.fuse_rv.{i}")))?;
        let x_motion = fuse_bev_rv(exec, &x_bev, &r2b, w, i)?;
        let fused = fuse_semantic_down(exec, &x_motion, &x_sem[i], w, i)?;
        if i + 1 < s {
            x_bev = down_step(exec, &fused, w, &format!("motion.down.{i}"), PadMode::Zero)?;
        }
        x_fused.push(fused);
    }

    let ss2d = Ss2dParams::from_store(w, "fusion.ss2d")?;
    let f_fused = ss2d_block_with(exec, &x_sem[s - 1], &x_fused[s - 1], &ss2d).map_err(|e| e.at("fusion.ss2d"))?;
    let bottleneck = saff_gate(&x_sem[s - 1], &f_fused, w, "fusion.gate")?.out;

    let mut sout = x_sem[s - 1].clone();
    let mut souts = vec![None; s];
    for i in (0..s - 1).rev() {
        sout = semantic_up_step(exec, &sout, &x_sem[i], w, i)?;
        souts[i] = Some(sout.clone());
    }
    let movable = head(&sout, w, "semantic.head")?;

    let mut out = bottleneck;
    for i in (0..s - 1).rev() {
        let guide = souts[i].as_ref().expect("decoded above");
        out = motion_up_step(exec, &out, guide, &x_fused[i], w, i)?;
    }
    let moving = head(&out, w, "motion.head")?;
    Ok(Logits { moving, movable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{synth_sequence, SyntheticSceneSpec};
    use crate::pipeline::{prepare_frame, FrameInputs};

    fn desk_inputs() -> (FrameInputs, NetworkConfig, ProjectionConfig) {
        let cfg = NetworkConfig::desk();
        let proj = ProjectionConfig::desk();
        let mut spec = SyntheticSceneSpec::random(11);
        spec.frame_count = 5;
        let seq = synth_sequence(&spec).unwrap();
        let clouds: Vec<_> = seq.iter().map(|f| f.cloud.clone()).collect();
        let poses: Vec<_> = seq.iter().map(|f| f.pose).collect();
        let inputs = prepare_frame(Exec::default(), &clouds, &poses, &proj, cfg.window, cfg.scales()).unwrap();
        (inputs, cfg, proj)
    }

    #[test]
    fn desk_shapes_and_determinism() {
        let (inp, cfg, proj) = desk_inputs();
        let w = WeightStore::random(&cfg, 42);
        let net = Network::new(cfg, proj, w).unwrap();
        let a = net.forward(&inp.stack, &inp.semantic, &inp.corrs).unwrap();
        assert_eq!(a.moving.shape(), &[3, 128, 128]);
        assert_eq!(a.movable.shape(), &[3, 128, 128]);
        let b = net.clone().with_exec(Exec::Sequential).forward(&inp.stack, &inp.semantic, &inp.corrs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_inputs_give_spatially_constant_moving_logits() {
        let (mut inp, cfg, proj) = desk_inputs();
        let mut w = WeightStore::random(&cfg, 4);
        w.zero_matching(&[".bias"]);
        inp.stack.rv = Tensor::zeros(inp.stack.rv.shape());
        inp.stack.bev = Tensor::zeros(inp.stack.bev.shape());
        inp.semantic.values = Tensor::zeros(inp.semantic.values.shape());
        let out = forward_full(&inp.stack, &inp.semantic, &inp.corrs, &w, &cfg, &proj).unwrap();
        for c in 0..3 {
            let ch = out.moving.channel(c);
            assert!(ch.iter().all(|v| *v == ch[0]));
        }
    }

    #[test]
    fn errors_name_the_parameter() {
        let (inp, cfg, proj) = desk_inputs();
        let mut w = WeightStore::random(&cfg, 1);
        w.insert("motion.up.1.conv.kernel", Tensor::zeros(&[32, 7, 3, 3]));
        let err = forward_full(&inp.stack, &inp.semantic, &inp.corrs, &w, &cfg, &proj).unwrap_err();
        assert!(err.to_string().contains("motion.up.1.conv"), "{err}");
        w.remove("motion.up.1.conv.kernel");
        let err = forward_full(&inp.stack, &inp.semantic, &inp.corrs, &w, &cfg, &proj).unwrap_err();
        assert!(err.to_string().contains("motion.up.1.conv.kernel"), "{err}");
        assert!(forward_full(&inp.stack, &inp.semantic, &inp.corrs[..3], &WeightStore::random(&cfg, 1), &cfg, &proj).is_err());
    }
}
