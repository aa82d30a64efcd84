//! Slow reference implementations. Each one is written independently of the
//! optimized kernel it checks (different loop structure, f64 throughout) so
//! that agreement carries information. Used by the tests, the self-check
//! and the acceptance suite.

use crate::error::Result;
use crate::io::PointCloud;
use crate::loss::LabelGrid;
use crate::network::{DirectionParams, WeightStore};
use crate::projection::{bev_cell_of, rv_pixel, ProjectionConfig, ViewCorrespondence};
use crate::tensor::{ConvParams, PadMode, Tensor};

/// Direct convolution with explicit bounds tests per tap.
pub fn naive_conv2d(x: &Tensor, p: &ConvParams, stride: usize, pad: PadMode) -> Vec<f64> {
    let s = x.shape();
    let (cin, h, w) = (s[0], s[1], s[2]);
    let k = p.kernel.shape();
    let (cout, kh, kw) = (k[0], k[2], k[3]);
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        let bn = |v: f64| {
            let v = (v - p.bn_mean.data()[o] as f64) / (p.bn_var.data()[o] as f64 + crate::tensor::BN_EPS as f64).sqrt()
                * p.bn_scale.data()[o] as f64
                + p.bn_shift.data()[o] as f64;
            if p.relu {
                v.max(0.0)
            } else {
                v
            }
        };
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = p.bias.data()[o] as f64;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as i64 - (kh / 2) as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for kx in 0..kw {
                        let mut ix = (ox * stride + kx) as i64 - (kw / 2) as i64;
                        if ix < 0 || ix >= w as i64 {
                            if pad == PadMode::Zero {
                                continue;
                            }
                            ix = ((ix % w as i64) + w as i64) % w as i64;
                        }
                        for c in 0..cin {
                            acc += x.get(c, iy as usize, ix as usize) as f64
                                * p.kernel.data()[((o * cin + c) * kh + ky) * kw + kx] as f64;
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = bn(acc);
            }
        }
    }
    out
}

/// Lattice position of step `t` in direction `dir`, by formula.
fn position(dir: usize, t: usize, h: usize, w: usize) -> (usize, usize) {
    let l = h * w;
    match dir {
        0 => (t / w, t % w),
        1 => ((l - 1 - t) / w, (l - 1 - t) % w),
        2 => (t % h, t / h),
        _ => ((l - 1 - t) % h, (l - 1 - t) / h),
    }
}

/// SS2D by materialising every pairwise term:
/// `y_t = sum_{s<=t} C_t (prod_{r=s+1..t} exp(-Δ_r e^A)) Δ_s B_s x_s + D x_t`,
/// summed over the four directions. Returns (D, H, W) row-major.
pub fn naive_ss2d(x: &[f64], dm: usize, h: usize, w: usize, dirs: &[DirectionParams; 4]) -> Vec<f64> {
    let l = h * w;
    let at = |c: usize, y: usize, xx: usize| x[(c * h + y) * w + xx];
    let mut out = vec![0.0; dm * l];
    for (k, p) in dirs.iter().enumerate() {
        let n = p.a_log.shape()[1];
        let f = |t: &Tensor| t.data().iter().map(|v| *v as f64).collect::<Vec<f64>>();
        let (a_log, dd, dtw, dtb, bw, bb, cw, cb) = (
            f(&p.a_log),
            f(&p.d),
            f(&p.dt_weight),
            f(&p.dt_bias),
            f(&p.b_weight),
            f(&p.b_bias),
            f(&p.c_weight),
            f(&p.c_bias),
        );
        let xs: Vec<Vec<f64>> = (0..l)
            .map(|t| {
                let (y, xx) = position(k, t, h, w);
                (0..dm).map(|c| at(c, y, xx)).collect()
            })
            .collect();
        let lin = |wt: &[f64], b: &[f64], v: &[f64], rows: usize| -> Vec<f64> {
            (0..rows).map(|r| b[r] + (0..dm).map(|i| wt[r * dm + i] * v[i]).sum::<f64>()).collect()
        };
        let delta: Vec<Vec<f64>> = xs
            .iter()
            .map(|v| lin(&dtw, &dtb, v, dm).into_iter().map(|z| (1.0 + z.exp()).ln()).collect())
            .collect();
        let bs: Vec<Vec<f64>> = xs.iter().map(|v| lin(&bw, &bb, v, n)).collect();
        let cs: Vec<Vec<f64>> = xs.iter().map(|v| lin(&cw, &cb, v, n)).collect();
        for t in 0..l {
            let (y, xx) = position(k, t, h, w);
            for c in 0..dm {
                let mut acc = dd[c] * xs[t][c];
                for s_ in 0..n {
                    let a = a_log[c * n + s_].exp();
                    let mut decay = 1.0;
                    for s in (0..=t).rev() {
                        acc += cs[t][s_] * decay * delta[s][c] * bs[s][s_] * xs[s][c];
                        decay *= (-delta[s][c] * a).exp();
                    }
                }
                out[(c * h + y) * w + xx] += acc;
            }
        }
    }
    out
}

/// `Cat(f_s, f_m) + naive_ss2d(W Cat(f_s, f_m) + b)` in f64.
pub fn naive_ss2d_block(f_s: &Tensor, f_m: &Tensor, in_w: &Tensor, in_b: &Tensor, dirs: &[DirectionParams; 4]) -> Vec<f64> {
    let (h, w) = (f_s.shape()[1], f_s.shape()[2]);
    let cat: Vec<f64> = f_s.data().iter().chain(f_m.data()).map(|v| *v as f64).collect();
    let dm = cat.len() / (h * w);
    let l = h * w;
    let mut z = vec![0.0; dm * l];
    for o in 0..dm {
        for i in 0..l {
            z[o * l + i] = in_b.data()[o] as f64
                + (0..dm).map(|c| in_w.data()[o * dm + c] as f64 * cat[c * l + i]).sum::<f64>();
        }
    }
    let s = naive_ss2d(&z, dm, h, w, dirs);
    cat.iter().zip(s).map(|(a, b)| a + b).collect()
}

fn to_tensor(shape: &[usize], v: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), v.into_iter().map(|x| x as f32).collect()).expect("finite reference")
}

fn rbc(w: &WeightStore, prefix: &str, x: &Tensor, pad: PadMode) -> Result<Tensor> {
    let p = w.conv(prefix, true)?;
    let out = naive_conv2d(x, &p, 1, pad);
    let (o, h, wd) = (p.kernel.shape()[0], x.shape()[1], x.shape()[2]);
    Ok(to_tensor(&[o, h, wd], out))
}

/// Straight-line `base + Attention_hwc(F_RBC(Cat(base, other)))`.
pub fn reference_fuse(base: &Tensor, other: &Tensor, w: &WeightStore, prefix: &str) -> Result<Tensor> {
    let (c, h, wd) = (base.shape()[0], base.shape()[1], base.shape()[2]);
    let oc = other.shape()[0];
    let cat = Tensor::from_fn((c + oc, h, wd), |ch, y, x| {
        if ch < c {
            base.get(ch, y, x)
        } else {
            other.get(ch - c, y, x)
        }
    })?;
    let y = rbc(w, &format!("{prefix}.conv"), &cat, PadMode::Zero)?;
    let plane = (h * wd) as f64;
    let pooled = Tensor::from_fn((c, 1, 1), |ch, _, _| {
        (y.channel(ch).iter().map(|v| *v as f64).sum::<f64>() / plane) as f32
    })?;
    let g1 = rbc(w, &format!("{prefix}.attn.channel"), &pooled, PadMode::Zero)?;
    let y1 = Tensor::from_fn((c, h, wd), |ch, yy, x| y.get(ch, yy, x) * g1.get(ch, 0, 0))?;
    let pooled = Tensor::from_fn((1, h, wd), |_, yy, x| {
        ((0..c).map(|ch| y1.get(ch, yy, x) as f64).sum::<f64>() / c as f64) as f32
    })?;
    let g2 = rbc(w, &format!("{prefix}.attn.spatial"), &pooled, PadMode::Zero)?;
    Tensor::from_fn((c, h, wd), |ch, yy, x| base.get(ch, yy, x) + y1.get(ch, yy, x) * g2.get(0, yy, x))
}

/// Straight-line `F_RBC(Cat(Up(below), skip))` with `Up` the 2x sub-pixel shuffle.
pub fn reference_up_step(below: &Tensor, skip: &Tensor, w: &WeightStore, prefix: &str) -> Result<Tensor> {
    let (cb, h, wd) = (below.shape()[0], below.shape()[1], below.shape()[2]);
    let cu = cb / 4;
    let cs = skip.shape()[0];
    let cat = Tensor::from_fn((cu + cs, 2 * h, 2 * wd), |ch, y, x| {
        if ch < cu {
            below.get(ch * 4 + (y % 2) * 2 + (x % 2), y / 2, x / 2)
        } else {
            skip.get(ch - cu, y, x)
        }
    })?;
    rbc(w, &format!("{prefix}.conv"), &cat, PadMode::Zero)
}

/// Lovász-Softmax through the Abel-summed form
/// `sum_i J_(i) (m_(i) - m_(i+1))`, where `J_(i)` is the Jaccard loss of the
/// first `i` sorted cells and `m_(n+1) = 0`.
pub fn lovasz_abel(probs: &Tensor, labels: &LabelGrid) -> f64 {
    let c = probs.shape()[0];
    let plane = labels.height() * labels.width();
    let p = |k: usize, i: usize| probs.data()[k * plane + i] as f64;
    let cells: Vec<usize> = (0..plane).filter(|&i| labels.labels()[i] != 0).collect();
    let mut classes = Vec::new();
    for k in 0..c {
        let labelled = cells.iter().any(|&i| labels.labels()[i] as usize == k);
        let predicted = cells.iter().any(|&i| (0..c).all(|j| j == k || p(j, i) < p(k, i) || (p(j, i) == p(k, i) && j > k)));
        if labelled || predicted {
            classes.push(k);
        }
    }
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &k in &classes {
        let mut v: Vec<(f64, bool, usize)> = cells
            .iter()
            .map(|&i| {
                let fg = labels.labels()[i] as usize == k;
                (if fg { 1.0 - p(k, i) } else { p(k, i) }, fg, i)
            })
            .collect();
        v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)));
        let gt_total = v.iter().filter(|e| e.1).count();
        for i in 0..v.len() {
            // Jaccard loss of the mistake set {first i+1 sorted cells}.
            let prefix = &v[..=i];
            let missed_fg = prefix.iter().filter(|e| e.1).count();
            let false_pos = prefix.len() - missed_fg;
            let inter = gt_total - missed_fg;
            let union = gt_total + false_pos;
            let j = 1.0 - inter as f64 / union as f64;
            let next = v.get(i + 1).map_or(0.0, |e| e.0);
            total += j * (v[i].0 - next);
        }
    }
    total / classes.len() as f64
}

/// `1 - IoU` averaged over classes present in labels or predictions, for
/// hard per-cell predictions; unlabelled cells excluded.
pub fn jaccard_loss_direct(pred: &[u8], labels: &[u8]) -> f64 {
    let mut losses = Vec::new();
    for k in 0..3u8 {
        let (mut inter, mut union) = (0, 0);
        for (&p, &g) in pred.iter().zip(labels) {
            if g == 0 {
                continue;
            }
            if p == k && g == k {
                inter += 1;
            }
            if p == k || g == k {
                union += 1;
            }
        }
        if union > 0 {
            losses.push(1.0 - inter as f64 / union as f64);
        }
    }
    if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

/// Central differences of `f` at `x` with step `h`, per element.
pub fn finite_difference(x: &Tensor, h: f32, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut buf = x.data().to_vec();
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let up = f(&Tensor::new(x.shape().to_vec(), buf.clone()).expect("finite"));
        buf[i] = orig - h;
        let down = f(&Tensor::new(x.shape().to_vec(), buf.clone()).expect("finite"));
        buf[i] = orig;
        // The actual step is what f32 could represent.
        let step = ((orig + h) as f64) - ((orig - h) as f64);
        grad.push((up - down) / step);
    }
    grad
}

/// Counts correspondence entries whose point falls into the keyed BEV cell
/// and whose normalized coordinates map back to the point's range pixel.
pub fn backprojection_check(cloud: &PointCloud, corr: &ViewCorrespondence, proj: &ProjectionConfig) -> (usize, usize) {
    let mut ok = 0;
    let mut total = 0;
    for (cell, e) in corr.r2b.iter().enumerate() {
        let Some(e) = e else { continue };
        total += 1;
        let p = &cloud.points[e.point as usize];
        let in_cell = bev_cell_of(p, proj) == Some((cell / corr.bev_width, cell % corr.bev_width));
        let pix = rv_pixel(p, proj);
        let back = (
            ((e.u + 1.0) / 2.0 * (corr.rv_width - 1) as f64).round() as usize,
            ((e.v + 1.0) / 2.0 * (corr.rv_height - 1) as f64).round() as usize,
        );
        if in_cell && pix == Some(back) {
            ok += 1;
        }
    }
    (ok, total)
}
