//! Embedded property suite. Every check is a deterministic function of its
//! seed and reports a named pass/fail outcome; failures carry the case that
//! failed, serialised as JSON, so it can be replayed.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::exec::Exec;
use crate::io::{
    remap_mos, synth_sequence, transform_to_frame, BoxSpec, DynamicBoxSpec, MosLabel, PointCloud, Pose,
    SyntheticFrame, SyntheticSceneSpec, RAW_CAR, RAW_MOVING_CAR, RAW_ROAD,
};
use crate::loss::{
    cross_entropy, cross_entropy_grad, lovasz_softmax, lovasz_softmax_grad, lovasz_softmax_unchecked, ConfusionCounts,
    LabelGrid,
};
use crate::network::{
    selective_scan, ss2d_impl, DirectionParams, NetworkConfig, Network, ScanSequence, WeightStore,
};
use crate::oracle;
use crate::pipeline::prepare_frame;
use crate::projection::{
    bev_cell_of, build_correspondence, project_bev, project_range, stacked_bev, ProjectionConfig,
};
use crate::residual::build_residual_stack_with;
use crate::tensor::{conv2d_with, softmax_channels, ConvParams, PadMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub exec: Exec,
    /// Test hook: scan direction 0 right to left inside the SS2D under test.
    pub inject_flip_scan: bool,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub failing_case: Option<Value>,
    pub elapsed: Duration,
}

fn outcome(name: &'static str, start: Instant, failure: Option<Value>, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: failure.is_none(),
        detail,
        failing_case: failure,
        elapsed: start.elapsed(),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("finite")
}

fn split(frames: &[SyntheticFrame]) -> (Vec<PointCloud>, Vec<Pose>) {
    (frames.iter().map(|f| f.cloud.clone()).collect(), frames.iter().map(|f| f.pose).collect())
}

/// Every r2b entry's point lies in its keyed BEV cell and maps back to its
/// range pixel; every b2r entry names its point's BEV cell.
pub fn check_correspondence(opts: &SelfcheckOptions, frames: usize) -> CheckOutcome {
    let start = Instant::now();
    let proj = ProjectionConfig::desk();
    let (mut ok, mut total) = (0, 0);
    for f in 0..frames as u64 {
        let mut spec = SyntheticSceneSpec::random(opts.seed.wrapping_add(f));
        spec.frame_count = 2;
        let frame = &synth_sequence(&spec).expect("random spec is valid")[1];
        let range = project_range(&frame.cloud, &proj);
        let bev = project_bev(&frame.cloud, &proj);
        let corr = build_correspondence(&frame.cloud, &range, &bev, &proj);
        let (a, b) = oracle::backprojection_check(&frame.cloud, &corr, &proj);
        let b2r_ok = corr.b2r.iter().zip(&range.point_index).all(|(cell, pi)| match (cell, pi) {
            (Some(c), Some(i)) => {
                bev_cell_of(&frame.cloud.points[*i as usize], &proj) == Some((c / corr.bev_width, c % corr.bev_width))
            }
            (None, Some(i)) => bev_cell_of(&frame.cloud.points[*i as usize], &proj).is_none(),
            (_, None) => cell.is_none(),
        });
        ok += a;
        total += b;
        if a != b || b == 0 || !b2r_ok {
            return outcome(
                "correspondence round trip",
                start,
                Some(json!({"seed": opts.seed.wrapping_add(f), "entries": b, "consistent": a, "b2r_ok": b2r_ok})),
                format!("frame {f}: {a}/{b} entries consistent"),
            );
        }
    }
    outcome("correspondence round trip", start, None, format!("{ok}/{total} entries over {frames} frames"))
}

fn random_conv(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize) -> ConvParams {
    ConvParams {
        kernel: uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
        bias: uniform(rng, &[cout], -0.5, 0.5),
        bn_scale: uniform(rng, &[cout], 0.5, 1.5),
        bn_shift: uniform(rng, &[cout], -0.5, 0.5),
        bn_mean: uniform(rng, &[cout], -0.5, 0.5),
        bn_var: uniform(rng, &[cout], 0.5, 2.0),
        relu: rng.gen_bool(0.5),
    }
}

/// Stride-1 circular convolution commutes with column rotation, bit for bit.
pub fn check_circular_equivariance(opts: &SelfcheckOptions, cases: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC1C);
    for case in 0..cases {
        let (cin, cout) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(2..=16));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let shift = rng.gen_range(0..w);
        let p = random_conv(&mut rng, cin, cout, k);
        let x = uniform(&mut rng, &[cin, h, w], -2.0, 2.0);
        let a = conv2d_with(opts.exec, &x.roll_columns(shift).unwrap(), &p, 1, PadMode::CircularWidth).unwrap();
        let b = conv2d_with(opts.exec, &x, &p, 1, PadMode::CircularWidth).unwrap().roll_columns(shift).unwrap();
        let same = a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits());
        if !same {
            return outcome(
                "circular conv equivariance",
                start,
                Some(json!({"seed": opts.seed, "case": case, "cin": cin, "cout": cout, "h": h, "w": w, "k": k, "shift": shift})),
                format!("case {case} differs"),
            );
        }
    }
    outcome("circular conv equivariance", start, None, format!("{cases} cases exact"))
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize, n: usize) -> DirectionParams {
    DirectionParams {
        a_log: uniform(rng, &[d, n], -1.0, 1.5),
        d: uniform(rng, &[d], -1.0, 1.0),
        dt_weight: uniform(rng, &[d, d], -0.5, 0.5),
        dt_bias: uniform(rng, &[d], -1.0, 0.5),
        b_weight: uniform(rng, &[n, d], -1.0, 1.0),
        b_bias: uniform(rng, &[n], -0.5, 0.5),
        c_weight: uniform(rng, &[n, d], -1.0, 1.0),
        c_bias: uniform(rng, &[n], -0.5, 0.5),
    }
}

/// Largest `|a - b| / max(|b|, 1)`.
pub fn max_rel_error(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

/// The SS2D block against the quadratic unrolled oracle.
pub fn check_ss2d_oracle(opts: &SelfcheckOptions, cases: usize, tol: f64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x55D);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (cs, cm) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let d = cs + cm;
        let n = rng.gen_range(1..=8);
        let f_s = uniform(&mut rng, &[cs, h, w], -1.0, 1.0);
        let f_m = uniform(&mut rng, &[cm, h, w], -1.0, 1.0);
        let in_w = uniform(&mut rng, &[d, d], -0.7, 0.7);
        let in_b = uniform(&mut rng, &[d], -0.3, 0.3);
        let dirs = [
            random_direction(&mut rng, d, n),
            random_direction(&mut rng, d, n),
            random_direction(&mut rng, d, n),
            random_direction(&mut rng, d, n),
        ];
        let f_sm = crate::tensor::concat_channels(&[&f_s, &f_m]).unwrap();
        let z = crate::tensor::linear(&f_sm, &in_w, &in_b).unwrap();
        let s = ss2d_impl(opts.exec, &z, &dirs, opts.inject_flip_scan).unwrap();
        let got = crate::tensor::add(&f_sm, &s).unwrap();
        let want = oracle::naive_ss2d_block(&f_s, &f_m, &in_w, &in_b, &dirs);
        let err = max_rel_error(got.data(), &want);
        worst = worst.max(err);
        if err > tol {
            return outcome(
                "ss2d scan oracle",
                start,
                Some(json!({"seed": opts.seed, "case": case, "h": h, "w": w, "channels": d, "state": n, "rel_error": err})),
                format!("case {case} ({h}x{w}, D={d}, N={n}): relative error {err:.3e}"),
            );
        }
    }
    outcome("ss2d scan oracle", start, None, format!("{cases} cases, worst relative error {worst:.2e}"))
}

/// Decay-free single-direction scan of [1, 2, 3] is [1, 3, 6] exactly.
pub fn check_prefix_sum() -> CheckOutcome {
    let start = Instant::now();
    let seq = ScanSequence {
        len: 3,
        dim: 1,
        state: 1,
        x: vec![1.0, 2.0, 3.0],
        delta: vec![1.0; 3],
        b: vec![1.0; 3],
        c: vec![1.0; 3],
    };
    let y = selective_scan(&seq, &[f64::NEG_INFINITY], &[0.0]).expect("consistent buffers");
    let fail = (y != [1.0, 3.0, 6.0]).then(|| json!({"output": y}));
    outcome("scan prefix-sum limit", start, fail, format!("{y:?}"))
}

fn one_hot_probs(pred: &[u8]) -> Tensor {
    Tensor::from_fn((3, 1, pred.len()), |c, _, x| (pred[x] as usize == c) as u8 as f32).expect("finite")
}

/// CE symmetry case, the Lovász two-cell case, Lovász at every 2- and
/// 3-cell binary vertex, and the Abel-summed form on random probabilities.
pub fn check_losses(opts: &SelfcheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let name = "loss values";
    let uniform_ce = cross_entropy(&Tensor::zeros(&[3, 2, 2]), &LabelGrid::new(2, 2, vec![1, 2, 1, 2]).unwrap()).unwrap().mean;
    if (uniform_ce - 3f64.ln()).abs() > 1e-5 {
        return outcome(name, start, Some(json!({"case": "uniform ce", "value": uniform_ce})), "uniform CE".into());
    }
    let p = Tensor::new(vec![3, 1, 2], vec![0.0, 0.0, 0.4, 0.6, 0.6, 0.4]).unwrap();
    let two = lovasz_softmax(&p, &LabelGrid::new(1, 2, vec![2, 1]).unwrap()).unwrap();
    if (two - 0.4).abs() > 1e-6 {
        return outcome(name, start, Some(json!({"case": "lovasz two-cell", "value": two})), "two-cell Lovász".into());
    }
    let mut vertices = 0;
    for n in [2usize, 3] {
        for code in 0..(1u32 << (2 * n)) {
            let labels: Vec<u8> = (0..n).map(|i| 1 + ((code >> i) & 1) as u8).collect();
            let pred: Vec<u8> = (0..n).map(|i| 1 + ((code >> (n + i)) & 1) as u8).collect();
            let g = LabelGrid::new(1, n, labels.clone()).unwrap();
            let l = lovasz_softmax(&one_hot_probs(&pred), &g).unwrap();
            let j = oracle::jaccard_loss_direct(&pred, &labels);
            vertices += 1;
            if (l - j).abs() > 1e-9 {
                return outcome(name, start, Some(json!({"labels": labels, "pred": pred, "lovasz": l, "jaccard": j})), "vertex mismatch".into());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1075);
    for case in 0..20 {
        let logits = uniform(&mut rng, &[3, 3, 3], -2.0, 2.0);
        let probs = softmax_channels(&logits).unwrap();
        let g = LabelGrid::new(3, 3, (0..9).map(|_| rng.gen_range(0..3)).collect()).unwrap();
        let a = lovasz_softmax(&probs, &g).unwrap();
        let b = oracle::lovasz_abel(&probs, &g);
        if (a - b).abs() > 1e-9 {
            return outcome(name, start, Some(json!({"seed": opts.seed, "case": case, "sorted_form": a, "abel_form": b})), "Abel form mismatch".into());
        }
    }
    outcome(name, start, None, format!("ln3, 0.4, {vertices} vertices, 20 Abel-form cases"))
}

/// Sorted-error and argmax gaps large enough that a ±h perturbation cannot
/// reorder anything.
fn well_separated(probs: &Tensor, labels: &LabelGrid, gap: f64) -> bool {
    let plane = labels.height() * labels.width();
    let d = probs.data();
    for i in 0..plane {
        let mut v: Vec<f64> = (0..3).map(|k| d[k * plane + i] as f64).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        if v[0] - v[1] < gap {
            return false;
        }
    }
    for k in 0..3 {
        let mut e: Vec<f64> = (0..plane)
            .filter(|&i| labels.labels()[i] != 0)
            .map(|i| {
                let p = d[k * plane + i] as f64;
                if labels.labels()[i] as usize == k {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        e.sort_by(|a, b| b.total_cmp(a));
        if e.windows(2).any(|w| w[0] - w[1] < gap) {
            return false;
        }
    }
    true
}

/// Analytic CE and Lovász gradients against central differences (h = 1e-4).
pub fn check_gradients(opts: &SelfcheckOptions, cases: usize, ce_tol: f64, lovasz_tol: f64) -> CheckOutcome {
    let start = Instant::now();
    let name = "loss gradients";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x96AD);
    let h = 1e-4f32;
    let (mut worst_ce, mut worst_ls) = (0.0f64, 0.0f64);
    let mut case = 0;
    let mut draws = 0;
    while case < cases {
        draws += 1;
        let logits = uniform(&mut rng, &[3, 4, 4], -2.0, 2.0);
        let labels = LabelGrid::new(4, 4, (0..16).map(|_| rng.gen_range(0..3)).collect()).unwrap();
        if labels.labeled_count() == 0 {
            continue;
        }
        let probs = softmax_channels(&logits).unwrap();
        if !well_separated(&probs, &labels, 1e-3) {
            continue;
        }
        let ga = cross_entropy_grad(&logits, &labels).unwrap();
        let gn = oracle::finite_difference(&logits, h, |t| cross_entropy(t, &labels).unwrap().mean);
        let e_ce = ga.data().iter().zip(&gn).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        let la = lovasz_softmax_grad(&probs, &labels).unwrap();
        let ln = oracle::finite_difference(&probs, h, |t| lovasz_softmax_unchecked(t, &labels).unwrap());
        let e_ls = la.data().iter().zip(&ln).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        worst_ce = worst_ce.max(e_ce);
        worst_ls = worst_ls.max(e_ls);
        if e_ce > ce_tol || e_ls > lovasz_tol {
            return outcome(
                name,
                start,
                Some(json!({"seed": opts.seed, "case": case, "draw": draws, "ce_error": e_ce, "lovasz_error": e_ls})),
                format!("case {case}: CE {e_ce:.2e}, Lovász {e_ls:.2e}"),
            );
        }
        case += 1;
    }
    outcome(name, start, None, format!("{cases} cases, worst CE {worst_ce:.2e}, Lovász {worst_ls:.2e}"))
}

/// Street scene without moving objects, ego at `speed` m/s with a slow yaw.
pub fn static_scene(speed: f64, frames: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        frame_count: frames,
        ego_velocity: [speed, 0.0, 0.0],
        ego_yaw_rate: 0.05,
        ..SyntheticSceneSpec::street()
    }
}

/// Per frame and channel, the `q` quantile of residuals over pixels (cells)
/// where both the reference and the compensated history are valid.
pub fn static_residual_quantiles(spec: &SyntheticSceneSpec, window: usize, q: f64, exec: Exec) -> (Vec<f32>, Vec<f32>) {
    let proj = ProjectionConfig::desk();
    let (clouds, poses) = split(&synth_sequence(spec).expect("valid spec"));
    let quantile = |mut v: Vec<f32>| {
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        v[(((v.len() - 1) as f64) * q).ceil() as usize]
    };
    let (mut rv_q, mut bev_q) = (Vec::new(), Vec::new());
    for k in window..clouds.len() {
        let lo = k - window;
        let s = build_residual_stack_with(exec, &clouds[lo..=k], &poses[lo..=k], &proj, window).unwrap();
        let ref_rv = project_range(&clouds[k], &proj);
        let ref_bev = stacked_bev(&[&clouds[k]], &proj);
        let comp: Vec<PointCloud> = (1..=window).map(|j| transform_to_frame(&clouds[k - j], &poses[k - j], &poses[k])).collect();
        let (rh, rw) = (proj.rv.height * proj.rv.width, proj.bev.height * proj.bev.width);
        for j in 0..window {
            let past = project_range(&comp[j], &proj);
            let v: Vec<f32> = (0..rh)
                .filter(|&i| ref_rv.values.data()[i] >= crate::residual::RANGE_EPS && past.values.data()[i] >= 0.0)
                .map(|i| s.rv.data()[j * rh + i])
                .collect();
            rv_q.push(quantile(v));
            let win: Vec<&PointCloud> = comp[j..].iter().collect();
            let past_b = stacked_bev(&win, &proj);
            let v: Vec<f32> = (0..rw).filter(|&i| ref_bev.valid[i] && past_b.valid[i]).map(|i| s.bev.data()[j * rw + i]).collect();
            bev_q.push(quantile(v));
        }
    }
    (rv_q, bev_q)
}

/// 20 frames, moving ego, nothing moving: 95th percentile below `bound` in every channel.
pub fn check_static_residual(opts: &SelfcheckOptions, bound: f32) -> CheckOutcome {
    let start = Instant::now();
    let window = NetworkConfig::desk().window;
    let (rv, bev) = static_residual_quantiles(&static_scene(1.0, 20), window, 0.95, opts.exec);
    let (mr, mb) = (rv.iter().fold(0.0f32, |a, b| a.max(*b)), bev.iter().fold(0.0f32, |a, b| a.max(*b)));
    let fail = (mr >= bound || mb >= bound).then(|| json!({"rv_p95": rv, "bev_p95": bev}));
    outcome("static-scene residual", start, fail, format!("worst p95 rv {mr:.4}, bev {mb:.4} (bound {bound})"))
}

/// Street buildings, ego at 1 m/s, and one 2 x 1 x 1.5 m box at 2 m/s along `heading`.
pub fn moving_box_scene(heading: f64) -> SyntheticSceneSpec {
    let mut spec = SyntheticSceneSpec::street();
    spec.static_boxes.retain(|b: &BoxSpec| b.raw_label != RAW_CAR);
    spec.frame_count = 10;
    spec.ego_velocity = [1.0, 0.0, 0.0];
    spec.dynamic_boxes.push(DynamicBoxSpec {
        center: [7.0, -2.0, 0.75],
        extents: [2.0, 1.0, 1.5],
        velocity: [2.0 * heading.cos(), 2.0 * heading.sin(), 0.0],
        raw_label: RAW_MOVING_CAR,
    });
    spec
}

/// Cell statistics of the moving-box scene at its last frame:
/// (box cells above threshold, box cells, ground cells above, ground cells).
/// Box cells hold box points in the current or the oldest window frame;
/// ground cells hold current road points and no box point in the window.
/// A cell's residual is its maximum over channels.
pub fn moving_box_counts(spec: &SyntheticSceneSpec, window: usize, threshold: f32, exec: Exec) -> [usize; 4] {
    let proj = ProjectionConfig::desk();
    let (clouds, poses) = split(&synth_sequence(spec).expect("valid spec"));
    let k = clouds.len() - 1;
    let s = build_residual_stack_with(exec, &clouds[k - window..=k], &poses[k - window..=k], &proj, window).unwrap();
    let nb = proj.bev.height * proj.bev.width;
    let (mut box_now, mut box_any, mut ground) = (vec![false; nb], vec![false; nb], vec![false; nb]);
    for lag in 0..=window {
        let c = transform_to_frame(&clouds[k - lag], &poses[k - lag], &poses[k]);
        let labels = c.labels.as_ref().expect("synthetic clouds are labelled");
        for (p, &raw) in c.points.iter().zip(labels) {
            let Some((r, col)) = bev_cell_of(p, &proj) else { continue };
            let i = r * proj.bev.width + col;
            if remap_mos(raw) == MosLabel::Moving {
                box_any[i] = true;
                if lag == 0 || lag == window {
                    box_now[i] = true;
                }
            } else if lag == 0 && raw == RAW_ROAD {
                ground[i] = true;
            }
        }
    }
    let peak = |i: usize| (0..window).map(|j| s.bev.data()[j * nb + i]).fold(0.0f32, f32::max);
    let mut out = [0; 4];
    for i in 0..nb {
        if box_now[i] {
            out[1] += 1;
            out[0] += (peak(i) > threshold) as usize;
        } else if ground[i] && !box_any[i] {
            out[3] += 1;
            out[2] += (peak(i) > threshold) as usize;
        }
    }
    out
}

/// Pooled over eight headings: at least `min_box` of box cells exceed
/// 0.5 m, at most `max_ground` of ground cells do.
pub fn check_moving_detectability(opts: &SelfcheckOptions, min_box: f64, max_ground: f64) -> CheckOutcome {
    let start = Instant::now();
    let window = NetworkConfig::desk().window;
    let mut tot = [0usize; 4];
    for h in 0..8 {
        let c = moving_box_counts(&moving_box_scene(h as f64 * std::f64::consts::FRAC_PI_4), window, 0.5, opts.exec);
        for (t, v) in tot.iter_mut().zip(c) {
            *t += v;
        }
    }
    let fb = tot[0] as f64 / tot[1].max(1) as f64;
    let fg = tot[2] as f64 / tot[3].max(1) as f64;
    let fail = (fb < min_box || fg > max_ground || tot[1] == 0).then(|| json!({"counts": tot}));
    outcome(
        "moving-box detectability",
        start,
        fail,
        format!("box {}/{} = {:.2}, ground {}/{} = {:.4}", tot[0], tot[1], fb, tot[2], tot[3], fg),
    )
}

/// Desk forward pass: shapes, bit-identical repeats and execution modes,
/// finite outputs over `draws` seeded weight draws.
pub fn check_forward(opts: &SelfcheckOptions, draws: u64) -> CheckOutcome {
    let start = Instant::now();
    let name = "forward determinism";
    let cfg = NetworkConfig::desk();
    let proj = ProjectionConfig::desk();
    let mut spec = SyntheticSceneSpec::random(opts.seed);
    spec.frame_count = cfg.window + 1;
    let (clouds, poses) = split(&synth_sequence(&spec).expect("valid spec"));
    let inp = prepare_frame(opts.exec, &clouds, &poses, &proj, cfg.window, cfg.scales()).unwrap();
    for d in 0..draws {
        let w = WeightStore::random(&cfg, opts.seed.wrapping_add(d));
        let net = Network::new(cfg.clone(), proj.clone(), w).unwrap().with_exec(opts.exec);
        let a = match net.forward(&inp.stack, &inp.semantic, &inp.corrs) {
            Ok(a) => a,
            Err(e) => return outcome(name, start, Some(json!({"seed": opts.seed, "draw": d, "error": e.to_string()})), e.to_string()),
        };
        if d == 0 {
            let b = net.forward(&inp.stack, &inp.semantic, &inp.corrs).unwrap();
            let other = if opts.exec == Exec::Sequential { Exec::Parallel } else { Exec::Sequential };
            let c = net.clone().with_exec(other).forward(&inp.stack, &inp.semantic, &inp.corrs).unwrap();
            let shape_ok = a.moving.shape() == [3, 128, 128] && a.movable.shape() == [3, 128, 128];
            if !shape_ok || a != b || a != c {
                return outcome(name, start, Some(json!({"seed": opts.seed, "shape": a.moving.shape(), "repeat_equal": a == b, "modes_equal": a == c})), "not reproducible".into());
            }
        }
    }
    outcome(name, start, None, format!("(3,128,128) bit-identical; {draws} draws finite"))
}

/// IoU 1 on ground truth against itself; flipping k moving points moves
/// exactly k counts.
pub fn check_eval_closure(opts: &SelfcheckOptions) -> CheckOutcome {
    let start = Instant::now();
    let spec = moving_box_scene(opts.seed as f64 * 0.37);
    let frames = synth_sequence(&spec).expect("valid spec");
    let mut c = ConfusionCounts::default();
    for f in &frames {
        c.accumulate(&f.mos, &f.mos).unwrap();
    }
    let moving: Vec<usize> = (0..frames[0].mos.len()).filter(|&i| frames[0].mos[i] == MosLabel::Moving).collect();
    let k = moving.len().min(7);
    let mut pred = frames[0].mos.clone();
    for &i in &moving[..k] {
        pred[i] = MosLabel::Static;
    }
    let (mut a, mut b) = (ConfusionCounts::default(), ConfusionCounts::default());
    a.accumulate(&frames[0].mos, &frames[0].mos).unwrap();
    b.accumulate(&pred, &frames[0].mos).unwrap();
    let m = MosLabel::Moving as usize;
    let ok = c.iou(MosLabel::Moving) == Some(1.0)
        && k > 0
        && a.tp[m] - b.tp[m] == k as u64
        && b.fn_[m] - a.fn_[m] == k as u64
        && b.fp[MosLabel::Static as usize] - a.fp[MosLabel::Static as usize] == k as u64;
    let fail = (!ok).then(|| json!({"k": k, "iou": c.iou(MosLabel::Moving)}));
    outcome("evaluation closure", start, fail, format!("IoU 1.0; flip of {k} points moves {k} counts"))
}

type CheckFn = fn(&SelfcheckOptions) -> CheckOutcome;

/// Every check with its name, in run order.
pub const CHECKS: [(&str, CheckFn); 10] = [
    ("correspondence round trip", |o| check_correspondence(o, 10)),
    ("circular conv equivariance", |o| check_circular_equivariance(o, 100)),
    ("ss2d scan oracle", |o| check_ss2d_oracle(o, 50, 1e-5)),
    ("scan prefix-sum limit", |_| check_prefix_sum()),
    ("loss values", check_losses),
    ("loss gradients", |o| check_gradients(o, 20, 1e-5, 1e-4)),
    ("static-scene residual", |o| check_static_residual(o, 0.1)),
    ("moving-box detectability", |o| check_moving_detectability(o, 0.5, 0.01)),
    ("forward determinism", |o| check_forward(o, 20)),
    ("evaluation closure", check_eval_closure),
];

pub fn run_all(opts: &SelfcheckOptions) -> Vec<CheckOutcome> {
    run_selected(opts, |_| true)
}

pub fn run_selected(opts: &SelfcheckOptions, keep: impl Fn(&str) -> bool) -> Vec<CheckOutcome> {
    CHECKS.iter().filter(|(n, _)| keep(n)).map(|(_, f)| f(opts)).collect()
}

/// Fixed-width table, one row per check.
pub fn render_table(results: &[CheckOutcome]) -> String {
    let mut s = format!("{:<30} {:<6} {:>9}  {}\n", "check", "result", "seconds", "detail");
    for r in results {
        s += &format!(
            "{:<30} {:<6} {:>9.3}  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.elapsed.as_secs_f64(),
            r.detail
        );
    }
    s
}
