//! Four-direction selective scan over a 2D map.
//!
//! Scan expansion flattens the map row-major, row-major reversed,
//! column-major and column-major reversed. Each sequence runs the S6
//! recurrence with its own parameters; scan merge maps every output back to
//! its lattice position and sums the four. State arithmetic is f64.

use super::WeightStore;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::tensor::{concat_channels, linear, Tensor};

/// Parameters of one scan direction over `D` channels with state size `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams {
    /// (D, N); the per-step decay is `exp(-Δ exp(a_log))`.
    pub a_log: Tensor,
    /// (D) skip gain.
    pub d: Tensor,
    /// (D, D) and (D): `Δ_t = softplus(dt_weight x_t + dt_bias)`.
    pub dt_weight: Tensor,
    pub dt_bias: Tensor,
    /// (N, D) and (N): `B_t = b_weight x_t + b_bias`.
    pub b_weight: Tensor,
    pub b_bias: Tensor,
    pub c_weight: Tensor,
    pub c_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ss2dParams {
    /// (D, D) and (D), applied per pixel before the scan.
    pub in_proj_weight: Tensor,
    pub in_proj_bias: Tensor,
    pub dirs: [DirectionParams; 4],
}

impl DirectionParams {
    pub fn from_store(w: &WeightStore, prefix: &str) -> Result<Self> {
        let g = |s: &str| w.get(&format!("{prefix}.{s}")).cloned();
        Ok(DirectionParams {
            a_log: g("a_log")?,
            d: g("d")?,
            dt_weight: g("dt_weight")?,
            dt_bias: g("dt_bias")?,
            b_weight: g("b_weight")?,
            b_bias: g("b_bias")?,
            c_weight: g("c_weight")?,
            c_bias: g("c_bias")?,
        })
    }

    /// (D, N) after checking every tensor against it.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let (d, n) = match self.a_log.shape()[..] {
            [d, n] => (d, n),
            _ => return Err(Error::shape(format!("a_log {:?}", self.a_log.shape()))),
        };
        for (name, t, want) in [
            ("d", &self.d, vec![d]),
            ("dt_weight", &self.dt_weight, vec![d, d]),
            ("dt_bias", &self.dt_bias, vec![d]),
            ("b_weight", &self.b_weight, vec![n, d]),
            ("b_bias", &self.b_bias, vec![n]),
            ("c_weight", &self.c_weight, vec![n, d]),
            ("c_bias", &self.c_bias, vec![n]),
        ] {
            if t.shape() != want.as_slice() {
                return Err(Error::shape(format!("{name} is {:?}, expected {want:?}", t.shape())));
            }
        }
        Ok((d, n))
    }
}

impl Ss2dParams {
    pub fn from_store(w: &WeightStore, prefix: &str) -> Result<Self> {
        let dir = |k: usize| {
            let p = format!("{prefix}.dir{k}");
            DirectionParams::from_store(w, &p).map_err(|e| e.at(p))
        };
        Ok(Ss2dParams {
            in_proj_weight: w.get(&format!("{prefix}.in_proj.weight"))?.clone(),
            in_proj_bias: w.get(&format!("{prefix}.in_proj.bias"))?.clone(),
            dirs: [dir(0)?, dir(1)?, dir(2)?, dir(3)?],
        })
    }
}

/// One direction's sequence after expansion and projection. All buffers are
/// row-major with the step index outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSequence {
    pub len: usize,
    pub dim: usize,
    pub state: usize,
    /// (L, D)
    pub x: Vec<f64>,
    /// (L, D)
    pub delta: Vec<f64>,
    /// (L, N)
    pub b: Vec<f64>,
    /// (L, N)
    pub c: Vec<f64>,
}

impl ScanSequence {
    fn check(&self, a_log: &[f64], d: &[f64]) -> Result<()> {
        let (l, dm, n) = (self.len, self.dim, self.state);
        let ok = self.x.len() == l * dm
            && self.delta.len() == l * dm
            && self.b.len() == l * n
            && self.c.len() == l * n
            && a_log.len() == dm * n
            && d.len() == dm;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("selective scan buffers inconsistent with L={l}, D={dm}, N={n}")))
        }
    }
}

/// S6 recurrence per channel:
/// `h_t = exp(-Δ_t exp(a_log)) h_{t-1} + Δ_t B_t x_t`, `y_t = <C_t, h_t> + d x_t`.
/// Returns y as (L, D). `a_log` is (D, N) and may hold -inf (decay 1).
pub fn selective_scan(seq: &ScanSequence, a_log: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    selective_scan_with(Exec::Sequential, seq, a_log, d)
}

pub fn selective_scan_with(exec: Exec, seq: &ScanSequence, a_log: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    seq.check(a_log, d)?;
    let (l, dm, n) = (seq.len, seq.dim, seq.state);
    // Channel-major scratch so channels can be filled independently.
    let mut by_channel = vec![0.0f64; dm * l];
    exec::for_each_chunk(exec, &mut by_channel, l.max(1), |ch, out| {
        let a: Vec<f64> = a_log[ch * n..(ch + 1) * n].iter().map(|v| v.exp()).collect();
        let mut h = vec![0.0f64; n];
        for (t, y) in out.iter_mut().enumerate() {
            let xt = seq.x[t * dm + ch];
            let dt = seq.delta[t * dm + ch];
            let bt = &seq.b[t * n..(t + 1) * n];
            let ct = &seq.c[t * n..(t + 1) * n];
            let mut acc = 0.0;
            for s in 0..n {
                h[s] = (-dt * a[s]).exp() * h[s] + dt * bt[s] * xt;
                acc += ct[s] * h[s];
            }
            *y = acc + d[ch] * xt;
        }
    });
    let mut y = vec![0.0f64; l * dm];
    for ch in 0..dm {
        for t in 0..l {
            y[t * dm + ch] = by_channel[ch * l + t];
        }
    }
    Ok(y)
}

/// Flat lattice position visited at each step of direction `dir`
/// (0 row-major, 1 reversed, 2 column-major, 3 reversed).
pub fn scan_order(h: usize, w: usize, dir: usize) -> Vec<usize> {
    let l = h * w;
    let col_major = |t: usize| (t % h) * w + t / h;
    match dir {
        0 => (0..l).collect(),
        1 => (0..l).rev().collect(),
        2 => (0..l).map(col_major).collect(),
        3 => (0..l).rev().map(col_major).collect(),
        _ => panic!("scan direction {dir} out of range"),
    }
}

pub(crate) fn softplus64(v: f64) -> f64 {
    if v > 20.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn project(w: &[f32], bias: &[f32], x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * dim..(o + 1) * dim];
        *y = bias[o] as f64 + row.iter().zip(x).map(|(a, b)| *a as f64 * b).sum::<f64>();
    }
}

/// Expands `x` (D, H, W) along `order` and evaluates the input-dependent
/// projections of `p`.
pub fn expand_direction(exec: Exec, x: &Tensor, p: &DirectionParams, order: &[usize]) -> Result<ScanSequence> {
    let (dm, h, w) = x.dims3()?;
    let (pd, n) = p.dims()?;
    if pd != dm {
        return Err(Error::shape(format!("scan parameters for {pd} channels, input has {dm}")));
    }
    let l = h * w;
    let src = x.data();
    let mut xs = vec![0.0f64; l * dm];
    for (t, &pos) in order.iter().enumerate() {
        for ch in 0..dm {
            xs[t * dm + ch] = src[ch * l + pos] as f64;
        }
    }
    // Per step: Δ (D), then B (N), then C (N).
    let row = dm + 2 * n;
    let mut proj = vec![0.0f64; l * row];
    exec::for_each_chunk(exec, &mut proj, row, |t, out| {
        let xt = &xs[t * dm..(t + 1) * dm];
        let (delta, rest) = out.split_at_mut(dm);
        let (b, c) = rest.split_at_mut(n);
        project(p.dt_weight.data(), p.dt_bias.data(), xt, delta);
        delta.iter_mut().for_each(|v| *v = softplus64(*v));
        project(p.b_weight.data(), p.b_bias.data(), xt, b);
        project(p.c_weight.data(), p.c_bias.data(), xt, c);
    });
    let mut seq = ScanSequence {
        len: l,
        dim: dm,
        state: n,
        x: xs,
        delta: Vec::with_capacity(l * dm),
        b: Vec::with_capacity(l * n),
        c: Vec::with_capacity(l * n),
    };
    for r in proj.chunks_exact(row) {
        seq.delta.extend_from_slice(&r[..dm]);
        seq.b.extend_from_slice(&r[dm..dm + n]);
        seq.c.extend_from_slice(&r[dm + n..]);
    }
    Ok(seq)
}

/// SS2D over `x` (D, H, W): expansion, per-direction S6, merge by summation.
pub fn ss2d(x: &Tensor, dirs: &[DirectionParams; 4]) -> Result<Tensor> {
    ss2d_with(Exec::default(), x, dirs)
}

pub fn ss2d_with(exec: Exec, x: &Tensor, dirs: &[DirectionParams; 4]) -> Result<Tensor> {
    ss2d_impl(exec, x, dirs, false)
}

/// `flip_first` scans direction 0 right to left; it exists only so the
/// self-check can prove that its scan oracle notices a wrong order.
pub(crate) fn ss2d_impl(exec: Exec, x: &Tensor, dirs: &[DirectionParams; 4], flip_first: bool) -> Result<Tensor> {
    let (dm, h, w) = x.dims3()?;
    let l = h * w;
    let outs: Vec<Result<(Vec<usize>, Vec<f64>)>> = exec::map_indexed(exec, 4, |k| {
        let order = scan_order(h, w, if flip_first && k == 0 { 1 } else { k });
        let p = &dirs[k];
        let seq = expand_direction(exec, x, p, &order).map_err(|e| e.at(format!("dir{k}")))?;
        let a_log: Vec<f64> = p.a_log.data().iter().map(|v| *v as f64).collect();
        let d: Vec<f64> = p.d.data().iter().map(|v| *v as f64).collect();
        Ok((order, selective_scan_with(exec, &seq, &a_log, &d)?))
    });
    let mut merged = vec![0.0f64; dm * l];
    for r in outs {
        let (order, y) = r?;
        for (t, &pos) in order.iter().enumerate() {
            for ch in 0..dm {
                merged[ch * l + pos] += y[t * dm + ch];
            }
        }
    }
    Tensor::from_parts(vec![dm, h, w], merged.into_iter().map(|v| v as f32).collect(), "ss2d")
}

/// `F_sm + SS2D(Linear(F_sm))` with `F_sm = Cat(f_s, f_m)`.
pub fn ss2d_block(f_s: &Tensor, f_m: &Tensor, p: &Ss2dParams) -> Result<Tensor> {
    ss2d_block_with(Exec::default(), f_s, f_m, p)
}

pub fn ss2d_block_with(exec: Exec, f_s: &Tensor, f_m: &Tensor, p: &Ss2dParams) -> Result<Tensor> {
    let f_sm = concat_channels(&[f_s, f_m])?;
    let z = linear(&f_sm, &p.in_proj_weight, &p.in_proj_bias).map_err(|e| e.at("in_proj"))?;
    let s = ss2d_with(exec, &z, &p.dirs)?;
    crate::tensor::add(&f_sm, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), v).unwrap()
    }

    /// Δ = 1, B = C = 1, D = 0 with the given decay exponent.
    fn unit_dir(dm: usize, a_log: f32) -> DirectionParams {
        let ln_e_minus_1 = (std::f32::consts::E - 1.0).ln();
        DirectionParams {
            a_log: Tensor::full(&[dm, 1], a_log),
            d: Tensor::zeros(&[dm]),
            dt_weight: Tensor::zeros(&[dm, dm]),
            dt_bias: Tensor::full(&[dm], ln_e_minus_1),
            b_weight: Tensor::zeros(&[1, dm]),
            b_bias: Tensor::full(&[1], 1.0),
            c_weight: Tensor::zeros(&[1, dm]),
            c_bias: Tensor::full(&[1], 1.0),
        }
    }

    #[test]
    fn prefix_sum_limit() {
        let seq = ScanSequence {
            len: 3,
            dim: 1,
            state: 1,
            x: vec![1.0, 2.0, 3.0],
            delta: vec![1.0; 3],
            b: vec![1.0; 3],
            c: vec![1.0; 3],
        };
        let y = selective_scan(&seq, &[f64::NEG_INFINITY], &[0.0]).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn memoryless_limit_gives_four_x() {
        let x = Tensor::from_fn((2, 3, 4), |c, y, xx| (c * 12 + y * 4 + xx) as f32 * 0.25 - 1.0).unwrap();
        let dirs = [unit_dir(2, 30.0), unit_dir(2, 30.0), unit_dir(2, 30.0), unit_dir(2, 30.0)];
        let out = ss2d(&x, &dirs).unwrap();
        for (o, i) in out.data().iter().zip(x.data()) {
            assert!((o - 4.0 * i).abs() < 1e-5 * (1.0 + i.abs()), "{o} vs {i}");
        }
    }

    #[test]
    fn scan_orders_are_permutations() {
        for dir in 0..4 {
            let mut o = scan_order(3, 5, dir);
            o.sort_unstable();
            assert_eq!(o, (0..15).collect::<Vec<_>>());
        }
        assert_eq!(scan_order(2, 3, 2), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(scan_order(2, 3, 3), vec![5, 2, 4, 1, 3, 0]);
    }

    #[test]
    fn decay_free_row_scan_is_prefix_sum_in_each_direction() {
        let x = t(&[1, 1, 3], vec![1.0, 2.0, 3.0]);
        let dir = unit_dir(1, 0.0);
        let seq = expand_direction(Exec::Sequential, &x, &dir, &scan_order(1, 3, 0)).unwrap();
        let y = selective_scan(&seq, &[f64::NEG_INFINITY], &[0.0]).unwrap();
        for (a, b) in y.iter().zip([1.0, 3.0, 6.0]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let seq = expand_direction(Exec::Sequential, &x, &dir, &scan_order(1, 3, 1)).unwrap();
        let y = selective_scan(&seq, &[f64::NEG_INFINITY], &[0.0]).unwrap();
        for (a, b) in y.iter().zip([3.0, 5.0, 6.0]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[3, 2, 2]);
        let dirs = [unit_dir(2, 0.0), unit_dir(2, 0.0), unit_dir(2, 0.0), unit_dir(2, 0.0)];
        assert!(ss2d(&x, &dirs).is_err());
        let seq = ScanSequence { len: 2, dim: 1, state: 1, x: vec![1.0], delta: vec![], b: vec![], c: vec![] };
        assert!(selective_scan(&seq, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let x = Tensor::from_fn((3, 4, 5), |c, y, xx| ((c * 7 + y * 3 + xx) as f32).sin()).unwrap();
        let mk = |s: f32| DirectionParams {
            a_log: Tensor::from_fn((1, 3, 2), |_, i, j| (i + j) as f32 * 0.3 - s).unwrap().reshape(vec![3, 2]).unwrap(),
            d: Tensor::full(&[3], 0.5),
            dt_weight: Tensor::from_fn((1, 3, 3), |_, i, j| (i as f32 - j as f32) * 0.1 * s).unwrap().reshape(vec![3, 3]).unwrap(),
            dt_bias: Tensor::full(&[3], 0.1),
            b_weight: Tensor::from_fn((1, 2, 3), |_, i, j| (i + 2 * j) as f32 * 0.2).unwrap().reshape(vec![2, 3]).unwrap(),
            b_bias: Tensor::full(&[2], -0.1),
            c_weight: Tensor::from_fn((1, 2, 3), |_, i, j| (2 * i + j) as f32 * 0.1).unwrap().reshape(vec![2, 3]).unwrap(),
            c_bias: Tensor::full(&[2], 0.3),
        };
        let dirs = [mk(1.0), mk(0.5), mk(-0.5), mk(2.0)];
        let a = ss2d_with(Exec::Sequential, &x, &dirs).unwrap();
        let b = ss2d_with(Exec::Parallel, &x, &dirs).unwrap();
        assert_eq!(a, b);
    }
}
