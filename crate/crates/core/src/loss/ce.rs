use super::LabelGrid;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeOutput {
    /// Mean of `-ln p_true` over labelled cells; 0 when there are none.
    pub mean: f64,
    pub sum: f64,
    pub count: usize,
    pub all_unlabeled: bool,
}

fn log_softmax_at(d: &[f32], c: usize, plane: usize, i: usize) -> impl Fn(usize) -> f64 + '_ {
    let m = (0..c).map(|k| d[k * plane + i] as f64).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + (0..c).map(|k| (d[k * plane + i] as f64 - m).exp()).sum::<f64>().ln();
    move |k| d[k * plane + i] as f64 - lse
}

/// Softmax over channels, then the mean negative log-likelihood of the true
/// class over labelled cells.
pub fn cross_entropy(logits: &Tensor, labels: &LabelGrid) -> Result<CeOutput> {
    let c = labels.check(logits, "logits")?;
    let plane = labels.height() * labels.width();
    let d = logits.data();
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &y) in labels.labels().iter().enumerate() {
        if y == 0 {
            continue;
        }
        sum -= log_softmax_at(d, c, plane, i)(y as usize);
        count += 1;
    }
    Ok(CeOutput {
        mean: if count == 0 { 0.0 } else { sum / count as f64 },
        sum,
        count,
        all_unlabeled: count == 0,
    })
}

/// Gradient of the mean CE with respect to the logits:
/// `(softmax - onehot) / count` on labelled cells, 0 elsewhere.
pub fn cross_entropy_grad(logits: &Tensor, labels: &LabelGrid) -> Result<Tensor> {
    let c = labels.check(logits, "logits")?;
    let plane = labels.height() * labels.width();
    let d = logits.data();
    let count = labels.labeled_count();
    let mut g = vec![0.0f32; d.len()];
    for (i, &y) in labels.labels().iter().enumerate() {
        if y == 0 {
            continue;
        }
        let ls = log_softmax_at(d, c, plane, i);
        for k in 0..c {
            let onehot = if k == y as usize { 1.0 } else { 0.0 };
            g[k * plane + i] = ((ls(k).exp() - onehot) / count as f64) as f32;
        }
    }
    Tensor::from_parts(logits.shape().to_vec(), g, "cross_entropy_grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(v: [f32; 3]) -> Tensor {
        Tensor::new(vec![3, 1, 1], v.to_vec()).unwrap()
    }

    #[test]
    fn half_probability() {
        let l = one_cell([0.0, 0.0, f32::MIN / 4.0]);
        let g = LabelGrid::new(1, 1, vec![1]).unwrap();
        assert!((cross_entropy(&l, &g).unwrap().mean - std::f64::consts::LN_2).abs() < 1e-5);
    }

    #[test]
    fn uniform_is_ln3() {
        let l = Tensor::zeros(&[3, 2, 2]);
        let g = LabelGrid::new(2, 2, vec![1, 2, 0, 1]).unwrap();
        let out = cross_entropy(&l, &g).unwrap();
        assert!((out.mean - 3f64.ln()).abs() < 1e-12);
        assert_eq!(out.count, 3);
        assert!((out.sum - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_unlabeled() {
        let l = one_cell([-40.0, 40.0, -40.0]);
        assert!(cross_entropy(&l, &LabelGrid::new(1, 1, vec![1]).unwrap()).unwrap().mean < 1e-6);
        let out = cross_entropy(&l, &LabelGrid::new(1, 1, vec![0]).unwrap()).unwrap();
        assert_eq!(out.mean, 0.0);
        assert!(out.all_unlabeled);
    }

    #[test]
    fn uniform_gradient() {
        let g = cross_entropy_grad(&Tensor::zeros(&[3, 1, 1]), &LabelGrid::new(1, 1, vec![1]).unwrap()).unwrap();
        let want = [1.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn extent_mismatch() {
        assert!(cross_entropy(&Tensor::zeros(&[3, 2, 2]), &LabelGrid::new(1, 4, vec![1; 4]).unwrap()).is_err());
    }
}
