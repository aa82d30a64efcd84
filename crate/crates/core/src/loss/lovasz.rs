use super::LabelGrid;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Classes that occur among labelled cells, either as the label or as the
/// arg-max prediction. Ascending.
pub fn present_classes(probs: &Tensor, labels: &LabelGrid) -> Result<Vec<usize>> {
    let c = labels.check(probs, "probabilities")?;
    let plane = labels.height() * labels.width();
    let d = probs.data();
    let mut present = vec![false; c];
    for (i, &y) in labels.labels().iter().enumerate() {
        if y == 0 {
            continue;
        }
        present[y as usize] = true;
        let arg = (1..c).fold(0, |b, k| if d[k * plane + i] > d[b * plane + i] { k } else { b });
        present[arg] = true;
    }
    Ok((0..c).filter(|k| present[*k]).collect())
}

/// Per class: labelled cell indices sorted by descending error, with
/// their errors and Jaccard-gradient weights.
struct ClassTerms {
    class: usize,
    order: Vec<usize>,
    errors: Vec<f64>,
    weights: Vec<f64>,
}

fn class_terms(probs: &Tensor, labels: &LabelGrid) -> Result<Vec<ClassTerms>> {
    let plane = labels.height() * labels.width();
    let d = probs.data();
    let cells: Vec<usize> = (0..plane).filter(|&i| labels.labels()[i] != 0).collect();
    let mut out = Vec::new();
    for class in present_classes(probs, labels)? {
        let fg = |i: usize| labels.labels()[i] as usize == class;
        let err = |i: usize| {
            let p = d[class * plane + i] as f64;
            if fg(i) {
                1.0 - p
            } else {
                p
            }
        };
        let mut order = cells.clone();
        // Stable: equal errors keep cell order.
        order.sort_by(|a, b| err(*b).total_cmp(&err(*a)));
        let gts = order.iter().filter(|i| fg(**i)).count() as f64;
        let mut cum_fg = 0.0;
        let mut prev = 0.0;
        let mut weights = Vec::with_capacity(order.len());
        for (k, &i) in order.iter().enumerate() {
            if fg(i) {
                cum_fg += 1.0;
            }
            let inter = gts - cum_fg;
            let union = gts + (k as f64 + 1.0 - cum_fg);
            let jac = 1.0 - inter / union;
            weights.push(jac - prev);
            prev = jac;
        }
        let errors = order.iter().map(|&i| err(i)).collect();
        out.push(ClassTerms {
            class,
            order,
            errors,
            weights,
        });
    }
    Ok(out)
}

fn check_normalized(probs: &Tensor, labels: &LabelGrid) -> Result<()> {
    let c = labels.check(probs, "probabilities")?;
    let plane = labels.height() * labels.width();
    let d = probs.data();
    for i in 0..plane {
        let s: f64 = (0..c).map(|k| d[k * plane + i] as f64).sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!(
                "probabilities at cell {i} sum to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean over present classes of `sum_i m_(i) ΔJ_(i)`, with errors sorted in
/// descending order and ΔJ the successive differences of the Jaccard loss
/// of the sorted prefixes.
pub fn lovasz_softmax(probs: &Tensor, labels: &LabelGrid) -> Result<f64> {
    check_normalized(probs, labels)?;
    lovasz_softmax_unchecked(probs, labels)
}

/// [`lovasz_softmax`] without the normalisation check, so that single
/// probabilities can be perturbed.
pub fn lovasz_softmax_unchecked(probs: &Tensor, labels: &LabelGrid) -> Result<f64> {
    let terms = class_terms(probs, labels)?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = terms
        .iter()
        .map(|t| t.errors.iter().zip(&t.weights).map(|(m, w)| m * w).sum::<f64>())
        .sum();
    Ok(total / terms.len() as f64)
}

/// Gradient with respect to the probabilities: `∓ΔJ / |C|` at each cell's
/// sorted position (minus on the true class). Piecewise constant; ties take
/// the stable order.
pub fn lovasz_softmax_grad(probs: &Tensor, labels: &LabelGrid) -> Result<Tensor> {
    let terms = class_terms(probs, labels)?;
    let plane = labels.height() * labels.width();
    let mut g = vec![0.0f32; probs.len()];
    let n = terms.len() as f64;
    for t in &terms {
        for (&i, w) in t.order.iter().zip(&t.weights) {
            let sign = if labels.labels()[i] as usize == t.class { -1.0 } else { 1.0 };
            g[t.class * plane + i] = (sign * w / n) as f32;
        }
    }
    Tensor::from_parts(probs.shape().to_vec(), g, "lovasz_grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(cells: &[[f32; 3]]) -> Tensor {
        let n = cells.len();
        Tensor::from_fn((3, 1, n), |c, _, x| cells[x][c]).unwrap()
    }

    #[test]
    fn two_cell_example() {
        let p = probs(&[[0.0, 0.4, 0.6], [0.0, 0.6, 0.4]]);
        let g = LabelGrid::new(1, 2, vec![2, 1]).unwrap();
        let l = lovasz_softmax(&p, &g).unwrap();
        assert!((l - 0.4).abs() < 1e-6, "{l}");
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let p = probs(&[[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.3, 0.3, 0.4]]);
        let g = LabelGrid::new(1, 3, vec![2, 1, 0]).unwrap();
        assert_eq!(lovasz_softmax(&p, &g).unwrap(), 0.0);
    }

    #[test]
    fn rejects_unnormalized() {
        let p = probs(&[[0.0, 0.5, 0.6]]);
        assert!(lovasz_softmax(&p, &LabelGrid::new(1, 1, vec![1]).unwrap()).is_err());
        assert!(lovasz_softmax_unchecked(&p, &LabelGrid::new(1, 1, vec![1]).unwrap()).is_ok());
    }

    #[test]
    fn predicted_class_counts_as_present() {
        let p = probs(&[[0.1, 0.2, 0.7]]);
        let g = LabelGrid::new(1, 1, vec![1]).unwrap();
        assert_eq!(present_classes(&p, &g).unwrap(), vec![1, 2]);
    }
}
