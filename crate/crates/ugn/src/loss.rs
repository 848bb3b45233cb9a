//! Training losses: masked cross-entropy over known labels, an
//! edge-smoothness penalty on softmax outputs, and their sum.

use crate::autograd::Var;
use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// Sentinel for nodes without a known label.
pub const UNKNOWN_LABEL: i64 = -1;

/// Scalar components of one training step's loss.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub unsupervised: f64,
    pub total: f64,
}

/// One-hot targets and known-label mask from an integer label vector.
pub fn one_hot_targets(labels: &[i64], classes: usize) -> Result<(Tensor, Vec<bool>)> {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    let mut mask = vec![false; labels.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l == UNKNOWN_LABEL {
            continue;
        }
        if l < 0 || l as usize >= classes {
            return Err(UgnError::InvalidArgument(format!(
                "label {l} at row {i} outside 0..{classes}"
            )));
        }
        t.set2(i, l as usize, 1.0);
        mask[i] = true;
    }
    Ok((t, mask))
}

/// Categorical cross-entropy summed over rows with a known label.
/// Rows labeled [`UNKNOWN_LABEL`] contribute nothing; all-unknown is an
/// error.
pub fn supervised_loss<'t>(logits: Var<'t>, labels: &[i64]) -> Result<Var<'t>> {
    let classes = logits.shape()[1];
    let (targets, mask) = one_hot_targets(labels, classes)?;
    logits.softmax_cross_entropy(&targets, &mask)
}

/// Smoothness penalty on softmax outputs: for every edge, the mean squared
/// per-class difference between its endpoint rows. Empty edge lists give 0.
pub fn unsupervised_loss<'t>(logits: Var<'t>, edges: &[(usize, usize)]) -> Result<Var<'t>> {
    logits.softmax_rows()?.edge_smoothness(edges)
}

/// Combined loss as a tape var plus its scalar breakdown.
pub fn total_loss<'t>(
    logits: Var<'t>,
    labels: &[i64],
    edges: &[(usize, usize)],
    use_unsupervised: bool,
) -> Result<(Var<'t>, LossBreakdown)> {
    let ls = supervised_loss(logits, labels)?;
    let ls_val = ls.value().scalar_value()?;
    if !use_unsupervised {
        return Ok((
            ls,
            LossBreakdown {
                supervised: ls_val,
                unsupervised: 0.0,
                total: ls_val,
            },
        ));
    }
    let lu = unsupervised_loss(logits, edges)?;
    let lu_val = lu.value().scalar_value()?;
    let total = ls.add(lu)?;
    Ok((
        total,
        LossBreakdown {
            supervised: ls_val,
            unsupervised: lu_val,
            total: ls_val + lu_val,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn single_known_row_uniform_logits() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let loss = supervised_loss(logits, &[0]).unwrap();
        assert!((loss.value().scalar_value().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_rows_do_not_affect_loss() {
        let tape = Tape::new();
        let base = tape.leaf(
            Tensor::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap(),
        );
        let perturbed = tape.leaf(
            Tensor::from_rows(&[vec![1.0, -1.0], vec![99.0, -5.0]]).unwrap(),
        );
        let labels = [0, UNKNOWN_LABEL];
        let a = supervised_loss(base, &labels).unwrap().value();
        let b = supervised_loss(perturbed, &labels).unwrap().value();
        assert_eq!(a, b);
    }

    #[test]
    fn all_unknown_is_error() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        assert!(supervised_loss(logits, &[UNKNOWN_LABEL]).is_err());
    }

    /// Direct expansion of the cross-entropy formula on a random-ish 4x3
    /// instance.
    #[test]
    fn matches_direct_formula_on_4x3() {
        let rows: [Vec<f64>; 4] = [
            vec![0.3, -1.2, 0.7],
            vec![2.0, 0.1, -0.4],
            vec![-0.8, 0.9, 0.2],
            vec![1.1, 1.1, -2.0],
        ];
        let labels = [2i64, 0, UNKNOWN_LABEL, 1];
        let mut expected = 0.0;
        for (row, &l) in rows.iter().zip(&labels) {
            if l == UNKNOWN_LABEL {
                continue;
            }
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            expected -= (row[l as usize].exp() / z).ln();
        }
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&rows).unwrap());
        let loss = supervised_loss(logits, &labels).unwrap();
        assert!((loss.value().scalar_value().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn smoothness_zero_when_outputs_agree() {
        let tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_rows(&[vec![3.0, -1.0], vec![3.0, -1.0]]).unwrap(),
        );
        let loss = unsupervised_loss(logits, &[(0, 1)]).unwrap();
        assert_eq!(loss.value().scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn smoothness_opposed_one_hot_outputs() {
        // Softmax of heavily saturated logits gives [1,0] vs [0,1]:
        // (1/2)(1 + 1) = 1.
        let tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_rows(&[vec![100.0, 0.0], vec![0.0, 100.0]]).unwrap(),
        );
        let loss = unsupervised_loss(logits, &[(0, 1)]).unwrap();
        assert!((loss.value().scalar_value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothness_empty_edges_zero() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let loss = unsupervised_loss(logits, &[]).unwrap();
        assert_eq!(loss.value().scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn total_respects_flag() {
        let tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        );
        let labels = [0i64, 1];
        let edges = [(0usize, 1usize)];
        let (_, off) = total_loss(logits, &labels, &edges, false).unwrap();
        assert_eq!(off.total, off.supervised);
        assert_eq!(off.unsupervised, 0.0);
        let (var, on) = total_loss(logits, &labels, &edges, true).unwrap();
        assert!(on.unsupervised > 0.0);
        assert!((on.total - (on.supervised + on.unsupervised)).abs() < 1e-15);
        assert!((var.value().scalar_value().unwrap() - on.total).abs() < 1e-15);
    }
}
