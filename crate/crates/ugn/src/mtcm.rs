//! Connectivity-matrix translation around a mean target connectivity
//! matrix: the model regresses the difference between each target and the
//! training-set mean, and predictions are reconstructed by adding the mean
//! back.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::decoder::MlpHead;
use crate::encoder::Encoder;
use crate::error::{Result, UgnError};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// One source/target connectivity sample. Entries are correlation-valued
/// (in [-1, 1]) and both matrices are symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPair {
    pub source: Tensor,
    pub target: Tensor,
}

impl TranslationPair {
    pub fn new(source: Tensor, target: Tensor) -> Result<Self> {
        let sh = source.shape().to_vec();
        if sh.len() != 2 || sh[0] != sh[1] || target.shape() != sh {
            return Err(UgnError::shape(
                "translation pair",
                source.shape(),
                target.shape(),
            ));
        }
        for m in [&source, &target] {
            for i in 0..sh[0] {
                for j in i + 1..sh[0] {
                    if (m.get2(i, j) - m.get2(j, i)).abs() > 1e-6 {
                        return Err(UgnError::InvalidArgument(format!(
                            "connectivity matrix asymmetric at ({i},{j})"
                        )));
                    }
                    if m.get2(i, j).abs() > 1.0 {
                        return Err(UgnError::InvalidArgument(format!(
                            "connectivity entry {} outside [-1,1]",
                            m.get2(i, j)
                        )));
                    }
                }
            }
        }
        Ok(TranslationPair { source, target })
    }

    pub fn n(&self) -> usize {
        self.source.shape()[0]
    }
}

/// Entrywise mean of the training targets.
#[derive(Debug, Clone)]
pub struct Mtcm {
    mean: Tensor,
    sample_count: usize,
}

impl Mtcm {
    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

/// Mean of the target connectivity matrices in the training set.
pub fn compute_mtcm(train_targets: &[Tensor]) -> Result<Mtcm> {
    let first = train_targets
        .first()
        .ok_or_else(|| UgnError::InvalidArgument("no training targets".into()))?;
    let sh = first.shape();
    if sh.len() != 2 || sh[0] != sh[1] {
        return Err(UgnError::Dimension(format!(
            "connectivity matrix must be square, got {sh:?}"
        )));
    }
    let mut mean = Tensor::zeros(sh.to_vec());
    for t in train_targets {
        if t.shape() != sh {
            return Err(UgnError::shape("mtcm targets", sh, t.shape()));
        }
        mean = mean.add(t)?;
    }
    mean = mean.scale(1.0 / train_targets.len() as f64);
    Ok(Mtcm {
        mean,
        sample_count: train_targets.len(),
    })
}

/// Regression target for one sample: `T - mean`.
pub fn difference_matrix(target: &Tensor, mtcm: &Mtcm) -> Result<Tensor> {
    target.sub(&mtcm.mean)
}

/// Predicted connectivity: `pred_diff + mean`, clamped to [-1, 1].
pub fn reconstruct(pred_diff: &Tensor, mtcm: &Mtcm) -> Result<Tensor> {
    Ok(pred_diff.add(&mtcm.mean)?.map(|x| x.clamp(-1.0, 1.0)))
}

/// Average a square matrix with its transpose.
pub fn symmetrize(m: &Tensor) -> Result<Tensor> {
    let sh = m.shape();
    if sh.len() != 2 || sh[0] != sh[1] {
        return Err(UgnError::Dimension(format!(
            "symmetrize expects a square matrix, got {sh:?}"
        )));
    }
    Ok(m.add(&m.transpose2()?)?.scale(0.5))
}

/// Graph-to-graph regression model: an encoder over the source
/// connectivity and a per-node linear head whose row outputs stack into
/// the predicted difference matrix.
#[derive(Debug, Clone)]
pub struct TranslationModel {
    pub encoder: Encoder,
    pub head: MlpHead,
    n: usize,
}

impl TranslationModel {
    /// `encoder_dims` starts at the source width `n`; the head maps the
    /// latent width to an `n`-wide output row through `head_hidden`.
    pub fn init(
        n: usize,
        encoder_dims: &[usize],
        head_hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if encoder_dims.first() != Some(&n) {
            return Err(UgnError::Config(format!(
                "encoder input width must equal source size {n}, got {encoder_dims:?}"
            )));
        }
        let encoder = Encoder::init(encoder_dims, rng)?;
        // The head sees the latent with the raw source row appended (skip
        // connection), so entrywise source-to-target maps stay reachable
        // even when neighborhood averaging washes out row identity.
        let head = MlpHead::init(encoder.latent_dim() + n, head_hidden, n, rng)?;
        Ok(TranslationModel { encoder, head, n })
    }

    pub fn from_parts(encoder: Encoder, head: MlpHead, n: usize) -> Result<Self> {
        if head.input_dim() != encoder.latent_dim() + n || head.classes() != n {
            return Err(UgnError::Config(format!(
                "regression head must map latent {} plus source row {n} to row width {n}",
                encoder.latent_dim()
            )));
        }
        Ok(TranslationModel { encoder, head, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.encoder.weights().iter().collect();
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let enc_n = self.encoder.layer_count();
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.encoder.weights_mut().iter_mut().take(enc_n));
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().iter().map(|t| tape.param((*t).clone())).collect()
    }

    /// Normalized adjacency from the absolute source weights, diagonal
    /// zeroed before the self-loop is injected.
    fn source_adjacency(&self, source: &Tensor) -> Result<Tensor> {
        if source.shape() != [self.n, self.n] {
            return Err(UgnError::shape(
                "translation source",
                source.shape(),
                &[self.n, self.n],
            ));
        }
        let mut w = source.map(f64::abs);
        for i in 0..self.n {
            w.set2(i, i, 0.0);
        }
        Graph::normalized_from_weights(&w)
    }

    /// Raw predicted difference matrix on the tape (rows unsymmetrized).
    pub fn forward_var<'t>(
        &self,
        tape: &'t Tape,
        source: &Tensor,
        param_vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let ahat = self.source_adjacency(source)?;
        let enc_n = self.encoder.layer_count();
        let latents = self
            .encoder
            .forward(tape, &ahat, source, &param_vars[..enc_n])?;
        let head_vars = &param_vars[enc_n..];
        let source_rows = tape.leaf(source.clone());
        let mut rows = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let input = latents.row(i)?.concat(source_rows.row(i)?)?;
            rows.push(self.head.forward(input, None, head_vars)?);
        }
        tape.stack_rows(&rows)
    }

    /// Symmetrized predicted difference matrix (inference path).
    pub fn predict_diff(&self, source: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.register(&tape);
        let out = self.forward_var(&tape, source, &vars)?;
        symmetrize(&out.value())
    }

    /// Predicted target connectivity: the mean-corrected reconstruction
    /// when an MTCM is supplied, otherwise the clamped direct prediction.
    pub fn predict(&self, source: &Tensor, mtcm: Option<&Mtcm>) -> Result<Tensor> {
        let diff = self.predict_diff(source)?;
        match mtcm {
            Some(m) => reconstruct(&diff, m),
            None => Ok(diff.map(|x| x.clamp(-1.0, 1.0))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn mean_of_two_targets() {
        let a = mat(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let b = mat(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let m = compute_mtcm(&[a, b]).unwrap();
        assert_eq!(m.mean().data(), &[0.0, 0.5, 0.5, 0.0]);
        assert_eq!(m.sample_count(), 2);
    }

    #[test]
    fn single_target_is_its_own_mean() {
        let a = mat(&[vec![0.3, -0.2], vec![-0.2, 1.0]]);
        let m = compute_mtcm(std::slice::from_ref(&a)).unwrap();
        assert_eq!(m.mean(), &a);
    }

    #[test]
    fn empty_and_ragged_inputs_error() {
        assert!(compute_mtcm(&[]).is_err());
        let a = mat(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let b = mat(&[vec![0.0]]);
        assert!(compute_mtcm(&[a, b]).is_err());
    }

    #[test]
    fn difference_round_trip_is_exact() {
        let targets = [
            mat(&[vec![0.1, 0.9], vec![0.9, -0.3]]),
            mat(&[vec![-0.5, 0.2], vec![0.2, 0.8]]),
            mat(&[vec![0.7, -0.1], vec![-0.1, 0.0]]),
        ];
        let m = compute_mtcm(&targets).unwrap();
        for t in &targets {
            let d = difference_matrix(t, &m).unwrap();
            let r = reconstruct(&d, &m).unwrap();
            assert!(r.max_abs_diff(t).unwrap() < 1e-15);
        }
    }

    #[test]
    fn training_differences_have_zero_mean() {
        let targets = [
            mat(&[vec![0.1, 0.9], vec![0.9, -0.3]]),
            mat(&[vec![-0.5, 0.2], vec![0.2, 0.8]]),
        ];
        let m = compute_mtcm(&targets).unwrap();
        let mut acc = Tensor::zeros(vec![2, 2]);
        for t in &targets {
            acc = acc.add(&difference_matrix(t, &m).unwrap()).unwrap();
        }
        assert!(acc.data().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn reconstruct_clamps_to_unit_range() {
        let m = compute_mtcm(&[mat(&[vec![0.9, 0.0], vec![0.0, -0.9]])]).unwrap();
        let pred = mat(&[vec![0.3, 0.0], vec![0.0, -0.3]]);
        let r = reconstruct(&pred, &m).unwrap();
        assert_eq!(r.get2(0, 0), 1.0);
        assert_eq!(r.get2(1, 1), -1.0);
    }

    #[test]
    fn zero_weight_model_predicts_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = TranslationModel::init(3, &[3, 4], &[], &mut rng).unwrap();
        for t in model.tensors_mut() {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        let s = mat(&[
            vec![1.0, 0.5, -0.2],
            vec![0.5, 1.0, 0.1],
            vec![-0.2, 0.1, 1.0],
        ]);
        let m = compute_mtcm(&[mat(&[
            vec![0.0, 0.4, 0.4],
            vec![0.4, 0.0, 0.4],
            vec![0.4, 0.4, 0.0],
        ])])
        .unwrap();
        let pred = model.predict(&s, Some(&m)).unwrap();
        assert_eq!(&pred, m.mean());
    }

    #[test]
    fn prediction_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = TranslationModel::init(4, &[4, 6, 5], &[8], &mut rng).unwrap();
        let mut s = Tensor::rand_uniform(vec![4, 4], -1.0, 1.0, &mut rng);
        let s_sym = symmetrize(&s).unwrap();
        s = s_sym;
        let pred = model.predict_diff(&s).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((pred.get2(i, j) - pred.get2(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_head_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let encoder = Encoder::init(&[3, 4], &mut rng).unwrap();
        let head = MlpHead::init(4 + 3, &[], 2, &mut rng).unwrap();
        assert!(TranslationModel::from_parts(encoder, head, 3).is_err());
    }
}
