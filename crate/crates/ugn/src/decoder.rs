//! Pairwise intermediate-matrix decoder: latent vectors become a
//! one-channel square image which a small conv/max-pool/linear stack maps
//! to raw logits. An elementwise-product MLP head is provided as an
//! ablation baseline.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::encoder::glorot_uniform;
use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// Pairwise image for an edge (u, v): `M[i][j] = l_v[i] * l_u[j]`.
pub fn edge_matrix<'t>(l_u: Var<'t>, l_v: Var<'t>) -> Result<Var<'t>> {
    l_v.outer(l_u)
}

/// Single-node image: the symmetric outer product of `l_u` with itself.
pub fn node_matrix(l_u: Var<'_>) -> Result<Var<'_>> {
    l_u.outer(l_u)
}

/// Node image over the latent extended with auxiliary structure values
/// (inverse distances, bond codes). Auxiliary entries must lie in [0, 1].
pub fn augmented_matrix<'t>(tape: &'t Tape, l: Var<'t>, aux: &Tensor) -> Result<Var<'t>> {
    if let Some(bad) = aux.data().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(UgnError::InvalidArgument(format!(
            "auxiliary entry {bad} outside [0,1]"
        )));
    }
    let extended = l.concat(tape.leaf(aux.clone()))?;
    extended.outer(extended)
}

/// Pairwise image for an edge whose endpoints carry auxiliary vectors.
pub fn augmented_edge_matrix<'t>(
    tape: &'t Tape,
    l_u: Var<'t>,
    aux_u: &Tensor,
    l_v: Var<'t>,
    aux_v: &Tensor,
) -> Result<Var<'t>> {
    for aux in [aux_u, aux_v] {
        if let Some(bad) = aux.data().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
            return Err(UgnError::InvalidArgument(format!(
                "auxiliary entry {bad} outside [0,1]"
            )));
        }
    }
    let eu = l_u.concat(tape.leaf(aux_u.clone()))?;
    let ev = l_v.concat(tape.leaf(aux_v.clone()))?;
    ev.outer(eu)
}

#[derive(Debug, Clone)]
pub struct ConvStage {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

#[derive(Debug, Clone)]
pub struct LinearStage {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Conv/pool/linear decoder over a `d x d` intermediate matrix.
#[derive(Debug, Clone)]
pub struct Decoder {
    input_side: usize,
    conv: Vec<ConvStage>,
    linear: Vec<LinearStage>,
}

fn conv_out_side(side: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if side + 2 * padding < kernel {
        return Err(UgnError::Config(format!(
            "conv kernel {kernel} larger than padded side {}",
            side + 2 * padding
        )));
    }
    Ok((side + 2 * padding - kernel) / stride + 1)
}

impl Decoder {
    /// Build a decoder for `input_side x input_side` images.
    ///
    /// `channels` lists the output channels of each conv stage (3x3
    /// kernels, stride 1, padding 1, 2x2 max-pool); `hidden` the widths of
    /// the linear layers before the final `classes`-wide output. The
    /// flattened conv output width is derived from the shape chain, so a
    /// chain that collapses below the pool window fails here.
    pub fn init(
        input_side: usize,
        channels: &[usize],
        hidden: &[usize],
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(UgnError::Config("decoder needs at least one conv stage".into()));
        }
        if classes == 0 {
            return Err(UgnError::Config("decoder needs at least one class".into()));
        }
        let (kernel, stride, padding, pool) = (3usize, 1usize, 1usize, 2usize);
        let mut conv = Vec::with_capacity(channels.len());
        let mut side = input_side;
        let mut cin = 1usize;
        for &cout in channels {
            side = conv_out_side(side, kernel, stride, padding)?;
            if side < pool {
                return Err(UgnError::Config(format!(
                    "pool window {pool} exceeds conv output side {side}; \
                     input side {input_side} supports fewer stages"
                )));
            }
            side = (side - pool) / pool + 1;
            let fan_in = cin * kernel * kernel;
            // glorot_uniform yields [fan_in, cout]; reorder to kernel layout
            let kernels = glorot_uniform(fan_in, cout, rng);
            let mut reordered = Tensor::zeros(vec![cout, cin, kernel, kernel]);
            for o in 0..cout {
                for f in 0..fan_in {
                    reordered.data_mut()[o * fan_in + f] = kernels.data()[f * cout + o];
                }
            }
            conv.push(ConvStage {
                kernels: reordered,
                bias: Tensor::zeros(vec![cout]),
                stride,
                padding,
                pool_window: pool,
                pool_stride: pool,
            });
            cin = cout;
        }
        let mut widths = vec![cin * side * side];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let linear = widths
            .windows(2)
            .map(|w| LinearStage {
                weight: glorot_uniform(w[0], w[1], rng),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        Ok(Decoder {
            input_side,
            conv,
            linear,
        })
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn classes(&self) -> usize {
        let last = &self.linear[self.linear.len() - 1];
        last.weight.shape()[1]
    }

    pub fn conv_stages(&self) -> &[ConvStage] {
        &self.conv
    }

    pub fn linear_stages(&self) -> &[LinearStage] {
        &self.linear
    }

    /// Flat parameter order: per conv stage kernels then bias, then per
    /// linear stage weight then bias. `register` and `forward` follow the
    /// same order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for s in &self.conv {
            out.push(&s.kernels);
            out.push(&s.bias);
        }
        for l in &self.linear {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for s in &mut self.conv {
            out.push(&mut s.kernels);
            out.push(&mut s.bias);
        }
        for l in &mut self.linear {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().iter().map(|t| tape.param((*t).clone())).collect()
    }

    /// Decode one intermediate matrix (a 2-D `d x d` var) to raw logits.
    pub fn forward<'t>(
        &self,
        m: Var<'t>,
        param_vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let sh = m.shape();
        if sh != [self.input_side, self.input_side] {
            return Err(UgnError::shape(
                "decoder input",
                &sh,
                &[self.input_side, self.input_side],
            ));
        }
        if param_vars.len() != 2 * (self.conv.len() + self.linear.len()) {
            return Err(UgnError::Config(format!(
                "expected {} decoder param vars, got {}",
                2 * (self.conv.len() + self.linear.len()),
                param_vars.len()
            )));
        }
        let mut x = m.reshape(vec![1, self.input_side, self.input_side])?;
        let mut p = 0usize;
        for stage in &self.conv {
            let k = param_vars[p];
            let b = param_vars[p + 1];
            p += 2;
            x = x
                .conv2d(k, Some(b), stage.stride, stage.padding)?
                .maxpool2d(stage.pool_window, stage.pool_stride)?
                .relu();
        }
        let flat = x.shape().iter().product::<usize>();
        let mut h = x.reshape(vec![1, flat])?;
        for (i, _) in self.linear.iter().enumerate() {
            let w = param_vars[p];
            let b = param_vars[p + 1];
            p += 2;
            h = h.matmul(w)?.add_row_bias(b)?;
            if i + 1 < self.linear.len() {
                h = h.relu();
            }
        }
        h.reshape(vec![self.classes()])
    }
}

/// Ablation head: linear layers over a latent vector or an elementwise
/// edge product, with no intermediate matrix.
#[derive(Debug, Clone)]
pub struct MlpHead {
    linear: Vec<LinearStage>,
}

impl MlpHead {
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || classes == 0 {
            return Err(UgnError::Config("mlp head dims must be positive".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let linear = widths
            .windows(2)
            .map(|w| LinearStage {
                weight: glorot_uniform(w[0], w[1], rng),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        Ok(MlpHead { linear })
    }

    pub fn from_stages(linear: Vec<LinearStage>) -> Result<Self> {
        if linear.is_empty() {
            return Err(UgnError::Config("mlp head has no layers".into()));
        }
        Ok(MlpHead { linear })
    }

    pub fn input_dim(&self) -> usize {
        self.linear[0].weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.linear[self.linear.len() - 1].weight.shape()[1]
    }

    pub fn linear_stages(&self) -> &[LinearStage] {
        &self.linear
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.linear
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.linear {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().iter().map(|t| tape.param((*t).clone())).collect()
    }

    /// Logits for a node (`l_v = None`) or an edge (elementwise product of
    /// the two latents).
    pub fn forward<'t>(
        &self,
        l_u: Var<'t>,
        l_v: Option<Var<'t>>,
        param_vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let input = match l_v {
            Some(v) => l_u.mul(v)?,
            None => l_u,
        };
        let n = input.shape().iter().product::<usize>();
        if n != self.input_dim() {
            return Err(UgnError::shape("mlp head input", &[n], &[self.input_dim()]));
        }
        let mut h = input.reshape(vec![1, n])?;
        for (i, _) in self.linear.iter().enumerate() {
            let w = param_vars[2 * i];
            let b = param_vars[2 * i + 1];
            h = h.matmul(w)?.add_row_bias(b)?;
            if i + 1 < self.linear.len() {
                h = h.relu();
            }
        }
        h.reshape(vec![self.classes()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn edge_matrix_values() {
        let tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let v = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let m = edge_matrix(u, v).unwrap();
        assert_eq!(m.value().data(), &[3.0, 6.0, 4.0, 8.0]);
    }

    #[test]
    fn edge_matrix_transpose_symmetry() {
        let tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let v = tape.leaf(Tensor::vector(vec![3.0, 4.0, -1.0]));
        let muv = edge_matrix(u, v).unwrap().value();
        let mvu = edge_matrix(v, u).unwrap().value();
        assert_eq!(muv.transpose2().unwrap(), mvu);
    }

    #[test]
    fn node_matrix_values() {
        let tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let m = node_matrix(u).unwrap();
        assert_eq!(m.value().data(), &[1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn node_matrix_basis_vector() {
        let tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let m = node_matrix(u).unwrap().value();
        assert_eq!(m.get2(0, 0), 1.0);
        assert_eq!(m.data().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn augmented_matrix_small_example() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::vector(vec![1.0]));
        let m = augmented_matrix(&tape, l, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(m.value().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn augmented_matrix_rejects_out_of_range_aux() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::vector(vec![1.0]));
        assert!(augmented_matrix(&tape, l, &Tensor::vector(vec![1.5])).is_err());
    }

    #[test]
    fn augmented_matrix_block_structure() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::vector(vec![2.0, 3.0]));
        let aux = Tensor::vector(vec![0.5]);
        let m = augmented_matrix(&tape, l, &aux).unwrap().value();
        assert_eq!(m.get2(0, 0), 4.0);
        assert_eq!(m.get2(0, 1), 6.0);
        assert_eq!(m.get2(2, 2), 0.25);
        assert_eq!(m.get2(0, 2), 1.0);
    }

    #[test]
    fn decoder_output_width_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dec = Decoder::init(16, &[8, 16, 32], &[64, 32], 4, &mut rng).unwrap();
        let tape = Tape::new();
        let vars = dec.register(&tape);
        let m = tape.leaf(Tensor::full(vec![16, 16], 0.3));
        let y1 = dec.forward(m, &vars).unwrap().value();
        let y2 = dec.forward(m, &vars).unwrap().value();
        assert_eq!(y1.shape(), &[4]);
        assert_eq!(y1, y2);
    }

    #[test]
    fn decoder_zero_params_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut dec = Decoder::init(8, &[4], &[], 3, &mut rng).unwrap();
        for t in dec.tensors_mut() {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        let tape = Tape::new();
        let vars = dec.register(&tape);
        let m = tape.leaf(Tensor::full(vec![8, 8], 1.0));
        let y = dec.forward(m, &vars).unwrap().value();
        assert!(y.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn decoder_rejects_collapsing_shape_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(Decoder::init(2, &[4, 8, 16], &[], 2, &mut rng).is_err());
    }

    #[test]
    fn mlp_edge_input_is_elementwise_product() {
        let head = MlpHead::from_stages(vec![LinearStage {
            weight: Tensor::identity(2),
            bias: Tensor::zeros(vec![2]),
        }])
        .unwrap();
        let tape = Tape::new();
        let vars = head.register(&tape);
        let u = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let v = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = head.forward(u, Some(v), &vars).unwrap().value();
        assert_eq!(y.data(), &[3.0, 8.0]);
    }

    #[test]
    fn mlp_node_input_is_latent_itself() {
        let head = MlpHead::from_stages(vec![LinearStage {
            weight: Tensor::identity(3),
            bias: Tensor::zeros(vec![3]),
        }])
        .unwrap();
        let tape = Tape::new();
        let vars = head.register(&tape);
        let u = tape.leaf(Tensor::vector(vec![5.0, -1.0, 0.0]));
        let y = head.forward(u, None, &vars).unwrap().value();
        assert_eq!(y.data(), &[5.0, -1.0, 0.0]);
    }
}
