//! Unstacked DeepONet (one branch) and MIONet (several branches).
//!
//! Every branch and the trunk end in a linear layer of width `p`; the
//! prediction at coordinate `x` for inputs `v₁ … v_m` is
//!
//! ```text
//! G(v)(x) = b0 + Σ_k  Π_i branch_i(v_i)_k · trunk(x)_k
//! ```
//!
//! A batch of `B` input tuples and `P` coordinates gives a `B × P` matrix.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use crate::mlp::{Activation, Mlp};
use subdiff::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNet {
    pub branches: Vec<Mlp>,
    pub trunk: Mlp,
    pub b0: f64,
}

/// Intermediate values of one forward pass.
pub struct NetTape {
    branch_tapes: Vec<crate::mlp::MlpTape>,
    trunk_tape: crate::mlp::MlpTape,
    product: Array2<f64>,
    pub prediction: Array2<f64>,
}

impl OperatorNet {
    pub fn new(
        branch_widths: &[Vec<usize>],
        trunk_widths: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if branch_widths.is_empty() {
            return Err(Error::Shape(
                "operator net needs at least one branch".into(),
            ));
        }
        let p = *trunk_widths
            .last()
            .ok_or_else(|| Error::Shape("empty trunk widths".into()))?;
        if branch_widths.iter().any(|w| w.last() != Some(&p)) {
            return Err(Error::Shape(format!(
                "branch outputs {:?} must all equal the trunk output {p}",
                branch_widths.iter().map(|w| w.last()).collect::<Vec<_>>()
            )));
        }
        let branches = branch_widths
            .iter()
            .map(|w| Mlp::new(w, activation, rng))
            .collect::<Result<Vec<_>>>()?;
        let trunk = Mlp::new(trunk_widths, activation, rng)?;
        Ok(Self {
            branches,
            trunk,
            b0: 0.0,
        })
    }

    /// Same architecture, every parameter zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            branches: self
                .branches
                .iter()
                .map(|b| Mlp::zeros(&b.widths(), b.activation))
                .collect(),
            trunk: Mlp::zeros(&self.trunk.widths(), self.trunk.activation),
            b0: 0.0,
        }
    }

    pub fn p(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(Mlp::param_count).sum::<usize>() + self.trunk.param_count() + 1
    }

    /// Parameters in checkpoint order: each branch, then the trunk, then `b0`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.branches {
            b.write_params(&mut out);
        }
        self.trunk.write_params(&mut out);
        out.push(self.b0);
        out
    }

    pub fn set_flat(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters given, network has {}",
                src.len(),
                self.param_count()
            )));
        }
        let mut k = 0;
        for b in &mut self.branches {
            k += b.read_params(&src[k..]);
        }
        k += self.trunk.read_params(&src[k..]);
        self.b0 = src[k];
        Ok(())
    }

    fn check_branch_inputs(&self, inputs: &[ArrayView2<f64>]) -> Result<usize> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "{} branch inputs for {} branches",
                inputs.len(),
                self.branches.len()
            )));
        }
        let rows = inputs[0].nrows();
        if inputs.iter().any(|x| x.nrows() != rows) {
            return Err(Error::Shape("branch inputs disagree on batch size".into()));
        }
        Ok(rows)
    }

    /// `B × p` elementwise product of the branch outputs.
    pub fn branch_product(&self, inputs: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        self.check_branch_inputs(inputs)?;
        let mut prod = self.branches[0].forward(inputs[0])?;
        for (b, x) in self.branches.iter().zip(inputs).skip(1) {
            prod *= &b.forward(*x)?;
        }
        Ok(prod)
    }

    /// `P × p` trunk features.
    pub fn trunk_features(&self, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.trunk.forward(coords)
    }

    pub fn forward(
        &self,
        inputs: &[ArrayView2<f64>],
        coords: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let prod = self.branch_product(inputs)?;
        let trunk = self.trunk_features(coords)?;
        let mut out = prod.dot(&trunk.t());
        out += self.b0;
        Ok(out)
    }

    pub fn forward_tape(
        &self,
        inputs: &[ArrayView2<f64>],
        coords: ArrayView2<f64>,
    ) -> Result<NetTape> {
        self.check_branch_inputs(inputs)?;
        let branch_tapes = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(b, x)| b.forward_tape(*x))
            .collect::<Result<Vec<_>>>()?;
        let mut product = branch_tapes[0].output().clone();
        for t in &branch_tapes[1..] {
            product *= t.output();
        }
        let trunk_tape = self.trunk.forward_tape(coords)?;
        let mut prediction = product.dot(&trunk_tape.output().t());
        prediction += self.b0;
        Ok(NetTape {
            branch_tapes,
            trunk_tape,
            product,
            prediction,
        })
    }

    /// Mean squared error `1/(BP) ΣΣ |G(v_j)(x_i) − u_j(x_i)|²`.
    pub fn loss(
        &self,
        inputs: &[ArrayView2<f64>],
        coords: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<f64> {
        let pred = self.forward(inputs, coords)?;
        check_targets(&pred, &targets)?;
        Ok(mse(&pred, &targets))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        inputs: &[ArrayView2<f64>],
        coords: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, OperatorNet)> {
        let tape = self.forward_tape(inputs, coords)?;
        check_targets(&tape.prediction, &targets)?;
        let loss = mse(&tape.prediction, &targets);
        let n = targets.len() as f64;
        // dL/dpred = 2 (pred − u) / (BP)
        let mut g = tape.prediction.clone();
        Zip::from(&mut g)
            .and(&targets)
            .for_each(|g, &u| *g = 2.0 * (*g - u) / n);

        let mut grad = self.zeros_like();
        grad.b0 = g.sum();
        let trunk_out = tape.trunk_tape.output();
        let d_trunk = g.t().dot(&tape.product);
        let d_product = g.dot(trunk_out);
        self.trunk
            .backward(&tape.trunk_tape, d_trunk, &mut grad.trunk);
        for (i, branch) in self.branches.iter().enumerate() {
            let mut d = d_product.clone();
            for (j, other) in tape.branch_tapes.iter().enumerate() {
                if j != i {
                    d *= other.output();
                }
            }
            branch.backward(&tape.branch_tapes[i], d, &mut grad.branches[i]);
        }
        Ok((loss, grad))
    }
}

fn check_targets(pred: &Array2<f64>, targets: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "targets {:?} against predictions {:?}",
            targets.dim(),
            pred.dim()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    Ok(())
}

fn mse(pred: &Array2<f64>, targets: &ArrayView2<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(pred)
        .and(targets)
        .for_each(|&p, &u| acc += (p - u) * (p - u));
    acc / targets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};
    use subdiff::randfield::seeded_rng;

    /// A single linear layer `in → p` whose output is exactly `value` for any
    /// input.
    fn constant_mlp(input: usize, value: &[f64]) -> Mlp {
        let mut m = Mlp::zeros(&[input, value.len()], Activation::Tanh);
        m.layers[0].b = Array1::from(value.to_vec());
        m
    }

    #[test]
    fn one_hot_aggregation() {
        let net = OperatorNet {
            branches: vec![constant_mlp(2, &[1.0, 0.0, 0.0])],
            trunk: constant_mlp(3, &[1.0, 0.0, 0.0]),
            b0: 0.0,
        };
        let out = net
            .forward(&[array![[0.3, 0.1]].view()], array![[0.1, 0.2, 0.3]].view())
            .unwrap();
        assert_eq!(out, array![[1.0]]);
    }

    #[test]
    fn two_branch_sum_of_ones() {
        let p = 7;
        let net = OperatorNet {
            branches: vec![
                constant_mlp(1, &vec![1.0; p]),
                constant_mlp(4, &vec![1.0; p]),
            ],
            trunk: constant_mlp(2, &vec![1.0; p]),
            b0: 0.0,
        };
        let out = net
            .forward(
                &[array![[0.2], [0.9]].view(), Array2::zeros((2, 4)).view()],
                array![[0.0, 0.0], [0.5, 1.0], [1.0, 1.0]].view(),
            )
            .unwrap();
        assert!(out.iter().all(|&v| v == p as f64));
        assert_eq!(out.dim(), (2, 3));
    }

    #[test]
    fn zero_branches_give_the_bias() {
        let net = OperatorNet {
            branches: vec![constant_mlp(3, &[0.0; 4])],
            trunk: constant_mlp(2, &[1.0, -2.0, 3.0, 4.0]),
            b0: 1.25,
        };
        let coords = array![[0.1, 0.1], [0.9, 0.3]];
        let out = net
            .forward(&[array![[1.0, 2.0, 3.0]].view()], coords.view())
            .unwrap();
        assert!(out.iter().all(|&v| v == 1.25));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut rng = seeded_rng(3, 0);
        assert!(
            OperatorNet::new(&[vec![2, 4, 5]], &[2, 4, 6], Activation::Tanh, &mut rng).is_err()
        );
        let net =
            OperatorNet::new(&[vec![2, 4, 5]], &[2, 4, 5], Activation::Tanh, &mut rng).unwrap();
        let coords = array![[0.0, 0.0]];
        assert!(net.forward(&[array![[1.0]].view()], coords.view()).is_err());
        assert!(net.forward(&[], coords.view()).is_err());
        assert!(net
            .loss(
                &[array![[1.0, 2.0]].view()],
                coords.view(),
                array![[1.0, 2.0]].view()
            )
            .is_err());
    }

    #[test]
    fn loss_examples() {
        let net = OperatorNet {
            branches: vec![constant_mlp(1, &[0.0])],
            trunk: constant_mlp(1, &[0.0]),
            b0: 3.0,
        };
        let x = array![[0.0]];
        assert_eq!(
            net.loss(&[x.view()], x.view(), array![[3.0]].view())
                .unwrap(),
            0.0
        );
        assert_eq!(
            net.loss(&[x.view()], x.view(), array![[1.0]].view())
                .unwrap(),
            4.0
        );
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = seeded_rng(4, 0);
        let mut net = OperatorNet::new(
            &[vec![1, 3, 4], vec![5, 4]],
            &[3, 6, 4],
            Activation::Tanh,
            &mut rng,
        )
        .unwrap();
        net.b0 = -0.5;
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.param_count());
        let mut other = net.zeros_like();
        other.set_flat(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.set_flat(&flat[1..]).is_err());
    }
}
