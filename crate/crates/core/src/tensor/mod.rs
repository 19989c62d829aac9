//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]; graph construction goes through a [`Tape`] and
//! its [`Var`] handles. Broadcasting is limited to [`Var::add_row`] and
//! [`Var::add_col`]; every other binary op requires equal shapes.
//!
//! `relu` and `abs` use subgradient 0 at exactly 0.

mod checkpoint;
mod dense;
mod gradcheck;
mod param;
mod tape;

pub use checkpoint::{load as load_checkpoint, read_checkpoint, save as save_checkpoint, write_checkpoint};
pub use dense::Tensor;
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use param::{Module, ParamId, Parameter};
pub use tape::{Gradients, Tape, Var};


#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        assert_eq!(i2.matmul(b).unwrap().value().data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn sum_and_softplus() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert_eq!(x.sum().item(), 6.0);
        let z = tape.constant(Tensor::scalar(0.0));
        assert!((z.softplus().item() - (1.0f64 + 1.0).ln()).abs() < 1e-15);
        assert!((z.softplus().item() - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        let err = a.matmul(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        assert!(matches!(a.add(b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn log_domain_error() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn add_row_rejects_richer_broadcasts() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(a.add_row(tape.constant(Tensor::zeros(&[1, 2]))).is_ok());
        assert!(a.add_row(tape.constant(Tensor::zeros(&[2]))).is_ok());
        assert!(a.add_row(tape.constant(Tensor::zeros(&[3, 2]))).is_err());
        assert!(a.add_row(tape.constant(Tensor::zeros(&[1, 3]))).is_err());
    }

    #[test]
    fn square_gradient() {
        let p = Parameter::new("x", Tensor::scalar(3.0));
        let tape = Tape::new();
        let x = tape.param(&p);
        let loss = x.mul(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.for_param(p.id()).unwrap().item(), 6.0);
    }

    #[test]
    fn matmul_sum_gradient_is_transpose() {
        let a = Parameter::new("a", Tensor::eye(2));
        let tape = Tape::new();
        let av = tape.param(&a);
        let b = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        // trace(A·B) = sum((A·B) ⊙ I), so dL/dA = Bᵀ.
        let mask = tape.constant(Tensor::eye(2));
        let loss = av.matmul(b).unwrap().mul(mask).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.for_param(a.id()).unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);

        // Plain sum of the matrix product: every row of the gradient is B's row sums.
        let tape = Tape::new();
        let av = tape.param(&a);
        let b = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let loss = av.matmul(b).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.for_param(a.id()).unwrap().data(), &[3.0, 7.0, 3.0, 7.0]);
        let tape = Tape::new();
        let av = tape.param(&a);
        let b = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let loss = av.mul(b).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.for_param(a.id()).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_twice_doubles_accumulated_grad() {
        let mut p = Parameter::new("w", t(&[2], &[0.5, -1.5]));
        let tape = Tape::new();
        let w = tape.param(&p);
        let loss = w.tanh().square().sum();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        p.accumulate(&g1).unwrap();
        let once = p.grad.clone();
        p.accumulate(&g2).unwrap();
        assert_eq!(p.grad, once.scale(2.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let p = Parameter::new("x", Tensor::scalar(2.0));
        let tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a.id(), b.id());
        let loss = a.add(b).unwrap().add(a.exp()).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!((g.for_param(p.id()).unwrap().item() - (2.0 + 2f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn finite_diff_examples() {
        let p = Parameter::new("x", Tensor::scalar(3.0));
        let g = finite_diff_grad(|q| Ok(q.value.item().powi(2)), &p, 1e-4).unwrap();
        assert!((g.item() - 6.0).abs() < 1e-7);

        let g = finite_diff_grad(|_| Ok(4.2), &p, 1e-4).unwrap();
        assert_eq!(g.item(), 0.0);

        let p = Parameter::new("x", t(&[2], &[-1.0, 2.0]));
        let g = finite_diff_grad(|q| Ok(q.value.data().iter().map(|v| v.max(0.0)).sum()), &p, 1e-5).unwrap();
        assert!((g.data()[0] - 0.0).abs() < 1e-9 && (g.data()[1] - 1.0).abs() < 1e-9);

        assert!(finite_diff_grad(|_| Ok(0.0), &p, 0.0).is_err());
    }

    #[test]
    fn forward_ops_are_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.constant(t(&[2, 2], &[0.1, -0.7, 1.3, 2.2]));
            x.tanh().exp().softplus().matmul(x.sigmoid()).unwrap().sum().item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn log_softmax_rows_normalizes() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 1000.0, 0.0, -5.0]));
        let ls = x.log_softmax_rows().unwrap().value();
        for i in 0..2 {
            let s: f64 = ls.row_slice(i).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(ls.row_slice(1)[0], 0.0);
    }
}
