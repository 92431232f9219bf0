//! Dense matrices, a differentiable tape, and the Adam-trained parameter store.

pub mod array;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;

pub use array::{Array2, Array3};
pub use ops::{bce, conv1d, entropy, softmax_rows, BCE_EPS};
pub use params::{AdamConfig, ParamStore};
pub use tape::{Binding, Tape, Var};

use crate::error::Result;

/// Clamped binary cross entropy of a `1x1` probability node.
pub fn bce_node(tape: &mut Tape, p: Var, target: f64) -> Result<Var> {
    let pc = tape.clamp(p, BCE_EPS, 1.0 - BCE_EPS);
    let term = if target >= 0.5 {
        tape.log(pc)
    } else {
        let neg = tape.scale(pc, -1.0);
        let q = tape.add_scalar(neg, 1.0);
        tape.log(q)
    };
    Ok(tape.scale(term, -1.0))
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2 {
        Array2::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    const TOL: f64 = 1e-4;

    #[test]
    fn sum_of_parameters_has_unit_grads() {
        let mut store = ParamStore::new();
        store
            .insert("a", Array2::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap())
            .unwrap();
        store
            .insert("b", Array2::from_vec(1, 3, vec![5., 6., 7.]).unwrap())
            .unwrap();
        store.insert("unused", Array2::scalar(9.0)).unwrap();
        let mut tape = Tape::new();
        let bind = tape.bind(&store, true);
        let sa = tape.sum_all(bind.get("a").unwrap());
        let sb = tape.sum_all(bind.get("b").unwrap());
        let loss = tape.add(sa, sb).unwrap();
        tape.backward(loss, &bind, &mut store).unwrap();
        assert!(store.grad("a").unwrap().data().iter().all(|&g| g == 1.0));
        assert!(store.grad("b").unwrap().data().iter().all(|&g| g == 1.0));
        assert_eq!(store.grad("unused").unwrap().item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros(2, 2));
        let err = tape.grad(x, &[x]).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn frozen_binding_refuses_backward() {
        let mut store = ParamStore::new();
        store.insert("a", Array2::scalar(1.0)).unwrap();
        let mut tape = Tape::new();
        let bind = tape.bind(&store, false);
        let l = tape.sum_all(bind.get("a").unwrap());
        assert!(tape.backward(l, &bind, &mut store).is_err());
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..6 {
            let l = 2 + trial % 5;
            let c = 1 + trial % 4;
            let x = random(l, c, &mut rng);
            let w = random(3 * c, 2, &mut rng);
            let b = random(1, 2, &mut rng);
            let err = check(
                |t, v| {
                    let y = t.conv1d(v[0], v[1], v[2], 3)?;
                    let s = t.softmax_rows(y);
                    let th = t.tanh(s);
                    let sq = t.mul(th, th)?;
                    Ok(t.sum_all(sq))
                },
                &[x.clone(), w, b],
            )
            .unwrap();
            assert!(err < TOL, "conv/softmax chain rel err {err}");

            let err = check(
                |t, v| {
                    let s = t.sigmoid(v[0]);
                    let m = t.mean_all(s);
                    bce_node(t, m, 1.0)
                },
                std::slice::from_ref(&x),
            )
            .unwrap();
            assert!(err < TOL, "bce rel err {err}");

            let err = check(
                |t, v| {
                    let xt = t.transpose(v[0]);
                    let g = t.matmul(v[0], xt)?;
                    let e = t.exp(g);
                    let lg = t.log(e);
                    let sq = t.mul(lg, lg)?;
                    let s = t.sum_all(sq);
                    let r = t.add_scalar(s, 1.0);
                    let r = t.sqrt(r);
                    Ok(t.recip(r))
                },
                &[x],
            )
            .unwrap();
            assert!(err < TOL, "matmul/exp/log/sqrt rel err {err}");
        }
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(5, 4, &mut rng);
        let table = random(6, 4, &mut rng);
        let err = check(
            |t, v| {
                let a = t.slice_cols(v[0], 1, 2)?;
                let b = t.slice_rows(v[0], 1, 3)?;
                let e = t.gather_rows(v[1], &[0, 3, 3, 5, 1])?;
                let mixed = t.mul(v[0], e)?;
                let c = t.concat_cols(&[a, a])?;
                let cc = t.mul(c, mixed)?;
                let r = t.sum_rows(cc);
                let rb = t.broadcast_rows(r, 3)?;
                let bb = t.mul(rb, b)?;
                let rs = t.sum_cols(bb);
                let k = t.concat_rows(&[rs, rs])?;
                let lr = t.leaky_relu(k, 0.2);
                let bc = t.broadcast_cols(lr, 2)?;
                let sq = t.mul(bc, bc)?;
                Ok(t.sum_all(sq))
            },
            &[x, table],
        )
        .unwrap();
        assert!(err < TOL, "structural ops rel err {err}");
    }

    #[test]
    fn second_order_gradient_of_input_gradient_norm() {
        // loss = || d/dx sum(tanh(x W)) ||^2, differentiated w.r.t. W.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(4, 3, &mut rng);
        let w = random(3, 2, &mut rng);
        let err = check(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let a = t.tanh(h);
                let s = t.sum_all(a);
                let g = t.grad(s, &[v[0]])?[0];
                let sq = t.mul(g, g)?;
                Ok(t.sum_all(sq))
            },
            &[x, w],
        )
        .unwrap();
        assert!(err < TOL, "double backprop rel err {err}");
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(6, 3, &mut rng);
        let w = random(9, 4, &mut rng);
        let b = random(1, 4, &mut rng);
        let run = || {
            super::gradcheck::analytic_grad(
                &|t: &mut Tape, v: &[Var]| {
                    let y = t.conv1d(v[0], v[1], v[2], 3)?;
                    let y = t.sigmoid(y);
                    Ok(t.sum_all(y))
                },
                &[x.clone(), w.clone(), b.clone()],
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        for (p, q) in a.iter().zip(&b) {
            let pb: Vec<u64> = p.data().iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u64> = q.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(pb, qb);
        }
    }
}
