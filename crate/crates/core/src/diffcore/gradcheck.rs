//! Central finite-difference verification of reverse-mode gradients.

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Largest |analytic| entry, useful for spotting vacuous passes.
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the tape gradient of `loss_fn` with central differences
/// `(f(θ+eps) - f(θ-eps)) / 2eps` for every entry of every parameter.
///
/// `loss_fn` must be a deterministic function of the store (freeze any
/// noise by reseeding inside the closure). Parameter values are restored
/// and gradients are left holding the analytic result.
pub fn finite_diff_check<F>(store: &mut ParamStore, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    check_impl(store, eps, loss_fn, |_| {})
}

/// Same as [`finite_diff_check`], but `tamper` may alter the analytic
/// gradients before comparison. Exists for negative-control tests.
#[doc(hidden)]
pub fn finite_diff_check_tampered<F, T>(store: &mut ParamStore, eps: f64, loss_fn: F, tamper: T) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
    T: FnOnce(&mut ParamStore),
{
    check_impl(store, eps, loss_fn, tamper)
}

fn eval<F>(store: &ParamStore, loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

fn check_impl<F, T>(store: &mut ParamStore, eps: f64, mut loss_fn: F, tamper: T) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
    T: FnOnce(&mut ParamStore),
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        tape.backward(loss, store)?;
    }
    tamper(store);

    let ids: Vec<ParamId> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = store.get(id).grad.clone();
        let mut worst = 0.0f64;
        for k in 0..analytic.len() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(store, &mut loss_fn);
            store.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(store, &mut loss_fn);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: worst,
            max_abs_grad: analytic.data().iter().fold(0.0, |m, g| m.max(g.abs())),
        });
    }
    Ok(GradCheckReport { params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::nn::{mse_loss, Activation, Mlp, MlpSpec};
    use crate::diffcore::rng::Rng;
    use crate::diffcore::tensor::Tensor;

    const TOL: f64 = 1e-6;

    fn store_of(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut s = ParamStore::new();
        for &(name, r, c) in shapes {
            s.add(name, rng.standard_normal(&[r, c])).unwrap();
        }
        s
    }

    fn check(store: &mut ParamStore, f: impl FnMut(&ParamStore, &mut Tape) -> Result<Var>) -> f64 {
        let report = finite_diff_check(store, DEFAULT_EPS, f).unwrap();
        report.max_rel_error()
    }

    fn p(tape: &mut Tape, s: &ParamStore, name: &str) -> Var {
        tape.param(s, s.id(name).unwrap()).unwrap()
    }

    #[test]
    fn sum_of_linear_map() {
        // loss = sum(W x), x = [1, 1]: dloss/dW = x^T 1 = all ones
        let mut s = store_of(&[("w", 2, 3)], 0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 1.0])).unwrap();
        let w = p(&mut tape, &s, "w");
        let y = tape.matmul(x, w).unwrap();
        let l = tape.sum(y);
        tape.backward(l, &mut s).unwrap();
        assert!(s.get(s.id("w").unwrap()).grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut s = store_of(&[("used", 1, 2), ("unused", 2, 2)], 1);
        let mut tape = Tape::new();
        let u = p(&mut tape, &s, "used");
        let l = tape.sum(u);
        tape.backward(l, &mut s).unwrap();
        assert!(s.get(s.id("unused").unwrap()).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut s = store_of(&[("w", 1, 3)], 2);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = p(&mut tape, &s, "w");
            let l = tape.sum(w);
            tape.backward(l, &mut s).unwrap();
        }
        assert!(s.get(s.id("w").unwrap()).grad.data().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let mut s = store_of(&[("w", 2, 2)], 3);
        let mut tape = Tape::new();
        let w = p(&mut tape, &s, "w");
        assert!(matches!(tape.backward(w, &mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut s = store_of(&[("w", 2, 2)], 4);
        let err = check(&mut s, |_, t| t.constant(Tensor::scalar(3.0)));
        assert_eq!(err, 0.0);
    }

    #[test]
    fn least_squares_toy() {
        let mut rng = Rng::new(5);
        let x = rng.standard_normal(&[6, 3]);
        let y = rng.standard_normal(&[6, 1]);
        let mut s = store_of(&[("w", 3, 1), ("b", 1, 1)], 6);
        let err = check(&mut s, |s, t| {
            let xv = t.constant(x.clone())?;
            let yv = t.constant(y.clone())?;
            let w = p(t, s, "w");
            let b = p(t, s, "b");
            let xw = t.matmul(xv, w)?;
            let pred = t.add_row(xw, b)?;
            mse_loss(t, pred, yv)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn mse_of_sigmoid_layer() {
        let mut rng = Rng::new(7);
        let x = rng.standard_normal(&[4, 3]);
        let target = Tensor::matrix(4, 1, vec![0.2, 0.9, 0.5, 0.1]).unwrap();
        let mut s = ParamStore::new();
        let spec = MlpSpec::new(vec![3, 1], Activation::Sigmoid, Activation::Sigmoid).unwrap();
        let mlp = Mlp::new(&mut s, "m", spec, &mut rng).unwrap();
        let err = check(&mut s, |s, t| {
            let xv = t.constant(x.clone())?;
            let tv = t.constant(target.clone())?;
            let y = mlp.forward(t, s, xv)?;
            mse_loss(t, y, tv)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn elementwise_and_reduction_ops() {
        let mut s = store_of(&[("a", 3, 4), ("b", 3, 4), ("r", 1, 4)], 8);
        let err = check(&mut s, |s, t| {
            let a = p(t, s, "a");
            let b = p(t, s, "b");
            let r = p(t, s, "r");
            let m = t.mul(a, b)?;
            let d = t.sub(m, b)?;
            let e = t.exp(d);
            let sg = t.sigmoid(a);
            let sum = t.add(e, sg)?;
            let sc = t.scale(sum, 0.3);
            let sh = t.add_scalar(sc, -1.0);
            let br = t.add_row(sh, r)?;
            let me = t.mean(br);
            let su = t.sum(e);
            t.add(me, su)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::matrix(2, 2, vec![0.7, -0.4, 1.3, -2.0]).unwrap()).unwrap();
        let err = check(&mut s, |s, t| {
            let a = p(t, s, "a");
            let r = t.relu(a);
            let sq = t.mul(r, r)?;
            Ok(t.sum(sq))
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn structural_ops() {
        let mut s = store_of(&[("a", 4, 3), ("b", 2, 3), ("c", 4, 2)], 9);
        let err = check(&mut s, |s, t| {
            let a = p(t, s, "a");
            let b = p(t, s, "b");
            let c = p(t, s, "c");
            let rows = t.concat_rows(&[a, b])?;
            let g = t.gather_rows(rows, vec![5, 0, 0, 3])?;
            let cols = t.concat_cols(&[g, c])?;
            let sl = t.slice_cols(cols, 1, 4)?;
            let sr = t.slice_rows(sl, 1, 3)?;
            let re = t.reshape(sr, 3, 2)?;
            let w = t.mul(re, re)?;
            let e = t.exp(cols);
            let se = t.sum(e);
            let sw = t.sum(w);
            t.add(se, sw)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn matmul_both_sides() {
        let mut s = store_of(&[("a", 3, 4), ("b", 4, 2)], 10);
        let err = check(&mut s, |s, t| {
            let a = p(t, s, "a");
            let b = p(t, s, "b");
            let m = t.matmul(a, b)?;
            let sg = t.sigmoid(m);
            Ok(t.sum(sg))
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn sym_normalize_and_block_mul() {
        let mut rng = Rng::new(11);
        let mut s = ParamStore::new();
        let m: Vec<f64> = (0..9).map(|_| rng.uniform(0.2, 1.0)).collect();
        s.add("m", Tensor::matrix(3, 3, m).unwrap()).unwrap();
        s.add("h", rng.standard_normal(&[6, 2])).unwrap();
        let err = check(&mut s, |s, t| {
            let m = p(t, s, "m");
            let h = p(t, s, "h");
            let a = t.sym_normalize(m)?;
            let y = t.block_left_mul(a, h)?;
            let sg = t.sigmoid(y);
            Ok(t.sum(sg))
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn scatter_and_losses() {
        let mut rng = Rng::new(12);
        let mut s = ParamStore::new();
        s.add("x", rng.standard_normal(&[1, 3])).unwrap();
        s.add("q", rng.standard_normal(&[2, 2])).unwrap();
        let labels = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let target = Tensor::matrix(2, 2, vec![0.3, 0.1, 0.7, 0.2]).unwrap();
        let err = check(&mut s, |s, t| {
            let x = p(t, s, "x");
            let q = p(t, s, "q");
            let sc = t.scatter(x, 2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![(0, 1, 0.5), (1, 1, 0.5), (2, 2, 2.0)])?;
            let z = t.add(sc, q)?;
            let pr = t.sigmoid(z);
            let b = t.bce(pr, &labels)?;
            let tv = t.constant(target.clone())?;
            let m = t.mse(pr, tv)?;
            t.add(b, m)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn tampered_gradient_is_detected() {
        let mut s = store_of(&[("w", 2, 2)], 13);
        let report = finite_diff_check_tampered(
            &mut s,
            DEFAULT_EPS,
            |s, t| {
                let w = p(t, s, "w");
                let e = t.exp(w);
                Ok(t.sum(e))
            },
            |s| s.get_mut(ParamId(0)).grad.data_mut()[0] += 0.1,
        )
        .unwrap();
        assert!(report.max_rel_error() > 1e-3);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mut s = store_of(&[("w", 1, 1)], 14);
        let r = finite_diff_check(&mut s, DEFAULT_EPS, |_, t| t.constant(Tensor::scalar(f64::NAN)));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
