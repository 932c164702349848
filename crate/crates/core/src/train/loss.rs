//! Training objectives on adversarial batches. The comparison models (WA
//! model, standard-trained teacher) enter as constant logits, so gradients
//! reach only the online parameters.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Real, Tensor};

/// `CE(f_θ(x), y) + λ·KL(f_θ(x) ‖ f_φ(x))`. With `λ = 0` the CE node itself
/// is returned, so the value is bitwise the plain CE.
pub fn boat_objective<T: Real>(tape: &mut Tape<T>, logits: Var, wa_logits: Option<Var>, y: &[usize], lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("boat lambda must be >= 0, got {lambda}")));
    }
    let ce = tape.softmax_cross_entropy(logits, y)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let q = wa_logits.ok_or_else(|| Error::invalid("boat loss with lambda > 0 needs WA logits"))?;
    let kl = tape.kl_divergence(logits, q)?;
    let kl = tape.scale(kl, T::of(lambda));
    tape.add(ce, kl)
}

/// `(1 − λ_ST)·BoAT + λ_ST·KL(f_θ(x) ‖ f_ST(x))`.
pub fn kd_objective<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    wa_logits: Option<Var>,
    teacher_logits: Var,
    y: &[usize],
    lambda: f64,
    lambda_st: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda_st) {
        return Err(Error::invalid(format!("lambda_st must lie in [0, 1], got {lambda_st}")));
    }
    if lambda_st == 1.0 {
        return tape.kl_divergence(logits, teacher_logits);
    }
    let boat = boat_objective(tape, logits, wa_logits, y, lambda)?;
    if lambda_st == 0.0 {
        return Ok(boat);
    }
    let kd = tape.kl_divergence(logits, teacher_logits)?;
    let a = tape.scale(boat, T::of(1.0 - lambda_st));
    let b = tape.scale(kd, T::of(lambda_st));
    tape.add(a, b)
}

/// Value and parameter gradient of the BoAT loss for `model` against the
/// constant `wa` model on `x_adv`.
pub fn boat_loss<T: Real>(model: &Model<T>, wa: &Model<T>, x_adv: &Tensor<T>, y: &[usize], lambda: f64) -> Result<(f64, Vec<T>)> {
    let mut tape = Tape::new();
    let x = tape.constant(x_adv.clone());
    let (logits, params) = model.forward(&mut tape, x, true)?;
    let q = if lambda > 0.0 {
        Some(tape.constant(wa.logits(x_adv)?))
    } else {
        None
    };
    let loss = boat_objective(&mut tape, logits, q, y, lambda)?;
    let value = tape.value(loss).item()?.as_f64();
    tape.backward(loss)?;
    Ok((value, model.gather_grads(&tape, &params)))
}

/// Value and parameter gradient of the KD-blended loss. A missing teacher is
/// an error.
pub fn rebat_kd_loss<T: Real>(
    model: &Model<T>,
    wa: &Model<T>,
    teacher: Option<&Model<T>>,
    x_adv: &Tensor<T>,
    y: &[usize],
    lambda: f64,
    lambda_st: f64,
) -> Result<(f64, Vec<T>)> {
    let teacher = teacher.ok_or_else(|| Error::invalid("knowledge distillation needs a teacher model"))?;
    let mut tape = Tape::new();
    let x = tape.constant(x_adv.clone());
    let (logits, params) = model.forward(&mut tape, x, true)?;
    let q = if lambda > 0.0 {
        Some(tape.constant(wa.logits(x_adv)?))
    } else {
        None
    };
    let t = tape.constant(teacher.logits(x_adv)?);
    let loss = kd_objective(&mut tape, logits, q, t, y, lambda, lambda_st)?;
    let value = tape.value(loss).item()?.as_f64();
    tape.backward(loss)?;
    Ok((value, model.gather_grads(&tape, &params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn setup() -> (Model<f64>, Model<f64>, Model<f64>, Tensor<f64>, Vec<usize>) {
        let spec = ModelSpec::mlp([1, 2, 2], vec![4], 3);
        let x = Tensor::from_f64(&[3, 1, 2, 2], &(0..12).map(|i| (i as f64 * 0.37) % 1.0).collect::<Vec<_>>()).unwrap();
        (
            Model::init(spec.clone(), 1).unwrap(),
            Model::init(spec.clone(), 2).unwrap(),
            Model::init(spec, 3).unwrap(),
            x,
            vec![0, 2, 1],
        )
    }

    fn ce(logits: &[f64], y: &[usize], c: usize) -> f64 {
        crate::attack::per_example_ce(logits, y, c).iter().sum::<f64>() / y.len() as f64
    }

    fn kl(p: &[f64], q: &[f64], c: usize) -> f64 {
        let lp = crate::kernels::log_softmax_rows(p, c);
        let lq = crate::kernels::log_softmax_rows(q, c);
        let n = p.len() / c;
        lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>() / n as f64
    }

    #[test]
    fn lambda_zero_is_plain_ce_bitwise() {
        let (m, wa, _, x, y) = setup();
        let (v, g) = boat_loss(&m, &wa, &x, &y, 0.0).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (logits, params) = m.forward(&mut tape, xv, true).unwrap();
        let l = tape.softmax_cross_entropy(logits, &y).unwrap();
        assert_eq!(v.to_bits(), tape.value(l).item().unwrap().to_bits());
        tape.backward(l).unwrap();
        assert_eq!(g, m.gather_grads(&tape, &params));
    }

    #[test]
    fn same_model_adds_nothing() {
        let (m, _, _, x, y) = setup();
        let (v0, _) = boat_loss(&m, &m, &x, &y, 0.0).unwrap();
        let (v1, _) = boat_loss(&m, &m, &x, &y, 3.0).unwrap();
        assert!((v0 - v1).abs() < 1e-12);
    }

    #[test]
    fn matches_termwise_recomputation() {
        let (m, wa, st, x, y) = setup();
        let (lp, lq, lt) = (m.logits(&x).unwrap(), wa.logits(&x).unwrap(), st.logits(&x).unwrap());
        let (lp, lq, lt) = (lp.data(), lq.data(), lt.data());
        let boat = ce(lp, &y, 3) + 0.8 * kl(lp, lq, 3);
        assert!((boat_loss(&m, &wa, &x, &y, 0.8).unwrap().0 - boat).abs() < 1e-9);
        let blend = 0.6 * boat + 0.4 * kl(lp, lt, 3);
        assert!((rebat_kd_loss(&m, &wa, Some(&st), &x, &y, 0.8, 0.4).unwrap().0 - blend).abs() < 1e-9);
        let pure = kl(lp, lt, 3);
        assert!((rebat_kd_loss(&m, &wa, Some(&st), &x, &y, 0.8, 1.0).unwrap().0 - pure).abs() < 1e-12);
        let (b0, _) = boat_loss(&m, &wa, &x, &y, 0.8).unwrap();
        assert_eq!(rebat_kd_loss(&m, &wa, Some(&st), &x, &y, 0.8, 0.0).unwrap().0, b0);
    }

    #[test]
    fn argument_errors() {
        let (m, wa, _, x, y) = setup();
        assert!(boat_loss(&m, &wa, &x, &y, -1.0).is_err());
        assert!(rebat_kd_loss(&m, &wa, None, &x, &y, 1.0, 0.5).is_err());
        assert!(rebat_kd_loss(&m, &wa, Some(&wa), &x, &y, 1.0, 1.5).is_err());
    }

    #[test]
    fn gradient_only_reaches_online_model() {
        let (m, wa, _, x, y) = setup();
        let before = wa.params().clone();
        let (_, g) = boat_loss(&m, &wa, &x, &y, 1.0).unwrap();
        assert_eq!(g.len(), m.param_count());
        assert_eq!(wa.params(), &before);
    }
}
