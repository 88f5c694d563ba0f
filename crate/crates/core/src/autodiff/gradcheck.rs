//! Central finite-difference verification of analytic gradients.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// max over coordinates of |analytic - central| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates where the forward and backward one-sided differences
    /// disagree, i.e. the function has a kink near the point.
    pub kinks: Vec<usize>,
}

/// Compares `analytic` against central differences of `f` at `point`.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("epsilon {eps} outside [1e-6, 1e-4]")));
    }
    if point.len() != analytic.len() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            detail: format!("{} coordinates, {} gradient entries", point.len(), analytic.len()),
        });
    }
    let f0 = f(point)?;
    let mut x = point.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: None,
        kinks: Vec::new(),
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x)?;
        x[i] = orig - eps;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite_diff_check"));
        }
        let central = (fp - fm) / (2.0 * eps);
        let forward = (fp - f0) / eps;
        let backward = (f0 - fm) / eps;
        if (forward - backward).abs() > eps.sqrt() * (1.0 + forward.abs() + backward.abs()) {
            report.kinks.push(i);
        }
        let err = (analytic[i] - central).abs() / analytic[i].abs().max(1.0);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Checks `backward` for a scalar loss built by `loss` over every value of
/// `store`.
pub fn check_param_gradients<F>(store: &ParamStore, eps: f64, loss: F) -> Result<FdReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars = tape.bind(store)?;
        let out = loss(&mut tape, &vars)?;
        tape.backward(out, store)?.flatten()
    };
    let mut scratch = store.clone();
    let point = store.flatten();
    finite_diff_check(
        |x| {
            scratch.set_flat(x)?;
            let mut tape = Tape::new();
            let vars = tape.bind(&scratch)?;
            let out = loss(&mut tape, &vars)?;
            Ok(tape.scalar_value(out))
        },
        &point,
        &analytic,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let r = finite_diff_check(|x| Ok(x[0] * x[0]), &[3.0], &[6.0], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{}", r.max_rel_error);
        assert!(r.kinks.is_empty());
    }

    #[test]
    fn abs_at_zero_is_flagged() {
        // subgradient 1 at the kink; central difference sees 0
        let r = finite_diff_check(|x| Ok(x[0].abs()), &[0.0], &[1.0], 1e-5).unwrap();
        assert_eq!(r.kinks, vec![0]);
        assert!(r.max_rel_error > 1e-4);
    }

    #[test]
    fn epsilon_out_of_range() {
        assert!(finite_diff_check(|x| Ok(x[0]), &[0.0], &[1.0], 1e-3).is_err());
    }

    #[test]
    fn non_finite_perturbation_is_error() {
        let r = finite_diff_check(|x| Ok(1.0 / (x[0] - 1e-5)), &[0.0], &[0.0], 1e-5);
        assert!(r.is_err());
    }

    fn random_store(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, sh) in shapes.iter().enumerate() {
            s.add(format!("p{i}"), Tensor::uniform(sh, 1.0, rng));
        }
        s
    }

    /// Every primitive, composed into a scalar, against central differences.
    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let store = random_store(&mut rng, &[&[3, 4], &[4], &[3], &[3], &[1]]);
            let mask: Vec<f64> = (0..3).map(|_| if rng.gen_bool(0.5) { 2.0 } else { 0.0 }).collect();
            let target = rng.gen_range(0..6);
            let r = check_param_gradients(&store, 1e-5, |t, p| {
                let mv = t.matvec(p[0], p[1])?;
                let s = t.sigmoid(mv)?;
                let th = t.tanh(p[2])?;
                let a = t.add(s, th)?;
                let m = t.mul(a, p[3])?;
                let om = t.one_minus(m)?;
                let sub = t.sub(om, p[2])?;
                let sc = t.scale(sub, 0.7)?;
                let mk = t.mask(sc, mask.clone())?;
                let b = t.broadcast(p[4], 3)?;
                let an = t.add_n(&[mk, b, th])?;
                let mean = t.mean(&[an, p[3]])?;
                let nrm = t.l2_normalize(mean)?;
                let emax = t.elem_max(&[nrm, th, s])?;
                let cat = t.concat(&[emax, p[2]])?;
                let xent = t.softmax_xent(cat, target)?;
                let cos = t.cosine(an, p[3])?;
                let dot = t.dot(nrm, p[2])?;
                let sum = t.sum(emax)?;
                let mx = t.max_of(&[cos, dot])?;
                let all = t.add_n(&[xent, mx, sum])?;
                Ok(all)
            })
            .unwrap();
            assert!(r.max_rel_error <= 1e-6, "rel err {}", r.max_rel_error);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = random_store(&mut rng, &[&[2, 3], &[3]]);
        let grad = |which: u8| {
            let mut tape = Tape::new();
            let p = tape.bind(&store).unwrap();
            let y = tape.matvec(p[0], p[1]).unwrap();
            let a = tape.tanh(y).unwrap();
            let la = tape.sum(a).unwrap();
            let b = tape.mul(p[1], p[1]).unwrap();
            let lb = tape.sum(b).unwrap();
            let out = match which {
                0 => la,
                1 => lb,
                _ => tape.add(la, lb).unwrap(),
            };
            tape.backward(out, &store).unwrap().flatten()
        };
        let (ga, gb, gs) = (grad(0), grad(1), grad(2));
        for i in 0..gs.len() {
            assert!((ga[i] + gb[i] - gs[i]).abs() < 1e-14);
        }
    }
}
