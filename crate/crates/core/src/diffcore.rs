//! Analytic vector-Jacobian products for the handful of operations the
//! losses are built from, plus a central-difference gradient checker.
//!
//! There is no tape. Each loss composes these pieces by hand, in 64-bit.
//! Matrices are row-major `d × d` slices; a row vector `v` times `M` is
//! `u_j = Σ_k v_k M_kj`.

use serde::{Deserialize, Serialize};

use crate::apl::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::simcore::{dot, norm};

/// The differentiable building blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffOp {
    MatvecRight,
    Cosine,
    Tanh,
    Mse,
    Mean,
    AffineSum,
}

impl DiffOp {
    pub fn name(self) -> &'static str {
        match self {
            DiffOp::MatvecRight => "matvec_right",
            DiffOp::Cosine => "cosine",
            DiffOp::Tanh => "tanh",
            DiffOp::Mse => "mse",
            DiffOp::Mean => "mean",
            DiffOp::AffineSum => "affine_sum",
        }
    }
}

/// `u = v · M`.
pub fn matvec_right(v: &[f64], m: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    let mut u = vec![0.0; d];
    for (vk, row) in v.iter().zip(m.chunks_exact(d)) {
        for (uj, mkj) in u.iter_mut().zip(row) {
            *uj += vk * mkj;
        }
    }
    u
}

/// `dM += scale · outer(v, du)`: the matrix sensitivity of `u = v·M`.
pub fn add_outer(dm: &mut [f64], v: &[f64], du: &[f64], scale: f64) {
    let d = du.len();
    for (vk, row) in v.iter().zip(dm.chunks_exact_mut(d)) {
        let s = scale * vk;
        if s == 0.0 {
            continue;
        }
        for (g, duj) in row.iter_mut().zip(du) {
            *g += s * duj;
        }
    }
}

/// Sensitivities of `cos(v, l)` with respect to both arguments.
pub fn grad_cosine(v: &[f64], l: &[f64], upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if v.len() != l.len() {
        return Err(Error::DimMismatch { expected: v.len(), got: l.len() });
    }
    let (nv, nl) = (norm(v), norm(l));
    if nv == 0.0 || nl == 0.0 {
        return Err(Error::ZeroVector);
    }
    let vl = dot(v, l);
    let a = upstream / (nv * nl);
    let bv = upstream * vl / (nv * nv * nv * nl);
    let bl = upstream * vl / (nl * nl * nl * nv);
    let dv = v.iter().zip(l).map(|(vi, li)| a * li - bv * vi).collect();
    let dl = v.iter().zip(l).map(|(vi, li)| a * vi - bl * li).collect();
    Ok((dv, dl))
}

/// Sensitivity of `cos(v, l)` with respect to `v` only, scaled by `upstream`,
/// accumulated into `out`. Returns the cosine.
pub fn accumulate_cosine_dv(v: &[f64], l_unit: &[f64], upstream: f64, out: &mut [f64]) -> Result<f64> {
    let nv = norm(v);
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c = dot(v, l_unit) / nv;
    let a = upstream / nv;
    let b = upstream * c / (nv * nv);
    for ((o, vi), li) in out.iter_mut().zip(v).zip(l_unit) {
        *o += a * li - b * vi;
    }
    Ok(c)
}

/// `dM` for `S = cos(v·M, l)`, with `v` and `l` held constant.
pub fn grad_rrm_similarity(v: &[f64], m: &[f64], l: &[f64], upstream: f64) -> Result<Vec<f64>> {
    let d = v.len();
    if m.len() != d * d {
        return Err(Error::DimMismatch { expected: d * d, got: m.len() });
    }
    if l.len() != d {
        return Err(Error::DimMismatch { expected: d, got: l.len() });
    }
    let u = matvec_right(v, m);
    let (du, _) = grad_cosine(&u, l, upstream)?;
    let mut dm = vec![0.0; d * d];
    add_outer(&mut dm, v, &du, 1.0);
    Ok(dm)
}

pub fn tanh_vjp(x: f64, upstream: f64) -> f64 {
    let t = x.tanh();
    upstream * (1.0 - t * t)
}

/// Mean of squared differences over all pairs.
pub fn mse(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    if x.is_empty() {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// `d mse / dx = 2(x − y)/N`, scaled by `upstream`.
pub fn mse_vjp(x: &[f64], y: &[f64], upstream: f64) -> Vec<f64> {
    let n = x.len() as f64;
    x.iter().zip(y).map(|(a, b)| upstream * 2.0 * (a - b) / n).collect()
}

pub fn mean_vjp(n: usize, upstream: f64) -> Vec<f64> {
    vec![upstream / n as f64; n]
}

/// `λ·a + (1−λ)·b` and its two input sensitivities.
pub fn affine_sum(lambda: f64, a: f64, b: f64) -> f64 {
    lambda * a + (1.0 - lambda) * b
}

pub fn affine_sum_vjp(lambda: f64, upstream: f64) -> (f64, f64) {
    (lambda * upstream, (1.0 - lambda) * upstream)
}

/// Pulls a query-space sensitivity back onto learnable prefix token vectors.
/// Suffix sensitivities are computed by the encoder and discarded.
pub fn grad_prefix(
    encoder: &dyn TextEncoder,
    prefix: &[Vec<f64>],
    suffix: &[&[f64]],
    dquery: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let tokens: Vec<&[f64]> =
        prefix.iter().map(Vec::as_slice).chain(suffix.iter().copied()).collect();
    let mut grads = encoder.vjp(&tokens, dquery)?;
    grads.truncate(prefix.len());
    Ok(grads)
}

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Composition {
    fn id(&self) -> String;
    fn loss(&self, params: &[f64]) -> Result<f64>;
    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>>;
}

/// Adapter for closures.
pub struct FnComposition<F, G> {
    pub id: String,
    pub loss: F,
    pub gradient: G,
}

impl<F, G> Composition for FnComposition<F, G>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn id(&self) -> String {
        self.id.clone()
    }
    fn loss(&self, params: &[f64]) -> Result<f64> {
        (self.loss)(params)
    }
    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        (self.gradient)(params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub id: String,
    pub max_rel_err: f64,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub params: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradient with `(f(x+h·e) − f(x−h·e)) / 2h` on every coordinate.
pub fn gradcheck<C: Composition + ?Sized>(
    composition: &C,
    point: &[f64],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let f0 = composition.loss(point)?;
    if !f0.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let analytic = composition.gradient(point)?;
    if analytic.len() != point.len() {
        return Err(Error::DimMismatch { expected: point.len(), got: analytic.len() });
    }
    let mut x = point.to_vec();
    let (mut worst, mut worst_index) = (0.0f64, 0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = composition.loss(&x)?;
        x[i] = orig - h;
        let fm = composition.loss(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0 });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > worst {
            worst = err;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        id: composition.id(),
        max_rel_err: worst,
        step: h,
        tolerance: tol,
        passed: worst <= tol,
        worst_index,
        params: point.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apl::encoder::{ToyEncoder, Vocabulary};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn cosine_gradient_hand_cases() {
        let (dv, dl) = grad_cosine(&[1.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(dv, vec![0.0, 0.0]);
        assert_eq!(dl, vec![0.0, 0.0]);
        let (dv, _) = grad_cosine(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert_eq!(dv, vec![0.0, 1.0]);
        assert!(matches!(grad_cosine(&[0.0, 0.0], &[0.0, 1.0], 1.0), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v = rand_vec(&mut rng, 6);
        let l = rand_vec(&mut rng, 6);
        let lc = l.clone();
        let comp = FnComposition {
            id: "cosine".into(),
            loss: move |x: &[f64]| crate::simcore::cosine(x, &lc),
            gradient: |x: &[f64]| Ok(grad_cosine(x, &l, 1.0)?.0),
        };
        let rep = gradcheck(&comp, &v, 1e-5, 1e-7).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn rrm_similarity_gradient() {
        // identity, v == l: cosine is at its maximum
        let v = [0.3, -0.2, 0.9];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let dm = grad_rrm_similarity(&v, &eye, &v, 1.0).unwrap();
        assert!(dm.iter().all(|x| x.abs() < 1e-15));
        let dm0 = grad_rrm_similarity(&v, &eye, &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert!(dm0.iter().all(|&x| x == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = rand_vec(&mut rng, 3);
        let l = rand_vec(&mut rng, 3);
        let m = rand_vec(&mut rng, 9);
        let (vc, lc) = (v.clone(), l.clone());
        let comp = FnComposition {
            id: "rrm_similarity".into(),
            loss: move |x: &[f64]| crate::simcore::cosine(&matvec_right(&vc, x), &lc),
            gradient: |x: &[f64]| grad_rrm_similarity(&v, x, &l, 1.0),
        };
        let rep = gradcheck(&comp, &m, 1e-5, 1e-6).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn vjp_linearity_is_exact() {
        let (a, _) = grad_cosine(&[0.5, 1.5, -2.0], &[1.0, 0.25, 0.75], 1.0).unwrap();
        let (b, _) = grad_cosine(&[0.5, 1.5, -2.0], &[1.0, 0.25, 0.75], 4.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(4.0 * x, *y);
        }
    }

    #[test]
    fn mse_convention() {
        let x = [1.0, 2.0, 4.0];
        let y = [0.0, 2.0, 1.0];
        assert_abs_diff_eq!(mse(&x, &y), 10.0 / 3.0, epsilon = 1e-15);
        assert_eq!(mse_vjp(&x, &y, 1.0), vec![2.0 / 3.0, 0.0, 2.0]);
        assert_eq!(mean_vjp(4, 2.0), vec![0.5; 4]);
        assert_eq!(affine_sum(0.8, 0.5, 0.25), 0.8 * 0.5 + 0.2 * 0.25);
        assert_eq!(affine_sum_vjp(0.25, 2.0), (0.5, 1.5));
        assert_abs_diff_eq!(tanh_vjp(0.0, 3.0), 3.0);
    }

    #[test]
    fn linear_composition_is_exact() {
        let c = [0.5, -2.0, 3.0];
        let comp = FnComposition {
            id: "linear".into(),
            loss: |x: &[f64]| Ok(dot(&c, x)),
            gradient: |_: &[f64]| Ok(c.to_vec()),
        };
        let rep = gradcheck(&comp, &[1.0, 1.0, 1.0], 1e-3, 1e-12).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let comp = FnComposition {
            id: "nan".into(),
            loss: |_: &[f64]| Ok(f64::NAN),
            gradient: |x: &[f64]| Ok(vec![0.0; x.len()]),
        };
        assert!(matches!(gradcheck(&comp, &[1.0], 1e-5, 1e-5), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn toy_prefix_pullback_by_hand() {
        // one prefix token, two suffix tokens: d prefix = Wᵀ g / 3
        let mut vocab = Vocabulary::default();
        vocab.insert("a", vec![1.0, 0.0, 0.0, 0.0]);
        vocab.insert("b", vec![0.0, 2.0, 0.0, 1.0]);
        let enc = ToyEncoder::new(4, 3, 9, &vocab).unwrap();
        let g = [0.5, -1.0, 0.25, 2.0];
        let suffix = [enc.token("a").unwrap(), enc.token("b").unwrap()];
        let dp = grad_prefix(&enc, &[vec![0.1, 0.2, 0.3]], &suffix, &g).unwrap();
        let expected: Vec<f64> = enc.pull_back(&g).iter().map(|x| x / 3.0).collect();
        assert_eq!(dp.len(), 1);
        for (a, b) in dp[0].iter().zip(&expected) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        let zero = grad_prefix(&enc, &[vec![0.1, 0.2, 0.3]], &suffix, &[0.0; 4]).unwrap();
        assert!(zero[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_only_encoder_refuses_vjp() {
        use crate::apl::encoder::ForwardOnly;
        let enc = ForwardOnly(ToyEncoder::new(2, 2, 1, &Vocabulary::default()).unwrap());
        assert!(matches!(
            grad_prefix(&enc, &[vec![1.0, 0.0]], &[], &[1.0, 1.0]),
            Err(Error::EncoderNotDifferentiable(_))
        ));
    }
}
