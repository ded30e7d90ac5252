//! Evidential training objective: adjusted cross-entropy (ACE) plus an
//! annealed KL regularizer towards the uniform Dirichlet, with analytic
//! gradients with respect to the concentration parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opinion::DirichletParams;
use crate::special::{digamma_unchecked as digamma, ln_gamma, trigamma_unchecked as trigamma};

/// One-hot class label over `num_classes` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    class: usize,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 || class >= num_classes {
            return Err(Error::Dimension(format!(
                "label {class} invalid for {num_classes} classes"
            )));
        }
        Ok(Self { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        (0..self.num_classes)
            .map(|k| if k == self.class { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Loss of one Dirichlet against one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub ace: f64,
    pub kl: f64,
    pub lambda: f64,
    pub grad_alpha: Vec<f64>,
}

/// Fused plus per-view losses for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OverallLoss {
    pub total: f64,
    pub fused: LossValue,
    pub views: Vec<LossValue>,
}

fn check_label(d: &DirichletParams, y: &LabelVector) -> Result<()> {
    if d.num_classes() != y.num_classes {
        return Err(Error::Dimension(format!(
            "Dirichlet over {} classes, label over {}",
            d.num_classes(),
            y.num_classes
        )));
    }
    Ok(())
}

/// `ψ(S) − ψ(α_y)` and its gradient `ψ'(S) − [k = y] ψ'(α_k)`.
pub fn ace_loss(d: &DirichletParams, y: &LabelVector) -> Result<(f64, Vec<f64>)> {
    check_label(d, y)?;
    let alpha = d.alpha();
    let s = d.strength();
    let value = (digamma(s) - digamma(alpha[y.class])).max(0.0);
    let ts = trigamma(s);
    let mut grad = vec![ts; alpha.len()];
    grad[y.class] -= trigamma(alpha[y.class]);
    Ok((value, grad))
}

/// `y + (1 − y) ⊙ α`: the ground-truth component is pinned to 1.
pub fn tilde_alpha(d: &DirichletParams, y: &LabelVector) -> Result<Vec<f64>> {
    check_label(d, y)?;
    let mut out = d.alpha().to_vec();
    out[y.class] = 1.0;
    Ok(out)
}

/// KL divergence from `Dir(α̃)` to the uniform `Dir(1)` and its gradient
/// `(α̃_k − 1) ψ'(α̃_k) − (Σα̃ − K) ψ'(Σα̃)`.
pub fn kl_to_uniform(alpha_tilde: &[f64]) -> Result<(f64, Vec<f64>)> {
    if alpha_tilde.len() < 2 {
        return Err(Error::Dimension(format!(
            "KL needs at least 2 classes, got {}",
            alpha_tilde.len()
        )));
    }
    if let Some(&a) = alpha_tilde.iter().find(|a| !a.is_finite() || **a < 1.0) {
        return Err(Error::Domain(a, "kl_to_uniform"));
    }
    let k = alpha_tilde.len() as f64;
    let s: f64 = alpha_tilde.iter().sum();
    let psi_s = digamma(s);
    let mut value = ln_gamma(s)? - ln_gamma(k)?;
    for &a in alpha_tilde {
        value += (a - 1.0) * (digamma(a) - psi_s) - ln_gamma(a)?;
    }
    let excess_term = (s - k) * trigamma(s);
    let grad = alpha_tilde
        .iter()
        .map(|&a| (a - 1.0) * trigamma(a) - excess_term)
        .collect();
    Ok((value.max(0.0), grad))
}

/// KL weight for `epoch` (0-based): `min(1, epoch / anneal_epochs)`.
pub fn anneal_coefficient(epoch: usize, anneal_epochs: usize) -> f64 {
    let ramp = anneal_epochs.max(1) as f64;
    (epoch as f64 / ramp).clamp(0.0, 1.0)
}

/// `ACE + λ · KL(α̃)`. The KL gradient does not reach the ground-truth slot.
pub fn sample_loss(d: &DirichletParams, y: &LabelVector, lambda: f64) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let (ace, mut grad_alpha) = ace_loss(d, y)?;
    let (kl, kl_grad) = kl_to_uniform(&tilde_alpha(d, y)?)?;
    for (k, (g, kg)) in grad_alpha.iter_mut().zip(&kl_grad).enumerate() {
        if k != y.class {
            *g += lambda * kg;
        }
    }
    Ok(LossValue {
        total: ace + lambda * kl,
        ace,
        kl,
        lambda,
        grad_alpha,
    })
}

/// Multi-task objective for one sample: the fused loss plus every view's loss.
pub fn overall_loss(
    fused: &DirichletParams,
    per_view: &[DirichletParams],
    y: &LabelVector,
    lambda: f64,
) -> Result<OverallLoss> {
    if let Some(bad) = per_view.iter().find(|d| d.num_classes() != fused.num_classes()) {
        return Err(Error::Dimension(format!(
            "view Dirichlet over {} classes, fused over {}",
            bad.num_classes(),
            fused.num_classes()
        )));
    }
    let fused = sample_loss(fused, y, lambda)?;
    let views = per_view
        .iter()
        .map(|d| sample_loss(d, y, lambda))
        .collect::<Result<Vec<_>>>()?;
    let total = fused.total + views.iter().map(|v| v.total).sum::<f64>();
    Ok(OverallLoss {
        total,
        fused,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dir(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    fn label(c: usize, k: usize) -> LabelVector {
        LabelVector::new(c, k).unwrap()
    }

    fn harmonic(n: u32) -> f64 {
        (1..=n).map(|i| 1.0 / i as f64).sum()
    }

    /// Central differences of `f` at `x`.
    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (f(&hi) - f(&lo)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let ok = if n.abs() < 1e-3 {
                (a - n).abs() <= 1e-6
            } else {
                ((a - n) / n).abs() <= 1e-3
            };
            assert!(ok, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn ace_examples() {
        let (v, _) = ace_loss(&dir(&[1.0, 1.0]), &label(0, 2)).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let (v, _) = ace_loss(&dir(&[101.0, 1.0]), &label(0, 2)).unwrap();
        assert!((v - 1.0 / 101.0).abs() < 1e-13);
        let (v, _) = ace_loss(&dir(&[1.0, 101.0]), &label(0, 2)).unwrap();
        assert!((v - harmonic(101)).abs() < 1e-12);
        assert!((v - 5.197_28).abs() < 1e-5);
    }

    #[test]
    fn tilde_alpha_examples() {
        assert_eq!(tilde_alpha(&dir(&[5.0, 3.0]), &label(0, 2)).unwrap(), vec![1.0, 3.0]);
        assert_eq!(tilde_alpha(&dir(&[1.0, 1.0]), &label(1, 2)).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            tilde_alpha(&dir(&[9.0, 2.0, 2.0]), &label(2, 3)).unwrap(),
            vec![9.0, 2.0, 1.0]
        );
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_uniform(&[1.0, 1.0]).unwrap().0, 0.0);
        assert_eq!(kl_to_uniform(&[1.0, 1.0, 1.0]).unwrap().0, 0.0);
        let (v, _) = kl_to_uniform(&[2.0, 1.0]).unwrap();
        assert!((v - (std::f64::consts::LN_2 - 0.5)).abs() <= 1e-12);
        assert!(matches!(kl_to_uniform(&[0.5, 1.0]), Err(Error::Domain(..))));
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_coefficient(0, 10), 0.0);
        assert_eq!(anneal_coefficient(5, 10), 0.5);
        assert_eq!(anneal_coefficient(25, 10), 1.0);
        let seq: Vec<f64> = (0..30).map(|e| anneal_coefficient(e, 7)).collect();
        assert!(seq.windows(2).all(|w| w[0] <= w[1]));
        assert!(seq.iter().all(|l| (0.0..=1.0).contains(l)));
    }

    #[test]
    fn sample_loss_examples() {
        let l = sample_loss(&dir(&[1.0, 1.0]), &label(0, 2), 1.0).unwrap();
        assert!((l.total - 1.0).abs() < 1e-14);
        let d = dir(&[5.0, 3.0]);
        let l = sample_loss(&d, &label(0, 2), 0.0).unwrap();
        assert_eq!(l.total, ace_loss(&d, &label(0, 2)).unwrap().0);
        let l = sample_loss(&d, &label(0, 2), 1.0).unwrap();
        assert!(l.total >= l.ace);
        assert!((l.total - (l.ace + l.lambda * l.kl)).abs() <= 1e-12);
        assert!(sample_loss(&d, &label(0, 2), 1.5).is_err());
    }

    #[test]
    fn overall_loss_examples() {
        let y = label(0, 2);
        let fused = dir(&[5.0, 3.0]);
        let o = overall_loss(&fused, &[], &y, 0.3).unwrap();
        assert_eq!(o.total, sample_loss(&fused, &y, 0.3).unwrap().total);

        let ones = dir(&[1.0, 1.0]);
        for v in 1..5 {
            let views = vec![ones.clone(); v];
            let o = overall_loss(&ones, &views, &y, 0.0).unwrap();
            assert!((o.total - (v as f64 + 1.0)).abs() < 1e-12);
        }
        assert!(overall_loss(&fused, &[dir(&[1.0, 1.0, 1.0])], &y, 0.0).is_err());
    }

    #[test]
    fn overall_view_gradient_matches_finite_differences() {
        let y = label(1, 3);
        let fused = dir(&[4.0, 2.5, 1.7]);
        let views = vec![dir(&[1.3, 6.0, 2.2]), dir(&[3.1, 1.2, 1.9])];
        let o = overall_loss(&fused, &views, &y, 0.7).unwrap();
        for (v, view) in views.iter().enumerate() {
            let f = |a: &[f64]| {
                let mut vs = views.clone();
                vs[v] = dir(a);
                overall_loss(&fused, &vs, &y, 0.7).unwrap().total
            };
            let fd = numeric_grad(f, view.alpha(), 1e-4);
            assert_grad_close(&o.views[v].grad_alpha, &fd);
        }
    }

    #[test]
    fn ace_decreases_with_true_class_evidence() {
        let y = label(0, 3);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = ace_loss(&dir(&[1.0 + i as f64 * 0.5, 2.0, 3.0]), &y).unwrap().0;
            assert!(v < prev);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            alpha in prop::collection::vec(1.05f64..30.0, 2..6),
            class_seed in 0usize..100,
            lambda in 0.0f64..=1.0,
        ) {
            let k = alpha.len();
            let y = label(class_seed % k, k);
            let d = dir(&alpha);

            let (_, g) = ace_loss(&d, &y).unwrap();
            let fd = numeric_grad(|a| ace_loss(&dir(a), &y).unwrap().0, &alpha, 1e-4);
            assert_grad_close(&g, &fd);

            let (_, g) = kl_to_uniform(&alpha).unwrap();
            let fd = numeric_grad(|a| kl_to_uniform(a).unwrap().0, &alpha, 1e-4);
            assert_grad_close(&g, &fd);

            let l = sample_loss(&d, &y, lambda).unwrap();
            let fd = numeric_grad(|a| sample_loss(&dir(a), &y, lambda).unwrap().total, &alpha, 1e-4);
            assert_grad_close(&l.grad_alpha, &fd);
        }

        #[test]
        fn losses_are_non_negative(
            alpha in prop::collection::vec(1.0f64..50.0, 2..6),
            class_seed in 0usize..100,
        ) {
            let k = alpha.len();
            let y = label(class_seed % k, k);
            let d = dir(&alpha);
            prop_assert!(ace_loss(&d, &y).unwrap().0 >= 0.0);
            let kl = kl_to_uniform(&alpha).unwrap().0;
            prop_assert!(kl >= 0.0);
            if alpha.iter().any(|&a| a > 1.0 + 1e-3) {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
