//! Subjective-logic opinions over a K-class frame and Dempster's rule of
//! combination restricted to the singletons plus the whole frame Ω.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ beliefs + uncertainty = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Smallest admissible `1 − κ` before combination is declared impossible.
pub const CONFLICT_TOL: f64 = 1e-12;

/// Belief masses for each singleton class plus the uncertainty mass m(Ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

impl Opinion {
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self> {
        if beliefs.len() < 2 {
            return Err(Error::InvalidOpinion(format!(
                "need at least 2 classes, got {}",
                beliefs.len()
            )));
        }
        if !uncertainty.is_finite() || uncertainty < 0.0 {
            return Err(Error::InvalidOpinion(format!(
                "uncertainty {uncertainty} must be finite and non-negative"
            )));
        }
        if let Some(b) = beliefs.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::InvalidOpinion(format!(
                "belief {b} must be finite and non-negative"
            )));
        }
        let total = beliefs.iter().sum::<f64>() + uncertainty;
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidOpinion(format!(
                "masses sum to {total}, not 1"
            )));
        }
        Ok(Self {
            beliefs,
            uncertainty,
        })
    }

    /// The opinion with all mass on Ω; identity element of combination.
    pub fn vacuous(num_classes: usize) -> Self {
        assert!(num_classes >= 2, "an opinion needs at least 2 classes");
        Self {
            beliefs: vec![0.0; num_classes],
            uncertainty: 1.0,
        }
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn num_classes(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_vacuous(&self) -> bool {
        self.uncertainty == 1.0 && self.beliefs.iter().all(|&b| b == 0.0)
    }
}

/// Per-class non-negative evidence produced by an evidence network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector(Vec<f64>);

impl EvidenceVector {
    pub fn new(evidence: Vec<f64>) -> Result<Self> {
        if evidence.len() < 2 {
            return Err(Error::InvalidEvidence(format!(
                "need at least 2 classes, got {}",
                evidence.len()
            )));
        }
        if let Some(e) = evidence.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::InvalidEvidence(format!(
                "component {e} must be finite and non-negative"
            )));
        }
        Ok(Self(evidence))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Dirichlet concentration parameters `α_k = e_k + 1` and strength `S = Σ α_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    strength: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidDirichlet(format!(
                "need at least 2 classes, got {}",
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !a.is_finite() || **a < 1.0) {
            return Err(Error::InvalidDirichlet(format!(
                "concentration {a} must be finite and at least 1"
            )));
        }
        let strength = alpha.iter().sum();
        Ok(Self { alpha, strength })
    }

    pub fn from_evidence(e: &EvidenceVector) -> Self {
        let alpha: Vec<f64> = e.as_slice().iter().map(|&x| x + 1.0).collect();
        let strength = alpha.iter().sum();
        Self { alpha, strength }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn evidence(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a - 1.0).collect()
    }
}

/// Result of a Dempster combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub opinion: Opinion,
    /// Conflict κ of the last pairwise combination (0 for a single opinion).
    pub conflict: f64,
    /// κ of every pairwise step of a fold, in order.
    pub step_conflicts: Vec<f64>,
}

/// Maps evidence to the subjective opinion `b_k = e_k / S`, `u = K / S`
/// and the Dirichlet it parameterizes.
pub fn opinion_from_evidence(e: &EvidenceVector) -> (Opinion, DirichletParams) {
    let dirichlet = DirichletParams::from_evidence(e);
    let s = dirichlet.strength;
    let k = e.as_slice().len() as f64;
    let opinion = Opinion {
        beliefs: e.as_slice().iter().map(|&x| x / s).collect(),
        uncertainty: k / s,
    };
    (opinion, dirichlet)
}

/// Inverse map from an opinion back to Dirichlet parameters:
/// `S = K / u`, `e_k = b_k S`, `α_k = e_k + 1`.
pub fn dirichlet_from_opinion(o: &Opinion) -> Result<DirichletParams> {
    if o.uncertainty <= 0.0 {
        return Err(Error::InfiniteStrength);
    }
    let s = o.num_classes() as f64 / o.uncertainty;
    let alpha: Vec<f64> = o.beliefs.iter().map(|&b| b * s + 1.0).collect();
    DirichletParams::new(alpha)
}

/// Expected class probabilities `α_k / S` under the Dirichlet.
pub fn expected_probs(d: &DirichletParams) -> Vec<f64> {
    d.alpha.iter().map(|&a| a / d.strength).collect()
}

fn check_same_k(a: &Opinion, b: &Opinion) -> Result<()> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::Dimension(format!(
            "cannot combine opinions over {} and {} classes",
            a.num_classes(),
            b.num_classes()
        )));
    }
    Ok(())
}

/// Dempster's rule for two opinions over singletons plus Ω.
pub fn combine_pair(m1: &Opinion, m2: &Opinion) -> Result<FusionOutcome> {
    check_same_k(m1, m2)?;
    // The vacuous opinion is the identity; returning the other operand
    // untouched keeps the identity exact under the final renormalization.
    if m1.is_vacuous() || m2.is_vacuous() {
        let opinion = if m1.is_vacuous() { m2 } else { m1 }.clone();
        return Ok(FusionOutcome {
            opinion,
            conflict: 0.0,
            step_conflicts: vec![0.0],
        });
    }
    let (u1, u2) = (m1.uncertainty, m2.uncertainty);
    let sum1: f64 = m1.beliefs.iter().sum();
    let sum2: f64 = m2.beliefs.iter().sum();
    let agreement: f64 = m1.beliefs.iter().zip(&m2.beliefs).map(|(a, b)| a * b).sum();
    let conflict = (sum1 * sum2 - agreement).max(0.0);
    let norm = 1.0 - conflict;
    if norm <= CONFLICT_TOL {
        return Err(Error::TotalConflict(norm));
    }
    let mut beliefs: Vec<f64> = m1
        .beliefs
        .iter()
        .zip(&m2.beliefs)
        .map(|(&b1, &b2)| (b1 * b2 + b1 * u2 + b2 * u1) / norm)
        .collect();
    let mut uncertainty = u1 * u2 / norm;
    let total = beliefs.iter().sum::<f64>() + uncertainty;
    for b in &mut beliefs {
        *b /= total;
    }
    uncertainty /= total;
    Ok(FusionOutcome {
        opinion: Opinion {
            beliefs,
            uncertainty,
        },
        conflict,
        step_conflicts: vec![conflict],
    })
}

/// Left fold of [`combine_pair`] over `opinions` in the given order.
pub fn combine_all(opinions: &[Opinion]) -> Result<FusionOutcome> {
    let (first, rest) = opinions
        .split_first()
        .ok_or(Error::Empty("combine_all needs at least one opinion"))?;
    let mut acc = first.clone();
    let mut steps = Vec::with_capacity(rest.len());
    for next in rest {
        let step = combine_pair(&acc, next)?;
        steps.push(step.conflict);
        acc = step.opinion;
    }
    Ok(FusionOutcome {
        opinion: acc,
        conflict: steps.last().copied().unwrap_or(0.0),
        step_conflicts: steps,
    })
}

/// Upstream gradient with respect to an opinion's masses.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionGrad {
    pub beliefs: Vec<f64>,
    pub uncertainty: f64,
}

impl OpinionGrad {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            beliefs: vec![0.0; num_classes],
            uncertainty: 0.0,
        }
    }
}

/// Reverse-mode derivative of [`combine_pair`].
///
/// The combined masses are differentiated as `num / Σ num`, where
/// `num_k = b1_k b2_k + b1_k u2 + b2_k u1` and `num_Ω = u1 u2`; on normalized
/// inputs `Σ num = 1 − κ`, so this is the same function the forward pass
/// evaluates.
pub fn combine_pair_backward(
    m1: &Opinion,
    m2: &Opinion,
    upstream: &OpinionGrad,
) -> (OpinionGrad, OpinionGrad) {
    let k = m1.num_classes();
    let (u1, u2) = (m1.uncertainty, m2.uncertainty);
    let num: Vec<f64> = (0..k)
        .map(|i| {
            let (b1, b2) = (m1.beliefs[i], m2.beliefs[i]);
            b1 * b2 + b1 * u2 + b2 * u1
        })
        .collect();
    let num_u = u1 * u2;
    let total = num.iter().sum::<f64>() + num_u;

    // d(num_j / total) / d num_i, contracted with the upstream gradient.
    let weighted: f64 = num
        .iter()
        .zip(&upstream.beliefs)
        .map(|(n, g)| n * g)
        .sum::<f64>()
        + num_u * upstream.uncertainty;
    let mean = weighted / total;
    let g_num: Vec<f64> = upstream.beliefs.iter().map(|g| (g - mean) / total).collect();
    let g_num_u = (upstream.uncertainty - mean) / total;

    let mut g1 = OpinionGrad::zeros(k);
    let mut g2 = OpinionGrad::zeros(k);
    for i in 0..k {
        let (b1, b2) = (m1.beliefs[i], m2.beliefs[i]);
        g1.beliefs[i] = g_num[i] * (b2 + u2);
        g2.beliefs[i] = g_num[i] * (b1 + u1);
        g1.uncertainty += g_num[i] * b2;
        g2.uncertainty += g_num[i] * b1;
    }
    g1.uncertainty += g_num_u * u2;
    g2.uncertainty += g_num_u * u1;
    (g1, g2)
}
