//! The joint loss law and its derived quantities.
//!
//! Loss is modeled as
//!
//! ```text
//! L(N, D, E) = a Ê^delta N^(alpha + gamma ln Ê) + b Ê^omega D^(beta + zeta ln Ê) + c
//! ```
//!
//! over active parameters N, training tokens D, and expert count E, where Ê
//! is a saturating transform of E that equals `e_start` at E = 1 and
//! approaches `e_max` as E grows. All logarithms are natural; fixing E
//! collapses the law to a two-term power law (see [`reduce_to_chinchilla`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LawError {
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Full coefficient set of the joint law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCoefficients {
    pub a: f64,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub b: f64,
    pub beta: f64,
    pub omega: f64,
    pub zeta: f64,
    pub e_start: f64,
    pub e_max: f64,
    pub c: f64,
}

/// The fitted set shipped with the crate (also at data/coefficients.json).
pub const BUNDLED: ScalingCoefficients = ScalingCoefficients {
    a: 35.91,
    alpha: -0.1889,
    delta: -0.2285,
    gamma: 0.0098,
    b: 35.98,
    beta: -0.1775,
    omega: 0.5529,
    zeta: -0.0259,
    e_start: 2.0732,
    e_max: 290.4521,
    c: 1.3637,
};

impl ScalingCoefficients {
    pub fn bundled() -> Self {
        BUNDLED
    }

    /// Checks finiteness, positivity of a, b, c, and 0 < e_start < e_max.
    pub fn validate(&self) -> Result<(), LawError> {
        let fields = [
            self.a,
            self.alpha,
            self.delta,
            self.gamma,
            self.b,
            self.beta,
            self.omega,
            self.zeta,
            self.e_start,
            self.e_max,
            self.c,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(LawError::InvalidCoefficients(
                "all fields must be finite".into(),
            ));
        }
        if !(self.a > 0.0 && self.b > 0.0 && self.c > 0.0) {
            return Err(LawError::InvalidCoefficients(
                "a, b, c must be positive".into(),
            ));
        }
        if !(self.e_start > 0.0 && self.e_max > self.e_start) {
            return Err(LawError::InvalidCoefficients(format!(
                "need 0 < e_start < e_max, got e_start = {}, e_max = {}",
                self.e_start, self.e_max
            )));
        }
        Ok(())
    }
}

/// Two-term power law at a fixed expert count: m N^mu + n D^nu + c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaCoefficients {
    pub m: f64,
    pub mu: f64,
    pub n: f64,
    pub nu: f64,
    pub c: f64,
}

impl ChinchillaCoefficients {
    /// m N^mu + n D^nu + c. Callers keep n_act, tokens >= 1.
    pub fn loss(&self, n_act: f64, tokens: f64) -> f64 {
        self.m * n_act.powf(self.mu) + self.n * tokens.powf(self.nu) + self.c
    }
}

/// Peak learning rate as a log-linear rule in active non-embedding
/// parameters and expert count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrRule {
    pub intercept: f64,
    pub n_slope: f64,
    pub e_slope: f64,
}

impl LrRule {
    pub fn bundled() -> Self {
        LrRule {
            intercept: 8.39,
            n_slope: -0.81,
            e_slope: -0.25,
        }
    }
}

/// Saturating expert-count transform:
/// 1/Ê = 1/(E - 1 + k) + 1/e_max with k = (1/e_start - 1/e_max)^(-1).
/// Strictly increasing, Ê(1) = e_start, Ê(inf) = e_max. Real-valued E >= 1
/// is accepted so planners can search continuously.
pub fn e_hat(experts: f64, coeffs: &ScalingCoefficients) -> Result<f64, LawError> {
    if !(coeffs.e_start > 0.0) || !(coeffs.e_max > coeffs.e_start) {
        return Err(LawError::InvalidCoefficients(format!(
            "need 0 < e_start < e_max, got e_start = {}, e_max = {}",
            coeffs.e_start, coeffs.e_max
        )));
    }
    if !(experts >= 1.0) {
        return Err(LawError::InvalidInput(format!(
            "experts must be >= 1, got {experts}"
        )));
    }
    // At E = 1 the first term is exactly 1/k = 1/e_start - 1/e_max; return
    // e_start directly instead of round-tripping through two reciprocals.
    if experts == 1.0 {
        return Ok(coeffs.e_start);
    }
    let k = 1.0 / (1.0 / coeffs.e_start - 1.0 / coeffs.e_max);
    Ok(1.0 / (1.0 / (experts - 1.0 + k) + 1.0 / coeffs.e_max))
}

/// Evaluate the joint law. Direct power-law arithmetic; the fitting module
/// carries an independent log-space evaluation and the two must agree to
/// 1e-12 relative, which the test suite enforces.
pub fn loss(
    n_act: f64,
    tokens: f64,
    experts: f64,
    coeffs: &ScalingCoefficients,
) -> Result<f64, LawError> {
    if !(n_act >= 1.0) || !(tokens >= 1.0) {
        return Err(LawError::InvalidInput(format!(
            "need n_act >= 1 and tokens >= 1, got n_act = {n_act}, tokens = {tokens}"
        )));
    }
    let eh = e_hat(experts, coeffs)?;
    let le = eh.ln();
    Ok(
        coeffs.a * eh.powf(coeffs.delta) * n_act.powf(coeffs.alpha + coeffs.gamma * le)
            + coeffs.b * eh.powf(coeffs.omega) * tokens.powf(coeffs.beta + coeffs.zeta * le)
            + coeffs.c,
    )
}

/// Collapse the joint law at one expert count:
/// m = a Ê^delta, mu = alpha + gamma ln Ê, n = b Ê^omega,
/// nu = beta + zeta ln Ê, c unchanged.
pub fn reduce_to_chinchilla(
    coeffs: &ScalingCoefficients,
    experts: f64,
) -> Result<ChinchillaCoefficients, LawError> {
    let eh = e_hat(experts, coeffs)?;
    let le = eh.ln();
    Ok(ChinchillaCoefficients {
        m: coeffs.a * eh.powf(coeffs.delta),
        mu: coeffs.alpha + coeffs.gamma * le,
        n: coeffs.b * eh.powf(coeffs.omega),
        nu: coeffs.beta + coeffs.zeta * le,
        c: coeffs.c,
    })
}

/// exp(intercept + n_slope ln N + e_slope ln E) over active non-embedding
/// parameters N. Callers keep n_act_nonemb, experts >= 1.
pub fn peak_learning_rate(n_act_nonemb: f64, experts: f64, rule: &LrRule) -> f64 {
    (rule.intercept + rule.n_slope * n_act_nonemb.ln() + rule.e_slope * experts.ln()).exp()
}
