//! Budget planners built on the loss law.
//!
//! Every entry point reduces the joint law at a fixed expert count to the
//! three-term `m N^mu + n D^nu + c` form and optimizes over that. The
//! compute-only allocation has a closed form; adding an inference volume
//! makes the token budget depend on model size, so the planner switches to a
//! golden-section search over ln N. A memory cap is handled by inverting the
//! bytes model to the largest admissible width and clamping.
//!
//! Planned sizes are continuous: `n_act` and `tokens` satisfy the FLOP
//! identity exactly, while `shape` reports the nearest standard geometry for
//! humans (its exact counts ride along as `shape_n_act` / `shape_n_total`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{self, AccountingError, ModelShape, D_VOCAB, WIDTH_BRACKET};
use crate::law::{self, ChinchillaCoefficients, LawError, ScalingCoefficients};
use crate::numeric;
use crate::par;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("training budget {flops:e} FLOPs is below the 6 FLOP floor")]
    BudgetTooSmall { flops: f64 },
    #[error("loss is not jointly decreasing: mu = {mu}, nu = {nu} must both be negative")]
    DegenerateExponents { mu: f64, nu: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no crossing: {0}")]
    NoCrossing(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

/// Constraints a plan was optimized under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Training budget in FLOPs.
    pub train_flops: f64,
    /// Lifetime inference tokens charged against the same budget at
    /// 2 FLOPs per active parameter per token. Zero means training only.
    pub inference_tokens: f64,
    /// Serving-memory ceiling in bytes (weights + KV cache), if any.
    pub memory_cap: Option<u64>,
    /// Context length the KV cache is sized for.
    pub kv_tokens: u64,
    pub bytes_per_element: u64,
    /// Candidate expert counts for [`optimal_experts`].
    pub expert_choices: Vec<u64>,
}

impl BudgetSpec {
    pub fn new(train_flops: f64) -> Self {
        BudgetSpec {
            train_flops,
            inference_tokens: 0.0,
            memory_cap: None,
            kv_tokens: 0,
            bytes_per_element: 2,
            expert_choices: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

/// Which constraint pinned the returned plan. `Compute` is the pure
/// training-budget allocation, `Memory` means the cap clipped the model,
/// and `None` marks an interior optimum of the joint training-plus-inference
/// trade-off where no inequality bound is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingConstraint {
    Compute,
    Memory,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub experts: u64,
    /// Continuous active-parameter optimum.
    pub n_act: f64,
    /// Continuous total parameters at the same width.
    pub n_total: f64,
    /// Training tokens; satisfies 6 n_act tokens + 2 n_act inference = F.
    pub tokens: f64,
    pub predicted_loss: f64,
    /// Weights plus KV bytes at the continuous width (exactly the cap when
    /// memory is the binding constraint).
    pub memory_bytes: u64,
    pub flops_train: f64,
    pub flops_inference: f64,
    pub binding_constraint: BindingConstraint,
    /// Nearest standard shape to `n_act`, for reporting.
    pub shape: ModelShape,
    pub shape_n_act: u64,
    pub shape_n_total: u64,
}

/// Winner of an expert-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertChoice {
    pub experts: u64,
    /// True when the largest candidate won, i.e. the sweep never turned
    /// over; read the answer as "at least this many".
    pub saturated: bool,
    pub plan: PlanResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsoflopPoint {
    pub tokens: f64,
    pub n_act: f64,
    /// Continuous total parameters at the width matching `n_act`.
    pub n_total: f64,
    pub loss: f64,
    /// Weight bytes at 2 bytes per element, no KV term; continuous, meant
    /// for curve labels rather than capacity checks.
    pub memory_bytes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MoeWins,
    DenseWins,
    Tie,
}

/// Output of [`rule_of_thumb_compare`]: a dense model against the
/// memory-matched replacement (same total parameters, E times the data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOfThumbReport {
    pub n_total: f64,
    pub experts: u64,
    pub dense_tokens: f64,
    pub loss_dense: f64,
    pub moe_shape: ModelShape,
    pub moe_n_act: u64,
    pub moe_tokens: f64,
    pub loss_moe: f64,
    pub verdict: Verdict,
    /// Token count that equalizes training FLOPs instead of memory.
    pub compute_matched_tokens: f64,
    pub compute_matched_loss: f64,
    pub compute_matched_verdict: Verdict,
    /// The memory-matched guarantee is only claimed for 2 <= E <= 8; other
    /// expert counts are evaluated anyway and flagged.
    pub outside_guaranteed_range: bool,
}

/// Loss-minimizing continuous (n_act, tokens) under 6 N D = F.
pub fn compute_optimal(
    flops: f64,
    experts: f64,
    coeffs: &ScalingCoefficients,
) -> Result<(f64, f64), PlannerError> {
    if !(flops.is_finite() && flops >= 6.0) {
        return Err(PlannerError::BudgetTooSmall { flops });
    }
    let red = law::reduce_to_chinchilla(coeffs, experts)?;
    compute_optimal_reduced(flops, &red)
}

fn compute_optimal_reduced(
    flops: f64,
    red: &ChinchillaCoefficients,
) -> Result<(f64, f64), PlannerError> {
    let ap = -red.mu;
    let bp = -red.nu;
    if !(ap > 0.0 && bp > 0.0) {
        return Err(PlannerError::DegenerateExponents {
            mu: red.mu,
            nu: red.nu,
        });
    }
    let g = (ap * red.m / (bp * red.n)).powf(1.0 / (ap + bp));
    let f6 = flops / 6.0;
    let n = g * f6.powf(bp / (ap + bp));
    let d = f6.powf(ap / (ap + bp)) / g;
    Ok((n, d))
}

/// Best plan under the training budget given a serving-memory cap; the cap
/// clips the compute-optimal model when it does not fit.
pub fn memory_optimal(
    budget: &BudgetSpec,
    experts: u64,
    coeffs: &ScalingCoefficients,
) -> Result<PlanResult, PlannerError> {
    let cap = budget
        .memory_cap
        .ok_or_else(|| PlannerError::InvalidInput("memory planning needs a memory cap".into()))?;
    if experts == 0 {
        return Err(PlannerError::InvalidInput(
            "experts must be at least 1".into(),
        ));
    }
    let red = reduced(coeffs, experts)?;
    let (n_opt, _) = compute_optimal(budget.train_flops, experts as f64, coeffs)?;
    let n_cap = cap_active(budget, experts, cap)?;
    if n_opt <= n_cap {
        plan_from(
            n_opt,
            0.0,
            budget,
            experts,
            BindingConstraint::Compute,
            &red,
        )
    } else {
        let mut plan = plan_from(n_cap, 0.0, budget, experts, BindingConstraint::Memory, &red)?;
        // the bisection lands within rounding of the cap; report it exactly
        plan.memory_bytes = cap;
        Ok(plan)
    }
}

/// Best plan when lifetime inference tokens are charged against the same
/// budget: minimizes loss over N with D = (F - 2 N D_inf) / (6 N), honoring
/// the memory cap when one is set. With no inference volume this reduces to
/// the memory- or compute-optimal plan.
pub fn inference_optimal(
    budget: &BudgetSpec,
    experts: u64,
    coeffs: &ScalingCoefficients,
) -> Result<PlanResult, PlannerError> {
    if experts == 0 {
        return Err(PlannerError::InvalidInput(
            "experts must be at least 1".into(),
        ));
    }
    let f = budget.train_flops;
    let d_inf = budget.inference_tokens;
    if !(d_inf.is_finite() && d_inf >= 0.0) {
        return Err(PlannerError::InvalidInput(format!(
            "inference tokens must be finite and non-negative, got {d_inf}"
        )));
    }
    if d_inf == 0.0 {
        if budget.memory_cap.is_some() {
            return memory_optimal(budget, experts, coeffs);
        }
        let red = reduced(coeffs, experts)?;
        let (n_opt, _) = compute_optimal(f, experts as f64, coeffs)?;
        return plan_from(
            n_opt,
            0.0,
            budget,
            experts,
            BindingConstraint::Compute,
            &red,
        );
    }
    if !(f.is_finite() && f >= 6.0) {
        return Err(PlannerError::BudgetTooSmall { flops: f });
    }

    let smallest = smallest_standard_active();
    if 2.0 * smallest * d_inf >= f {
        return Err(PlannerError::Infeasible(format!(
            "serving {d_inf:e} tokens on even the smallest standard model costs the whole \
             {f:e} FLOP budget"
        )));
    }

    let red = reduced(coeffs, experts)?;
    let objective = |ln_n: f64| -> f64 {
        let n = ln_n.exp();
        let d = (f - 2.0 * n * d_inf) / (6.0 * n);
        if !(d >= 1.0) {
            return f64::INFINITY;
        }
        red.loss(n, d)
    };

    // search bracket in ln N, widened tenfold whenever the optimum pins an
    // edge; hard floor at one parameter, hard cap where tokens run out
    let floor = 0.0;
    let cap_ln = (f / (2.0 * d_inf)).min(1e14).ln();
    let mut lo = 1e6f64.ln().max(floor);
    let mut hi = 1e13f64.ln().min(cap_ln);
    if !(hi > lo) {
        return Err(PlannerError::Infeasible(format!(
            "inference volume {d_inf:e} leaves no searchable model range under {f:e} FLOPs"
        )));
    }
    let mut arg = 0.5 * (lo + hi);
    for _ in 0..12 {
        let (x, _) = numeric::golden_min(objective, lo, hi, 1e-9);
        arg = x;
        let edge = 1e-6 * (hi - lo);
        if x - lo <= edge && lo > floor {
            lo = (lo - std::f64::consts::LN_10).max(floor);
        } else if hi - x <= edge && hi < cap_ln {
            hi = (hi + std::f64::consts::LN_10).min(cap_ln);
        } else {
            break;
        }
    }
    let n_star = arg.exp();

    if let Some(cap) = budget.memory_cap {
        let n_cap = cap_active(budget, experts, cap)?;
        if n_star > n_cap {
            let mut plan = plan_from(
                n_cap,
                d_inf,
                budget,
                experts,
                BindingConstraint::Memory,
                &red,
            )?;
            plan.memory_bytes = cap;
            return Ok(plan);
        }
    }
    plan_from(
        n_star,
        d_inf,
        budget,
        experts,
        BindingConstraint::None,
        &red,
    )
}

/// Sweeps `budget.expert_choices` through [`inference_optimal`] and keeps
/// the lowest predicted loss. Choices whose plan is infeasible are skipped;
/// exact ties go to the smaller expert count.
pub fn optimal_experts(
    budget: &BudgetSpec,
    coeffs: &ScalingCoefficients,
) -> Result<ExpertChoice, PlannerError> {
    let mut choices = budget.expert_choices.clone();
    choices.sort_unstable();
    choices.dedup();
    if choices.is_empty() {
        return Err(PlannerError::InvalidInput(
            "no expert choices to sweep".into(),
        ));
    }
    if choices[0] == 0 {
        return Err(PlannerError::InvalidInput(
            "experts must be at least 1".into(),
        ));
    }
    let max_choice = *choices.last().expect("nonempty");
    let plans = par::map_collect(choices, |e| (e, inference_optimal(budget, e, coeffs)));
    let mut best: Option<(u64, PlanResult)> = None;
    let mut skipped = 0usize;
    for (e, outcome) in plans {
        match outcome {
            Ok(plan) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => plan.predicted_loss < b.predicted_loss,
                };
                if better {
                    best = Some((e, plan));
                }
            }
            Err(PlannerError::Infeasible(_)) => skipped += 1,
            Err(other) => return Err(other),
        }
    }
    match best {
        Some((experts, plan)) => Ok(ExpertChoice {
            experts,
            saturated: experts == max_choice,
            plan,
        }),
        None => Err(PlannerError::Infeasible(format!(
            "every expert choice ({skipped}) is infeasible under this budget"
        ))),
    }
}

/// Loss along a fixed training budget as the token split varies. Token
/// values must keep the implied model at or above one parameter.
pub fn isoflop_curve(
    flops: f64,
    experts: u64,
    token_grid: &[f64],
    coeffs: &ScalingCoefficients,
) -> Result<Vec<IsoflopPoint>, PlannerError> {
    if !(flops.is_finite() && flops >= 6.0) {
        return Err(PlannerError::BudgetTooSmall { flops });
    }
    if experts == 0 {
        return Err(PlannerError::InvalidInput(
            "experts must be at least 1".into(),
        ));
    }
    if token_grid.is_empty() {
        return Err(PlannerError::InvalidInput("token grid is empty".into()));
    }
    let red = reduced(coeffs, experts)?;
    let e = experts as f64;
    let dv = D_VOCAB as f64;
    let mut points = Vec::with_capacity(token_grid.len());
    for (i, &tokens) in token_grid.iter().enumerate() {
        if !(tokens.is_finite() && tokens >= 1.0) {
            return Err(PlannerError::InvalidInput(format!(
                "token grid entry {i} ({tokens}) must be a finite count of at least 1"
            )));
        }
        let n_act = flops / (6.0 * tokens);
        if n_act < 1.0 {
            return Err(PlannerError::InvalidInput(format!(
                "token grid entry {i} ({tokens:e}) leaves under one parameter of model"
            )));
        }
        let d = width_for_active(n_act)?;
        let n_total = accounting::total_params_real(d, e, dv);
        points.push(IsoflopPoint {
            tokens,
            n_act,
            n_total,
            loss: red.loss(n_act, tokens),
            memory_bytes: 2.0 * n_total,
        });
    }
    Ok(points)
}

/// Fraction of a dense training budget an E-expert model saves at equal
/// loss: finds F' with compute-optimal MoE loss at F' equal to the dense
/// optimum at F, and returns 1 - F'/F. Dense input returns zero.
pub fn flops_savings(
    flops: f64,
    experts: f64,
    coeffs: &ScalingCoefficients,
) -> Result<f64, PlannerError> {
    if !(flops.is_finite() && flops >= 6.0) {
        return Err(PlannerError::BudgetTooSmall { flops });
    }
    if !(experts >= 1.0 && experts.is_finite()) {
        return Err(PlannerError::InvalidInput(format!(
            "experts must be finite and at least 1, got {experts}"
        )));
    }
    if experts == 1.0 {
        return Ok(0.0);
    }
    let dense_red = reduced(coeffs, 1)?;
    let (nd, dd) = compute_optimal_reduced(flops, &dense_red)?;
    let dense_loss = dense_red.loss(nd, dd);
    let moe_red = law::reduce_to_chinchilla(coeffs, experts)?;
    let moe_loss = |ln_f: f64| -> Result<f64, PlannerError> {
        let (n, d) = compute_optimal_reduced(ln_f.exp(), &moe_red)?;
        Ok(moe_red.loss(n, d))
    };

    let (mut lo, mut hi) = ((flops * 1e-6).ln(), flops.ln());
    let at_lo = moe_loss(lo)? - dense_loss;
    let at_hi = moe_loss(hi)? - dense_loss;
    if !(at_lo > 0.0 && at_hi < 0.0) {
        return Err(PlannerError::NoCrossing(format!(
            "matched-loss budget is outside [{:e}, {:e}] (endpoint gaps {at_lo:e}, {at_hi:e})",
            flops * 1e-6,
            flops
        )));
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if moe_loss(mid)? - dense_loss > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.0 - (0.5 * (lo + hi)).exp() / flops)
}

/// Evaluates the folk rule "swap a dense model for an E-expert model with
/// the same total parameters and E times the data". The dense side is taken
/// at face value; the replacement is snapped to a standard shape with the
/// same total budget. `dense_tokens` defaults to the dense compute-optimal
/// token count for `n_total`.
pub fn rule_of_thumb_compare(
    n_total: f64,
    experts: u64,
    dense_tokens: Option<f64>,
    coeffs: &ScalingCoefficients,
) -> Result<RuleOfThumbReport, PlannerError> {
    if !(n_total.is_finite() && n_total >= 1.0) {
        return Err(PlannerError::InvalidInput(format!(
            "total parameters must be finite and at least 1, got {n_total}"
        )));
    }
    if experts == 0 {
        return Err(PlannerError::InvalidInput(
            "experts must be at least 1".into(),
        ));
    }
    let dense_red = reduced(coeffs, 1)?;
    let dense_tokens = match dense_tokens {
        Some(d) => {
            if !(d.is_finite() && d >= 1.0) {
                return Err(PlannerError::InvalidInput(format!(
                    "dense tokens must be finite and at least 1, got {d}"
                )));
            }
            d
        }
        None => {
            // invert the compute-optimal frontier: which budget makes this
            // dense size optimal, and how many tokens come with it
            let ap = -dense_red.mu;
            let bp = -dense_red.nu;
            if !(ap > 0.0 && bp > 0.0) {
                return Err(PlannerError::DegenerateExponents {
                    mu: dense_red.mu,
                    nu: dense_red.nu,
                });
            }
            let g = (ap * dense_red.m / (bp * dense_red.n)).powf(1.0 / (ap + bp));
            let f6 = (n_total / g).powf((ap + bp) / bp);
            f6 / n_total
        }
    };
    let loss_dense = dense_red.loss(n_total, dense_tokens);
    let outside = !(2..=8).contains(&experts);

    if experts == 1 {
        // same model on both sides; report the snapped geometry anyway
        let inv = accounting::shape_from_total(n_total, 1, None, D_VOCAB)?;
        return Ok(RuleOfThumbReport {
            n_total,
            experts,
            dense_tokens,
            loss_dense,
            moe_shape: inv.shape,
            moe_n_act: n_total as u64,
            moe_tokens: dense_tokens,
            loss_moe: loss_dense,
            verdict: Verdict::Tie,
            compute_matched_tokens: dense_tokens,
            compute_matched_loss: loss_dense,
            compute_matched_verdict: Verdict::Tie,
            outside_guaranteed_range: outside,
        });
    }

    let moe_red = reduced(coeffs, experts)?;
    let inv = accounting::shape_from_total(n_total, experts, None, D_VOCAB)?;
    let moe_n_act = accounting::active_params(&inv.shape, D_VOCAB) as u64;
    let moe_tokens = experts as f64 * dense_tokens;
    let loss_moe = moe_red.loss(moe_n_act as f64, moe_tokens);

    // secondary comparison: match training FLOPs instead of memory
    let compute_matched_tokens = n_total * dense_tokens / moe_n_act as f64;
    let compute_matched_loss = moe_red.loss(moe_n_act as f64, compute_matched_tokens);

    Ok(RuleOfThumbReport {
        n_total,
        experts,
        dense_tokens,
        loss_dense,
        moe_shape: inv.shape,
        moe_n_act,
        moe_tokens,
        loss_moe,
        verdict: verdict(loss_moe, loss_dense),
        compute_matched_tokens,
        compute_matched_loss,
        compute_matched_verdict: verdict(compute_matched_loss, loss_dense),
        outside_guaranteed_range: outside,
    })
}

fn verdict(moe: f64, dense: f64) -> Verdict {
    if moe < dense {
        Verdict::MoeWins
    } else if moe > dense {
        Verdict::DenseWins
    } else {
        Verdict::Tie
    }
}

fn reduced(
    coeffs: &ScalingCoefficients,
    experts: u64,
) -> Result<ChinchillaCoefficients, PlannerError> {
    Ok(law::reduce_to_chinchilla(coeffs, experts as f64)?)
}

fn smallest_standard_active() -> f64 {
    let shape = ModelShape::standard(accounting::WIDTH_STEP, 1).expect("64 is a valid width");
    accounting::active_params(&shape, D_VOCAB) as f64
}

/// Largest continuous active-parameter count fitting the cap, or +inf when
/// even the widest bracketed shape fits. Errors if the smallest standard
/// width already busts the cap.
fn cap_active(budget: &BudgetSpec, experts: u64, cap: u64) -> Result<f64, PlannerError> {
    let dv = D_VOCAB as f64;
    let e = experts as f64;
    let t = budget.kv_tokens as f64;
    let bpe = budget.bytes_per_element as f64;
    if budget.bytes_per_element == 0 {
        return Err(PlannerError::InvalidInput(
            "bytes_per_element must be at least 1".into(),
        ));
    }
    let bytes = |d: f64| {
        bpe * (accounting::total_params_real(d, e, dv) + accounting::kv_cache_elements_real(d, t))
    };
    let (lo, hi) = WIDTH_BRACKET;
    let m = cap as f64;
    if bytes(lo) > m {
        return Err(PlannerError::Infeasible(format!(
            "memory cap {cap} B is below the smallest standard model with {experts} expert(s) \
             ({:.0} B at width {lo})",
            bytes(lo)
        )));
    }
    if bytes(hi) <= m {
        return Ok(f64::INFINITY);
    }
    let d =
        numeric::bisect_root(|d| bytes(d) - m, lo, hi, 1e-12).expect("endpoints straddle the cap");
    Ok(accounting::active_params_real(d, dv))
}

/// Continuous width whose standard-rule active count is `n_act`; extends
/// below the snapping bracket so tiny plans still get a width.
fn width_for_active(n_act: f64) -> Result<f64, PlannerError> {
    let dv = D_VOCAB as f64;
    let (lo, hi) = WIDTH_BRACKET;
    if n_act > accounting::active_params_real(hi, dv) {
        return Err(PlannerError::InvalidInput(format!(
            "active count {n_act:e} needs a width above {hi}"
        )));
    }
    let target = |d: f64| accounting::active_params_real(d, dv) - n_act;
    let lo = if n_act >= accounting::active_params_real(lo, dv) {
        lo
    } else {
        0.0
    };
    Ok(numeric::bisect_root(target, lo, hi, 1e-12).expect("count is monotone in width"))
}

fn plan_from(
    n_act: f64,
    inference_tokens: f64,
    budget: &BudgetSpec,
    experts: u64,
    binding: BindingConstraint,
    red: &ChinchillaCoefficients,
) -> Result<PlanResult, PlannerError> {
    let f = budget.train_flops;
    let tokens = (f - 2.0 * n_act * inference_tokens) / (6.0 * n_act);
    if !(tokens >= 1.0) {
        return Err(PlannerError::Infeasible(format!(
            "a {n_act:e}-parameter model leaves {tokens:e} training tokens under {f:e} FLOPs"
        )));
    }
    if !(n_act >= 1.0) {
        return Err(PlannerError::Infeasible(format!(
            "plan degenerated to {n_act:e} active parameters"
        )));
    }
    let d_real = width_for_active(n_act)?;
    let dv = D_VOCAB as f64;
    let e = experts as f64;
    let n_total = accounting::total_params_real(d_real, e, dv);
    let memory_real = budget.bytes_per_element as f64
        * (n_total + accounting::kv_cache_elements_real(d_real, budget.kv_tokens as f64));

    let (shape, shape_n_act, shape_n_total) = match accounting::shape_from_active(n_act, D_VOCAB) {
        Ok(inv) => {
            let shape = ModelShape {
                experts,
                ..inv.shape
            };
            let total = accounting::total_params(&shape, D_VOCAB);
            (shape, inv.achieved as u64, total as u64)
        }
        // below the smallest standard model: report the floor shape
        Err(AccountingError::NoRoot { .. }) => {
            let shape = ModelShape {
                experts,
                ..ModelShape::standard(accounting::WIDTH_STEP, 1).expect("64 is a valid width")
            };
            let act = accounting::active_params(&shape, D_VOCAB);
            let total = accounting::total_params(&shape, D_VOCAB);
            (shape, act as u64, total as u64)
        }
        Err(other) => return Err(other.into()),
    };

    Ok(PlanResult {
        experts,
        n_act,
        n_total,
        tokens,
        predicted_loss: red.loss(n_act, tokens),
        memory_bytes: memory_real as u64,
        flops_train: 6.0 * n_act * tokens,
        flops_inference: 2.0 * n_act * inference_tokens,
        binding_constraint: binding,
        shape,
        shape_n_act,
        shape_n_total,
    })
}
