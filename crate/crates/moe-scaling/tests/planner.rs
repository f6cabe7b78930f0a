use moe_scaling::accounting::{active_params, D_VOCAB};
use moe_scaling::law::{self, ScalingCoefficients};
use moe_scaling::planner::{
    compute_optimal, flops_savings, inference_optimal, isoflop_curve, memory_optimal,
    optimal_experts, rule_of_thumb_compare, BindingConstraint, BudgetSpec, PlannerError, Verdict,
};

fn bundled() -> ScalingCoefficients {
    ScalingCoefficients::bundled()
}

/// Published compute-optimal cells, rounded to 2-3 significant figures.
const COMPUTE_OPTIMAL_CELLS: &[(f64, u64, f64, f64)] = &[
    (1e20, 1, 1.7e9, 9.7e9),
    (1e20, 8, 990e6, 17e9),
    (1e21, 4, 4.4e9, 38e9),
    (1e22, 32, 12.2e9, 136.9e9),
];

#[test]
fn compute_optimal_matches_published_cells() {
    for &(f, e, n_want, d_want) in COMPUTE_OPTIMAL_CELLS {
        let (n, d) = compute_optimal(f, e as f64, &bundled()).unwrap();
        assert!(
            (n - n_want).abs() <= 0.03 * n_want,
            "F={f:e} E={e}: N {n:e} vs {n_want:e}"
        );
        assert!(
            (d - d_want).abs() <= 0.03 * d_want,
            "F={f:e} E={e}: D {d:e} vs {d_want:e}"
        );
    }
}

#[test]
fn compute_optimal_spends_the_whole_budget_at_a_minimum() {
    for &(f, e) in &[(1e20, 1u64), (1e21, 8), (1e23, 32)] {
        let (n, d) = compute_optimal(f, e as f64, &bundled()).unwrap();
        assert!((6.0 * n * d - f).abs() <= 1e-9 * f);

        let at = |n: f64| law::loss(n, f / (6.0 * n), e as f64, &bundled()).unwrap();
        let best = at(n);
        assert!(
            at(n * 1.05) > best,
            "loss should rise above the optimum size"
        );
        assert!(
            at(n * 0.95) > best,
            "loss should rise below the optimum size"
        );
        assert!((best - at(n)).abs() < 1e-15);
        let _ = d;
    }
}

#[test]
fn compute_optimal_rejects_tiny_budgets_and_rising_exponents() {
    assert!(matches!(
        compute_optimal(1.0, 1.0, &bundled()),
        Err(PlannerError::BudgetTooSmall { .. })
    ));
    let mut rising = bundled();
    rising.alpha = 0.2;
    rising.gamma = 0.0;
    assert!(matches!(
        compute_optimal(1e20, 1.0, &rising),
        Err(PlannerError::DegenerateExponents { .. })
    ));
}

#[test]
fn slack_memory_cap_reduces_to_the_compute_plan() {
    let mut budget = BudgetSpec::new(1e22);
    budget.memory_cap = Some(10_000_000_000_000); // 10 TB, far above the optimum
    budget.kv_tokens = 16384;
    let plan = memory_optimal(&budget, 8, &bundled()).unwrap();
    assert_eq!(plan.binding_constraint, BindingConstraint::Compute);

    let (n_opt, d_opt) = compute_optimal(1e22, 8.0, &bundled()).unwrap();
    assert!((plan.n_act - n_opt).abs() <= 1e-9 * n_opt);
    assert!((plan.tokens - d_opt).abs() <= 1e-9 * d_opt);
    assert!(plan.memory_bytes < budget.memory_cap.unwrap());
    assert!((plan.flops_train - 1e22).abs() <= 1e-9 * 1e22);
    assert_eq!(plan.flops_inference, 0.0);
}

#[test]
fn tight_memory_cap_clips_the_model_to_the_cap() {
    let cap = 24_000_000_000; // 24 GB
    let mut budget = BudgetSpec::new(1e22);
    budget.memory_cap = Some(cap);
    budget.kv_tokens = 16384;
    let plan = memory_optimal(&budget, 8, &bundled()).unwrap();
    assert_eq!(plan.binding_constraint, BindingConstraint::Memory);
    assert_eq!(plan.memory_bytes, cap);

    let (n_opt, _) = compute_optimal(1e22, 8.0, &bundled()).unwrap();
    assert!(plan.n_act < n_opt);

    let unconstrained = memory_optimal(
        &BudgetSpec {
            memory_cap: Some(u64::MAX),
            ..budget.clone()
        },
        8,
        &bundled(),
    )
    .unwrap();
    assert!(plan.predicted_loss > unconstrained.predicted_loss);
}

#[test]
fn memory_cap_below_the_smallest_shape_is_infeasible() {
    let mut budget = BudgetSpec::new(1e20);
    budget.memory_cap = Some(1_000_000);
    assert!(matches!(
        memory_optimal(&budget, 1, &bundled()),
        Err(PlannerError::Infeasible(_))
    ));
}

#[test]
fn inference_volume_shifts_the_plan_toward_smaller_models() {
    let mut budget = BudgetSpec::new(1e22);
    budget.inference_tokens = 1e11;
    let with_inference = inference_optimal(&budget, 8, &bundled()).unwrap();
    assert_eq!(with_inference.binding_constraint, BindingConstraint::None);

    let (n_opt, _) = compute_optimal(1e22, 8.0, &bundled()).unwrap();
    assert!(with_inference.n_act < n_opt);

    // the budget identity covers training plus serving
    let spent = with_inference.flops_train + with_inference.flops_inference;
    assert!((spent - 1e22).abs() <= 1e-6 * 1e22);
    assert!(
        (with_inference.flops_inference - 2.0 * with_inference.n_act * 1e11).abs()
            <= 1e-6 * with_inference.flops_inference
    );
}

#[test]
fn zero_inference_volume_is_exactly_the_compute_plan() {
    let budget = BudgetSpec::new(1e21);
    let plan = inference_optimal(&budget, 4, &bundled()).unwrap();
    let (n_opt, d_opt) = compute_optimal(1e21, 4.0, &bundled()).unwrap();
    assert_eq!(plan.binding_constraint, BindingConstraint::Compute);
    assert!((plan.n_act - n_opt).abs() <= 1e-9 * n_opt);
    assert!((plan.tokens - d_opt).abs() <= 1e-9 * d_opt);
}

#[test]
fn inference_demand_can_swamp_the_budget() {
    let mut budget = BudgetSpec::new(1e10);
    budget.inference_tokens = 1e12;
    assert!(matches!(
        inference_optimal(&budget, 1, &bundled()),
        Err(PlannerError::Infeasible(_))
    ));
}

#[test]
fn plans_report_a_standard_shape_near_the_continuous_optimum() {
    let budget = BudgetSpec::new(1e21);
    let plan = inference_optimal(&budget, 4, &bundled()).unwrap();
    assert!(plan.shape.is_standard());
    assert_eq!(plan.shape.experts, 4);
    assert_eq!(
        plan.shape_n_act as u128,
        active_params(&plan.shape, D_VOCAB)
    );
    let gap = (plan.shape_n_act as f64 - plan.n_act).abs() / plan.n_act;
    assert!(gap < 0.2, "snapped shape is {gap:.3} away from the optimum");
}

/// Training-only sweep over the published budget-by-memory panel.
/// These winners are pinned against a brute-force grid search; the published
/// table itself bundles a serving-volume assumption and is checked separately.
#[test]
fn expert_sweep_winners_without_serving_volume() {
    let table: &[(f64, u64, u64)] = &[
        (1e21, 24_000_000_000, 32),
        (1e21, 80_000_000_000, 32),
        (1e21, 640_000_000_000, 32),
        (1e22, 24_000_000_000, 4),
        (1e22, 80_000_000_000, 16),
        (1e22, 640_000_000_000, 32),
        (1e23, 24_000_000_000, 1),
        (1e23, 80_000_000_000, 4),
        (1e23, 640_000_000_000, 32),
        (1e24, 24_000_000_000, 1),
        (1e24, 80_000_000_000, 1),
        (1e24, 640_000_000_000, 8),
    ];
    for &(flops, cap, want) in table {
        let mut budget = BudgetSpec::new(flops);
        budget.memory_cap = Some(cap);
        budget.kv_tokens = 16384;
        let choice = optimal_experts(&budget, &bundled()).unwrap();
        assert_eq!(choice.experts, want, "F={flops:e}, cap={cap}");
        assert_eq!(choice.saturated, want == 32, "F={flops:e}, cap={cap}");
        assert_eq!(choice.plan.experts, want);
    }
}

#[test]
fn expert_sweep_breaks_ties_toward_fewer_experts() {
    // flatten every expert-dependent term so all candidates predict the same
    // loss; the sweep must then keep the smallest
    let mut flat = bundled();
    flat.delta = 0.0;
    flat.gamma = 0.0;
    flat.omega = 0.0;
    flat.zeta = 0.0;
    let choice = optimal_experts(&BudgetSpec::new(1e21), &flat).unwrap();
    assert_eq!(choice.experts, 1);
    assert!(!choice.saturated);
}

#[test]
fn expert_sweep_rejects_empty_or_zero_choices() {
    let mut budget = BudgetSpec::new(1e21);
    budget.expert_choices = Vec::new();
    assert!(matches!(
        optimal_experts(&budget, &bundled()),
        Err(PlannerError::InvalidInput(_))
    ));
    budget.expert_choices = vec![0, 1];
    assert!(matches!(
        optimal_experts(&budget, &bundled()),
        Err(PlannerError::InvalidInput(_))
    ));
}

#[test]
fn isoflop_curve_dips_at_the_compute_optimal_tokens() {
    let f = 1e20;
    let (n_opt, d_opt) = compute_optimal(f, 1.0, &bundled()).unwrap();

    let steps = 60;
    let (lo, hi) = (1e9f64.ln(), 1e11f64.ln());
    let mut grid: Vec<f64> = (0..=steps)
        .map(|i| (lo + (hi - lo) * i as f64 / steps as f64).exp())
        .collect();
    grid.push(d_opt);
    grid.sort_by(f64::total_cmp);

    let points = isoflop_curve(f, 1, &grid, &bundled()).unwrap();
    assert_eq!(points.len(), grid.len());

    let best = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss))
        .unwrap()
        .0;
    assert!((points[best].tokens - d_opt).abs() <= 1e-9 * d_opt);
    assert!((points[best].n_act - n_opt).abs() <= 1e-9 * n_opt);
    let at_opt = law::loss(n_opt, d_opt, 1.0, &bundled()).unwrap();
    assert!((points[best].loss - at_opt).abs() <= 1e-9);

    // unimodal along the token axis, and never below the irreducible term
    for w in points[..best].windows(2) {
        assert!(w[0].loss > w[1].loss);
    }
    for w in points[best..].windows(2) {
        assert!(w[0].loss < w[1].loss);
    }
    for p in &points {
        assert!(p.loss > bundled().c);
        assert!((6.0 * p.n_act * p.tokens - f).abs() <= 1e-9 * f);
        // equal for a dense curve, up to the width-inversion rounding
        assert!(p.n_total >= p.n_act * (1.0 - 1e-9));
    }
}

#[test]
fn isoflop_curve_rejects_degenerate_grids() {
    assert!(matches!(
        isoflop_curve(1e20, 1, &[], &bundled()),
        Err(PlannerError::InvalidInput(_))
    ));
    // a token count this large leaves under one parameter
    assert!(matches!(
        isoflop_curve(1e20, 1, &[1e20], &bundled()),
        Err(PlannerError::InvalidInput(_))
    ));
    assert!(matches!(
        isoflop_curve(1e20, 0, &[1e10], &bundled()),
        Err(PlannerError::InvalidInput(_))
    ));
}

#[test]
fn flops_savings_match_the_pinned_values() {
    // crossings located independently by bisection on the matched-loss budget
    let pinned: &[(f64, f64, f64)] = &[
        (1e20, 2.0, 0.12212052735656953),
        (1e20, 4.0, 0.26295371428258296),
        (1e20, 8.0, 0.40488104365249533),
        (1e20, 16.0, 0.5335221246028177),
        (1e20, 32.0, 0.6410855469096832),
        (1e21, 8.0, 0.44852742264729184),
        (1e22, 8.0, 0.48897317100475923),
    ];
    for &(f, e, want) in pinned {
        let got = flops_savings(f, e, &bundled()).unwrap();
        assert!((got - want).abs() < 3e-6, "F={f:e} E={e}: {got} vs {want}");
    }
}

#[test]
fn flops_savings_grow_with_experts_and_stay_fractional() {
    assert_eq!(flops_savings(1e20, 1.0, &bundled()).unwrap(), 0.0);
    let mut last = 0.0;
    for e in [2.0, 4.0, 8.0, 16.0, 32.0] {
        let s = flops_savings(1e20, e, &bundled()).unwrap();
        assert!(s > last, "savings should grow with E, got {s} after {last}");
        assert!(s < 1.0);
        last = s;
    }
}

#[test]
fn no_crossing_when_experts_never_reach_dense_loss() {
    // raise the model-term scale with E so extra experts only hurt
    let mut worse = bundled();
    worse.delta = 0.5;
    worse.gamma = 0.0;
    worse.omega = 0.0;
    worse.zeta = 0.0;
    assert!(matches!(
        flops_savings(1e20, 8.0, &worse),
        Err(PlannerError::NoCrossing(_))
    ));
}

#[test]
fn rule_of_thumb_memory_swap_matches_pinned_examples() {
    let dense_total = 1.1e9;
    let dense_tokens = 8e9;

    // (experts, width, blocks, active params, predicted loss)
    let cases: &[(u64, u64, u64, u64, f64)] = &[
        (2, 1408, 22, 708_508_416, 2.62622137392849),
        (4, 1152, 18, 426_334_464, 2.597157146451277),
        (8, 960, 15, 276_205_440, 2.5605733655327034),
    ];
    for &(e, d_model, blocks, n_act, loss_want) in cases {
        let r = rule_of_thumb_compare(dense_total, e, Some(dense_tokens), &bundled()).unwrap();
        assert_eq!(r.moe_shape.d_model, d_model, "E={e}");
        assert_eq!(r.moe_shape.n_blocks, blocks, "E={e}");
        assert_eq!(r.moe_n_act, n_act, "E={e}");
        assert_eq!(r.moe_tokens, e as f64 * dense_tokens);
        assert!((r.loss_dense - 2.6662117198932913).abs() < 1e-9);
        assert!(
            (r.loss_moe - loss_want).abs() < 1e-9,
            "E={e}: {}",
            r.loss_moe
        );
        assert_eq!(r.verdict, Verdict::MoeWins);
        assert!(!r.outside_guaranteed_range);
    }
}

#[test]
fn rule_of_thumb_compute_matched_comparison() {
    let r = rule_of_thumb_compare(1.1e9, 4, Some(8e9), &bundled()).unwrap();
    let want_tokens = 1.1e9 * 8e9 / r.moe_n_act as f64;
    assert_eq!(r.compute_matched_tokens, want_tokens);
    assert!((r.compute_matched_tokens - 20641071137.988037).abs() < 1.0);
    assert!((r.compute_matched_loss - 2.641184917982674).abs() < 1e-9);
    // cheaper training still beats the dense baseline here
    assert_eq!(r.compute_matched_verdict, Verdict::MoeWins);
    assert!(r.compute_matched_loss > r.loss_moe);
}

#[test]
fn rule_of_thumb_dense_input_is_a_tie() {
    let r = rule_of_thumb_compare(1.1e9, 1, Some(8e9), &bundled()).unwrap();
    assert_eq!(r.verdict, Verdict::Tie);
    assert_eq!(r.compute_matched_verdict, Verdict::Tie);
    assert_eq!(r.loss_moe, r.loss_dense);
    assert_eq!(r.moe_tokens, r.dense_tokens);
    assert!(r.outside_guaranteed_range);
}

#[test]
fn rule_of_thumb_flags_expert_counts_outside_the_guarantee() {
    for (e, outside) in [(2u64, false), (8, false), (16, true), (32, true)] {
        let r = rule_of_thumb_compare(1.1e9, e, Some(8e9), &bundled()).unwrap();
        assert_eq!(r.outside_guaranteed_range, outside, "E={e}");
    }
}

#[test]
fn rule_of_thumb_derives_tokens_from_the_dense_frontier() {
    // leaving tokens unset should put the dense model on its own
    // compute-optimal frontier: the implied budget re-optimizes to it
    let r = rule_of_thumb_compare(1.7e9, 4, None, &bundled()).unwrap();
    let f = 6.0 * 1.7e9 * r.dense_tokens;
    let (n_opt, d_opt) = compute_optimal(f, 1.0, &bundled()).unwrap();
    assert!((n_opt - 1.7e9).abs() < 1e-6 * 1.7e9);
    assert!((d_opt - r.dense_tokens).abs() < 1e-6 * r.dense_tokens);
}

#[test]
fn budget_defaults_are_training_only() {
    let b = BudgetSpec::new(1e20);
    assert_eq!(b.train_flops, 1e20);
    assert_eq!(b.inference_tokens, 0.0);
    assert_eq!(b.memory_cap, None);
    assert_eq!(b.kv_tokens, 0);
    assert_eq!(b.bytes_per_element, 2);
    assert_eq!(b.expert_choices, vec![1, 2, 4, 8, 16, 32]);
}
