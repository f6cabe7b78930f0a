//! Coefficient fitting from run records.
//!
//! The joint law is fit in a transformed parameter space where every scale
//! lives in logs: `theta = [ln a, alpha, delta, gamma, ln b, beta, omega,
//! zeta, ln c, ln e_start, ln(e_max - e_start)]`. The last entry stores the
//! gap rather than `e_max` itself so the saturation ceiling stays above the
//! onset by construction. Predictions are evaluated as a three-way
//! log-sum-exp, so the objective stays finite for seeds that put one term
//! hundreds of log units above the others.
//!
//! The objective is a Huber penalty on log-loss residuals, weighted per run,
//! plus a small quadratic decay on every component except `ln c` (the
//! irreducible-loss scale is left free because every record pushes on it).
//! Optimization restarts from a lattice of sign/scale seed combinations and
//! keeps the restart with the best held-out score; ties go to the earlier
//! seed so refits are reproducible.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::RunRecord;
use crate::law::{ChinchillaCoefficients, LrRule, ScalingCoefficients};
use crate::lbfgs;
use crate::numeric::logsumexp3;
use crate::par;

/// Length of the joint-law parameter vector.
pub const THETA_LEN: usize = 11;

/// Joint-law parameters in fit space; see the module docs for the layout.
pub type Theta = [f64; THETA_LEN];

/// Single-expert-count parameters in fit space:
/// `[ln m, mu, ln n, nu, ln c]`.
pub type ChinchillaTheta = [f64; 5];

/// Validation records held out by [`split_holdout`].
pub const HOLDOUT_SIZE: usize = 30;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("record {index} has no observed loss")]
    MissingLoss { index: usize },
    #[error("record {index} is unusable: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("need at least {need} records to hold out {HOLDOUT_SIZE}, got {got}")]
    TooFewRecords { got: usize, need: usize },
    #[error("weights length {got} does not match record count {want}")]
    WeightCount { got: usize, want: usize },
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("every optimizer restart diverged; no usable seed")]
    NoUsableSeed,
}

/// Knobs for [`fit`] and [`fit_separate_chinchilla`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Huber transition point on log-loss residuals.
    pub huber_delta: f64,
    /// Quadratic decay strength (applied to all of theta except `ln c`).
    pub weight_decay: f64,
    /// Scale on the first, history-free descent direction.
    pub first_step: f64,
    pub max_iterations: u32,
    /// Curvature pairs retained by the optimizer.
    pub history: usize,
    /// Relative-improvement stopping threshold.
    pub rel_tol: f64,
    /// How many grid seeds to try (the whole grid when it has fewer).
    pub grid_sample: usize,
    /// Seed for the grid subsample draw.
    pub seed: u64,
    /// Replaces the built-in seed lattice when set.
    pub init_grid: Option<Vec<Theta>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            huber_delta: 0.01,
            weight_decay: 1e-5,
            first_step: 1e-4,
            max_iterations: 2000,
            history: 10,
            rel_tol: 1e-10,
            grid_sample: 100,
            seed: 0,
            init_grid: None,
        }
    }
}

/// Joint fit result. Residuals are `predicted - observed` log loss, ordered
/// by the canonical record order (ascending `n_act`, `tokens`, `experts`,
/// loss), so reports from permuted inputs are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: ScalingCoefficients,
    /// Root-mean-square log-loss residual on the training split.
    pub rmse_train: f64,
    /// Same statistic on the held-out split.
    pub rmse_val: f64,
    /// `rmse_train + rmse_val`, the restart-selection criterion.
    pub score: f64,
    /// Root-mean-square residual on raw (unlogged) loss, training split.
    pub rmse_train_raw: f64,
    pub rmse_val_raw: f64,
    pub per_record_residuals: Vec<f64>,
    pub iterations: u32,
    pub converged: bool,
    /// Position of the winning restart within the sampled seed list.
    pub seed_index: usize,
}

/// Per-expert-count fit result from [`fit_separate_chinchilla`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub coefficients: ChinchillaCoefficients,
    pub rmse_train: f64,
    pub rmse_val: f64,
    pub iterations: u32,
    pub converged: bool,
    pub seed_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparateFitReport {
    pub groups: BTreeMap<u64, GroupFit>,
    /// Pooled over every training record under its own group's fit.
    pub rmse_train: f64,
    /// Pooled over every held-out record under its own group's fit.
    pub rmse_val: f64,
}

pub fn coefficients_to_theta(c: &ScalingCoefficients) -> Theta {
    [
        c.a.ln(),
        c.alpha,
        c.delta,
        c.gamma,
        c.b.ln(),
        c.beta,
        c.omega,
        c.zeta,
        c.c.ln(),
        c.e_start.ln(),
        (c.e_max - c.e_start).ln(),
    ]
}

pub fn theta_to_coefficients(theta: &Theta) -> ScalingCoefficients {
    let e_start = theta[9].exp();
    ScalingCoefficients {
        a: theta[0].exp(),
        alpha: theta[1],
        delta: theta[2],
        gamma: theta[3],
        b: theta[4].exp(),
        beta: theta[5],
        omega: theta[6],
        zeta: theta[7],
        c: theta[8].exp(),
        e_start,
        e_max: e_start + theta[10].exp(),
    }
}

/// Predicted log loss at one point, evaluated in fit space.
///
/// Degenerate theta (for example a non-positive expert-scaling gap) yields
/// NaN rather than an error; the objective maps such seeds to infinity.
pub fn predict_log_loss(theta: &Theta, log_n: f64, log_d: f64, experts: f64) -> f64 {
    let [la, al, de, ga, lb, be, om, ze, lc, ls, ld] = *theta;
    let es = ls.exp();
    let em = es + ld.exp();
    let k = 1.0 / (1.0 / es - 1.0 / em);
    let u = experts - 1.0 + k;
    let le = u.ln() + em.ln() - (u + em).ln();
    logsumexp3(
        la + de * le + (al + ga * le) * log_n,
        lb + om * le + (be + ze * le) * log_d,
        lc,
    )
}

/// Huber penalty: quadratic inside `delta`, linear outside.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a > delta {
        delta * (a - 0.5 * delta)
    } else {
        0.5 * residual * residual
    }
}

/// Per-run weights: `min(loss) / loss`, so the best run weighs 1 and noisier
/// high-loss runs weigh less. A record's `weight_override` replaces its
/// derived weight (the minimum is still taken over all observed losses).
pub fn run_weights(records: &[RunRecord]) -> Result<Vec<f64>, FitError> {
    if records.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let mut min_loss = f64::INFINITY;
    for (i, r) in records.iter().enumerate() {
        let l = r.observed_loss.ok_or(FitError::MissingLoss { index: i })?;
        if !(l.is_finite() && l > 0.0) {
            return Err(FitError::InvalidRecord {
                index: i,
                reason: format!("observed loss {l} is not positive and finite"),
            });
        }
        min_loss = min_loss.min(l);
    }
    Ok(records
        .iter()
        .map(|r| match r.weight_override {
            Some(w) => w,
            None => min_loss / r.observed_loss.expect("losses were checked above"),
        })
        .collect())
}

/// Splits records into (train, validation): the `HOLDOUT_SIZE` lowest-loss
/// records are held out, with ties broken by `(n_act, tokens, experts)` and
/// finally input position. Both halves keep their input order.
pub fn split_holdout(records: &[RunRecord]) -> Result<(Vec<RunRecord>, Vec<RunRecord>), FitError> {
    for (i, r) in records.iter().enumerate() {
        if r.observed_loss.is_none() {
            return Err(FitError::MissingLoss { index: i });
        }
    }
    if records.len() <= HOLDOUT_SIZE {
        return Err(FitError::TooFewRecords {
            got: records.len(),
            need: HOLDOUT_SIZE + 1,
        });
    }
    let loss = |i: usize| records[i].observed_loss.expect("checked above");
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&i, &j| {
        loss(i)
            .total_cmp(&loss(j))
            .then_with(|| records[i].n_act.cmp(&records[j].n_act))
            .then_with(|| records[i].tokens.total_cmp(&records[j].tokens))
            .then_with(|| records[i].experts.cmp(&records[j].experts))
            .then_with(|| i.cmp(&j))
    });
    let held: HashSet<usize> = order[..HOLDOUT_SIZE].iter().copied().collect();
    let mut train = Vec::with_capacity(records.len() - HOLDOUT_SIZE);
    let mut val = Vec::with_capacity(HOLDOUT_SIZE);
    for (i, r) in records.iter().enumerate() {
        if held.contains(&i) {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, val))
}

/// The built-in restart lattice: every combination of three choices per
/// parameter (term scales 30/100/300, exponents -0.05/-0.25/-0.5, curvature
/// and expert shapes -0.5/0/0.5, offset 0.5/1/2), with the expert-scaling
/// onset seeded at 2 and the ceiling gap at 510.
pub fn init_grid() -> Vec<Theta> {
    let scales = [30.0f64.ln(), 100.0f64.ln(), 300.0f64.ln()];
    let exponents = [-0.05, -0.25, -0.5];
    let shapes = [-0.5, 0.0, 0.5];
    let offsets = [0.5f64.ln(), 0.0, 2.0f64.ln()];
    let ls = 2.0f64.ln();
    let ld = 510.0f64.ln();
    let mut grid = Vec::with_capacity(3usize.pow(9));
    for &la in &scales {
        for &al in &exponents {
            for &de in &shapes {
                for &ga in &shapes {
                    for &lb in &scales {
                        for &be in &exponents {
                            for &om in &shapes {
                                for &ze in &shapes {
                                    for &lc in &offsets {
                                        grid.push([la, al, de, ga, lb, be, om, ze, lc, ls, ld]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    grid
}

fn init_grid_chinchilla() -> Vec<ChinchillaTheta> {
    let scales = [30.0f64.ln(), 100.0f64.ln(), 300.0f64.ln()];
    let exponents = [-0.05, -0.25, -0.5];
    let offsets = [0.5f64.ln(), 0.0, 2.0f64.ln()];
    let mut grid = Vec::with_capacity(3usize.pow(5));
    for &lm in &scales {
        for &mu in &exponents {
            for &ln_n in &scales {
                for &nu in &exponents {
                    for &lc in &offsets {
                        grid.push([lm, mu, ln_n, nu, lc]);
                    }
                }
            }
        }
    }
    grid
}

/// Weighted Huber objective over records. Degenerate theta maps to infinity
/// rather than an error so optimizer line searches can step past it.
pub fn objective(
    theta: &Theta,
    records: &[RunRecord],
    weights: &[f64],
    config: &FitConfig,
) -> Result<f64, FitError> {
    if weights.len() != records.len() {
        return Err(FitError::WeightCount {
            got: weights.len(),
            want: records.len(),
        });
    }
    let p = prepare(records, Some(weights))?;
    Ok(objective_core(theta, &p, config.huber_delta, config.weight_decay).0)
}

/// Objective value together with its analytic gradient.
pub fn objective_gradient(
    theta: &Theta,
    records: &[RunRecord],
    weights: &[f64],
    config: &FitConfig,
) -> Result<(f64, Theta), FitError> {
    if weights.len() != records.len() {
        return Err(FitError::WeightCount {
            got: weights.len(),
            want: records.len(),
        });
    }
    let p = prepare(records, Some(weights))?;
    Ok(objective_core(
        theta,
        &p,
        config.huber_delta,
        config.weight_decay,
    ))
}

/// Root-mean-square log-loss residual of `theta` over `records`.
pub fn rmse(theta: &Theta, records: &[RunRecord]) -> Result<f64, FitError> {
    if records.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let p = prepare(records, None)?;
    Ok(rmse_prepared(theta, &p))
}

/// Fits the joint law. Needs at least 11 records spanning at least two
/// expert counts, and enough records to hold out a validation split.
pub fn fit(records: &[RunRecord], config: &FitConfig) -> Result<FitReport, FitError> {
    if records.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let distinct: BTreeSet<u64> = records.iter().map(|r| r.experts).collect();
    if records.len() < THETA_LEN || distinct.len() < 2 {
        return Err(FitError::Underdetermined(format!(
            "the joint law needs at least {THETA_LEN} records spanning at least 2 expert \
             counts; got {} record(s) over {} expert count(s)",
            records.len(),
            distinct.len()
        )));
    }
    let sorted = canonical_order(records);
    let (train, val) = split_holdout(&sorted)?;
    let weights = run_weights(&train)?;
    let p_train = prepare(&train, Some(&weights))?;
    let p_val = prepare(&val, None)?;

    let built_in;
    let grid: &[Theta] = match &config.init_grid {
        Some(g) if g.is_empty() => return Err(FitError::Config("init_grid is empty".into())),
        Some(g) => g,
        None => {
            built_in = init_grid();
            &built_in
        }
    };
    if config.grid_sample == 0 {
        return Err(FitError::Config("grid_sample is zero".into()));
    }
    let picks = subsample_indices(grid.len(), config.grid_sample, config.seed);
    let opts = optimizer_options(config);
    let (hd, wd) = (config.huber_delta, config.weight_decay);

    let jobs: Vec<(usize, Theta)> = picks
        .iter()
        .enumerate()
        .map(|(si, &g)| (si, grid[g]))
        .collect();
    let results = par::map_collect(jobs, |(si, theta0)| {
        let out = lbfgs::minimize(|th| objective_core(th, &p_train, hd, wd), theta0, &opts);
        let rt = rmse_prepared(&out.x, &p_train);
        let rv = rmse_prepared(&out.x, &p_val);
        (si, out, rt, rv)
    });

    let mut best: Option<(f64, usize, lbfgs::Outcome<THETA_LEN>, f64, f64)> = None;
    for (si, out, rt, rv) in results {
        let score = rt + rv;
        if !score.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bs, bsi, ..)) => match score.total_cmp(bs) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => si < *bsi,
                std::cmp::Ordering::Greater => false,
            },
        };
        if better {
            best = Some((score, si, out, rt, rv));
        }
    }
    let Some((score, seed_index, out, rmse_train, rmse_val)) = best else {
        return Err(FitError::NoUsableSeed);
    };

    let p_all = prepare(&sorted, None)?;
    let per_record_residuals = (0..p_all.len())
        .map(|i| {
            predict_log_loss(&out.x, p_all.ln_n[i], p_all.ln_d[i], p_all.experts[i])
                - p_all.ln_loss[i]
        })
        .collect();
    Ok(FitReport {
        coefficients: theta_to_coefficients(&out.x),
        rmse_train,
        rmse_val,
        score,
        rmse_train_raw: rmse_raw(&out.x, &p_train),
        rmse_val_raw: rmse_raw(&out.x, &p_val),
        per_record_residuals,
        iterations: out.iterations,
        converged: out.converged,
        seed_index,
    })
}

/// Fits an independent `m N^mu + n D^nu + c` law per expert count, with the
/// same holdout, weighting, and restart machinery as [`fit`]. Every expert
/// group needs at least 5 training records.
pub fn fit_separate_chinchilla(
    records: &[RunRecord],
    config: &FitConfig,
) -> Result<SeparateFitReport, FitError> {
    if records.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let sorted = canonical_order(records);
    let (train, val) = split_holdout(&sorted)?;

    let mut train_groups: BTreeMap<u64, Vec<RunRecord>> = BTreeMap::new();
    for r in &train {
        train_groups.entry(r.experts).or_default().push(r.clone());
    }
    let mut val_groups: BTreeMap<u64, Vec<RunRecord>> = BTreeMap::new();
    for r in &val {
        if !train_groups.contains_key(&r.experts) {
            return Err(FitError::Underdetermined(format!(
                "expert count {} appears only in the holdout split",
                r.experts
            )));
        }
        val_groups.entry(r.experts).or_default().push(r.clone());
    }
    for (&e, g) in &train_groups {
        if g.len() < 5 {
            return Err(FitError::Underdetermined(format!(
                "expert count {e} has {} training record(s); need at least 5",
                g.len()
            )));
        }
    }
    if config.grid_sample == 0 {
        return Err(FitError::Config("grid_sample is zero".into()));
    }

    let grid = init_grid_chinchilla();
    // one shared subsample so every group tries the same restarts
    let picks = subsample_indices(grid.len(), config.grid_sample, config.seed);
    let opts = optimizer_options(config);
    let (hd, wd) = (config.huber_delta, config.weight_decay);

    let mut groups = BTreeMap::new();
    let mut sq_train = 0.0;
    let mut n_train = 0usize;
    let mut sq_val = 0.0;
    let mut n_val = 0usize;
    for (&e, group_train) in &train_groups {
        let weights = run_weights(group_train)?;
        let p_train = prepare(group_train, Some(&weights))?;
        let empty = Vec::new();
        let group_val = val_groups.get(&e).unwrap_or(&empty);
        let p_val = prepare(group_val, None)?;

        let jobs: Vec<(usize, ChinchillaTheta)> = picks
            .iter()
            .enumerate()
            .map(|(si, &g)| (si, grid[g]))
            .collect();
        let results = par::map_collect(jobs, |(si, theta0)| {
            let out = lbfgs::minimize(|th| chinchilla_core(th, &p_train, hd, wd), theta0, &opts);
            let rt = rmse5(&out.x, &p_train);
            let rv = rmse5(&out.x, &p_val);
            (si, out, rt, rv)
        });
        let mut best: Option<(f64, usize, lbfgs::Outcome<5>, f64, f64)> = None;
        for (si, out, rt, rv) in results {
            let score = rt + rv;
            if !score.is_finite() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bs, bsi, ..)) => match score.total_cmp(bs) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Equal => si < *bsi,
                    std::cmp::Ordering::Greater => false,
                },
            };
            if better {
                best = Some((score, si, out, rt, rv));
            }
        }
        let Some((_, seed_index, out, rmse_train, rmse_val)) = best else {
            return Err(FitError::NoUsableSeed);
        };

        for i in 0..p_train.len() {
            let r = predict5(&out.x, p_train.ln_n[i], p_train.ln_d[i]) - p_train.ln_loss[i];
            sq_train += r * r;
        }
        n_train += p_train.len();
        for i in 0..p_val.len() {
            let r = predict5(&out.x, p_val.ln_n[i], p_val.ln_d[i]) - p_val.ln_loss[i];
            sq_val += r * r;
        }
        n_val += p_val.len();

        groups.insert(
            e,
            GroupFit {
                coefficients: theta5_to_chinchilla(&out.x),
                rmse_train,
                rmse_val,
                iterations: out.iterations,
                converged: out.converged,
                seed_index,
            },
        );
    }

    Ok(SeparateFitReport {
        groups,
        rmse_train: (sq_train / n_train.max(1) as f64).sqrt(),
        rmse_val: if n_val == 0 {
            0.0
        } else {
            (sq_val / n_val as f64).sqrt()
        },
    })
}

/// Ordinary least squares for the peak-learning-rate rule
/// `ln lr = intercept + n_slope ln N + e_slope ln E` over
/// `(n_act_nonemb, experts, best_lr)` observations. With a single expert
/// count in the data the expert term drops out (`e_slope = 0`).
pub fn fit_lr_rule(points: &[(f64, f64, f64)]) -> Result<LrRule, FitError> {
    if points.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    if points.len() < 3 {
        return Err(FitError::Underdetermined(format!(
            "the learning-rate rule needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut rows = Vec::with_capacity(points.len());
    for (i, &(n, e, lr)) in points.iter().enumerate() {
        if !(n.is_finite() && n > 0.0)
            || !(e.is_finite() && e >= 1.0)
            || !(lr.is_finite() && lr > 0.0)
        {
            return Err(FitError::InvalidRecord {
                index: i,
                reason: format!("({n}, {e}, {lr}) is outside the positive domain"),
            });
        }
        rows.push((n.ln(), e.ln(), lr.ln()));
    }
    let distinct_n = count_distinct(rows.iter().map(|r| r.0));
    if distinct_n < 2 {
        return Err(FitError::Underdetermined(
            "the learning-rate rule needs at least 2 distinct model sizes".into(),
        ));
    }
    let distinct_e = count_distinct(rows.iter().map(|r| r.1));

    if distinct_e < 2 {
        // single expert count: plain line in ln N
        let n = rows.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(x, _, y) in &rows {
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let det = n * sxx - sx * sx;
        if det.abs() < 1e-12 * (n * sxx).abs().max(1.0) {
            return Err(FitError::Underdetermined(
                "model sizes are too close to separate slope from intercept".into(),
            ));
        }
        let n_slope = (n * sxy - sx * sy) / det;
        let intercept = (sy - n_slope * sx) / n;
        return Ok(LrRule {
            intercept,
            n_slope,
            e_slope: 0.0,
        });
    }

    // normal equations for [1, ln N, ln E]
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &(x, z, y) in &rows {
        let row = [1.0, x, z];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            b[i] += row[i] * y;
        }
    }
    let beta = solve3(a, b).ok_or_else(|| {
        FitError::Underdetermined("model sizes and expert counts are collinear in logs".into())
    })?;
    Ok(LrRule {
        intercept: beta[0],
        n_slope: beta[1],
        e_slope: beta[2],
    })
}

struct Prepared {
    ln_n: Vec<f64>,
    ln_d: Vec<f64>,
    experts: Vec<f64>,
    ln_loss: Vec<f64>,
    weights: Vec<f64>,
}

impl Prepared {
    fn len(&self) -> usize {
        self.ln_n.len()
    }
}

fn prepare(records: &[RunRecord], weights: Option<&[f64]>) -> Result<Prepared, FitError> {
    let mut p = Prepared {
        ln_n: Vec::with_capacity(records.len()),
        ln_d: Vec::with_capacity(records.len()),
        experts: Vec::with_capacity(records.len()),
        ln_loss: Vec::with_capacity(records.len()),
        weights: Vec::with_capacity(records.len()),
    };
    for (i, r) in records.iter().enumerate() {
        let loss = r.observed_loss.ok_or(FitError::MissingLoss { index: i })?;
        if !(loss.is_finite() && loss > 0.0) {
            return Err(FitError::InvalidRecord {
                index: i,
                reason: format!("observed loss {loss} is not positive and finite"),
            });
        }
        if r.n_act == 0 || r.experts == 0 {
            return Err(FitError::InvalidRecord {
                index: i,
                reason: "active parameters and experts must be at least 1".into(),
            });
        }
        if !(r.tokens.is_finite() && r.tokens > 0.0) {
            return Err(FitError::InvalidRecord {
                index: i,
                reason: format!("token count {} is not positive and finite", r.tokens),
            });
        }
        p.ln_n.push((r.n_act as f64).ln());
        p.ln_d.push(r.tokens.ln());
        p.experts.push(r.experts as f64);
        p.ln_loss.push(loss.ln());
        p.weights.push(weights.map_or(1.0, |w| w[i]));
    }
    Ok(p)
}

/// Canonical record order used for residual reporting and to make fits
/// invariant to input permutation.
fn canonical_order(records: &[RunRecord]) -> Vec<RunRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| {
        a.n_act
            .cmp(&b.n_act)
            .then_with(|| a.tokens.total_cmp(&b.tokens))
            .then_with(|| a.experts.cmp(&b.experts))
            .then_with(|| cmp_opt(a.observed_loss, b.observed_loss))
            .then_with(|| cmp_opt(a.weight_override, b.weight_override))
    });
    v
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
    }
}

fn count_distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| a == b);
    v.len()
}

fn optimizer_options(config: &FitConfig) -> lbfgs::Options {
    lbfgs::Options {
        max_iterations: config.max_iterations,
        history: config.history,
        first_step: config.first_step,
        rel_tol: config.rel_tol,
    }
}

/// Deterministic sorted k-subset of `0..n`.
fn subsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    picks
}

const BAD: (f64, Theta) = (f64::INFINITY, [0.0; THETA_LEN]);

fn objective_core(
    theta: &Theta,
    p: &Prepared,
    huber_delta: f64,
    weight_decay: f64,
) -> (f64, Theta) {
    if theta.iter().any(|v| !v.is_finite()) {
        return BAD;
    }
    let [la, al, de, ga, lb, be, om, ze, lc, ls, ld] = *theta;
    // reject scales the exp/reciprocal chain cannot represent
    if ls.abs() > 300.0 || ld > 300.0 {
        return BAD;
    }
    let es = ls.exp();
    let em = es + if ld > -745.0 { ld.exp() } else { 0.0 };
    let f = 1.0 / es - 1.0 / em;
    if !(f > 0.0 && f.is_finite()) {
        return BAD;
    }
    let k = 1.0 / f;
    let dk_des = (k * k) / (es * es);
    let dk_dem = -(k * k) / (em * em);

    let mut value = 0.0;
    let mut g = [0.0f64; THETA_LEN];
    for i in 0..p.len() {
        let (ln_n, ln_d) = (p.ln_n[i], p.ln_d[i]);
        let u = p.experts[i] - 1.0 + k;
        let le = u.ln() + em.ln() - (u + em).ln();

        let t1 = la + de * le + (al + ga * le) * ln_n;
        let t2 = lb + om * le + (be + ze * le) * ln_d;
        let mx = t1.max(t2).max(lc);
        let z1 = (t1 - mx).exp();
        let z2 = (t2 - mx).exp();
        let z3 = (lc - mx).exp();
        let zs = z1 + z2 + z3;
        let predicted = mx + zs.ln();
        let (s1, s2, s3) = (z1 / zs, z2 / zs, z3 / zs);

        let r = predicted - p.ln_loss[i];
        let w = p.weights[i];
        let (hub, hp) = if r.abs() > huber_delta {
            (
                huber_delta * (r.abs() - 0.5 * huber_delta),
                huber_delta.copysign(r),
            )
        } else {
            (0.5 * r * r, r)
        };
        value += w * hub;
        let hp = w * hp;

        let dle_du = 1.0 / u - 1.0 / (u + em);
        let dle_dem = dle_du * dk_dem + (1.0 / em - 1.0 / (u + em));
        let dle_dls = (dle_du * dk_des + dle_dem) * es;
        let dle_dld = dle_dem * (em - es);

        g[0] += hp * s1;
        g[1] += hp * s1 * ln_n;
        g[2] += hp * s1 * le;
        g[3] += hp * s1 * le * ln_n;
        g[4] += hp * s2;
        g[5] += hp * s2 * ln_d;
        g[6] += hp * s2 * le;
        g[7] += hp * s2 * le * ln_d;
        g[8] += hp * s3;
        let through_le = hp * (s1 * (de + ga * ln_n) + s2 * (om + ze * ln_d));
        g[9] += through_le * dle_dls;
        g[10] += through_le * dle_dld;
    }

    for (j, t) in theta.iter().enumerate() {
        if j != 8 {
            value += weight_decay * t * t;
            g[j] += 2.0 * weight_decay * t;
        }
    }
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BAD;
    }
    (value, g)
}

const BAD5: (f64, ChinchillaTheta) = (f64::INFINITY, [0.0; 5]);

fn chinchilla_core(
    theta: &ChinchillaTheta,
    p: &Prepared,
    huber_delta: f64,
    weight_decay: f64,
) -> (f64, ChinchillaTheta) {
    if theta.iter().any(|v| !v.is_finite()) {
        return BAD5;
    }
    let [lm, mu, ln_coef, nu, lc] = *theta;
    let mut value = 0.0;
    let mut g = [0.0f64; 5];
    for i in 0..p.len() {
        let (ln_n, ln_d) = (p.ln_n[i], p.ln_d[i]);
        let t1 = lm + mu * ln_n;
        let t2 = ln_coef + nu * ln_d;
        let mx = t1.max(t2).max(lc);
        let z1 = (t1 - mx).exp();
        let z2 = (t2 - mx).exp();
        let z3 = (lc - mx).exp();
        let zs = z1 + z2 + z3;
        let predicted = mx + zs.ln();
        let (s1, s2, s3) = (z1 / zs, z2 / zs, z3 / zs);

        let r = predicted - p.ln_loss[i];
        let w = p.weights[i];
        let (hub, hp) = if r.abs() > huber_delta {
            (
                huber_delta * (r.abs() - 0.5 * huber_delta),
                huber_delta.copysign(r),
            )
        } else {
            (0.5 * r * r, r)
        };
        value += w * hub;
        let hp = w * hp;
        g[0] += hp * s1;
        g[1] += hp * s1 * ln_n;
        g[2] += hp * s2;
        g[3] += hp * s2 * ln_d;
        g[4] += hp * s3;
    }
    for (j, t) in theta.iter().enumerate() {
        if j != 4 {
            value += weight_decay * t * t;
            g[j] += 2.0 * weight_decay * t;
        }
    }
    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BAD5;
    }
    (value, g)
}

fn predict5(theta: &ChinchillaTheta, ln_n: f64, ln_d: f64) -> f64 {
    logsumexp3(
        theta[0] + theta[1] * ln_n,
        theta[2] + theta[3] * ln_d,
        theta[4],
    )
}

fn theta5_to_chinchilla(theta: &ChinchillaTheta) -> ChinchillaCoefficients {
    ChinchillaCoefficients {
        m: theta[0].exp(),
        mu: theta[1],
        n: theta[2].exp(),
        nu: theta[3],
        c: theta[4].exp(),
    }
}

fn rmse_prepared(theta: &Theta, p: &Prepared) -> f64 {
    if p.len() == 0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for i in 0..p.len() {
        let r = predict_log_loss(theta, p.ln_n[i], p.ln_d[i], p.experts[i]) - p.ln_loss[i];
        sq += r * r;
    }
    (sq / p.len() as f64).sqrt()
}

fn rmse5(theta: &ChinchillaTheta, p: &Prepared) -> f64 {
    if p.len() == 0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for i in 0..p.len() {
        let r = predict5(theta, p.ln_n[i], p.ln_d[i]) - p.ln_loss[i];
        sq += r * r;
    }
    (sq / p.len() as f64).sqrt()
}

fn rmse_raw(theta: &Theta, p: &Prepared) -> f64 {
    if p.len() == 0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for i in 0..p.len() {
        let r =
            predict_log_loss(theta, p.ln_n[i], p.ln_d[i], p.experts[i]).exp() - p.ln_loss[i].exp();
        sq += r * r;
    }
    (sq / p.len() as f64).sqrt()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..3 {
        let mut piv = col;
        for row in col + 1..3 {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (entry, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *entry -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c in row + 1..3 {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}
