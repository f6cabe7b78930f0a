use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use moe_scaling::dataio::{
    bundled_experiment_grid, parse_runs, serialize_runs, synthesize, RunFormat, RunRecord,
};
use moe_scaling::fitting::{fit, FitConfig};
use moe_scaling::law::{self, LrRule, ScalingCoefficients};
use moe_scaling::planner::{
    compute_optimal, flops_savings, inference_optimal, isoflop_curve, memory_optimal,
    optimal_experts, rule_of_thumb_compare, BindingConstraint, BudgetSpec, IsoflopPoint,
    PlanResult, RuleOfThumbReport, Verdict,
};

const SCHEMA_VERSION: u32 = 1;

/// Scaling-law calculator for dense and mixture-of-experts language models.
#[derive(Debug, Parser)]
#[command(name = "moe-scaling", version)]
struct Cli {
    /// JSON file with a fitted coefficient set; defaults to the bundled set.
    #[arg(
        long,
        global = true,
        env = "MOE_SCALING_COEFFICIENTS",
        value_name = "FILE"
    )]
    coefficients: Option<PathBuf>,
    /// Output encoding.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RunsFormat {
    Csv,
    Json,
}

impl From<RunsFormat> for RunFormat {
    fn from(f: RunsFormat) -> RunFormat {
        match f {
            RunsFormat::Csv => RunFormat::Csv,
            RunsFormat::Json => RunFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict loss for a model size, token count, and expert count.
    Eval {
        /// Active parameters per token.
        #[arg(long)]
        n_act: f64,
        /// Training tokens.
        #[arg(long)]
        tokens: f64,
        /// Expert count; 1 is dense and fractional values are allowed.
        #[arg(long, default_value_t = 1.0)]
        experts: f64,
    },
    /// Collapse the joint law to a two-term power law at one expert count.
    Reduce {
        #[arg(long, default_value_t = 1.0)]
        experts: f64,
    },
    /// Peak learning rate for a model size and expert count.
    Lr {
        /// Active non-embedding parameters.
        #[arg(long)]
        n_act_nonemb: f64,
        #[arg(long, default_value_t = 1.0)]
        experts: f64,
        /// Log-space intercept of the rule.
        #[arg(long, allow_negative_numbers = true, default_value_t = LrRule::bundled().intercept)]
        intercept: f64,
        /// Slope in ln(active non-embedding parameters).
        #[arg(long, allow_negative_numbers = true, default_value_t = LrRule::bundled().n_slope)]
        n_slope: f64,
        /// Slope in ln(experts).
        #[arg(long, allow_negative_numbers = true, default_value_t = LrRule::bundled().e_slope)]
        e_slope: f64,
    },
    /// Fit coefficients to run records and report holdout quality.
    Fit {
        /// Run-record file; format comes from the extension unless overridden.
        #[arg(long, value_name = "FILE")]
        runs: PathBuf,
        #[arg(long, value_enum)]
        runs_format: Option<RunsFormat>,
        /// Seed for the restart subsample.
        #[arg(long, default_value_t = FitConfig::default().seed)]
        seed: u64,
        /// How many restarts to draw from the seed lattice.
        #[arg(long, default_value_t = FitConfig::default().grid_sample)]
        grid_sample: usize,
        #[arg(long, default_value_t = FitConfig::default().weight_decay)]
        weight_decay: f64,
        #[arg(long, default_value_t = FitConfig::default().huber_delta)]
        huber_delta: f64,
        #[arg(long, default_value_t = FitConfig::default().max_iterations)]
        max_iterations: u32,
    },
    /// Loss-minimizing model size and token count for a training budget.
    PlanCompute {
        /// Training budget in FLOPs.
        #[arg(long)]
        flops: f64,
        #[arg(long, default_value_t = 1)]
        experts: u64,
    },
    /// Training-budget plan under a serving-memory ceiling.
    PlanMemory {
        #[arg(long)]
        flops: f64,
        #[arg(long, default_value_t = 1)]
        experts: u64,
        /// Ceiling on weights plus KV cache; accepts B, KB/MB/GB/TB, and KiB/MiB/GiB/TiB.
        #[arg(long, value_parser = parse_memory_arg)]
        memory: u64,
        /// Context length the KV cache is sized for.
        #[arg(long, default_value_t = 0)]
        kv_tokens: u64,
        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,
    },
    /// Plan when lifetime inference tokens share the training budget.
    PlanInference {
        #[arg(long)]
        flops: f64,
        #[arg(long, default_value_t = 1)]
        experts: u64,
        /// Lifetime inference tokens charged against the budget.
        #[arg(long)]
        inference_tokens: f64,
        #[arg(long, value_parser = parse_memory_arg)]
        memory: Option<u64>,
        #[arg(long, default_value_t = 0)]
        kv_tokens: u64,
        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,
    },
    /// Sweep expert counts and keep the lowest predicted loss.
    OptimalExperts {
        #[arg(long)]
        flops: f64,
        /// Candidate expert counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        choices: Vec<u64>,
        #[arg(long, default_value_t = 0.0)]
        inference_tokens: f64,
        #[arg(long, value_parser = parse_memory_arg)]
        memory: Option<u64>,
        #[arg(long, default_value_t = 0)]
        kv_tokens: u64,
        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,
    },
    /// Loss along a fixed-budget token sweep, ready for plotting.
    Isoflop {
        #[arg(long)]
        flops: f64,
        #[arg(long, default_value_t = 1)]
        experts: u64,
        /// Lowest token count; defaults to 1/32 of the optimum.
        #[arg(long)]
        tokens_min: Option<f64>,
        /// Highest token count; defaults to 32x the optimum.
        #[arg(long)]
        tokens_max: Option<f64>,
        /// Grid size, log-spaced inclusive of both ends.
        #[arg(long, default_value_t = 64)]
        points: usize,
    },
    /// Fraction of the dense training budget an expert count saves.
    Savings {
        /// Budgets in FLOPs.
        #[arg(long, value_delimiter = ',', required = true)]
        flops: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        experts: Vec<f64>,
    },
    /// Dense model versus the memory-matched expert swap at equal total size.
    RuleOfThumb {
        /// Total parameters of the dense model.
        #[arg(long)]
        n_total: f64,
        #[arg(long)]
        experts: u64,
        /// Dense training tokens; defaults to the compute-optimal frontier.
        #[arg(long)]
        dense_tokens: Option<f64>,
    },
    /// Generate synthetic run records from a configuration grid.
    Synth {
        /// Log-loss noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid file; defaults to the bundled experiment grid.
        #[arg(long, value_name = "FILE")]
        grid: Option<PathBuf>,
        #[arg(long, value_enum)]
        grid_format: Option<RunsFormat>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    let format = cli.format;
    match cli.command {
        Command::Eval {
            n_act,
            tokens,
            experts,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let loss = law::loss(n_act, tokens, experts, &coeffs)?;
            let out = EvalOut {
                schema_version: SCHEMA_VERSION,
                n_act,
                tokens,
                experts,
                loss,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => Ok(csv_table(
                    &["n_act", "tokens", "experts", "loss"],
                    &[vec![num(n_act), num(tokens), num(experts), num(loss)]],
                )),
            }
        }
        Command::Reduce { experts } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let red = law::reduce_to_chinchilla(&coeffs, experts)?;
            let out = ReduceOut {
                schema_version: SCHEMA_VERSION,
                experts,
                m: red.m,
                mu: red.mu,
                n: red.n,
                nu: red.nu,
                c: red.c,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => Ok(csv_table(
                    &["experts", "m", "mu", "n", "nu", "c"],
                    &[vec![
                        num(experts),
                        num(red.m),
                        num(red.mu),
                        num(red.n),
                        num(red.nu),
                        num(red.c),
                    ]],
                )),
            }
        }
        Command::Lr {
            n_act_nonemb,
            experts,
            intercept,
            n_slope,
            e_slope,
        } => {
            if !(n_act_nonemb.is_finite() && n_act_nonemb > 0.0) {
                bail!("active non-embedding parameters must be finite and positive");
            }
            if !(experts.is_finite() && experts >= 1.0) {
                bail!("experts must be finite and at least 1");
            }
            let rule = LrRule {
                intercept,
                n_slope,
                e_slope,
            };
            let peak_lr = law::peak_learning_rate(n_act_nonemb, experts, &rule);
            let out = LrOut {
                schema_version: SCHEMA_VERSION,
                n_act_nonemb,
                experts,
                intercept,
                n_slope,
                e_slope,
                peak_lr,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => Ok(csv_table(
                    &[
                        "n_act_nonemb",
                        "experts",
                        "intercept",
                        "n_slope",
                        "e_slope",
                        "peak_lr",
                    ],
                    &[vec![
                        num(n_act_nonemb),
                        num(experts),
                        num(intercept),
                        num(n_slope),
                        num(e_slope),
                        num(peak_lr),
                    ]],
                )),
            }
        }
        Command::Fit {
            runs,
            runs_format,
            seed,
            grid_sample,
            weight_decay,
            huber_delta,
            max_iterations,
        } => {
            let records = load_runs(&runs, runs_format)?;
            let config = FitConfig {
                seed,
                grid_sample,
                weight_decay,
                huber_delta,
                max_iterations,
                ..FitConfig::default()
            };
            let report = fit(&records, &config)?;
            let out = FitOut {
                schema_version: SCHEMA_VERSION,
                coefficients: report.coefficients,
                rmse_train: report.rmse_train,
                rmse_val: report.rmse_val,
                score: report.score,
                iterations: report.iterations,
                converged: report.converged,
                seed_index: report.seed_index,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => {
                    let c = &out.coefficients;
                    Ok(csv_table(
                        &[
                            "a",
                            "alpha",
                            "delta",
                            "gamma",
                            "b",
                            "beta",
                            "omega",
                            "zeta",
                            "e_start",
                            "e_max",
                            "c",
                            "rmse_train",
                            "rmse_val",
                            "score",
                            "iterations",
                            "converged",
                            "seed_index",
                        ],
                        &[vec![
                            num(c.a),
                            num(c.alpha),
                            num(c.delta),
                            num(c.gamma),
                            num(c.b),
                            num(c.beta),
                            num(c.omega),
                            num(c.zeta),
                            num(c.e_start),
                            num(c.e_max),
                            num(c.c),
                            num(out.rmse_train),
                            num(out.rmse_val),
                            num(out.score),
                            out.iterations.to_string(),
                            out.converged.to_string(),
                            out.seed_index.to_string(),
                        ]],
                    ))
                }
            }
        }
        Command::PlanCompute { flops, experts } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let budget = BudgetSpec::new(flops);
            let plan = inference_optimal(&budget, experts, &coeffs)?;
            render_plan(&plan, format)
        }
        Command::PlanMemory {
            flops,
            experts,
            memory,
            kv_tokens,
            bytes_per_element,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let budget = BudgetSpec {
                memory_cap: Some(memory),
                kv_tokens,
                bytes_per_element,
                ..BudgetSpec::new(flops)
            };
            let plan = memory_optimal(&budget, experts, &coeffs)?;
            render_plan(&plan, format)
        }
        Command::PlanInference {
            flops,
            experts,
            inference_tokens,
            memory,
            kv_tokens,
            bytes_per_element,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let budget = BudgetSpec {
                inference_tokens,
                memory_cap: memory,
                kv_tokens,
                bytes_per_element,
                ..BudgetSpec::new(flops)
            };
            let plan = inference_optimal(&budget, experts, &coeffs)?;
            render_plan(&plan, format)
        }
        Command::OptimalExperts {
            flops,
            choices,
            inference_tokens,
            memory,
            kv_tokens,
            bytes_per_element,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let budget = BudgetSpec {
                inference_tokens,
                memory_cap: memory,
                kv_tokens,
                bytes_per_element,
                expert_choices: choices,
                ..BudgetSpec::new(flops)
            };
            let choice = optimal_experts(&budget, &coeffs)?;
            let out = ChoiceOut {
                schema_version: SCHEMA_VERSION,
                experts: choice.experts,
                saturated: choice.saturated,
                plan: choice.plan,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => {
                    let mut header = vec!["experts", "saturated"];
                    header.extend(&PLAN_COLUMNS[1..]);
                    let mut fields = vec![out.experts.to_string(), out.saturated.to_string()];
                    fields.extend(plan_fields(&out.plan).into_iter().skip(1));
                    Ok(csv_table(&header, &[fields]))
                }
            }
        }
        Command::Isoflop {
            flops,
            experts,
            tokens_min,
            tokens_max,
            points,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            if points < 2 {
                bail!("the token grid needs at least 2 points");
            }
            let (lo, hi) = match (tokens_min, tokens_max) {
                (Some(lo), Some(hi)) => (lo, hi),
                (lo, hi) => {
                    let (_, d_star) = compute_optimal(flops, experts as f64, &coeffs)?;
                    (
                        lo.unwrap_or((d_star / 32.0).max(1.0)),
                        hi.unwrap_or((d_star * 32.0).min(flops / 6.0)),
                    )
                }
            };
            if !(lo.is_finite() && lo >= 1.0 && hi > lo) {
                bail!("need 1 <= tokens-min < tokens-max, got {lo} and {hi}");
            }
            let (lln, lhn) = (lo.ln(), hi.ln());
            let grid: Vec<f64> = (0..points)
                .map(|i| (lln + (lhn - lln) * i as f64 / (points - 1) as f64).exp())
                .collect();
            let curve = isoflop_curve(flops, experts, &grid, &coeffs)?;
            let out = IsoflopOut {
                schema_version: SCHEMA_VERSION,
                flops,
                experts,
                points: curve,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => Ok(csv_table(
                    &["tokens", "n_act", "n_total", "loss", "memory_bytes"],
                    &out.points
                        .iter()
                        .map(|p| {
                            vec![
                                num(p.tokens),
                                num(p.n_act),
                                num(p.n_total),
                                num(p.loss),
                                num(p.memory_bytes),
                            ]
                        })
                        .collect::<Vec<_>>(),
                )),
            }
        }
        Command::Savings { flops, experts } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let mut rows = Vec::with_capacity(flops.len() * experts.len());
            for &f in &flops {
                for &e in &experts {
                    rows.push(SavingsRow {
                        flops: f,
                        experts: e,
                        savings: flops_savings(f, e, &coeffs)?,
                    });
                }
            }
            let out = SavingsOut {
                schema_version: SCHEMA_VERSION,
                rows,
            };
            match format {
                OutputFormat::Json => to_json(&out),
                OutputFormat::Csv => Ok(csv_table(
                    &["flops", "experts", "savings"],
                    &out.rows
                        .iter()
                        .map(|r| vec![num(r.flops), num(r.experts), num(r.savings)])
                        .collect::<Vec<_>>(),
                )),
            }
        }
        Command::RuleOfThumb {
            n_total,
            experts,
            dense_tokens,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let report = rule_of_thumb_compare(n_total, experts, dense_tokens, &coeffs)?;
            match format {
                OutputFormat::Json => to_json(&RuleOut {
                    schema_version: SCHEMA_VERSION,
                    report: &report,
                }),
                OutputFormat::Csv => Ok(csv_table(
                    &[
                        "n_total",
                        "experts",
                        "dense_tokens",
                        "loss_dense",
                        "d_model",
                        "n_blocks",
                        "n_heads",
                        "moe_n_act",
                        "moe_tokens",
                        "loss_moe",
                        "verdict",
                        "compute_matched_tokens",
                        "compute_matched_loss",
                        "compute_matched_verdict",
                        "outside_guaranteed_range",
                    ],
                    &[vec![
                        num(report.n_total),
                        report.experts.to_string(),
                        num(report.dense_tokens),
                        num(report.loss_dense),
                        report.moe_shape.d_model.to_string(),
                        report.moe_shape.n_blocks.to_string(),
                        report.moe_shape.n_heads.to_string(),
                        report.moe_n_act.to_string(),
                        num(report.moe_tokens),
                        num(report.loss_moe),
                        verdict_name(report.verdict).to_string(),
                        num(report.compute_matched_tokens),
                        num(report.compute_matched_loss),
                        verdict_name(report.compute_matched_verdict).to_string(),
                        report.outside_guaranteed_range.to_string(),
                    ]],
                )),
            }
        }
        Command::Synth {
            sigma,
            seed,
            grid,
            grid_format,
        } => {
            let coeffs = load_coefficients(cli.coefficients.as_deref())?;
            let owned;
            let grid_records: &[RunRecord] = match grid {
                Some(path) => {
                    owned = load_runs(&path, grid_format)?;
                    &owned
                }
                None => bundled_experiment_grid(),
            };
            let rows = synthesize(grid_records, &coeffs, sigma, seed)?;
            match format {
                OutputFormat::Json => {
                    let runs: serde_json::Value =
                        serde_json::from_str(&serialize_runs(&rows, RunFormat::Json)?)?;
                    to_json(&SynthOut {
                        schema_version: SCHEMA_VERSION,
                        runs,
                    })
                }
                OutputFormat::Csv => Ok(serialize_runs(&rows, RunFormat::Csv)?),
            }
        }
    }
}

#[derive(Serialize)]
struct EvalOut {
    schema_version: u32,
    n_act: f64,
    tokens: f64,
    experts: f64,
    loss: f64,
}

#[derive(Serialize)]
struct ReduceOut {
    schema_version: u32,
    experts: f64,
    m: f64,
    mu: f64,
    n: f64,
    nu: f64,
    c: f64,
}

#[derive(Serialize)]
struct LrOut {
    schema_version: u32,
    n_act_nonemb: f64,
    experts: f64,
    intercept: f64,
    n_slope: f64,
    e_slope: f64,
    peak_lr: f64,
}

#[derive(Serialize)]
struct FitOut {
    schema_version: u32,
    coefficients: ScalingCoefficients,
    rmse_train: f64,
    rmse_val: f64,
    score: f64,
    iterations: u32,
    converged: bool,
    seed_index: usize,
}

#[derive(Serialize)]
struct PlanOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    plan: &'a PlanResult,
}

#[derive(Serialize)]
struct ChoiceOut {
    schema_version: u32,
    experts: u64,
    saturated: bool,
    plan: PlanResult,
}

#[derive(Serialize)]
struct IsoflopOut {
    schema_version: u32,
    flops: f64,
    experts: u64,
    points: Vec<IsoflopPoint>,
}

#[derive(Serialize)]
struct SavingsRow {
    flops: f64,
    experts: f64,
    savings: f64,
}

#[derive(Serialize)]
struct SavingsOut {
    schema_version: u32,
    rows: Vec<SavingsRow>,
}

#[derive(Serialize)]
struct RuleOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a RuleOfThumbReport,
}

#[derive(Serialize)]
struct SynthOut {
    schema_version: u32,
    runs: serde_json::Value,
}

const PLAN_COLUMNS: [&str; 14] = [
    "experts",
    "n_act",
    "n_total",
    "tokens",
    "predicted_loss",
    "memory_bytes",
    "flops_train",
    "flops_inference",
    "binding_constraint",
    "d_model",
    "n_blocks",
    "n_heads",
    "shape_n_act",
    "shape_n_total",
];

fn plan_fields(p: &PlanResult) -> Vec<String> {
    vec![
        p.experts.to_string(),
        num(p.n_act),
        num(p.n_total),
        num(p.tokens),
        num(p.predicted_loss),
        p.memory_bytes.to_string(),
        num(p.flops_train),
        num(p.flops_inference),
        binding_name(p.binding_constraint).to_string(),
        p.shape.d_model.to_string(),
        p.shape.n_blocks.to_string(),
        p.shape.n_heads.to_string(),
        p.shape_n_act.to_string(),
        p.shape_n_total.to_string(),
    ]
}

fn render_plan(plan: &PlanResult, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => to_json(&PlanOut {
            schema_version: SCHEMA_VERSION,
            plan,
        }),
        OutputFormat::Csv => Ok(csv_table(&PLAN_COLUMNS, &[plan_fields(plan)])),
    }
}

/// Mirrors the serde names so both output formats spell values identically.
fn binding_name(b: BindingConstraint) -> &'static str {
    match b {
        BindingConstraint::Compute => "compute",
        BindingConstraint::Memory => "memory",
        BindingConstraint::None => "none",
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::MoeWins => "moe_wins",
        Verdict::DenseWins => "dense_wins",
        Verdict::Tie => "tie",
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn csv_table<H: AsRef<str>>(header: &[H], rows: &[Vec<String>]) -> String {
    let mut out = header
        .iter()
        .map(|h| h.as_ref())
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Shortest decimal form that round-trips, matching the JSON encoding.
fn num(v: f64) -> String {
    format!("{v}")
}

fn load_coefficients(path: Option<&Path>) -> Result<ScalingCoefficients> {
    let Some(path) = path else {
        return Ok(ScalingCoefficients::bundled());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let coeffs: ScalingCoefficients =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    coeffs.validate()?;
    Ok(coeffs)
}

fn load_runs(path: &Path, format: Option<RunsFormat>) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let fmt = format
        .map(RunFormat::from)
        .unwrap_or_else(|| guess_format(path));
    let payload = match fmt {
        RunFormat::Json => unwrap_runs(&text)?,
        RunFormat::Csv => text,
    };
    Ok(parse_runs(&payload, fmt)?)
}

fn guess_format(path: &Path) -> RunFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => RunFormat::Json,
        _ => RunFormat::Csv,
    }
}

/// Accepts either a bare record array or the wrapper object `synth` emits.
fn unwrap_runs(text: &str) -> Result<String> {
    let value: serde_json::Value =
        serde_json::from_str(text).context("runs file is not valid JSON")?;
    match value.get("runs") {
        Some(runs) => Ok(serde_json::to_string(runs)?),
        None => Ok(text.to_string()),
    }
}

fn parse_memory_arg(s: &str) -> Result<u64, String> {
    parse_memory(s).map_err(|e| e.to_string())
}

/// Byte count with an optional unit suffix: decimal KB/MB/GB/TB, binary
/// KiB/MiB/GiB/TiB, or B. Bare numbers (scientific notation included) are
/// bytes.
fn parse_memory(s: &str) -> Result<u64> {
    const UNITS: [(&str, f64); 9] = [
        ("KIB", 1024.0),
        ("MIB", 1048576.0),
        ("GIB", 1073741824.0),
        ("TIB", 1099511627776.0),
        ("KB", 1e3),
        ("MB", 1e6),
        ("GB", 1e9),
        ("TB", 1e12),
        ("B", 1.0),
    ];
    let upper = s.trim().to_ascii_uppercase();
    if upper.is_empty() {
        bail!("empty memory amount");
    }
    let (mantissa, scale) = UNITS
        .iter()
        .find_map(|(suffix, scale)| {
            upper
                .strip_suffix(suffix)
                .map(|rest| (rest.trim_end().to_string(), *scale))
        })
        .unwrap_or((upper.clone(), 1.0));
    let value: f64 = mantissa
        .parse()
        .map_err(|_| anyhow::anyhow!("cannot parse memory amount {s:?}"))?;
    let bytes = value * scale;
    if !(bytes.is_finite() && bytes >= 0.0 && bytes <= u64::MAX as f64) {
        bail!("memory amount {s:?} is out of range");
    }
    Ok(bytes.round() as u64)
}
