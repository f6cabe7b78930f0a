use std::process::Command;

use moe_scaling::law::{self, ScalingCoefficients};
use moe_scaling::planner::compute_optimal;
use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_moe-scaling"));
    cmd.env_remove("MOE_SCALING_COEFFICIENTS");
    cmd
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&run_ok(args)).expect("valid JSON output")
}

/// Finds a field at the top level or one object deep, mirroring how the CSV
/// encoding flattens nested shapes.
fn lookup<'a>(v: &'a Value, name: &str) -> &'a Value {
    if let Some(x) = v.get(name) {
        return x;
    }
    for child in v.as_object().expect("object output").values() {
        if let Some(x) = child.as_object().and_then(|o| o.get(name)) {
            return x;
        }
    }
    panic!("no JSON field {name}")
}

#[test]
fn plan_compute_reproduces_the_closed_form() {
    let v = json(&["plan-compute", "--flops", "1e20", "--experts", "8"]);
    assert_eq!(v["schema_version"], 1);
    let (n, d) = compute_optimal(1e20, 8.0, &ScalingCoefficients::bundled()).unwrap();
    assert!((v["n_act"].as_f64().unwrap() / n - 1.0).abs() < 1e-12);
    assert!((v["tokens"].as_f64().unwrap() / d - 1.0).abs() < 1e-12);
    assert!((v["n_act"].as_f64().unwrap() / 9.9e8 - 1.0).abs() < 0.03);
    assert!((v["tokens"].as_f64().unwrap() / 1.7e10 - 1.0).abs() < 0.03);
    assert_eq!(v["binding_constraint"], "compute");
}

#[test]
fn eval_unit_inputs_collapse_to_the_expert_terms() {
    let v = json(&["eval", "--n-act", "1", "--tokens", "1", "--experts", "1"]);
    let c = ScalingCoefficients::bundled();
    let eh = law::e_hat(1.0, &c).unwrap();
    let want = c.a * eh.powf(c.delta) + c.b * eh.powf(c.omega) + c.c;
    assert_eq!(v["loss"].as_f64().unwrap(), want);
}

#[test]
fn exit_codes_separate_domain_and_usage_errors() {
    let out = bin()
        .args(["plan-compute", "--flops", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(
        msg.starts_with("error:"),
        "diagnostic goes to stderr: {msg}"
    );
    assert_eq!(msg.lines().count(), 1, "single-line diagnostic: {msg}");

    let out = bin()
        .args(["eval", "--n-act", "1", "--tokens", "1", "--nope"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn fit_runs_are_byte_identical() {
    let runs = std::env::temp_dir().join("moe_cli_fit_runs.csv");
    let text = run_ok(&[
        "synth", "--sigma", "0.005", "--seed", "7", "--format", "csv",
    ]);
    std::fs::write(&runs, &text).unwrap();
    let args = [
        "fit",
        "--runs",
        runs.to_str().unwrap(),
        "--seed",
        "7",
        "--grid-sample",
        "8",
        "--max-iterations",
        "300",
    ];
    let a = run_ok(&args);
    let b = run_ok(&args);
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert!(v["rmse_val"].as_f64().unwrap() < 0.05);
    assert!(v["coefficients"]["a"].as_f64().unwrap() > 0.0);
}

#[test]
fn fit_reads_wrapped_json_and_csv_identically() {
    let dir = std::env::temp_dir();
    let csv_path = dir.join("moe_cli_runs_eq.csv");
    let json_path = dir.join("moe_cli_runs_eq.json");
    std::fs::write(
        &csv_path,
        run_ok(&["synth", "--sigma", "0.01", "--seed", "3", "--format", "csv"]),
    )
    .unwrap();
    std::fs::write(
        &json_path,
        run_ok(&[
            "synth", "--sigma", "0.01", "--seed", "3", "--format", "json",
        ]),
    )
    .unwrap();
    let fit = |path: &std::path::Path| {
        run_ok(&[
            "fit",
            "--runs",
            path.to_str().unwrap(),
            "--grid-sample",
            "4",
            "--max-iterations",
            "200",
        ])
    };
    assert_eq!(fit(&csv_path), fit(&json_path));
}

#[test]
fn csv_and_json_encode_identical_values() {
    let cases: [&[&str]; 4] = [
        &[
            "eval",
            "--n-act",
            "1e9",
            "--tokens",
            "2e10",
            "--experts",
            "8",
        ],
        &["reduce", "--experts", "4"],
        &["plan-compute", "--flops", "1e21", "--experts", "2"],
        &[
            "rule-of-thumb",
            "--n-total",
            "1.1e9",
            "--experts",
            "4",
            "--dense-tokens",
            "8e9",
        ],
    ];
    for args in cases {
        let j = json(args);
        let mut csv_args = args.to_vec();
        csv_args.extend(["--format", "csv"]);
        let text = run_ok(&csv_args);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), row.len());
        for (name, field) in header.iter().zip(&row) {
            match lookup(&j, name) {
                Value::Number(n) => {
                    let want = n.as_f64().unwrap();
                    let got: f64 = field
                        .parse()
                        .unwrap_or_else(|_| panic!("{name} is not numeric: {field}"));
                    assert_eq!(got, want, "{name} differs between formats");
                }
                Value::String(s) => assert_eq!(field, &s.as_str(), "{name}"),
                Value::Bool(b) => assert_eq!(field.parse::<bool>().unwrap(), *b, "{name}"),
                other => panic!("unexpected JSON under {name}: {other:?}"),
            }
        }
    }
}

#[test]
fn coefficient_overrides_shift_predictions() {
    let path = std::env::temp_dir().join("moe_cli_coeffs.json");
    let mut c = ScalingCoefficients::bundled();
    c.c += 0.5;
    std::fs::write(&path, serde_json::to_string(&c).unwrap()).unwrap();

    let base = json(&["eval", "--n-act", "1e9", "--tokens", "2e10"]);
    let flagged = json(&[
        "eval",
        "--n-act",
        "1e9",
        "--tokens",
        "2e10",
        "--coefficients",
        path.to_str().unwrap(),
    ]);
    let shift = flagged["loss"].as_f64().unwrap() - base["loss"].as_f64().unwrap();
    assert!((shift - 0.5).abs() < 1e-12, "constant term shifts loss 1:1");

    let out = bin()
        .args(["eval", "--n-act", "1e9", "--tokens", "2e10"])
        .env("MOE_SCALING_COEFFICIENTS", &path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let env_v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(env_v["loss"], flagged["loss"]);
}

#[test]
fn memory_units_scale_the_cap() {
    let common = [
        "plan-memory",
        "--flops",
        "1e21",
        "--experts",
        "8",
        "--kv-tokens",
        "16384",
    ];
    let with_memory = |m: &'static str| {
        let mut args = common.to_vec();
        args.extend(["--memory", m]);
        args
    };
    assert_eq!(run_ok(&with_memory("24GB")), run_ok(&with_memory("24e9")));
    let gib = json(&with_memory("24GiB"));
    assert_eq!(gib["binding_constraint"], "memory");
    assert_eq!(gib["memory_bytes"].as_u64().unwrap(), 24 << 30);
}

#[test]
fn isoflop_emits_the_requested_grid() {
    let v = json(&[
        "isoflop",
        "--flops",
        "1e20",
        "--experts",
        "4",
        "--points",
        "33",
    ]);
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 33);
    let toks: Vec<f64> = pts.iter().map(|p| p["tokens"].as_f64().unwrap()).collect();
    assert!(toks.windows(2).all(|w| w[0] < w[1]));
    // default span is 32x each side of the optimum, 1024x end to end
    assert!((toks[32] / toks[0] / 1024.0 - 1.0).abs() < 1e-6);

    let text = run_ok(&[
        "isoflop",
        "--flops",
        "1e20",
        "--experts",
        "4",
        "--points",
        "33",
        "--format",
        "csv",
    ]);
    assert_eq!(text.lines().count(), 34);
    assert!(text.starts_with("tokens,n_act,n_total,loss,memory_bytes"));
}

#[test]
fn optimal_experts_saturates_at_the_largest_candidate() {
    let v = json(&[
        "optimal-experts",
        "--flops",
        "1e22",
        "--memory",
        "640GB",
        "--kv-tokens",
        "16384",
    ]);
    assert_eq!(v["experts"].as_u64().unwrap(), 32);
    assert_eq!(v["saturated"], Value::Bool(true));
    assert_eq!(v["plan"]["experts"].as_u64().unwrap(), 32);
}

#[test]
fn synth_wraps_json_and_counts_the_bundled_grid() {
    let v = json(&["synth", "--seed", "2"]);
    assert_eq!(v["schema_version"], 1);
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 270);
    assert!(runs.iter().all(|r| r["loss"].as_f64().is_some()));

    let noiseless = json(&["synth"]);
    let eval_one = |r: &Value| {
        json(&[
            "eval",
            "--n-act",
            &r["n_act"].as_u64().unwrap().to_string(),
            "--tokens",
            &r["tokens"].as_f64().unwrap().to_string(),
            "--experts",
            &r["experts"].as_u64().unwrap().to_string(),
        ])["loss"]
            .as_f64()
            .unwrap()
    };
    let first = &noiseless["runs"][0];
    let direct = eval_one(first);
    let synthesized = first["loss"].as_f64().unwrap();
    assert!((synthesized / direct - 1.0).abs() < 1e-12);
}
