//! Summary tables over every run directory under `runs_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::commands::Ctx;
use crate::error::{CliError, Result};
use crate::run::RunDir;

#[derive(Debug, Default, Serialize)]
pub struct Summary {
    pub runs: Vec<String>,
    pub prediction: Vec<Value>,
    pub intrinsic_dimension: Vec<Value>,
    pub stage2: Vec<Value>,
    pub rollout: Vec<Value>,
    pub perturbed_rollout: Vec<Value>,
    pub probes: Vec<Value>,
}

fn runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(_) => return Ok(dirs),
    };
    for e in entries {
        let p = e.map_err(|e| CliError::io(root, e))?.path();
        if p.join("config.json").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x.abs() >= 1e-3 || x == 0.0 => format!("{x:.4}"),
        Some(x) => format!("{x:.3e}"),
        None => "-".into(),
    }
}

fn at_step(series: &Value, step: usize) -> Value {
    series
        .get(step.saturating_sub(1))
        .cloned()
        .unwrap_or(Value::Null)
}

fn mean_over(series: &Value, steps: usize) -> Value {
    let xs: Vec<f64> = series
        .as_array()
        .map(|a| a.iter().take(steps).filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    if xs.is_empty() {
        Value::Null
    } else {
        Value::from(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn collect(runs_dir: &Path) -> Result<Summary> {
    let mut s = Summary::default();
    for dir in runs(runs_dir)? {
        let run = RunDir::open(&dir);
        let name = dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        let system = run
            .read_json("config.json")?
            .and_then(|c| c["system"].as_str().map(String::from))
            .unwrap_or_default();
        s.runs.push(name.clone());
        if let Some(v) = run.read_json("evaluate.json")? {
            let r = &v["report"];
            let mut row = serde_json::json!({
                "run": name, "system": system,
                "pixel_mse": { "model": r["model_pixel_mse"], "linear": r["linear_pixel_mse"], "copy": r["copy_pixel_mse"] },
                "model_rejects": r["model_rejects"], "samples": r["samples"],
            });
            for e in r["variables"].as_array().into_iter().flatten() {
                row[e["variable"].as_str().unwrap_or("?")] = serde_json::json!({ "model": e["model"], "linear": e["linear"], "copy": e["copy"], "unit": e["unit"] });
            }
            s.prediction.push(row);
        }
        if let Some(v) = run.read_json("intdim.json")? {
            s.intrinsic_dimension.push(serde_json::json!({
                "run": name, "system": system, "true_id": v["true_id"],
                "method": v["latent"]["method"], "raw": v["latent"]["raw"], "rounded": v["latent"]["rounded"],
                "raw_frames": v["raw_frames"]["raw"],
            }));
        }
        if let Some(v) = run.read_json("stage2.json")? {
            let r = &v["report"];
            s.stage2.push(serde_json::json!({
                "run": name, "system": system, "id": r["id"],
                "val_pixel_mse": r["val_pixel_mse"], "val_stage1_pixel_mse": r["val_stage1_pixel_mse"],
                "val_valid_fraction": r["val_valid_fraction"],
            }));
        }
        if let Some(v) = run.read_json("stability.json")? {
            let steps = v["steps"].as_u64().unwrap_or(0) as usize;
            for r in v["reports"].as_array().into_iter().flatten() {
                let row = serde_json::json!({
                    "run": name, "system": system, "scheme": r["scheme"],
                    "perturbation": r["perturbation"],
                    "reject_ratio_step10": at_step(&r["reject_ratio"], 10),
                    "reject_ratio_final": at_step(&r["reject_ratio"], steps),
                    "msn_final": at_step(&r["msn_mean"], steps),
                    "pixel_mse_1_10": mean_over(&r["pixel_mse"], 10),
                    "pearson_pooled": v["pearson_reject_vs_msn"],
                });
                if r["perturbation"].is_null() {
                    s.rollout.push(row);
                } else {
                    s.perturbed_rollout.push(row);
                }
            }
        }
        if let Some(v) = run.read_json("regress.json")? {
            let c = &v["comparison"];
            for t in c["nsv"]["targets"].as_array().into_iter().flatten() {
                let var = t["variable"].as_str().unwrap_or("?");
                let pca = c["pca_latent"]["targets"]
                    .as_array()
                    .and_then(|a| a.iter().find(|x| x["variable"] == var))
                    .map(|x| x["mae"].clone())
                    .unwrap_or(Value::Null);
                s.probes.push(serde_json::json!({
                    "run": name, "system": system, "variable": var, "unit": t["unit"],
                    "nsv_mae": t["mae"], "pca_mae": pca,
                    "labeled_fraction": c["config"]["labeled_fraction"],
                }));
            }
        }
    }
    Ok(s)
}

fn table(out: &mut String, title: &str, header: &[&str], rows: Vec<Vec<String>>) {
    if rows.is_empty() {
        return;
    }
    let _ = writeln!(out, "## {title}\n");
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn s(v: &Value) -> String {
    match v {
        Value::String(x) => x.clone(),
        Value::Null => "-".into(),
        Value::Number(_) if v.is_u64() || v.is_i64() => v.to_string(),
        Value::Number(_) => num(v),
        other => other.to_string(),
    }
}

pub fn markdown(sum: &Summary) -> String {
    let mut out = String::from("# Summary\n\n");
    let mut rows = Vec::new();
    for r in &sum.prediction {
        rows.push(vec![
            s(&r["run"]),
            "pixel MSE".into(),
            s(&r["pixel_mse"]["model"]),
            s(&r["pixel_mse"]["linear"]),
            s(&r["pixel_mse"]["copy"]),
        ]);
        for v in [
            "theta1",
            "theta2",
            "z",
            "theta1_dot",
            "theta2_dot",
            "z_dot",
            "energy",
        ] {
            if r.get(v).is_some() {
                rows.push(vec![
                    s(&r["run"]),
                    format!("{v} ({})", s(&r[v]["unit"])),
                    s(&r[v]["model"]),
                    s(&r[v]["linear"]),
                    s(&r[v]["copy"]),
                ]);
            }
        }
    }
    table(
        &mut out,
        "One-step prediction",
        &["run", "metric", "model", "linear", "copy"],
        rows,
    );
    table(
        &mut out,
        "Intrinsic dimension",
        &[
            "run",
            "system",
            "method",
            "raw",
            "rounded",
            "true",
            "raw frames",
        ],
        sum.intrinsic_dimension
            .iter()
            .map(|r| {
                [
                    "run",
                    "system",
                    "method",
                    "raw",
                    "rounded",
                    "true_id",
                    "raw_frames",
                ]
                .iter()
                .map(|k| s(&r[*k]))
                .collect()
            })
            .collect(),
    );
    table(
        &mut out,
        "Stage 2 reconstruction",
        &[
            "run",
            "ID",
            "pixel MSE through NSVs",
            "stage-1 pixel MSE",
            "extractable",
        ],
        sum.stage2
            .iter()
            .map(|r| {
                [
                    "run",
                    "id",
                    "val_pixel_mse",
                    "val_stage1_pixel_mse",
                    "val_valid_fraction",
                ]
                .iter()
                .map(|k| s(&r[*k]))
                .collect()
            })
            .collect(),
    );
    let keys = [
        "run",
        "scheme",
        "perturbation",
        "reject_ratio_step10",
        "reject_ratio_final",
        "msn_final",
        "pixel_mse_1_10",
    ];
    let header = [
        "run",
        "scheme",
        "perturbation",
        "reject @10",
        "reject final",
        "M_S final",
        "pixel MSE 1-10",
    ];
    for (title, rows) in [
        ("Long-term rollout", &sum.rollout),
        ("Perturbed rollout", &sum.perturbed_rollout),
    ] {
        table(
            &mut out,
            title,
            &header,
            rows.iter()
                .map(|r| keys.iter().map(|k| s(&r[*k])).collect())
                .collect(),
        );
    }
    if let Some(r) = sum.rollout.first() {
        let _ = writeln!(
            out,
            "Pooled Pearson r (reject ratio vs M_S): {}\n",
            s(&r["pearson_pooled"])
        );
    }
    table(
        &mut out,
        "Probes",
        &["run", "variable", "unit", "NSV MAE", "PCA MAE"],
        sum.probes
            .iter()
            .map(|r| {
                ["run", "variable", "unit", "nsv_mae", "pca_mae"]
                    .iter()
                    .map(|k| s(&r[*k]))
                    .collect()
            })
            .collect(),
    );
    out
}

pub fn report_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let sum = collect(&ctx.cfg.runs_dir)?;
    ctx.run.write_text("report.md", &markdown(&sum))?;
    ctx.run.write_json("report.json", &sum)
}
