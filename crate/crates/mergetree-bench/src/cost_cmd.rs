//! The `cost` subcommand: evaluate an analytical per-tuple cost model and
//! print one CSV row per parameter value.

use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use mergetree::cost::{CostModel, CostParams};

use crate::config::{parse_key_map, KeyMap};

pub const COST_HEADER: &str = "model,parameter,step1,step2,step3,total";

const PARAM_KEYS: &[&str] = &[
    "sigma",
    "tau_copy",
    "lambda_search",
    "lambda_delete",
    "lambda_insert",
    "lambda_archive",
    "merge_work",
    "merge_ratio",
    "window",
    "fan_out",
    "archive_fan_out",
    "chain_length",
    "partitions",
    "routing_depth",
    "probe",
    "expire",
    "insert",
    "sweep",
    "sweep_values",
];

#[derive(Clone, Debug)]
struct CostSetup {
    params: CostParams,
    fan_out: f64,
    archive_fan_out: f64,
    chain_length: f64,
    partitions: f64,
    routing_depth: f64,
    direct: [f64; 3],
}

fn float(map: &KeyMap, key: &str, default: f64) -> Result<f64> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| anyhow!("{key}={v}: not a number")),
    }
}

fn setup(map: &KeyMap) -> Result<CostSetup> {
    for key in map.keys() {
        if !PARAM_KEYS.contains(&key.as_str()) {
            bail!("unknown cost parameter {key:?}");
        }
    }
    let unit = CostParams::unit();
    let params = CostParams {
        sigma: float(map, "sigma", unit.sigma)?,
        tau_copy: float(map, "tau_copy", unit.tau_copy)?,
        lambda_search: float(map, "lambda_search", unit.lambda_search)?,
        lambda_delete: float(map, "lambda_delete", unit.lambda_delete)?,
        lambda_insert: float(map, "lambda_insert", unit.lambda_insert)?,
        lambda_archive: float(map, "lambda_archive", unit.lambda_archive)?,
        merge_work: float(map, "merge_work", unit.merge_work)?,
        merge_ratio: float(map, "merge_ratio", unit.merge_ratio)?,
        window: float(map, "window", unit.window)?,
    };
    Ok(CostSetup {
        params,
        fan_out: float(map, "fan_out", 32.0)?,
        archive_fan_out: float(map, "archive_fan_out", 32.0)?,
        chain_length: float(map, "chain_length", 2.0)?,
        partitions: float(map, "partitions", 4.0)?,
        routing_depth: float(map, "routing_depth", 2.0)?,
        direct: [
            float(map, "probe", 1.0)?,
            float(map, "expire", 1.0)?,
            float(map, "insert", 1.0)?,
        ],
    })
}

fn build_model(name: &str, s: &CostSetup) -> Result<CostModel> {
    Ok(match name {
        "direct" => CostModel::Direct {
            probe: s.direct[0],
            expire: s.direct[1],
            insert: s.direct[2],
        },
        "btree" => CostModel::btree(&s.params, s.fan_out),
        "chained" => CostModel::chained(&s.params, s.fan_out, s.chain_length),
        "round-robin" => CostModel::round_robin(&s.params, s.fan_out, s.partitions),
        "merge-tree" => CostModel::merge_tree(&s.params, s.fan_out, s.archive_fan_out),
        "partitioned" => CostModel::partitioned(
            &s.params,
            s.fan_out,
            s.archive_fan_out,
            s.routing_depth,
        ),
        other => bail!(
            "unknown cost model {other:?} (direct, btree, chained, round-robin, merge-tree, partitioned)"
        ),
    })
}

/// Evaluate `model` under the parameter file at `params_path`, sweeping the
/// optional `sweep`/`sweep_values` keys, and write CSV to `out`.
pub fn run(model: &str, params_text: &str, out: &mut dyn Write) -> Result<()> {
    let map = parse_key_map(params_text)?;
    let sweep_key = map.get("sweep").cloned();
    let sweep_values: Vec<String> = map
        .get("sweep_values")
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    match (&sweep_key, sweep_values.is_empty()) {
        (Some(_), true) => bail!("sweep needs sweep_values"),
        (None, false) => bail!("sweep_values needs sweep"),
        _ => {}
    }

    writeln!(out, "{COST_HEADER}")?;
    let mut emit = |label: &str, map: &KeyMap| -> Result<()> {
        let s = setup(map)?;
        let breakdown = build_model(model, &s)?.evaluate(&s.params);
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            model,
            label,
            breakdown.probe,
            breakdown.expire,
            breakdown.insert,
            breakdown.total()
        )?;
        Ok(())
    };

    match sweep_key {
        None => emit("-", &map)?,
        Some(key) => {
            if !PARAM_KEYS.contains(&key.as_str()) || key == "sweep" || key == "sweep_values" {
                bail!("cannot sweep {key:?}");
            }
            for value in &sweep_values {
                let mut point = map.clone();
                point.insert(key.clone(), value.clone());
                emit(value, &point).with_context(|| format!("{key}={value}"))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_every_model_with_defaults() {
        for model in ["direct", "btree", "chained", "round-robin", "merge-tree", "partitioned"] {
            let mut buf = Vec::new();
            run(model, "", &mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            let row = text.lines().nth(1).unwrap();
            let fields: Vec<&str> = row.split(',').collect();
            assert_eq!(fields[0], model);
            assert_eq!(fields[1], "-");
            let total: f64 = fields[5].parse().unwrap();
            let parts: f64 = fields[2..5]
                .iter()
                .map(|f| f.parse::<f64>().unwrap())
                .sum();
            // Columns are printed at six decimals, so the parts re-add to
            // the total only within that precision.
            assert!((total - parts).abs() < 5e-6, "{total} vs {parts}");
        }
    }

    #[test]
    fn sweeps_produce_one_row_per_value() {
        let mut buf = Vec::new();
        run("btree", "sweep=window\nsweep_values=1000,100000", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].starts_with("btree,1000,"));
        let small: f64 = rows[0].split(',').last().unwrap().parse().unwrap();
        let large: f64 = rows[1].split(',').last().unwrap().parse().unwrap();
        assert!(large > small, "taller trees must cost more");
    }

    #[test]
    fn rejects_unknown_model_and_keys() {
        let mut buf = Vec::new();
        assert!(run("spline", "", &mut buf).is_err());
        assert!(run("btree", "windowsize=5", &mut buf).is_err());
        assert!(run("btree", "sweep=window", &mut buf).is_err());
    }
}
