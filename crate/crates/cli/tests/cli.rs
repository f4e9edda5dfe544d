use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn bspde(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bspde"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BSPDE_WORKERS")
        .output()
        .expect("binary runs")
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    bspde(&args, out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_solve_writes_constant_solution() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = run("solve", &configs().join("zero_solve.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = fs::read_to_string(out.join("solution_v.csv")).unwrap();
    let mut lines = v.lines();
    assert_eq!(lines.next(), Some("sample,j,t,x1,c,key,component,value"));
    let values: Vec<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(!values.is_empty());
    assert!(values.iter().all(|v| *v == values[0]));
    assert!(out.join("solution_vbar.csv").exists());

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["library_version"].is_string());
    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["problem"]["params"]["T"], 1.0);
    assert!(resolved["solver"]["M"].is_u64());
    assert_eq!(resolved["solver"]["estimator"]["ridge"], 0.0);
}

#[test]
fn missing_samples_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "bad.json",
        &serde_json::json!({
            "problem": {"name": "zero"},
            "partition": {"T": 1.0, "n0": 2, "edges": [1.0], "counts": [2]},
            "solver": {"algorithm": "one"}
        }),
    );
    let o = run("solve", &config, &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("`solver`") && msg.contains("samples"), "{msg}");
}

#[test]
fn unknown_problem_and_malformed_values_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let base = serde_json::json!({
        "problem": {"name": "zero"},
        "partition": {"T": 1.0, "n0": 2, "edges": [1.0], "counts": [2]},
        "solver": {"samples": 10}
    });
    let mut unknown = base.clone();
    unknown["problem"]["name"] = "nope".into();
    let mut typed = base.clone();
    typed["partition"]["n0"] = "four".into();
    for (i, value) in [unknown, typed].iter().enumerate() {
        let config = write_config(tmp.path(), &format!("c{i}.json"), value);
        let o = run("solve", &config, &tmp.path().join("run"), &[]);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    }
    let o = run("solve", &write_config(tmp.path(), "ok.json", &base), &tmp.path().join("run"), &["--workers", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn implicit_scheme_with_a_large_step_fails_numerically() {
    let tmp = TempDir::new().unwrap();
    let o = run("solve", &configs().join("linear_divergence.json"), &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("did not converge") && msg.contains("j0 = 2"), "{msg}");
}

#[test]
fn short_ladder_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut value = read_json(&configs().join("linear_convergence.json"));
    value["ladder"]["levels"] = 2.into();
    let config = write_config(tmp.path(), "short.json", &value);
    let o = run("converge", &config, &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 3 levels"));
}

#[test]
fn zero_ladder_reports_degenerate_fit() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "zero.json",
        &serde_json::json!({
            "problem": {"name": "zero"},
            "ladder": {"base": {"T": 1.0, "n0": 2, "edges": [1.0], "counts": [2]}, "levels": 3},
            "solver": {"samples": 50}
        }),
    );
    let out = tmp.path().join("run");
    let o = run("converge", &config, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("degenerate"));
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",50,0,one")));
}

#[test]
fn converge_prints_a_slope() {
    let tmp = TempDir::new().unwrap();
    let mut value = read_json(&configs().join("linear_convergence.json"));
    value["solver"]["samples"] = 300.into();
    value["ladder"]["levels"] = 3.into();
    let config = write_config(tmp.path(), "lin.json", &value);
    let out = tmp.path().join("run");
    let o = run("converge", &config, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("fitted slope"));
    assert_eq!(fs::read_to_string(out.join("convergence.csv")).unwrap().lines().count(), 4);
}

#[test]
fn compare_on_partition_and_ladder() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ladder");
    let o = run("compare", &configs().join("linear_compare.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",one-vs-two")));

    let out = tmp.path().join("single");
    let o = run("compare", &configs().join("zero_solve.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "0e0");
}

#[test]
fn martingale_malliavin_check_is_exact() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = run("check-malliavin", &configs().join("martingale_malliavin.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("max |z|: 0.0000"), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("malliavin.csv")).unwrap();
    assert!(csv.starts_with("t,x1,c,key,component,mean_lhs,mean_rhs,var_lhs,var_rhs,zscore\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0e0")));
}

#[test]
fn artifacts_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let config = configs().join("martingale_malliavin.json");
    let mut value = read_json(&config);
    value["solver"]["record_coefficients"] = true.into();
    let config = write_config(tmp.path(), "m.json", &value);
    let (a, b) = (tmp.path().join("one"), tmp.path().join("four"));
    for (dir, n) in [(&a, "1"), (&b, "4")] {
        let o = run("solve", &config, dir, &["--workers", n]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["solution_v.csv", "solution_vbar.csv", "coefficients.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest = read_json(&b.join("manifest.json"));
    assert_eq!(manifest["workers"], 4);
}

#[test]
fn workers_default_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_bspde"))
        .args(["solve", "--config", configs().join("zero_solve.json").to_str().unwrap(), "--out"])
        .arg(&out)
        .env("BSPDE_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("manifest.json"))["workers"], 3);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    let o = run(
        "solve",
        &configs().join("martingale_malliavin.json"),
        &first,
        &["--seed", "99", "--paper-literal-stencil"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved = read_json(&first.join("resolved_config.json"));
    assert_eq!(resolved["seed"], 99);
    assert_eq!(resolved["solver"]["boundary"], "negated_backward");

    let second = tmp.path().join("second");
    let o = run("solve", &first.join("resolved_config.json"), &second, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["solution_v.csv", "solution_vbar.csv"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
    let mut again = read_json(&second.join("resolved_config.json"));
    again["output"] = resolved["output"].clone();
    assert_eq!(again, resolved);
}

/// Every object key must be declared in the schema and every required key
/// present.
fn conforms(value: &Value, schema: &Value, root: &Value, path: &str) -> Result<(), String> {
    let schema = match schema.get("$ref").and_then(Value::as_str) {
        Some(r) => root.pointer(r.trim_start_matches('#')).ok_or(format!("dangling {r}"))?,
        None => schema,
    };
    let Some(obj) = value.as_object() else {
        return Ok(());
    };
    for key in schema["required"].as_array().into_iter().flatten() {
        if !obj.contains_key(key.as_str().unwrap()) {
            return Err(format!("{path}: missing {key}"));
        }
    }
    let props = schema.get("properties");
    for (k, v) in obj {
        match props.and_then(|p| p.get(k)) {
            Some(sub) => conforms(v, sub, root, &format!("{path}.{k}"))?,
            None if schema["additionalProperties"] == Value::Bool(false) => {
                return Err(format!("{path}: undeclared key {k}"))
            }
            None => {}
        }
    }
    Ok(())
}

#[test]
fn schema_covers_examples_and_resolved_configs() {
    let schema = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("config.schema.json"));
    let tmp = TempDir::new().unwrap();
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        conforms(&read_json(&path), &schema, &schema, "$").unwrap();
    }
    let mut value = read_json(&configs().join("zero_solve.json"));
    value["solver"]["estimator"]["kind"] = "nested".into();
    value["solver"]["estimator"]["inner"] = 2.into();
    value["solver"]["samples"] = 20.into();
    value["solver"]["record_coefficients"] = true.into();
    let config = write_config(tmp.path(), "full.json", &value);
    let out = tmp.path().join("run");
    let o = run("solve", &config, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved = read_json(&out.join("resolved_config.json"));
    conforms(&resolved, &schema, &schema, "$").unwrap();
    // every solver field is materialized
    let solver = resolved["solver"].as_object().unwrap();
    let declared = schema["properties"]["solver"]["properties"].as_object().unwrap();
    assert_eq!(solver.keys().collect::<Vec<_>>().len(), declared.len());
}
