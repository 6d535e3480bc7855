use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fewnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_inflation(dir: &Path, months: usize) -> Vec<f64> {
    let values: Vec<f64> = (0..months).map(|i| 2.0 + 0.1 * ((i * 7) % 11) as f64).collect();
    let mut text = String::from("date,value\n");
    for (i, v) in values.iter().enumerate() {
        text.push_str(&format!("{}-{:02},{v}\n", 2019 + i / 12, i % 12 + 1));
    }
    fs::write(dir.join("inflation.csv"), text).unwrap();
    values
}

const RANDOM_WALK_CONFIG: &str = r#"
config_version = 1
seed = 7

[data]
cpi_inflation = "inflation.csv"

[split]
train_end = "2020-12"
horizon = 6

[[models]]
kind = "rw"

[[models]]
kind = "rwd"
"#;

#[test]
fn run_writes_random_walk_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let values = write_inflation(dir.path(), 30);
    fs::write(dir.path().join("exp.toml"), RANDOM_WALK_CONFIG).unwrap();
    let out = fewnet(&["run", "exp.toml", "--output-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(dir.path().join("out/forecasts.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,step,month,value"));
    let rw: Vec<Vec<&str>> = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[0] == "rw")
        .collect();
    assert_eq!(rw.len(), 6);
    assert_eq!(rw[0][2], "2021-01");
    for (i, f) in rw.iter().enumerate() {
        assert_eq!(f[1], (i + 1).to_string());
        assert_eq!(f[3].parse::<f64>().unwrap(), values[23]);
    }
    for name in ["report.json", "metrics.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn validate_reports_missing_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_inflation(dir.path(), 30);
    let config = RANDOM_WALK_CONFIG.replace("seed = 7\n", "");
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    let out = fewnet(&["validate", "exp.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn validate_accepts_good_config() {
    let dir = tempfile::tempdir().unwrap();
    write_inflation(dir.path(), 30);
    fs::write(dir.path().join("exp.toml"), RANDOM_WALK_CONFIG).unwrap();
    let out = fewnet(&["validate", "exp.toml"], dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn missing_data_file_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), RANDOM_WALK_CONFIG).unwrap();
    let out = fewnet(&["run", "exp.toml", "--output-dir", "out"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("out/report.json").exists());
}

#[test]
fn decompose_prints_components() {
    let dir = tempfile::tempdir().unwrap();
    write_inflation(dir.path(), 30);
    let out = fewnet(&["decompose", "inflation.csv", "--levels", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("t,d1,d2,smooth"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn metrics_scores_forecast_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("actual.csv"), "step,value\n1,2.0\n2,4.0\n").unwrap();
    fs::write(dir.path().join("fc.csv"), "model_name,step,value\nmine,1,1.0\nmine,2,5.0\n").unwrap();
    let out = fewnet(&["metrics", "actual.csv", "fc.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,horizon,rmse,mase,smape_percent,theils_u1,mdrae,mdape"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "mine");
    assert_eq!(row[1], "2");
    assert!((row[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
}
