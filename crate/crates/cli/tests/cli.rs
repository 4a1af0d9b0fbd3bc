use std::path::Path;
use std::process::{Command, Output};

use textailor::denoise::{ToyArch, ToyDenoiser};
use textailor::geometry::{primitives, write_obj};
use textailor::pipeline::{RunConfig, RunReport};
use textailor::sched::{NoiseSchedule, ScheduleKind};

fn textailor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textailor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Sphere OBJ and a config small enough for a quick run.
fn fixture(dir: &Path) -> (String, String) {
    let obj = dir.join("sphere.obj");
    std::fs::write(&obj, write_obj(&primitives::icosphere(2), None)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.resample.steps = 10;
    cfg.resample.repeats = 1;
    cfg.eval.n_per_hemisphere = 6;
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    (obj.display().to_string(), cfg_path.display().to_string())
}

#[test]
fn run_then_eval_and_render() {
    let tmp = tempfile::tempdir().unwrap();
    let (obj, cfg) = fixture(tmp.path());
    let out = tmp.path().join("d");
    let o = textailor(&[
        "run", "--config", &cfg, "--mesh", &obj, "--backend", "analytic", "--seed", "7", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["atlas.png", "mesh.obj", "mesh.mtl", "report.json", "anchors.json", "views/00.png"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.config.seed, 7);
    assert_eq!(report.config.resample.steps, 10);

    let e = textailor(&["eval", "--run", out.to_str().unwrap()]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert_eq!(stdout(&e).trim(), format!("{:.6}", report.consistency));

    let renders = tmp.path().join("r");
    let r = textailor(&[
        "render", "--run", out.to_str().unwrap(), "--view", "0,15", "--view", "180,-30", "--out",
        renders.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(renders.join("00.png").exists() && renders.join("01.png").exists());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (obj, cfg) = fixture(tmp.path());
    let o = textailor(&[
        "schedule", "--config", &cfg, "--mesh", &obj, "--beta", "0.9", "--gamma", "0.25", "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plan: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let views = plan.as_array().unwrap();
    // A high threshold forces at least one insertion on this sphere.
    assert!(views.iter().any(|v| v["inserted"] == true));
    let default = textailor(&["schedule", "--config", &cfg, "--mesh", &obj, "--json"]);
    let plan0: serde_json::Value = serde_json::from_str(&stdout(&default)).unwrap();
    assert!(plan0.as_array().unwrap().len() < views.len());
}

#[test]
fn schedule_prints_the_view_table() {
    let tmp = tempfile::tempdir().unwrap();
    let (obj, _) = fixture(tmp.path());
    let o = textailor(&["schedule", "--mesh", &obj]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() >= 12, "{text}");
    assert_eq!(rows.iter().filter(|l| l.contains("anchor")).count(), 5);
    // Nothing was textured.
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn finetune_on_run_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let (obj, cfg) = fixture(tmp.path());
    let out = tmp.path().join("d");
    let o = textailor(&["run", "--config", &cfg, "--mesh", &obj, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let sched = NoiseSchedule::new(1000, ScheduleKind::Linear).unwrap();
    let weights = tmp.path().join("init.json");
    std::fs::write(&weights, ToyDenoiser::init(ToyArch::default(), &sched, 5).unwrap().to_json()).unwrap();
    let ft = tmp.path().join("ft");
    let cfg_small = tmp.path().join("ft.json");
    let mut c: RunConfig = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    c.backend = serde_json::from_str(r#"{"kind": "toy"}"#).unwrap();
    c.finetune.steps = 20;
    std::fs::write(&cfg_small, serde_json::to_string(&c).unwrap()).unwrap();
    let o = textailor(&[
        "finetune", "--run", out.to_str().unwrap(), "--config", cfg_small.to_str().unwrap(), "--weights",
        weights.to_str().unwrap(), "--lambda", "1.5", "--out", ft.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["anchors"], 5);
    assert_eq!(summary["lambda"], 1.5);
    assert!(summary["drift"].as_f64().unwrap() > 0.0);
    let tuned = ToyDenoiser::from_json(&std::fs::read_to_string(ft.join("weights.json")).unwrap()).unwrap();
    assert_eq!(tuned.params().len(), ToyArch::default().param_count());
    let csv = std::fs::read_to_string(ft.join("training.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn usage_errors_exit_nonzero() {
    let o = textailor(&["run", "--no-such-flag"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = textailor(&["paint"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"));
    let o = textailor(&["schedule", "--beta", "1.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
    let o = textailor(&["schedule", "--weights", "w.json"]);
    assert!(!o.status.success());
}
