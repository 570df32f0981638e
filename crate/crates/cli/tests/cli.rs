use std::path::Path;
use std::process::{Command, Output};

use xnorsim::netio::idx::{write_idx_images, write_idx_labels};
use xnorsim::netio::{Dataset, NetworkSpec, WeightContainer};

fn xnorsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xnorsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let ok = xnorsim(&["verify", "--nu-max", "8"], dir.path());
    assert!(ok.status.success(), "{}", text(&ok.stdout));
    assert!(text(&ok.stdout).contains("all checks passed"));

    let bad = xnorsim(&["verify", "--nu-max", "6", "--inject-fault", "main-ref-off-by-one"], dir.path());
    assert!(!bad.status.success());
    let out = text(&bad.stdout);
    assert!(out.contains("FAIL") && out.contains("xnorsim verify --nu-max 6 --inject-fault main-ref-off-by-one"), "{out}");
}

#[test]
fn loss_sweep_is_byte_identical_and_headed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = xnorsim(
            &["--seed", "9", "--out", out.to_str().unwrap(), "loss-sweep", "--samples", "4000", "--ref-distance", "1,8,64"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", text(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b);
    let mut lines = a.lines();
    assert!(lines.next().unwrap().starts_with("# xnorsim loss-sweep"));
    let hash = lines.next().unwrap().strip_prefix("# config_hash: ").unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(lines.next().unwrap(), "# seed: 9");
    assert!(lines.next().unwrap().starts_with("policy,nu,segment,ref_count,x,"));
    assert!(a.contains("\nand,20,10,1,0,") && a.contains("\nf2,1024,512,3,8,"));

    let other = xnorsim(&["--seed", "10", "loss-sweep", "--samples", "4000", "--ref-distance", "1,8,64"], dir.path());
    assert_ne!(text(&other.stdout), a);
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = xnorsim(&["loss-sweep", "--experiment", "distance"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("--seed"));
    let o = xnorsim(&["loss-sweep", "--experiment", "exact"], dir.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let o = xnorsim(&["infer", "--random-weights"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("--seed"));
}

#[test]
fn sweep_reports_rejected_distances() {
    let dir = tempfile::tempdir().unwrap();
    let o = xnorsim(
        &["--seed", "1", "loss-sweep", "--experiment", "distance", "--refs", "5", "--ref-distance", "8,200", "--samples", "1000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("x=200"));
    assert!(!text(&o.stdout).contains(",200,"));
}

#[test]
fn cost_names_every_missing_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.toml"), "clock_hz = 1e9\nbus_width_bits = 32\n").unwrap();
    let o = xnorsim(&["cost", "--params", "p.toml"], dir.path());
    assert!(!o.status.success());
    let err = text(&o.stderr);
    for key in ["crossbar_read_energy_j", "sa_compare_energy_j", "baseline_popcount_group"] {
        assert!(err.contains(key), "{err}");
    }
    assert!(!err.contains("clock_hz"), "{err}");
}

#[test]
fn cost_writes_reports_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let params = configs().join("cost_params.toml");
    let out = dir.path().join("cost.json");
    let o = xnorsim(
        &["cost", "--params", params.to_str().unwrap(), "--network", "LeNet-5", "--network", "MLP-S", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["header"]["command"], "cost");
    let nets = doc["networks"].as_array().unwrap();
    assert_eq!(nets.len(), 2);
    for n in nets {
        assert!(n["comparison"]["energy_improvement"].as_f64().unwrap() > 1.0);
        assert!(n["comparison"]["latency_improvement"].as_f64().unwrap() > 1.0);
    }
    let layers = std::fs::read_to_string(dir.path().join("cost.layers.csv")).unwrap();
    assert!(layers.contains("\nnetwork,design,layer,"));
    let tx = std::fs::read_to_string(dir.path().join("cost.transactions.csv")).unwrap();
    assert!(tx.contains("LeNet-5/0:") && tx.contains(",0\n"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("experiment.toml");
    let cfg = cfg.to_str().unwrap();
    let base = xnorsim(&["--config", cfg, "cost", "--network", "MLP-S"], dir.path());
    assert!(base.status.success(), "{}", text(&base.stderr));
    let flagged = xnorsim(&["--config", cfg, "cost", "--network", "MLP-S", "--refs", "1"], dir.path());
    assert!(flagged.status.success(), "{}", text(&flagged.stderr));
    let a: serde_json::Value = serde_json::from_slice(&base.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&flagged.stdout).unwrap();
    assert_eq!(a["options"]["refs"]["count"], 3);
    assert_eq!(b["options"]["refs"]["count"], 1);
    assert_ne!(a["header"]["config_hash"], b["header"]["config_hash"]);
}

#[test]
fn infer_from_files_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkSpec::preset("MLP-S").unwrap();
    WeightContainer::random(&net, 3).save(&dir.path().join("w.bin")).unwrap();
    let data = Dataset::synthetic(30, 28, 28, 3);
    write_idx_images(&dir.path().join("i.idx"), &data.images).unwrap();
    write_idx_labels(&dir.path().join("l.idx"), &data.labels).unwrap();
    let args = [
        "infer", "--network", "MLP-S", "--weights", "w.bin", "--images", "i.idx", "--labels", "l.idx", "--policy", "f2", "--refs", "3",
        "--ref-distance", "8", "--crossbar", "512x512", "--out",
    ];
    let run = |out: &str| {
        let mut a = args.to_vec();
        a.push(out);
        let o = xnorsim(&a, dir.path());
        assert!(o.status.success(), "{}", text(&o.stderr));
        (
            std::fs::read_to_string(dir.path().join(out)).unwrap(),
            std::fs::read_to_string(dir.path().join(out.replace(".json", ".layers.csv"))).unwrap(),
        )
    };
    let (a, b) = (run("a.json"), run("b.json"));
    assert_eq!(a, b);
    let doc: serde_json::Value = serde_json::from_str(&a.0).unwrap();
    assert_eq!(doc["samples"], 30);
    assert!(doc["result"]["golden_accuracy"].is_number());
    assert!(a.1.contains("\nlayer,name,fan_in,splits,bits,mismatches,fraction\n"));

    let missing = xnorsim(&["infer", "--weights", "nope.bin", "--seed", "1"], dir.path());
    assert!(!missing.status.success());
    assert!(text(&missing.stderr).contains("nope.bin"));
}
