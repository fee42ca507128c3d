use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neurath"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_spec(dir: &Path) -> PathBuf {
    let p = dir.join("spec.toml");
    std::fs::write(
        &p,
        r#"
preset = "exp1"
replications = 4
seed = 21

[learner]
kind = "SE"
rho = 0.8
epsilon = 0.1

[chooser]
kind = "random"
"#,
    )
    .unwrap();
    p
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        neurath::ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn simulate_fit_recover_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let sim = dir.path().join("sim");
    let listed = run(&["simulate", "--spec", spec.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    for f in ["records.json", "behavior.csv", "accuracy.csv", "edit_distance.csv", "intervention_types.csv", "summary.json"] {
        assert!(sim.join(f).exists(), "{f} missing");
        assert!(listed.contains(f));
    }

    let rep = dir.path().join("rep");
    run(&["report", "--records", sim.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    for f in ["accuracy.csv", "edit_distance.csv", "summary.json"] {
        assert_eq!(std::fs::read(sim.join(f)).unwrap(), std::fs::read(rep.join(f)).unwrap());
    }
    let header = std::fs::read_to_string(rep.join("edit_distance.csv")).unwrap();
    assert!(header.starts_with("learner,n,count,mean,sd,sd_defined\n"));

    let fit = dir.path().join("fit");
    let data = sim.join("behavior.csv");
    run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--models",
        "SE,Baseline,baseline",
        "--restarts",
        "2",
        "--out",
        fit.to_str().unwrap(),
    ]);
    let table = std::fs::read_to_string(fit.join("fits.csv")).unwrap();
    assert!(table.starts_with("model,participant,epsilon,rho,nll,n_params,n_obs,bic,pseudo_r2\n"));
    assert_eq!(table.lines().count(), 1 + 4 * 3);
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit.join("comparison.json")).unwrap()).unwrap();
    assert!(cmp["models"].as_array().unwrap().len() == 3);

    let rec = dir.path().join("rec");
    run(&[
        "recover",
        "--fits",
        fit.join("fits.json").to_str().unwrap(),
        "--restarts",
        "2",
        "--out",
        rec.to_str().unwrap(),
    ]);
    let confusion = std::fs::read_to_string(rec.join("confusion.csv")).unwrap();
    assert!(confusion.starts_with("generator,"));

    // the data path can be overridden after the original file moves
    let moved = dir.path().join("moved.csv");
    std::fs::rename(&data, &moved).unwrap();
    let rec2 = dir.path().join("rec2");
    let fails = bin()
        .args(["recover", "--fits", fit.join("fits.json").to_str().unwrap(), "--out", rec2.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!fails.status.success());
    run(&[
        "recover",
        "--fits",
        fit.join("fits.json").to_str().unwrap(),
        "--data",
        moved.to_str().unwrap(),
        "--restarts",
        "2",
        "--out",
        rec2.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(rec.join("confusion.csv")).unwrap(),
        std::fs::read(rec2.join("confusion.csv")).unwrap()
    );
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("noseed.toml");
    std::fs::write(&spec, "preset = \"exp1\"\n[learner]\nkind = \"random\"\n[chooser]\nkind = \"random\"\n").unwrap();
    let out = bin()
        .args(["simulate", "--spec", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let sim = dir.path().join("sim");
    run(&["simulate", "--spec", small_spec(dir.path()).to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let out = bin()
        .args([
            "fit",
            "--data",
            sim.join("behavior.csv").to_str().unwrap(),
            "--models",
            "NS,Oracle",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Oracle"));
}

#[test]
fn model_lists_expand() {
    let all = neurath_cli::parse_models("all").unwrap();
    assert_eq!(all.len(), 12);
    let j = neurath_cli::parse_models("judgment, NS").unwrap();
    assert_eq!(j.len(), 6);
    assert!(neurath_cli::parse_models("").is_err());
}
