use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
simulate = true
seed = 7
simulate.n_consumers = 800
simulate.n_establishments = 80
forest.n_trees = 200
forest.nuisance_trees = 60
ale.surface_trees = 60
";

const ARTIFACTS: [&str; 19] = [
    "matched.csv",
    "balance.csv",
    "did.csv",
    "did_summary.json",
    "effects.csv",
    "blp.csv",
    "importance.csv",
    "forest.json",
    "ale.csv",
    "decomposition.csv",
    "gains.csv",
    "gains_quantiles.csv",
    "incidence.json",
    "welfare.json",
    "rate.csv",
    "tree.json",
    "hybrid.csv",
    "data/truth.csv",
    "run_manifest.json",
];

fn stimkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stimkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.kv");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path) -> Output {
    stimkit(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn all_writes_every_artifact_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run("all", &cfg, out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ARTIFACTS {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    assert_eq!(snapshot(&a), snapshot(&b));

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "all");
    assert_eq!(manifest["seed"], 7);
    let stages: Vec<&str> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stage"].as_str().unwrap())
        .collect();
    assert_eq!(
        stages,
        ["simulate", "match", "did", "forest", "ale", "incidence", "welfare", "target", "tree", "hybrid"]
    );
    let text = String::from_utf8(std::fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert!(!text.contains(tmp.path().to_str().unwrap()), "manifest leaks an absolute path");

    // replaying the manifest reproduces the run
    let c = tmp.path().join("c");
    let o = run("all", &a.join("run_manifest.json"), &c);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(snapshot(&a), snapshot(&c));

    // the same data read from a directory gives the same matching
    let d = tmp.path().join("d");
    let data_cfg = tmp.path().join("data.kv");
    std::fs::write(&data_cfg, format!("data.dir = {}\n", a.join("data").display())).unwrap();
    let o = run("match", &data_cfg, &d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(a.join("matched.csv")).unwrap(),
        std::fs::read(d.join("matched.csv")).unwrap()
    );

    // a budget far below the coupon cost cannot reach the target
    let tight = config(tmp.path(), &format!("{SMALL}policy.budget = 1\n"));
    let o = run("hybrid", &tight, &a);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("unreachable"), "{}", stderr(&o));
}

#[test]
fn forest_without_match_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = run("forest", &cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("run `stimkit simulate` first"), "{}", stderr(&o));

    assert!(run("simulate", &cfg, &out).status.success());
    let o = run("forest", &cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("matched.csv"), "{}", stderr(&o));
    assert!(stderr(&o).contains("run `stimkit match` first"), "{}", stderr(&o));

    let o = run("welfare", &cfg, &out);
    assert!(stderr(&o).contains("run `stimkit forest` first"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for text in [
        "simulate = true\ndata.dir = somewhere\nseed = 1\n",
        "seed = 1\n",
        "simulate = true\n",
        "simulate = maybe\nseed = 1\n",
        "simulate = true\nseed = 1\nforest.n_trees = many\n",
        "simulate = true\nseed = 1\npolicy.lambda_grid = 0.2,0.7\n",
        "simulate = true\nseed = 1\nale.scheme = both\n",
        "this line has no equals sign\n",
    ] {
        let cfg = config(tmp.path(), text);
        let o = run("simulate", &cfg, &out);
        assert_eq!(o.status.code(), Some(2), "config {text:?}: {}", stderr(&o));
    }
    let o = stimkit(&["simulate", "--config", "/nonexistent/config.kv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = stimkit(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "simulate = true\nseed = 1\nsimulate.n_consumers = 50\nsimulate.n_establishments = 10\n");
    let out = |name: &str| tmp.path().join(name);
    let args = |o: &Path, seed: &str| {
        stimkit(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
            "--seed",
            seed,
            "--quiet",
        ])
    };
    assert!(args(&out("s1"), "1").status.success());
    assert!(args(&out("s2"), "2").status.success());
    assert!(run("simulate", &cfg, &out("s3")).status.success());
    let read = |n: &str| std::fs::read(out(n).join("data/consumers.csv")).unwrap();
    assert_ne!(read("s1"), read("s2"));
    assert_eq!(read("s1"), read("s3"));
    let m = std::fs::read_to_string(out("s2").join("run_manifest.json")).unwrap();
    assert!(m.contains("\"seed\": 2"), "{m}");
}

#[test]
fn data_directory_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &format!("data.dir = {}\n", tmp.path().join("nothing").display()));
    let o = run("match", &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run("simulate", &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
