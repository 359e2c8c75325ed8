use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apcrw(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apcrw"))
        .args(args)
        .env("APCRW_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

/// Every output file except the manifest, sorted by name.
fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

const SPEED: &str = "rho = 1.0\nL = 20\nn = 200\nreplicas = 64\n";

#[test]
fn rejects_reversed_walk_probabilities() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\nL = 10\np_occ = 0.3\np_vac = 0.8\n");
    let out = tmp.path().join("o");
    let r = apcrw(
        &["speed", "--config", &cfg, "--out", out.to_str().unwrap()],
        "1",
    );
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("p_occ"), "{err}");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\nL = 10\nrhoo = 2.0\n");
    let out = tmp.path().join("o");
    let r = apcrw(
        &["speed", "--config", &cfg, "--out", out.to_str().unwrap()],
        "1",
    );
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("rhoo"));
}

#[test]
fn missing_keys_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = apcrw(
        &["speed", "--seed", "3", "--out", out.to_str().unwrap()],
        "1",
    );
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("`L`"));
    let r = apcrw(&["kernel", "--out", out.to_str().unwrap()], "1");
    assert!(String::from_utf8_lossy(&r.stderr).contains("`seed`"));
}

#[test]
fn thread_count_does_not_change_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SPEED);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let r = apcrw(
            &[
                "speed",
                "--config",
                &cfg,
                "--seed",
                "7",
                "--out",
                dir.to_str().unwrap(),
            ],
            threads,
        );
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let (da, db) = (data_files(&a), data_files(&b));
    assert!(!da.is_empty());
    assert_eq!(da, db);
    let csv = String::from_utf8(da.iter().find(|f| f.0 == "speed.csv").unwrap().1.clone()).unwrap();
    assert!(csv.starts_with("# apcrw speed v1\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 65);
}

#[test]
fn manifest_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SPEED);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let r = apcrw(
        &[
            "speed",
            "--config",
            &cfg,
            "--seed",
            "99",
            "--replicas",
            "16",
            "--out",
            a.to_str().unwrap(),
        ],
        "2",
    );
    assert!(r.status.success());
    let manifest = a.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("\"master_seed\": 99"), "{text}");
    let r = apcrw(
        &[
            "speed",
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            b.to_str().unwrap(),
        ],
        "1",
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(data_files(&a), data_files(&b));
}

#[test]
fn replay_under_the_wrong_subcommand_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let r = apcrw(
        &["kernel", "--seed", "5", "--out", a.to_str().unwrap()],
        "1",
    );
    assert!(r.status.success());
    let m = a.join("manifest.json");
    let r = apcrw(
        &[
            "slt",
            "--config",
            m.to_str().unwrap(),
            "--out",
            tmp.path().join("b").to_str().unwrap(),
        ],
        "1",
    );
    assert!(!r.status.success());
}
