use std::path::Path;
use std::process::Command;

use meltsim::harness::{run_scenario, Outcome};

fn meltsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_meltsim")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn toy_scenario_writes_a_single_dip_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "toy.cfg",
        "experiment = toy\ntoy.data = 84\noutput.report = toy.txt\noutput.csv = toy.csv\n",
    );
    let report = run_scenario(Path::new(&cfg)).unwrap();
    assert!(report.passed());
    let csv = std::fs::read_to_string(dir.path().join("toy.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("page,cycles"));
    let rows: Vec<(usize, u64)> = lines
        .map(|l| {
            let (p, c) = l.split_once(',').unwrap();
            (p.parse().unwrap(), c.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 256);
    let Outcome::Toy { threshold, latencies, .. } = &report.outcome else { panic!() };
    let dips: Vec<usize> = rows.iter().filter(|r| r.1 < *threshold).map(|r| r.0).collect();
    assert_eq!(dips, vec![84]);
    for page in [0, 84, 255] {
        assert_eq!(rows[page].1, latencies[page]);
    }
    assert!(dir.path().join("toy.txt").exists());
}

#[test]
fn dump_scenario_is_exact_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "dump.cfg",
        "experiment = dump\nseed = 7\nplant.len = 512\nwindow.p_zero = 0\nattack.mode = suppression\nassert.min_accuracy = 1.0\n",
    );
    let a = run_scenario(Path::new(&cfg)).unwrap();
    let b = run_scenario(Path::new(&cfg)).unwrap();
    assert!(a.passed(), "{a}");
    assert_eq!(a.to_string(), b.to_string());
    assert!(a.to_string().contains("accuracy: 100.00%"));
}

#[test]
fn matrix_leaks_only_without_countermeasures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.txt");
    let cfg = write(dir.path(), "m.cfg", "plant.len = 128\nplant.source = ascii\n");
    let o = meltsim(&["matrix", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    let row = |name: &str| text.lines().find(|l| l.starts_with(name)).unwrap().to_string();
    assert!(row("baseline").contains("100.00%"), "{text}");
    for name in ["kaiser", "serialized-check", "hard-split"] {
        let hits: usize = row(name).split_whitespace().nth(2).unwrap().parse().unwrap();
        assert_eq!(hits, 0, "{name}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", "cache.hitt = 3\n");
    let o = meltsim(&["dump", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cache.hitt"));

    let missing = dir.path().join("nope.cfg");
    assert_eq!(meltsim(&["dump", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(meltsim(&["dump", "--load", "/nonexistent.bin@0x1000"]).status.code(), Some(2));

    let leak = write(dir.path(), "k.cfg", "vmem.kaiser = on\nplant.len = 16\nassert.min_accuracy = 0.5\n");
    assert_eq!(meltsim(&["dump", "--config", &leak]).status.code(), Some(3));
}

#[test]
fn loaded_image_is_dumped() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.bin");
    std::fs::write(&img, b"Dolphin18").unwrap();
    let cfg = write(dir.path(), "f.cfg", "plant.file = img.bin\nplant.paddr = 0x2000\n");
    let o = meltsim(&["dump", "--config", &cfg, "--seed", "3"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("|Dolphin18|"), "{text}");
}

#[test]
fn bench_orders_suppression_first() {
    let o = meltsim(&["bench", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn kaslr_search_finds_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.cfg", "vmem.phys_size = 1G\nkaslr.trials = 3\n");
    let o = meltsim(&["kaslr-search", "--config", &cfg]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(o.status.success(), "{text}");
    assert!(text.contains("found: 3/3"));
}
