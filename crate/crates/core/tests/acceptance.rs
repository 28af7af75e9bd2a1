//! One line per acceptance criterion. Run with `cargo test --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use meltsim::attack::{AttackConfig, Attacker, Confidence, ExceptionMode, PROBE_PAGES};
use meltsim::harness::{self, format_hexdump, matrix_configs, Experiment, Scenario};
use meltsim::isa::interpret_in_order;
use meltsim::ooo::{Engine, WindowModel};
use meltsim::vmem::{PhysAddr, VirtAddr};
use meltsim::{MachineConfig, MachineState};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SECRET_PA: u64 = 0x10_0000;

type Check = fn() -> (bool, String);

fn random_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

fn planted(cfg: &MachineConfig, data: &[u8]) -> (MachineState, VirtAddr) {
    let mut m = MachineState::new(cfg).unwrap();
    m.plant_kernel(PhysAddr(SECRET_PA), data).unwrap();
    let va = m.asp.direct_map_va(PhysAddr(SECRET_PA));
    (m, va)
}

fn no_zero_bias(seed: u64) -> WindowModel {
    WindowModel { p_zero: 0.0, seed, ..Default::default() }
}

fn toy_example() -> (bool, String) {
    let start = Instant::now();
    let mut bad = Vec::new();
    for (w, expect_hit) in [(WindowModel::default().budget, true), (0, false)] {
        let mut m = MachineState::new(&MachineConfig::default()).unwrap();
        let window = WindowModel { budget: w, ..Default::default() };
        let mut a = Attacker::new(&mut m, AttackConfig { mode: ExceptionMode::Handling, window, ..Default::default() })
            .unwrap();
        for data in 1..=255u8 {
            let lat = a.toy_example(data).unwrap();
            let dips: Vec<usize> = (0..PROBE_PAGES).filter(|&p| lat[p] < a.threshold()).collect();
            let want = if expect_hit { vec![data as usize] } else { vec![] };
            if dips != want {
                bad.push(format!("W={w} data={data} dips={dips:?}"));
            }
        }
    }
    let t = start.elapsed();
    let ok = bad.is_empty() && t < Duration::from_secs(5);
    (
        ok,
        format!(
            "510 cases, {} wrong, {:.2}s (limit 5s) {}",
            bad.len(),
            t.as_secs_f64(),
            bad.first().cloned().unwrap_or_default()
        ),
    )
}

fn oracle_equivalence() -> (bool, String) {
    let start = Instant::now();
    let mut cfg = MachineConfig::default();
    cfg.cache.noise = 0.0;
    let (mut m, va) = planted(&cfg, &random_bytes(2, 64 << 10));
    let attack = AttackConfig { mode: ExceptionMode::Suppression, window: no_zero_bias(2), ..Default::default() };
    let r = Attacker::new(&mut m, attack).unwrap().dump_range(va, 64 << 10).unwrap();
    let oracle = m.mem.read_phys(PhysAddr(SECRET_PA), 64 << 10).unwrap();
    let errors = r.errors(&oracle);
    let t = start.elapsed();
    let ok = errors == 0 && t < Duration::from_secs(30);
    (ok, format!("64 KiB, {errors} mismatches vs physical memory, {:.1}s (limit 30s)", t.as_secs_f64()))
}

fn zero_handling() -> (bool, String) {
    let (mut m, va) = planted(&MachineConfig::default(), &[0u8; 1024]);
    let mut a = Attacker::new(&mut m, AttackConfig::default()).unwrap();
    let r = a.dump_range(va, 1024).unwrap();
    let zeros = r.outcomes.iter().filter(|o| o.confidence == Confidence::InferredZero && o.value == 0).count();
    let hits = a.probe_hits();
    (zeros == 1024 && hits == 0, format!("{zeros}/1024 inferred-zero, {hits} probe hits"))
}

fn retry_property() -> (bool, String) {
    let mut worst_on = 1.0f64;
    let mut violations = 0;
    let mut mean_off = 0.0;
    const PAIRS: u64 = 20;
    for seed in 0..PAIRS {
        let data = random_bytes(100 + seed, 256);
        let run = |retry| {
            let (mut m, va) = planted(&MachineConfig::default(), &data);
            let window = WindowModel { p_zero: 0.5, seed, ..Default::default() };
            let cfg = AttackConfig { retry, max_retries: 10, window, ..Default::default() };
            Attacker::new(&mut m, cfg).unwrap().dump_range(va, 256).unwrap().accuracy(&data)
        };
        let (on, off) = (run(true), run(false));
        violations += (on < off) as usize;
        worst_on = worst_on.min(on);
        mean_off += off / PAIRS as f64;
    }
    let ok = violations == 0 && worst_on >= 0.99;
    (
        ok,
        format!(
            "{PAIRS} pairs, {violations} with retry worse; worst retry-on accuracy {:.2}%, mean retry-off {:.2}%",
            worst_on * 100.0,
            mean_off * 100.0
        ),
    )
}

fn countermeasure_matrix() -> (bool, String) {
    let mut sc = Scenario::default();
    sc.plant.paddr = PhysAddr(SECRET_PA);
    sc.plant.len = Some(1024);
    sc.set_seed(5);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, cfg) in matrix_configs(&sc.machine) {
        let d = harness::dump_cell(name, &sc, &cfg, &sc.attack).unwrap();
        let acc = d.accuracy.unwrap();
        if name == "baseline" {
            ok &= acc >= 0.99;
            parts.push(format!("{name} {:.2}%", acc * 100.0));
        } else {
            ok &= d.hits == 0;
            parts.push(format!("{name} {} hits", d.hits));
        }
    }
    (ok, parts.join(", "))
}

fn kaslr_search() -> (bool, String) {
    let mut sc = Scenario::default();
    sc.experiment = Experiment::KaslrSearch;
    sc.machine.vmem.phys_size = 8 << 30;
    sc.kaslr_trials = 100;
    sc.set_seed(1);
    let r = harness::run(&sc).unwrap();
    let harness::Outcome::Kaslr { trials, slots } = &r.outcome else { unreachable!() };
    let found = trials.iter().filter(|t| t.found == Some(t.actual)).count();
    let max = trials.iter().map(|t| t.probes).max().unwrap();
    let ok = found == 100 && max <= 128 && r.passed();
    (
        ok,
        format!(
            "{found}/100 found, median {} probes, max {max} (limit 128, {slots} slots)",
            r.median_probes().unwrap_or(0)
        ),
    )
}

fn throughput_ordering() -> (bool, String) {
    let mut ok = true;
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let data = random_bytes(200 + seed, 4096);
        let cpb = |mode| {
            let (mut m, va) = planted(&MachineConfig::default(), &data);
            let window = WindowModel { seed, ..Default::default() };
            let r = Attacker::new(&mut m, AttackConfig { mode, window, ..Default::default() })
                .unwrap()
                .dump_range(va, 4096)
                .unwrap();
            r.cycles_per_byte()
        };
        let (h, s) = (cpb(ExceptionMode::Handling), cpb(ExceptionMode::Suppression));
        ok &= s < h;
        ratios.push(format!("{:.2}x", h / s));
    }
    (ok, format!("handling/suppression cycles per byte over 5 seeds: {}", ratios.join(" ")))
}

fn squash_fuzz() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let mut mismatches = 0;
    let mut first = String::new();
    for i in 0..10_000 {
        let common::Case { mut machine, window, program } = common::random_case(&mut rng);
        let want = interpret_in_order(&program, &machine).unwrap();
        let got = Engine::for_machine(window, &machine).run(&program, &mut machine).unwrap();
        if got.arch != want {
            mismatches += 1;
            if first.is_empty() {
                first = format!(" (first: case {i})");
            }
        }
    }
    (mismatches == 0, format!("10000 programs, {mismatches} architectural mismatches{first}"))
}

fn bit_byte_agree() -> (bool, String) {
    let data = random_bytes(9, 4096);
    let dump = |bits| {
        let (mut m, va) = planted(&MachineConfig::default(), &data);
        Attacker::new(&mut m, AttackConfig { bits_per_tx: bits, ..Default::default() })
            .unwrap()
            .dump_range(va, 4096)
            .unwrap()
    };
    let (one, eight) = (dump(1), dump(8));
    let diff = one.bytes().iter().zip(eight.bytes()).filter(|(a, b)| **a != *b).count();
    (diff == 0, format!("4 KiB, {diff} differing bytes, {} wrong vs planted", one.errors(&data)))
}

fn hexdump_golden() -> (bool, String) {
    let bytes: Vec<Option<u8>> =
        "XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX 81 12 XX e0 81 19 XX e0 81 44 6f 6c 70 68 69 6e 31 \
        38 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 70 52 b8 6b 96 7f XX XX XX XX XX XX XX XX XX XX \
        XX XX XX XX 4a XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX e0 81 69 6e 73 74 \
        61 5f 30 32 30 33 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 30 b4 18 7d 28 7f XX XX XX"
            .split_whitespace()
            .map(|t| u8::from_str_radix(t, 16).ok())
            .collect();
    let got = format_hexdump(&bytes, VirtAddr(0xf94b76e0));
    let want = include_str!("golden/dolphin.hexdump");
    (got == want, format!("{} lines, byte-identical: {}", want.lines().count(), got == want))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("toy example", toy_example),
        ("oracle equivalence", oracle_equivalence),
        ("zero handling", zero_handling),
        ("retry property", retry_property),
        ("countermeasure matrix", countermeasure_matrix),
        ("kaslr search", kaslr_search),
        ("throughput ordering", throughput_ordering),
        ("squash soundness fuzz", squash_fuzz),
        ("bit and byte modes agree", bit_byte_agree),
        ("hexdump golden", hexdump_golden),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        failed += !ok as usize;
        println!("{} {:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, n + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
