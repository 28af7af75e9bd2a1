use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Experiment, PlantSource, Scenario};
use super::hexdump::latency_csv;
use super::report::{DumpSummary, KaslrTrial, Outcome, Report};
use crate::attack::{AttackConfig, Attacker, Confidence, ExceptionMode, KaslrFound};
use crate::error::{AttackError, HarnessError};
use crate::machine::{CheckMode, MachineConfig, MachineState};
use crate::vmem::{kaslr_slots, PhysAddr, VirtAddr, DIRECT_MAP_FIXED_BASE};

/// Text planted by `plant.source = ascii`.
pub const ASCII_SAMPLE: &[u8] = b"user=admin password=Dolphin18 note=insta_0203 backup=secretpwd0 \
url=https://addons.example.org/ \0\0\0\0\xe5\xe5\xe5\xe5";

/// Accuracy the baseline cell of a matrix must reach by default.
pub const MATRIX_MIN_ACCURACY: f64 = 0.99;

/// Bytes placed in physical memory, used as the oracle.
#[derive(Clone, Debug, Default)]
pub struct Planted {
    regions: Vec<(PhysAddr, Vec<u8>)>,
}

impl Planted {
    pub fn byte(&self, pa: PhysAddr) -> Option<u8> {
        // later regions were written last
        self.regions.iter().rev().find_map(|(start, data)| {
            let off = pa.get().checked_sub(start.get())?;
            data.get(off as usize).copied()
        })
    }
}

/// Generates the scenario's primary plant.
pub fn plant_bytes(sc: &Scenario) -> Result<Vec<u8>, HarnessError> {
    let len = sc.plant.len;
    Ok(match &sc.plant.source {
        PlantSource::Random => {
            let mut v = vec![0u8; len.unwrap_or(4096) as usize];
            ChaCha8Rng::seed_from_u64(sc.seed ^ 0x9e37_79b9_7f4a_7c15).fill_bytes(&mut v);
            v
        }
        PlantSource::Ascii => ASCII_SAMPLE.iter().copied().cycle().take(len.unwrap_or(4096) as usize).collect(),
        PlantSource::File(p) => {
            let mut v = std::fs::read(p).map_err(|e| HarnessError::io(p, e))?;
            if let Some(n) = len {
                v.truncate(n as usize);
            }
            v
        }
    })
}

/// Builds a machine from `cfg` and plants the scenario's data into it.
pub fn build_machine(sc: &Scenario, cfg: &MachineConfig) -> Result<(MachineState, Planted), HarnessError> {
    let mut m = MachineState::new(cfg)?;
    let mut planted = Planted::default();
    let data = plant_bytes(sc)?;
    let mut place = |m: &mut MachineState, key: &str, pa: PhysAddr, bytes: Vec<u8>| {
        m.plant_kernel(pa, &bytes).map_err(|e| HarnessError::config(key, e.to_string()))?;
        planted.regions.push((pa, bytes));
        Ok::<_, HarnessError>(())
    };
    place(&mut m, "plant.paddr", sc.plant.paddr, data)?;
    for (path, pa) in &sc.loads {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        place(&mut m, "load", *pa, bytes)?;
    }
    Ok((m, planted))
}

fn attacker<'m>(m: &'m mut MachineState, cfg: &AttackConfig) -> Result<Attacker<'m>, HarnessError> {
    Attacker::new(m, cfg.clone()).map_err(|e| match e {
        AttackError::NoTransactions => HarnessError::config("attack.mode", "suppression needs cpu.tsx = on"),
        AttackError::Config(r) => HarnessError::config("attack", r),
        e => e.into(),
    })
}

/// Dumps the scenario's range on a freshly built machine.
pub fn dump_cell(
    label: &str,
    sc: &Scenario,
    mcfg: &MachineConfig,
    acfg: &AttackConfig,
) -> Result<DumpSummary, HarnessError> {
    let (mut m, planted) = build_machine(sc, mcfg)?;
    let real_base = m.asp.direct_map_base();
    let phys_size = m.asp.phys_size();
    let plant_len = plant_bytes(sc)?.len() as u64;
    let mut a = attacker(&mut m, acfg)?;

    let mut located = None;
    let start = match sc.dump_start {
        Some(va) => va,
        None => {
            let base = if mcfg.vmem.kaslr {
                match a.find_direct_map(phys_size) {
                    Ok(found) => {
                        located = Some(found);
                        found.base
                    }
                    Err(AttackError::NotFound { probes }) => {
                        located = Some(KaslrFound { base: VirtAddr(DIRECT_MAP_FIXED_BASE), probes });
                        VirtAddr(DIRECT_MAP_FIXED_BASE)
                    }
                    Err(e) => return Err(e.into()),
                }
            } else {
                VirtAddr(DIRECT_MAP_FIXED_BASE)
            };
            base.offset(sc.plant.paddr.get())
        }
    };
    let len = sc.dump_len.unwrap_or(plant_len).max(1);
    let r = a.dump_range(start, len)?;

    let oracle: Option<Vec<u8>> = (0..len)
        .map(|i| {
            let off = start.get().wrapping_add(i).checked_sub(real_base.get())?;
            (off < phys_size).then_some(())?;
            planted.byte(PhysAddr(off))
        })
        .collect();
    Ok(DumpSummary {
        label: label.to_string(),
        start,
        bytes: r.bytes(),
        hits: r.count(Confidence::Hit),
        inferred_zero: r.count(Confidence::InferredZero),
        unknown: r.count(Confidence::Unknown),
        accuracy: oracle.map(|o| r.accuracy(&o)),
        cycles: r.cycles,
        cycles_per_byte: r.cycles_per_byte(),
        located,
    })
}

fn toy(sc: &Scenario) -> Result<Outcome, HarnessError> {
    let (mut m, _) = build_machine(sc, &sc.machine)?;
    let cfg = AttackConfig { mode: ExceptionMode::Handling, ..sc.attack.clone() };
    let mut a = attacker(&mut m, &cfg)?;
    let latencies = a.toy_example(sc.toy_data)?.to_vec();
    Ok(Outcome::Toy { data: sc.toy_data, threshold: a.threshold(), latencies })
}

fn kaslr_search(sc: &Scenario) -> Result<(Outcome, Vec<String>), HarnessError> {
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    let slots = kaslr_slots(sc.machine.vmem.kaslr_entropy_bits, sc.machine.vmem.phys_size);
    for t in 0..sc.kaslr_trials {
        let mut mcfg = sc.machine.clone();
        mcfg.vmem.kaslr = true;
        mcfg.vmem.seed = sc.machine.vmem.seed.wrapping_add(t);
        let (mut m, _) = build_machine(sc, &mcfg)?;
        let actual = m.asp.direct_map_base();
        let size = m.asp.phys_size();
        let mut a = attacker(&mut m, &sc.attack)?;
        let (found, probes) = match a.find_direct_map(size) {
            Ok(k) => (Some(k.base), k.probes),
            Err(AttackError::NotFound { probes }) => (None, probes),
            Err(e) => return Err(e.into()),
        };
        if found != Some(actual) {
            failures.push(format!("trial seed {}: direct map at {:#x} not found", mcfg.vmem.seed, actual.get()));
        } else if probes > slots {
            failures.push(format!("trial seed {}: {probes} probes exceeds {slots} slots", mcfg.vmem.seed));
        }
        trials.push(KaslrTrial { seed: mcfg.vmem.seed, actual, found, probes });
    }
    Ok((Outcome::Kaslr { slots, trials }, failures))
}

/// The four countermeasure cells, in report order.
pub fn matrix_configs(base: &MachineConfig) -> Vec<(&'static str, MachineConfig)> {
    let mut kaiser = base.clone();
    kaiser.vmem.kaiser = true;
    let mut serialized = base.clone();
    serialized.cpu.check = CheckMode::SerializedCheck;
    let mut split = base.clone();
    split.vmem.hard_split = true;
    vec![("baseline", base.clone()), ("kaiser", kaiser), ("serialized-check", serialized), ("hard-split", split)]
}

fn matrix(sc: &Scenario) -> Result<(Outcome, Vec<String>), HarnessError> {
    let cells = matrix_configs(&sc.machine);
    let results: Vec<Result<DumpSummary, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            cells.iter().map(|(name, cfg)| s.spawn(move || dump_cell(name, sc, cfg, &sc.attack))).collect();
        handles.into_iter().map(|h| h.join().expect("matrix cell panicked")).collect()
    });
    let cells = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut failures = Vec::new();
    let need = sc.min_accuracy.unwrap_or(MATRIX_MIN_ACCURACY);
    for c in &cells {
        if c.label == "baseline" {
            match c.accuracy {
                Some(a) if a >= need => {}
                Some(a) => failures.push(format!("baseline accuracy {:.2}% below {:.2}%", a * 100.0, need * 100.0)),
                None => failures.push("baseline range is not fully planted; no accuracy".into()),
            }
        } else if c.hits > 0 {
            failures.push(format!("{}: {} bytes leaked", c.label, c.hits));
        }
    }
    Ok((Outcome::Matrix(cells), failures))
}

fn bench(sc: &Scenario) -> Result<(Outcome, Vec<String>), HarnessError> {
    let mut mcfg = sc.machine.clone();
    mcfg.cpu.tsx = true;
    let run =
        |mode| dump_cell(&format!("{mode:?}").to_lowercase(), sc, &mcfg, &AttackConfig { mode, ..sc.attack.clone() });
    let handling = run(ExceptionMode::Handling)?;
    let suppression = run(ExceptionMode::Suppression)?;
    let mut failures = Vec::new();
    if suppression.cycles_per_byte >= handling.cycles_per_byte {
        failures.push(format!(
            "suppression ({:.1} cycles/byte) is not faster than handling ({:.1})",
            suppression.cycles_per_byte, handling.cycles_per_byte
        ));
    }
    Ok((Outcome::Bench { handling, suppression }, failures))
}

/// Runs a parsed scenario. Writes nothing.
pub fn run(sc: &Scenario) -> Result<Report, HarnessError> {
    let (outcome, mut failures) = match sc.experiment {
        Experiment::Dump => (Outcome::Dump(dump_cell("dump", sc, &sc.machine, &sc.attack)?), Vec::new()),
        Experiment::Toy => (toy(sc)?, Vec::new()),
        Experiment::KaslrSearch => kaslr_search(sc)?,
        Experiment::Matrix => matrix(sc)?,
        Experiment::Bench => bench(sc)?,
    };
    if let (Some(need), Outcome::Dump(d)) = (sc.min_accuracy, &outcome) {
        match d.accuracy {
            Some(a) if a >= need => {}
            Some(a) => failures.push(format!("accuracy {:.2}% below {:.2}%", a * 100.0, need * 100.0)),
            None => failures.push("dumped range is not fully planted; no accuracy".into()),
        }
    }
    Ok(Report::new(sc, outcome, failures))
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| HarnessError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// Writes the report and, for the toy experiment, the latency CSV, to the scenario's outputs.
pub fn write_outputs(sc: &Scenario, report: &Report) -> Result<(), HarnessError> {
    if let Some(p) = &sc.report {
        write_atomic(p, report.to_string().as_bytes())?;
    }
    if let (Some(p), Some(lat)) = (&sc.csv, report.latencies()) {
        write_atomic(p, latency_csv(lat).as_bytes())?;
    }
    Ok(())
}

/// Loads, runs and writes out a scenario file.
pub fn run_scenario(path: &Path) -> Result<Report, HarnessError> {
    let sc = Scenario::from_file(path)?;
    let report = run(&sc)?;
    write_outputs(&sc, &report)?;
    Ok(report)
}
