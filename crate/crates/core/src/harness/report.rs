use std::fmt::{self, Write};

use super::config::{Experiment, Scenario};
use super::hexdump::{format_hexdump, latency_csv};
use crate::attack::{ExceptionMode, KaslrFound};
use crate::machine::CheckMode;
use crate::vmem::VirtAddr;

/// Result of dumping one range on one machine.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpSummary {
    pub label: String,
    pub start: VirtAddr,
    pub bytes: Vec<Option<u8>>,
    pub hits: usize,
    pub inferred_zero: usize,
    pub unknown: usize,
    /// Fraction of bytes matching the planted data, when the whole range was planted.
    pub accuracy: Option<f64>,
    pub cycles: u64,
    pub cycles_per_byte: f64,
    /// Set when the direct map had to be located first.
    pub located: Option<KaslrFound>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KaslrTrial {
    pub seed: u64,
    pub actual: VirtAddr,
    pub found: Option<VirtAddr>,
    pub probes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Dump(DumpSummary),
    Toy { data: u8, threshold: u64, latencies: Vec<u64> },
    Kaslr { slots: u64, trials: Vec<KaslrTrial> },
    Matrix(Vec<DumpSummary>),
    Bench { handling: DumpSummary, suppression: DumpSummary },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub experiment: Experiment,
    pub seed: u64,
    pub kaiser: bool,
    pub kaslr: bool,
    pub hard_split: bool,
    pub serialized_check: bool,
    pub attack: String,
    pub outcome: Outcome,
    /// Assertions the scenario implies that did not hold.
    pub failures: Vec<String>,
}

fn on(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl Report {
    pub fn new(sc: &Scenario, outcome: Outcome, failures: Vec<String>) -> Self {
        let a = &sc.attack;
        let mode = match a.mode {
            ExceptionMode::Handling => "handling",
            ExceptionMode::Suppression => "suppression",
        };
        let attack = format!(
            "mode={mode} bits={} retry={} max_retries={} W={} p_zero={}",
            a.bits_per_tx,
            on(a.retry),
            a.max_retries,
            a.window.budget,
            a.window.p_zero
        );
        Self {
            experiment: sc.experiment,
            seed: sc.seed,
            kaiser: sc.machine.vmem.kaiser,
            kaslr: sc.machine.vmem.kaslr,
            hard_split: sc.machine.vmem.hard_split,
            serialized_check: sc.machine.cpu.check == CheckMode::SerializedCheck,
            attack,
            outcome,
            failures,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Probe latencies, for the toy experiment.
    pub fn latencies(&self) -> Option<&[u64]> {
        match &self.outcome {
            Outcome::Toy { latencies, .. } => Some(latencies),
            _ => None,
        }
    }

    /// Median probe count over successful KASLR trials.
    pub fn median_probes(&self) -> Option<u64> {
        let Outcome::Kaslr { trials, .. } = &self.outcome else {
            return None;
        };
        let mut p: Vec<u64> = trials.iter().filter(|t| t.found.is_some()).map(|t| t.probes).collect();
        p.sort_unstable();
        p.get(p.len().saturating_sub(1) / 2).copied()
    }
}

fn write_dump(f: &mut String, d: &DumpSummary) -> fmt::Result {
    writeln!(f, "== {} ==", d.label)?;
    if let Some(k) = d.located {
        writeln!(f, "direct map: {:#x} ({} probes)", k.base.get(), k.probes)?;
    }
    writeln!(f, "start: {:#x}", d.start.get())?;
    writeln!(f, "bytes: {}", d.bytes.len())?;
    match d.accuracy {
        Some(a) => writeln!(f, "accuracy: {:.2}%", a * 100.0)?,
        None => writeln!(f, "accuracy: n/a")?,
    }
    writeln!(f, "hit: {}  inferred-zero: {}  unknown: {}", d.hits, d.inferred_zero, d.unknown)?;
    writeln!(f, "cycles: {}", d.cycles)?;
    writeln!(f, "cycles/byte: {:.1}", d.cycles_per_byte)?;
    writeln!(f)?;
    f.push_str(&format_hexdump(&d.bytes, d.start));
    writeln!(f)
}

impl fmt::Display for Report {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut f = String::new();
        writeln!(f, "experiment: {}", self.experiment.name())?;
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(
            f,
            "countermeasures: kaiser={} kaslr={} hard_split={} serialized_check={}",
            on(self.kaiser),
            on(self.kaslr),
            on(self.hard_split),
            on(self.serialized_check)
        )?;
        writeln!(f, "attack: {}", self.attack)?;
        writeln!(f)?;
        match &self.outcome {
            Outcome::Dump(d) => write_dump(&mut f, d)?,
            Outcome::Toy { data, threshold, latencies } => {
                let hits: Vec<String> =
                    (0..latencies.len()).filter(|&i| latencies[i] < *threshold).map(|i| i.to_string()).collect();
                writeln!(f, "== toy ==")?;
                writeln!(f, "data: {data}")?;
                writeln!(f, "threshold: {threshold}")?;
                writeln!(f, "sub-threshold pages: {}", if hits.is_empty() { "none".into() } else { hits.join(" ") })?;
                writeln!(f)?;
                f.push_str(&latency_csv(latencies));
            }
            Outcome::Kaslr { slots, trials } => {
                writeln!(f, "== kaslr-search ==")?;
                writeln!(f, "candidate slots: {slots}")?;
                let found = trials.iter().filter(|t| t.found == Some(t.actual)).count();
                writeln!(f, "found: {found}/{}", trials.len())?;
                match self.median_probes() {
                    Some(m) => writeln!(f, "median probes: {m}")?,
                    None => writeln!(f, "median probes: n/a")?,
                }
                writeln!(f, "max probes: {}", trials.iter().map(|t| t.probes).max().unwrap_or(0))?;
                writeln!(f)?;
                writeln!(f, "seed,actual,found,probes")?;
                for t in trials {
                    let found = t.found.map_or("none".to_string(), |v| format!("{:#x}", v.get()));
                    writeln!(f, "{},{:#x},{found},{}", t.seed, t.actual.get(), t.probes)?;
                }
            }
            Outcome::Matrix(cells) => {
                writeln!(f, "== matrix ==")?;
                writeln!(f, "{:<18} {:>9} {:>6} {:>8} {:>12}", "cell", "accuracy", "hits", "unknown", "cycles/byte")?;
                for c in cells {
                    let acc = c.accuracy.map_or("n/a".to_string(), |a| format!("{:.2}%", a * 100.0));
                    writeln!(
                        f,
                        "{:<18} {:>9} {:>6} {:>8} {:>12.1}",
                        c.label, acc, c.hits, c.unknown, c.cycles_per_byte
                    )?;
                }
                writeln!(f)?;
                for c in cells {
                    write_dump(&mut f, c)?;
                }
            }
            Outcome::Bench { handling, suppression } => {
                writeln!(f, "== bench ==")?;
                writeln!(f, "handling cycles/byte: {:.1}", handling.cycles_per_byte)?;
                writeln!(f, "suppression cycles/byte: {:.1}", suppression.cycles_per_byte)?;
                writeln!(
                    f,
                    "speedup: {:.2}x",
                    handling.cycles_per_byte / suppression.cycles_per_byte.max(f64::MIN_POSITIVE)
                )?;
                writeln!(f)?;
            }
        }
        if self.failures.is_empty() {
            writeln!(f, "result: ok")?;
        } else {
            for msg in &self.failures {
                writeln!(f, "FAILED: {msg}")?;
            }
        }
        out.write_str(&f)
    }
}
