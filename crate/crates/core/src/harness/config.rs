//! Scenario files: flat `key = value` lines, `#` or `;` starts a comment.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::attack::{AttackConfig, ExceptionMode};
use crate::error::HarnessError;
use crate::machine::{CheckMode, MachineConfig};
use crate::vmem::{PhysAddr, VirtAddr};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Dump,
    Toy,
    KaslrSearch,
    Matrix,
    Bench,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dump => "dump",
            Experiment::Toy => "toy",
            Experiment::KaslrSearch => "kaslr-search",
            Experiment::Matrix => "matrix",
            Experiment::Bench => "bench",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dump" => Experiment::Dump,
            "toy" => Experiment::Toy,
            "kaslr-search" | "kaslr" => Experiment::KaslrSearch,
            "matrix" | "countermeasure-matrix" => Experiment::Matrix,
            "bench" => Experiment::Bench,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlantSource {
    /// Seeded random bytes.
    Random,
    /// A fixed text sample, repeated.
    Ascii,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plant {
    pub source: PlantSource,
    pub paddr: PhysAddr,
    /// For files, `None` means the whole file.
    pub len: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub experiment: Experiment,
    pub seed: u64,
    pub machine: MachineConfig,
    pub attack: AttackConfig,
    pub plant: Plant,
    /// Extra raw images: `(file, paddr)`.
    pub loads: Vec<(PathBuf, PhysAddr)>,
    /// Absolute start address; defaults to the planted data's direct-map address.
    pub dump_start: Option<VirtAddr>,
    pub dump_len: Option<u64>,
    pub toy_data: u8,
    pub kaslr_trials: u64,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub min_accuracy: Option<f64>,
    /// Seed-derived keys the file set explicitly; `seed` does not override them.
    explicit: HashSet<&'static str>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            experiment: Experiment::Dump,
            seed: 0,
            machine: MachineConfig::default(),
            attack: AttackConfig::default(),
            plant: Plant { source: PlantSource::Random, paddr: PhysAddr(0), len: Some(4096) },
            loads: Vec::new(),
            dump_start: None,
            dump_len: None,
            toy_data: 84,
            kaslr_trials: 1,
            report: None,
            csv: None,
            min_accuracy: None,
            explicit: HashSet::new(),
        }
    }
}

const SEEDED: [&str; 3] = ["vmem.seed", "cache.seed", "window.seed"];

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    /// Parses scenario text. Relative file paths resolve against `dir`.
    pub fn parse(text: &str, dir: Option<&Path>) -> Result<Self, HarnessError> {
        let mut s = Scenario::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::config(
                    format!("line {}", n + 1),
                    format!("expected key = value, got `{line}`"),
                ));
            };
            s.set(key.trim(), value.trim(), dir)?;
        }
        s.set_seed(s.seed);
        Ok(s)
    }

    /// Sets the master seed and every derived seed not pinned by the file.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        for key in SEEDED {
            if self.explicit.contains(key) {
                continue;
            }
            match key {
                "vmem.seed" => self.machine.vmem.seed = seed,
                "cache.seed" => self.machine.cache.seed = seed,
                _ => self.attack.window.seed = seed,
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str, dir: Option<&Path>) -> Result<(), HarnessError> {
        let err = |reason: String| HarnessError::config(key, reason);
        let resolve = |p: &str| match dir {
            Some(d) if Path::new(p).is_relative() => d.join(p),
            _ => PathBuf::from(p),
        };
        if let Some(k) = SEEDED.iter().find(|k| **k == key) {
            self.explicit.insert(k);
        }
        match key {
            "experiment" => {
                self.experiment =
                    Experiment::parse(value).ok_or_else(|| err(format!("unknown experiment `{value}`")))?
            }
            "seed" => self.seed = int(value).map_err(err)?,
            "vmem.phys_size" => self.machine.vmem.phys_size = size(value).map_err(err)?,
            "vmem.kaiser" => self.machine.vmem.kaiser = flag(value).map_err(err)?,
            "vmem.kaslr" => self.machine.vmem.kaslr = flag(value).map_err(err)?,
            "vmem.hard_split" => self.machine.vmem.hard_split = flag(value).map_err(err)?,
            "vmem.seed" => self.machine.vmem.seed = int(value).map_err(err)?,
            "vmem.kaslr_entropy_bits" => self.machine.vmem.kaslr_entropy_bits = int(value).map_err(err)? as u32,
            "vmem.user_pages" => self.machine.vmem.user_pages = int(value).map_err(err)?,
            "cache.hit" => self.machine.cache.hit_latency = int(value).map_err(err)?,
            "cache.miss" => self.machine.cache.miss_latency = int(value).map_err(err)?,
            "cache.threshold" => self.machine.cache.threshold = int(value).map_err(err)?,
            "cache.noise" => self.machine.cache.noise = float(value).map_err(err)?,
            "cache.capacity" => {
                self.machine.cache.capacity = match value {
                    "none" | "unbounded" => None,
                    v => Some(int(v).map_err(err)? as usize),
                }
            }
            "cache.seed" => self.machine.cache.seed = int(value).map_err(err)?,
            "window.W" | "window.w" => self.attack.window.budget = int(value).map_err(err)? as usize,
            "window.p_zero" => {
                let p = float(value).map_err(err)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(err(format!("{p} not in [0, 1]")));
                }
                self.attack.window.p_zero = p;
            }
            "window.seed" => self.attack.window.seed = int(value).map_err(err)?,
            "cost.fault" => self.machine.cpu.fault_cost = int(value).map_err(err)?,
            "cost.abort" => self.machine.cpu.abort_cost = int(value).map_err(err)?,
            "cost.walk" => self.machine.cpu.walk_cost = int(value).map_err(err)?,
            "mode.serialized_check" => {
                self.machine.cpu.check =
                    if flag(value).map_err(err)? { CheckMode::SerializedCheck } else { CheckMode::Baseline }
            }
            "cpu.tsx" => self.machine.cpu.tsx = flag(value).map_err(err)?,
            "cpu.max_steps" => self.machine.cpu.max_steps = int(value).map_err(err)?,
            "attack.mode" => {
                self.attack.mode = match value {
                    "handling" => ExceptionMode::Handling,
                    "suppression" => ExceptionMode::Suppression,
                    _ => return Err(err(format!("expected handling or suppression, got `{value}`"))),
                }
            }
            "attack.bits" => {
                let b = int(value).map_err(err)?;
                if b != 1 && b != 8 {
                    return Err(err(format!("expected 1 or 8, got {b}")));
                }
                self.attack.bits_per_tx = b as u32;
            }
            "attack.retry" => self.attack.retry = flag(value).map_err(err)?,
            "attack.max_retries" => self.attack.max_retries = int(value).map_err(err)? as u32,
            "plant.source" => {
                self.plant.source = match value {
                    "random" => PlantSource::Random,
                    "ascii" => PlantSource::Ascii,
                    "file" => match &self.plant.source {
                        PlantSource::File(_) => return Ok(()),
                        _ => return Err(err("set plant.file instead".into())),
                    },
                    _ => return Err(err(format!("expected random, ascii or file, got `{value}`"))),
                }
            }
            "plant.file" => {
                self.plant.source = PlantSource::File(resolve(value));
                self.plant.len = None;
            }
            "plant.paddr" => self.plant.paddr = PhysAddr(int(value).map_err(err)?),
            "plant.len" => self.plant.len = Some(size(value).map_err(err)?),
            "dump.start" => self.dump_start = Some(VirtAddr(int(value).map_err(err)?)),
            "dump.len" => self.dump_len = Some(size(value).map_err(err)?),
            "toy.data" => {
                let d = int(value).map_err(err)?;
                self.toy_data = u8::try_from(d).map_err(|_| err(format!("{d} does not fit in a byte")))?;
            }
            "kaslr.trials" => self.kaslr_trials = int(value).map_err(err)?.max(1),
            "output.report" => self.report = Some(resolve(value)),
            "output.csv" => self.csv = Some(resolve(value)),
            "assert.min_accuracy" => self.min_accuracy = Some(float(value).map_err(err)?),
            "load" => self.add_load(value, dir)?,
            _ => return Err(HarnessError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Adds a `file@paddr` image.
    pub fn add_load(&mut self, spec: &str, dir: Option<&Path>) -> Result<(), HarnessError> {
        let (file, pa) = spec
            .rsplit_once('@')
            .ok_or_else(|| HarnessError::config("load", format!("expected file@paddr, got `{spec}`")))?;
        let pa = int(pa).map_err(|r| HarnessError::config("load", r))?;
        let path = match dir {
            Some(d) if Path::new(file).is_relative() => d.join(file),
            _ => PathBuf::from(file),
        };
        self.loads.push((path, PhysAddr(pa)));
        Ok(())
    }
}

fn int(v: &str) -> Result<u64, String> {
    let clean = v.replace('_', "");
    let parsed = match clean.strip_prefix("0x").or_else(|| clean.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => clean.parse(),
    };
    parsed.map_err(|e| format!("`{v}` is not an integer: {e}"))
}

/// An integer with an optional K, M or G (binary) suffix.
fn size(v: &str) -> Result<u64, String> {
    let (num, shift) = match v.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&v[..v.len() - 1], 10),
        Some('M') => (&v[..v.len() - 1], 20),
        Some('G') => (&v[..v.len() - 1], 30),
        _ => (v, 0),
    };
    let n = int(num.trim())?;
    n.checked_shl(shift).filter(|x| x >> shift == n).ok_or_else(|| format!("`{v}` overflows"))
}

fn float(v: &str) -> Result<f64, String> {
    v.parse().map_err(|e| format!("`{v}` is not a number: {e}"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got `{v}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let s = Scenario::parse(
            "# a scenario\nexperiment = toy ; trailing\nvmem.phys_size = 8G\ncache.hit=40\nwindow.W = 5\nattack.mode = handling\nseed = 0x10\n",
            None,
        )
        .unwrap();
        assert_eq!(s.experiment, Experiment::Toy);
        assert_eq!(s.machine.vmem.phys_size, 8 << 30);
        assert_eq!(s.machine.cache.hit_latency, 40);
        assert_eq!(s.attack.window.budget, 5);
        assert_eq!(s.attack.mode, ExceptionMode::Handling);
        assert_eq!((s.machine.vmem.seed, s.attack.window.seed), (16, 16));
    }

    #[test]
    fn explicit_seed_keys_stick() {
        let s = Scenario::parse("window.seed = 3\nseed = 9", None).unwrap();
        assert_eq!((s.attack.window.seed, s.machine.vmem.seed), (3, 9));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = Scenario::parse("cache.hitt = 3", None).unwrap_err();
        assert!(e.to_string().contains("cache.hitt"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn bad_values_are_named() {
        for (text, key) in
            [("attack.bits = 4", "attack.bits"), ("vmem.kaiser = maybe", "vmem.kaiser"), ("toy.data = 300", "toy.data")]
        {
            let e = Scenario::parse(text, None).unwrap_err();
            assert!(e.to_string().contains(key), "{e}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let s = Scenario::parse("plant.file = img.bin\nload = more.bin@0x2000", Some(Path::new("/x"))).unwrap();
        assert_eq!(s.plant.source, PlantSource::File("/x/img.bin".into()));
        assert_eq!(s.loads, vec![(PathBuf::from("/x/more.bin"), PhysAddr(0x2000))]);
    }

    #[test]
    fn sizes() {
        assert_eq!(size("4K"), Ok(4096));
        assert_eq!(size("0x10"), Ok(16));
        assert!(size("99999999999G").is_err());
    }
}
