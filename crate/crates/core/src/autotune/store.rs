use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{TrialResult, Workload};
use crate::error::{Error, Result};
use crate::kernels::TileConfig;

/// Overrides the machine part of store keys.
pub const MACHINE_TAG_ENV: &str = "BITSERIAL_MACHINE_TAG";

/// `$BITSERIAL_MACHINE_TAG`, or `arch-os-<cores>c`.
pub fn machine_tag() -> String {
    match std::env::var(MACHINE_TAG_ENV) {
        Ok(tag) if !tag.is_empty() => tag,
        _ => {
            let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
            format!(
                "{}-{}-{cores}c",
                std::env::consts::ARCH,
                std::env::consts::OS
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredConfig {
    pub config: TileConfig,
    pub min_ns: u64,
    pub median_ns: u64,
}

/// Result of [`ConfigStore::lookup`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup<'a> {
    Found(&'a StoredConfig),
    /// Only tuned on another machine; the entry is returned for reference.
    OtherMachine {
        machine: String,
        entry: &'a StoredConfig,
    },
    NotFound,
}

/// Tuned configurations, one per workload key.
///
/// Text format, one record per line:
///
/// ```text
/// matmul|64x64x64|w2a2|u64|x86_64-linux-8c<TAB>splits=8,8,16;order=0,2,1;unroll=true;parallel=true;vector=1;min_ns=1200;median_ns=1300
/// ```
///
/// Blank lines and lines starting with `#` are skipped, unknown fields are
/// ignored, and when a key repeats the later record wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigStore {
    entries: BTreeMap<String, StoredConfig>,
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',')
        .map(|s| {
            let s = s.trim();
            if s == "*" {
                Ok(usize::MAX)
            } else {
                s.parse().map_err(|_| format!("bad integer {s:?}"))
            }
        })
        .collect()
}

fn join_list(v: &[usize]) -> String {
    v.iter()
        .map(|&s| {
            if s == usize::MAX {
                "*".to_string()
            } else {
                s.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_record(fields: &str) -> std::result::Result<StoredConfig, String> {
    let (mut splits, mut order) = (None, None);
    let mut config = TileConfig::untiled(3);
    let (mut min_ns, mut median_ns) = (0, 0);
    for field in fields.split(';').map(str::trim).filter(|f| !f.is_empty()) {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| format!("field {field:?} has no '='"))?;
        let v = v.trim();
        let flag = |v: &str| {
            v.parse::<bool>()
                .map_err(|_| format!("bad boolean {v:?} for {k}"))
        };
        let num = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| format!("bad integer {v:?} for {k}"))
        };
        match k.trim() {
            "splits" => splits = Some(parse_list(v)?),
            "order" => order = Some(parse_list(v)?),
            "unroll" => config.unroll = flag(v)?,
            "parallel" => config.parallel = flag(v)?,
            "vector" => config.vector = num(v)? as usize,
            "min_ns" => min_ns = num(v)?,
            "median_ns" => median_ns = num(v)?,
            _ => {}
        }
    }
    config.splits = splits.ok_or("missing splits")?;
    config.order = order.ok_or("missing order")?;
    config.validate(3).map_err(|e| e.to_string())?;
    Ok(StoredConfig {
        config,
        min_ns,
        median_ns,
    })
}

impl ConfigStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses store text, returning warnings for overridden keys.
    pub fn parse(text: &str) -> Result<(Self, Vec<String>)> {
        let mut store = ConfigStore::new();
        let mut warnings = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, fields) = raw.split_once('\t').ok_or_else(|| Error::StoreParse {
                line,
                message: "expected key<TAB>fields".into(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::StoreParse {
                    line,
                    message: "empty key".into(),
                });
            }
            let entry =
                parse_record(fields).map_err(|message| Error::StoreParse { line, message })?;
            if store.entries.insert(key.to_string(), entry).is_some() {
                let w = format!("line {line}: duplicate key {key}, later entry wins");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        Ok((store, warnings))
    }

    /// Reads a store file; a missing file is an empty store.
    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok((Self::new(), Vec::new())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, e) in &self.entries {
            let c = &e.config;
            let _ = writeln!(
                out,
                "{key}\tsplits={};order={};unroll={};parallel={};vector={};min_ns={};median_ns={}",
                join_list(&c.splits),
                join_list(&c.order),
                c.unroll,
                c.parallel,
                c.vector,
                e.min_ns,
                e.median_ns
            );
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&StoredConfig> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: &str, trial: &TrialResult) {
        self.entries.insert(
            key.to_string(),
            StoredConfig {
                config: trial.config.clone(),
                min_ns: trial.min_ns,
                median_ns: trial.median_ns,
            },
        );
    }

    pub fn persist_best(&mut self, workload: &Workload, machine: &str, trial: &TrialResult) {
        self.insert(&workload.key(machine), trial);
    }

    /// Finds the entry for `workload` on `machine`, falling back to an entry
    /// from another machine (with a warning).
    pub fn lookup(&self, workload: &Workload, machine: &str) -> Lookup<'_> {
        if let Some(e) = self.entries.get(&workload.key(machine)) {
            return Lookup::Found(e);
        }
        let prefix = workload.key("");
        for (key, entry) in &self.entries {
            if let Some(other) = key.strip_prefix(&prefix) {
                log::warn!("{workload}: using configuration tuned on {other}, not {machine}");
                return Lookup::OtherMachine {
                    machine: other.to_string(),
                    entry,
                };
            }
        }
        Lookup::NotFound
    }

    /// Config to run for `workload`: the stored one for this machine, else
    /// `fallback`.
    pub fn load_best(
        &self,
        workload: &Workload,
        machine: &str,
        fallback: TileConfig,
    ) -> TileConfig {
        match self.lookup(workload, machine) {
            Lookup::Found(e) => e.config.clone(),
            Lookup::OtherMachine { .. } | Lookup::NotFound => fallback,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{DotSpec, KernelStats};
    use crate::word::WordWidth;

    fn workload() -> Workload {
        Workload::Matmul {
            rows: 64,
            cols: 64,
            depth: 64,
            spec: DotSpec::new(2, 2).unwrap(),
            width: WordWidth::W64,
        }
    }

    fn trial(splits: &[usize]) -> TrialResult {
        TrialResult {
            config: TileConfig::new(splits, &[2, 0, 1])
                .with_vector(4)
                .with_unroll(false),
            min_ns: 100,
            median_ns: 120,
            checksum: 0,
            stats: KernelStats::default(),
        }
    }

    #[test]
    fn round_trip() {
        let mut s = ConfigStore::new();
        s.persist_best(&workload(), "m1", &trial(&[8, 4, 16]));
        s.insert("x|y", &trial(&[usize::MAX, 1, 2]));
        let (back, warnings) = ConfigStore::parse(&s.to_text()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, s);
        assert_eq!(back.get("x|y").unwrap().config.splits[0], usize::MAX);
        assert_eq!(
            back.lookup(&workload(), "m1"),
            Lookup::Found(&StoredConfig {
                config: trial(&[8, 4, 16]).config,
                min_ns: 100,
                median_ns: 120
            })
        );
    }

    #[test]
    fn key_format() {
        assert_eq!(workload().key("m1"), "matmul|64x64x64|w2a2|u64|m1");
    }

    #[test]
    fn missing_and_foreign() {
        let mut s = ConfigStore::new();
        assert_eq!(s.lookup(&workload(), "m1"), Lookup::NotFound);
        let fallback = TileConfig::untiled(3);
        assert_eq!(s.load_best(&workload(), "m1", fallback.clone()), fallback);
        s.persist_best(&workload(), "m2", &trial(&[2, 2, 2]));
        assert!(
            matches!(s.lookup(&workload(), "m1"), Lookup::OtherMachine { machine, .. } if machine == "m2")
        );
        assert_eq!(s.load_best(&workload(), "m1", fallback.clone()), fallback);
    }

    #[test]
    fn later_duplicate_wins() {
        let text = "k\tsplits=1,1,1;order=0,1,2\nk\tsplits=2,2,2;order=0,1,2;future=9\n";
        let (s, warnings) = ConfigStore::parse(text).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("line 2"));
        assert_eq!(s.get("k").unwrap().config.splits, vec![2, 2, 2]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            ("# c\n\nk splits=1,1,1;order=0,1,2\n", 3),
            (
                "k\tsplits=1,1,1;order=0,1,2\nk\tsplits=1,x,1;order=0,1,2\n",
                2,
            ),
            ("k\tsplits=1,1,1\n", 1),
            ("k\tsplits=1,1,1;order=0,0,2\n", 1),
            ("k\tsplits=1,1,1;order=0,1,2;unroll=maybe\n", 1),
        ];
        for (text, want) in cases {
            match ConfigStore::parse(text) {
                Err(Error::StoreParse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
