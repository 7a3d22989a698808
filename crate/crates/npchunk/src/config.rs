//! TOML run configuration and cost parameter files.
//!
//! Values are resolved in three layers: built-in defaults, then the
//! config file, then explicit command-line flags.
//!
//! ```toml
//! seed = 3
//!
//! [al]
//! batch_size = 50
//! measure = "f-complement"
//!
//! [tbl]
//! score_threshold = 2
//! ```

use std::path::Path;

use npchunk_core::al::{AlConfig, Measure, SplitMethod};
use npchunk_core::cost::{CostParams, Method};
use npchunk_core::tbl::TblConfig;
use serde::Deserialize;

use crate::{io, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub al: AlSection,
    #[serde(default)]
    pub tbl: TblSection,
    pub cost: Option<CostFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlSection {
    pub init_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub committee: Option<usize>,
    pub split: Option<SplitMethod>,
    pub measure: Option<Measure>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TblSection {
    pub score_threshold: Option<f64>,
    pub max_rules: Option<usize>,
    pub templates: Option<Vec<u8>>,
}

/// Flat `key = value` cost parameters; missing keys take the defaults
/// for the method.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    pub method: Option<Method>,
    pub idc: Option<f64>,
    pub s0: Option<f64>,
    pub ac_tb: Option<f64>,
    pub lc: Option<f64>,
    pub mc: Option<f64>,
}

impl CostFile {
    pub fn resolve(&self, method: Option<Method>) -> CostParams {
        let method = method.or(self.method).unwrap_or(Method::Annotation);
        let d = CostParams::defaults(method);
        CostParams {
            idc: self.idc.unwrap_or(d.idc),
            s0: self.s0.unwrap_or(d.s0),
            ac_tb: self.ac_tb.unwrap_or(d.ac_tb),
            lc: self.lc.unwrap_or(d.lc),
            mc: self.mc.unwrap_or(d.mc),
            method,
        }
    }
}

/// The shipped cost parameter file.
pub const DEFAULT_COST_FILE: &str = include_str!("../data/cost-defaults.toml");

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    parse_toml(path, &io::read_text(path)?)
}

pub fn load_cost_file(path: &Path) -> Result<CostFile> {
    parse_toml(path, &io::read_text(path)?)
}

pub fn default_cost_file() -> CostFile {
    toml::from_str(DEFAULT_COST_FILE).expect("shipped cost file parses")
}

/// Flag values given on the command line; `None` means not given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub init_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub committee: Option<usize>,
    pub split: Option<SplitMethod>,
    pub measure: Option<Measure>,
    pub iterations: Option<usize>,
    pub threshold: Option<f64>,
    pub max_rules: Option<usize>,
}

pub fn resolve_tbl(file: &FileConfig, flags: &Overrides) -> TblConfig {
    let d = TblConfig::default();
    TblConfig {
        templates: file.tbl.templates.clone().unwrap_or(d.templates),
        score_threshold: flags
            .threshold
            .or(file.tbl.score_threshold)
            .unwrap_or(d.score_threshold),
        max_rules: flags
            .max_rules
            .or(file.tbl.max_rules)
            .unwrap_or(d.max_rules),
    }
}

pub fn resolve_al(file: &FileConfig, flags: &Overrides) -> AlConfig {
    let d = AlConfig::default();
    let a = &file.al;
    AlConfig {
        init_size: flags.init_size.or(a.init_size).unwrap_or(d.init_size),
        batch_size: flags.batch_size.or(a.batch_size).unwrap_or(d.batch_size),
        committee: flags.committee.or(a.committee).unwrap_or(d.committee),
        split: flags.split.or(a.split).unwrap_or(d.split),
        measure: flags.measure.or(a.measure).unwrap_or(d.measure),
        iterations: flags.iterations.or(a.iterations).or(d.iterations),
        seed: flags.seed.or(file.seed).unwrap_or(d.seed),
        tbl: resolve_tbl(file, flags),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let file: FileConfig = toml::from_str(
            "seed = 3\n[al]\nbatch_size = 20\ncommittee = 4\nmeasure = \"vote-entropy\"\n[tbl]\nscore_threshold = 5\n",
        )
        .unwrap();
        let flags = Overrides {
            batch_size: Some(10),
            ..Overrides::default()
        };
        let al = resolve_al(&file, &flags);
        assert_eq!(al.batch_size, 10);
        assert_eq!(al.committee, 4);
        assert_eq!(al.measure, Measure::VoteEntropy);
        assert_eq!(al.seed, 3);
        assert_eq!(al.init_size, 100);
        assert_eq!(al.tbl.score_threshold, 5.0);
        assert_eq!(al.tbl.max_rules, 500);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[al]\nbatchsize = 3\n").is_err());
    }

    #[test]
    fn shipped_cost_defaults() {
        let p = default_cost_file().resolve(None);
        assert_eq!(p, CostParams::defaults(Method::Annotation));
        let p = default_cost_file().resolve(Some(Method::RuleWriting));
        assert_eq!(p.mc, 0.12);
        let custom: CostFile = toml::from_str("method = \"rule-writing\"\nac_tb = 0.1\n").unwrap();
        let p = custom.resolve(None);
        assert_eq!((p.method, p.ac_tb, p.lc), (Method::RuleWriting, 0.1, 12.0));
    }
}
