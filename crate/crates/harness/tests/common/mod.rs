#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use fsd_harness::{parse_scenario, Config, ScenarioEvent};

pub struct Golden {
    pub name: String,
    pub events: Vec<ScenarioEvent>,
    pub config: Config,
    pub expected_log: String,
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Every `*.scn` with its `.log` and optional `.cfg`, by name.
pub fn goldens() -> Vec<Golden> {
    let mut paths: Vec<PathBuf> = fs::read_dir(golden_dir())
        .expect("golden dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let events = parse_scenario(&fs::read_to_string(&p).unwrap()).unwrap();
            let config = match fs::read_to_string(p.with_extension("cfg")) {
                Ok(text) => Config::parse(&text).unwrap(),
                Err(_) => Config::default(),
            };
            let expected_log = fs::read_to_string(p.with_extension("log")).unwrap();
            Golden {
                name,
                events,
                config,
                expected_log,
            }
        })
        .collect()
}
