//! Stage runner behind the `stimkit` command.
//!
//! Every stage reads its inputs from the output directory (or the configured
//! data directory), writes its artifacts there and is recorded in
//! `run_manifest.json`.

pub mod config;
pub mod manifest;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stimkit::{Error, Result};

pub use config::{PipelineConfig, Source, DEFAULT_CONFIG};
pub use manifest::{Manifest, StageRecord, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Match,
    Did,
    Forest,
    Ale,
    Incidence,
    Welfare,
    Target,
    Tree,
    Hybrid,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Simulate,
        Stage::Match,
        Stage::Did,
        Stage::Forest,
        Stage::Ale,
        Stage::Incidence,
        Stage::Welfare,
        Stage::Target,
        Stage::Tree,
        Stage::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Match => "match",
            Stage::Did => "did",
            Stage::Forest => "forest",
            Stage::Ale => "ale",
            Stage::Incidence => "incidence",
            Stage::Welfare => "welfare",
            Stage::Target => "target",
            Stage::Tree => "tree",
            Stage::Hybrid => "hybrid",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// Runs one stage, or every stage in dependency order for `all`, and writes
/// the run manifest.
pub fn run(subcommand: &str, cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let stages: Vec<Stage> = if subcommand == "all" {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Simulate || matches!(cfg.source, Source::Simulate(_)))
            .collect()
    } else {
        vec![Stage::from_name(subcommand)
            .ok_or_else(|| Error::Config(format!("unknown subcommand `{subcommand}`")))?]
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
    let mut manifest = Manifest::new(subcommand, cfg.seed, &cfg.text);
    for stage in stages {
        log::info!("running {}", stage.name());
        let mut ctx = Ctx::new(cfg, out, stage);
        stages::run_stage(stage, &mut ctx)?;
        manifest.stages.push(ctx.finish()?);
    }
    manifest.write(out)?;
    Ok(manifest)
}

/// Per-stage bookkeeping of inputs and outputs.
pub(crate) struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: &'a Path,
    stage: Stage,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig, out: &'a Path, stage: Stage) -> Self {
        Ctx {
            cfg,
            out,
            stage,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// An artifact of an earlier stage; missing files name that stage.
    pub fn upstream(&mut self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "`{}` needs {rel}, which is missing from the output directory; run `stimkit {}` first",
                self.stage.name(),
                producer.name()
            )));
        }
        self.inputs.insert(rel.to_string(), manifest::hash_file(&path)?);
        Ok(path)
    }

    /// An external input file, recorded under `key`.
    pub fn external(&mut self, key: &str, path: &Path) -> Result<()> {
        self.inputs.insert(key.to_string(), manifest::hash_file(path)?);
        Ok(())
    }

    /// Registers an output and returns its path.
    pub fn output(&mut self, rel: &str) -> PathBuf {
        self.outputs.push(rel.to_string());
        self.out.join(rel)
    }

    fn finish(self) -> Result<StageRecord> {
        let mut outputs = BTreeMap::new();
        for rel in self.outputs {
            let h = manifest::hash_file(&self.out.join(&rel))?;
            outputs.insert(rel, h);
        }
        Ok(StageRecord {
            stage: self.stage.name().to_string(),
            inputs: self.inputs,
            outputs,
        })
    }
}
