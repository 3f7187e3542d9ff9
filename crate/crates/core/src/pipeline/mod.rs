//! Config-driven orchestration of the whole method across waves.

mod config;
pub mod features;
mod stages;
mod svg;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{
    DeriveConfig, InterpretConfig, MlConfig, MlmConfig, RunConfig, Source, WaveEntry, WaveFiles,
};
pub use stages::{
    derive_variables, elasticity, knots, load_prepared, load_raw, ml, mlm, pdp, prepare, synth, FinalModel,
    OutputDir, PreparedWave,
};
pub use svg::{render_pdp_svg, write_pdp_svg, Frame, HEIGHT, PLOT, WIDTH};

use crate::ensemble::MODEL_FORMAT_VERSION;
use crate::{Error, Result};

/// Stage names in execution order.
pub const STAGES: [&str; 6] = ["prepare", "ml", "pdp", "knots", "mlm", "elasticity"];

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub elapsed_ms: u128,
}

/// Run record written to `manifest.json`; the only output that carries
/// timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_format_version: u32,
    pub config_path: String,
    pub config: RunConfig,
    pub seed: u64,
    pub jobs: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub status: String,
    pub error: Option<String>,
    pub stages: Vec<StageTiming>,
    pub waves: Vec<PreparedWave>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Runs one named stage.
pub fn run_stage(name: &str, cfg: &RunConfig, out: &OutputDir) -> Result<()> {
    match name {
        "prepare" => prepare(cfg, out).map(|_| ()),
        "ml" => ml(cfg, out),
        "pdp" => pdp(cfg, out),
        "knots" => knots(cfg, out).map(|_| ()),
        "mlm" => mlm(cfg, out).map(|_| ()),
        "elasticity" => elasticity(cfg, out),
        "synth" => synth(cfg, out).map(|_| ()),
        other => Err(Error::Config(format!("unknown stage `{other}`"))),
    }
}

/// Every stage in order, then `manifest.json` (also written when a stage
/// fails, recording the error). Outputs of completed stages are kept.
pub fn run_all(cfg: &RunConfig, out_dir: &Path, config_path: &str, jobs: usize) -> Result<Manifest> {
    let out = OutputDir::new(out_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let started = now_ms();
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        model_format_version: MODEL_FORMAT_VERSION,
        config_path: config_path.to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        jobs,
        started_unix_ms: started,
        finished_unix_ms: started,
        status: "ok".into(),
        error: None,
        stages: Vec::new(),
        waves: Vec::new(),
    };
    let mut failure = None;
    for stage in STAGES {
        let t = Instant::now();
        let r = if stage == "prepare" {
            prepare(cfg, &out).map(|w| manifest.waves = w)
        } else {
            run_stage(stage, cfg, &out)
        };
        manifest.stages.push(StageTiming {
            stage: stage.to_string(),
            elapsed_ms: t.elapsed().as_millis(),
        });
        log::info!("stage {stage} finished in {:.1?}", t.elapsed());
        if let Err(e) = r {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            failure = Some(e);
            break;
        }
    }
    manifest.finished_unix_ms = now_ms();
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}
