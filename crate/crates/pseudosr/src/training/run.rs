//! The outer loop: draw a batch, take a step, append a log line, snapshot
//! on schedule. Resuming is just calling this again with a state whose
//! iteration counter is already partway through.

use super::{checkpoint_save, next_batch, train_step, TrainConfig, TrainError, TrainState};
use crate::imaging::Image;
use crate::networks::NetworkBundle;
use autograd::Scalar;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    /// Scheduled snapshots, in the order they were written.
    pub checkpoints: Vec<PathBuf>,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io { path: path.to_path_buf(), source }
}

/// Train from `state.iter` up to `cfg.total_iters`, writing a JSON-lines
/// log and periodic snapshots under `out_dir`. A fresh run truncates the
/// log; a resumed run appends to it. A non-finite loss aborts the run
/// after dumping the surviving parameters next to the log.
pub fn run_training<S: Scalar>(
    nets: &mut NetworkBundle<S>,
    cfg: &TrainConfig,
    lr_pool: &[Image],
    hr_pool: &[Image],
    out_dir: &Path,
    state: &mut TrainState,
) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    if nets.scale != cfg.scale {
        return Err(TrainError::Config(format!(
            "network bundle is built for scale {}, config requests {}",
            nets.scale, cfg.scale
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(state.iter > 0)
        .write(true)
        .truncate(state.iter == 0)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;

    let mut checkpoints = Vec::new();
    while state.iter < cfg.total_iters {
        let batch = next_batch::<S>(lr_pool, hr_pool, cfg, state)?;
        let record = match train_step(nets, &batch, cfg, state) {
            Ok(r) => r,
            Err(TrainError::NonFinite { iter, term, .. }) => {
                let snap = out_dir.join("nan_snapshot.agc");
                checkpoint_save(&snap, nets, state)?;
                return Err(TrainError::NonFinite { iter, term, snapshot: Some(snap) });
            }
            Err(e) => return Err(e),
        };
        let line = serde_json::to_string(&record)
            .expect("log records serialize without fail");
        writeln!(log, "{line}").map_err(|e| io_err(&log_path, e))?;

        if cfg.checkpoint_every > 0 && state.iter % cfg.checkpoint_every == 0 {
            let p = out_dir.join(format!("ckpt_{:07}.agc", state.iter));
            checkpoint_save(&p, nets, state)?;
            checkpoints.push(p);
        }
    }
    log.flush().map_err(|e| io_err(&log_path, e))?;

    let final_checkpoint = out_dir.join("final.agc");
    checkpoint_save(&final_checkpoint, nets, state)?;
    Ok(RunArtifacts { final_checkpoint, log_path, checkpoints })
}
