//! Subprocess evaluator protocol.
//!
//! The command is run as `<command> <train_file> <val_file>` (through
//! `sh -c`, so it may carry its own arguments). Both files are in the corpus
//! record format. The command must exit 0 and print one JSON object with
//! `accuracy` and `macro_f1` in `[0, 1]` on standard output.

use std::path::Path;
use std::process::Command;

use serde::Deserialize;

use super::{EvalResult, SearchError};
use crate::corpus::{save_dataset, Dataset};

#[derive(Deserialize)]
struct Reply {
    accuracy: f64,
    macro_f1: f64,
}

fn parse_reply(stdout: &str) -> Option<Reply> {
    let trimmed = stdout.trim();
    serde_json::from_str(trimmed).ok().or_else(|| {
        // tolerate log lines before the result
        trimmed
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| serde_json::from_str(l.trim()).ok())
    })
}

/// Runs `command` on two existing record files.
pub fn run_external_evaluator(
    command: &str,
    train_path: &Path,
    val_path: &Path,
    train_count: usize,
    val_count: usize,
) -> Result<EvalResult, SearchError> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} \"$@\""))
        .arg("sh")
        .arg(train_path)
        .arg(val_path)
        .output()
        .map_err(|e| SearchError::EvaluatorSpawn {
            command: command.to_string(),
            reason: e.to_string(),
        })?;
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    if !output.status.success() {
        return Err(SearchError::EvaluatorFailed {
            command: command.to_string(),
            status: output.status.code(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let reply = parse_reply(&stdout).ok_or(SearchError::EvaluatorOutput { raw: stdout })?;
    EvalResult::new(reply.accuracy, reply.macro_f1, train_count, val_count)
}

/// Writes both datasets to a scratch directory and runs the command on them.
pub fn external_train_eval(
    command: &str,
    train: &Dataset,
    val: &Dataset,
) -> Result<EvalResult, SearchError> {
    let dir = tempfile::tempdir().map_err(|e| SearchError::EvaluatorSpawn {
        command: command.to_string(),
        reason: e.to_string(),
    })?;
    let train_path = dir.path().join("train.jsonl");
    let val_path = dir.path().join("val.jsonl");
    save_dataset(train, &train_path)?;
    save_dataset(val, &val_path)?;
    run_external_evaluator(command, &train_path, &val_path, train.len(), val.len())
}
