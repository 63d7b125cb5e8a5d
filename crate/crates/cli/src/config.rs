//! Effective run configuration: a JSON config file overlaid with the flags
//! given on the command line, echoed into the output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with default parameters; flags override its values.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Merges `file` (if any) with the non-null entries of `flags`; the result
/// also carries `seed` when given. Unknown keys in either layer are errors
/// only if the target type rejects them.
pub fn resolve<T: DeserializeOwned>(common: &Common, flags: &impl Serialize) -> Result<(T, Value), CliError> {
    let mut merged = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::usage(format!("config {} must be a JSON object", path.display()))),
                Err(e) => return Err(CliError::usage(format!("config {}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let overlay = serde_json::to_value(flags).map_err(|e| CliError::usage(e.to_string()))?;
    if let Value::Object(m) = overlay {
        for (k, v) in m {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    if let Some(seed) = common.seed {
        merged.insert("seed".into(), seed.into());
    }
    let value = Value::Object(merged);
    let cfg = serde_json::from_value(value.clone()).map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
    Ok((cfg, value))
}

/// Fully resolved config as written to `config.json`.
pub fn echo(out: &Path, cfg: &impl Serialize) -> Result<(), CliError> {
    write_json(&out.join("config.json"), cfg)
}

pub fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().ok_or_else(|| CliError::usage("--out <DIR> is required"))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Pretty JSON on stdout; a closed pipe (e.g. `| head`) is not an error.
pub fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
