//! Input loading, config expansion, and the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use facestab_core::report::fnv1a64;
use facestab_core::Dictionary;

/// Rewrite argv so `--config file.json` entries become leading flags
/// (user flags come later and win).
pub fn expand_config_args(raw: Vec<String>) -> Result<Vec<String>> {
    let mut config_path: Option<String> = None;
    let mut rest: Vec<String> = Vec::with_capacity(raw.len());
    let mut it = raw.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            config_path = Some(
                it.next()
                    .context("--config requires a path argument")?,
            );
        } else if let Some(p) = arg.strip_prefix("--config=") {
            config_path = Some(p.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config_path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config file {path}"))?;
    let map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).with_context(|| format!("parsing config file {path}"))?;
    // Explicit flags win: config keys already present on the command line
    // are dropped rather than duplicated.
    let user_flags: std::collections::HashSet<String> = rest
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut injected = Vec::new();
    for (key, value) in &map {
        if user_flags.contains(key) {
            continue;
        }
        injected.push(format!("--{key}"));
        let rendered = match value {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            other => bail!("config key {key:?} must be a scalar, got {other}"),
        };
        injected.push(rendered);
    }
    // program, subcommand, config flags, then the user's flags.
    let mut out = Vec::with_capacity(rest.len() + injected.len());
    let mut rest_it = rest.into_iter();
    if let Some(prog) = rest_it.next() {
        out.push(prog);
    }
    if let Some(sub) = rest_it.next() {
        out.push(sub);
    }
    out.extend(injected);
    out.extend(rest_it);
    Ok(out)
}

/// Output directory: `--out`, else `FACESTAB_OUTPUT_DIR`, else `./facestab-out`.
pub fn resolve_out_dir(flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = match flag {
        Some(d) => d.clone(),
        None => match std::env::var_os("FACESTAB_OUTPUT_DIR") {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("facestab-out"),
        },
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// Load a dictionary (and optional value rows) from CSV or FSTB, sniffing
/// the binary magic.
pub fn load_dictionary(path: &Path) -> Result<(Dictionary, Option<Vec<Vec<f64>>>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"FSTB") {
        Ok(Dictionary::parse_fstb(&bytes)?)
    } else {
        let text = String::from_utf8(bytes)
            .with_context(|| format!("{} is neither FSTB nor UTF-8 CSV", path.display()))?;
        Ok((Dictionary::parse_csv(&text)?, None))
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {t:?} in list"))
        })
        .collect()
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("bad integer {t:?} in list"))
        })
        .collect()
}

pub fn parse_query(s: &str) -> Result<DVector<f64>> {
    let vals = parse_f64_list(s)?;
    if let Some(pos) = vals.iter().position(|x| !x.is_finite()) {
        bail!("query coordinate {pos} is not finite");
    }
    Ok(DVector::from_vec(vals))
}

#[derive(Serialize)]
struct ManifestArtifact {
    name: String,
    bytes: usize,
    fnv1a64: String,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    seed: u64,
    parameters: serde_json::Value,
    artifacts: Vec<ManifestArtifact>,
    unix_time_secs: u64,
}

/// Collector that writes artifacts and then the manifest stamping them.
pub struct RunWriter {
    dir: PathBuf,
    command: String,
    seed: u64,
    parameters: serde_json::Value,
    artifacts: Vec<ManifestArtifact>,
}

impl RunWriter {
    pub fn new(dir: PathBuf, command: &str, seed: u64, parameters: serde_json::Value) -> Self {
        Self {
            dir,
            command: command.to_string(),
            seed,
            parameters,
            artifacts: Vec::new(),
        }
    }

    pub fn write_artifact(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(ManifestArtifact {
            name: name.to_string(),
            bytes: body.len(),
            fnv1a64: format!("{:016x}", fnv1a64(body.as_bytes())),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let body = serde_json::to_string_pretty(value)?;
        self.write_artifact(name, &body)
    }

    pub fn finish(self) -> Result<()> {
        let manifest = Manifest {
            command: self.command,
            seed: self.seed,
            parameters: self.parameters,
            artifacts: self.artifacts,
            unix_time_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let body = serde_json::to_string_pretty(&manifest)?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
