//! Run manifest: effective config plus content hashes of the files a
//! command consumed or produced, so any result can be traced to its inputs.

use std::path::Path;

use sha2::{Digest, Sha256};

use mindstack_core::config::ScenarioConfig;
use mindstack_core::Result;

/// Blob-style content hash: sha256 over `blob <len>\0<content>`.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

pub fn write(dir: &Path, cfg: &ScenarioConfig, command: &str, files: &[&Path]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("command: {command}\n"));
    out.push_str(&format!("scenario: {}\n", cfg.name));
    out.push_str(&format!("seed: {}\n", cfg.seed));
    out.push_str("files:\n");
    for f in files {
        if f.exists() {
            out.push_str(&format!("  {} {}\n", content_hash(f)?, f.display()));
        }
    }
    out.push_str("config: |\n");
    for line in cfg.to_toml_string().lines() {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    std::fs::write(dir.join(format!("manifest_{command}.txt")), out)?;
    Ok(())
}
