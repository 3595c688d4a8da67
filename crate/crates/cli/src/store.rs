//! Atomic file output and the on-disk ground-state cache.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use supercrit::fowler::{ground_state, GroundState};
use supercrit::{Exponents, Grid, RadialProfile};

pub const CACHE_ENV: &str = "SUPERCRIT_CACHE_DIR";
const CACHE_FORMAT: &str = "supercrit ground state v1";

/// Writes to a temporary file next to `path`, then renames over it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One JSON-lines record. `timestamp` is the only field that varies between
/// identical runs.
#[derive(Serialize)]
pub struct Record<'a, T: Serialize> {
    pub timestamp: u64,
    pub command: &'a str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub body: T,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// `--cache-dir` if given, else `$SUPERCRIT_CACHE_DIR`, else no cache.
pub fn cache_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

pub fn cache_key(e: &Exponents, g: &Grid) -> String {
    let text = format!(
        "{CACHE_FORMAT}\nn={}\np={:e}\nsmin={:e}\nsmax={:e}\ncount={}\n",
        e.n,
        e.p,
        g.s_min(),
        g.s_max(),
        g.count()
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Disabled,
    Hit,
    Miss,
}

impl CacheStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Disabled => "disabled",
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
        }
    }
}

/// Ground state for `(e, g)`, read from or stored into `cache` when one is set.
/// An unreadable cache entry is recomputed and replaced.
pub fn load_ground_state(e: &Exponents, g: &Arc<Grid>, cache: Option<&Path>) -> Result<(GroundState, CacheStatus)> {
    let Some(dir) = cache else {
        return Ok((ground_state(e, g)?, CacheStatus::Disabled));
    };
    let path = dir.join(format!("gs-{}.csv", cache_key(e, g)));
    if let Ok(text) = std::fs::read_to_string(&path) {
        match RadialProfile::from_csv(g.clone(), &text) {
            Ok(profile) => return Ok((GroundState::from_profile(*e, profile, 0.0), CacheStatus::Hit)),
            Err(err) => eprintln!("warning: ignoring cache entry {}: {err}", path.display()),
        }
    }
    let gs = ground_state(e, g)?;
    write_atomic(&path, gs.profile.to_csv().as_bytes())?;
    Ok((gs, CacheStatus::Miss))
}
