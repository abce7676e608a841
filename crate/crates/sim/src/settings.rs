//! Opening the durable platform behind `feedlab serve`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use feedlab_core::feed::HttpRankerTransport;
use feedlab_core::journal::{Durability, FileJournal};
use feedlab_core::{Platform, PlatformConfig};

pub const SECRET_ENV: &str = "FEEDLAB_TOKEN_SECRET";

fn secret_path(db: &Path) -> PathBuf {
    let mut name = db.as_os_str().to_owned();
    name.push(".secret");
    PathBuf::from(name)
}

/// The completion-token secret: the explicit value if given, otherwise a
/// random one persisted next to the journal so tokens survive restarts.
pub fn token_secret(db: &Path, explicit: Option<&str>) -> Result<Vec<u8>> {
    if let Some(s) = explicit.filter(|s| !s.is_empty()) {
        return Ok(s.as_bytes().to_vec());
    }
    let path = secret_path(db);
    match std::fs::read_to_string(&path) {
        Ok(s) if !s.trim().is_empty() => return Ok(s.trim().as_bytes().to_vec()),
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    }
    let bytes: [u8; 32] = rand::random();
    let secret = hex::encode(bytes);
    std::fs::write(&path, &secret).with_context(|| format!("writing {}", path.display()))?;
    Ok(secret.into_bytes())
}

pub fn open_platform(db: &Path, secret: Option<&str>, durability: Durability) -> Result<Platform> {
    if let Some(dir) = db.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let journal =
        FileJournal::open(db, durability).with_context(|| format!("opening {}", db.display()))?;
    let config = PlatformConfig::new(token_secret(db, secret)?);
    Platform::open(
        Box::new(journal),
        Arc::new(HttpRankerTransport::default()),
        config,
    )
    .with_context(|| format!("replaying {}", db.display()))
}
