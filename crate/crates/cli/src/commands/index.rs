use std::path::PathBuf;

use anyhow::{bail, Result};

use crate::bench::{available_db_ids, resolve_db};
use crate::config::AppConfig;
use crate::runtime::load_or_build;
use crate::{db_root, CommonArgs};

/// Index every database under the root. Exit code 2 when some databases
/// failed and the rest were indexed.
pub fn run(app: &AppConfig, common: &CommonArgs, out: Option<PathBuf>) -> Result<i32> {
    let root = db_root(app)?;
    let out = out.unwrap_or_else(|| app.pipeline.cache_dir.join("catalogs"));
    let ids = available_db_ids(&root);
    if ids.is_empty() {
        bail!("no databases found under {}", root.display());
    }
    let mut failures = 0;
    for id in &ids {
        let Some(path) = resolve_db(&root, id) else {
            println!("{id}: FAILED: database file not found");
            failures += 1;
            continue;
        };
        if common.dry_run {
            println!("{id}: would index {}", path.display());
            continue;
        }
        let dir_or_file = if root.join(id).is_dir() { root.join(id) } else { path };
        match load_or_build(&dir_or_file, id, &app.pipeline, &out) {
            Ok((a, hit)) => println!(
                "{id}: {} ({} tables, {} columns, {} values indexed, {} descriptions)",
                if hit { "cached" } else { "built" },
                a.catalog.tables.len(),
                a.catalog.num_columns(),
                a.index.entries.len(),
                a.catalog.descriptions.len()
            ),
            Err(e) => {
                println!("{id}: FAILED: {e:#}");
                failures += 1;
            }
        }
    }
    println!("{} of {} databases indexed into {}", ids.len() - failures, ids.len(), out.display());
    Ok(if failures > 0 { 2 } else { 0 })
}
