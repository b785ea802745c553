use std::path::Path;

use anyhow::{anyhow, Result};
use nlsql_core::uqu::{export_finetune, load_nlu_records, NluRecord, Split};

use super::write_file;
use crate::CommonArgs;

/// Write one split of an annotated record file as fine-tuning JSON lines.
pub fn run(common: &CommonArgs, records: &Path, split: &str, style: &str, out: &Path) -> Result<i32> {
    let split: Split = split.parse().map_err(|e: String| anyhow!(e))?;
    let load = load_nlu_records(records)?;
    for e in &load.errors {
        log::warn!("record {} skipped: {}", e.index, e.message);
    }
    let selected: Vec<NluRecord> = load.split(split).cloned().collect();
    let text = export_finetune(&selected, style)?;
    if common.dry_run {
        println!("would write {} lines for {} records to {}", text.lines().count(), selected.len(), out.display());
        return Ok(0);
    }
    write_file(out, &text)?;
    println!("{} records ({} lines) written to {}", selected.len(), text.lines().count(), out.display());
    Ok(0)
}
