//! Database catalogs: schemas, sampled values, textual descriptions, and the
//! persisted catalog + value-index artifact.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::minhash::{ColumnEntry, MinHashError, MinHashIndex, MinHasher, ValueEntry, MIN_PERMUTATIONS};
use crate::text::canonical_real;

/// Version tag written into every persisted artifact.
pub const ARTIFACT_VERSION: u32 = 1;

pub const DEFAULT_MAX_VALUES_PER_COLUMN: usize = 5_000;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read database {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("database {0} contains no tables")]
    EmptyDatabase(String),
    #[error("no database file found in {0}")]
    NoDatabaseFile(PathBuf),
    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn unreadable(path: &Path, err: impl std::fmt::Display) -> CatalogError {
    CatalogError::Unreadable { path: path.to_path_buf(), message: err.to_string() }
}

/// Ingestion limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub max_values_per_column: usize,
    pub include_views: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { max_values_per_column: DEFAULT_MAX_VALUES_PER_COLUMN, include_views: false }
    }
}

/// Coarse type class derived from a column's declared SQL type, following
/// SQLite's affinity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Text,
    Numeric,
    Other,
}

impl ColumnKind {
    pub fn from_declared(declared: &str) -> Self {
        let t = declared.to_ascii_uppercase();
        if t.contains("INT") {
            ColumnKind::Numeric
        } else if t.contains("CHAR") || t.contains("CLOB") || t.contains("TEXT") {
            ColumnKind::Text
        } else if t.contains("REAL")
            || t.contains("FLOA")
            || t.contains("DOUB")
            || t.contains("NUM")
            || t.contains("DEC")
        {
            ColumnKind::Numeric
        } else {
            ColumnKind::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub declared_type: String,
    pub kind: ColumnKind,
    /// Distinct non-null values in sorted order, capped at the ingestion limit.
    pub sample_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionEntry {
    pub table: String,
    pub column: String,
    pub column_description: String,
    pub value_description: String,
}

impl DescriptionEntry {
    /// The text that is embedded and matched for description retrieval.
    pub fn text(&self) -> String {
        if self.value_description.is_empty() {
            self.column_description.clone()
        } else {
            format!("{}; {}", self.column_description, self.value_description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseCatalog {
    pub db_id: String,
    /// The SQLite file the catalog was read from.
    pub db_path: PathBuf,
    pub tables: Vec<TableSchema>,
    pub descriptions: Vec<DescriptionEntry>,
}

impl DatabaseCatalog {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnSchema> {
        self.table(table).and_then(|t| t.column(column))
    }

    pub fn description(&self, table: &str, column: &str) -> Option<&DescriptionEntry> {
        self.descriptions.iter().find(|d| d.table == table && d.column == column)
    }

    pub fn num_columns(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    pub fn num_values(&self) -> usize {
        self.tables.iter().flat_map(|t| &t.columns).map(|c| c.sample_values.len()).sum()
    }

    /// Iterate `(table, column)` pairs in catalog order.
    pub fn column_refs(&self) -> impl Iterator<Item = (&TableSchema, &ColumnSchema)> {
        self.tables.iter().flat_map(|t| t.columns.iter().map(move |c| (t, c)))
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Locate the SQLite file for a path that is either the file itself or a
/// database directory (`<dir>/<db_id>.sqlite`, falling back to the first
/// `*.sqlite`/`*.db` file in sorted order).
pub fn resolve_database_file(path: &Path) -> Result<PathBuf, CatalogError> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if !path.is_dir() {
        return Err(unreadable(path, "no such file or directory"));
    }
    if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
        let preferred = path.join(format!("{name}.sqlite"));
        if preferred.is_file() {
            return Ok(preferred);
        }
    }
    let mut candidates: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(p.extension().and_then(|e| e.to_str()), Some("sqlite") | Some("db") | Some("sqlite3"))
        })
        .collect();
    candidates.sort();
    candidates.into_iter().next().ok_or_else(|| CatalogError::NoDatabaseFile(path.to_path_buf()))
}

/// Open a SQLite file strictly read-only.
pub fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
}

fn value_to_string(value: ValueRef<'_>) -> Option<String> {
    match value {
        ValueRef::Null | ValueRef::Blob(_) => None,
        ValueRef::Integer(i) => Some(i.to_string()),
        ValueRef::Real(r) => Some(canonical_real(r)),
        ValueRef::Text(t) => Some(String::from_utf8_lossy(t).into_owned()),
    }
}

/// Ingest a SQLite database (file or BIRD-style database directory).
///
/// Directory inputs also pick up `database_description/*.csv` when present.
pub fn load_database(path: &Path, limits: &IngestConfig) -> Result<DatabaseCatalog, CatalogError> {
    let db_file = resolve_database_file(path)?;
    let db_id = if path.is_dir() { path.file_name() } else { db_file.file_stem() }
        .and_then(|n| n.to_str())
        .unwrap_or("db")
        .to_string();

    let conn = open_read_only(&db_file).map_err(|e| unreadable(&db_file, e))?;
    let kinds = if limits.include_views { "'table', 'view'" } else { "'table'" };
    let table_names: Vec<String> = {
        let mut stmt = conn
            .prepare(&format!(
                "SELECT name FROM sqlite_master WHERE type IN ({kinds}) \
                 AND name NOT LIKE 'sqlite_%' ORDER BY name"
            ))
            .map_err(|e| unreadable(&db_file, e))?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0)).map_err(|e| unreadable(&db_file, e))?;
        rows.collect::<Result<_, _>>().map_err(|e| unreadable(&db_file, e))?
    };
    if table_names.is_empty() {
        return Err(CatalogError::EmptyDatabase(db_id));
    }

    let mut tables = Vec::with_capacity(table_names.len());
    for table in table_names {
        let columns_meta: Vec<(String, String)> = {
            let mut stmt = conn
                .prepare(&format!("PRAGMA table_info({})", quote_ident(&table)))
                .map_err(|e| unreadable(&db_file, e))?;
            let rows = stmt
                .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, String>(2)?)))
                .map_err(|e| unreadable(&db_file, e))?;
            rows.collect::<Result<_, _>>().map_err(|e| unreadable(&db_file, e))?
        };
        let mut columns = Vec::with_capacity(columns_meta.len());
        for (name, declared_type) in columns_meta {
            let sample_values = sample_column(&conn, &table, &name, limits.max_values_per_column)
                .map_err(|e| unreadable(&db_file, e))?;
            columns.push(ColumnSchema {
                kind: ColumnKind::from_declared(&declared_type),
                name,
                declared_type,
                sample_values,
            });
        }
        tables.push(TableSchema { name: table, columns });
    }

    let catalog = DatabaseCatalog { db_id, db_path: db_file, tables, descriptions: Vec::new() };
    if path.is_dir() {
        let (catalog, tally) = load_descriptions(&path.join("database_description"), catalog)?;
        if tally.warnings() > 0 {
            log::warn!("{}: {} description rows skipped ({:?})", catalog.db_id, tally.warnings(), tally);
        }
        return Ok(catalog);
    }
    Ok(catalog)
}

fn sample_column(conn: &Connection, table: &str, column: &str, limit: usize) -> rusqlite::Result<Vec<String>> {
    if limit == 0 {
        return Ok(Vec::new());
    }
    let col = quote_ident(column);
    let sql = format!(
        "SELECT DISTINCT {col} FROM {} WHERE {col} IS NOT NULL ORDER BY {col} LIMIT {limit}",
        quote_ident(table)
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    while let Some(row) = rows.next()? {
        if let Some(v) = value_to_string(row.get_ref(0)?) {
            if seen.insert(v.clone()) {
                values.push(v);
            }
        }
    }
    Ok(values)
}

/// Outcome counters for description ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionTally {
    pub files_read: usize,
    pub entries_added: usize,
    pub unknown_tables: usize,
    pub unknown_columns: usize,
    pub duplicate_entries: usize,
    pub malformed_rows: usize,
}

impl DescriptionTally {
    pub fn warnings(&self) -> usize {
        self.unknown_tables + self.unknown_columns + self.duplicate_entries + self.malformed_rows
    }
}

/// Attach column/value descriptions from a BIRD `database_description`
/// directory (one `<table>.csv` per table). A missing directory leaves the
/// catalog unchanged.
pub fn load_descriptions(
    csv_dir: &Path,
    mut catalog: DatabaseCatalog,
) -> Result<(DatabaseCatalog, DescriptionTally), CatalogError> {
    let mut tally = DescriptionTally::default();
    if !csv_dir.is_dir() {
        return Ok((catalog, tally));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(csv_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();

    for file in files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let table = catalog
            .tables
            .iter()
            .find(|t| t.name == stem)
            .or_else(|| catalog.tables.iter().find(|t| t.name.eq_ignore_ascii_case(stem)))
            .cloned();
        let mut bytes = Vec::new();
        fs::File::open(&file)?.read_to_end(&mut bytes)?;
        let text = String::from_utf8_lossy(&bytes);
        let text = text.trim_start_matches('\u{feff}');
        tally.files_read += 1;
        let parsed = parse_description_csv(text);
        let Some(table) = table else {
            tally.unknown_tables += 1;
            tally.malformed_rows += parsed.malformed;
            continue;
        };
        tally.malformed_rows += parsed.malformed;
        for row in parsed.rows {
            let column = table
                .columns
                .iter()
                .find(|c| c.name == row.column)
                .or_else(|| table.columns.iter().find(|c| c.name.eq_ignore_ascii_case(&row.column)));
            let Some(column) = column else {
                tally.unknown_columns += 1;
                continue;
            };
            if catalog.description(&table.name, &column.name).is_some() {
                tally.duplicate_entries += 1;
                continue;
            }
            catalog.descriptions.push(DescriptionEntry {
                table: table.name.clone(),
                column: column.name.clone(),
                column_description: row.column_description,
                value_description: row.value_description,
            });
            tally.entries_added += 1;
        }
    }
    Ok((catalog, tally))
}

struct DescriptionRow {
    column: String,
    column_description: String,
    value_description: String,
}

struct ParsedDescriptions {
    rows: Vec<DescriptionRow>,
    malformed: usize,
}

fn parse_description_csv(text: &str) -> ParsedDescriptions {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let mut out = ParsedDescriptions { rows: Vec::new(), malformed: 0 };
    let headers: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_ascii_lowercase()).collect(),
        Err(_) => {
            out.malformed += 1;
            return out;
        }
    };
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (Some(name_idx), Some(desc_idx)) = (find("original_column_name"), find("column_description")) else {
        out.malformed += reader.records().count().max(1);
        return out;
    };
    let expanded_idx = find("column_name");
    let value_idx = find("value_description");
    for record in reader.records() {
        let Ok(record) = record else {
            out.malformed += 1;
            continue;
        };
        let field =
            |i: Option<usize>| i.and_then(|i| record.get(i)).map(crate::text::normalize_whitespace).unwrap_or_default();
        if record.get(name_idx).is_none() || record.get(desc_idx).is_none() {
            out.malformed += 1;
            continue;
        }
        let column = field(Some(name_idx));
        if column.is_empty() {
            out.malformed += 1;
            continue;
        }
        let mut column_description = field(Some(desc_idx));
        if column_description.is_empty() {
            column_description = field(expanded_idx);
        }
        out.rows.push(DescriptionRow { column, column_description, value_description: field(value_idx) });
    }
    out
}

/// Build MinHash signatures for every sampled value and every column name.
///
/// Columns are processed in parallel; the merge preserves catalog order, so
/// the result depends only on the catalog and `(num_permutations, seed)`.
pub fn build_value_index(
    catalog: &DatabaseCatalog,
    num_permutations: usize,
    seed: u64,
) -> Result<MinHashIndex, MinHashError> {
    if num_permutations < MIN_PERMUTATIONS {
        return Err(MinHashError::TooFewPermutations(num_permutations));
    }
    let hasher = MinHasher::new(num_permutations, seed);
    let refs: Vec<(&TableSchema, &ColumnSchema)> = catalog.column_refs().collect();
    let per_column: Vec<(ColumnEntry, Vec<ValueEntry>)> = refs
        .par_iter()
        .map(|(t, c)| {
            let column =
                ColumnEntry { table: t.name.clone(), column: c.name.clone(), signature: hasher.signature(&c.name) };
            let values = c
                .sample_values
                .iter()
                .map(|v| ValueEntry {
                    table: t.name.clone(),
                    column: c.name.clone(),
                    value: v.clone(),
                    signature: hasher.signature(v),
                })
                .collect();
            (column, values)
        })
        .collect();
    let mut columns = Vec::with_capacity(per_column.len());
    let mut entries = Vec::new();
    for (c, vs) in per_column {
        columns.push(c);
        entries.extend(vs);
    }
    Ok(MinHashIndex { num_permutations, seed, entries, columns })
}

/// SHA-256 of a file's contents, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String, CatalogError> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Identity of a persisted artifact: it is reused only when every field
/// matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactKey {
    pub db_sha256: String,
    pub seed: u64,
    pub num_permutations: usize,
    pub max_values_per_column: usize,
    pub include_views: bool,
}

/// Catalog plus value index as written to the cache directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogArtifact {
    pub version: u32,
    pub key: ArtifactKey,
    pub catalog: DatabaseCatalog,
    pub index: MinHashIndex,
}

impl CatalogArtifact {
    /// Ingest and index `path`, producing a fresh artifact.
    pub fn build(path: &Path, limits: &IngestConfig, num_permutations: usize, seed: u64) -> Result<Self, CatalogError> {
        let catalog = load_database(path, limits)?;
        let key = ArtifactKey {
            db_sha256: file_sha256(&catalog.db_path)?,
            seed,
            num_permutations,
            max_values_per_column: limits.max_values_per_column,
            include_views: limits.include_views,
        };
        let index = build_value_index(&catalog, num_permutations, seed)
            .map_err(|e| CatalogError::Artifact { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(Self { version: ARTIFACT_VERSION, key, catalog, index })
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        let json = serde_json::to_vec(self)
            .map_err(|e| CatalogError::Artifact { path: path.to_path_buf(), message: e.to_string() })?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let bytes = fs::read(path)?;
        let artifact: Self = serde_json::from_slice(&bytes)
            .map_err(|e| CatalogError::Artifact { path: path.to_path_buf(), message: e.to_string() })?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(CatalogError::Artifact {
                path: path.to_path_buf(),
                message: format!("unsupported artifact version {}", artifact.version),
            });
        }
        Ok(artifact)
    }
}
