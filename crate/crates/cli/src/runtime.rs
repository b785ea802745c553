//! Client construction and database loading shared by the commands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use nlsql_core::catalog::{file_sha256, resolve_database_file, ArtifactKey, CatalogArtifact, IngestConfig};
use nlsql_core::config::{ModelEndpoint, PipelineConfig, ScorerKind};
use nlsql_core::llm::{Embedder, LanguageModel, Reranker};
use nlsql_core::retrieval::{
    Bm25Index, DescriptionStore, EmbeddingCache, EntityScorer, HashingEmbedder, LexicalReranker,
};

use crate::cache::CacheStore;
use crate::clients::{CachedModel, HttpChatModel, HttpEmbedder, HttpReranker, RetryPolicy, TranscriptModel};

pub struct Clients {
    pub uqu: Arc<dyn LanguageModel>,
    pub generation: Arc<dyn LanguageModel>,
    pub revision: Arc<dyn LanguageModel>,
    /// `None` when no judge is configured.
    pub judge: Option<Arc<dyn LanguageModel>>,
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    pub mocked: bool,
}

fn offline_embedder(endpoint: &ModelEndpoint) -> HashingEmbedder {
    let dim = endpoint.model.strip_prefix("hashing-").and_then(|d| d.parse().ok()).unwrap_or(256);
    HashingEmbedder::new(dim)
}

impl Clients {
    /// With a transcript every model is the mock (the judge only when an
    /// entry names the judge model), the embedder is the hashing embedder
    /// and the re-ranker is lexical, so no service is contacted. Otherwise chat models go through the response cache.
    pub fn build(config: &PipelineConfig, mock: Option<&Path>) -> Result<Self> {
        if let Some(path) = mock {
            let transcript = TranscriptModel::load(path)?;
            let has_judge = transcript.names_model(&config.judge.model);
            let t: Arc<dyn LanguageModel> = Arc::new(transcript);
            return Ok(Self {
                uqu: t.clone(),
                generation: t.clone(),
                revision: t.clone(),
                judge: has_judge.then_some(t),
                embedder: Arc::new(offline_embedder(&config.embedder)),
                reranker: Arc::new(LexicalReranker),
                mocked: true,
            });
        }
        let cache = Arc::new(CacheStore::open(config.cache_dir.join("llm"))?);
        let policy = RetryPolicy::new(config.llm_retries, config.retry_base_delay_ms);
        let chat = |e: &ModelEndpoint| -> Result<Arc<dyn LanguageModel>> {
            Ok(Arc::new(CachedModel::new(Box::new(HttpChatModel::new(e)?), Some(cache.clone()), policy)))
        };
        let embedder: Arc<dyn Embedder> = if config.embedder.endpoint.is_some() {
            Arc::new(HttpEmbedder::new(&config.embedder)?)
        } else {
            Arc::new(offline_embedder(&config.embedder))
        };
        let reranker: Arc<dyn Reranker> = if config.reranker.endpoint.is_some() {
            Arc::new(HttpReranker::new(&config.reranker)?)
        } else {
            Arc::new(LexicalReranker)
        };
        Ok(Self {
            uqu: chat(&config.uqu)?,
            generation: chat(&config.generation)?,
            revision: chat(&config.revision)?,
            judge: config.judge.endpoint.is_some().then(|| chat(&config.judge)).transpose()?,
            embedder,
            reranker,
            mocked: false,
        })
    }
}

pub fn ingest_config(config: &PipelineConfig) -> IngestConfig {
    IngestConfig { max_values_per_column: config.max_values_per_column, include_views: config.include_views }
}

pub fn artifact_path(artifacts_dir: &Path, db_id: &str) -> PathBuf {
    artifacts_dir.join(format!("{db_id}.json"))
}

fn expected_key(db_file: &Path, config: &PipelineConfig) -> Result<ArtifactKey> {
    Ok(ArtifactKey {
        db_sha256: file_sha256(db_file)?,
        seed: config.seed,
        num_permutations: config.num_permutations,
        max_values_per_column: config.max_values_per_column,
        include_views: config.include_views,
    })
}

/// Reuse the artifact at `<artifacts_dir>/<db_id>.json` when its key
/// matches, otherwise build and save a new one. Returns whether the cache
/// was hit.
pub fn load_or_build(
    db_path: &Path,
    db_id: &str,
    config: &PipelineConfig,
    artifacts_dir: &Path,
) -> Result<(CatalogArtifact, bool)> {
    let db_file = resolve_database_file(db_path)?;
    let key = expected_key(&db_file, config)?;
    let path = artifact_path(artifacts_dir, db_id);
    if path.is_file() {
        match CatalogArtifact::load(&path) {
            Ok(mut a) if a.key == key => {
                a.catalog.db_path = db_file;
                return Ok((a, true));
            }
            Ok(_) => log::info!("artifact {} is stale; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable artifact: {e}"),
        }
    }
    let artifact = CatalogArtifact::build(db_path, &ingest_config(config), config.num_permutations, config.seed)
        .with_context(|| format!("cannot index {}", db_path.display()))?;
    artifact.save(&path)?;
    Ok((artifact, false))
}

/// A database ready for retrieval.
pub struct LoadedDatabase {
    pub artifact: CatalogArtifact,
    pub bm25: Option<Bm25Index>,
    pub descriptions: DescriptionStore,
}

impl LoadedDatabase {
    pub fn open(
        db_path: &Path,
        db_id: &str,
        config: &PipelineConfig,
        embedder: &dyn Embedder,
        embeddings: &mut EmbeddingCache,
    ) -> Result<Self> {
        let artifacts = config.cache_dir.join("catalogs");
        let (artifact, _) = load_or_build(db_path, db_id, config, &artifacts)?;
        let bm25 = (config.scorer == ScorerKind::Bm25)
            .then(|| Bm25Index::build(&artifact.catalog, config.bm25_k1, config.bm25_b));
        let descriptions = DescriptionStore::build(&artifact.catalog, embedder, embeddings)
            .with_context(|| format!("cannot embed descriptions of {db_id}"))?;
        Ok(Self { artifact, bm25, descriptions })
    }

    pub fn scorer(&self) -> &dyn EntityScorer {
        match &self.bm25 {
            Some(b) => b,
            None => &self.artifact.index,
        }
    }
}

pub fn embedding_cache_path(config: &PipelineConfig) -> PathBuf {
    config.cache_dir.join("embeddings.json")
}
