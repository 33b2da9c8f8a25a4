//! Dataset ingestion, query generation with retries, and the batch pipeline.

pub mod dataset;
pub mod pipeline;
pub mod querygen;

pub use dataset::{ingest, ingest_str, DatasetRecord, Ingested, SchemaError, Split};
pub use pipeline::{
    run_dataset, run_pipeline, write_run, Aggregates, HarnessError, PipelineReport, PipelineRun, RecordRow,
    RecordStatus, RunConfig, ScoreBasis, ThresholdConfig,
};
pub use querygen::{
    generate_queries, AttemptOutcome, GenerationConfig, HttpQueryService, QueryAttempt, QueryGenError, QueryGeneration,
    QueryRequest, QueryService, ScriptedService, ServiceError, TemplateQueryService,
};
