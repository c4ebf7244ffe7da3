//! Command-line pipelines over `genekg-core`: synthetic data generation,
//! preprocessing, graph construction, embedding, evaluation and export.
//!
//! Exit codes: 0 on success, 1 when the config or command line is invalid,
//! 2 when a stage fails on its data.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{Needs, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: genekg_core::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Stage { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "genekg", version, about = "Knowledge-graph patient classification pipelines")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "genekg.toml")]
    pub config: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `[run] jobs`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Evaluation settings to run (single, multi, transfer).
    #[arg(long, global = true, value_delimiter = ',')]
    pub setting: Vec<String>,
    /// Methods to evaluate (baseline_all, baseline_overlap, mlp_embed, gcn).
    #[arg(long, global = true, value_delimiter = ',')]
    pub method: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedMode {
    Pretrain,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Map probes to genes and z-score every dataset.
    Preprocess,
    /// Build the domain graph, link patients and write N-Triples and stats.
    BuildKg,
    /// Train the domain embedding, or extend it with patient walks.
    Embed {
        #[arg(value_enum)]
        mode: EmbedMode,
    },
    /// Run the configured settings and methods and write reports.
    Evaluate,
    /// Compare the GCN against its random-feature and unweighted variants.
    Ablate,
    /// Write a planted-signal ontology, annotations and datasets to the
    /// configured input paths.
    GenSynthetic,
    /// Write patient embeddings as TSV.
    ExportEmbeddings,
}

impl Command {
    fn needs(self) -> Needs {
        match self {
            Command::Preprocess => Needs::Series,
            Command::GenSynthetic | Command::ExportEmbeddings => Needs::Nothing,
            _ => Needs::Domain,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        settings: cli.setting.clone(),
        methods: cli.method.clone(),
    });
    let plan = cfg.plan(cli.command.needs())?;
    match cli.command {
        Command::Preprocess => commands::preprocess_all(&plan),
        Command::BuildKg => commands::build_kg(&plan).map(drop),
        Command::Embed { mode: EmbedMode::Pretrain } => commands::embed_pretrain(&plan),
        Command::Embed { mode: EmbedMode::Update } => commands::embed_update(&plan),
        Command::Evaluate => commands::evaluate(&plan).map(drop),
        Command::Ablate => commands::ablate(&plan).map(drop),
        Command::GenSynthetic => commands::gen_synthetic(&plan),
        Command::ExportEmbeddings => commands::export_embeddings(&plan).map(drop),
    }
}
