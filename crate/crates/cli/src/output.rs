//! CSV and JSON emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OutputFormat};
use crate::experiments::{DesignRecord, ResultRow, ResultTable};

pub const CSV_COLUMNS: [&str; 12] = [
    "experiment",
    "rule",
    "ris_mode",
    "sweep_name",
    "sweep_value",
    "pf0_target",
    "pf0_achieved",
    "pd0",
    "pd0_stderr",
    "trials_h0",
    "trials_h1",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generated_at: String,
    pub version: String,
}

/// The JSON document: records plus the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub metadata: Metadata,
    pub config: ExperimentConfig,
    pub records: Vec<ResultRow>,
    pub designs: Vec<DesignRecord>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.rule.clone(),
            r.ris_mode.clone(),
            r.sweep_name.clone(),
            opt(&r.sweep_value),
            opt(&r.pf0_target),
            opt(&r.pf0_achieved),
            opt(&r.pd0),
            opt(&r.pd0_stderr),
            opt(&r.trials_h0),
            opt(&r.trials_h1),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(designs: &[DesignRecord], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_name", "sweep_value", "layout", "iteration", "g"])?;
    for d in designs {
        for (i, g) in d.trace.iter().enumerate() {
            w.write_record([
                d.sweep_name.clone(),
                opt(&d.sweep_value),
                d.layout.to_string(),
                i.to_string(),
                g.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn document(table: &ResultTable, config: &ExperimentConfig) -> ResultDocument {
    ResultDocument {
        metadata: Metadata {
            generated_at: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        config: config.clone(),
        records: table.rows.clone(),
        designs: table.designs.clone(),
    }
}

pub fn write_json<W: Write>(table: &ResultTable, config: &ExperimentConfig, mut out: W) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut out, &document(table, config))?;
    writeln!(out)?;
    Ok(())
}

pub fn read_json(path: &Path) -> anyhow::Result<ResultDocument> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Sidecar path for the optimizer trace: `<stem>.optimizer_trace.csv`.
pub fn trace_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.optimizer_trace.csv"))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Write the table to `path` (stdout when `None`). Returns the files written.
pub fn emit_results(
    table: &ResultTable,
    config: &ExperimentConfig,
    path: Option<&Path>,
    format: OutputFormat,
) -> anyhow::Result<Vec<PathBuf>> {
    let Some(path) = path else {
        let stdout = std::io::stdout().lock();
        match format {
            OutputFormat::Csv => write_csv(&table.rows, stdout)?,
            OutputFormat::Json => write_json(table, config, stdout)?,
        }
        return Ok(Vec::new());
    };
    let mut written = vec![path.to_path_buf()];
    let mut out = create(path)?;
    match format {
        OutputFormat::Csv => write_csv(&table.rows, &mut out),
        OutputFormat::Json => write_json(table, config, &mut out),
    }
    .with_context(|| format!("writing {}", path.display()))?;
    out.flush().with_context(|| format!("writing {}", path.display()))?;
    if table.designs.iter().any(|d| !d.trace.is_empty()) {
        let sidecar = trace_path(path);
        let mut out = create(&sidecar)?;
        write_trace_csv(&table.designs, &mut out).with_context(|| format!("writing {}", sidecar.display()))?;
        out.flush()?;
        written.push(sidecar);
    }
    Ok(written)
}
