//! On-disk catalog and model formats.
//!
//! A catalog is a CSV plus an optional `<stem>.meta.json` sidecar holding
//! the window. Two CSV layouts are read: the normalized `date,victims`
//! schema, and `t,victims[,parent]` with exact elapsed times as written by
//! `simulate`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use contagion_core::catalog::{ingest, CatalogError, Event};
use contagion_core::{EventCatalog, SchemaMapping};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogMeta {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    #[serde(rename = "T")]
    pub length: f64,
    #[serde(default)]
    pub definition_note: String,
}

impl CatalogMeta {
    pub fn of(catalog: &EventCatalog) -> Self {
        Self {
            window_start: catalog.window_start(),
            window_end: catalog.window_end(),
            length: catalog.length(),
            definition_note: catalog.definition_note().to_string(),
        }
    }
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    write_text(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// A loaded catalog with the raw bytes of every file it came from.
pub struct LoadedCatalog {
    pub catalog: EventCatalog,
    pub sources: Vec<(PathBuf, Vec<u8>)>,
}

pub fn load_catalog(path: &Path) -> Result<LoadedCatalog> {
    let bytes = read_bytes(path)?;
    let meta_file = meta_path(path);
    let mut sources = Vec::new();
    let meta = if meta_file.exists() {
        let meta_bytes = read_bytes(&meta_file)?;
        let meta: CatalogMeta = read_json(&meta_file, &meta_bytes)?;
        sources.push((meta_file, meta_bytes));
        Some(meta)
    } else {
        None
    };
    let header = first_line(&bytes);
    let catalog = if header.first().map(|h| h.as_str()) == Some("t") {
        load_exact(&bytes, meta)
    } else {
        load_dated(&bytes, meta)
    }
    .with_context(|| format!("loading catalog {}", path.display()))?;
    sources.insert(0, (path.to_path_buf(), bytes));
    Ok(LoadedCatalog { catalog, sources })
}

fn first_line(bytes: &[u8]) -> Vec<String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    reader
        .headers()
        .map(|h| h.iter().map(|s| s.trim().to_string()).collect())
        .unwrap_or_default()
}

fn load_dated(bytes: &[u8], meta: Option<CatalogMeta>) -> Result<EventCatalog> {
    let meta = match meta {
        Some(m) => m,
        None => infer_window(bytes)?,
    };
    let mut mapping = SchemaMapping::normalized(meta.window_start, meta.window_end);
    mapping.definition_note = meta.definition_note.clone();
    let ingested = ingest(bytes, &mapping)?;
    if ingested.dropped_outside_window > 0 {
        bail!(
            "{} events fall outside the catalog window {}..={}",
            ingested.dropped_outside_window,
            meta.window_start,
            meta.window_end
        );
    }
    let ev = ingested.catalog.events().to_vec();
    Ok(EventCatalog::new(
        ev,
        meta.window_start,
        meta.length,
        meta.definition_note,
    )?)
}

/// Without a sidecar the window runs from the first to the last event date.
fn infer_window(bytes: &[u8]) -> Result<CatalogMeta> {
    let wide = SchemaMapping::normalized(NaiveDate::MIN, NaiveDate::MAX);
    let probe = ingest(bytes, &wide)?;
    let dates: Vec<NaiveDate> = probe
        .catalog
        .events()
        .iter()
        .map(|e| probe.catalog.date_of(e.t))
        .collect();
    let (Some(&start), Some(&end)) = (dates.iter().min(), dates.iter().max()) else {
        bail!("catalog has no events and no window sidecar");
    };
    eprintln!("warning: no window sidecar; using {start}..={end}");
    Ok(CatalogMeta {
        window_start: start,
        window_end: end,
        length: ((end - start).num_days() + 1) as f64,
        definition_note: String::new(),
    })
}

#[derive(Deserialize)]
struct ExactRow {
    t: f64,
    victims: u32,
}

fn load_exact(bytes: &[u8], meta: Option<CatalogMeta>) -> Result<EventCatalog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let mut events = Vec::new();
    for (i, row) in reader.deserialize::<ExactRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| CatalogError::Csv {
            row: line,
            message: e.to_string(),
        })?;
        events.push(Event {
            t: row.t,
            mark: row.victims,
            source_row: line,
        });
    }
    let Some(meta) = meta else {
        bail!("exact-time catalogs need a window sidecar");
    };
    Ok(EventCatalog::new(
        events,
        meta.window_start,
        meta.length,
        meta.definition_note,
    )?)
}

/// Writes `<name>.csv` in the normalized schema plus its sidecar.
pub fn write_catalog(dir: &Path, name: &str, catalog: &EventCatalog) -> Result<()> {
    let csv_name = format!("{name}.csv");
    write_text(
        dir,
        &csv_name,
        &contagion_core::catalog::to_normalized_csv(catalog),
    )?;
    write_json(dir, &format!("{name}.meta.json"), &CatalogMeta::of(catalog))
}

/// Writes `<name>.csv` with exact times and optional parent indices.
pub fn write_exact_catalog(
    dir: &Path,
    name: &str,
    catalog: &EventCatalog,
    parents: &[Option<usize>],
) -> Result<()> {
    let mut out = String::from("t,victims,parent\n");
    for (e, p) in catalog.events().iter().zip(parents) {
        let parent = p.map(|j| (j + 1).to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", e.t, e.mark, parent)?;
    }
    write_text(dir, &format!("{name}.csv"), &out)?;
    write_json(dir, &format!("{name}.meta.json"), &CatalogMeta::of(catalog))
}

pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            match s {
                "inf" | "Inf" | "infinity" => Ok(f64::INFINITY),
                _ => s
                    .parse::<f64>()
                    .with_context(|| format!("bad number '{s}'")),
            }
        })
        .collect()
}
