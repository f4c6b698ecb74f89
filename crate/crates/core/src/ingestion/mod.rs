//! Getting data into [`CellRecord`](crate::battery_data::CellRecord) form:
//! CSV conversion, the public-source registry and synthetic corpora.

mod csv_cycler;
mod sources;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

pub use csv_cycler::{integrate_capacity, parse_csv_cycler, parse_csv_reader, CellDefaults, ColumnMap};
pub use sources::{
    default_column_map, download, list_sources, manifest_path, DownloadSummary, Fetcher, HttpFetcher, SourceDescriptor,
    SourceRegistry,
};
pub use synthetic::{draw_cell_parameters, generate_synthetic, synthesize_cell, FadeLaw, SynthSpec};

use crate::battery_data::{cell_file_name, write_cell, CellRecord};
use crate::error::{Error, Result};

/// Writes every cell into `dir` as `<cell_id>.json`.
pub fn write_corpus(cells: &[CellRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cells
        .iter()
        .map(|cell| {
            let path = dir.join(cell_file_name(&cell.cell_id));
            write_cell(cell, &path).map(|_| path)
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct PreprocessSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Converts every `*.csv` under `raw_dir` into a cell file in `out_dir`.
/// Cell ids are `<SOURCE>_<file stem>`.
pub fn preprocess(source: &SourceDescriptor, map: &ColumnMap, raw_dir: &Path, out_dir: &Path) -> Result<PreprocessSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut inputs: Vec<PathBuf> = fs::read_dir(raw_dir)
        .map_err(|e| Error::io(raw_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    inputs.sort();
    let mut summary = PreprocessSummary::default();
    for path in inputs {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cell");
        let mut defaults = CellDefaults::new(format!("{}_{stem}", source.source_name), source.nominal_capacity_in_Ah);
        defaults.min_voltage_limit_in_V = Some(source.voltage_range_V.0);
        defaults.max_voltage_limit_in_V = Some(source.voltage_range_V.1);
        if let Some((cathode, anode)) = source.chemistry.split_once('/') {
            defaults.cathode_material = Some(cathode.to_string());
            defaults.anode_material = Some(anode.to_string());
        }
        let result = parse_csv_cycler(&path, map, &defaults).and_then(|cell| {
            let target = out_dir.join(cell_file_name(&cell.cell_id));
            write_cell(&cell, &target).map(|_| target)
        });
        match result {
            Ok(target) => summary.written.push(target),
            Err(e) => summary.failed.push((path, e.to_string())),
        }
    }
    Ok(summary)
}
