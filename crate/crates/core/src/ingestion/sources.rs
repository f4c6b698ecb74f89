//! Registry of public cycling-data sources and the download entry point.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::csv_cycler::ColumnMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub source_name: String,
    pub chemistry: String,
    pub nominal_capacity_in_Ah: f64,
    pub voltage_range_V: (f64, f64),
    pub cell_count: usize,
    /// Reported cycle-life mean and standard deviation.
    pub rul_mean: f64,
    pub rul_std: f64,
    #[serde(default)]
    pub urls: Vec<String>,
}

fn descriptor(name: &str, chemistry: &str, cap: f64, v: (f64, f64), rul: (f64, f64), count: usize) -> SourceDescriptor {
    SourceDescriptor {
        source_name: name.to_string(),
        chemistry: chemistry.to_string(),
        nominal_capacity_in_Ah: cap,
        voltage_range_V: v,
        cell_count: count,
        rul_mean: rul.0,
        rul_std: rul.1,
        urls: Vec::new(),
    }
}

/// The seven public sources. Download URLs are not bundled; supply them
/// through [`SourceRegistry::from_json_file`].
pub fn list_sources() -> Vec<SourceDescriptor> {
    vec![
        descriptor("CALCE", "LCO/graphite", 1.1, (2.7, 4.2), (566.0, 106.0), 13),
        descriptor("MATR", "LFP/graphite", 1.1, (2.0, 3.6), (823.0, 368.0), 180),
        descriptor("HUST", "LFP/graphite", 1.1, (2.0, 3.6), (1899.0, 389.0), 77),
        descriptor("HNEI", "NMC_LCO/graphite", 2.8, (3.0, 4.3), (248.0, 15.0), 14),
        descriptor("RWTH", "NMC/carbon", 1.11, (3.5, 3.9), (658.0, 64.0), 48),
        descriptor("SNL", "NCA,NMC,LFP/graphite", 1.1, (2.0, 3.6), (1256.0, 1321.0), 61),
        descriptor("UL_PUR", "NCA/graphite", 3.4, (2.7, 4.2), (209.0, 50.0), 10),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceRegistry {
    sources: Vec<SourceDescriptor>,
}

impl Default for SourceRegistry {
    fn default() -> Self {
        Self { sources: list_sources() }
    }
}

impl SourceRegistry {
    /// Loads descriptors from a JSON array, e.g. to add download URLs.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sources: Vec<SourceDescriptor> =
            serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.display().to_string(), message: e.to_string() })?;
        let registry = Self { sources };
        registry.check()?;
        Ok(registry)
    }

    fn check(&self) -> Result<()> {
        for (i, s) in self.sources.iter().enumerate() {
            if self.sources[..i].iter().any(|o| o.source_name == s.source_name) {
                return Err(Error::Spec(format!("duplicate source {}", s.source_name)));
            }
            if s.voltage_range_V.0 >= s.voltage_range_V.1 {
                return Err(Error::Spec(format!("source {}: empty voltage range", s.source_name)));
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> &[SourceDescriptor] {
        &self.sources
    }

    pub fn get(&self, name: &str) -> Result<&SourceDescriptor> {
        self.sources.iter().find(|s| s.source_name == name).ok_or_else(|| Error::UnknownSource {
            name: name.to_string(),
            known: self.sources.iter().map(|s| s.source_name.clone()).collect(),
        })
    }
}

/// Default CSV column map for a source.
pub fn default_column_map(source_name: &str) -> Option<ColumnMap> {
    let text = match source_name {
        "CALCE" => include_str!("../../data/column_maps/CALCE.json"),
        "MATR" => include_str!("../../data/column_maps/MATR.json"),
        "HUST" => include_str!("../../data/column_maps/HUST.json"),
        "HNEI" => include_str!("../../data/column_maps/HNEI.json"),
        "RWTH" => include_str!("../../data/column_maps/RWTH.json"),
        "SNL" => include_str!("../../data/column_maps/SNL.json"),
        "UL_PUR" => include_str!("../../data/column_maps/UL_PUR.json"),
        _ => return None,
    };
    Some(serde_json::from_str(text).expect("bundled column maps are valid"))
}

pub trait Fetcher {
    fn fetch(&self, url: &str, dest: &Path) -> std::result::Result<(), String>;
}

/// Plain HTTP(S) GET into a file.
pub struct HttpFetcher;

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str, dest: &Path) -> std::result::Result<(), String> {
        let response = ureq::get(url).call().map_err(|e| e.to_string())?;
        let mut body = response.into_body().into_reader();
        let mut file = fs::File::create(dest).map_err(|e| e.to_string())?;
        std::io::copy(&mut body, &mut file).map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownloadSummary {
    pub manifest: PathBuf,
    pub files: Vec<PathBuf>,
}

pub fn manifest_path(dest: &Path, source_name: &str) -> PathBuf {
    dest.join(format!("{source_name}_manifest.txt"))
}

/// Writes the URL manifest, then fetches every URL into `dest`.
///
/// The manifest is written before any network access so that a failed or
/// offline run still leaves a list of what to fetch by hand.
pub fn download(registry: &SourceRegistry, source_name: &str, dest: &Path, fetcher: &dyn Fetcher) -> Result<DownloadSummary> {
    let source = registry.get(source_name)?;
    fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let manifest = manifest_path(dest, source_name);
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    for url in &source.urls {
        writeln!(f, "{url}").map_err(|e| Error::io(&manifest, e))?;
    }
    drop(f);

    let fail = |message: String| Error::Download {
        source_name: source_name.to_string(),
        message,
        manifest: manifest.display().to_string(),
    };
    if source.urls.is_empty() {
        return Err(fail("no download URLs registered for this source".into()));
    }
    let mut files = Vec::new();
    for (i, url) in source.urls.iter().enumerate() {
        let name = url
            .rsplit('/')
            .find(|s| !s.is_empty())
            .filter(|s| !s.contains('?'))
            .map(str::to_string)
            .unwrap_or_else(|| format!("{source_name}_{i}.bin"));
        let target = dest.join(name);
        fetcher.fetch(url, &target).map_err(|e| fail(format!("{url}: {e}")))?;
        files.push(target);
    }
    Ok(DownloadSummary { manifest, files })
}
