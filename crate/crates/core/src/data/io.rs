//! On-disk formats: track CSV, geometry JSON and the dataset manifest.
//!
//! A dataset directory holds `manifest.json`, `tracks.csv` (raw tracks),
//! `alternates.csv` (the untaken branch of fork tracks) and one
//! `geometry/<id>.json` per track. Resampled tracks are recomputed on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generator::{
    Branch, Dataset, DatasetItem, ForkInfo, ScenarioConfig, ScenarioLabel, Split,
};
use super::resample::resample_100ms;
use crate::error::{Error, Result};
use crate::features::{Sample, Track};
use crate::map::ScenarioGeometry;

pub const TRACK_CSV_HEADER: &str = "track_id,timestamp_ms,x_m,y_m";
pub const MANIFEST_FILE: &str = "manifest.json";
const TRACKS_FILE: &str = "tracks.csv";
const ALTERNATES_FILE: &str = "alternates.csv";
const MANIFEST_VERSION: u32 = 1;

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn tracks_to_csv<'a>(tracks: impl IntoIterator<Item = (u64, &'a Track)>) -> String {
    let mut out = String::from(TRACK_CSV_HEADER);
    out.push('\n');
    for (id, track) in tracks {
        for s in track.samples() {
            let _ = writeln!(out, "{id},{},{},{}", s.timestamp_ms, s.x, s.y);
        }
    }
    out
}

/// Parses track CSV into `(track_id, Track)` pairs in order of first
/// appearance. Rows of one track need not be contiguous.
pub fn tracks_from_csv(text: &str) -> Result<Vec<(u64, Track)>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty file, expected header".into(),
                })
            }
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l.trim().trim_start_matches('\u{feff}')),
        }
    };
    if header.1 != TRACK_CSV_HEADER {
        return Err(Error::Parse {
            line: header.0,
            message: format!("expected header `{TRACK_CSV_HEADER}`, found `{}`", header.1),
        });
    }
    let mut order: Vec<u64> = Vec::new();
    let mut samples: BTreeMap<u64, Vec<Sample>> = BTreeMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let field_err = |name: &str, value: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {name} `{value}`"),
        };
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| field_err("track_id", fields[0]))?;
        let t: i64 = fields[1]
            .parse()
            .map_err(|_| field_err("timestamp_ms", fields[1]))?;
        let x: f64 = fields[2].parse().map_err(|_| field_err("x_m", fields[2]))?;
        let y: f64 = fields[3].parse().map_err(|_| field_err("y_m", fields[3]))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite coordinate".into(),
            });
        }
        let entry = samples.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        if entry.last().is_some_and(|s| s.timestamp_ms >= t) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("timestamp {t} not increasing within track {id}"),
            });
        }
        entry.push(Sample::new(t, x, y));
    }
    if order.is_empty() {
        return Err(Error::Parse {
            line: header.0,
            message: "no track rows".into(),
        });
    }
    order
        .into_iter()
        .map(|id| {
            let s = samples.remove(&id).unwrap_or_default();
            Track::new(s).map(|t| (id, t)).map_err(|e| Error::Parse {
                line: 0,
                message: format!("track {id}: {e}"),
            })
        })
        .collect()
}

pub fn load_tracks(path: &Path) -> Result<Vec<(u64, Track)>> {
    tracks_from_csv(&fs::read_to_string(path)?)
}

pub fn load_geometry(path: &Path) -> Result<ScenarioGeometry> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFork {
    pub fork_index: usize,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: u64,
    pub label: ScenarioLabel,
    pub geometry_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork: Option<ManifestFork>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ScenarioConfig,
    pub tracks_file: String,
    pub alternates_file: String,
    pub items: Vec<ManifestItem>,
    pub split: Split,
}

/// Writes the dataset into `dir`, returning the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("geometry"))?;
    write_atomic(
        &dir.join(TRACKS_FILE),
        tracks_to_csv(dataset.items.iter().map(|it| (it.id, &it.raw))).as_bytes(),
    )?;
    let alternates = dataset
        .items
        .iter()
        .filter_map(|it| it.fork.as_ref().map(|f| (it.id, &f.alternate_raw)));
    write_atomic(
        &dir.join(ALTERNATES_FILE),
        tracks_to_csv(alternates).as_bytes(),
    )?;
    let mut items = Vec::with_capacity(dataset.items.len());
    for it in &dataset.items {
        let geometry_file = format!("geometry/{}.json", it.id);
        write_atomic(
            &dir.join(&geometry_file),
            serde_json::to_string(&it.geometry)?.as_bytes(),
        )?;
        items.push(ManifestItem {
            id: it.id,
            label: it.label,
            geometry_file,
            fork: it.fork.as_ref().map(|f| ManifestFork {
                fork_index: f.fork_index,
                branch: f.branch,
            }),
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config: dataset.config.clone(),
        tracks_file: TRACKS_FILE.into(),
        alternates_file: ALTERNATES_FILE.into(),
        items,
        split: dataset.split.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

/// Loads a dataset from a directory or a manifest path.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let mut raw: BTreeMap<u64, Track> = load_tracks(&dir.join(&manifest.tracks_file))?
        .into_iter()
        .collect();
    let alt_path = dir.join(&manifest.alternates_file);
    let alt_text = fs::read_to_string(&alt_path)?;
    let mut alternates: BTreeMap<u64, Track> = if alt_text.lines().count() > 1 {
        tracks_from_csv(&alt_text)?.into_iter().collect()
    } else {
        BTreeMap::new()
    };
    let mut items = Vec::with_capacity(manifest.items.len());
    for m in &manifest.items {
        let track = raw.remove(&m.id).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "track {} missing from {}",
                m.id, manifest.tracks_file
            ))
        })?;
        let fork = match &m.fork {
            Some(f) => {
                let alternate_raw = alternates.remove(&m.id).ok_or_else(|| {
                    Error::InvalidConfig(format!("alternate branch of track {} missing", m.id))
                })?;
                Some(ForkInfo {
                    fork_index: f.fork_index,
                    branch: f.branch,
                    alternate_resampled: resample_100ms(&alternate_raw)?,
                    alternate_raw,
                })
            }
            None => None,
        };
        items.push(DatasetItem {
            id: m.id,
            label: m.label,
            resampled: resample_100ms(&track)?,
            raw: track,
            geometry: load_geometry(&dir.join(&m.geometry_file))?,
            fork,
        });
    }
    let n = items.len();
    if manifest
        .split
        .train
        .iter()
        .chain(&manifest.split.test)
        .any(|&i| i >= n)
    {
        return Err(Error::InvalidConfig("split index out of range".into()));
    }
    Ok(Dataset {
        config: manifest.config,
        items,
        split: manifest.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let a = Track::new(vec![
            Sample::new(0, 0.1 + 0.2, -1e-17),
            Sample::new(97, 123456.789012345, 5.0e300),
        ])
        .unwrap();
        let b = Track::from_positions(
            5,
            100,
            &[[std::f64::consts::PI, -0.0], [1.0 / 3.0, 2.0 / 3.0]],
        )
        .unwrap();
        let csv = tracks_to_csv([(3, &a), (8, &b)]);
        let back = tracks_from_csv(&csv).unwrap();
        assert_eq!(back, vec![(3, a), (8, b)]);
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = format!("{TRACK_CSV_HEADER}\n1,0,0.0,0.0\n1,100,abc,0.0\n");
        match tracks_from_csv(&csv) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("x_m"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let csv = format!("{TRACK_CSV_HEADER}\n1,0,0.0\n");
        assert!(matches!(
            tracks_from_csv(&csv),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(tracks_from_csv(""), Err(Error::Parse { .. })));
        assert!(matches!(
            tracks_from_csv("foo,bar\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn geometry_json_shape() {
        let g = ScenarioGeometry {
            driveable_polygons: vec![vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]],
            centerlines: vec![vec![[0.0, 0.5], [1.0, 0.5]]],
        };
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(
            json,
            r#"{"driveable":[[[0.0,0.0],[1.0,0.0],[1.0,1.0]]],"centerlines":[[[0.0,0.5],[1.0,0.5]]]}"#
        );
        assert_eq!(serde_json::from_str::<ScenarioGeometry>(&json).unwrap(), g);
    }
}
