//! Files written by a run.
//!
//! | file | content |
//! |------|---------|
//! | `trajectories.csv` | one row per trajectory per checkpoint |
//! | `moments.json` | config, moment series, fits and oracle moments |
//! | `histograms.json` | site histograms at every checkpoint |
//! | `snapshot.csv` | final `φ` of the first realization as `site,x,re,im`, if requested |
//! | `verify_report.json` | acceptance results, written by `verify` |
//!
//! Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::scenarios::{ExperimentOutput, TrajectoryRecord};
use super::stats::{EnsembleStats, Fit, Histogram, Moments};

pub const SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORY_HEADER: &str = "t,trajectory_id,x,p";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsFile {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub var_p: Vec<f64>,
    pub cov_xp: Vec<f64>,
    pub tv_distance: Vec<f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub fit_results: BTreeMap<String, Fit>,
    pub oracle: Option<EnsembleStats>,
}

impl MomentsFile {
    pub fn new(out: &ExperimentOutput) -> Self {
        let s = &out.stats;
        Self {
            schema_version: SCHEMA_VERSION,
            config: out.config.clone(),
            times: s.times.clone(),
            mean_x: s.mean_x.clone(),
            var_x: s.var_x.clone(),
            mean_p: s.mean_p.clone(),
            var_p: s.var_p.clone(),
            cov_xp: s.cov_xp.clone(),
            tv_distance: s.tv_distance.clone(),
            series: s.series.clone(),
            fit_results: s.fit_results.clone(),
            oracle: out.oracle.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramsFile {
    pub schema_version: u32,
    pub histograms: Vec<Histogram>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Io(format!("cannot create {}: {e}", path.display()))
    })?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = create(path)?;
    write_trajectories_to(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn write_trajectories_to<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<()> {
    writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.t, r.id, r.x, r.p)?;
    }
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file =
        File::open(path).map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    let bad = |line: usize, m: &str| Error::Io(format!("{}:{line}: {m}", path.display()));
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(v) = meta.trim().strip_prefix("schema_version=") {
                if v.trim() != SCHEMA_VERSION.to_string() {
                    return Err(bad(i + 1, &format!("unsupported schema version {v}")));
                }
            }
            continue;
        }
        if !header_seen {
            if line != TRAJECTORY_HEADER {
                return Err(bad(i + 1, "unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected four fields"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(i + 1, &format!("bad number {s:?}")))
        };
        out.push(TrajectoryRecord {
            t: num(f[0])?,
            id: f[1].parse().map_err(|_| bad(i + 1, "bad trajectory id"))?,
            x: num(f[2])?,
            p: num(f[3])?,
        });
    }
    Ok(out)
}

/// Moments at every distinct time of a trajectory file, in time order.
pub fn moments_from_records(records: &[TrajectoryRecord]) -> Result<Vec<(f64, Moments)>> {
    let mut by_time: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in records {
        match by_time.iter_mut().find(|(t, _, _)| *t == r.t) {
            Some((_, xs, ps)) => {
                xs.push(r.x);
                ps.push(r.p);
            }
            None => by_time.push((r.t, vec![r.x], vec![r.p])),
        }
    }
    by_time.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_time
        .into_iter()
        .map(|(t, xs, ps)| Ok((t, Moments::from_samples(&xs, &ps)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrittenFiles {
    pub trajectories: PathBuf,
    pub moments: PathBuf,
    pub histograms: PathBuf,
    pub snapshot: Option<PathBuf>,
}

pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<WrittenFiles> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    let files = WrittenFiles {
        trajectories: dir.join("trajectories.csv"),
        moments: dir.join("moments.json"),
        histograms: dir.join("histograms.json"),
        snapshot: out.snapshot.as_ref().map(|_| dir.join("snapshot.csv")),
    };
    write_trajectories(&files.trajectories, &out.records)?;
    write_json(&files.moments, &MomentsFile::new(out))?;
    write_json(
        &files.histograms,
        &HistogramsFile {
            schema_version: SCHEMA_VERSION,
            histograms: out.stats.histograms.clone(),
        },
    )?;
    if let (Some(snap), Some(path)) = (&out.snapshot, &files.snapshot) {
        let mut w = create(path)?;
        writeln!(w, "# schema_version={SCHEMA_VERSION} t={}", snap.t)?;
        writeln!(w, "site,x,re,im")?;
        for (i, (x, z)) in snap.x.iter().zip(&snap.psi).enumerate() {
            writeln!(w, "{i},{x},{},{}", z.re, z.im)?;
        }
        w.flush()?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let recs = vec![
            TrajectoryRecord {
                t: 0.1,
                id: 0,
                x: 1.0 / 3.0,
                p: -2.5e-17,
            },
            TrajectoryRecord {
                t: 0.1,
                id: 1,
                x: f64::MAX,
                p: 7.0,
            },
        ];
        write_trajectories(&path, &recs).unwrap();
        assert_eq!(read_trajectories(&path).unwrap(), recs);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "# schema_version=9\nt,trajectory_id,x,p\n").unwrap();
        assert!(read_trajectories(&path).is_err());
    }

    #[test]
    fn moments_group_by_time() {
        let recs: Vec<_> = [(1.0, 0.0), (0.0, 1.0), (1.0, 2.0), (0.0, 3.0)]
            .iter()
            .enumerate()
            .map(|(id, &(t, x))| TrajectoryRecord { t, id, x, p: x })
            .collect();
        let m = moments_from_records(&recs).unwrap();
        assert_eq!(m[0].0, 0.0);
        assert_eq!(m[0].1.mean_x, 2.0);
        assert_eq!(m[1].1.var_x, 2.0);
    }
}
