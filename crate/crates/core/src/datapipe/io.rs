use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SampleOrigin, SlicedSample, SplitTag};
use crate::error::{Error, Result};
use crate::refdyn::{read_trajectory_csv, trajectory_file_name, write_trajectory_csv, SpinBosonParams, Trajectory};

/// Name of the index file inside a trajectory directory.
pub const TRAJECTORY_INDEX: &str = "index.csv";

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    grid_id: usize,
    epsilon: f64,
    delta: f64,
    lambda: f64,
    omega_c: f64,
    beta: f64,
    file: String,
}

/// Writes one CSV per trajectory plus `index.csv` mapping grid ids to
/// parameters and file names. Returns every path written.
pub fn write_trajectory_set(dir: &Path, trajectories: &[(usize, Trajectory)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(trajectories.len() + 1);
    let index = dir.join(TRAJECTORY_INDEX);
    let mut w = csv::Writer::from_path(&index)?;
    for (id, traj) in trajectories {
        let file = trajectory_file_name(&traj.params);
        let path = dir.join(&file);
        write_trajectory_csv(&path, traj)?;
        paths.push(path);
        let p = traj.params;
        w.serialize(IndexRow {
            grid_id: *id,
            epsilon: p.epsilon,
            delta: p.delta,
            lambda: p.lambda,
            omega_c: p.omega_c,
            beta: p.beta,
            file,
        })?;
    }
    w.flush()?;
    paths.push(index);
    Ok(paths)
}

/// Reads a directory written by [`write_trajectory_set`], in index order.
pub fn read_trajectory_set(dir: &Path) -> Result<Vec<(usize, Trajectory)>> {
    let index = dir.join(TRAJECTORY_INDEX);
    if !index.exists() {
        return Err(Error::MissingInput(index));
    }
    let mut out = Vec::new();
    for row in csv::Reader::from_path(&index)?.deserialize() {
        let row: IndexRow = row?;
        let params = SpinBosonParams {
            epsilon: row.epsilon,
            delta: row.delta,
            lambda: row.lambda,
            omega_c: row.omega_c,
            beta: row.beta,
        };
        out.push((row.grid_id, read_trajectory_csv(&dir.join(&row.file), params)?));
    }
    Ok(out)
}

/// Grid ids per split plus the seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub window_length: usize,
    pub splits: BTreeMap<String, Vec<usize>>,
}

impl SplitManifest {
    pub fn new(seed: u64, window_length: usize) -> Self {
        SplitManifest {
            seed,
            window_length,
            splits: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, tag: SplitTag, grid_ids: Vec<usize>) {
        self.splits.insert(tag.to_string(), grid_ids);
    }

    pub fn get(&self, tag: SplitTag) -> Option<&[usize]> {
        self.splits.get(&tag.to_string()).map(Vec::as_slice)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}

/// One row per sample: `grid_id,offset,x_1,...,x_T,y`.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "grid_id,offset")?;
    for i in 1..=data.window_length {
        write!(w, ",x_{i}")?;
    }
    writeln!(w, ",y")?;
    for s in &data.samples {
        write!(w, "{},{}", s.origin.grid_id, s.origin.offset)?;
        for x in &s.input {
            write!(w, ",{x:?}")?;
        }
        writeln!(w, ",{:?}", s.label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path, split_tag: SplitTag) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "grid_id" || &headers[1] != "offset" || &headers[headers.len() - 1] != "y" {
        return Err(bad("expected header grid_id,offset,x_1,...,x_T,y".into()));
    }
    let t = headers.len() - 3;
    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: column {i}: {e}", row + 1)))
        };
        let int = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|e| bad(format!("row {}: column {i}: {e}", row + 1)))
        };
        samples.push(SlicedSample {
            input: (2..2 + t).map(num).collect::<Result<_>>()?,
            label: num(2 + t)?,
            origin: SampleOrigin {
                grid_id: int(0)?,
                offset: int(1)?,
            },
        });
    }
    Dataset::new(samples, t, split_tag)
}
