use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::EpochStats;
use super::{NetModel, NetSpec};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    layer: usize,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetSpec,
    rng_seed: u64,
    arrays: Vec<ArrayEntry>,
}

/// First line is a JSON header (spec plus shape manifest), then one CSV
/// line of row-major values per array in manifest order.
pub fn save_model(path: &Path, model: &NetModel) -> Result<()> {
    let mut arrays = Vec::new();
    for (li, layer) in model.layers().iter().enumerate() {
        for p in layer.params() {
            arrays.push(ArrayEntry {
                layer: li,
                name: p.name.to_string(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            });
        }
    }
    let header = Header {
        spec: model.spec.clone(),
        rng_seed: model.rng_seed,
        arrays,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for layer in model.layers() {
        for p in layer.params() {
            let mut first = true;
            for v in p.value.iter() {
                if !first {
                    write!(w, ",")?;
                }
                write!(w, "{v:?}")?;
                first = false;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NetModel> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: Header = serde_json::from_str(&lines.next().ok_or_else(|| bad("empty file".into()))??)?;
    let mut model = NetModel::new(header.spec, header.rng_seed)?;
    let expected: usize = model.layers().iter().map(|l| l.params().len()).sum();
    if header.arrays.len() != expected {
        return Err(bad(format!("{} arrays listed, spec needs {expected}", header.arrays.len())));
    }
    let mut entries = header.arrays.iter();
    for (li, layer) in model.layers_mut().iter_mut().enumerate() {
        for p in layer.params_mut() {
            let e = entries.next().expect("count checked");
            if e.layer != li || e.rows != p.value.nrows() || e.cols != p.value.ncols() {
                return Err(bad(format!(
                    "array {} of layer {}: manifest says {}x{}, spec needs {}x{}",
                    e.name,
                    e.layer,
                    e.rows,
                    e.cols,
                    p.value.nrows(),
                    p.value.ncols()
                )));
            }
            let line = lines.next().ok_or_else(|| bad(format!("missing values for layer {li} {}", e.name)))??;
            let vals = line
                .split(',')
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|err| bad(format!("layer {li} {}: {err}", e.name)))?;
            if vals.len() != p.len() {
                return Err(bad(format!("layer {li} {}: {} values, expected {}", e.name, vals.len(), p.len())));
            }
            p.value.as_slice_mut().expect("standard layout").copy_from_slice(&vals);
        }
    }
    Ok(model)
}

/// `epoch,train_mse,val_mse,train_mae,val_mae`
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_mse,val_mse,train_mae,val_mae")?;
    for h in history {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?}",
            h.epoch, h.train_mse, h.val_mse, h.train_mae, h.val_mae
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochStats>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
