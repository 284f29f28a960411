use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KernelSpec, KrrModel};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    spec: KernelSpec,
    lambda_reg: f64,
    n_train: usize,
    window_length: usize,
}

/// First line: JSON header. Then CSV with columns `alpha,x_1,...,x_T`.
pub fn save_model(path: &Path, model: &KrrModel) -> Result<()> {
    let header = Header {
        spec: model.spec,
        lambda_reg: model.lambda_reg,
        n_train: model.alphas.len(),
        window_length: model.window_length(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    write!(w, "alpha")?;
    for i in 1..=header.window_length {
        write!(w, ",x_{i}")?;
    }
    writeln!(w)?;
    for (a, x) in model.alphas.iter().zip(&model.training_inputs) {
        write!(w, "{a:?}")?;
        for v in x {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<KrrModel> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: Header = serde_json::from_str(&lines.next().ok_or_else(|| bad("empty file".into()))??)?;
    header.spec.validate()?;
    lines.next().ok_or_else(|| bad("missing column header".into()))??;
    let mut alphas = Vec::with_capacity(header.n_train);
    let mut training_inputs = Vec::with_capacity(header.n_train);
    for (row, line) in lines.enumerate() {
        let line = line?;
        let vals = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
        if vals.len() != header.window_length + 1 {
            return Err(bad(format!(
                "row {} has {} columns, expected {}",
                row + 1,
                vals.len(),
                header.window_length + 1
            )));
        }
        alphas.push(vals[0]);
        training_inputs.push(vals[1..].to_vec());
    }
    if alphas.len() != header.n_train {
        return Err(bad(format!("{} rows, header says {}", alphas.len(), header.n_train)));
    }
    Ok(KrrModel {
        spec: header.spec,
        lambda_reg: header.lambda_reg,
        alphas,
        training_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.krr");
        let m = KrrModel {
            spec: KernelSpec::Matern { sigma: 0.125, n: 2 },
            lambda_reg: 2f64.powi(-30),
            alphas: vec![1.5, -0.1 - 0.2],
            training_inputs: vec![vec![0.3, 1.0 / 3.0], vec![-1.0, 0.0]],
        };
        save_model(&path, &m).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"family\":\"matern\",\"sigma\":0.125,\"n\":2,"));
    }
}
