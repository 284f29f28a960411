use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{SpinBosonParams, Trajectory};
use crate::error::{Error, Result};

/// File name encoding (ε, λ, ωc, β), e.g. `traj_eps0_lam0.2_wc8_beta1.csv`.
pub fn trajectory_file_name(params: &SpinBosonParams) -> String {
    format!(
        "traj_eps{}_lam{}_wc{}_beta{}.csv",
        params.epsilon, params.lambda, params.omega_c, params.beta
    )
}

/// Writes `t,sigma_z` rows with round-trip exact decimal text.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,sigma_z")?;
    for (t, v) in traj.times.iter().zip(&traj.values) {
        writeln!(w, "{t:?},{v:?}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory file; the physical parameters come from the caller
/// since the CSV body carries only the time series.
pub fn read_trajectory_csv(path: &Path, params: SpinBosonParams) -> Result<Trajectory> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "sigma_z" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "expected header t,sigma_z".into(),
        });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("bad number {s:?}: {e}"),
            })
        };
        times.push(parse(&rec[0])?);
        values.push(parse(&rec[1])?);
    }
    Ok(Trajectory {
        params,
        times,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_name_encodes_parameters() {
        let p = SpinBosonParams::new(0.0, 0.2, 8.0, 1.0);
        assert_eq!(trajectory_file_name(&p), "traj_eps0_lam0.2_wc8_beta1.csv");
        let q = SpinBosonParams::new(1.0, 0.1, 10.0, 0.25);
        assert_eq!(trajectory_file_name(&q), "traj_eps1_lam0.1_wc10_beta0.25.csv");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = SpinBosonParams::new(0.0, 0.2, 8.0, 1.0);
        let traj = Trajectory {
            params: p,
            times: vec![0.0, 0.1, 0.2],
            values: vec![1.0, 0.995_004_165_278_025_7, 1.0 / 3.0],
        };
        let path = dir.path().join(trajectory_file_name(&p));
        write_trajectory_csv(&path, &traj).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,sigma_z\n0.0,1.0\n"));
        assert_eq!(read_trajectory_csv(&path, p).unwrap(), traj);
    }

    #[test]
    fn missing_file_is_reported() {
        let p = SpinBosonParams::new(0.0, 0.2, 8.0, 1.0);
        let err = read_trajectory_csv(Path::new("/nonexistent/x.csv"), p).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
