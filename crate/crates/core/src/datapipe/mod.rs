//! Parameter grid, window slicing and dataset splits.
//!
//! Values are never normalized: every sample is a bit-exact copy of the
//! trajectory values it was cut from.

mod io;

pub use io::{
    read_dataset_csv, read_trajectory_set, write_dataset_csv, write_trajectory_set, SplitManifest, TRAJECTORY_INDEX,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refdyn::{SpinBosonParams, Trajectory};

/// Slice length giving 160 windows of 41 points from a 201-point trajectory.
pub const DEFAULT_SLICE_LENGTH: usize = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub epsilon_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub omega_c_values: Vec<f64>,
    pub beta_values: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::full()
    }
}

impl GridSpec {
    /// The 2 × 10 × 10 × 5 benchmark grid.
    pub fn full() -> Self {
        GridSpec {
            epsilon_values: vec![0.0, 1.0],
            lambda_values: (1..=10).map(|i| i as f64 / 10.0).collect(),
            omega_c_values: (1..=10).map(|i| i as f64).collect(),
            beta_values: vec![0.1, 0.25, 0.5, 0.75, 1.0],
        }
    }

    /// `ε = 0` half of [`GridSpec::full`].
    pub fn symmetric() -> Self {
        GridSpec {
            epsilon_values: vec![0.0],
            ..GridSpec::full()
        }
    }

    /// `ε = 1` half of [`GridSpec::full`].
    pub fn asymmetric() -> Self {
        GridSpec {
            epsilon_values: vec![1.0],
            ..GridSpec::full()
        }
    }

    pub fn len(&self) -> usize {
        self.epsilon_values.len() * self.lambda_values.len() * self.omega_c_values.len() * self.beta_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epsilon_values", &self.epsilon_values),
            ("lambda_values", &self.lambda_values),
            ("omega_c_values", &self.omega_c_values),
            ("beta_values", &self.beta_values),
        ] {
            if v.is_empty() {
                return Err(Error::invalid(name, "must not be empty"));
            }
        }
        Ok(())
    }
}

/// Cartesian product in lexicographic (ε, λ, ωc, β) order; the position in
/// the returned list is the grid id.
pub fn parameter_grid(spec: &GridSpec) -> Result<Vec<SpinBosonParams>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.len());
    for &eps in &spec.epsilon_values {
        for &lam in &spec.lambda_values {
            for &wc in &spec.omega_c_values {
                for &beta in &spec.beta_values {
                    let p = SpinBosonParams::new(eps, lam, wc, beta);
                    p.validate()?;
                    out.push(p);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub grid_id: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicedSample {
    pub input: Vec<f64>,
    pub label: f64,
    pub origin: SampleOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Subtrain,
    Validation,
    Holdout,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Subtrain => "subtrain",
            SplitTag::Validation => "validation",
            SplitTag::Holdout => "holdout",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<SlicedSample>,
    pub window_length: usize,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(samples: Vec<SlicedSample>, window_length: usize, split_tag: SplitTag) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.input.len() != window_length) {
            return Err(Error::shape(
                format!("sample {:?}", s.origin),
                window_length,
                s.input.len(),
            ));
        }
        Ok(Dataset {
            samples,
            window_length,
            split_tag,
        })
    }

    /// Slices every `(grid_id, trajectory)` pair with slice length `p`.
    pub fn from_trajectories<'a, I>(trajectories: I, p: usize, split_tag: SplitTag) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a Trajectory)>,
    {
        let mut samples = Vec::new();
        for (id, traj) in trajectories {
            let mut s = slice_trajectory(traj, p)?;
            for x in &mut s {
                x.origin.grid_id = id;
            }
            samples.extend(s);
        }
        Dataset::new(samples, p - 1, split_tag)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted, de-duplicated grid ids the samples were cut from.
    pub fn grid_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.origin.grid_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn shuffle(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.samples.shuffle(&mut rng);
    }

    /// Seeded draw of `n` samples without replacement; the whole set if `n ≥ len`.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if n < idx.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
        }
        Dataset {
            samples: idx.into_iter().map(|i| self.samples[i].clone()).collect(),
            window_length: self.window_length,
            split_tag: self.split_tag,
        }
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.input.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Cuts `L − P + 1` overlapping windows of `P − 1` inputs plus the next value.
///
/// The grid id of the returned samples is 0; [`Dataset::from_trajectories`]
/// fills in the real one.
pub fn slice_trajectory(traj: &Trajectory, p: usize) -> Result<Vec<SlicedSample>> {
    let l = traj.values.len();
    if p < 2 {
        return Err(Error::invalid("slice length", format!("{p} must be >= 2")));
    }
    if l < p {
        return Err(Error::invalid(
            "slice length",
            format!("trajectory length {l} is shorter than slice length {p}"),
        ));
    }
    Ok(traj
        .values
        .windows(p)
        .enumerate()
        .map(|(j, w)| SlicedSample {
            input: w[..p - 1].to_vec(),
            label: w[p - 1],
            origin: SampleOrigin { grid_id: 0, offset: j },
        })
        .collect())
}

/// Seeded choice of `n` items for the hold-out set. Both halves keep the
/// original relative order.
pub fn holdout_select<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let idx = holdout_indices(items.len(), n, seed)?;
    let mut chosen = vec![false; items.len()];
    for &i in &idx {
        chosen[i] = true;
    }
    let mut holdout = Vec::with_capacity(n);
    let mut remaining = Vec::with_capacity(items.len() - n);
    for (item, c) in items.iter().zip(chosen) {
        if c {
            holdout.push(item.clone());
        } else {
            remaining.push(item.clone());
        }
    }
    Ok((holdout, remaining))
}

/// Sorted positions chosen by [`holdout_select`] for the same arguments.
pub fn holdout_indices(count: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > count {
        return Err(Error::invalid(
            "holdout size",
            format!("{n} exceeds the {count} available trajectories"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, count, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Sample-level random split into `⌊fraction·N⌋` sub-training samples and
/// the remaining validation samples.
pub fn split_subtrain(train: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if train.is_empty() {
        return Err(Error::invalid("train", "dataset is empty"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction", format!("{fraction} must lie in (0, 1)")));
    }
    let n = train.len();
    let n_sub = (fraction * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let pick = |ids: &[usize], tag| Dataset {
        samples: ids.iter().map(|&i| train.samples[i].clone()).collect(),
        window_length: train.window_length,
        split_tag: tag,
    };
    Ok((
        pick(&idx[..n_sub], SplitTag::Subtrain),
        pick(&idx[n_sub..], SplitTag::Validation),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(values: Vec<f64>) -> Trajectory {
        Trajectory {
            params: SpinBosonParams::new(0.0, 0.1, 1.0, 1.0),
            times: (0..values.len()).map(|i| i as f64 * 0.1).collect(),
            values,
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(parameter_grid(&GridSpec::full()).unwrap().len(), 1000);
        assert_eq!(parameter_grid(&GridSpec::symmetric()).unwrap().len(), 500);
        let one = GridSpec {
            epsilon_values: vec![1.0],
            lambda_values: vec![0.3],
            omega_c_values: vec![2.0],
            beta_values: vec![0.5],
        };
        assert_eq!(parameter_grid(&one).unwrap(), vec![SpinBosonParams::new(1.0, 0.3, 2.0, 0.5)]);
    }

    #[test]
    fn grid_order_is_lexicographic() {
        let g = parameter_grid(&GridSpec::full()).unwrap();
        assert_eq!(g[0], SpinBosonParams::new(0.0, 0.1, 1.0, 0.1));
        assert_eq!(g[1], SpinBosonParams::new(0.0, 0.1, 1.0, 0.25));
        assert_eq!(g[5], SpinBosonParams::new(0.0, 0.1, 2.0, 0.1));
        assert_eq!(g[999], SpinBosonParams::new(1.0, 1.0, 10.0, 1.0));
    }

    #[test]
    fn empty_grid_list_rejected() {
        let mut g = GridSpec::symmetric();
        g.beta_values.clear();
        assert!(parameter_grid(&g).is_err());
    }

    #[test]
    fn small_slices() {
        let s = slice_trajectory(&traj(vec![1.0, 2.0, 3.0, 4.0]), 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].input.clone(), s[0].label), (vec![1.0, 2.0], 3.0));
        assert_eq!((s[1].input.clone(), s[1].label), (vec![2.0, 3.0], 4.0));
        assert_eq!(s[1].origin.offset, 1);

        let s = slice_trajectory(&traj(vec![0.5, 0.25]), 2).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].input.clone(), s[0].label), (vec![0.5], 0.25));
    }

    #[test]
    fn short_trajectory_names_both_lengths() {
        let err = slice_trajectory(&traj(vec![1.0; 5]), 42).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains("42"), "{err}");
    }

    #[test]
    fn holdout_edge_cases() {
        let items: Vec<usize> = (0..10).collect();
        let (h, r) = holdout_select(&items, 0, 1).unwrap();
        assert!(h.is_empty());
        assert_eq!(r, items);
        assert!(holdout_select(&items, 11, 1).is_err());
        let (h, r) = holdout_select(&items, 10, 1).unwrap();
        assert_eq!((h.len(), r.len()), (10, 0));
    }

    #[test]
    fn subtrain_split_sizes() {
        let d = Dataset::from_trajectories([(7, &traj(vec![0.1, 0.2, 0.3]))], 2, SplitTag::Train).unwrap();
        let (a, b) = split_subtrain(&d, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert_eq!(a.split_tag, SplitTag::Subtrain);
        assert_eq!(b.split_tag, SplitTag::Validation);
        assert!(split_subtrain(&d, 1.0, 3).is_err());
        let empty = Dataset::new(Vec::new(), 1, SplitTag::Train).unwrap();
        assert!(split_subtrain(&empty, 0.8, 3).is_err());
    }

    #[test]
    fn dataset_rejects_ragged_windows() {
        let s = |n: usize| SlicedSample {
            input: vec![0.0; n],
            label: 0.0,
            origin: SampleOrigin { grid_id: 0, offset: 0 },
        };
        assert!(Dataset::new(vec![s(3), s(4)], 3, SplitTag::Train).is_err());
    }
}
