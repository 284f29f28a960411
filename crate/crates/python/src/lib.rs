//! Python module `spinboson`: reference dynamics, KRR and network
//! forecasters, and recursive forecasting.

use pyo3::exceptions::{PyArithmeticError, PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use spinboson_ml::datapipe::{Dataset, SampleOrigin, SlicedSample, SplitTag};
use spinboson_ml::forecast::{self as fc, Forecaster};
use spinboson_ml::krr::{self, KernelSpec};
use spinboson_ml::nnet::{self, NetSpec, TrainOpts};
use spinboson_ml::refdyn::{self, HierarchyConfig, SpinBosonParams};
use spinboson_ml::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingInput(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::NotConverged { .. } | Error::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        Error::Solve(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Kernel from its report name (`linear`, `gaussian`, `exponential`,
/// `matern`, `decaying_periodic`) and hyperparameters.
pub fn kernel_from_name(name: &str, sigma: Option<f64>, n: u32, period: f64, sigma_p: f64) -> Result<KernelSpec, Error> {
    let need = || sigma.ok_or_else(|| Error::invalid("sigma", format!("required for the {name} kernel")));
    let spec = match name {
        "linear" => KernelSpec::Linear,
        "gaussian" => KernelSpec::Gaussian { sigma: need()? },
        "exponential" => KernelSpec::Exponential { sigma: need()? },
        "matern" => KernelSpec::Matern { sigma: need()?, n },
        "decaying_periodic" => KernelSpec::DecayingPeriodic {
            sigma: need()?,
            period,
            sigma_p,
        },
        other => return Err(Error::invalid("kernel", format!("unknown kernel {other:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

/// Wraps windows and next values as a training set.
pub fn dataset(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Dataset, Error> {
    if inputs.len() != labels.len() {
        return Err(Error::shape("labels", inputs.len(), labels.len()));
    }
    let t = inputs.first().map_or(0, Vec::len);
    if t == 0 {
        return Err(Error::invalid("inputs", "need at least one non-empty window"));
    }
    let samples = inputs
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (input, label))| SlicedSample {
            input,
            label,
            origin: SampleOrigin { grid_id: 0, offset: i },
        })
        .collect();
    Dataset::new(samples, t, SplitTag::Train)
}

/// `⟨σz(t)⟩` for one parameter point; returns `(times, values)`.
#[pyfunction]
#[pyo3(signature = (epsilon, lambda_, omega_c, beta, delta=1.0, depth=None, n_matsubara=None, t_max=None, tolerance=None, refine=true))]
#[allow(clippy::too_many_arguments)]
fn heom_propagate(
    py: Python<'_>,
    epsilon: f64,
    lambda_: f64,
    omega_c: f64,
    beta: f64,
    delta: f64,
    depth: Option<usize>,
    n_matsubara: Option<usize>,
    t_max: Option<f64>,
    tolerance: Option<f64>,
    refine: bool,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = SpinBosonParams {
        delta,
        ..SpinBosonParams::new(epsilon, lambda_, omega_c, beta)
    };
    let d = HierarchyConfig::default();
    let config = HierarchyConfig {
        depth: depth.unwrap_or(d.depth),
        n_matsubara: n_matsubara.unwrap_or(d.n_matsubara),
        t_max: t_max.unwrap_or(d.t_max),
        tolerance: tolerance.unwrap_or(d.tolerance),
        refine,
        ..d
    };
    let traj = py.detach(|| refdyn::heom_propagate(&params, &config)).map_err(to_py)?;
    Ok((traj.times, traj.values))
}

/// Trainable parameters of a named architecture.
#[pyfunction]
#[pyo3(signature = (architecture, input_length=41))]
fn count_parameters(architecture: &str, input_length: usize) -> PyResult<usize> {
    let spec = NetSpec::architecture(architecture, input_length).map_err(to_py)?;
    nnet::count_parameters(&spec).map_err(to_py)
}

#[pyclass(name = "KrrModel", module = "spinboson")]
struct PyKrr(krr::KrrModel);

#[pymethods]
impl PyKrr {
    #[staticmethod]
    #[pyo3(signature = (inputs, labels, kernel="gaussian", sigma=None, lambda_reg=1e-8, n=1, period=1.0, sigma_p=f64::INFINITY))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<f64>,
        kernel: &str,
        sigma: Option<f64>,
        lambda_reg: f64,
        n: u32,
        period: f64,
        sigma_p: f64,
    ) -> PyResult<Self> {
        let spec = kernel_from_name(kernel, sigma, n, period, sigma_p).map_err(to_py)?;
        let data = dataset(inputs, labels).map_err(to_py)?;
        py.detach(|| krr::krr_train(&data, spec, lambda_reg)).map(PyKrr).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        krr::load_model(path.as_ref()).map(PyKrr).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        krr::save_model(path.as_ref(), &self.0).map_err(to_py)
    }

    fn predict(&self, window: Vec<f64>) -> PyResult<f64> {
        self.0.predict(&window).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.spec.model_id()
    }

    #[getter]
    fn window_length(&self) -> usize {
        self.0.window_length()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        Forecaster::parameter_count(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("KrrModel({:?}, lambda_reg={:e}, n_train={})", self.0.spec, self.0.lambda_reg, self.0.alphas.len())
    }
}

#[pyclass(name = "NetModel", module = "spinboson")]
struct PyNet(nnet::NetModel);

#[pymethods]
impl PyNet {
    /// Fresh Xavier-initialized network of a named architecture.
    #[staticmethod]
    #[pyo3(signature = (architecture, seed=0, input_length=41))]
    fn build(architecture: &str, seed: u64, input_length: usize) -> PyResult<Self> {
        let spec = NetSpec::architecture(architecture, input_length).map_err(to_py)?;
        nnet::NetModel::new(spec, seed).map(PyNet).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        nnet::load_model(path.as_ref()).map(PyNet).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        nnet::save_model(path.as_ref(), &self.0).map_err(to_py)
    }

    /// Adam on the MSE; returns one dict per epoch.
    #[pyo3(signature = (inputs, labels, epochs=30, learning_rate=1e-4, batch_size=128, seed=0, val_inputs=None, val_labels=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<f64>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        val_inputs: Option<Vec<Vec<f64>>>,
        val_labels: Option<Vec<f64>>,
    ) -> PyResult<Vec<std::collections::BTreeMap<String, f64>>> {
        let data = dataset(inputs, labels).map_err(to_py)?;
        let val = match (val_inputs, val_labels) {
            (Some(x), Some(y)) => Some(dataset(x, y).map_err(to_py)?),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("give both val_inputs and val_labels or neither")),
        };
        let opts = TrainOpts {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainOpts::default()
        };
        let model = &mut self.0;
        let out = py
            .detach(|| nnet::train(model, &data, val.as_ref(), &opts))
            .map_err(to_py)?;
        Ok(out
            .history
            .iter()
            .map(|h| {
                [
                    ("epoch", h.epoch as f64),
                    ("train_mse", h.train_mse),
                    ("val_mse", h.val_mse),
                    ("train_mae", h.train_mae),
                    ("val_mae", h.val_mae),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect()
            })
            .collect())
    }

    fn predict(&self, window: Vec<f64>) -> PyResult<f64> {
        self.0.predict(&window).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.spec.name.clone()
    }

    #[getter]
    fn window_length(&self) -> usize {
        self.0.window_length()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    fn __repr__(&self) -> String {
        format!("NetModel({}, parameters={})", self.0.spec.name, self.0.parameter_count())
    }
}

/// Feeds each prediction back into the window; raises ArithmeticError on divergence.
#[pyfunction]
fn recursive_forecast(model: &Bound<'_, PyAny>, seed_window: Vec<f64>, n_steps: usize) -> PyResult<Vec<f64>> {
    if let Ok(m) = model.cast::<PyKrr>() {
        return fc::recursive_forecast(&m.borrow().0, &seed_window, n_steps).map_err(to_py);
    }
    if let Ok(m) = model.cast::<PyNet>() {
        return fc::recursive_forecast(&m.borrow().0, &seed_window, n_steps).map_err(to_py);
    }
    Err(PyValueError::new_err("model must be a KrrModel or NetModel"))
}

#[pyfunction]
fn mae(predicted: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    fc::evaluate_mae(&predicted, &reference).map_err(to_py)
}

#[pymodule]
fn spinboson(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(heom_propagate, m)?)?;
    m.add_function(wrap_pyfunction!(count_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(recursive_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_class::<PyKrr>()?;
    m.add_class::<PyNet>()?;
    m.add("ARCHITECTURES", nnet::ARCHITECTURES.to_vec())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_names() {
        assert_eq!(kernel_from_name("linear", None, 1, 1.0, 1.0).unwrap(), KernelSpec::Linear);
        assert_eq!(
            kernel_from_name("matern", Some(2.0), 3, 1.0, 1.0).unwrap(),
            KernelSpec::Matern { sigma: 2.0, n: 3 }
        );
        assert!(kernel_from_name("gaussian", None, 1, 1.0, 1.0).is_err());
        assert!(kernel_from_name("rbf", Some(1.0), 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn dataset_checks_lengths() {
        let d = dataset(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.5, 0.6]).unwrap();
        assert_eq!(d.window_length, 2);
        assert_eq!(d.samples[1].origin.offset, 1);
        assert!(dataset(vec![vec![1.0, 2.0]], vec![]).is_err());
        assert!(dataset(vec![vec![1.0, 2.0], vec![1.0]], vec![0.0, 0.0]).is_err());
    }
}
