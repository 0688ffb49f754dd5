//! Python bindings. Layouts travel as `bytes` of class indices, images as
//! flat interleaved RGB lists in `[0, 1]`.

use std::path::PathBuf;
use std::sync::Mutex;

use divsynth::config::RunConfig;
use divsynth::data::{self, Dataset, ImageRgb, NoiseVector, SemanticLayout, Split};
use divsynth::evaluation;
use divsynth::models::{Checkpoint, Generator};
use divsynth::training::{self, Trainer};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: divsynth::Error) -> PyErr {
    match e {
        divsynth::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig(RunConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        match text {
            Some(t) => RunConfig::parse(t).map(Self).map_err(py_err),
            None => Ok(Self(RunConfig::default())),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.0.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.0.get(key).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }
}

#[pyclass(name = "Layout", from_py_object)]
#[derive(Clone)]
struct PyLayout(SemanticLayout);

#[pymethods]
impl PyLayout {
    #[new]
    fn new(width: usize, height: usize, classes: usize, pixels: Vec<u8>) -> PyResult<Self> {
        SemanticLayout::new(width, height, classes, pixels).map(Self).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.class_count()
    }

    fn pixels(&self) -> Vec<u8> {
        self.0.pixels().to_vec()
    }

    fn histogram(&self) -> Vec<usize> {
        self.0.histogram()
    }
}

#[pyclass(name = "Dataset")]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    /// Renders `train_count + test_count` synthetic facades from `config`.
    #[staticmethod]
    fn generate(config: &PyConfig) -> PyResult<Self> {
        let c = &config.0;
        data::generate(&c.world, c.train_count + c.test_count)
            .map(|d| Self(d.with_holdout(c.test_count)))
            .map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `(layout, image_values, split)` of sample `i`.
    fn sample(&self, i: usize) -> PyResult<(PyLayout, Vec<f32>, &'static str)> {
        let s = self
            .0
            .samples()
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("sample {i} out of range")))?;
        let split = match s.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        Ok((PyLayout(s.layout.clone()), s.image.values().to_vec(), split))
    }
}

#[pyclass(name = "Generator")]
struct PyGenerator(Generator<f32>);

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(py_err)?;
        training::load_generator(&ck).map(|(_, g)| Self(g)).map_err(py_err)
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.class_count()
    }

    /// Noise entries outside `[-1, 1]` are clamped.
    fn synthesize(&self, layout: &PyLayout, noise: Vec<f64>) -> PyResult<Vec<f32>> {
        let (n, _) = NoiseVector::clamped(&noise);
        let img = self.0.synthesize_one(&layout.0, &n).map_err(py_err)?;
        Ok(img.values().to_vec())
    }

    /// One image per step with class `c` set to that step and the rest at zero.
    fn sweep(&self, layout: &PyLayout, c: usize, steps: Vec<f64>) -> PyResult<Vec<Vec<f32>>> {
        let imgs = evaluation::sweep_images(&self.0, &layout.0, c, &steps).map_err(py_err)?;
        Ok(imgs.into_iter().map(|i| i.values().to_vec()).collect())
    }

    fn linkage(&self, layout: &PyLayout, c: usize, steps: Vec<f64>) -> PyResult<f64> {
        evaluation::linkage_score(&self.0, &layout.0, c, &steps).map_err(py_err)
    }
}

#[pyclass(name = "Trainer")]
struct PyTrainer(Mutex<Trainer>);

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: &PyConfig, classes: usize) -> PyResult<Self> {
        Trainer::new(config.0.clone(), classes).map(|t| Self(Mutex::new(t))).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.0.lock().unwrap().epoch
    }

    /// Runs one epoch; returns `(loss_base, loss_div, loss_total)`.
    fn run_epoch(&self, data: &PyDataset) -> PyResult<(f64, f64, f64)> {
        let r = self.0.lock().unwrap().run_epoch(&data.0, |_| {}).map_err(py_err)?;
        Ok((r.loss_base, r.loss_div, r.loss_total))
    }

    fn metrics_csv(&self) -> String {
        self.0.lock().unwrap().metrics_csv()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ck = self.0.lock().unwrap().checkpoint().map_err(py_err)?;
        ck.save(&path).map_err(py_err)
    }

    fn generator(&self) -> PyGenerator {
        PyGenerator(self.0.lock().unwrap().generator.clone())
    }
}

#[pyfunction]
fn accuracy(pred: &PyLayout, truth: &PyLayout) -> PyResult<f64> {
    evaluation::accuracy(&pred.0, &truth.0).map_err(py_err)
}

/// `(mean, per_class)`; classes absent from both layouts give `None`.
#[pyfunction]
fn iou(pred: &PyLayout, truth: &PyLayout) -> PyResult<(f64, Vec<Option<f64>>)> {
    let r = evaluation::iou(&pred.0, &truth.0).map_err(py_err)?;
    Ok((r.mean, r.per_class))
}

#[pyfunction]
fn count_compositions(valid_values_per_class: Vec<u64>) -> PyResult<u128> {
    data::count_compositions(&valid_values_per_class).map_err(py_err)
}

#[pyfunction]
fn pairwise_diversity(width: usize, height: usize, images: Vec<Vec<f32>>) -> PyResult<f64> {
    let imgs = images
        .into_iter()
        .map(|v| ImageRgb::new(width, height, v))
        .collect::<divsynth::Result<Vec<_>>>()
        .map_err(py_err)?;
    evaluation::pairwise_diversity(&imgs).map_err(py_err)
}

#[pymodule]
pub fn pydivsynth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyLayout>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(count_compositions, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_diversity, m)?)?;
    Ok(())
}
