//! Python bindings: datasets, teacher training, distillation and the ranking
//! primitives. Training calls release the GIL.

use std::collections::HashMap;

use hetcomp::data::{load_interactions, split, InteractionDataset, SplitRatios};
use hetcomp::distill::{rank_unobserved, train_student, TrainConfig, Variant};
use hetcomp::ensemble::TeacherRanking;
use hetcomp::losses::ScoredLists;
use hetcomp::metrics::RelevanceParams;
use hetcomp::synth::{generate, SynthConfig};
use hetcomp::teacher::TeacherConfig;
use hetcomp::{EmbeddingModel, ModelKind, TeacherTrajectory};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: hetcomp::Error) -> PyErr {
    match e {
        hetcomp::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn kind(name: &str) -> PyResult<ModelKind> {
    name.parse().map_err(to_py)
}

#[pyclass(frozen, module = "pyhetcomp")]
pub struct Dataset {
    inner: InteractionDataset,
}

#[pymethods]
impl Dataset {
    /// Loads a directory written by `hetcomp prepare` or `Dataset.save`.
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: InteractionDataset::load(dir).map_err(to_py)?,
        })
    }

    /// Splits an interaction file (`<user> <item> [weight]` lines) 80/10/10.
    #[staticmethod]
    #[pyo3(signature = (path, seed = 0))]
    fn from_interactions(path: &str, seed: u64) -> PyResult<Self> {
        let raw = load_interactions(path).map_err(to_py)?;
        let (inner, _) = split(&raw, SplitRatios::default(), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Seeded synthetic dataset.
    #[staticmethod]
    #[pyo3(signature = (users = 500, items = 1000, seed = 0))]
    fn synthetic(users: usize, items: usize, seed: u64) -> PyResult<Self> {
        let cfg = SynthConfig {
            num_users: users,
            num_items: items,
            seed,
            ..Default::default()
        };
        let (inner, _) = split(&generate(&cfg), SplitRatios::default(), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir).map_err(to_py)
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items
    }

    fn train_items(&self, user: usize) -> PyResult<Vec<usize>> {
        self.inner
            .train_items
            .get(user)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("user {user} out of range")))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, interactions={})",
            self.inner.num_users,
            self.inner.num_items,
            self.inner.num_interactions()
        )
    }
}

#[pyclass(frozen, from_py_object, module = "pyhetcomp")]
#[derive(Clone)]
pub struct Trajectory {
    inner: TeacherTrajectory,
}

#[pymethods]
impl Trajectory {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TeacherTrajectory::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn teacher(&self) -> String {
        self.inner.teacher.clone()
    }

    #[getter]
    fn num_checkpoints(&self) -> usize {
        self.inner.num_checkpoints()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }

    /// Top-K list of `user` at 1-based checkpoint `e`.
    fn ranking(&self, e: usize, user: usize) -> PyResult<Vec<usize>> {
        if e == 0 || e > self.inner.num_checkpoints() || user >= self.inner.num_users {
            return Err(PyValueError::new_err("checkpoint or user out of range"));
        }
        Ok(self.inner.list(e - 1, user).to_vec())
    }
}

#[pyclass(frozen, module = "pyhetcomp")]
pub struct Student {
    model: EmbeddingModel,
    #[pyo3(get)]
    log: Vec<HashMap<String, f64>>,
    #[pyo3(get)]
    converged_users: usize,
}

#[pymethods]
impl Student {
    /// Top-`k` unobserved items for every user.
    #[pyo3(signature = (dataset, k = 10))]
    fn recommend(&self, py: Python<'_>, dataset: &Dataset, k: usize) -> Vec<Vec<usize>> {
        py.detach(|| rank_unobserved(&self.model, &dataset.inner, k))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.model.save(path).map_err(to_py)
    }
}

/// Trains one teacher with its default settings and returns its trajectory.
#[pyfunction]
#[pyo3(signature = (dataset, kind_name, dim = 64, checkpoints = 4, max_epochs = 300, seed = 0, name = None))]
fn train_teacher(
    py: Python<'_>,
    dataset: &Dataset,
    kind_name: &str,
    dim: usize,
    checkpoints: usize,
    max_epochs: usize,
    seed: u64,
    name: Option<String>,
) -> PyResult<Trajectory> {
    let cfg = TeacherConfig {
        dim,
        checkpoints,
        max_epochs,
        seed,
        ..TeacherConfig::new(kind(kind_name)?)
    };
    let run = py
        .detach(|| hetcomp::teacher::train_teacher(&dataset.inner, &cfg))
        .map_err(to_py)?;
    let mut inner = run.trajectory;
    if let Some(n) = name {
        inner.teacher = n;
    }
    Ok(Trajectory { inner })
}

/// Distils an MF student from the trajectories.
#[pyfunction]
#[pyo3(signature = (dataset, trajectories, variant = "full", dim = 6, epochs = 300, lr = 0.05, seed = 0))]
fn distill(
    py: Python<'_>,
    dataset: &Dataset,
    trajectories: Vec<Trajectory>,
    variant: &str,
    dim: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> PyResult<Student> {
    let trajs: Vec<TeacherTrajectory> = trajectories.into_iter().map(|t| t.inner).collect();
    let Some(first) = trajs.first() else {
        return Err(PyValueError::new_err("need at least one trajectory"));
    };
    let cfg = TrainConfig {
        variant: variant.parse::<Variant>().map_err(to_py)?,
        checkpoints: first.num_checkpoints(),
        max_epochs: epochs,
        lr,
        seed,
        ..Default::default()
    };
    let ds = &dataset.inner;
    let out = py
        .detach(|| {
            let student = EmbeddingModel::new(ModelKind::Mf, ds.num_users, ds.num_items, dim, seed);
            train_student(student, &trajs, ds, &cfg)
        })
        .map_err(to_py)?;
    let log = out
        .log
        .iter()
        .map(|r| {
            HashMap::from([
                ("epoch".to_string(), r.epoch as f64),
                ("D@10".to_string(), r.d10),
                ("D@50".to_string(), r.d50),
                ("R@10_valid".to_string(), r.recall10_valid),
                ("N@10_valid".to_string(), r.ndcg10_valid),
                ("mean_v".to_string(), r.mean_v),
                ("alpha".to_string(), r.alpha),
                ("loss".to_string(), r.loss),
            ])
        })
        .collect();
    let converged_users = (0..ds.num_users).filter(|&u| out.state.all_converged(u)).count();
    Ok(Student {
        model: out.model,
        log,
        converged_users,
    })
}

/// `1 - NDCG@k` of `pi` against `target` with relevance `exp(-rank/lam)`.
#[pyfunction]
#[pyo3(signature = (pi, target, k = 50, lam = 10.0))]
fn discrepancy(pi: Vec<usize>, target: Vec<usize>, k: usize, lam: f64) -> PyResult<f64> {
    if target.is_empty() {
        return Err(PyValueError::new_err("target must not be empty"));
    }
    let p = RelevanceParams::new(lam, k).map_err(to_py)?;
    Ok(hetcomp::metrics::discrepancy(&pi, &target, p))
}

/// Plackett-Luce loss of the ranked scores `p` above the scores `n`.
#[pyfunction]
#[pyo3(signature = (p, n = Vec::new()))]
fn loss_fine(p: Vec<f64>, n: Vec<f64>) -> PyResult<f64> {
    Ok(hetcomp::losses::loss_fine(&ScoredLists::new(p, n).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (p, n = Vec::new()))]
fn loss_overall(p: Vec<f64>, n: Vec<f64>) -> PyResult<f64> {
    Ok(hetcomp::losses::loss_overall(&ScoredLists::new(p, n).map_err(to_py)?))
}

/// Aggregates `(items, rank_std)` pairs, one per teacher.
#[pyfunction]
#[pyo3(signature = (teachers, k_out, lam = 10.0))]
fn ensemble_rank(teachers: Vec<(Vec<usize>, Vec<f64>)>, k_out: usize, lam: f64) -> PyResult<Vec<usize>> {
    if teachers.is_empty() || teachers.iter().any(|(i, s)| i.len() != s.len()) {
        return Err(PyValueError::new_err("need teachers with one std per ranked item"));
    }
    let rankings: Vec<TeacherRanking> = teachers.iter().map(|(i, s)| TeacherRanking::new(i, s)).collect();
    Ok(hetcomp::ensemble::ensemble_rank(&rankings, lam, k_out).items)
}

#[pymodule]
fn pyhetcomp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Student>()?;
    m.add_function(wrap_pyfunction!(train_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    m.add_function(wrap_pyfunction!(discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(loss_fine, m)?)?;
    m.add_function(wrap_pyfunction!(loss_overall, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_rank, m)?)?;
    Ok(())
}
