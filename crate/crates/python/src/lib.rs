//! Python bindings: assembling, lifting, solving and running environments.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use rehost::archspec::{lift_block, ImageView, LiftOptions, ProcessorSpec};
use rehost::ir::{count_ops, render_block};
use rehost::symsolve::{parse_constraints, solve as solve_constraints, SolveOptions, SolverResult};
use rehost::vxe::{load_config, run_fuzz, run_vxe};

fn load_spec(path: &str) -> PyResult<ProcessorSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| PyValueError::new_err(format!("{}: {}", path, e)))?;
    ProcessorSpec::parse(&text).map_err(|e| PyValueError::new_err(format!("{}: {}", path, e)))
}

/// Assembles `source` and returns `(bytes, symbols)`.
#[pyfunction]
#[pyo3(signature = (spec, source, base = 0))]
fn assemble<'py>(py: Python<'py>, spec: &str, source: &str, base: u64) -> PyResult<(Bound<'py, PyBytes>, BTreeMap<String, u64>)> {
    let s = load_spec(spec)?;
    let a = rehost::asm::assemble(&s, source, base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyBytes::new(py, &a.bytes), a.symbols))
}

/// Lifts the block at `addr` and returns `(ir_text, raw_ops, ops)`.
#[pyfunction]
#[pyo3(signature = (spec, image, addr, base = 0, optimize = true))]
fn lift(spec: &str, image: &[u8], addr: u64, base: u64, optimize: bool) -> PyResult<(String, usize, usize)> {
    let s = load_spec(spec)?;
    let view = ImageView { base, bytes: image };
    let opts = LiftOptions {
        optimize,
        ..LiftOptions::default()
    };
    let l = lift_block(&s, &view, addr, opts, None).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((render_block(&l.block, &s.spaces), l.raw_ops, count_ops(&l.block)))
}

/// Solves constraint text, one expression per line asserted non-zero.
/// Returns `("sat", {var: value})`, `("unsat", None)` or `("unknown", reason)`.
#[pyfunction]
fn solve<'py>(py: Python<'py>, text: &str) -> PyResult<(String, Py<PyAny>)> {
    let cs = parse_constraints(text).map_err(PyValueError::new_err)?;
    Ok(match solve_constraints(&cs, &SolveOptions::default()) {
        SolverResult::Sat(m) => ("sat".into(), m.into_pyobject(py)?.into_any().unbind()),
        SolverResult::Unsat => ("unsat".into(), py.None()),
        SolverResult::Unknown(why) => ("unknown".into(), why.into_pyobject(py)?.into_any().unbind()),
    })
}

/// Runs an environment config and summarizes device stops, serial output and pairs.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load_config(&path).map_err(PyValueError::new_err)?;
    let r = py.detach(|| run_vxe(&cfg)).map_err(PyRuntimeError::new_err)?;
    let out = PyDict::new(py);
    let stops: BTreeMap<String, String> = r.stops.iter().map(|(k, v)| (k.clone(), format!("{:?}", v))).collect();
    out.set_item("stops", stops)?;
    let serial = PyDict::new(py);
    for d in &r.devices {
        for (port, bytes) in d.transcripts() {
            serial.set_item(format!("{}/{}", d.name, port), PyBytes::new(py, &bytes))?;
        }
    }
    out.set_item("serial", serial)?;
    let pairs: Vec<(String, String)> = r.pairs.iter().map(|(i, t)| (i.display().to_string(), t.display().to_string())).collect();
    out.set_item("pairs", pairs)?;
    out.set_item("rounds", r.rounds)?;
    Ok(out)
}

/// Runs the config's fuzzing campaign; `max_execs` and `corpus` override the config.
#[pyfunction]
#[pyo3(signature = (path, max_execs = None, corpus = None))]
fn fuzz_config<'py>(py: Python<'py>, path: PathBuf, max_execs: Option<u64>, corpus: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = load_config(&path).map_err(PyValueError::new_err)?;
    let f = cfg.fuzz.as_mut().ok_or_else(|| PyValueError::new_err("config has no [fuzz] section"))?;
    if let Some(n) = max_execs {
        f.max_execs = n;
    }
    if let Some(c) = corpus {
        f.corpus = c;
    }
    let r = py.detach(|| run_fuzz(&cfg)).map_err(PyRuntimeError::new_err)?;
    let out = PyDict::new(py);
    out.set_item("execs", r.execs)?;
    out.set_item("coverage", r.coverage)?;
    out.set_item("corpus", r.corpus)?;
    let goals = PyDict::new(py);
    for g in &r.goals {
        goals.set_item(&g.goal, PyBytes::new(py, &g.input))?;
    }
    out.set_item("goals", goals)?;
    Ok(out)
}

#[pymodule]
fn rehost_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add_function(wrap_pyfunction!(lift, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(fuzz_config, m)?)?;
    Ok(())
}
