//! Python bindings for the dfsync toolkit.

use pyo3::prelude::*;

#[pymodule]
fn dfsync_py(_py: Python<'_>, _m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
