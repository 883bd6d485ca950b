//! Python bindings. Images cross the boundary as float64 numpy arrays shaped
//! `(H, W)` for single-channel frames or `(H, W, C)` otherwise.

use std::path::PathBuf;

use burstfuse::bench::{self, SynthesisParams};
use burstfuse::frame::{Frame, Plane};
use burstfuse::{io, pipeline, register, Error, FbaConfig, FlowField, FlowParams, MaskMode, RegisteredStack};
use numpy::ndarray::{ArrayD, IxDyn};
use numpy::{IntoPyArray, PyArrayDyn, PyReadonlyArrayDyn, PyUntypedArrayMethods};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::File { .. } | Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn frame_from_array(a: &PyReadonlyArrayDyn<'_, f64>) -> PyResult<Frame> {
    let shape = a.shape();
    let (h, w, c) = match *shape {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(PyValueError::new_err(format!(
                "expected an (H, W) or (H, W, C) array, got shape {shape:?}"
            )))
        }
    };
    let data: Vec<f64> = a.as_array().iter().copied().collect();
    Frame::from_interleaved(h, w, c, &data).map_err(to_py_err)
}

fn frames_from_arrays(list: &[PyReadonlyArrayDyn<'_, f64>]) -> PyResult<Vec<Frame>> {
    list.iter().map(frame_from_array).collect()
}

fn frame_to_array<'py>(py: Python<'py>, f: &Frame) -> Bound<'py, PyArrayDyn<f64>> {
    let (h, w) = f.dims();
    let shape = if f.num_channels() == 1 {
        vec![h, w]
    } else {
        vec![h, w, f.num_channels()]
    };
    ArrayD::from_shape_vec(IxDyn(&shape), f.to_interleaved())
        .expect("interleaved length matches shape")
        .into_pyarray(py)
}

fn plane_to_array<'py>(py: Python<'py>, p: &Plane) -> Bound<'py, PyArrayDyn<f64>> {
    ArrayD::from_shape_vec(IxDyn(&[p.height(), p.width()]), p.as_slice().to_vec())
        .expect("plane length matches shape")
        .into_pyarray(py)
}

fn flow_to_array<'py>(py: Python<'py>, f: &FlowField) -> Bound<'py, PyArrayDyn<f64>> {
    let data: Vec<f64> = f
        .dx()
        .as_slice()
        .iter()
        .zip(f.dy().as_slice())
        .flat_map(|(&dx, &dy)| [dx, dy])
        .collect();
    let (h, w) = f.dims();
    ArrayD::from_shape_vec(IxDyn(&[h, w, 2]), data)
        .expect("flow length matches shape")
        .into_pyarray(py)
}

fn flow_from_array(a: &PyReadonlyArrayDyn<'_, f64>) -> PyResult<FlowField> {
    let frame = frame_from_array(a)?;
    if frame.num_channels() != 2 {
        return Err(PyValueError::new_err("flow arrays must be shaped (H, W, 2)"));
    }
    let mut ch = frame.into_channels();
    let dy = ch.pop().unwrap();
    let dx = ch.pop().unwrap();
    FlowField::from_planes(dx, dy).map_err(to_py_err)
}

/// Applies keyword arguments as attribute assignments on a fresh instance.
fn with_kwargs<T>(py: Python<'_>, value: T, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T>
where
    T: pyo3::PyClass<Frozen = pyo3::pyclass::boolean_struct::False> + Clone + Into<PyClassInitializer<T>>,
{
    let Some(kwargs) = kwargs else {
        return Ok(value);
    };
    let obj = Bound::new(py, value)?;
    let any = obj.as_any();
    for (k, v) in kwargs.iter() {
        let name: String = k.extract()?;
        if !any.hasattr(name.as_str())? {
            return Err(PyValueError::new_err(format!("unknown parameter {name:?}")));
        }
        any.setattr(name.as_str(), v)?;
    }
    let out = obj.borrow().clone();
    Ok(out)
}

/// Registration and fusion parameters.
#[pyclass(name = "FbaConfig", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyFbaConfig {
    half_window: usize,
    block_size: usize,
    stride: usize,
    exponent: f64,
    spectrum_sigma: Option<f64>,
    consistency_tol: f64,
    mask_radius: usize,
    mask_sigma: f64,
    mask_mode: String,
    flow_scale: f64,
    iterations: usize,
    early_stop: Option<f64>,
    sharpen_amount: f64,
    sharpen_radius: f64,
}

impl From<FbaConfig> for PyFbaConfig {
    fn from(c: FbaConfig) -> Self {
        PyFbaConfig {
            half_window: c.half_window,
            block_size: c.block_size,
            stride: c.stride,
            exponent: c.exponent,
            spectrum_sigma: c.spectrum_sigma,
            consistency_tol: c.consistency_tol,
            mask_radius: c.mask_radius,
            mask_sigma: c.mask_sigma,
            mask_mode: match c.mask_mode {
                MaskMode::Conservative => "conservative".into(),
                MaskMode::Literal => "literal".into(),
            },
            flow_scale: c.flow_scale,
            iterations: c.iterations,
            early_stop: c.early_stop,
            sharpen_amount: c.sharpen_amount,
            sharpen_radius: c.sharpen_radius,
        }
    }
}

impl PyFbaConfig {
    fn to_rust(&self) -> PyResult<FbaConfig> {
        let cfg = FbaConfig {
            half_window: self.half_window,
            block_size: self.block_size,
            stride: self.stride,
            exponent: self.exponent,
            spectrum_sigma: self.spectrum_sigma,
            consistency_tol: self.consistency_tol,
            mask_radius: self.mask_radius,
            mask_sigma: self.mask_sigma,
            mask_mode: self.mask_mode.parse().map_err(to_py_err)?,
            flow_scale: self.flow_scale,
            iterations: self.iterations,
            early_stop: self.early_stop,
            sharpen_amount: self.sharpen_amount,
            sharpen_radius: self.sharpen_radius,
        };
        cfg.validate().map_err(to_py_err)?;
        Ok(cfg)
    }
}

#[pymethods]
impl PyFbaConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        with_kwargs(py, FbaConfig::default().into(), kwargs)
    }

    /// Raises ValueError if the parameters are inconsistent.
    fn validate(&self) -> PyResult<()> {
        self.to_rust().map(|_| ())
    }

    fn __repr__(&self) -> String {
        format!(
            "FbaConfig(half_window={}, block_size={}, stride={}, exponent={}, iterations={})",
            self.half_window, self.block_size, self.stride, self.exponent, self.iterations
        )
    }
}

/// TV-L1 optical flow parameters.
#[pyclass(name = "FlowParams", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyFlowParams {
    data_weight: f64,
    tightness: f64,
    time_step: f64,
    warps: usize,
    pyramid_factor: f64,
    min_level_size: usize,
    max_inner_iters: usize,
    stop_tol: f64,
}

impl From<FlowParams> for PyFlowParams {
    fn from(p: FlowParams) -> Self {
        PyFlowParams {
            data_weight: p.data_weight,
            tightness: p.tightness,
            time_step: p.time_step,
            warps: p.warps,
            pyramid_factor: p.pyramid_factor,
            min_level_size: p.min_level_size,
            max_inner_iters: p.max_inner_iters,
            stop_tol: p.stop_tol,
        }
    }
}

impl PyFlowParams {
    fn to_rust(&self) -> PyResult<FlowParams> {
        let p = FlowParams {
            data_weight: self.data_weight,
            tightness: self.tightness,
            time_step: self.time_step,
            warps: self.warps,
            pyramid_factor: self.pyramid_factor,
            min_level_size: self.min_level_size,
            max_inner_iters: self.max_inner_iters,
            stop_tol: self.stop_tol,
        };
        p.validate().map_err(to_py_err)?;
        Ok(p)
    }
}

#[pymethods]
impl PyFlowParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        with_kwargs(py, FlowParams::default().into(), kwargs)
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowParams(data_weight={}, tightness={}, warps={}, max_inner_iters={})",
            self.data_weight, self.tightness, self.warps, self.max_inner_iters
        )
    }
}

/// Parameters of the synthetic blurred burst generator.
#[pyclass(name = "SynthesisParams", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PySynthesisParams {
    num_frames: usize,
    kernel_size: usize,
    tremor_steps: usize,
    tremor_step_std: f64,
    noise_std: f64,
    lucky_frame: Option<usize>,
    rng_seed: u64,
}

impl From<SynthesisParams> for PySynthesisParams {
    fn from(p: SynthesisParams) -> Self {
        PySynthesisParams {
            num_frames: p.num_frames,
            kernel_size: p.kernel_size,
            tremor_steps: p.tremor_steps,
            tremor_step_std: p.tremor_step_std,
            noise_std: p.noise_std,
            lucky_frame: p.lucky_frame,
            rng_seed: p.rng_seed,
        }
    }
}

impl PySynthesisParams {
    fn to_rust(&self) -> SynthesisParams {
        SynthesisParams {
            num_frames: self.num_frames,
            kernel_size: self.kernel_size,
            tremor_steps: self.tremor_steps,
            tremor_step_std: self.tremor_step_std,
            noise_std: self.noise_std,
            lucky_frame: self.lucky_frame,
            rng_seed: self.rng_seed,
        }
    }
}

#[pymethods]
impl PySynthesisParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        with_kwargs(py, SynthesisParams::default().into(), kwargs)
    }
}

fn resolve(config: Option<&PyFbaConfig>, flow: Option<&PyFlowParams>) -> PyResult<(FbaConfig, FlowParams)> {
    let cfg = match config {
        Some(c) => c.to_rust()?,
        None => FbaConfig::default(),
    };
    let params = match flow {
        Some(p) => p.to_rust()?,
        None => FlowParams::default(),
    };
    Ok((cfg, params))
}

#[pyfunction]
fn default_config() -> PyFbaConfig {
    burstfuse::default_config().into()
}

/// Fuses equally sized blocks frequency by frequency.
#[pyfunction]
#[pyo3(signature = (blocks, exponent = 11.0, sigma = 0.0))]
fn fuse_blocks<'py>(
    py: Python<'py>,
    blocks: Vec<PyReadonlyArrayDyn<'py, f64>>,
    exponent: f64,
    sigma: f64,
) -> PyResult<Bound<'py, PyArrayDyn<f64>>> {
    let frames = frames_from_arrays(&blocks)?;
    let out = py
        .detach(|| burstfuse::fba::fuse_blocks(&frames, exponent, sigma))
        .map_err(to_py_err)?;
    Ok(frame_to_array(py, &out))
}

/// Fuses an already aligned stack with overlapping blocks.
#[pyfunction]
#[pyo3(signature = (frames, ref_index, config = None))]
fn fuse_stack<'py>(
    py: Python<'py>,
    frames: Vec<PyReadonlyArrayDyn<'py, f64>>,
    ref_index: usize,
    config: Option<PyFbaConfig>,
) -> PyResult<Bound<'py, PyArrayDyn<f64>>> {
    let (cfg, _) = resolve(config.as_ref(), None)?;
    let stack = RegisteredStack::aligned(frames_from_arrays(&frames)?, ref_index).map_err(to_py_err)?;
    let out = py
        .detach(|| burstfuse::fba::fuse_stack(&stack, &cfg))
        .map_err(to_py_err)?;
    Ok(frame_to_array(py, &out))
}

type Registered<'py> = (
    Vec<Bound<'py, PyArrayDyn<f64>>>,
    Vec<Bound<'py, PyArrayDyn<f64>>>,
    Vec<Bound<'py, PyArrayDyn<f64>>>,
);

/// Registers a window onto `frames[ref_index]`; returns the registered
/// frames, soft masks and round-trip consistency maps.
#[pyfunction]
#[pyo3(signature = (frames, ref_index, config = None, flow = None))]
fn register_window<'py>(
    py: Python<'py>,
    frames: Vec<PyReadonlyArrayDyn<'py, f64>>,
    ref_index: usize,
    config: Option<PyFbaConfig>,
    flow: Option<PyFlowParams>,
) -> PyResult<Registered<'py>> {
    let (cfg, params) = resolve(config.as_ref(), flow.as_ref())?;
    let frames = frames_from_arrays(&frames)?;
    let (stack, cmaps) = py
        .detach(|| register::register_window_detailed(&frames, ref_index, &cfg, &params))
        .map_err(to_py_err)?;
    Ok((
        stack.frames.iter().map(|f| frame_to_array(py, f)).collect(),
        stack.masks.iter().map(|m| plane_to_array(py, m.plane())).collect(),
        cmaps.iter().map(|c| plane_to_array(py, c.plane())).collect(),
    ))
}

/// Restores a whole sequence; returns the frames and, per pass, the mean
/// squared change of every frame.
#[pyfunction]
#[pyo3(signature = (frames, config = None, flow = None))]
fn deblur_sequence<'py>(
    py: Python<'py>,
    frames: Vec<PyReadonlyArrayDyn<'py, f64>>,
    config: Option<PyFbaConfig>,
    flow: Option<PyFlowParams>,
) -> PyResult<(Vec<Bound<'py, PyArrayDyn<f64>>>, Vec<Vec<f64>>)> {
    let (cfg, params) = resolve(config.as_ref(), flow.as_ref())?;
    let frames = frames_from_arrays(&frames)?;
    let (out, report) = py
        .detach(|| pipeline::deblur_sequence(&frames, &cfg, &params))
        .map_err(to_py_err)?;
    Ok((out.iter().map(|f| frame_to_array(py, f)).collect(), report.changes))
}

/// Forward and backward flow between two frames as `(H, W, 2)` arrays of
/// `(dx, dy)`.
#[pyfunction]
#[pyo3(signature = (reference, other, config = None, flow = None))]
fn estimate_flow_pair<'py>(
    py: Python<'py>,
    reference: PyReadonlyArrayDyn<'py, f64>,
    other: PyReadonlyArrayDyn<'py, f64>,
    config: Option<PyFbaConfig>,
    flow: Option<PyFlowParams>,
) -> PyResult<(Bound<'py, PyArrayDyn<f64>>, Bound<'py, PyArrayDyn<f64>>)> {
    let (cfg, params) = resolve(config.as_ref(), flow.as_ref())?;
    let (a, b) = (frame_from_array(&reference)?, frame_from_array(&other)?);
    let (fwd, bwd) = py
        .detach(|| burstfuse::estimate_flow_pair(&a, &b, &cfg, &params))
        .map_err(to_py_err)?;
    Ok((flow_to_array(py, &fwd), flow_to_array(py, &bwd)))
}

/// Blurs and noises a sharp frame into a burst; returns frames and kernels.
#[pyfunction]
#[pyo3(signature = (sharp, params = None))]
fn synthesize_burst<'py>(
    py: Python<'py>,
    sharp: PyReadonlyArrayDyn<'py, f64>,
    params: Option<PySynthesisParams>,
) -> PyResult<(Vec<Bound<'py, PyArrayDyn<f64>>>, Vec<Bound<'py, PyArrayDyn<f64>>>)> {
    let params = params.map(|p| p.to_rust()).unwrap_or_default();
    let sharp = frame_from_array(&sharp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (frames, kernels) = bench::synthesize_burst(&sharp, &params, &mut rng).map_err(to_py_err)?;
    Ok((
        frames.iter().map(|f| frame_to_array(py, f)).collect(),
        kernels.iter().map(|k| plane_to_array(py, k.plane())).collect(),
    ))
}

#[pyfunction]
fn psnr(a: PyReadonlyArrayDyn<'_, f64>, b: PyReadonlyArrayDyn<'_, f64>) -> PyResult<f64> {
    bench::psnr(&frame_from_array(&a)?, &frame_from_array(&b)?).map_err(to_py_err)
}

#[pyfunction]
fn estimate_noise_mad(frame: PyReadonlyArrayDyn<'_, f64>) -> PyResult<f64> {
    Ok(bench::estimate_noise_mad(&frame_from_array(&frame)?))
}

#[pyfunction]
fn unsharp_mask<'py>(
    py: Python<'py>,
    frame: PyReadonlyArrayDyn<'py, f64>,
    amount: f64,
    radius: f64,
) -> PyResult<Bound<'py, PyArrayDyn<f64>>> {
    let out = pipeline::unsharp_mask(&frame_from_array(&frame)?, amount, radius).map_err(to_py_err)?;
    Ok(frame_to_array(py, &out))
}

/// Reads a PNG or PNM file into `[0, 1]` floats.
#[pyfunction]
fn read_frame(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyArrayDyn<f64>>> {
    let f = io::read_frame(&path).map_err(to_py_err)?;
    Ok(frame_to_array(py, &f))
}

/// Writes an 8-bit image; values are clamped to `[0, 1]`.
#[pyfunction]
fn write_frame(path: PathBuf, frame: PyReadonlyArrayDyn<'_, f64>) -> PyResult<()> {
    io::write_frame(&path, &frame_from_array(&frame)?).map_err(to_py_err)
}

#[pyfunction]
fn read_flo(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyArrayDyn<f64>>> {
    let f = io::read_flow_flo(&path).map_err(to_py_err)?;
    Ok(flow_to_array(py, &f))
}

#[pyfunction]
fn write_flo(path: PathBuf, flow: PyReadonlyArrayDyn<'_, f64>) -> PyResult<()> {
    io::write_flow_flo(&path, &flow_from_array(&flow)?).map_err(to_py_err)
}

#[pymodule]
#[pyo3(name = "burstfuse")]
fn burstfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFbaConfig>()?;
    m.add_class::<PyFlowParams>()?;
    m.add_class::<PySynthesisParams>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_stack, m)?)?;
    m.add_function(wrap_pyfunction!(register_window, m)?)?;
    m.add_function(wrap_pyfunction!(deblur_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_flow_pair, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_burst, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_noise_mad, m)?)?;
    m.add_function(wrap_pyfunction!(unsharp_mask, m)?)?;
    m.add_function(wrap_pyfunction!(read_frame, m)?)?;
    m.add_function(wrap_pyfunction!(write_frame, m)?)?;
    m.add_function(wrap_pyfunction!(read_flo, m)?)?;
    m.add_function(wrap_pyfunction!(write_flo, m)?)?;
    Ok(())
}
