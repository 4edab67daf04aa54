//! Python bindings: scenarios, the sans-IO hotel, session logs and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use turinghotel::fsa::load_behavior_file;
use turinghotel::hotel::{Hotel as CoreHotel, HotelConfig, Inbound, Outbound};
use turinghotel::metrics::{compute_report as core_report, PositiveClass, ReportOptions, SpellChecker};
use turinghotel::protocol::{decode, encode_line, Envelope, TokenKey};
use turinghotel::roster::Roster as CoreRoster;
use turinghotel::sim::{run, Scenario as CoreScenario, SimOptions, SimOutcome as CoreOutcome};
use turinghotel::store::{load_session as core_load, parse_session, MemorySink, Session as CoreSession, SessionLog};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// Ground-truth labels keyed by agent id.
#[pyclass(module = "turinghotel")]
struct Roster {
    inner: CoreRoster,
}

#[pymethods]
impl Roster {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreRoster::load(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreRoster::from_toml_str(text).map(|inner| Self { inner }).map_err(value_err)
    }

    /// `"human"`, the model name of an AI (or `"ai"` when unknown), or `None`.
    fn label(&self, agent_id: &str) -> Option<String> {
        self.inner.label(agent_id).map(|t| match t.model() {
            _ if t.is_human() => "human".to_owned(),
            Some(m) => m.to_owned(),
            None => "ai".to_owned(),
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(module = "turinghotel")]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreScenario::load(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreScenario::from_toml_str(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn agent_ids(&self) -> Vec<String> {
        self.inner.agents.iter().map(|a| a.id.clone()).collect()
    }

    fn roster(&self) -> Roster {
        Roster {
            inner: self.inner.roster(),
        }
    }

    /// Runs on the virtual clock, or on the wall clock scaled by `time_scale`.
    #[pyo3(signature = (time_scale = None, log_path = None))]
    fn run(&self, py: Python<'_>, time_scale: Option<f64>, log_path: Option<PathBuf>) -> PyResult<SimOutcome> {
        let opts = SimOptions {
            log_path,
            real_clock: time_scale,
            abort_after_rounds: None,
        };
        let scenario = self.inner.clone();
        py.detach(|| run(&scenario, &opts))
            .map(|inner| SimOutcome { inner })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyclass(module = "turinghotel")]
struct SimOutcome {
    inner: CoreOutcome,
}

#[pymethods]
impl SimOutcome {
    #[getter]
    fn rounds_closed(&self) -> usize {
        self.inner.rounds_closed
    }

    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    #[getter]
    fn ended_at(&self) -> u64 {
        self.inner.ended_at
    }

    fn log_text(&self) -> String {
        self.inner.log_text()
    }

    fn rounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.rounds())
    }

    /// Counters and assertion results as a dict.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

#[pyclass(module = "turinghotel")]
struct Session {
    inner: CoreSession,
}

#[pymethods]
impl Session {
    fn rounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.rounds)
    }

    #[getter]
    fn partial_rounds(&self) -> usize {
        self.inner.partial.len()
    }

    #[getter]
    fn corrupt_lines(&self) -> Vec<usize> {
        self.inner.corrupt.iter().map(|c| c.line).collect()
    }

    #[getter]
    fn events(&self) -> usize {
        self.inner.events
    }

    fn __len__(&self) -> usize {
        self.inner.rounds.len()
    }
}

#[pyfunction]
fn load_session(path: PathBuf) -> PyResult<Session> {
    core_load(&path).map(|inner| Session { inner }).map_err(value_err)
}

#[pyfunction]
fn parse_session_text(text: &str) -> PyResult<Session> {
    parse_session(text.as_bytes()).map(|inner| Session { inner }).map_err(value_err)
}

/// Computes the analysis report over the closed rounds of `sessions`.
#[pyfunction]
#[pyo3(signature = (sessions, data_dir, roster = None, positive_class = "human", room_size = 4))]
fn compute_report<'py>(
    py: Python<'py>,
    sessions: Vec<PathBuf>,
    data_dir: PathBuf,
    roster: Option<&Roster>,
    positive_class: &str,
    room_size: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let positive_class = match positive_class {
        "human" => PositiveClass::Human,
        "ai" => PositiveClass::Ai,
        other => return Err(PyValueError::new_err(format!("unknown positive class {other:?}"))),
    };
    let checker = SpellChecker::load_dir(&data_dir).map_err(value_err)?;
    let several = sessions.len() > 1;
    let mut rounds = Vec::new();
    for path in &sessions {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let s = core_load(path).map_err(value_err)?;
        rounds.extend(s.rounds.into_iter().map(|mut r| {
            if several {
                r.room_id = format!("{stem}/{}", r.room_id);
            }
            r
        }));
    }
    let opts = ReportOptions {
        room_size,
        positive_class,
    };
    let report = core_report(&rounds, roster.map(|r| &r.inner), &checker, &opts).map_err(value_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn decode_envelope<'py>(py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyAny>> {
    let env = decode(line.as_bytes()).map_err(value_err)?;
    to_py(py, &env)
}

#[pyfunction]
fn encode_envelope(py: Python<'_>, envelope: &Bound<'_, PyAny>) -> PyResult<String> {
    let env: Envelope = from_py(py, envelope)?;
    Ok(encode_line(&env))
}

/// Validates a behavior document and returns its adjacency listing.
#[pyfunction]
fn validate_behavior(path: PathBuf) -> PyResult<String> {
    let b = load_behavior_file(&path).map_err(value_err)?;
    match b.role_name.as_str() {
        "manager" => CoreHotel::check_behavior(&b).map_err(value_err)?,
        "participant" => turinghotel::agent::Participant::check_behavior(&b).map_err(value_err)?,
        _ => {}
    }
    Ok(b.adjacency_listing())
}

/// The room manager as a sans-IO state machine. Every call returns the
/// actions to perform as `("send", conn, frame)` or `("close", conn, None)`.
#[pyclass(module = "turinghotel", unsendable)]
struct Hotel {
    inner: CoreHotel,
    sink: MemorySink,
}

type Action = (&'static str, u64, Option<String>);

fn actions(out: Vec<Outbound>) -> Vec<Action> {
    out.into_iter()
        .map(|o| match o {
            Outbound::Send { conn, frame } => ("send", conn, Some(frame)),
            Outbound::Close { conn } => ("close", conn, None),
        })
        .collect()
}

#[pymethods]
impl Hotel {
    #[new]
    #[pyo3(signature = (roster, seed, key, config_toml = None))]
    fn new(roster: &Roster, seed: u64, key: Vec<u8>, config_toml: Option<&str>) -> PyResult<Self> {
        let config = match config_toml {
            Some(t) => HotelConfig::from_toml_str(t).map_err(value_err)?,
            None => HotelConfig::default(),
        };
        let (log, sink) = SessionLog::in_memory();
        let inner = CoreHotel::new(config, roster.inner.clone(), log, TokenKey::new(key), seed).map_err(value_err)?;
        Ok(Self { inner, sink })
    }

    fn connect(&mut self, now: u64, conn: u64) -> Vec<Action> {
        actions(self.inner.handle(now, Inbound::Connected(conn)))
    }

    fn frame(&mut self, now: u64, conn: u64, line: String) -> Vec<Action> {
        actions(self.inner.handle(now, Inbound::Frame(conn, line)))
    }

    fn close(&mut self, now: u64, conn: u64) -> Vec<Action> {
        actions(self.inner.handle(now, Inbound::Closed(conn)))
    }

    fn tick(&mut self, now: u64) -> Vec<Action> {
        actions(self.inner.handle(now, Inbound::Tick))
    }

    fn next_deadline(&self) -> Option<u64> {
        self.inner.next_deadline()
    }

    #[getter]
    fn manager_state(&self) -> String {
        self.inner.manager_state().to_owned()
    }

    #[getter]
    fn active_rooms(&self) -> usize {
        self.inner.active_rooms()
    }

    fn completed_rounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.completed_rounds())
    }

    /// The session log written so far.
    fn log_text(&self) -> String {
        self.sink.text()
    }
}

#[pymodule]
#[pyo3(name = "turinghotel")]
fn turinghotel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Roster>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<SimOutcome>()?;
    m.add_class::<Session>()?;
    m.add_class::<Hotel>()?;
    m.add_function(wrap_pyfunction!(load_session, m)?)?;
    m.add_function(wrap_pyfunction!(parse_session_text, m)?)?;
    m.add_function(wrap_pyfunction!(compute_report, m)?)?;
    m.add_function(wrap_pyfunction!(decode_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(encode_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(validate_behavior, m)?)?;
    Ok(())
}
