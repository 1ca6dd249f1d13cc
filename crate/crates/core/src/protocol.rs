//! Host side of the external-estimator protocol.
//!
//! An adapter is a child process speaking newline-delimited JSON on its
//! standard input and output. The host opens with `{"protocol_version":"1"}`
//! and the adapter answers with the same line. After that the host sends one
//! request per line and waits for one response line. The wire format is
//! specified in `docs/protocol.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnData, ColumnRole, Dataset};
use crate::estimators::{EffectEstimate, Estimand, Estimator, EstimatorError, StudyDesign};
use crate::sampling::ConstructedStudy;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("cannot start `{command}`: {reason}")]
    SpawnFailure { command: String, reason: String },
    #[error("no handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("adapter speaks protocol version {0:?}")]
    VersionMismatch(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("adapter exited ({0})")]
    ChildExited(String),
    #[error("session is closed")]
    Dead,
    #[error("request cannot be encoded: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Ate,
    RiskDifference,
    PredictOutcomes,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ate => "ate",
            Task::RiskDifference => "risk_difference",
            Task::PredictOutcomes => "predict_outcomes",
        }
    }
}

/// A value array on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum WireColumn {
    Real(Vec<f64>),
    Integer(Vec<i64>),
    Text(Vec<String>),
}

impl WireColumn {
    pub fn len(&self) -> usize {
        match self {
            WireColumn::Real(v) => v.len(),
            WireColumn::Integer(v) => v.len(),
            WireColumn::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_data(data: &ColumnData) -> Self {
        match data {
            ColumnData::Numeric(v) => WireColumn::Real(v.clone()),
            ColumnData::Integer(v) => WireColumn::Integer(v.clone()),
            ColumnData::Categorical { codes, levels } => {
                WireColumn::Text(codes.iter().map(|&c| levels[c as usize].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRequest {
    pub request_id: String,
    pub task: Task,
    pub columns: BTreeMap<String, WireColumn>,
    pub roles: BTreeMap<String, String>,
    pub weights: Option<Vec<f64>>,
    /// Units to predict outcomes for (`predict_outcomes` only): covariates and treatment.
    pub predict_columns: Option<BTreeMap<String, WireColumn>>,
}

/// Column view sent to adapters: treatment, outcome and visible covariates.
fn wire_columns(
    d: &Dataset,
    keep: &[&str],
) -> (BTreeMap<String, WireColumn>, BTreeMap<String, String>) {
    let mut columns = BTreeMap::new();
    let mut roles = BTreeMap::new();
    for c in d.columns() {
        let wanted = match c.role {
            ColumnRole::Treatment | ColumnRole::Outcome => true,
            ColumnRole::Covariate => keep.contains(&c.name.as_str()),
            _ => false,
        };
        if wanted {
            columns.insert(c.name.clone(), WireColumn::from_data(&c.data));
            roles.insert(c.name.clone(), c.role.to_string());
        }
    }
    (columns, roles)
}

impl EstimateRequest {
    /// Effect request for the estimator-visible accepted sample.
    pub fn for_study(study: &ConstructedStudy, request_id: impl Into<String>) -> Self {
        let view = study.estimator_view();
        let covs = study.visible_covariates();
        let (columns, roles) = wire_columns(&view, &covs);
        let task = if view.has_binary_outcome() {
            Task::RiskDifference
        } else {
            Task::Ate
        };
        Self {
            request_id: request_id.into(),
            task,
            columns,
            roles,
            weights: view.weights().map(<[f64]>::to_vec),
            predict_columns: None,
        }
    }

    /// Outcome-prediction request: fit on the accepted sample, predict the complementary one.
    pub fn for_complement(study: &ConstructedStudy, request_id: impl Into<String>) -> Self {
        let mut req = Self::for_study(study, request_id);
        req.task = Task::PredictOutcomes;
        let covs = study.visible_covariates();
        let (mut predict, _) = wire_columns(study.complementary(), &covs);
        if let Some(y) = study.complementary().column_by_role(ColumnRole::Outcome) {
            predict.remove(&y.name);
        }
        req.predict_columns = Some(predict);
        req
    }

    pub fn n_rows(&self) -> usize {
        self.columns.values().next().map_or(0, WireColumn::len)
    }

    fn expected_predictions(&self) -> usize {
        self.predict_columns
            .as_ref()
            .and_then(|p| p.values().next().map(WireColumn::len))
            .unwrap_or(0)
    }

    /// One line of JSON, without the trailing newline.
    ///
    /// Keys are written in a fixed order and columns in lexicographic order;
    /// reals carry 17 significant digits. Non-finite values are rejected.
    pub fn encode(&self) -> Result<String, ProtocolError> {
        let mut out = String::with_capacity(64 + 24 * self.n_rows() * self.columns.len());
        out.push_str("{\"protocol_version\":");
        push_string(&mut out, PROTOCOL_VERSION);
        out.push_str(",\"request_id\":");
        push_string(&mut out, &self.request_id);
        out.push_str(",\"task\":");
        push_string(&mut out, self.task.as_str());
        out.push_str(",\"columns\":");
        push_columns(&mut out, &self.columns)?;
        out.push_str(",\"roles\":{");
        for (i, (name, role)) in self.roles.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_string(&mut out, name);
            out.push(':');
            push_string(&mut out, role);
        }
        out.push('}');
        if let Some(w) = &self.weights {
            out.push_str(",\"weights\":");
            push_reals(&mut out, w, "weights")?;
        }
        if let Some(p) = &self.predict_columns {
            out.push_str(",\"predict_columns\":");
            push_columns(&mut out, p)?;
        }
        out.push('}');
        Ok(out)
    }
}

fn push_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

/// Formats a finite real with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_reals(out: &mut String, values: &[f64], what: &str) -> Result<(), ProtocolError> {
    out.push('[');
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(ProtocolError::Encode(format!(
                "non-finite value in `{what}` at row {i}"
            )));
        }
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:.16e}").expect("writing to a String");
    }
    out.push(']');
    Ok(())
}

fn push_columns(
    out: &mut String,
    columns: &BTreeMap<String, WireColumn>,
) -> Result<(), ProtocolError> {
    out.push('{');
    for (i, (name, col)) in columns.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_string(out, name);
        out.push(':');
        match col {
            WireColumn::Real(v) => push_reals(out, v, name)?,
            WireColumn::Integer(v) => {
                out.push('[');
                for (j, x) in v.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    write!(out, "{x}").expect("writing to a String");
                }
                out.push(']');
            }
            WireColumn::Text(v) => {
                out.push('[');
                for (j, s) in v.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    push_string(out, s);
                }
                out.push(']');
            }
        }
    }
    out.push('}');
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateResponse {
    pub request_id: String,
    pub status: ResponseStatus,
    #[serde(default)]
    pub estimate: Option<f64>,
    #[serde(default)]
    pub predictions: Option<Vec<f64>>,
    #[serde(default)]
    pub message: Option<String>,
}

impl EstimateResponse {
    /// Parses one response line and checks it against the request it answers.
    ///
    /// `NaN` and `Infinity` are not JSON, so a line containing them fails to parse.
    pub fn decode(line: &str, req: &EstimateRequest) -> Result<Self, ProtocolError> {
        let resp: EstimateResponse = serde_json::from_str(line.trim_end())
            .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if resp.request_id != req.request_id {
            return Err(ProtocolError::Malformed(format!(
                "request_id {:?} does not echo {:?}",
                resp.request_id, req.request_id
            )));
        }
        if resp.status == ResponseStatus::Ok {
            match req.task {
                Task::PredictOutcomes => {
                    let want = req.expected_predictions();
                    match &resp.predictions {
                        Some(p) if p.len() == want => {}
                        Some(p) => {
                            return Err(ProtocolError::Malformed(format!(
                                "{} predictions for {want} units",
                                p.len()
                            )))
                        }
                        None => {
                            return Err(ProtocolError::Malformed(
                                "ok response without predictions".into(),
                            ))
                        }
                    }
                }
                Task::Ate | Task::RiskDifference => {
                    if resp.estimate.is_none() {
                        return Err(ProtocolError::Malformed(
                            "ok response without estimate".into(),
                        ));
                    }
                }
            }
        }
        Ok(resp)
    }
}

/// A live adapter process. Not shared between threads; one request in flight.
pub struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    dead: bool,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("pid", &self.child.id())
            .field("timeout", &self.timeout)
            .field("dead", &self.dead)
            .finish()
    }
}

#[derive(Deserialize)]
struct Handshake {
    protocol_version: String,
}

/// Starts an adapter and exchanges the version handshake.
///
/// `timeout` bounds the handshake and, later, every request.
pub fn spawn_estimator(command: &[String], timeout: Duration) -> Result<Session, ProtocolError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| ProtocolError::SpawnFailure {
            command: String::new(),
            reason: "empty command".into(),
        })?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| ProtocolError::SpawnFailure {
            command: command.join(" "),
            reason: e.to_string(),
        })?;
    let stdin = child.stdin.take().expect("stdin is piped");
    let stdout = child.stdout.take().expect("stdout is piped");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(stdout);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    let mut session = Session {
        child,
        stdin,
        lines: rx,
        timeout,
        dead: false,
    };
    session.send_line(&format!("{{\"protocol_version\":\"{PROTOCOL_VERSION}\"}}"))?;
    let line = match session.recv_line() {
        Err(ProtocolError::Timeout(t)) => return Err(ProtocolError::HandshakeTimeout(t)),
        other => other?,
    };
    let hs: Handshake = serde_json::from_str(line.trim_end()).map_err(|e| {
        session.kill();
        ProtocolError::Malformed(format!("handshake: {e}"))
    })?;
    if hs.protocol_version != PROTOCOL_VERSION {
        session.kill();
        return Err(ProtocolError::VersionMismatch(hs.protocol_version));
    }
    Ok(session)
}

impl Session {
    pub fn is_alive(&self) -> bool {
        !self.dead
    }

    fn kill(&mut self) {
        self.dead = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn exit_description(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => status.to_string(),
            _ => "stdout closed".into(),
        }
    }

    fn send_line(&mut self, line: &str) -> Result<(), ProtocolError> {
        if self.dead {
            return Err(ProtocolError::Dead);
        }
        let res = self
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush());
        if res.is_err() {
            // Give the child a moment to finish exiting so the status is reportable.
            thread::sleep(Duration::from_millis(20));
            let why = self.exit_description();
            self.kill();
            return Err(ProtocolError::ChildExited(why));
        }
        Ok(())
    }

    fn recv_line(&mut self) -> Result<String, ProtocolError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                self.kill();
                Err(ProtocolError::ChildExited(e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(ProtocolError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let deadline = Instant::now() + Duration::from_millis(200);
                while Instant::now() < deadline {
                    if let Ok(Some(_)) = self.child.try_wait() {
                        break;
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                let why = self.exit_description();
                self.kill();
                Err(ProtocolError::ChildExited(why))
            }
        }
    }

    /// Writes a raw line and reads one line back. Used by conformance checks.
    pub fn exchange_raw(&mut self, line: &str) -> Result<String, ProtocolError> {
        self.send_line(line)?;
        self.recv_line()
    }

    /// Sends one request and waits for its response. Any protocol violation
    /// closes the session.
    pub fn request_estimate(
        &mut self,
        req: &EstimateRequest,
    ) -> Result<EstimateResponse, ProtocolError> {
        let line = req.encode()?;
        let reply = self.exchange_raw(&line)?;
        EstimateResponse::decode(&reply, req).inspect_err(|_| self.kill())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if !self.dead {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub id: String,
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    60.0
}

/// An adapter wrapped as an [`Estimator`]. Idle sessions are pooled so
/// concurrent trials each get their own process.
#[derive(Debug)]
pub struct ExternalEstimator {
    spec: ExternalSpec,
    pool: Mutex<Vec<Session>>,
}

impl ExternalEstimator {
    pub fn new(spec: ExternalSpec) -> Self {
        Self {
            spec,
            pool: Mutex::new(Vec::new()),
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.spec.timeout_secs)
    }

    fn with_session<T>(
        &self,
        f: impl FnOnce(&mut Session) -> Result<T, ProtocolError>,
    ) -> Result<T, ProtocolError> {
        let pooled = self.pool.lock().expect("pool lock").pop();
        let mut session = match pooled {
            Some(s) => s,
            None => spawn_estimator(&self.spec.command, self.timeout())?,
        };
        let out = f(&mut session);
        if session.is_alive() {
            self.pool.lock().expect("pool lock").push(session);
        }
        out
    }

    /// Outcome predictions for the complementary sample of `study`.
    pub fn predict_complement(
        &self,
        study: &ConstructedStudy,
        request_id: &str,
    ) -> Result<Vec<f64>, ProtocolError> {
        let req = EstimateRequest::for_complement(study, request_id);
        let resp = self.with_session(|s| s.request_estimate(&req))?;
        match resp.status {
            ResponseStatus::Ok => Ok(resp.predictions.unwrap_or_default()),
            ResponseStatus::Error => Err(ProtocolError::Malformed(
                resp.message.unwrap_or_else(|| "adapter error".into()),
            )),
        }
    }
}

impl Estimator for ExternalEstimator {
    fn id(&self) -> &str {
        &self.spec.id
    }

    fn estimate(&self, study: &ConstructedStudy) -> Result<EffectEstimate, EstimatorError> {
        let design = StudyDesign::from_study(study)?;
        let request_id = format!("{}-{}", self.spec.id, study.seed().unwrap_or(0));
        let req = EstimateRequest::for_study(study, request_id);
        let resp = self
            .with_session(|s| s.request_estimate(&req))
            .map_err(|e| EstimatorError::External(e.to_string()))?;
        match (resp.status, resp.estimate) {
            (ResponseStatus::Ok, Some(v)) => {
                let mut est = EffectEstimate::new(self.id(), &design, v);
                if design.estimand() == Estimand::RiskDifference && !(-1.0..=1.0).contains(&v) {
                    est = est.with_flag("OutOfRangeRiskDifference");
                }
                Ok(est)
            }
            _ => Err(EstimatorError::External(
                resp.message
                    .unwrap_or_else(|| "adapter reported an error".into()),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub command: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

fn naive_fixture() -> ConstructedStudy {
    use crate::data::{Column, TableKind};
    let d = Dataset::new(
        vec![
            Column::integer("t", ColumnRole::Treatment, vec![1, 1, 0, 0]),
            Column::numeric("y", ColumnRole::Outcome, vec![3.0, 3.0, 1.0, 1.0]),
            Column::numeric("c", ColumnRole::Covariate, vec![0.5, -0.5, 0.25, -0.25]),
        ],
        TableKind::Observational,
    )
    .expect("fixture is valid");
    ConstructedStudy::observed(d)
}

fn large_fixture(n: usize) -> ConstructedStudy {
    use crate::data::{Column, TableKind};
    let t: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    let c: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let y: Vec<f64> = (0..n).map(|i| t[i] as f64 * 2.0 + c[i]).collect();
    let d = Dataset::new(
        vec![
            Column::integer("t", ColumnRole::Treatment, t),
            Column::numeric("y", ColumnRole::Outcome, y),
            Column::numeric("c", ColumnRole::Covariate, c),
        ],
        TableKind::Observational,
    )
    .expect("fixture is valid");
    ConstructedStudy::observed(d)
}

/// Runs the conformance checks against an adapter command.
///
/// Checks: handshake, request-id echo with a finite estimate, error response
/// (not a crash) for a malformed line, error response for a `NaN` literal,
/// and a 10,000-row round trip within `timeout`.
pub fn conformance_check(command: &[String], timeout: Duration) -> ConformanceReport {
    let mut checks = Vec::new();
    let mut record = |name: &str, res: Result<String, String>| {
        let (passed, detail) = match res {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
        passed
    };
    let mut session = match spawn_estimator(command, timeout) {
        Ok(s) => {
            record(
                "handshake",
                Ok(format!("protocol version {PROTOCOL_VERSION}")),
            );
            s
        }
        Err(e) => {
            record("handshake", Err(e.to_string()));
            return ConformanceReport {
                command: command.to_vec(),
                checks,
            };
        }
    };

    let req = EstimateRequest::for_study(&naive_fixture(), "conformance-echo");
    let echo = session
        .request_estimate(&req)
        .map_err(|e| e.to_string())
        .and_then(|r| match r {
            EstimateResponse {
                status: ResponseStatus::Ok,
                estimate: Some(v),
                ..
            } => Ok(format!("estimate {v} (arm-mean difference is 2)")),
            other => Err(format!("unexpected response {other:?}")),
        });
    record("echo", echo);

    let error_reply = |session: &mut Session, line: &str, id: &str| -> Result<String, String> {
        if !session.is_alive() {
            return Err("session closed by an earlier check".into());
        }
        let reply = session.exchange_raw(line).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(reply.trim_end())
            .map_err(|e| format!("reply is not JSON: {e}"))?;
        if v.get("status").and_then(|s| s.as_str()) != Some("error") {
            return Err(format!(
                "expected status \"error\", got {}",
                reply.trim_end()
            ));
        }
        if !id.is_empty() && v.get("request_id").and_then(|s| s.as_str()) != Some(id) {
            return Err("request_id not echoed".into());
        }
        Ok("structured error response".into())
    };
    let malformed = error_reply(
        &mut session,
        "{\"protocol_version\":\"1\",\"request_id\":",
        "",
    );
    record("malformed_request", malformed);

    let nan_line = format!(
        "{{\"protocol_version\":\"1\",\"request_id\":\"conformance-nan\",\"task\":\"ate\",\
         \"columns\":{{\"t\":[1,0],\"y\":[NaN,{}]}},\"roles\":{{\"t\":\"treatment\",\"y\":\"outcome\"}}}}",
        format_real(1.0)
    );
    let nan = error_reply(&mut session, &nan_line, "");
    record("nan_rejection", nan);

    if !session.is_alive() {
        session = match spawn_estimator(command, timeout) {
            Ok(s) => s,
            Err(e) => {
                record("large_request", Err(format!("respawn failed: {e}")));
                return ConformanceReport {
                    command: command.to_vec(),
                    checks,
                };
            }
        };
    }
    let big = EstimateRequest::for_study(&large_fixture(10_000), "conformance-large");
    let start = Instant::now();
    let large = session
        .request_estimate(&big)
        .map_err(|e| e.to_string())
        .and_then(|r| match r.status {
            ResponseStatus::Ok => Ok(format!(
                "10000 rows in {:.3} s",
                start.elapsed().as_secs_f64()
            )),
            ResponseStatus::Error => {
                Err(format!("adapter error: {}", r.message.unwrap_or_default()))
            }
        });
    record("large_request", large);
    ConformanceReport {
        command: command.to_vec(),
        checks,
    }
}
