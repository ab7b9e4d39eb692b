use std::io::Write;
use std::sync::Mutex;

use super::{
    compute_feedback, Direction, FeedbackRequest, FeedbackResponse, MessageKind, RegularizerState, RiskLog, Scenario,
    TeacherModel,
};
use crate::error::{Error, Result};
use crate::protocol::{self, Frame, FrameKind};

/// Answers one feedback request and logs the upload and the answer.
pub fn feedback(
    teacher: &TeacherModel,
    reg: &RegularizerState,
    req: &FeedbackRequest,
    log: &mut RiskLog,
) -> Result<FeedbackResponse> {
    let up = protocol::encode_request(req).len();
    log.record(Direction::Up, MessageKind::FeedbackRequest, up, req.scenario);
    match compute_feedback(teacher, reg, req) {
        Ok(resp) => {
            let down = protocol::encode_response(&resp).len();
            log.record(Direction::Down, resp.message_kind(), down, req.scenario);
            Ok(resp)
        }
        Err(e) => {
            let down = error_frame(&e).payload.len();
            log.record(Direction::Down, MessageKind::Error, down, req.scenario);
            Err(e)
        }
    }
}

/// Serialized teacher weights. Refused, and the refusal logged, for
/// black-box callers.
pub fn export_weights(teacher: &TeacherModel, scenario: Scenario, log: &mut RiskLog) -> Result<Vec<u8>> {
    log.record(
        Direction::Up,
        MessageKind::WeightRequest,
        protocol::encode_weight_request(scenario).len(),
        scenario,
    );
    if scenario == Scenario::BlackBox {
        let err = Error::Refused("teacher weights are not shared with black-box clients".into());
        log.record(
            Direction::Down,
            MessageKind::Refusal,
            error_frame(&err).payload.len(),
            scenario,
        );
        return Err(err);
    }
    let blob = teacher.params.to_bytes();
    log.record(Direction::Down, MessageKind::WeightBlob, blob.len(), scenario);
    Ok(blob)
}

pub(crate) fn error_frame(err: &Error) -> Frame {
    let code = match err {
        Error::Protocol { code, .. } => *code,
        Error::Refused(_) => protocol::ERR_REFUSED,
        Error::Shape(_) | Error::InvalidArgument(_) => protocol::ERR_INVALID_REQUEST,
        _ => protocol::ERR_INTERNAL,
    };
    let message = match err {
        Error::Protocol { message, .. } => message.clone(),
        other => other.to_string(),
    };
    Frame::error(code, &message)
}

/// A fitted teacher plus its regularizer behind a frame handler. The log is
/// the server-side transcript; when a sink is attached every entry is also
/// streamed to it as one JSON line.
pub struct TeacherServer {
    teacher: TeacherModel,
    reg: RegularizerState,
    log: Mutex<RiskLog>,
    sink: Mutex<Option<Box<dyn Write + Send>>>,
}

impl TeacherServer {
    pub fn new(teacher: TeacherModel, reg: RegularizerState) -> Self {
        TeacherServer {
            teacher,
            reg,
            log: Mutex::new(RiskLog::new()),
            sink: Mutex::new(None),
        }
    }

    pub fn with_sink(self, sink: Box<dyn Write + Send>) -> Self {
        *self.sink.lock().unwrap() = Some(sink);
        self
    }

    pub fn teacher(&self) -> &TeacherModel {
        &self.teacher
    }

    pub fn regularizer(&self) -> &RegularizerState {
        &self.reg
    }

    pub fn log(&self) -> RiskLog {
        self.log.lock().unwrap().clone()
    }

    /// Handles one decoded frame and returns the answer frame.
    pub fn handle(&self, kind: u8, payload: &[u8]) -> Frame {
        let mut log = self.log.lock().unwrap();
        let before = log.len();
        let frame = self.dispatch(kind, payload, &mut log);
        self.stream(&log, before);
        frame
    }

    /// Logs a frame that could not be read at all and the error sent back.
    pub(crate) fn reject(&self, up_bytes: usize, reply: &Frame) {
        let mut log = self.log.lock().unwrap();
        let before = log.len();
        log.record(Direction::Up, MessageKind::Error, up_bytes, Scenario::BlackBox);
        log.record(
            Direction::Down,
            MessageKind::Error,
            reply.payload.len(),
            Scenario::BlackBox,
        );
        self.stream(&log, before);
    }

    fn dispatch(&self, kind: u8, payload: &[u8], log: &mut RiskLog) -> Frame {
        // Best-effort scenario for entries whose payload does not decode.
        let scenario = payload
            .first()
            .and_then(|&c| Scenario::from_code(c))
            .unwrap_or(Scenario::BlackBox);
        let fail = |log: &mut RiskLog, up: MessageKind, err: Error| {
            let reply = error_frame(&err);
            log.record(Direction::Up, up, payload.len(), scenario);
            log.record(Direction::Down, MessageKind::Error, reply.payload.len(), scenario);
            reply
        };
        match FrameKind::from_u8(kind) {
            Some(FrameKind::FeedbackRequest) => match protocol::decode_request(payload) {
                Ok(req) => match feedback(&self.teacher, &self.reg, &req, log) {
                    Ok(resp) => Frame::new(FrameKind::FeedbackResponse, protocol::encode_response(&resp)),
                    Err(e) => error_frame(&e),
                },
                Err(e) => fail(log, MessageKind::FeedbackRequest, e),
            },
            Some(FrameKind::WeightRequest) => match protocol::decode_weight_request(payload) {
                Ok(s) => match export_weights(&self.teacher, s, log) {
                    Ok(blob) => Frame::new(FrameKind::WeightBlob, blob),
                    Err(e) => error_frame(&e),
                },
                Err(e) => fail(log, MessageKind::WeightRequest, e),
            },
            _ => fail(
                log,
                MessageKind::Error,
                Error::protocol(
                    protocol::ERR_UNEXPECTED_KIND,
                    format!("server does not accept frame kind {kind}"),
                ),
            ),
        }
    }

    fn stream(&self, log: &RiskLog, from: usize) {
        let mut sink = self.sink.lock().unwrap();
        if let Some(w) = sink.as_mut() {
            for e in &log.entries()[from..] {
                let line = serde_json::to_string(e).expect("risk entry serializes");
                // A failing transcript sink must not take the service down.
                let _ = writeln!(w, "{line}").and_then(|_| w.flush());
            }
        }
    }
}
