use std::io::{self, BufReader};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;

use super::wire::*;
use crate::error::{Error, Result};
use crate::numkit::Mlp;
use crate::teacher::{Direction, FeedbackRequest, FeedbackResponse, MessageKind, RiskLog, Scenario, TeacherServer};

/// A synchronous request/response transport: one outstanding frame.
pub trait Channel {
    fn exchange(&mut self, request: &Frame) -> Result<Frame>;
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn exchange(&mut self, request: &Frame) -> Result<Frame> {
        (**self).exchange(request)
    }
}

/// Calls the server handler directly with the same payload bytes a socket
/// would carry.
#[derive(Clone)]
pub struct InProcessChannel {
    server: Arc<TeacherServer>,
}

impl InProcessChannel {
    pub fn new(server: Arc<TeacherServer>) -> Self {
        InProcessChannel { server }
    }

    pub fn server(&self) -> &TeacherServer {
        &self.server
    }
}

impl Channel for InProcessChannel {
    fn exchange(&mut self, request: &Frame) -> Result<Frame> {
        Ok(self.server.handle(request.kind, &request.payload))
    }
}

pub struct TcpChannel {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpChannel {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpChannel {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }
}

impl Channel for TcpChannel {
    fn exchange(&mut self, request: &Frame) -> Result<Frame> {
        write_frame(&mut self.writer, request)?;
        match read_frame(&mut self.reader) {
            Ok(f) => Ok(f),
            Err(FrameError::Closed) => {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "teacher closed the connection").into())
            }
            Err(FrameError::Io(e)) => Err(e.into()),
            Err(FrameError::Invalid { code, message }) => Err(Error::protocol(code, message)),
        }
    }
}

/// Serves frames from one connection until the peer hangs up or sends
/// something unreadable, in which case an error frame is sent and the
/// connection closed.
pub fn serve_connection(stream: TcpStream, server: &TeacherServer) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        match read_frame(&mut reader) {
            Ok(frame) => {
                let reply = server.handle(frame.kind, &frame.payload);
                write_frame(&mut writer, &reply)?;
            }
            Err(FrameError::Closed) => return Ok(()),
            Err(FrameError::Io(e)) => return Err(e.into()),
            Err(FrameError::Invalid { code, message }) => {
                let reply = Frame::error(code, &message);
                server.reject(0, &reply);
                let _ = write_frame(&mut writer, &reply);
                return Ok(());
            }
        }
    }
}

/// Accepts connections one at a time. Stops after `max_connections` when
/// given, otherwise runs until the listener fails.
pub fn serve(listener: &TcpListener, server: &TeacherServer, max_connections: Option<usize>) -> Result<()> {
    let mut served = 0;
    while max_connections.is_none_or(|m| served < m) {
        let (stream, _) = listener.accept()?;
        // A broken client connection only ends that session.
        let _ = serve_connection(stream, server);
        served += 1;
    }
    Ok(())
}

/// Client end of the teacher service. Keeps its own transcript of every
/// frame it sends and receives.
pub struct RemoteTeacher<C: Channel> {
    channel: C,
    transcript: RiskLog,
}

impl<C: Channel> RemoteTeacher<C> {
    pub fn new(channel: C) -> Self {
        RemoteTeacher {
            channel,
            transcript: RiskLog::new(),
        }
    }

    pub fn transcript(&self) -> &RiskLog {
        &self.transcript
    }

    pub fn into_parts(self) -> (C, RiskLog) {
        (self.channel, self.transcript)
    }

    pub fn feedback(&mut self, req: &FeedbackRequest) -> Result<FeedbackResponse> {
        let frame = Frame::new(FrameKind::FeedbackRequest, encode_request(req));
        self.transcript.record(
            Direction::Up,
            MessageKind::FeedbackRequest,
            frame.payload.len(),
            req.scenario,
        );
        let reply = self.channel.exchange(&frame)?;
        match FrameKind::from_u8(reply.kind) {
            Some(FrameKind::FeedbackResponse) => {
                let resp = decode_response(&reply.payload)?;
                self.transcript
                    .record(Direction::Down, resp.message_kind(), reply.payload.len(), req.scenario);
                Ok(resp)
            }
            _ => Err(self.unexpected(reply, req.scenario)),
        }
    }

    pub fn weights(&mut self, scenario: Scenario) -> Result<Mlp> {
        let frame = Frame::new(FrameKind::WeightRequest, encode_weight_request(scenario));
        self.transcript
            .record(Direction::Up, MessageKind::WeightRequest, frame.payload.len(), scenario);
        let reply = self.channel.exchange(&frame)?;
        match FrameKind::from_u8(reply.kind) {
            Some(FrameKind::WeightBlob) => {
                self.transcript
                    .record(Direction::Down, MessageKind::WeightBlob, reply.payload.len(), scenario);
                Mlp::from_bytes(&reply.payload).map_err(|e| Error::protocol(ERR_MALFORMED, e.to_string()))
            }
            _ => Err(self.unexpected(reply, scenario)),
        }
    }

    fn unexpected(&mut self, reply: Frame, scenario: Scenario) -> Error {
        let bytes = reply.payload.len();
        if reply.kind != FrameKind::Error as u8 {
            self.transcript
                .record(Direction::Down, MessageKind::Error, bytes, scenario);
            return Error::protocol(ERR_UNEXPECTED_KIND, format!("unexpected reply kind {}", reply.kind));
        }
        let (code, message) = decode_error(&reply.payload);
        if code == ERR_REFUSED {
            self.transcript
                .record(Direction::Down, MessageKind::Refusal, bytes, scenario);
            Error::Refused(message)
        } else {
            self.transcript
                .record(Direction::Down, MessageKind::Error, bytes, scenario);
            Error::protocol(code, message)
        }
    }
}
