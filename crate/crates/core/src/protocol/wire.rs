//! Frame layout and canonical payload encodings.
//!
//! Frame: magic `AZSP`, version `u8 = 1`, kind `u8`, payload length `u32`
//! little-endian, payload. All counts are `u32` LE, all reals `f64` LE,
//! matrices are `(rows, cols)` followed by row-major values.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::numkit::{ByteReader, Matrix};
use crate::teacher::{CeFeedback, FeedbackRequest, FeedbackResponse, RiskTag, Scenario};

pub const MAGIC: &[u8; 4] = b"AZSP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

pub const ERR_MALFORMED: u16 = 1;
pub const ERR_VERSION: u16 = 2;
pub const ERR_OVERSIZED: u16 = 3;
pub const ERR_PROTOCOL: u16 = 4;
pub const ERR_REFUSED: u16 = 5;
pub const ERR_INVALID_REQUEST: u16 = 6;
pub const ERR_UNEXPECTED_KIND: u16 = 7;
pub const ERR_INTERNAL: u16 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    FeedbackRequest = 1,
    FeedbackResponse = 2,
    WeightRequest = 3,
    WeightBlob = 4,
    Error = 255,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameKind::FeedbackRequest,
            2 => FrameKind::FeedbackResponse,
            3 => FrameKind::WeightRequest,
            4 => FrameKind::WeightBlob,
            255 => FrameKind::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, payload: Vec<u8>) -> Self {
        Frame {
            kind: kind as u8,
            payload,
        }
    }

    pub fn error(code: u16, message: &str) -> Self {
        Frame::new(FrameKind::Error, encode_error(code, message))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.kind);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Why a frame could not be read.
#[derive(Debug)]
pub enum FrameError {
    /// Clean end of stream before any header byte.
    Closed,
    Io(io::Error),
    /// Framing violation; the peer should get an error frame with `code`.
    Invalid {
        code: u16,
        message: String,
    },
}

pub fn read_frame<R: Read>(reader: &mut R) -> Result<Frame, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(FrameError::Closed),
            Ok(0) => {
                return Err(FrameError::Invalid {
                    code: ERR_MALFORMED,
                    message: "truncated frame header".into(),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FrameError::Io(e)),
        }
    }
    if &header[0..4] != MAGIC {
        return Err(FrameError::Invalid {
            code: ERR_MALFORMED,
            message: "bad magic bytes".into(),
        });
    }
    if header[4] != VERSION {
        return Err(FrameError::Invalid {
            code: ERR_VERSION,
            message: format!("unsupported version {}", header[4]),
        });
    }
    let kind = header[5];
    let len = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Invalid {
            code: ERR_OVERSIZED,
            message: format!("payload of {len} bytes exceeds the {MAX_PAYLOAD} byte limit"),
        });
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Invalid {
                code: ERR_MALFORMED,
                message: "truncated payload".into(),
            }
        } else {
            FrameError::Io(e)
        }
    })?;
    Ok(Frame { kind, payload })
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &Frame) -> io::Result<()> {
    writer.write_all(&frame.to_bytes())?;
    writer.flush()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u32(out, m.rows());
    put_u32(out, m.cols());
    for &v in m.data() {
        put_f64(out, v);
    }
}

fn put_indices(out: &mut Vec<u8>, v: &[usize]) {
    put_u32(out, v.len());
    for &i in v {
        put_u32(out, i);
    }
}

fn malformed(e: Error) -> Error {
    Error::protocol(ERR_MALFORMED, e.to_string())
}

fn get_matrix(r: &mut ByteReader<'_>) -> Result<Matrix> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n <= MAX_PAYLOAD / 8)
        .ok_or_else(|| Error::invalid("matrix too large"))?;
    Matrix::from_vec(rows, cols, r.f64s(n)?)
}

fn get_indices(r: &mut ByteReader<'_>) -> Result<Vec<usize>> {
    let n = r.u32()? as usize;
    if n > MAX_PAYLOAD / 4 {
        return Err(Error::invalid("index list too long"));
    }
    (0..n).map(|_| Ok(r.u32()? as usize)).collect()
}

fn get_tag(r: &mut ByteReader<'_>) -> Result<RiskTag> {
    let code = r.u8()?;
    RiskTag::from_code(code).ok_or_else(|| Error::invalid(format!("bad risk tag {code}")))
}

fn get_scenario(r: &mut ByteReader<'_>) -> Result<Scenario> {
    let code = r.u8()?;
    Scenario::from_code(code).ok_or_else(|| Error::invalid(format!("bad scenario {code}")))
}

const FLAG_SOFTMAX: u8 = 1;
const FLAG_CE: u8 = 2;

/// scenario u8, flags u8 (bit0 softmax, bit1 ce_grad), batch, labels.
pub fn encode_request(req: &FeedbackRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * req.batch.data().len() + 4 * req.cond_labels.len());
    out.push(req.scenario.code());
    let mut flags = 0;
    if req.want_softmax {
        flags |= FLAG_SOFTMAX;
    }
    if req.want_ce_grad {
        flags |= FLAG_CE;
    }
    out.push(flags);
    put_matrix(&mut out, &req.batch);
    put_indices(&mut out, &req.cond_labels);
    out
}

pub fn decode_request(payload: &[u8]) -> Result<FeedbackRequest> {
    let mut r = ByteReader::new(payload);
    let mut inner = || -> Result<FeedbackRequest> {
        let scenario = get_scenario(&mut r)?;
        let flags = r.u8()?;
        if flags & !(FLAG_SOFTMAX | FLAG_CE) != 0 {
            return Err(Error::invalid(format!("unknown request flags {flags:#x}")));
        }
        let batch = get_matrix(&mut r)?;
        let cond_labels = get_indices(&mut r)?;
        if !r.is_empty() {
            return Err(Error::invalid("trailing bytes in request"));
        }
        Ok(FeedbackRequest {
            scenario,
            batch,
            cond_labels,
            want_softmax: flags & FLAG_SOFTMAX != 0,
            want_ce_grad: flags & FLAG_CE != 0,
        })
    };
    inner().map_err(malformed)
}

/// class space, flags u8, then each present field followed by its risk tag:
/// softmax matrix; reg_value f64 + reg_grad matrix; ce_value f64 + ce_grad
/// matrix.
pub fn encode_response(resp: &FeedbackResponse) -> Vec<u8> {
    let mut out = Vec::new();
    put_indices(&mut out, &resp.class_space);
    let mut flags = 0;
    if resp.softmax.is_some() {
        flags |= FLAG_SOFTMAX;
    }
    if resp.ce.is_some() {
        flags |= FLAG_CE;
    }
    out.push(flags);
    if let Some(p) = &resp.softmax {
        put_matrix(&mut out, p);
        out.push(FeedbackResponse::SOFTMAX_RISK.code());
    }
    put_f64(&mut out, resp.reg_value);
    put_matrix(&mut out, &resp.reg_grad);
    out.push(FeedbackResponse::REGULARIZER_RISK.code());
    if let Some(ce) = &resp.ce {
        put_f64(&mut out, ce.value);
        put_matrix(&mut out, &ce.grad);
        out.push(FeedbackResponse::CE_GRAD_RISK.code());
    }
    out
}

pub fn decode_response(payload: &[u8]) -> Result<FeedbackResponse> {
    let mut r = ByteReader::new(payload);
    let mut inner = || -> Result<FeedbackResponse> {
        let class_space = get_indices(&mut r)?;
        let flags = r.u8()?;
        let softmax = if flags & FLAG_SOFTMAX != 0 {
            let m = get_matrix(&mut r)?;
            expect_tag(get_tag(&mut r)?, FeedbackResponse::SOFTMAX_RISK)?;
            Some(m)
        } else {
            None
        };
        let reg_value = r.f64()?;
        let reg_grad = get_matrix(&mut r)?;
        expect_tag(get_tag(&mut r)?, FeedbackResponse::REGULARIZER_RISK)?;
        let ce = if flags & FLAG_CE != 0 {
            let value = r.f64()?;
            let grad = get_matrix(&mut r)?;
            expect_tag(get_tag(&mut r)?, FeedbackResponse::CE_GRAD_RISK)?;
            Some(CeFeedback { value, grad })
        } else {
            None
        };
        if !r.is_empty() {
            return Err(Error::invalid("trailing bytes in response"));
        }
        Ok(FeedbackResponse {
            class_space,
            softmax,
            reg_value,
            reg_grad,
            ce,
        })
    };
    inner().map_err(malformed)
}

fn expect_tag(found: RiskTag, expected: RiskTag) -> Result<()> {
    if found != expected {
        return Err(Error::invalid(format!(
            "field tagged {found:?}, protocol fixes {expected:?}"
        )));
    }
    Ok(())
}

pub fn encode_weight_request(scenario: Scenario) -> Vec<u8> {
    vec![scenario.code()]
}

pub fn decode_weight_request(payload: &[u8]) -> Result<Scenario> {
    let mut r = ByteReader::new(payload);
    let s = get_scenario(&mut r).map_err(malformed)?;
    if !r.is_empty() {
        return Err(Error::protocol(ERR_MALFORMED, "trailing bytes in weight request"));
    }
    Ok(s)
}

pub fn encode_error(code: u16, message: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + message.len());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(message.as_bytes());
    out
}

pub fn decode_error(payload: &[u8]) -> (u16, String) {
    let mut r = ByteReader::new(payload);
    match r.u16() {
        Ok(code) => (code, String::from_utf8_lossy(r.rest()).into_owned()),
        Err(_) => (ERR_MALFORMED, "unreadable error frame".into()),
    }
}
