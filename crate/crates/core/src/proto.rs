//! Wire format shared by every service.
//!
//! A frame is a little-endian `u32` body length followed by the body:
//!
//! ```text
//! u16 schema_version | u8 kind | u64 correlation_id | payload
//! ```
//!
//! Integers are little-endian, `f64` is the IEEE-754 bit pattern, `bool` is one byte (0/1),
//! strings are `u32` byte length + UTF-8, sequences are `u32` count + elements and options
//! are a 0/1 tag byte followed by the value. The full layout table lives in `docs/protocol.md`.

use std::io::{self, Read, Write};

use crate::env::Outcome;
use crate::error::{Error, Result};
use crate::league::Task;
use crate::model_pool::{ModelInfo, ModelRecord};
use crate::policy::{ActionDistribution, ParamBlob, PolicyFamily, PolicyShape};
use crate::rl::HyperParams;
use crate::segment::{Step, TrajectorySegment};

pub const SCHEMA_VERSION: u16 = 1;
pub const MAX_FRAME_SIZE: usize = 64 * 1024 * 1024;
/// Bytes before the payload: schema version, kind, correlation id.
pub const HEADER_LEN: usize = 2 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    TaskRequest = 0,
    TaskReply = 1,
    OutcomeReport = 2,
    SegmentPush = 3,
    ParamGet = 4,
    ParamPut = 5,
    ParamReply = 6,
    FreezeModel = 7,
    ListModels = 8,
    InferenceRequest = 9,
    InferenceReply = 10,
    LearnerTaskRequest = 11,
    LearnerTaskReply = 12,
    EndLearningPeriod = 13,
    Ack = 14,
    Error = 15,
}

impl MessageKind {
    pub fn from_u8(tag: u8) -> Result<MessageKind> {
        use MessageKind::*;
        Ok(match tag {
            0 => TaskRequest,
            1 => TaskReply,
            2 => OutcomeReport,
            3 => SegmentPush,
            4 => ParamGet,
            5 => ParamPut,
            6 => ParamReply,
            7 => FreezeModel,
            8 => ListModels,
            9 => InferenceRequest,
            10 => InferenceReply,
            11 => LearnerTaskRequest,
            12 => LearnerTaskReply,
            13 => EndLearningPeriod,
            14 => Ack,
            15 => Error,
            other => return Err(crate::Error::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    TaskRequest {
        actor_id: u32,
        group: u32,
    },
    TaskReply(Task),
    /// Outcomes in slot order; slot 0 is the learning agent.
    OutcomeReport {
        task_id: u64,
        outcomes: Vec<Outcome>,
    },
    SegmentPush(TrajectorySegment),
    ParamGet {
        model_key: String,
    },
    ParamPut(ModelRecord),
    ParamReply(ModelRecord),
    FreezeModel {
        model_key: String,
    },
    /// Empty as a request; the reply carries every record in creation order.
    ListModels(Vec<ModelInfo>),
    InferenceRequest {
        actor_id: u32,
        obs: Vec<f64>,
    },
    InferenceReply {
        model_version: u64,
        dist: ActionDistribution,
        value: f64,
    },
    LearnerTaskRequest {
        group: u32,
        rank: u32,
    },
    LearnerTaskReply(Task),
    EndLearningPeriod {
        group: u32,
    },
    Ack,
    Error {
        code: u16,
        message: String,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::TaskRequest { .. } => MessageKind::TaskRequest,
            Payload::TaskReply(_) => MessageKind::TaskReply,
            Payload::OutcomeReport { .. } => MessageKind::OutcomeReport,
            Payload::SegmentPush(_) => MessageKind::SegmentPush,
            Payload::ParamGet { .. } => MessageKind::ParamGet,
            Payload::ParamPut(_) => MessageKind::ParamPut,
            Payload::ParamReply(_) => MessageKind::ParamReply,
            Payload::FreezeModel { .. } => MessageKind::FreezeModel,
            Payload::ListModels(_) => MessageKind::ListModels,
            Payload::InferenceRequest { .. } => MessageKind::InferenceRequest,
            Payload::InferenceReply { .. } => MessageKind::InferenceReply,
            Payload::LearnerTaskRequest { .. } => MessageKind::LearnerTaskRequest,
            Payload::LearnerTaskReply(_) => MessageKind::LearnerTaskReply,
            Payload::EndLearningPeriod { .. } => MessageKind::EndLearningPeriod,
            Payload::Ack => MessageKind::Ack,
            Payload::Error { .. } => MessageKind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub correlation_id: u64,
    pub payload: Payload,
}

impl Message {
    pub fn new(correlation_id: u64, payload: Payload) -> Self {
        Message {
            correlation_id,
            payload,
        }
    }

    pub fn schema_version(&self) -> u16 {
        SCHEMA_VERSION
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

// Error codes carried by `Payload::Error`.
pub const ERR_OTHER: u16 = 0;
pub const ERR_MODEL_NOT_FOUND: u16 = 1;
pub const ERR_MODEL_FROZEN: u16 = 2;
pub const ERR_UNKNOWN_TASK: u16 = 3;
pub const ERR_DUPLICATE_REPORT: u16 = 4;
pub const ERR_NO_ACTIVE_GROUP: u16 = 5;
pub const ERR_UNKNOWN_GROUP: u16 = 6;
pub const ERR_NO_PERIOD: u16 = 7;
pub const ERR_NO_MODEL: u16 = 8;
pub const ERR_PROTOCOL: u16 = 9;
pub const ERR_SHUTDOWN: u16 = 10;
pub const ERR_INVALID: u16 = 11;

pub fn error_payload(e: &Error) -> Payload {
    let (code, message) = match e {
        Error::ModelNotFound(k) => (ERR_MODEL_NOT_FOUND, k.clone()),
        Error::ModelFrozen(k) => (ERR_MODEL_FROZEN, k.clone()),
        Error::UnknownTask(id) => (ERR_UNKNOWN_TASK, id.to_string()),
        Error::DuplicateReport(id) => (ERR_DUPLICATE_REPORT, id.to_string()),
        Error::NoActiveGroup => (ERR_NO_ACTIVE_GROUP, String::new()),
        Error::UnknownGroup(g) => (ERR_UNKNOWN_GROUP, g.to_string()),
        Error::NoPeriod(g) => (ERR_NO_PERIOD, g.to_string()),
        Error::NoModel => (ERR_NO_MODEL, String::new()),
        Error::Protocol(m) => (ERR_PROTOCOL, m.clone()),
        Error::Shutdown => (ERR_SHUTDOWN, String::new()),
        Error::InvalidArgument(m) => (ERR_INVALID, m.clone()),
        Error::Remote { code, message } => (*code, message.clone()),
        other => (ERR_OTHER, other.to_string()),
    };
    Payload::Error { code, message }
}

/// Maps a wire error back to the typed error it was produced from, where possible.
pub fn error_from_wire(code: u16, message: &str) -> Error {
    let num = || message.parse::<u64>().ok();
    match code {
        ERR_MODEL_NOT_FOUND => Error::ModelNotFound(message.to_string()),
        ERR_MODEL_FROZEN => Error::ModelFrozen(message.to_string()),
        ERR_UNKNOWN_TASK if num().is_some() => Error::UnknownTask(num().unwrap()),
        ERR_DUPLICATE_REPORT if num().is_some() => Error::DuplicateReport(num().unwrap()),
        ERR_NO_ACTIVE_GROUP => Error::NoActiveGroup,
        ERR_UNKNOWN_GROUP if num().is_some() => Error::UnknownGroup(num().unwrap() as u32),
        ERR_NO_PERIOD if num().is_some() => Error::NoPeriod(num().unwrap() as u32),
        ERR_NO_MODEL => Error::NoModel,
        ERR_PROTOCOL => Error::Protocol(message.to_string()),
        ERR_SHUTDOWN => Error::Shutdown,
        ERR_INVALID => Error::InvalidArgument(message.to_string()),
        _ => Error::Remote {
            code,
            message: message.to_string(),
        },
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::FrameTooLarge {
            size: n,
            max: MAX_FRAME_SIZE,
        })?;
        self.u32(n);
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.len(v.len())?;
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
        Ok(())
    }
    fn opt_str(&mut self, s: &Option<String>) -> Result<()> {
        match s {
            None => self.u8(0),
            Some(s) => {
                self.u8(1);
                self.str(s)?;
            }
        }
        Ok(())
    }

    fn hyper(&mut self, h: &HyperParams) {
        for v in [
            h.learning_rate,
            h.gamma,
            h.lam,
            h.clip_eps,
            h.vf_coef,
            h.ent_coef,
            h.kl_teacher_coef,
            h.rho_bar,
            h.c_bar,
            h.elo_sigma,
        ] {
            self.f64(v);
        }
        self.u32(h.batch_size);
        self.u32(h.unroll_len);
        self.u32(h.max_reuse);
        self.bool(h.normalize_advantages);
    }

    fn blob(&mut self, b: &ParamBlob) -> Result<()> {
        self.u8(match b.family {
            PolicyFamily::TabularSoftmax => 0,
            PolicyFamily::LinearSoftmax => 1,
        });
        self.len(b.shape.obs_dim)?;
        self.len(b.shape.n_actions)?;
        self.f64s(&b.values)
    }

    fn task(&mut self, t: &Task) -> Result<()> {
        self.u64(t.task_id);
        self.u32(t.learner_group);
        self.str(&t.learning_model_key)?;
        self.len(t.opponent_model_keys.len())?;
        for k in &t.opponent_model_keys {
            self.str(k)?;
        }
        self.hyper(&t.hyperparams);
        Ok(())
    }

    fn record(&mut self, r: &ModelRecord) -> Result<()> {
        self.str(&r.key)?;
        self.blob(&r.params)?;
        self.hyper(&r.hyperparams);
        self.opt_str(&r.parent_key)?;
        self.u64(r.created_at);
        self.bool(r.frozen);
        self.u64(r.version);
        Ok(())
    }

    fn segment(&mut self, s: &TrajectorySegment) -> Result<()> {
        self.u32(s.actor_id);
        self.str(&s.model_key)?;
        self.u64(s.model_version);
        self.u64(s.segment_seq);
        self.f64(s.bootstrap_value);
        self.len(s.steps.len())?;
        for st in &s.steps {
            self.f64s(&st.obs)?;
            self.u32(st.action);
            self.f64(st.reward);
            self.f64(st.behavior_logp);
            self.f64(st.value_est);
            self.u8((st.done as u8) | ((st.valid as u8) << 1));
        }
        Ok(())
    }

    fn payload(&mut self, p: &Payload) -> Result<()> {
        match p {
            Payload::TaskRequest { actor_id, group } => {
                self.u32(*actor_id);
                self.u32(*group);
            }
            Payload::TaskReply(t) | Payload::LearnerTaskReply(t) => self.task(t)?,
            Payload::OutcomeReport { task_id, outcomes } => {
                self.u64(*task_id);
                self.len(outcomes.len())?;
                for o in outcomes {
                    self.u8(o.as_u8());
                }
            }
            Payload::SegmentPush(s) => self.segment(s)?,
            Payload::ParamGet { model_key } | Payload::FreezeModel { model_key } => {
                self.str(model_key)?
            }
            Payload::ParamPut(r) | Payload::ParamReply(r) => self.record(r)?,
            Payload::ListModels(infos) => {
                self.len(infos.len())?;
                for i in infos {
                    self.str(&i.key)?;
                    self.bool(i.frozen);
                    self.u64(i.created_at);
                }
            }
            Payload::InferenceRequest { actor_id, obs } => {
                self.u32(*actor_id);
                self.f64s(obs)?;
            }
            Payload::InferenceReply {
                model_version,
                dist,
                value,
            } => {
                self.u64(*model_version);
                self.f64s(&dist.logits)?;
                self.f64s(&dist.probs)?;
                self.f64(*value);
            }
            Payload::LearnerTaskRequest { group, rank } => {
                self.u32(*group);
                self.u32(*rank);
            }
            Payload::EndLearningPeriod { group } => self.u32(*group),
            Payload::Ack => {}
            Payload::Error { code, message } => {
                self.u16(*code);
                self.str(message)?;
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "u8")?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, "u16")?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32")?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, "u64")?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Malformed(format!("invalid bool byte {v}"))),
        }
    }
    /// Sequence length, checked against the bytes that remain.
    fn len(&mut self, min_elem_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        let left = self.buf.len() - self.pos;
        if n.saturating_mul(min_elem_size) > left {
            return Err(Error::Truncated(format!(
                "sequence of {n} elements does not fit in {left} bytes"
            )));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let bytes = self.take(n, "string")?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Malformed("invalid utf-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        let bytes = self.take(n * 8, "f64 array")?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn opt_str(&mut self) -> Result<Option<String>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.str()?)),
            v => Err(Error::Malformed(format!("invalid option tag {v}"))),
        }
    }

    fn hyper(&mut self) -> Result<HyperParams> {
        Ok(HyperParams {
            learning_rate: self.f64()?,
            gamma: self.f64()?,
            lam: self.f64()?,
            clip_eps: self.f64()?,
            vf_coef: self.f64()?,
            ent_coef: self.f64()?,
            kl_teacher_coef: self.f64()?,
            rho_bar: self.f64()?,
            c_bar: self.f64()?,
            elo_sigma: self.f64()?,
            batch_size: self.u32()?,
            unroll_len: self.u32()?,
            max_reuse: self.u32()?,
            normalize_advantages: self.bool()?,
        })
    }

    fn blob(&mut self) -> Result<ParamBlob> {
        let family = match self.u8()? {
            0 => PolicyFamily::TabularSoftmax,
            1 => PolicyFamily::LinearSoftmax,
            v => return Err(Error::Malformed(format!("unknown policy family {v}"))),
        };
        let obs_dim = self.u32()? as usize;
        let n_actions = self.u32()? as usize;
        let values = self.f64s()?;
        ParamBlob::new(family, PolicyShape::new(obs_dim, n_actions), values)
            .map_err(|e| Error::Malformed(format!("parameter blob: {e}")))
    }

    fn task(&mut self) -> Result<Task> {
        let task_id = self.u64()?;
        let learner_group = self.u32()?;
        let learning_model_key = self.str()?;
        let n = self.len(4)?;
        let mut opponent_model_keys = Vec::with_capacity(n);
        for _ in 0..n {
            opponent_model_keys.push(self.str()?);
        }
        Ok(Task {
            task_id,
            learner_group,
            learning_model_key,
            opponent_model_keys,
            hyperparams: self.hyper()?,
        })
    }

    fn record(&mut self) -> Result<ModelRecord> {
        Ok(ModelRecord {
            key: self.str()?,
            params: self.blob()?,
            hyperparams: self.hyper()?,
            parent_key: self.opt_str()?,
            created_at: self.u64()?,
            frozen: self.bool()?,
            version: self.u64()?,
        })
    }

    fn segment(&mut self) -> Result<TrajectorySegment> {
        let actor_id = self.u32()?;
        let model_key = self.str()?;
        let model_version = self.u64()?;
        let segment_seq = self.u64()?;
        let bootstrap_value = self.f64()?;
        // each step is at least 4 + 4 + 3*8 + 1 bytes
        let n = self.len(33)?;
        let mut steps = Vec::with_capacity(n);
        for _ in 0..n {
            let obs = self.f64s()?;
            let action = self.u32()?;
            let reward = self.f64()?;
            let behavior_logp = self.f64()?;
            let value_est = self.f64()?;
            let flags = self.u8()?;
            if flags & !0b11 != 0 {
                return Err(Error::Malformed(format!("invalid step flags {flags:#x}")));
            }
            steps.push(Step {
                obs,
                action,
                reward,
                behavior_logp,
                value_est,
                done: flags & 1 != 0,
                valid: flags & 2 != 0,
            });
        }
        Ok(TrajectorySegment {
            actor_id,
            model_key,
            model_version,
            segment_seq,
            steps,
            bootstrap_value,
        })
    }

    fn payload(&mut self, kind: MessageKind) -> Result<Payload> {
        Ok(match kind {
            MessageKind::TaskRequest => Payload::TaskRequest {
                actor_id: self.u32()?,
                group: self.u32()?,
            },
            MessageKind::TaskReply => Payload::TaskReply(self.task()?),
            MessageKind::OutcomeReport => {
                let task_id = self.u64()?;
                let n = self.len(1)?;
                let mut outcomes = Vec::with_capacity(n);
                for _ in 0..n {
                    let v = self.u8()?;
                    outcomes.push(
                        Outcome::from_u8(v)
                            .ok_or_else(|| Error::Malformed(format!("invalid outcome {v}")))?,
                    );
                }
                Payload::OutcomeReport { task_id, outcomes }
            }
            MessageKind::SegmentPush => Payload::SegmentPush(self.segment()?),
            MessageKind::ParamGet => Payload::ParamGet {
                model_key: self.str()?,
            },
            MessageKind::ParamPut => Payload::ParamPut(self.record()?),
            MessageKind::ParamReply => Payload::ParamReply(self.record()?),
            MessageKind::FreezeModel => Payload::FreezeModel {
                model_key: self.str()?,
            },
            MessageKind::ListModels => {
                let n = self.len(13)?;
                let mut infos = Vec::with_capacity(n);
                for _ in 0..n {
                    infos.push(ModelInfo {
                        key: self.str()?,
                        frozen: self.bool()?,
                        created_at: self.u64()?,
                    });
                }
                Payload::ListModels(infos)
            }
            MessageKind::InferenceRequest => Payload::InferenceRequest {
                actor_id: self.u32()?,
                obs: self.f64s()?,
            },
            MessageKind::InferenceReply => {
                let model_version = self.u64()?;
                let logits = self.f64s()?;
                let probs = self.f64s()?;
                if logits.len() != probs.len() {
                    return Err(Error::Malformed(
                        "logits and probs differ in length".into(),
                    ));
                }
                Payload::InferenceReply {
                    model_version,
                    dist: ActionDistribution { logits, probs },
                    value: self.f64()?,
                }
            }
            MessageKind::LearnerTaskRequest => Payload::LearnerTaskRequest {
                group: self.u32()?,
                rank: self.u32()?,
            },
            MessageKind::LearnerTaskReply => Payload::LearnerTaskReply(self.task()?),
            MessageKind::EndLearningPeriod => Payload::EndLearningPeriod {
                group: self.u32()?,
            },
            MessageKind::Ack => Payload::Ack,
            MessageKind::Error => Payload::Error {
                code: self.u16()?,
                message: self.str()?,
            },
        })
    }
}

/// Encodes a message into one complete frame (length prefix included).
pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let mut w = Writer {
        buf: Vec::with_capacity(64),
    };
    w.u32(0);
    w.u16(SCHEMA_VERSION);
    w.u8(msg.kind() as u8);
    w.u64(msg.correlation_id);
    w.payload(&msg.payload)?;
    let body = w.buf.len() - 4;
    if body > MAX_FRAME_SIZE {
        return Err(Error::FrameTooLarge {
            size: body,
            max: MAX_FRAME_SIZE,
        });
    }
    w.buf[..4].copy_from_slice(&(body as u32).to_le_bytes());
    Ok(w.buf)
}

/// Decodes exactly one complete frame.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!(
            "frame needs a 4-byte length prefix, got {} bytes",
            bytes.len()
        )));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME_SIZE {
        return Err(Error::FrameTooLarge {
            size: len,
            max: MAX_FRAME_SIZE,
        });
    }
    let body = &bytes[4..];
    if body.len() < len {
        return Err(Error::Truncated(format!(
            "frame declares {len} body bytes, {} present",
            body.len()
        )));
    }
    if body.len() > len {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after frame",
            body.len() - len
        )));
    }
    decode_body(body)
}

/// Decodes a frame body (everything after the length prefix).
pub fn decode_body(body: &[u8]) -> Result<Message> {
    if body.len() > MAX_FRAME_SIZE {
        return Err(Error::FrameTooLarge {
            size: body.len(),
            max: MAX_FRAME_SIZE,
        });
    }
    let mut r = Reader { buf: body, pos: 0 };
    let version = r.u16()?;
    if version != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            expected: SCHEMA_VERSION,
            found: version,
        });
    }
    let kind = MessageKind::from_u8(r.u8()?)?;
    let correlation_id = r.u64()?;
    let payload = r.payload(kind)?;
    if r.pos != body.len() {
        return Err(Error::Malformed(format!(
            "{} unread bytes after {:?} payload",
            body.len() - r.pos,
            kind
        )));
    }
    Ok(Message {
        correlation_id,
        payload,
    })
}

/// Splits a buffer holding back-to-back frames. Returns the complete frames and the number
/// of bytes they span; a partial trailing frame is left unconsumed.
pub fn split_frames(buf: &[u8]) -> Result<(Vec<&[u8]>, usize)> {
    let mut frames = Vec::new();
    let mut pos = 0;
    while buf.len() - pos >= 4 {
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        if len > MAX_FRAME_SIZE {
            return Err(Error::FrameTooLarge {
                size: len,
                max: MAX_FRAME_SIZE,
            });
        }
        if buf.len() - pos - 4 < len {
            break;
        }
        frames.push(&buf[pos..pos + 4 + len]);
        pos += 4 + len;
    }
    Ok((frames, pos))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    let bytes = encode(msg)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Truncated("stream ended inside length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME_SIZE {
        return Err(Error::FrameTooLarge {
            size: len,
            max: MAX_FRAME_SIZE,
        });
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated("stream ended inside frame body".into())
        } else {
            e.into()
        }
    })?;
    decode_body(&body).map(Some)
}
