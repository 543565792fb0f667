//! TCP transport: one framed request/reply per call, thread per connection on the server,
//! lazily reconnecting clients that implement the service traits.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::api::{InferenceApi, InferenceResult, LeagueApi, ModelPoolApi, SegmentSink};
use crate::env::Outcome;
use crate::error::{Error, Result};
use crate::league::Task;
use crate::model_pool::{ModelInfo, ModelRecord};
use crate::proto::{self, error_from_wire, error_payload, Message, Payload};
use crate::segment::TrajectorySegment;

const MAX_BACKOFF: Duration = Duration::from_secs(2);

/// Retries `f` on transient errors with exponential backoff capped at 2s.
pub fn with_backoff<T>(attempts: u32, base: Duration, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut delay = base;
    let mut tries = 0;
    loop {
        match f() {
            Err(e) if e.is_transient() && tries + 1 < attempts => {
                log::debug!("transient error, retrying in {delay:?}: {e}");
                thread::sleep(delay);
                delay = (delay * 2).min(MAX_BACKOFF);
                tries += 1;
            }
            r => return r,
        }
    }
}

/// Server-side dispatch. Any subset of services can be mounted on one endpoint.
#[derive(Clone, Default)]
pub struct Services {
    pub pool: Option<Arc<dyn ModelPoolApi>>,
    pub league: Option<Arc<dyn LeagueApi>>,
    pub sink: Option<Arc<dyn SegmentSink>>,
    pub infer: Option<Arc<dyn InferenceApi>>,
}

fn missing(what: &str) -> Error {
    Error::Protocol(format!("endpoint does not serve {what}"))
}

impl Services {
    pub fn handle(&self, req: Payload) -> Payload {
        match self.dispatch(req) {
            Ok(p) => p,
            Err(e) => error_payload(&e),
        }
    }

    fn pool(&self) -> Result<&Arc<dyn ModelPoolApi>> {
        self.pool.as_ref().ok_or_else(|| missing("the model pool"))
    }

    fn league(&self) -> Result<&Arc<dyn LeagueApi>> {
        self.league.as_ref().ok_or_else(|| missing("the league"))
    }

    fn dispatch(&self, req: Payload) -> Result<Payload> {
        Ok(match req {
            Payload::TaskRequest { actor_id, group } => {
                Payload::TaskReply(self.league()?.request_actor_task(actor_id, group)?)
            }
            Payload::OutcomeReport { task_id, outcomes } => {
                self.league()?.report_outcome(task_id, &outcomes)?;
                Payload::Ack
            }
            Payload::LearnerTaskRequest { group, rank } => {
                Payload::LearnerTaskReply(self.league()?.request_learner_task(group, rank)?)
            }
            Payload::EndLearningPeriod { group } => {
                Payload::LearnerTaskReply(self.league()?.end_learning_period(group)?)
            }
            Payload::SegmentPush(seg) => {
                self.sink.as_ref().ok_or_else(|| missing("segment ingest"))?.push_segment(seg)?;
                Payload::Ack
            }
            Payload::ParamGet { model_key } => {
                Payload::ParamReply((*self.pool()?.get_model(&model_key)?).clone())
            }
            Payload::ParamPut(rec) => {
                self.pool()?.put_model(rec)?;
                Payload::Ack
            }
            Payload::FreezeModel { model_key } => {
                self.pool()?.freeze_model(&model_key)?;
                Payload::Ack
            }
            Payload::ListModels(_) => Payload::ListModels(self.pool()?.list_models()?),
            Payload::InferenceRequest { actor_id, obs } => {
                let r = self.infer.as_ref().ok_or_else(|| missing("inference"))?.infer(actor_id, &obs)?;
                Payload::InferenceReply {
                    model_version: r.model_version,
                    dist: r.dist,
                    value: r.value,
                }
            }
            other => return Err(Error::Protocol(format!("unexpected request {:?}", other.kind()))),
        })
    }
}

struct ServerShared {
    stop: AtomicBool,
    conns: Mutex<Vec<TcpStream>>,
}

pub struct Server {
    addr: SocketAddr,
    shared: Arc<ServerShared>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds and starts serving. Use port 0 for an ephemeral port.
    pub fn bind(addr: impl ToSocketAddrs, services: Services) -> Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shared = Arc::new(ServerShared {
            stop: AtomicBool::new(false),
            conns: Mutex::new(Vec::new()),
        });
        let sh = shared.clone();
        let accept = thread::Builder::new()
            .name(format!("rpc-accept-{}", local.port()))
            .spawn(move || accept_loop(listener, sh, services))?;
        Ok(Server {
            addr: local,
            shared,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes every open connection.
    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for c in self.shared.conns.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, sh: Arc<ServerShared>, services: Services) {
    while !sh.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(c) = stream.try_clone() {
                    let mut conns = sh.conns.lock().unwrap();
                    if sh.stop.load(Ordering::SeqCst) {
                        let _ = stream.shutdown(Shutdown::Both);
                        return;
                    }
                    conns.push(c);
                }
                let svc = services.clone();
                thread::spawn(move || serve_conn(stream, svc));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn serve_conn(stream: TcpStream, services: Services) {
    let Ok(wstream) = stream.try_clone() else { return };
    let mut r = BufReader::new(stream);
    let mut w = BufWriter::new(wstream);
    loop {
        let msg = match proto::read_message(&mut r) {
            Ok(Some(m)) => m,
            Ok(None) => return,
            Err(e) => {
                // Reply once to malformed frames, then drop the connection.
                if !e.is_transient() {
                    let _ = proto::write_message(&mut w, &Message::new(0, error_payload(&e)));
                }
                return;
            }
        };
        let reply = Message::new(msg.correlation_id, services.handle(msg.payload));
        if proto::write_message(&mut w, &reply).is_err() {
            return;
        }
    }
}

/// Client for any endpoint. Connects lazily; a broken connection is dropped and re-dialed
/// on the next attempt.
pub struct RpcClient {
    addr: String,
    conn: Mutex<Option<(BufReader<TcpStream>, BufWriter<TcpStream>)>>,
    next_id: AtomicU64,
    attempts: u32,
    base_delay: Duration,
    timeout: Option<Duration>,
}

impl RpcClient {
    pub fn new(addr: &str) -> RpcClient {
        RpcClient {
            addr: addr.to_string(),
            conn: Mutex::new(None),
            next_id: AtomicU64::new(1),
            attempts: 8,
            base_delay: Duration::from_millis(25),
            timeout: None,
        }
    }

    /// Number of attempts per call (including the first) and the initial backoff delay.
    pub fn with_retry(mut self, attempts: u32, base_delay: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.base_delay = base_delay;
        self
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = Some(t);
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn call_once(&self, payload: &Payload) -> Result<Payload> {
        let mut guard = self.conn.lock().unwrap();
        if guard.is_none() {
            let s = TcpStream::connect(&self.addr)?;
            s.set_nodelay(true)?;
            s.set_read_timeout(self.timeout)?;
            let w = s.try_clone()?;
            *guard = Some((BufReader::new(s), BufWriter::new(w)));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (r, w) = guard.as_mut().unwrap();
        let res = (|| {
            proto::write_message(w, &Message::new(id, payload.clone()))?;
            match proto::read_message(r)? {
                Some(m) if m.correlation_id == id => Ok(m.payload),
                Some(m) => Err(Error::Protocol(format!(
                    "reply correlation id {} does not match request {id}",
                    m.correlation_id
                ))),
                None => Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::ConnectionAborted,
                    "connection closed by server",
                ))),
            }
        })();
        if res.is_err() {
            *guard = None;
        }
        res
    }

    /// Sends a request and returns the reply payload; remote errors come back typed.
    pub fn call(&self, payload: Payload) -> Result<Payload> {
        let reply = with_backoff(self.attempts, self.base_delay, || self.call_once(&payload))?;
        match reply {
            Payload::Error { code, message } => Err(error_from_wire(code, &message)),
            p => Ok(p),
        }
    }

    fn expect_ack(&self, payload: Payload) -> Result<()> {
        match self.call(payload)? {
            Payload::Ack => Ok(()),
            p => Err(unexpected(&p)),
        }
    }

    fn expect_task(&self, payload: Payload) -> Result<Task> {
        match self.call(payload)? {
            Payload::TaskReply(t) | Payload::LearnerTaskReply(t) => Ok(t),
            p => Err(unexpected(&p)),
        }
    }
}

fn unexpected(p: &Payload) -> Error {
    Error::Protocol(format!("unexpected reply {:?}", p.kind()))
}

impl ModelPoolApi for RpcClient {
    fn put_model(&self, record: ModelRecord) -> Result<()> {
        self.expect_ack(Payload::ParamPut(record))
    }

    fn get_model(&self, key: &str) -> Result<Arc<ModelRecord>> {
        match self.call(Payload::ParamGet {
            model_key: key.to_string(),
        })? {
            Payload::ParamReply(r) => Ok(Arc::new(r)),
            p => Err(unexpected(&p)),
        }
    }

    fn freeze_model(&self, key: &str) -> Result<()> {
        self.expect_ack(Payload::FreezeModel {
            model_key: key.to_string(),
        })
    }

    fn list_models(&self) -> Result<Vec<ModelInfo>> {
        match self.call(Payload::ListModels(Vec::new()))? {
            Payload::ListModels(v) => Ok(v),
            p => Err(unexpected(&p)),
        }
    }
}

impl LeagueApi for RpcClient {
    fn request_actor_task(&self, actor_id: u32, group: u32) -> Result<Task> {
        self.expect_task(Payload::TaskRequest { actor_id, group })
    }

    fn report_outcome(&self, task_id: u64, outcomes: &[Outcome]) -> Result<()> {
        self.expect_ack(Payload::OutcomeReport {
            task_id,
            outcomes: outcomes.to_vec(),
        })
    }

    fn request_learner_task(&self, group: u32, rank: u32) -> Result<Task> {
        self.expect_task(Payload::LearnerTaskRequest { group, rank })
    }

    fn end_learning_period(&self, group: u32) -> Result<Task> {
        self.expect_task(Payload::EndLearningPeriod { group })
    }
}

impl SegmentSink for RpcClient {
    fn push_segment(&self, segment: TrajectorySegment) -> Result<()> {
        self.expect_ack(Payload::SegmentPush(segment))
    }
}

impl InferenceApi for RpcClient {
    fn infer(&self, actor_id: u32, obs: &[f64]) -> Result<InferenceResult> {
        match self.call(Payload::InferenceRequest {
            actor_id,
            obs: obs.to_vec(),
        })? {
            Payload::InferenceReply {
                model_version,
                dist,
                value,
            } => Ok(InferenceResult {
                dist,
                model_version,
                value,
            }),
            p => Err(unexpected(&p)),
        }
    }
}
