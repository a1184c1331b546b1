//! Streaming scoring service over TCP.
//!
//! Each connection is served by its own thread and handles one message at
//! a time, so responses come back in request order. The reference model is
//! an immutable value behind a lock that is only held long enough to clone
//! the `Arc`; a frame is scored entirely against the snapshot taken when it
//! started, and a swap replaces the whole model at once.

pub mod protocol;

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use thiserror::Error;

use crate::grid::{PatchEmbeddingGrid, ReferenceModel};
use crate::mapper::UpsampleMode;
use crate::peg;
use crate::pipeline::{process_frame, FrameConfig};
use crate::viz;
use protocol::{
    read_message, write_message, ControlCommand, ControlResponse, ErrorCode, ErrorResponse,
    FrameResponse, MapFormat, ProtocolError, Request, Response, ServiceStats,
};

/// Default cap on `height * width` of a scored frame.
pub const DEFAULT_MAX_FRAME_PIXELS: usize = 1 << 25;

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub threshold: f32,
    pub heatmap_mode: UpsampleMode,
    pub map_format: MapFormat,
    /// Frames whose source image exceeds this many pixels are rejected
    /// before any map is allocated.
    pub max_frame_pixels: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            threshold: crate::mapper::DEFAULT_THRESHOLD,
            heatmap_mode: UpsampleMode::Bilinear,
            map_format: MapFormat::Float,
            max_frame_pixels: DEFAULT_MAX_FRAME_PIXELS,
        }
    }
}

#[derive(Debug, Default)]
struct Stats {
    frames: u64,
    total_latency_ms: f64,
    max_latency_ms: f64,
}

struct Shared {
    reference: RwLock<Arc<ReferenceModel>>,
    threshold_bits: AtomicU32,
    heatmap_mode: UpsampleMode,
    map_format: MapFormat,
    max_frame_pixels: usize,
    stats: Mutex<Stats>,
}

impl Shared {
    fn snapshot(&self) -> Arc<ReferenceModel> {
        self.reference.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn threshold(&self) -> f32 {
        f32::from_bits(self.threshold_bits.load(Ordering::Acquire))
    }

    fn score_frame(&self, frame_id: u64, payload: &[u8]) -> Response {
        let start = Instant::now();
        let reference = self.snapshot();
        let threshold = self.threshold();
        let fail = |message: String| {
            Response::Error(ErrorResponse {
                frame_id,
                code: ErrorCode::BadFrame,
                message,
            })
        };
        let grid = match peg::decode_grid(payload) {
            Ok(g) => g,
            Err(e) => return fail(e.to_string()),
        };
        let g = grid.geometry();
        if g.height.saturating_mul(g.width) > self.max_frame_pixels {
            return fail(format!(
                "image {}x{} exceeds the {} pixel limit",
                g.height, g.width, self.max_frame_pixels
            ));
        }
        let config = FrameConfig {
            threshold,
            heatmap_mode: self.heatmap_mode,
        };
        let (out, _) = match process_frame(&reference, &grid, &config) {
            Ok(v) => v,
            Err(e) => return fail(e.to_string()),
        };
        let map = match self.map_format {
            MapFormat::Float => out.heatmap.to_grid().map(|g| peg::encode_grid(&g)).map_err(|e| e.to_string()),
            MapFormat::Png => viz::heatmap_png(&out.heatmap).map_err(|e| e.to_string()),
        };
        let map = match map {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let mask_png = match viz::mask_png(&out.mask) {
            Ok(m) => m,
            Err(e) => return fail(e.to_string()),
        };
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        {
            let mut s = self.stats.lock().unwrap_or_else(|e| e.into_inner());
            s.frames += 1;
            s.total_latency_ms += latency_ms;
            s.max_latency_ms = s.max_latency_ms.max(latency_ms);
        }
        Response::Frame(FrameResponse {
            frame_id,
            latency_ms,
            scene: out.scene,
            severity: out.severity,
            threshold,
            map_format: self.map_format,
            map,
            mask_png,
        })
    }

    fn control(&self, cmd: ControlCommand) -> Response {
        let reject = |message: String| {
            Response::Error(ErrorResponse {
                frame_id: 0,
                code: ErrorCode::Rejected,
                message,
            })
        };
        match cmd {
            ControlCommand::SwapReference { label, payload } => {
                let model = peg::decode_grid(&payload)
                    .map_err(|e| e.to_string())
                    .and_then(|g| {
                        ReferenceModel::from_raw(&g, Some(label.clone())).map_err(|e| e.to_string())
                    });
                match model {
                    Ok(m) => {
                        *self.reference.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(m);
                        Response::Control(ControlResponse::ReferenceSwapped { label })
                    }
                    Err(e) => reject(format!("reference swap rejected: {e}")),
                }
            }
            ControlCommand::SetThreshold(tau) => {
                if !(0.0..=1.0).contains(&tau) {
                    return reject(format!("threshold {tau} outside [0, 1]"));
                }
                self.threshold_bits.store(tau.to_bits(), Ordering::Release);
                Response::Control(ControlResponse::ThresholdSet(tau))
            }
            ControlCommand::QueryStats => {
                let s = self.stats.lock().unwrap_or_else(|e| e.into_inner());
                let mean = if s.frames > 0 {
                    s.total_latency_ms / s.frames as f64
                } else {
                    0.0
                };
                Response::Control(ControlResponse::Stats(ServiceStats {
                    frames: s.frames,
                    mean_latency_ms: mean,
                    max_latency_ms: s.max_latency_ms,
                    threshold: self.threshold(),
                    reference_label: self.snapshot().label().unwrap_or("").to_owned(),
                }))
            }
        }
    }
}

fn handle_connection(shared: Arc<Shared>, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut last_frame: Option<u64> = None;
    loop {
        let (kind, payload) = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Io(e)) => return Err(e),
            Err(ProtocolError::Empty) => {
                // A zero length prefix carries no body, so framing survives.
                let (k, p) = Response::Error(ErrorResponse {
                    frame_id: 0,
                    code: ErrorCode::Malformed,
                    message: ProtocolError::Empty.to_string(),
                })
                .encode();
                write_message(&mut writer, k, &p)?;
                continue;
            }
            Err(e) => {
                // Framing is lost; report and drop the connection.
                let resp = Response::Error(ErrorResponse {
                    frame_id: 0,
                    code: ErrorCode::Malformed,
                    message: e.to_string(),
                });
                let (k, p) = resp.encode();
                let _ = write_message(&mut writer, k, &p);
                return Ok(());
            }
        };
        let response = match Request::decode(kind, &payload) {
            Err(e) => Response::Error(ErrorResponse {
                frame_id: 0,
                code: ErrorCode::Malformed,
                message: e.to_string(),
            }),
            Ok(Request::Frame { frame_id, payload }) => {
                if last_frame.is_some_and(|last| frame_id <= last) {
                    Response::Error(ErrorResponse {
                        frame_id,
                        code: ErrorCode::OutOfOrder,
                        message: format!(
                            "frame id {frame_id} does not exceed previous id {}",
                            last_frame.unwrap()
                        ),
                    })
                } else {
                    last_frame = Some(frame_id);
                    shared.score_frame(frame_id, &payload)
                }
            }
            Ok(Request::Control(cmd)) => shared.control(cmd),
        };
        let (k, p) = response.encode();
        write_message(&mut writer, k, &p)?;
    }
}

/// A bound, not yet running, service.
pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(
        addr: A,
        reference: ReferenceModel,
        config: ServiceConfig,
    ) -> io::Result<Self> {
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("threshold {} outside [0, 1]", config.threshold),
            ));
        }
        let listener = TcpListener::bind(addr)?;
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                reference: RwLock::new(Arc::new(reference)),
                threshold_bits: AtomicU32::new(config.threshold.to_bits()),
                heatmap_mode: config.heatmap_mode,
                map_format: config.map_format,
                max_frame_pixels: config.max_frame_pixels,
                stats: Mutex::new(Stats::default()),
            }),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until [`ServerHandle::shutdown`] is called.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::Acquire) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || {
                let _ = stream.set_nodelay(true);
                let _ = handle_connection(shared, stream);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let join = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// True while the accept loop thread is alive.
    pub fn is_running(&self) -> bool {
        self.join.as_ref().is_some_and(|j| !j.is_finished())
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::Release);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        match self.join.take() {
            Some(j) => j
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("connection closed by server")]
    Closed,
}

impl From<io::Error> for ClientError {
    fn from(e: io::Error) -> Self {
        ClientError::Protocol(ProtocolError::Io(e))
    }
}

/// Blocking client for the service protocol.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn send(&mut self, request: &Request) -> Result<(), ClientError> {
        let (k, p) = request.encode();
        write_message(&mut self.writer, k, &p)?;
        Ok(())
    }

    /// Sends arbitrary bytes; used to exercise malformed input handling.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        use std::io::Write;
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Response, ClientError> {
        match read_message(&mut self.reader)? {
            Some((k, p)) => Ok(Response::decode(k, &p)?),
            None => Err(ClientError::Closed),
        }
    }

    pub fn request(&mut self, request: &Request) -> Result<Response, ClientError> {
        self.send(request)?;
        self.recv()
    }

    pub fn frame(&mut self, frame_id: u64, grid: &PatchEmbeddingGrid) -> Result<Response, ClientError> {
        self.request(&Request::Frame {
            frame_id,
            payload: peg::encode_grid(grid),
        })
    }

    pub fn swap_reference(
        &mut self,
        grid: &PatchEmbeddingGrid,
        label: &str,
    ) -> Result<Response, ClientError> {
        self.request(&Request::Control(ControlCommand::SwapReference {
            label: label.to_owned(),
            payload: peg::encode_grid(grid),
        }))
    }

    pub fn set_threshold(&mut self, tau: f32) -> Result<Response, ClientError> {
        self.request(&Request::Control(ControlCommand::SetThreshold(tau)))
    }

    pub fn query_stats(&mut self) -> Result<Response, ClientError> {
        self.request(&Request::Control(ControlCommand::QueryStats))
    }

    pub fn close(self) {
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
    }
}
