//! Teleoperation endpoint: one WebSocket operator drives the live bilateral pair.
//!
//! The 1 kHz simulation owns its thread. Sessions talk to it over bounded
//! channels; state frames that a slow client cannot take are dropped, and
//! recordings are assembled on a separate writer thread.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TryRecvError, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use bilateral_il::dataset::{operator_torque, resample_trial, LetterScript, Trial, TrialMeta, TrialRow};
use bilateral_il::sim::BilateralSim;
use bilateral_il::types::ROBOT_CHANNELS;
use bilateral_il::{Config, Error, Result, RobotSample, Vec3};
use serde::Deserialize;
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use crate::ServeArgs;

/// Ticks between state frames (50 Hz).
const STATE_EVERY: u64 = 20;
const STATE_QUEUE: usize = 8;

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMsg {
    MasterTarget { x: f64, y: f64, z: f64, pen: bool },
    Record { action: RecordAction, height_mm: Option<f64> },
    Ping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RecordAction {
    Start,
    Stop,
}

#[derive(Debug, Clone)]
struct StateFrame {
    t_ms: u64,
    master: RobotSample,
    slave: RobotSample,
    pen_xy: (f64, f64),
    contact: bool,
}

fn sample_json(s: &RobotSample) -> Value {
    let v = s.to_array();
    let map: BTreeMap<&str, f64> = ROBOT_CHANNELS.iter().copied().zip(v).collect();
    json!(map)
}

impl StateFrame {
    fn to_json(&self) -> String {
        json!({
            "type": "state",
            "t_ms": self.t_ms,
            "master": sample_json(&self.master),
            "slave": sample_json(&self.slave),
            "pen_xy": [self.pen_xy.0, self.pen_xy.1],
            "contact": self.contact,
        })
        .to_string()
    }
}

fn error_frame(msg: &str) -> String {
    json!({ "type": "error", "msg": msg }).to_string()
}

enum ControlMsg {
    Attach(SyncSender<StateFrame>),
    Detach,
    Target { point: Vec3, pen: bool },
    RecordStart { height_mm: f64, reply: Sender<Result<()>> },
    RecordStop { reply: Sender<Result<(PathBuf, usize)>> },
}

enum WriterMsg {
    Start { height_mm: f64 },
    Row(TrialRow),
    Stop { reply: Sender<Result<(PathBuf, usize)>> },
}

/// Assembles recordings and writes them as standard trial files.
fn writer_loop(rx: Receiver<WriterMsg>, dir: PathBuf, period_ms: f64, base_ms: f64) {
    let mut rows: Vec<TrialRow> = Vec::new();
    let mut height = 0.0;
    let mut count = 0usize;
    while let Ok(msg) = rx.recv() {
        match msg {
            WriterMsg::Start { height_mm } => {
                rows.clear();
                height = height_mm;
            }
            WriterMsg::Row(r) => rows.push(r),
            WriterMsg::Stop { reply } => {
                count += 1;
                let id = format!("teleop_{count:03}");
                let result = save_recording(&dir, &id, height, period_ms, base_ms, std::mem::take(&mut rows));
                let _ = reply.send(result);
            }
        }
    }
}

fn save_recording(dir: &Path, id: &str, height_mm: f64, period_ms: f64, base_ms: f64, rows: Vec<TrialRow>) -> Result<(PathBuf, usize)> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("recording is empty".into()));
    }
    let n = rows.len();
    let meta = TrialMeta {
        trial_id: id.into(),
        height_mm,
        seed: 0,
        period_ms,
        duration_s: n as f64 * period_ms * 1e-3,
    };
    let raw = Trial::new(meta, rows)?;
    raw.save(&dir.join("raw").join(format!("{id}.csv")))?;
    let fast = resample_trial(&raw, base_ms)?;
    let path = dir.join(format!("{id}.csv"));
    fast.save(&path)?;
    Ok((path, fast.len()))
}

struct Shared {
    t_ms: AtomicU64,
    shutdown: AtomicBool,
    busy: AtomicBool,
    dropped: AtomicU64,
}

fn control_loop(cfg: Config, mut sim: BilateralSim, mut target: Vec3, speed: f64, rx: Receiver<ControlMsg>, writer: Sender<WriterMsg>, shared: Arc<Shared>) -> Result<()> {
    let dt = Duration::from_secs_f64(cfg.sim.control_dt() / speed);
    let start = Instant::now();
    let mut sink: Option<SyncSender<StateFrame>> = None;
    let mut recording = false;
    let mut tick: u64 = 0;
    while !shared.shutdown.load(Ordering::Relaxed) {
        loop {
            match rx.try_recv() {
                Ok(ControlMsg::Attach(tx)) => sink = Some(tx),
                Ok(ControlMsg::Detach) => sink = None,
                Ok(ControlMsg::Target { point, pen }) => {
                    let surface = sim.contact.height_m();
                    target = point;
                    target.z = if pen {
                        target.z.min(surface - cfg.operator.press_mm * 1e-3)
                    } else {
                        target.z.max(surface + cfg.operator.hover_mm * 1e-3)
                    };
                }
                Ok(ControlMsg::RecordStart { height_mm, reply }) => {
                    let r = if recording {
                        Err(Error::InvalidArgument("already recording".into()))
                    } else {
                        sim.set_height(height_mm).map(|_| {
                            recording = true;
                            let _ = writer.send(WriterMsg::Start { height_mm });
                        })
                    };
                    let _ = reply.send(r);
                }
                Ok(ControlMsg::RecordStop { reply }) => {
                    if recording {
                        recording = false;
                        let _ = writer.send(WriterMsg::Stop { reply });
                    } else {
                        let _ = reply.send(Err(Error::InvalidArgument("not recording".into())));
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        let tau = operator_torque(target, &sim.master.state, &cfg.master, &cfg.operator);
        let t = sim.step(tau)?;
        shared.t_ms.store(t.t_ms, Ordering::Relaxed);
        if recording {
            let mut row = [0.0; 18];
            row[..9].copy_from_slice(&t.master.to_array());
            row[9..].copy_from_slice(&t.slave.to_array());
            let _ = writer.send(WriterMsg::Row(row));
        }
        if tick.is_multiple_of(STATE_EVERY) {
            if let Some(tx) = &sink {
                let uv = cfg.paper.to_paper(t.slave_tip);
                let frame = StateFrame {
                    t_ms: t.t_ms,
                    master: t.master,
                    slave: t.slave,
                    pen_xy: (uv.0 * 1e-3, uv.1 * 1e-3),
                    contact: t.contact,
                };
                match tx.try_send(frame) {
                    Ok(()) => {}
                    Err(TrySendError::Full(_)) => {
                        shared.dropped.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(TrySendError::Disconnected(_)) => sink = None,
                }
            }
        }
        tick += 1;
        let due = start + dt * tick as u32;
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
    Ok(())
}

/// Home target: hovering over the paper centre.
fn home(cfg: &Config, height_mm: f64) -> Vec3 {
    let half = cfg.paper.extent_mm / 2.0;
    cfg.paper.to_base(half, half, (height_mm + cfg.operator.hover_mm) * 1e-3)
}

fn handle_text(text: &str, cfg: &Config, ctl: &SyncSender<ControlMsg>, shared: &Shared) -> std::result::Result<Option<String>, String> {
    let msg: ClientMsg = serde_json::from_str(text).map_err(|e| format!("bad frame: {e}"))?;
    let send = |m: ControlMsg| ctl.send(m).map_err(|_| "simulation stopped".to_string());
    match msg {
        ClientMsg::Ping => Ok(Some(json!({ "type": "pong", "t_ms": shared.t_ms.load(Ordering::Relaxed) }).to_string())),
        ClientMsg::MasterTarget { x, y, z, pen } => {
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err("master_target coordinates must be finite".into());
            }
            let side = cfg.paper.extent_mm;
            let u = (x * 1e3).clamp(0.0, side);
            let v = (y * 1e3).clamp(0.0, side);
            send(ControlMsg::Target { point: cfg.paper.to_base(u, v, z.clamp(0.0, 0.25)), pen })?;
            Ok(None)
        }
        ClientMsg::Record { action: RecordAction::Start, height_mm } => {
            let h = height_mm.ok_or("record start needs height_mm")?;
            let (tx, rx) = mpsc::channel();
            send(ControlMsg::RecordStart { height_mm: h, reply: tx })?;
            Ok(Some(match rx.recv().map_err(|_| "simulation stopped".to_string())? {
                Ok(()) => json!({ "type": "record", "action": "start", "height_mm": h }).to_string(),
                Err(e) => error_frame(&e.to_string()),
            }))
        }
        ClientMsg::Record { action: RecordAction::Stop, .. } => {
            let (tx, rx) = mpsc::channel();
            send(ControlMsg::RecordStop { reply: tx })?;
            Ok(Some(match rx.recv().map_err(|_| "recorder stopped".to_string())? {
                Ok((path, n)) => json!({ "type": "record", "action": "stop", "path": path, "samples": n }).to_string(),
                Err(e) => error_frame(&e.to_string()),
            }))
        }
    }
}

fn session(mut ws: WebSocket<TcpStream>, cfg: &Config, ctl: &SyncSender<ControlMsg>, shared: &Shared) {
    let (tx, rx) = mpsc::sync_channel(STATE_QUEUE);
    if ctl.send(ControlMsg::Attach(tx)).is_err() {
        return;
    }
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(2)));
    'outer: while !shared.shutdown.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(t)) => match handle_text(t.as_str(), cfg, ctl, shared) {
                Ok(Some(reply)) => {
                    if ws.send(Message::text(reply)).is_err() {
                        break;
                    }
                }
                Ok(None) => {}
                Err(msg) => {
                    let _ = ws.send(Message::text(error_frame(&msg)));
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    break;
                }
            },
            Ok(Message::Binary(_)) => {
                let _ = ws.send(Message::text(error_frame("binary frames are not part of the protocol")));
                let _ = ws.close(None);
                let _ = ws.flush();
                break;
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match rx.try_recv() {
                Ok(frame) => {
                    if ws.send(Message::text(frame.to_json())).is_err() {
                        break 'outer;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => break 'outer,
            }
        }
    }
    let _ = ctl.send(ControlMsg::Detach);
}

fn reject_busy(stream: TcpStream) {
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let _ = ws.send(Message::text(error_frame("busy")));
        let _ = ws.close(None);
        let _ = ws.flush();
        let _ = ws.read();
    }
}

pub fn run(cfg: &Config, a: &ServeArgs) -> Result<()> {
    if !(a.speed > 0.0 && a.speed.is_finite()) {
        return Err(Error::Config("--speed must be positive".into()));
    }
    let height = a.height.unwrap_or(cfg.contact.height_mm);
    let script = LetterScript::nominal(height, &cfg.operator, &cfg.timing);
    let theta0 = script.start_pose(&cfg.paper, &cfg.master)?;
    let sim = BilateralSim::new(cfg, height, theta0, cfg.dataset.seed)?;
    let listener = TcpListener::bind((a.host.as_str(), a.port))?;
    let addr = listener.local_addr()?;
    println!("listening on ws://{addr}");

    let shared = Arc::new(Shared {
        t_ms: AtomicU64::new(0),
        shutdown: AtomicBool::new(false),
        busy: AtomicBool::new(false),
        dropped: AtomicU64::new(0),
    });
    let (wtx, wrx) = mpsc::channel();
    let rec_dir = cfg.paths.data_dir.join("teleop");
    let (period, base) = (cfg.sim.control_period_ms, cfg.rates.base_ms as f64);
    thread::spawn(move || writer_loop(wrx, rec_dir, period, base));
    let (ctx, crx) = mpsc::sync_channel(256);
    let control = {
        let (cfg, shared) = (cfg.clone(), shared.clone());
        let (target, speed) = (home(&cfg, height), a.speed);
        thread::spawn(move || {
            let r = control_loop(cfg, sim, target, speed, crx, wtx, shared.clone());
            shared.shutdown.store(true, Ordering::Relaxed);
            r
        })
    };

    listener.set_nonblocking(true)?;
    while !shared.shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                if shared.busy.swap(true, Ordering::AcqRel) {
                    thread::spawn(move || reject_busy(stream));
                    continue;
                }
                let (cfg, ctl, shared) = (cfg.clone(), ctx.clone(), shared.clone());
                thread::spawn(move || {
                    if let Ok(ws) = tungstenite::accept(stream) {
                        session(ws, &cfg, &ctl, &shared);
                    }
                    shared.busy.store(false, Ordering::Release);
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e.into()),
        }
    }
    control.join().unwrap_or(Ok(()))
}
