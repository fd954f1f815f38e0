//! Live service: a WebSocket listener feeding operator text frames into one
//! simulation loop that owns the station.
//!
//! Each connection runs on its own thread. The loop drains a session only
//! when that connection has finished writing the previous batch, so a slow
//! client sees the newest stream frames rather than a growing backlog.

use std::collections::BTreeMap;
use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use fleetstation_core::geom::Twist2D;
use fleetstation_core::scenario::Scenario;
use fleetstation_core::station::Station;
use tungstenite::{Error as WsError, Message};

use crate::CliError;

pub const DEFAULT_PORT: u16 = 8765;

pub fn bind(host: &str, port: u16) -> Result<TcpListener, CliError> {
    let listener = TcpListener::bind((host, port)).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => CliError::PortInUse(port),
        _ => CliError::Io(e),
    })?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeSummary {
    pub ticks: u64,
    /// Robots that were under teleop when the service stopped.
    pub released: Vec<String>,
    /// Command held by each robot after shutdown.
    pub final_commands: Vec<(String, Twist2D)>,
    pub sessions_served: u64,
}

enum Event {
    Open {
        conn: u64,
        out: Sender<Vec<String>>,
        ready: Arc<AtomicBool>,
    },
    Text(u64, String),
    Close(u64),
}

struct Conn {
    session: u64,
    out: Sender<Vec<String>>,
    ready: Arc<AtomicBool>,
}

fn is_timeout(e: &WsError) -> bool {
    matches!(e, WsError::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn connection(stream: TcpStream, conn: u64, events: Sender<Event>, shutdown: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(10))).is_err() {
        return;
    }
    let (out_tx, out_rx): (Sender<Vec<String>>, Receiver<Vec<String>>) = channel();
    let ready = Arc::new(AtomicBool::new(true));
    if events
        .send(Event::Open {
            conn,
            out: out_tx,
            ready: ready.clone(),
        })
        .is_err()
    {
        return;
    }
    'conn: loop {
        if shutdown.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                if events.send(Event::Text(conn, t.to_string())).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
        loop {
            match out_rx.try_recv() {
                Ok(batch) => {
                    for text in batch {
                        if ws.send(Message::text(text)).is_err() {
                            break 'conn;
                        }
                    }
                    ready.store(true, Ordering::SeqCst);
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => break 'conn,
            }
        }
    }
    let _ = events.send(Event::Close(conn));
}

/// Run the station against `listener` until `shutdown` is set. Time advances
/// at `time_scale` times real time. On exit every teleop lease is dropped and
/// every robot is left holding a zero twist.
pub fn serve(
    listener: TcpListener,
    scenario: &Scenario,
    seed: u64,
    shutdown: Arc<AtomicBool>,
    time_scale: f64,
) -> Result<ServeSummary, CliError> {
    let mut station = Station::new(scenario, seed);
    let dt = station.config.sim.dt;
    let (ev_tx, ev_rx) = channel::<Event>();
    let mut conns: BTreeMap<u64, Conn> = BTreeMap::new();
    let mut threads: Vec<JoinHandle<()>> = Vec::new();
    let mut next_conn = 1u64;
    let mut served = 0;
    let start = Instant::now();
    let start_tick = station.tick();

    loop {
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    let (tx, flag) = (ev_tx.clone(), shutdown.clone());
                    let id = next_conn;
                    next_conn += 1;
                    threads.push(thread::spawn(move || connection(stream, id, tx, flag)));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) => return Err(CliError::Io(e)),
            }
        }
        while let Ok(ev) = ev_rx.try_recv() {
            match ev {
                Event::Open { conn, out, ready } => {
                    let session = station.open_session();
                    served += 1;
                    conns.insert(conn, Conn { session, out, ready });
                }
                Event::Text(conn, text) => {
                    if let Some(c) = conns.get(&conn) {
                        station.handle_text(c.session, &text);
                    }
                }
                Event::Close(conn) => {
                    if let Some(c) = conns.remove(&conn) {
                        station.close_session(c.session);
                    }
                }
            }
        }
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        station.step();
        for c in conns.values() {
            if c.ready.swap(false, Ordering::SeqCst) {
                let batch: Vec<String> = station.gateway.drain(c.session).iter().map(|m| m.to_json()).collect();
                if batch.is_empty() || c.out.send(batch).is_err() {
                    c.ready.store(true, Ordering::SeqCst);
                }
            }
        }
        let due = start + Duration::from_secs_f64((station.tick() - start_tick) as f64 * dt / time_scale);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    }

    let released = station.shutdown();
    drop(conns);
    for t in threads {
        let _ = t.join();
    }
    Ok(ServeSummary {
        ticks: station.tick(),
        released,
        final_commands: station.world.robots.iter().map(|r| (r.id.clone(), r.commanded)).collect(),
        sessions_served: served,
    })
}
