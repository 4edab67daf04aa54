//! Network drivers: the hotel server and the blocking participant client.
//!
//! The server accepts plain TCP connections carrying newline-framed envelopes
//! and websocket connections carrying one envelope per text message, on the
//! same port. One task owns the [`Hotel`]; connection tasks only move frames
//! between their socket and that task's inbound queue.

mod client;

use std::collections::HashMap;
use std::future::Future;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::clock::{wall_millis, Millis};
use crate::hotel::{ConnId, Hotel, Inbound, Outbound};

pub use client::{run_client, ClientError, ClientOptions};

/// Longest accepted frame, in bytes.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

/// Where the hotel loop takes its time from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerClock {
    /// Wall-clock milliseconds since the UNIX epoch.
    Real,
    /// A timeline starting at zero that runs at wall speed and jumps to the
    /// next hotel deadline whenever no frame arrived for `quiet`.
    Virtual { quiet: Duration },
}

enum Cmd {
    Frame(String),
    Close,
}

enum LoopMsg {
    Open(ConnId, mpsc::UnboundedSender<Cmd>),
    In(Inbound),
}

/// Serves `hotel` on `listener` until `shutdown` resolves, then hands the
/// hotel back.
pub async fn serve(
    listener: TcpListener,
    mut hotel: Hotel,
    clock: ServerClock,
    shutdown: impl Future<Output = ()>,
) -> std::io::Result<Hotel> {
    let (tx, mut rx) = mpsc::unbounded_channel::<LoopMsg>();
    let accept_tx = tx.clone();
    let acceptor = tokio::spawn(async move {
        let mut next: ConnId = 1;
        loop {
            match listener.accept().await {
                Ok((stream, peer)) => {
                    let conn = next;
                    next += 1;
                    debug!(conn, %peer, "accepted");
                    tokio::spawn(connection(stream, conn, accept_tx.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    drop(tx);
    tokio::pin!(shutdown);

    let mut writers: HashMap<ConnId, mpsc::UnboundedSender<Cmd>> = HashMap::new();
    let started = Instant::now();
    let mut skipped: Millis = 0;
    let now = |skipped: Millis| match clock {
        ServerClock::Real => wall_millis(),
        ServerClock::Virtual { .. } => started.elapsed().as_millis() as Millis + skipped,
    };
    loop {
        let wait = hotel.next_deadline().map(|d| {
            let due = Duration::from_millis(d.saturating_sub(now(skipped)));
            match clock {
                ServerClock::Real => due,
                ServerClock::Virtual { quiet } => due.min(quiet),
            }
        });
        let out = tokio::select! {
            msg = rx.recv() => match msg {
                None => break,
                Some(LoopMsg::Open(conn, w)) => {
                    writers.insert(conn, w);
                    hotel.handle(now(skipped), Inbound::Connected(conn))
                }
                Some(LoopMsg::In(input)) => {
                    if let Inbound::Closed(conn) = input {
                        writers.remove(&conn);
                    }
                    hotel.handle(now(skipped), input)
                }
            },
            _ = tokio::time::sleep(wait.unwrap_or_default()), if wait.is_some() => {
                if let (ServerClock::Virtual { .. }, Some(d)) = (clock, hotel.next_deadline()) {
                    skipped += d.saturating_sub(now(skipped));
                }
                hotel.handle(now(skipped), Inbound::Tick)
            }
            _ = &mut shutdown => break,
        };
        for o in out {
            match o {
                Outbound::Send { conn, frame } => {
                    if let Some(w) = writers.get(&conn) {
                        let _ = w.send(Cmd::Frame(frame));
                    }
                }
                Outbound::Close { conn } => {
                    if let Some(w) = writers.remove(&conn) {
                        let _ = w.send(Cmd::Close);
                    }
                }
            }
        }
    }
    acceptor.abort();
    info!(rounds = hotel.completed_rounds().len(), "hotel loop stopped");
    Ok(hotel)
}

async fn connection(stream: TcpStream, conn: ConnId, tx: mpsc::UnboundedSender<LoopMsg>) {
    let mut head = [0u8; 4];
    let is_ws = matches!(stream.peek(&mut head).await, Ok(4) if &head == b"GET ");
    let (wtx, wrx) = mpsc::unbounded_channel();
    if tx.send(LoopMsg::Open(conn, wtx)).is_err() {
        return;
    }
    let result = if is_ws {
        websocket(stream, conn, &tx, wrx).await
    } else {
        lines(stream, conn, &tx, wrx).await
    };
    if let Err(e) = result {
        debug!(conn, "connection ended: {e}");
    }
    let _ = tx.send(LoopMsg::In(Inbound::Closed(conn)));
}

async fn lines(
    stream: TcpStream,
    conn: ConnId,
    tx: &mpsc::UnboundedSender<LoopMsg>,
    mut wrx: mpsc::UnboundedReceiver<Cmd>,
) -> std::io::Result<()> {
    let (read, mut write) = stream.into_split();
    let writer = tokio::spawn(async move {
        while let Some(cmd) = wrx.recv().await {
            match cmd {
                Cmd::Frame(mut f) => {
                    f.push('\n');
                    if write.write_all(f.as_bytes()).await.is_err() {
                        break;
                    }
                }
                Cmd::Close => break,
            }
        }
        let _ = write.shutdown().await;
    });
    let mut reader = BufReader::new(read);
    let mut buf = Vec::new();
    let result = loop {
        buf.clear();
        let n = match (&mut reader).take(MAX_FRAME_BYTES as u64).read_until(b'\n', &mut buf).await {
            Ok(n) => n,
            Err(e) => break Err(e),
        };
        if n == 0 || writer.is_finished() {
            break Ok(());
        }
        let line = String::from_utf8_lossy(&buf).trim_end().to_owned();
        if line.is_empty() {
            continue;
        }
        if tx.send(LoopMsg::In(Inbound::Frame(conn, line))).is_err() {
            break Ok(());
        }
    };
    writer.abort();
    result
}

async fn websocket(
    stream: TcpStream,
    conn: ConnId,
    tx: &mpsc::UnboundedSender<LoopMsg>,
    mut wrx: mpsc::UnboundedReceiver<Cmd>,
) -> std::io::Result<()> {
    let ws = tokio_tungstenite::accept_async(stream)
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let (mut sink, mut source) = ws.split();
    let writer = tokio::spawn(async move {
        while let Some(cmd) = wrx.recv().await {
            match cmd {
                Cmd::Frame(f) => {
                    if sink.send(Message::Text(f.into())).await.is_err() {
                        break;
                    }
                }
                Cmd::Close => break,
            }
        }
        let _ = sink.close().await;
    });
    while let Some(msg) = source.next().await {
        let text = match msg {
            Ok(Message::Text(t)) => t.to_string(),
            Ok(Message::Binary(b)) => String::from_utf8_lossy(&b).into_owned(),
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        if writer.is_finished() {
            break;
        }
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line.len() > MAX_FRAME_BYTES || tx.send(LoopMsg::In(Inbound::Frame(conn, line.to_owned()))).is_err() {
                break;
            }
        }
    }
    writer.abort();
    Ok(())
}
