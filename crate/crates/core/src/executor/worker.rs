//! TCP worker: accepts executor connections and runs the simulator locally.
//!
//! Each connection carries one trial. After the hello/ready exchange the
//! executor sends one request frame; the worker spawns the simulator, relays
//! its stdout lines as frames, and closes the connection. The terminal
//! message is held until the simulator exits, and replaced with an `error`
//! frame if the exit code is nonzero. A connection that closes right after
//! the handshake is a slot probe.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::transport::{read_frame, resolve_program, write_frame, Handshake, HANDSHAKE_TIMEOUT, PROTOCOL_VERSION};
use crate::protocol::{encode_message, parse_message, parse_request, SimMessage};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOptions {
    pub listen: String,
    pub slots: usize,
    pub command: Vec<String>,
    pub env: Vec<(String, String)>,
}

type Shared<T> = Arc<Mutex<Vec<T>>>;

/// A running worker. Dropping the handle leaves the worker running.
pub struct WorkerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    streams: Shared<TcpStream>,
    children: Shared<Arc<Mutex<Child>>>,
    thread: JoinHandle<()>,
}

impl WorkerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, kills running simulators and drops open connections.
    pub fn stop(self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.children.lock().unwrap().drain(..) {
            let _ = c.lock().unwrap().kill();
        }
        for s in self.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        let _ = self.thread.join();
    }

    /// Blocks until the worker stops.
    pub fn wait(self) {
        let _ = self.thread.join();
    }
}

pub fn spawn_worker(opts: WorkerOptions) -> io::Result<WorkerHandle> {
    if opts.command.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "worker needs a simulator command"));
    }
    if opts.slots == 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "slots must be positive"));
    }
    let listener = TcpListener::bind(&opts.listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let streams: Shared<TcpStream> = Arc::default();
    let children: Shared<Arc<Mutex<Child>>> = Arc::default();

    let (stop2, streams2, children2) = (Arc::clone(&stop), Arc::clone(&streams), Arc::clone(&children));
    let opts = Arc::new(opts);
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            if let Ok(clone) = stream.try_clone() {
                let mut list = streams2.lock().unwrap();
                list.retain(|s| s.peer_addr().is_ok());
                list.push(clone);
            }
            let (opts, children) = (Arc::clone(&opts), Arc::clone(&children2));
            thread::spawn(move || {
                let _ = handle(stream, &opts, &children);
            });
        }
    });
    Ok(WorkerHandle { addr, stop, streams, children, thread })
}

/// Runs a worker in the foreground.
pub fn serve(opts: WorkerOptions) -> io::Result<()> {
    let h = spawn_worker(opts)?;
    eprintln!("simflock worker listening on {}", h.addr());
    h.wait();
    Ok(())
}

fn error_frame(stream: &mut TcpStream, detail: String) -> io::Result<()> {
    let line = encode_message(&SimMessage::Error { detail }).expect("error message encodes");
    write_frame(stream, line.trim_end())
}

fn handle(mut stream: TcpStream, opts: &WorkerOptions, children: &Shared<Arc<Mutex<Child>>>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let Some(hello) = read_frame(&mut stream)? else { return Ok(()) };
    match serde_json::from_str(&hello) {
        Ok(Handshake::Hello { proto }) if proto == PROTOCOL_VERSION => {}
        _ => return error_frame(&mut stream, format!("unsupported handshake: {hello}")),
    }
    write_frame(&mut stream, &serde_json::to_string(&Handshake::Ready { slots: opts.slots }).unwrap())?;

    stream.set_read_timeout(None)?;
    let Some(request) = read_frame(&mut stream)? else { return Ok(()) };
    if let Err(e) = parse_request(&request) {
        return error_frame(&mut stream, format!("bad request: {e}"));
    }

    let (program, args) = opts.command.split_first().expect("checked nonempty");
    let spawned = Command::new(resolve_program(program))
        .args(args)
        .envs(opts.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn();
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) => return error_frame(&mut stream, format!("worker could not start simulator: {e}")),
    };
    if let Some(mut stdin) = child.stdin.take() {
        let _ = stdin.write_all(request.as_bytes());
        let _ = stdin.write_all(b"\n");
    }
    let stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let err_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let child = Arc::new(Mutex::new(child));
    children.lock().unwrap().push(Arc::clone(&child));

    // The executor sends nothing after the request, so any read returning
    // means it went away.
    let mut watch = stream.try_clone()?;
    let watched = Arc::clone(&child);
    let done = Arc::new(AtomicBool::new(false));
    let done2 = Arc::clone(&done);
    thread::spawn(move || {
        let mut b = [0u8; 1];
        let _ = watch.read(&mut b);
        if !done2.load(Ordering::SeqCst) {
            let _ = watched.lock().unwrap().kill();
        }
    });

    let mut held: Option<String> = None;
    let mut extra: Vec<String> = Vec::new();
    for line in BufReader::new(stdout).lines() {
        let Ok(line) = line else { break };
        if held.is_some() {
            extra.push(line);
            continue;
        }
        match parse_message(&line) {
            Ok(m) if m.is_terminal() => held = Some(line),
            _ => write_frame(&mut stream, &line)?,
        }
    }

    let status = loop {
        if let Some(s) = child.lock().unwrap().try_wait()? {
            break s;
        }
        thread::sleep(Duration::from_millis(5));
    };
    done.store(true, Ordering::SeqCst);
    children.lock().unwrap().retain(|c| !Arc::ptr_eq(c, &child));
    let err_text = err_reader.join().unwrap_or_default();

    if status.success() {
        for line in held.iter().chain(&extra) {
            write_frame(&mut stream, line)?;
        }
    } else {
        let mut detail = match held.as_deref().map(parse_message) {
            Some(Ok(SimMessage::Error { detail })) => detail,
            _ => format!("simulator exited with {status}"),
        };
        let tail = err_text.trim();
        if !tail.is_empty() {
            let start = (tail.len().saturating_sub(2048)..=tail.len()).find(|&i| tail.is_char_boundary(i)).unwrap_or(0);
            detail = format!("{detail}; stderr: {}", tail[start..].trim_start());
        }
        error_frame(&mut stream, detail)?;
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}
