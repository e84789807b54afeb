//! Connections to a simulator: a local child process or a remote worker.
//!
//! Both present the simulator's output as a stream of lines on a channel that
//! disconnects at end of stream, so the attempt loop can poll it with a
//! deadline and a cancel flag.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME: usize = 16 << 20;
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
const STDERR_TAIL: usize = 4096;

/// Writes one length-prefixed frame: 4-byte big-endian length, then the bytes.
pub fn write_frame(w: &mut impl Write, payload: &str) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload.as_bytes())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<String>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Handshake {
    #[serde(rename = "hello")]
    Hello { proto: u32 },
    #[serde(rename = "ready")]
    Ready { slots: usize },
}

/// Resolves a bare program name: PATH first, then next to the running
/// executable (and its parent, for test binaries under `deps/`).
pub fn resolve_program(program: &str) -> PathBuf {
    if program.contains('/') {
        return PathBuf::from(program);
    }
    if let Some(paths) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&paths) {
            let p = dir.join(program);
            if p.is_file() {
                return p;
            }
        }
    }
    if let Ok(exe) = std::env::current_exe() {
        for dir in exe.ancestors().skip(1).take(2) {
            let p = dir.join(program);
            if p.is_file() {
                return p;
            }
        }
    }
    PathBuf::from(program)
}

pub(crate) type LineRx = Receiver<io::Result<String>>;

/// An open connection to one simulator run.
pub(crate) trait SimConnection {
    fn lines(&self) -> &LineRx;
    /// Kills the run. Safe to call more than once.
    fn abort(&mut self);
    /// Called after end of stream; checks how the simulator ended.
    fn finish(&mut self, deadline: Instant) -> Result<(), String>;
    fn stderr_tail(&self) -> String;
}

pub(crate) struct LocalConnection {
    child: Child,
    rx: LineRx,
    stderr: Arc<Mutex<String>>,
}

impl LocalConnection {
    pub fn spawn(command: &[String], env: &[(String, String)], request_line: &str) -> io::Result<Self> {
        let (program, args) = command.split_first().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
        let mut child = Command::new(resolve_program(program))
            .args(args)
            .envs(env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;

        // A simulator that exits without reading its request is caught at end of stream.
        if let Some(mut stdin) = child.stdin.take() {
            let _ = stdin.write_all(request_line.as_bytes());
        }

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });

        let stderr = Arc::new(Mutex::new(String::new()));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 1024];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().unwrap();
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
                if s.len() > 2 * STDERR_TAIL {
                    let cut = s.len() - STDERR_TAIL;
                    let cut = (cut..s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(s.len());
                    s.drain(..cut);
                }
            }
        });

        Ok(LocalConnection { child, rx, stderr })
    }
}

fn describe(status: ExitStatus) -> String {
    match status.code() {
        Some(c) => format!("exit code {c}"),
        None => format!("{status}"),
    }
}

impl SimConnection for LocalConnection {
    fn lines(&self) -> &LineRx {
        &self.rx
    }

    fn abort(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn finish(&mut self, deadline: Instant) -> Result<(), String> {
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) if status.success() => return Ok(()),
                Ok(Some(status)) => return Err(describe(status)),
                Ok(None) if Instant::now() >= deadline => {
                    self.abort();
                    return Err("simulator did not exit before the timeout".into());
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(e.to_string()),
            }
        }
    }

    fn stderr_tail(&self) -> String {
        // Give the stderr reader a moment to drain after exit.
        thread::sleep(Duration::from_millis(10));
        let s = self.stderr.lock().unwrap();
        let start = s.len().saturating_sub(STDERR_TAIL);
        let start = (start..=s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(0);
        s[start..].trim().to_owned()
    }
}

impl Drop for LocalConnection {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.abort();
        }
    }
}

/// Opens a connection and completes the hello/ready exchange.
pub fn connect(address: &str) -> io::Result<(TcpStream, usize)> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, format!("`{address}` resolves to no address"));
    for addr in address.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
            Ok(mut stream) => {
                stream.set_nodelay(true)?;
                stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
                let hello = serde_json::to_string(&Handshake::Hello { proto: PROTOCOL_VERSION }).unwrap();
                write_frame(&mut stream, &hello)?;
                let reply = read_frame(&mut stream)?.ok_or_else(|| io::Error::from(io::ErrorKind::UnexpectedEof))?;
                let slots = match serde_json::from_str(&reply) {
                    Ok(Handshake::Ready { slots }) => slots,
                    _ => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad handshake reply: {reply}"))),
                };
                stream.set_read_timeout(None)?;
                return Ok((stream, slots));
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Asks a worker for its slot count without running anything.
pub fn probe(address: &str) -> io::Result<usize> {
    let (stream, slots) = connect(address)?;
    let _ = stream.shutdown(Shutdown::Both);
    Ok(slots)
}

pub(crate) struct RemoteConnection {
    stream: TcpStream,
    rx: LineRx,
}

impl RemoteConnection {
    pub fn open(address: &str, request_line: &str) -> io::Result<Self> {
        let (mut stream, _) = connect(address)?;
        write_frame(&mut stream, request_line.trim_end_matches('\n'))?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            match read_frame(&mut reader) {
                Ok(Some(line)) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        });
        Ok(RemoteConnection { stream, rx })
    }
}

impl SimConnection for RemoteConnection {
    fn lines(&self) -> &LineRx {
        &self.rx
    }

    fn abort(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }

    // The worker reports a nonzero simulator exit as an error frame.
    fn finish(&mut self, _deadline: Instant) -> Result<(), String> {
        Ok(())
    }

    fn stderr_tail(&self) -> String {
        String::new()
    }
}

impl Drop for RemoteConnection {
    fn drop(&mut self) {
        self.abort();
    }
}
