//! Live backend over a local stream socket.
//!
//! Protocol: one JSON request per line, `{"frame_index": N}`, answered by one
//! line holding the frame's observation in trace schema.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::backend::{BackendCapabilities, BackendError, FrameHandle, InferenceBackend, InferenceOutput};
use crate::vigilance::FrameObservation;

#[derive(Serialize)]
struct Request {
    frame_index: u64,
}

pub struct SocketBackend {
    reader: BufReader<UnixStream>,
    writer: UnixStream,
    caps: BackendCapabilities,
    line: String,
}

impl SocketBackend {
    pub fn connect(path: impl AsRef<Path>, caps: BackendCapabilities) -> io::Result<Self> {
        Self::from_stream(UnixStream::connect(path)?, caps)
    }

    pub fn from_stream(stream: UnixStream, caps: BackendCapabilities) -> io::Result<Self> {
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            caps,
            line: String::new(),
        })
    }
}

fn io_err(e: io::Error, deadline: Duration) -> BackendError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => BackendError::Timeout(deadline),
        _ => BackendError::Io(e.to_string()),
    }
}

impl InferenceBackend for SocketBackend {
    fn capabilities(&self) -> BackendCapabilities {
        self.caps
    }

    fn infer(&mut self, frame: &FrameHandle, deadline: Duration) -> Result<InferenceOutput, BackendError> {
        let start = Instant::now();
        let mut req = serde_json::to_vec(&Request {
            frame_index: frame.frame_index,
        })
        .map_err(|e| BackendError::Protocol(e.to_string()))?;
        req.push(b'\n');
        self.writer.write_all(&req).map_err(|e| io_err(e, deadline))?;

        // Answers to earlier timed-out requests may still be in the pipe.
        loop {
            let left = deadline.saturating_sub(start.elapsed());
            if left.is_zero() {
                return Err(BackendError::Timeout(deadline));
            }
            self.reader
                .get_ref()
                .set_read_timeout(Some(left))
                .map_err(|e| BackendError::Io(e.to_string()))?;
            self.line.clear();
            let n = self.reader.read_line(&mut self.line).map_err(|e| io_err(e, deadline))?;
            if n == 0 {
                return Err(BackendError::Io("backend closed the connection".into()));
            }
            let obs: FrameObservation =
                serde_json::from_str(self.line.trim_end()).map_err(|e| BackendError::Protocol(e.to_string()))?;
            if obs.frame_index < frame.frame_index {
                continue;
            }
            if obs.frame_index != frame.frame_index {
                return Err(BackendError::Protocol(format!(
                    "asked for frame {}, got {}",
                    frame.frame_index, obs.frame_index
                )));
            }
            // The socket reports no stage split; attribute the call to detection.
            let elapsed = start.elapsed().as_secs_f64() * 1000.0;
            return Ok(InferenceOutput {
                observation: obs,
                detect_ms: elapsed,
                behave_ms: 0.0,
            });
        }
    }
}
