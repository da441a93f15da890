//! Wire protocol and session for external detector processes.
//!
//! The transport is a bidirectional byte stream (the stdio of a spawned
//! child, or TCP). One UTF-8 line per message, fields separated by single
//! spaces, floats in the shortest form that round-trips `f64` exactly:
//!
//! ```text
//! harness -> detector:  FRAME <frame_id> <timestamp_us> [<x> <y> <z> <yaw>]
//! detector -> harness:  DET <frame_id> <timestamp_us> <u0> <v0> <u1> <v1>
//!                           <u2> <v2> <u3> <v3> <confidence> <visible_fraction>
//! ```
//!
//! The trailing pose fields on FRAME are the optional pose hint for
//! detectors that work from simulator ground truth; receivers must ignore
//! fields they do not expect. At most one detection applies per frame_id; a
//! frame with no reply by the poll deadline counts as a missed detection.
//! Duplicate, regressed, or unrequested frame ids are dropped with a logged
//! warning. Corner order follows the TL/TR/BL/BR convention of the core
//! geometry module.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use mavland_core::episode::{DetectorBackend, DetectorFault};
use mavland_core::geometry::{BoundingBox, ImagePoint};
use mavland_core::simulator::VehiclePose;
use thiserror::Error;

/// Detection message: one candidate box for one published frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMessage {
    pub frame_id: u64,
    pub timestamp_us: u64,
    /// Corner coordinates in label order: `[[u0, v0], ..., [u3, v3]]`.
    pub corners: [[f64; 2]; 4],
    pub confidence: f64,
    pub visible_fraction: f64,
}

impl DetectionMessage {
    pub fn to_bounding_box(&self) -> BoundingBox {
        BoundingBox {
            corners: self.corners.map(|[u, v]| ImagePoint::new(u, v)),
            confidence: self.confidence,
            frame_id: self.frame_id,
            visible_fraction: self.visible_fraction,
        }
    }

    pub fn from_bounding_box(b: &BoundingBox, timestamp_us: u64) -> Self {
        Self {
            frame_id: b.frame_id,
            timestamp_us,
            corners: b.corners.map(|p| [p.u, p.v]),
            confidence: b.confidence,
            visible_fraction: b.visible_fraction,
        }
    }
}

/// Per-tick frame announcement to the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePublication {
    pub frame_id: u64,
    pub timestamp_us: u64,
    pub pose_hint: Option<PoseHint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("unknown message tag: {line:?}")]
    UnknownTag { line: String },
    #[error("corner count: expected 8 corner coordinates: {line:?}")]
    CornerCount { line: String },
    #[error("expected {expected} fields, got {got}: {line:?}")]
    FieldCount {
        expected: usize,
        got: usize,
        line: String,
    },
    #[error("field `{field}` is not a valid number: {line:?}")]
    Number { field: &'static str, line: String },
    #[error("field `{field}` out of range: {line:?}")]
    Range { field: &'static str, line: String },
}

pub fn encode_detection(m: &DetectionMessage) -> String {
    let c = &m.corners;
    format!(
        "DET {} {} {} {} {} {} {} {} {} {} {} {}\n",
        m.frame_id,
        m.timestamp_us,
        c[0][0],
        c[0][1],
        c[1][0],
        c[1][1],
        c[2][0],
        c[2][1],
        c[3][0],
        c[3][1],
        m.confidence,
        m.visible_fraction
    )
}

fn parse_f64(token: &str, field: &'static str, line: &str) -> Result<f64, DecodeError> {
    let value: f64 = token.parse().map_err(|_| DecodeError::Number {
        field,
        line: line.to_string(),
    })?;
    if !value.is_finite() {
        return Err(DecodeError::Range {
            field,
            line: line.to_string(),
        });
    }
    Ok(value)
}

fn parse_u64(token: &str, field: &'static str, line: &str) -> Result<u64, DecodeError> {
    token.parse().map_err(|_| DecodeError::Number {
        field,
        line: line.to_string(),
    })
}

/// Decodes a `DET` line. Fields beyond the defined twelve are ignored for
/// forward compatibility.
pub fn decode_detection(line: &str) -> Result<DetectionMessage, DecodeError> {
    let trimmed = line.trim_end_matches(['\r', '\n']);
    let tokens: Vec<&str> = trimmed.split_ascii_whitespace().collect();
    if tokens.first() != Some(&"DET") {
        return Err(DecodeError::UnknownTag {
            line: trimmed.to_string(),
        });
    }
    if tokens.len() < 13 {
        return Err(DecodeError::CornerCount {
            line: trimmed.to_string(),
        });
    }
    let frame_id = parse_u64(tokens[1], "frame_id", trimmed)?;
    let timestamp_us = parse_u64(tokens[2], "timestamp_us", trimmed)?;
    let mut corners = [[0.0; 2]; 4];
    const CORNER_FIELDS: [&str; 8] = ["u0", "v0", "u1", "v1", "u2", "v2", "u3", "v3"];
    for (i, field) in CORNER_FIELDS.iter().enumerate() {
        corners[i / 2][i % 2] = parse_f64(tokens[3 + i], field, trimmed)?;
    }
    let confidence = parse_f64(tokens[11], "confidence", trimmed)?;
    let visible_fraction = parse_f64(tokens[12], "visible_fraction", trimmed)?;
    for (field, value) in [("confidence", confidence), ("visible_fraction", visible_fraction)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(DecodeError::Range {
                field: if field == "confidence" {
                    "confidence"
                } else {
                    "visible_fraction"
                },
                line: trimmed.to_string(),
            });
        }
    }
    Ok(DetectionMessage {
        frame_id,
        timestamp_us,
        corners,
        confidence,
        visible_fraction,
    })
}

pub fn encode_frame(f: &FramePublication) -> String {
    match &f.pose_hint {
        Some(p) => format!(
            "FRAME {} {} {} {} {} {}\n",
            f.frame_id, f.timestamp_us, p.x, p.y, p.z, p.yaw
        ),
        None => format!("FRAME {} {}\n", f.frame_id, f.timestamp_us),
    }
}

/// Decodes a `FRAME` line (with or without the pose hint).
pub fn decode_frame(line: &str) -> Result<FramePublication, DecodeError> {
    let trimmed = line.trim_end_matches(['\r', '\n']);
    let tokens: Vec<&str> = trimmed.split_ascii_whitespace().collect();
    if tokens.first() != Some(&"FRAME") {
        return Err(DecodeError::UnknownTag {
            line: trimmed.to_string(),
        });
    }
    if tokens.len() != 3 && tokens.len() < 7 {
        return Err(DecodeError::FieldCount {
            expected: 3,
            got: tokens.len(),
            line: trimmed.to_string(),
        });
    }
    let frame_id = parse_u64(tokens[1], "frame_id", trimmed)?;
    let timestamp_us = parse_u64(tokens[2], "timestamp_us", trimmed)?;
    let pose_hint = if tokens.len() >= 7 {
        Some(PoseHint {
            x: parse_f64(tokens[3], "pose.x", trimmed)?,
            y: parse_f64(tokens[4], "pose.y", trimmed)?,
            z: parse_f64(tokens[5], "pose.z", trimmed)?,
            yaw: parse_f64(tokens[6], "pose.yaw", trimmed)?,
        })
    } else {
        None
    };
    Ok(FramePublication {
        frame_id,
        timestamp_us,
        pose_hint,
    })
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("detector stream ended")]
    EndOfStream,
    #[error("bridge io error: {0}")]
    Io(#[from] io::Error),
}

/// A live connection to one external detector. Owns the transport; a reader
/// thread decodes incoming lines into a queue the simulation thread drains
/// once per tick, so intake never blocks the tick beyond the poll deadline.
pub struct DetectorSession {
    writer: Box<dyn Write + Send>,
    incoming: mpsc::Receiver<Result<DetectionMessage, DecodeError>>,
    child: Option<Child>,
    deadline: Duration,
    highest_delivered: Option<u64>,
}

impl DetectorSession {
    /// Spawns `command` through `sh -c` and talks over its stdio.
    pub fn spawn(command: &str, deadline: Duration) -> io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self::from_transport(
            Box::new(stdin),
            Box::new(stdout),
            Some(child),
            deadline,
        ))
    }

    /// Connects to a detector listening on `host:port`.
    pub fn connect_tcp(addr: &str, deadline: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Ok(Self::from_transport(
            Box::new(stream),
            Box::new(reader),
            None,
            deadline,
        ))
    }

    /// Builds a session over an arbitrary byte stream pair.
    pub fn from_transport(
        writer: Box<dyn Write + Send>,
        reader: Box<dyn Read + Send>,
        child: Option<Child>,
        deadline: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let buffered = BufReader::new(reader);
            for line in buffered.lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if tx.send(decode_detection(&line)).is_err() {
                    break;
                }
            }
        });
        Self {
            writer,
            incoming: rx,
            child,
            deadline,
            highest_delivered: None,
        }
    }

    pub fn publish(&mut self, frame: &FramePublication) -> Result<(), BridgeError> {
        self.writer.write_all(encode_frame(frame).as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    /// Waits up to the deadline for the detection answering `frame_id`.
    /// Returns `Ok(None)` on a missed frame. Late, duplicate, or regressed
    /// messages are dropped with a warning; a closed transport surfaces as
    /// [`BridgeError::EndOfStream`].
    ///
    /// A detector may burst several candidate boxes for one frame (one
    /// tracked site means only one can apply); candidates already queued
    /// when the first arrives are drained without waiting and the highest
    /// confidence wins.
    pub fn poll(&mut self, frame_id: u64) -> Result<Option<DetectionMessage>, BridgeError> {
        let deadline = Instant::now() + self.deadline;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.incoming.recv_timeout(remaining) {
                Ok(Ok(msg)) => {
                    let fresh = self.highest_delivered.is_none_or(|h| msg.frame_id > h);
                    if msg.frame_id == frame_id && fresh {
                        let best = self.drain_candidates(msg);
                        self.highest_delivered = Some(frame_id);
                        return Ok(Some(best));
                    }
                    if !fresh {
                        warn!(
                            "dropping detection with non-increasing frame_id {} (last delivered {:?})",
                            msg.frame_id, self.highest_delivered
                        );
                    } else {
                        warn!(
                            "dropping detection for frame {} while polling frame {}",
                            msg.frame_id, frame_id
                        );
                    }
                }
                Ok(Err(decode_err)) => {
                    warn!("dropping malformed detector line: {decode_err}");
                }
                Err(mpsc::RecvTimeoutError::Timeout) => return Ok(None),
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(BridgeError::EndOfStream),
            }
        }
    }

    fn drain_candidates(&mut self, first: DetectionMessage) -> DetectionMessage {
        let frame_id = first.frame_id;
        let mut best = first;
        while let Ok(next) = self.incoming.try_recv() {
            match next {
                Ok(msg) if msg.frame_id == frame_id => {
                    if msg.confidence > best.confidence {
                        best = msg;
                    }
                }
                Ok(msg) => {
                    warn!(
                        "dropping detection for frame {} while collecting candidates for frame {frame_id}",
                        msg.frame_id
                    );
                }
                Err(decode_err) => warn!("dropping malformed detector line: {decode_err}"),
            }
        }
        best
    }
}

impl Drop for DetectorSession {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Adapts a [`DetectorSession`] to the episode loop's detector interface.
pub struct BridgeBackend {
    session: DetectorSession,
}

impl BridgeBackend {
    pub fn new(session: DetectorSession) -> Self {
        Self { session }
    }
}

impl DetectorBackend for BridgeBackend {
    fn observe(
        &mut self,
        frame_id: u64,
        t: f64,
        pose: &VehiclePose,
    ) -> Result<Option<BoundingBox>, DetectorFault> {
        let publication = FramePublication {
            frame_id,
            timestamp_us: (t * 1e6).round() as u64,
            pose_hint: Some(PoseHint {
                x: pose.x,
                y: pose.y,
                z: pose.z,
                yaw: pose.yaw,
            }),
        };
        let fault = |e: BridgeError| DetectorFault {
            message: e.to_string(),
        };
        self.session.publish(&publication).map_err(fault)?;
        match self.session.poll(frame_id).map_err(fault)? {
            Some(msg) => Ok(Some(msg.to_bounding_box())),
            None => Ok(None),
        }
    }
}

/// Ground-truth echo detector, meant to run as a child process: answers
/// each FRAME (with pose hint) by replaying the synthetic detector for the
/// given scenario. With the scenario seed matching the harness seed this
/// reproduces the synthetic detection stream bit for bit.
pub fn run_echo_detector(
    scenario: &mavland_core::episode::ScenarioConfig,
    input: impl Read,
    mut output: impl Write,
) -> Result<(), BridgeError> {
    let mut detector = mavland_core::episode::SyntheticDetector::from_scenario(scenario);
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = match decode_frame(&line) {
            Ok(f) => f,
            Err(e) => {
                warn!("echo detector ignoring malformed line: {e}");
                continue;
            }
        };
        let Some(hint) = frame.pose_hint else {
            warn!("echo detector needs pose hints; ignoring frame {}", frame.frame_id);
            continue;
        };
        let pose = VehiclePose {
            x: hint.x,
            y: hint.y,
            z: hint.z,
            yaw: hint.yaw,
            ..VehiclePose::default()
        };
        let t = frame.timestamp_us as f64 / 1e6;
        let observed = detector
            .observe(frame.frame_id, t, &pose)
            .map_err(|e| io::Error::other(e.message))?;
        if let Some(b) = observed {
            let msg = DetectionMessage::from_bounding_box(&b, frame.timestamp_us);
            output.write_all(encode_detection(&msg).as_bytes())?;
            output.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_message() -> DetectionMessage {
        DetectionMessage {
            frame_id: 42,
            timestamp_us: 2_100_000,
            corners: [[270.5, 190.25], [370.1, 190.0], [270.0, 290.75], [370.0, 290.0]],
            confidence: 0.97,
            visible_fraction: 0.85,
        }
    }

    #[test]
    fn detection_round_trip_is_identity() {
        let msg = sample_message();
        assert_eq!(decode_detection(&encode_detection(&msg)).unwrap(), msg);
    }

    #[test]
    fn short_corner_list_reports_corner_count() {
        let line = "DET 1 1000 10 10 20 10 10 20 0.9 1.0";
        match decode_detection(line) {
            Err(DecodeError::CornerCount { .. }) => {}
            other => panic!("expected corner-count error, got {other:?}"),
        }
    }

    #[test]
    fn extra_fields_are_ignored() {
        let msg = sample_message();
        let line = format!("{} extra 1 2\n", encode_detection(&msg).trim_end());
        assert_eq!(decode_detection(&line).unwrap(), msg);
    }

    #[test]
    fn bad_number_names_the_field() {
        let line = "DET 1 1000 10 oops 20 10 10 20 20 20 0.9 1.0";
        match decode_detection(line) {
            Err(DecodeError::Number { field, .. }) => assert_eq!(field, "v0"),
            other => panic!("expected number error, got {other:?}"),
        }
    }

    #[test]
    fn confidence_out_of_range_is_rejected() {
        let line = "DET 1 1000 10 10 20 10 10 20 20 20 1.5 1.0";
        match decode_detection(line) {
            Err(DecodeError::Range { field, .. }) => assert_eq!(field, "confidence"),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn frame_round_trip_with_and_without_pose() {
        let bare = FramePublication {
            frame_id: 7,
            timestamp_us: 350_000,
            pose_hint: None,
        };
        assert_eq!(decode_frame(&encode_frame(&bare)).unwrap(), bare);
        let hinted = FramePublication {
            pose_hint: Some(PoseHint {
                x: 1.25,
                y: -0.5,
                z: 9.75,
                yaw: 0.1,
            }),
            ..bare
        };
        assert_eq!(decode_frame(&encode_frame(&hinted)).unwrap(), hinted);
    }
}
