//! Out-of-process score models over a line protocol on standard streams.
//!
//! Request (one line): `score <t> <height> <width> <channels> <x_0> ... <x_n-1>`
//! Response (one line): `ok <s_0> ... <s_n-1>` or `err <message>`
//!
//! Every float is the 16-digit lowercase base-16 rendering of its IEEE-754
//! bit pattern, so values cross the pipe bit-exactly.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::ScoreModel;
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::tensor::{Image, Shape};

pub fn encode_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn decode_f64(token: &str) -> Option<f64> {
    if token.len() != 16 {
        return None;
    }
    u64::from_str_radix(token, 16).ok().map(f64::from_bits)
}

fn encode_request(x_t: &Image, t: usize) -> String {
    let s = x_t.shape();
    let mut line = format!("score {t} {} {} {}", s.height, s.width, s.channels);
    for v in x_t.data() {
        line.push(' ');
        line.push_str(&encode_f64(*v));
    }
    line.push('\n');
    line
}

fn parse_request(line: &str) -> std::result::Result<(usize, Image), String> {
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("score") {
        return Err("expected `score`".into());
    }
    let mut header = [0usize; 4];
    for slot in &mut header {
        *slot = tokens
            .next()
            .and_then(|tok| tok.parse().ok())
            .ok_or("bad header")?;
    }
    let shape = Shape::new(header[1], header[2], header[3]);
    let data = tokens
        .map(|tok| decode_f64(tok).ok_or_else(|| format!("bad float `{tok}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let img = Image::from_vec(shape, data).map_err(|e| e.to_string())?;
    Ok((header[0], img))
}

/// Answers score requests from `input` until end of stream.
pub fn serve<M, R, W>(model: &M, schedule: &DiffusionSchedule, input: R, mut output: W) -> Result<()>
where
    M: ScoreModel + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = parse_request(&line)
            .and_then(|(t, x)| {
                schedule.check_step(t).map_err(|e| e.to_string())?;
                model.score(&x, t, schedule).map_err(|e| e.to_string())
            })
            .map(|s| {
                let mut r = String::from("ok");
                for v in s.data() {
                    r.push(' ');
                    r.push_str(&encode_f64(*v));
                }
                r
            })
            .unwrap_or_else(|e| format!("err {e}"));
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

struct Channel {
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Score model backed by a child process speaking the line protocol.
///
/// The denoiser is derived from the returned score; no Jacobian is
/// available, so guidance must use the frozen-denoiser gradient mode.
pub struct ProcessScoreModel {
    child: Mutex<Child>,
    channel: Mutex<Channel>,
    timeout: Duration,
}

impl ProcessScoreModel {
    pub fn spawn(mut command: Command, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child: Mutex::new(child),
            channel: Mutex::new(Channel { stdin, lines: rx }),
            timeout,
        })
    }
}

impl ScoreModel for ProcessScoreModel {
    fn score(&self, x_t: &Image, t: usize, _schedule: &DiffusionSchedule) -> Result<Image> {
        let mut ch = self.channel.lock().expect("score channel poisoned");
        ch.stdin
            .write_all(encode_request(x_t, t).as_bytes())
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| Error::ScoreServer(format!("write failed: {e}")))?;
        let line = match ch.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::ScoreServer(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::ScoreServer(format!("no response within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::ScoreServer("server closed its output".into()))
            }
        };
        let mut tokens = line.split_ascii_whitespace();
        match tokens.next() {
            Some("ok") => {}
            Some("err") => {
                let msg: Vec<&str> = tokens.collect();
                return Err(Error::ScoreServer(format!("server error: {}", msg.join(" "))));
            }
            _ => return Err(Error::ScoreServer(format!("malformed response `{line}`"))),
        }
        let data = tokens
            .map(|tok| decode_f64(tok).ok_or_else(|| Error::ScoreServer(format!("bad float `{tok}`"))))
            .collect::<Result<Vec<_>>>()?;
        if data.len() != x_t.data().len() {
            return Err(Error::ScoreServer(format!(
                "expected {} values, got {}",
                x_t.data().len(),
                data.len()
            )));
        }
        Image::from_vec(x_t.shape(), data)
    }
}

impl Drop for ProcessScoreModel {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::EmpiricalPrior;
    use crate::tensor::Seed;

    #[test]
    fn hex_floats_are_bit_exact() {
        for v in [0.0, -0.0, 1.5, -3.25e-300, f64::MAX, f64::MIN_POSITIVE, 0.1] {
            let back = decode_f64(&encode_f64(v)).unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert!(decode_f64("xyz").is_none());
        assert!(decode_f64("3ff00000000000000").is_none());
    }

    #[test]
    fn server_answers_and_reports_errors() {
        let s = DiffusionSchedule::linear(10, 1e-3, 0.1).unwrap();
        let shape = Shape::new(2, 2, 1);
        let prior = EmpiricalPrior::new(vec![Image::filled(shape, 0.5)]).unwrap();
        let x = Image::standard_normal(shape, &mut Seed(1).rng());
        let mut input = encode_request(&x, 4);
        input.push_str("bogus\n");
        input.push_str(&encode_request(&x, 11));
        let mut out = Vec::new();
        serve(&prior, &s, input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let values: Vec<f64> = lines[0]
            .split_ascii_whitespace()
            .skip(1)
            .map(|t| decode_f64(t).unwrap())
            .collect();
        assert_eq!(values, prior.score(&x, 4, &s).unwrap().into_vec());
        assert!(lines[1].starts_with("err"));
        assert!(lines[2].starts_with("err"));
    }
}
