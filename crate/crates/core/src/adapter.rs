//! Running external adapter commands with a deadline.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(5);

/// A program plus leading arguments, e.g. `["python3", "detector.py"]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub argv: Vec<String>,
    pub timeout_secs: u64,
}

impl CommandSpec {
    /// Split a command line on whitespace.
    pub fn parse(line: &str, timeout_secs: u64) -> Result<Self> {
        let argv: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(Error::invalid("empty adapter command"));
        }
        Ok(CommandSpec { argv, timeout_secs })
    }

    pub fn name(&self) -> &str {
        &self.argv[0]
    }

    /// Run with `extra` appended to the arguments; returns stdout on exit status 0.
    pub fn run<S: AsRef<std::ffi::OsStr>>(&self, extra: &[S], stdin: Option<&str>) -> Result<String> {
        let name = self.name().to_string();
        let fail = |msg: String| Error::adapter(name.clone(), msg);
        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .args(extra)
            .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("failed to start: {e}")))?;
        if let (Some(input), Some(mut pipe)) = (stdin, child.stdin.take()) {
            // a child that ignores stdin may close it early
            let _ = pipe.write_all(input.as_bytes());
        }
        let mut out_pipe = child.stdout.take().expect("stdout piped");
        let mut err_pipe = child.stderr.take().expect("stderr piped");
        let out_reader = thread::spawn(move || {
            let mut s = String::new();
            out_pipe.read_to_string(&mut s).map(|_| s)
        });
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = err_pipe.read_to_string(&mut s);
            s
        });

        let deadline = Instant::now() + Duration::from_secs(self.timeout_secs);
        let status = loop {
            match child.try_wait().map_err(|e| fail(format!("wait failed: {e}")))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(fail(format!("timed out after {}s", self.timeout_secs)));
                }
                None => thread::sleep(POLL),
            }
        };
        let stdout = out_reader
            .join()
            .map_err(|_| fail("stdout reader panicked".into()))?
            .map_err(|e| fail(format!("unreadable stdout: {e}")))?;
        let stderr = err_reader.join().unwrap_or_default();
        if !status.success() {
            let detail = stderr.trim();
            return Err(fail(if detail.is_empty() {
                format!("exited with {status}")
            } else {
                format!("exited with {status}: {detail}")
            }));
        }
        Ok(stdout)
    }

    /// Run and parse the first non-empty stdout line as JSON.
    pub fn run_json<T: serde::de::DeserializeOwned, S: AsRef<std::ffi::OsStr>>(
        &self,
        extra: &[S],
        stdin: Option<&str>,
    ) -> Result<T> {
        let out = self.run(extra, stdin)?;
        let line = out
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::adapter(self.name(), "no output"))?;
        serde_json::from_str(line).map_err(|e| Error::adapter(self.name(), format!("bad response {line:?}: {e}")))
    }
}
