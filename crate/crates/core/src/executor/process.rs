use std::env;
use std::fs;
use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{ExecError, ExitStatus, MemoryEnforcement};

const POLL_INTERVAL: Duration = Duration::from_millis(3);
const RSS_POLL_EVERY: u32 = 5;

pub(super) struct ProcessRequest<'a> {
    pub args: Vec<String>,
    pub source: &'a str,
    pub source_file_name: &'a str,
    pub stdin: &'a str,
    pub time_limit_ms: u64,
    pub memory_limit_kb: u64,
    pub memory_enforcement: MemoryEnforcement,
    pub output_cap_bytes: usize,
}

#[derive(Debug)]
pub(super) struct ProcessEnd {
    pub status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub wall_ms: u64,
}

struct Captured {
    bytes: Vec<u8>,
    truncated: bool,
}

/// Keeps the first `cap` bytes and drains the rest so the child never
/// blocks on a full pipe.
fn capture(mut stream: impl Read, cap: usize) -> Captured {
    let mut bytes = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let room = cap.saturating_sub(bytes.len());
                if n > room {
                    truncated = true;
                }
                bytes.extend_from_slice(&buf[..n.min(room)]);
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    Captured { bytes, truncated }
}

fn resolve_program(program: &str) -> PathBuf {
    let path = Path::new(program);
    if program.contains('/') && path.is_relative() {
        if let Ok(cwd) = env::current_dir() {
            return cwd.join(path);
        }
    }
    path.to_path_buf()
}

fn kill_group(pgid: i32) {
    // SAFETY: plain syscall; a stale pgid at worst yields ESRCH.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

/// Resident set of every process in the group, in KiB.
fn group_rss_kb(pgid: i32) -> u64 {
    let page_kb = {
        // SAFETY: sysconf has no preconditions.
        let size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
        if size > 0 { size as u64 / 1024 } else { 4 }
    };
    let Ok(entries) = fs::read_dir("/proc") else { return 0 };
    let mut total = 0;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if !name.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let Ok(stat) = fs::read_to_string(entry.path().join("stat")) else { continue };
        // Fields after the parenthesised command name: state ppid pgrp ...
        let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let pgrp = fields.get(2).and_then(|f| f.parse::<i32>().ok());
        if pgrp != Some(pgid) {
            continue;
        }
        if let Some(rss_pages) = fields.get(21).and_then(|f| f.parse::<u64>().ok()) {
            total += rss_pages * page_kb;
        }
    }
    total
}

fn spawn(req: &ProcessRequest<'_>, dir: &Path) -> Result<Child, ExecError> {
    let program = resolve_program(&req.args[0]);
    let mut cmd = Command::new(&program);
    cmd.args(&req.args[1..])
        .current_dir(dir)
        .env_clear()
        .env("PATH", env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into()))
        .env("HOME", dir)
        .env("TMPDIR", dir)
        .env("LANG", "C.UTF-8")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);

    let address_space = match req.memory_enforcement {
        MemoryEnforcement::AddressSpace => Some(req.memory_limit_kb.saturating_mul(1024)),
        MemoryEnforcement::Monitor => None,
    };
    // SAFETY: the closure only issues async-signal-safe syscalls.
    unsafe {
        cmd.pre_exec(move || {
            let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            if let Some(bytes) = address_space {
                let cap = libc::rlimit {
                    rlim_cur: bytes as libc::rlim_t,
                    rlim_max: bytes as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &cap) != 0 {
                    return Err(io::Error::last_os_error());
                }
            }
            // Private network namespace where permitted; unprivileged hosts
            // keep the inherited namespace.
            libc::unshare(libc::CLONE_NEWNET);
            Ok(())
        });
    }
    cmd.spawn().map_err(|e| match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
            ExecError::InterpreterMissing(req.args[0].clone())
        }
        _ => ExecError::Setup(e),
    })
}

pub(super) fn run_process(req: ProcessRequest<'_>) -> Result<ProcessEnd, ExecError> {
    let dir = tempfile::Builder::new().prefix("repair-forge-").tempdir()?;
    fs::write(dir.path().join(req.source_file_name), req.source)?;

    let start = Instant::now();
    let mut child = spawn(&req, dir.path())?;
    let pgid = child.id() as i32;

    let stdin_bytes = req.stdin.as_bytes().to_vec();
    let mut stdin = child.stdin.take().expect("stdin piped");
    let writer = thread::spawn(move || {
        // Programs that never read their input close the pipe early.
        let _ = stdin.write_all(&stdin_bytes);
    });
    let cap = req.output_cap_bytes;
    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || capture(stdout, cap));
    let err_reader = thread::spawn(move || capture(stderr, cap));

    let limit = Duration::from_millis(req.time_limit_ms);
    let monitor = req.memory_enforcement == MemoryEnforcement::Monitor;
    let mut polls = 0u32;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break match (status.code(), status.signal()) {
                (Some(code), _) => ExitStatus::Code(code),
                (None, Some(sig)) => ExitStatus::Signal(sig),
                (None, None) => ExitStatus::Code(-1),
            };
        }
        let elapsed = start.elapsed();
        if elapsed >= limit {
            kill_group(pgid);
            let _ = child.wait();
            break ExitStatus::TimedOut;
        }
        polls += 1;
        if monitor && polls.is_multiple_of(RSS_POLL_EVERY) && group_rss_kb(pgid) > req.memory_limit_kb {
            kill_group(pgid);
            let _ = child.wait();
            break ExitStatus::MemoryKilled;
        }
        thread::sleep(POLL_INTERVAL.min(limit - elapsed));
    };
    let wall_ms = start.elapsed().as_millis() as u64;
    // Descendants that outlive the main process would hold the pipes open.
    kill_group(pgid);

    let _ = writer.join();
    let out = out_reader.join().unwrap_or(Captured { bytes: Vec::new(), truncated: false });
    let err = err_reader.join().unwrap_or(Captured { bytes: Vec::new(), truncated: false });
    Ok(ProcessEnd {
        status,
        stdout: String::from_utf8_lossy(&out.bytes).into_owned(),
        stderr: String::from_utf8_lossy(&err.bytes).into_owned(),
        stdout_truncated: out.truncated,
        stderr_truncated: err.truncated,
        wall_ms,
    })
}
