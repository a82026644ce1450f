//! Starting a workload stopped just before `exec`, so counters can be
//! attached to the pid first.
//!
//! The child pins itself to the target CPUs, optionally switches to
//! SCHED_FIFO, then blocks on a pipe. Releasing the pipe lets it `exec`
//! the workload; counters opened with enable_on_exec start exactly there.

use std::collections::BTreeMap;
use std::ffi::CString;
use std::io;
use std::time::{Duration, Instant};

use super::RunError;

pub struct LaunchSpec<'a> {
    pub argv: &'a [String],
    pub cpus: &'a [u32],
    pub rt_priority: Option<i32>,
    pub env: &'a BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct PausedChild {
    pid: libc::pid_t,
    release_fd: libc::c_int,
    error_fd: libc::c_int,
    started: Option<Instant>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExitInfo {
    /// Exit code, or 128 + signal number when killed by a signal.
    pub status: i32,
    pub wall: Duration,
    pub user_s: f64,
    pub system_s: f64,
    pub voluntary_switches: u64,
    pub involuntary_switches: u64,
    pub minor_faults: u64,
    pub major_faults: u64,
}

fn cstring(s: &str) -> Result<CString, RunError> {
    CString::new(s).map_err(|_| RunError::Plan(format!("argument contains a NUL byte: {s:?}")))
}

fn last_os_error() -> RunError {
    RunError::Io(io::Error::last_os_error())
}

fn pipe_cloexec() -> Result<[libc::c_int; 2], RunError> {
    let mut fds = [0; 2];
    if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
        return Err(last_os_error());
    }
    Ok(fds)
}

pub fn spawn_paused(spec: &LaunchSpec<'_>) -> Result<PausedChild, RunError> {
    if spec.argv.is_empty() {
        return Err(RunError::Plan("empty command".into()));
    }
    let argv: Vec<CString> = spec.argv.iter().map(|a| cstring(a)).collect::<Result<_, _>>()?;
    let mut argv_ptrs: Vec<*const libc::c_char> = argv.iter().map(|a| a.as_ptr()).collect();
    argv_ptrs.push(std::ptr::null());

    let mut env: BTreeMap<String, String> = std::env::vars().collect();
    env.extend(spec.env.iter().map(|(k, v)| (k.clone(), v.clone())));
    let envp: Vec<CString> = env
        .iter()
        .map(|(k, v)| cstring(&format!("{k}={v}")))
        .collect::<Result<_, _>>()?;
    let mut envp_ptrs: Vec<*const libc::c_char> = envp.iter().map(|e| e.as_ptr()).collect();
    envp_ptrs.push(std::ptr::null());

    let mut cpuset: libc::cpu_set_t = unsafe { std::mem::zeroed() };
    for &cpu in spec.cpus {
        if cpu as usize >= libc::CPU_SETSIZE as usize {
            return Err(RunError::Plan(format!("cpu {cpu} out of range")));
        }
        unsafe { libc::CPU_SET(cpu as usize, &mut cpuset) };
    }
    let sched = spec.rt_priority.map(|p| libc::sched_param { sched_priority: p });

    let release = pipe_cloexec()?;
    let errors = pipe_cloexec()?;

    let pid = unsafe { libc::fork() };
    if pid < 0 {
        return Err(last_os_error());
    }
    if pid == 0 {
        // Only async-signal-safe calls from here on.
        unsafe {
            libc::close(release[1]);
            libc::close(errors[0]);
            let fail = |stage: i32| -> ! {
                let code = [stage, *libc::__errno_location()];
                libc::write(errors[1], code.as_ptr().cast(), std::mem::size_of_val(&code));
                libc::_exit(127);
            };
            if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &cpuset) != 0 {
                fail(1);
            }
            if let Some(param) = &sched {
                if libc::sched_setscheduler(0, libc::SCHED_FIFO, param) != 0 {
                    fail(2);
                }
            }
            let mut byte = 0u8;
            if libc::read(release[0], (&mut byte as *mut u8).cast(), 1) != 1 {
                libc::_exit(126);
            }
            libc::execvpe(argv_ptrs[0], argv_ptrs.as_ptr(), envp_ptrs.as_ptr());
            fail(3);
        }
    }
    unsafe {
        libc::close(release[0]);
        libc::close(errors[1]);
    }
    Ok(PausedChild {
        pid,
        release_fd: release[1],
        error_fd: errors[0],
        started: None,
    })
}

impl PausedChild {
    pub fn pid(&self) -> libc::pid_t {
        self.pid
    }

    /// Lets the child exec the workload and reports setup failures.
    pub fn release(&mut self) -> Result<(), RunError> {
        let byte = 1u8;
        self.started = Some(Instant::now());
        let n = unsafe { libc::write(self.release_fd, (&byte as *const u8).cast(), 1) };
        unsafe { libc::close(self.release_fd) };
        self.release_fd = -1;
        if n != 1 {
            return Err(last_os_error());
        }
        self.check_setup()
    }

    fn check_setup(&mut self) -> Result<(), RunError> {
        let mut code = [0i32; 2];
        let n = unsafe {
            libc::read(
                self.error_fd,
                code.as_mut_ptr().cast(),
                std::mem::size_of_val(&code),
            )
        };
        unsafe { libc::close(self.error_fd) };
        self.error_fd = -1;
        if n <= 0 {
            return Ok(());
        }
        let err = io::Error::from_raw_os_error(code[1]);
        let _ = self.reap();
        Err(match code[0] {
            1 => RunError::Plan(format!("cannot pin to the target CPUs: {err}")),
            2 => RunError::PermissionDenied(format!("cannot switch to SCHED_FIFO: {err}")),
            _ => RunError::Io(io::Error::new(err.kind(), format!("exec failed: {err}"))),
        })
    }

    fn reap(&mut self) -> Result<ExitInfo, RunError> {
        let mut status = 0;
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        loop {
            let r = unsafe { libc::wait4(self.pid, &mut status, 0, &mut usage) };
            if r == self.pid {
                break;
            }
            let e = io::Error::last_os_error();
            if e.kind() != io::ErrorKind::Interrupted {
                return Err(RunError::Io(e));
            }
        }
        let wall = self.started.map(|s| s.elapsed()).unwrap_or_default();
        self.pid = -1;
        let code = if libc::WIFEXITED(status) {
            libc::WEXITSTATUS(status)
        } else if libc::WIFSIGNALED(status) {
            128 + libc::WTERMSIG(status)
        } else {
            -1
        };
        let secs = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
        Ok(ExitInfo {
            status: code,
            wall,
            user_s: secs(usage.ru_utime),
            system_s: secs(usage.ru_stime),
            voluntary_switches: usage.ru_nvcsw as u64,
            involuntary_switches: usage.ru_nivcsw as u64,
            minor_faults: usage.ru_minflt as u64,
            major_faults: usage.ru_majflt as u64,
        })
    }

    pub fn wait(mut self) -> Result<ExitInfo, RunError> {
        self.reap()
    }
}

impl Drop for PausedChild {
    fn drop(&mut self) {
        unsafe {
            if self.release_fd >= 0 {
                libc::close(self.release_fd);
            }
            if self.error_fd >= 0 {
                libc::close(self.error_fd);
            }
            if self.pid > 0 {
                libc::kill(self.pid, libc::SIGKILL);
                libc::waitpid(self.pid, std::ptr::null_mut(), 0);
            }
        }
    }
}

/// Runs a command pinned to `cpus` without counters and returns its exit
/// information.
pub fn run_pinned(spec: &LaunchSpec<'_>) -> Result<ExitInfo, RunError> {
    let mut child = spawn_paused(spec)?;
    child.release()?;
    child.wait()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec<'a>(argv: &'a [String], env: &'a BTreeMap<String, String>) -> LaunchSpec<'a> {
        LaunchSpec {
            argv,
            cpus: &[0],
            rt_priority: None,
            env,
        }
    }

    #[test]
    fn exit_codes_are_reported() {
        let env = BTreeMap::new();
        let ok = ["true".to_string()];
        assert_eq!(run_pinned(&spec(&ok, &env)).unwrap().status, 0);
        let bad = ["sh".to_string(), "-c".into(), "exit 3".into()];
        assert_eq!(run_pinned(&spec(&bad, &env)).unwrap().status, 3);
    }

    #[test]
    fn missing_binary_is_an_error() {
        let env = BTreeMap::new();
        let argv = ["/nonexistent/definitely-not-here".to_string()];
        assert!(run_pinned(&spec(&argv, &env)).is_err());
    }

    #[test]
    fn plan_environment_is_passed() {
        let mut env = BTreeMap::new();
        env.insert("PERFRIG_TEST_VAR".to_string(), "7".to_string());
        let argv = [
            "sh".to_string(),
            "-c".into(),
            "test \"$PERFRIG_TEST_VAR\" = 7".into(),
        ];
        assert_eq!(run_pinned(&spec(&argv, &env)).unwrap().status, 0);
    }
}
