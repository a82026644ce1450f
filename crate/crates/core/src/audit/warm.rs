use std::fs::File;
use std::io::Read;
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::AuditError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarmEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub resident_before: f64,
    pub resident_after: f64,
}

fn page_size() -> usize {
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as usize
    } else {
        4096
    }
}

fn unreadable(path: &Path, source: std::io::Error) -> AuditError {
    AuditError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    }
}

/// Fraction of the file's pages currently in the page cache.
pub fn resident_fraction(path: &Path) -> Result<f64, AuditError> {
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let len = file.metadata().map_err(|e| unreadable(path, e))?.len() as usize;
    if len == 0 {
        return Ok(1.0);
    }
    let page = page_size();
    let pages = len.div_ceil(page);
    unsafe {
        let addr = libc::mmap(
            std::ptr::null_mut(),
            len,
            libc::PROT_READ,
            libc::MAP_SHARED,
            file.as_raw_fd(),
            0,
        );
        if addr == libc::MAP_FAILED {
            return Err(unreadable(path, std::io::Error::last_os_error()));
        }
        let mut vec = vec![0u8; pages];
        let rc = libc::mincore(addr, len, vec.as_mut_ptr());
        let err = std::io::Error::last_os_error();
        libc::munmap(addr, len);
        if rc != 0 {
            return Err(unreadable(path, err));
        }
        let resident = vec.iter().filter(|b| **b & 1 != 0).count();
        Ok(resident as f64 / pages as f64)
    }
}

fn touch_all(path: &Path) -> Result<u64, AuditError> {
    let mut file = File::open(path).map_err(|e| unreadable(path, e))?;
    let mut buf = vec![0u8; 1 << 20];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| unreadable(path, e))?;
        if n == 0 {
            break;
        }
        total += n as u64;
    }
    Ok(total)
}

/// Reads every page of each file so later runs find it cached.
pub fn warm_page_cache(files: &[PathBuf]) -> Result<Vec<WarmEntry>, AuditError> {
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let resident_before = resident_fraction(path)?;
        let bytes = touch_all(path)?;
        let resident_after = resident_fraction(path)?;
        out.push(WarmEntry {
            path: path.clone(),
            bytes,
            resident_before,
            resident_after,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_list_gives_empty_report() {
        assert!(warm_page_cache(&[]).unwrap().is_empty());
    }

    #[test]
    fn unreadable_path_is_reported() {
        let err = warm_page_cache(&[PathBuf::from("/nonexistent/perfrig.dat")]).unwrap_err();
        assert!(matches!(err, AuditError::FileUnreadable { .. }));
    }

    #[test]
    fn warmed_file_is_resident() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&vec![7u8; 1 << 20]).unwrap();
        f.flush().unwrap();
        let report = warm_page_cache(&[f.path().to_path_buf()]).unwrap();
        assert_eq!(report[0].bytes, 1 << 20);
        assert!(report[0].resident_after >= 0.99, "{report:?}");
    }
}
