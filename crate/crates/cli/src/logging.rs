use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use log::{LevelFilter, Log, Metadata, Record};

/// Logs to stderr and, once a run directory is known, to a file inside it,
/// so partial progress survives a failed command.
pub struct TeeLogger {
    level: LevelFilter,
    file: Mutex<Option<File>>,
}

static LOGGER: std::sync::OnceLock<TeeLogger> = std::sync::OnceLock::new();

pub fn init(level: LevelFilter) {
    let logger = LOGGER.get_or_init(|| TeeLogger {
        level,
        file: Mutex::new(None),
    });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(level);
    }
}

/// Starts appending log lines to `path`.
pub fn attach_file(path: &Path) {
    if let Some(logger) = LOGGER.get() {
        match std::fs::OpenOptions::new().create(true).append(true).open(path) {
            Ok(f) => *logger.file.lock().expect("log file lock") = Some(f),
            Err(e) => eprintln!("warning: cannot open log file {}: {e}", path.display()),
        }
    }
}

impl Log for TeeLogger {
    fn enabled(&self, metadata: &Metadata<'_>) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record<'_>) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!("[{}] {}", record.level(), record.args());
        eprintln!("{line}");
        if let Some(f) = self.file.lock().expect("log file lock").as_mut() {
            let _ = writeln!(f, "{} {line}", chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ"));
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().expect("log file lock").as_mut() {
            let _ = f.flush();
        }
    }
}
