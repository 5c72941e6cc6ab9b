//! Library side of the `spatialfeat` command-line tool: scene files and
//! presets, the simulate/features pipeline, the output lock and the
//! verification checks.

pub mod lock;
pub mod pipeline;
pub mod scene;
pub mod verify;

/// Stable error category for the machine-readable error line.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    if err.downcast_ref::<lock::LockedError>().is_some() {
        return "locked";
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spatialfeat::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "runtime"
}
