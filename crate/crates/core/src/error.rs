/// Stable, machine-readable identifier for an error condition.
///
/// Every error type in the crate implements this so that the CLI and the
/// HTTP service can report failures without string matching.
pub trait ErrorCode {
    fn code(&self) -> &'static str;
}
