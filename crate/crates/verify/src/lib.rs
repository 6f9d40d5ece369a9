//! Verification suites shared by the integration tests and the acceptance
//! harness. Each check returns its measured statistic instead of asserting,
//! so callers choose how to report it.

pub mod gradcheck;
pub mod laws;
pub mod oracle;

/// Worst-case outcome of one repeated numerical check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    /// Largest error over all instances.
    pub worst: f64,
    /// Where the largest error occurred.
    pub detail: String,
}

impl CheckOutcome {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst < tolerance
    }
}
