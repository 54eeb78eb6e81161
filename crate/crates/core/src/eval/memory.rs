//! Process peak-RSS sampling from `/proc/self/status`.

use std::fs;

/// Peak resident set size tracker. Values are process-wide and only
/// available on Linux; elsewhere they read as `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PeakMemory;

impl PeakMemory {
    /// Resets the kernel's high-water mark so later reads cover only new work.
    pub fn reset() -> bool {
        fs::write("/proc/self/clear_refs", "5").is_ok()
    }

    fn status_kb(field: &str) -> Option<u64> {
        let status = fs::read_to_string("/proc/self/status").ok()?;
        status
            .lines()
            .find(|l| l.starts_with(field))?
            .split_whitespace()
            .nth(1)?
            .parse()
            .ok()
    }

    pub fn peak_mb() -> Option<f64> {
        Self::status_kb("VmHWM:").map(|kb| kb as f64 / 1024.0)
    }

    pub fn current_mb() -> Option<f64> {
        Self::status_kb("VmRSS:").map(|kb| kb as f64 / 1024.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[cfg(target_os = "linux")]
    fn peak_is_at_least_current() {
        let (peak, cur) = (PeakMemory::peak_mb().unwrap(), PeakMemory::current_mb().unwrap());
        assert!(peak > 0.0 && peak + 1.0 >= cur);
    }
}
