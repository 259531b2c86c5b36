//! Allocator tuning for tape-heavy training.
//!
//! Each training step records and then drops hundreds of megabytes of
//! small tensors. glibc's default policy returns freed heap tops and mmap'd
//! blocks to the kernel immediately, so the next step pays a page fault for
//! nearly every tensor it allocates; on a single core this costs several
//! times the arithmetic. Raising the trim and mmap thresholds keeps the
//! memory in the process.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Keep freed memory for reuse instead of returning it to the OS. Safe to
/// call repeatedly; a no-op off glibc.
pub fn retain_freed_memory() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator parameters; it is called
        // once, before any concurrent allocation by this crate.
        unsafe {
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
            // largest value glibc accepts on 64-bit targets
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 * 1024 * 1024);
            libc::mallopt(libc::M_TOP_PAD, 64 * 1024 * 1024);
        }
    });
}
