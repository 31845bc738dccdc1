//! Shared fixtures for the benchmarks.

use kwcomplete::corpus::{split_lines, CorpusConfig};
use kwcomplete::CorpusSplit;

/// A synthetic split small enough to build in milliseconds.
pub fn desk_split(lines: usize) -> CorpusSplit {
    let raw = kwcomplete::desk::generate(lines, 7);
    let config = CorpusConfig { test_size: lines / 10, ..CorpusConfig::default() };
    split_lines(raw.iter().map(String::as_str), &config).expect("synthetic corpus splits")
}
