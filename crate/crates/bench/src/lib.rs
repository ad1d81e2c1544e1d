//! Shared inputs for the criterion benchmarks.

use distdescribe_core::bench::generate_task;
use distdescribe_core::DistributionPair;

/// A seeded question-mark task with `n` samples per side (at least 10).
pub fn task_pair(n: usize) -> DistributionPair {
    generate_task("question_mark", 0.8, 0.1, n, 7)
        .expect("question_mark is a registered predicate")
        .pair
}
