//! Rounding a continuous design to integer replicate counts.

use alloc::format;
use alloc::vec;

#[allow(unused_imports)] // float math on no_std
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::{Design, ExactDesign};

/// Efficient apportionment of `design` to `n` runs.
///
/// Starts from `⌈(n − l/2) ξ_i⌉` on the support of size `l`, then increments
/// the point with the smallest `n_i/ξ_i` or decrements the point with the
/// largest `(n_i − 1)/ξ_i` until the counts sum to `n`. Ties go to the
/// smallest index.
pub fn efficient_apportionment(design: &Design, n: usize) -> Result<ExactDesign> {
    if n == 0 {
        return Err(Error::invalid("cannot apportion zero runs"));
    }
    let w = design.weights();
    let support = design.support();
    let l = support.len();
    if l > n {
        return Err(Error::invalid(format!(
            "support has {l} points but only {n} runs are available"
        )));
    }
    let multiplier = n as f64 - l as f64 / 2.0;
    let mut counts = vec![0usize; w.len()];
    for &i in &support {
        counts[i] = (multiplier * w[i]).ceil() as usize;
    }
    let mut total: usize = counts.iter().sum();
    while total < n {
        let mut best = support[0];
        for &i in &support[1..] {
            if (counts[i] as f64) / w[i] < (counts[best] as f64) / w[best] {
                best = i;
            }
        }
        counts[best] += 1;
        total += 1;
    }
    while total > n {
        let mut best = None;
        for &i in &support {
            if counts[i] == 0 {
                continue;
            }
            let q = (counts[i] as f64 - 1.0) / w[i];
            match best {
                Some((_, bq)) if q <= bq => {}
                _ => best = Some((i, q)),
            }
        }
        let (i, _) = best.expect("total > n > 0 implies a positive count");
        counts[i] -= 1;
        total -= 1;
    }
    ExactDesign::new(counts)
}
