//! Storage-constrained action selection: pick the subset of services with
//! the largest total partial value that fits in the server's storage.

use crate::error::{Error, Result};

/// Exact 0/1 knapsack by dynamic programming over integer capacity.
///
/// Items with non-positive value or oversized weight are never taken. Among
/// optimal selections the lexicographically smallest bit vector is returned
/// (service 0 is the most significant position, `false < true`).
pub fn knapsack_select(values: &[f64], weights: &[u32], capacity: i64) -> Result<Vec<bool>> {
    if values.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if capacity < 0 {
        return Err(Error::InvalidArgument(format!("negative capacity {capacity}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite partial value".into()));
    }
    let items = values.len();
    let cap = capacity.min(weights.iter().map(|&w| w as i64).sum()) as usize;
    let width = cap + 1;
    // best[j * width + c]: best value from items j.. with capacity c.
    let mut best = vec![0.0f64; (items + 1) * width];
    for j in (0..items).rev() {
        let (head, tail) = best.split_at_mut((j + 1) * width);
        let row = &mut head[j * width..];
        let next = &tail[..width];
        let w = weights[j] as usize;
        let v = values[j];
        for c in 0..width {
            let skip = next[c];
            row[c] = if v > 0.0 && w <= c { skip.max(v + next[c - w]) } else { skip };
        }
    }
    let mut action = vec![false; items];
    let mut c = cap;
    for j in 0..items {
        let w = weights[j] as usize;
        let skip = best[(j + 1) * width + c];
        if values[j] > 0.0 && w <= c && values[j] + best[(j + 1) * width + c - w] > skip {
            action[j] = true;
            c -= w;
        }
    }
    Ok(action)
}

/// Brute-force reference: enumerates all `2^J` subsets in lexicographic
/// order and keeps the first one with the strictly largest value.
pub fn exhaustive_select(values: &[f64], weights: &[u32], capacity: i64) -> Result<Vec<bool>> {
    let items = values.len();
    if items != weights.len() {
        return Err(Error::Dimension("values and weights differ in length".into()));
    }
    if items > 24 {
        return Err(Error::TooLarge(format!("{items} items")));
    }
    let mut best_value = f64::NEG_INFINITY;
    let mut best_mask = 0u32;
    for mask in 0u32..(1 << items) {
        // Bit (items - 1 - j) is item j, so ascending masks are lexicographic order.
        let mut weight = 0i64;
        let mut value = 0.0;
        for j in 0..items {
            if mask >> (items - 1 - j) & 1 == 1 {
                weight += weights[j] as i64;
                value += values[j];
            }
        }
        if weight <= capacity && value > best_value {
            best_value = value;
            best_mask = mask;
        }
    }
    Ok((0..items).map(|j| best_mask >> (items - 1 - j) & 1 == 1).collect())
}
