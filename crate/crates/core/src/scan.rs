//! Exact enumeration of all configurations whose energy is at least a level.
//!
//! Columns (second-block states) are visited in decreasing order of `X2` in
//! chunks. For a row `i1` and a chunk whose best column is `j*`, a
//! configuration can only reach `level` if its perturbation exceeds
//! `t = level - X1[i1] - X2[j*]`. Because the perturbation is a monotone
//! transform of a 53-bit counter value, that test is an integer comparison
//! against a per-chunk threshold, and the Gaussian is only evaluated for the
//! survivors. Rows are visited in decreasing order of `X1`, and a row stops
//! as soon as `t` exceeds the largest Gaussian a 53-bit uniform can produce.
//!
//! The result is exactly the set `{σ : X_σ >= level}`; the visiting order is
//! a deterministic function of the realization.

use crate::model::DisorderRealization;
use crate::rng::{bits_threshold, gaussian_from_bits, MAX_COUNTER_GAUSSIAN};

const CHUNK: usize = 64;
/// Slack on the standardized threshold so the integer pre-test never
/// rejects a configuration the exact comparison would accept.
const Z_SLACK: f64 = 1e-7;

/// Visiting order shared by several scans of one realization.
#[derive(Clone, Debug)]
pub struct ScanOrder {
    rows: Vec<u32>,
    cols: Vec<u32>,
}

impl ScanOrder {
    pub fn new(r: &DisorderRealization) -> Self {
        Self {
            rows: descending_order(r.block1()),
            cols: descending_order(r.block2()),
        }
    }

    /// Rows sorted by decreasing `X1` (ties by index).
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn cols(&self) -> &[u32] {
        &self.cols
    }
}

fn descending_order(x: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..x.len() as u32).collect();
    idx.sort_by(|&a, &b| x[b as usize].total_cmp(&x[a as usize]).then(a.cmp(&b)));
    idx
}

/// Calls `visit(flat_index, energy)` for every configuration with
/// `energy >= level`. `perturbed = false` ignores the perturbation field.
pub fn for_each_above(
    r: &DisorderRealization,
    order: &ScanOrder,
    perturbed: bool,
    level: f64,
    mut visit: impl FnMut(u64, f64),
) {
    let half = r.params().half();
    let x1 = r.block1();
    let x2 = r.block2();
    let sd = if perturbed { r.perturbation_sd() } else { 0.0 };
    let max_pert = sd * MAX_COUNTER_GAUSSIAN;
    let best_col = x2[order.cols[0] as usize];
    let stream = r.perturbation_stream();

    for &i in &order.rows {
        let base = x1[i as usize];
        if base + best_col + max_pert < level {
            break;
        }
        let row = u64::from(i) << half;
        if sd == 0.0 {
            for &j in &order.cols {
                let e = base + x2[j as usize];
                if e < level {
                    break;
                }
                visit(row | u64::from(j), e);
            }
            continue;
        }
        for chunk in order.cols.chunks(CHUNK) {
            let t = level - base - x2[chunk[0] as usize];
            if t > max_pert {
                break;
            }
            let z = t / sd - Z_SLACK;
            let threshold = if z < -MAX_COUNTER_GAUSSIAN {
                0
            } else {
                bits_threshold(z)
            };
            for &j in chunk {
                let idx = row | u64::from(j);
                let bits = stream.bits53(idx);
                if bits < threshold {
                    continue;
                }
                let e = base + x2[j as usize] + sd * gaussian_from_bits(bits);
                if e >= level {
                    visit(idx, e);
                }
            }
        }
    }
}

/// Energy of some configuration, used as a lower bound on the maximum.
pub fn reference_energy(r: &DisorderRealization, order: &ScanOrder, perturbed: bool) -> f64 {
    let half = r.params().half();
    let i = order.rows[0];
    let j = order.cols[0];
    r.energy_at((u64::from(i) << half) | u64::from(j), perturbed)
}
