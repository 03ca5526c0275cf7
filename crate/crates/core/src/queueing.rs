//! Task, resource and deficit queues and their one-slot recursions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// Task backlog per queue.
    pub q: Vec<f64>,
    /// Resource stock per type.
    pub h: Vec<f64>,
    /// Reward deficit per queue.
    pub d: Vec<f64>,
}

/// Everything that enters one queue update.
#[derive(Clone, Copy, Debug)]
pub struct SlotInput<'a> {
    pub service: &'a [f64],
    pub admitted: &'a [f64],
    pub allocation: &'a Allocation,
    pub resource_admitted: &'a [f64],
    pub reward: &'a [f64],
    pub gamma: &'a [f64],
}

impl QueueState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            q: vec![0.0; n],
            h: vec![0.0; m],
            d: vec![0.0; n],
        }
    }

    /// Applies
    /// `Q ← max(Q − μ, 0) + R`, `H ← H − Σ_n b_mn + h`, `d ← max(d − κ, 0) + γ`.
    ///
    /// A resource row that spends more than the stock is an error; the stock
    /// is never clipped.
    pub fn step(&self, input: SlotInput<'_>) -> Result<Self> {
        let b = input.allocation;
        for (m, &stock) in self.h.iter().enumerate() {
            let requested = b.row_sum(m);
            if requested > stock + TOL {
                return Err(Error::Underflow {
                    resource: m,
                    requested,
                    available: stock,
                });
            }
        }
        let q = self
            .q
            .iter()
            .zip(input.service)
            .zip(input.admitted)
            .map(|((q, mu), r)| (q - mu).max(0.0) + r)
            .collect();
        let h = self
            .h
            .iter()
            .enumerate()
            .map(|(m, h)| h - b.row_sum(m) + input.resource_admitted[m])
            .collect();
        let d = self
            .d
            .iter()
            .zip(input.reward)
            .zip(input.gamma)
            .map(|((d, k), g)| (d - k).max(0.0) + g)
            .collect();
        Ok(Self { q, h, d })
    }
}
