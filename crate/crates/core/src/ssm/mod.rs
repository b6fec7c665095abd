//! Selective state-space blocks.
//!
//! - [`scan`]: discretisation plus the sequential and chunked-parallel scans
//! - [`fused`]: the batched, differentiable scan used inside the model
//! - [`block`]: the gated selective-SSM block and its norm/residual/FFN wrapper

pub mod block;
pub mod fused;
pub mod scan;

pub use block::{DropoutCtx, Ffn, MambaBlock, McstBlock};
pub use scan::{
    discretize, selective_scan_parallel, selective_scan_parallel_counted, selective_scan_sequential,
    selective_scan_sequential_counted, ScanElement, ScanInstance, ScanStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation order for the recurrence inside the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel {
        chunk: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectiveSSMConfig {
    /// Block input/output width.
    pub d_model: usize,
    pub expand: usize,
    /// State size per inner channel.
    pub state_dim: usize,
    /// Width of the step-size bottleneck.
    pub dt_rank: usize,
    pub conv_kernel: usize,
    /// Hidden width of the feed-forward sublayer.
    pub d_ff: usize,
}

impl SelectiveSSMConfig {
    /// Block of width `d_model` with the default ratios: `expand = 2`,
    /// `dt_rank = ceil(d_model / 16)`, `conv_kernel = 4`, `d_ff = 2 d_model`.
    pub fn with_width(d_model: usize, state_dim: usize) -> Self {
        SelectiveSSMConfig {
            d_model,
            expand: 2,
            state_dim,
            dt_rank: d_model.div_ceil(16),
            conv_kernel: 4,
            d_ff: 2 * d_model,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.d_model, "d_model"),
            (self.expand, "expand"),
            (self.state_dim, "state_dim"),
            (self.dt_rank, "dt_rank"),
            (self.conv_kernel, "conv_kernel"),
            (self.d_ff, "d_ff"),
        ];
        for (v, name) in checks {
            if v == 0 {
                return Err(Error::Config(format!("ssm.{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

impl Default for SelectiveSSMConfig {
    fn default() -> Self {
        Self::with_width(96, 32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths() {
        let c = SelectiveSSMConfig::default();
        assert_eq!(c.d_inner(), 192);
        assert_eq!(c.dt_rank, 6);
        assert_eq!(c.state_dim, 32);
        assert_eq!(c.d_ff, 192);
    }
}
