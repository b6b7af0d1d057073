//! Selective state-space machinery: ZOH discretization, scan strategies and
//! the bidirectional Mamba block.

mod bimamba;
mod conv;
mod discretize;
mod scan;

pub use bimamba::{init_a_log, BiMambaParams, BlockConfig, SharedTransitions, SsmParams};
pub use conv::{causal_conv, causal_depthwise_conv};
pub use discretize::{discretize, zoh};
pub use scan::{
    combine, global_kernel, scan_backward, scan_kernel, scan_macs, scan_parallel, scan_recurrent,
    selective_scan, ScanGrads, ScanInputs, ScanMode, ScanOutput,
};
