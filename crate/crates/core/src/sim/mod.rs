//! Monte-Carlo generator of synthetic SNSPD time-tag streams.

mod pulse;
mod source;
mod stream;

pub use pulse::{edge_delay_table, edge_delays, PulseModelParams};
pub use source::{read_truth_csv, sample_source, write_truth_csv, SourceKind, SourceSpec, TruthRecord};
pub use stream::{
    default_params, simulate, simulate_stream, JitterParams, Simulation, SimulationConfig, DEFAULT_TRIGGER_LEAD_PS,
};
