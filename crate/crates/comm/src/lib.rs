//! Message passing for the all-reduce runtime: wire framing, in-process and
//! TCP transports, control collectives, the schedule-driven engine and the
//! arrival monitor.

pub mod comm;
pub mod engine;
pub mod error;
pub mod frame;
pub mod inproc;
pub mod monitor;
pub mod tcp;
pub mod transport;

pub use comm::{barrier_rounds, CommConfig, Communicator};
pub use engine::{calibrate_tau, check_correctness, compare, AllreduceContext, AllreduceOutcome, CorrectnessReport};
pub use error::{CommError, Result};
pub use frame::{Frame, MsgType, PhaseTag};
pub use inproc::{inproc_group, InProcConfig, InProcTransport};
pub use monitor::{AccuracySample, Monitor, MonitorConfig, PapEstimate, ProgressState};
pub use tcp::{Roster, TcpConfig, TcpTransport};
pub use transport::{MatchKey, SendTicket, Transport};
