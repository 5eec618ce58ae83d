pub mod assemble;
pub mod equilibrium;
pub mod error;
pub mod fleet;
pub mod oracle;
pub mod par;
pub mod power;
pub mod program;
pub mod results;
pub mod scenario;
pub mod solve;
pub mod sweep;
pub mod traffic;
