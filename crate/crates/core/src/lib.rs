pub mod acceptance;
pub mod evolution;
pub mod functionals;
pub mod ground_state;
pub mod io;
pub mod kernel;
pub mod oracle;
mod shape;
pub mod snapshot;
pub mod spectral;
pub mod threshold;
pub mod virial;
