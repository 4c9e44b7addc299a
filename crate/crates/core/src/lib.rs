pub mod client;
pub mod crypto;
pub mod enclave;
pub mod protocol;
pub mod harness;
pub mod simnet;
