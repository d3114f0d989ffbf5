pub mod quad;
pub mod signal;
pub mod sweep;
pub mod verify;
