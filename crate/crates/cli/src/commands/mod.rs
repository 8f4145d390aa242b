pub mod entropy;
pub mod generate;
pub mod train;
pub mod verify;
