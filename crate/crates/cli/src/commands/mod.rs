pub mod episodes;
pub mod evaluate;
pub mod export;
pub mod scenario;
pub mod stream;
pub mod train;
