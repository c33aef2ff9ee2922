//! Built-in benchmark scenes.

mod ball;
mod block_slide;
mod order;
mod pinch;

pub use ball::*;
pub use block_slide::*;
pub use order::*;
pub use pinch::*;
