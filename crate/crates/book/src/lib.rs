// mdbook cannot run Rust snippets against an external crate, so each chapter
// is included here as the docs of an empty module and `cargo test` runs the
// snippets as doctests. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/volumes.md")]
pub mod volumes {}
#[doc = include_str!("../../../book/src/transfer-functions.md")]
pub mod transfer_functions {}
#[doc = include_str!("../../../book/src/rendering.md")]
pub mod rendering {}
#[doc = include_str!("../../../book/src/metric.md")]
pub mod metric {}
#[doc = include_str!("../../../book/src/search.md")]
pub mod search {}
#[doc = include_str!("../../../book/src/labeling.md")]
pub mod labeling {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
