//! Lowering of sparsified layers onto the PIM array: placement, routing,
//! tiling, packing, instruction emission and the on-disk container.

pub mod container;
pub mod im2col;
pub mod isa;
pub mod pack;
pub mod placement;
pub mod tiling;

pub use container::{read_layer, write_layer};
pub use isa::{Instruction, LayerKind};
pub use pack::{compile_layer, CompiledLayer};
