pub use radx_core;
