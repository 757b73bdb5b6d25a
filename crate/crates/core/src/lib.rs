pub mod adjoint;
pub mod contact;
pub mod error;
pub mod fem;
pub mod forward;
pub mod io;
pub mod jet;
pub mod materials;
pub mod mesh;
pub mod fd;
pub mod objectives;
pub mod optimize;
pub mod presets;
pub mod scene;
pub mod sparse;

pub use error::{Error, Result};
