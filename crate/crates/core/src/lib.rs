pub mod basis;
pub mod fit;
pub mod io;
pub mod formula;
pub mod frame;
pub mod ped;
pub mod predict;
pub mod simulate;
