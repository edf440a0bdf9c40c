//! Frame and sequence data model with PNG and raw-float I/O.

mod frame;
mod io;
pub mod raw;

pub use frame::{sequence_mean, to_luma, ColorMode, Frame, Plane, VideoSequence, LUMA_WEIGHTS};
pub use io::{frame_file_name, list_frame_files, load_frame, load_sequence, save_frame, save_sequence};
pub use raw::{read_raw, write_raw};
