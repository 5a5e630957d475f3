//! Activation dumps, their metadata sidecars, and the sliding window that
//! turns a token stream into window matrices.

mod dump;
mod meta;
mod window;

pub use dump::{
    read_stream, write_stream, ActivationFrame, ScalarWidth, StreamHeader, StreamReader,
    StreamWriter, MAGIC, MAX_FRAME_WIDTH, VERSION,
};
pub use meta::{
    load_sidecar, meta_path_for, parse_meta_lines, read_meta_lines, stem_of, write_meta_lines,
    Label, StreamMeta, DUMP_SUFFIX, META_SUFFIX,
};
pub use window::WindowBuffer;
