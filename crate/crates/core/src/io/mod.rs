//! Matrix input and factor persistence.

pub mod container;
pub mod matrix_market;

pub use container::{
    load_approximant, load_container, load_state, save_approximant, save_state, ContainerKind,
    Contents, Manifest, FORMAT_VERSION,
};
pub use matrix_market::{
    format_matrix_market, parse_matrix_market, read_matrix_market, write_matrix_market,
    MatrixMarketError,
};
