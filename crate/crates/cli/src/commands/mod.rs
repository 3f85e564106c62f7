pub mod eval;
pub mod gen_graphs;
pub mod train;
