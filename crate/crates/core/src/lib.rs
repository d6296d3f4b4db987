pub mod canon;
pub mod graph;
pub mod ident;
pub mod lexer;
pub mod scan;
pub mod build;
pub mod backend;
pub mod trace;
pub mod search;
pub mod sim;
pub mod dataset;
pub mod eval;
