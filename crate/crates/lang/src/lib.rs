pub mod ast;
pub mod compile;
pub mod corpus;
pub mod cosim;
pub mod ddg;
pub mod error;
pub mod host;
pub mod interp;
pub mod lexer;
pub mod lower;
pub mod parser;
pub mod print;
pub mod prune;
pub mod sema;
pub mod slice;
pub mod window;

pub use compile::{compile, Checked, Compiled, Emit};
pub use error::{Diagnostic, DiagnosticKind, ExecError};
pub use window::{Decision, PrefetchWindow};
