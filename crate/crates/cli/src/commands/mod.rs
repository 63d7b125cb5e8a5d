pub mod cls;
pub mod dx;
pub mod flow;
pub mod simulate;
