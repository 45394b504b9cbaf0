pub mod attack;
pub mod eval_genome;
pub mod evolve;
pub mod gen_traces;
pub mod grid_search;
pub mod report;
