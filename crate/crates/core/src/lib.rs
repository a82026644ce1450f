pub mod audit;
pub mod cli;
pub mod counter_model;
pub mod microbench;
pub mod report;
pub mod run;
pub mod stat;
pub mod topdown;
