pub mod clustering;
pub mod detection;
pub mod gridmodel;
pub mod matcore;
pub mod simkit;
pub mod textio;
