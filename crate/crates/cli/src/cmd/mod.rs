pub mod evaluate;
pub mod report;
pub mod simulate;
pub mod split;
pub mod synth;
pub mod threshold;
pub mod train;
