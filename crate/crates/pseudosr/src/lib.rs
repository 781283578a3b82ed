pub mod cli;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod networks;
pub mod training;
