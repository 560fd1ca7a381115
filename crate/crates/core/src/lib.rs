pub mod basis;
pub mod estimation;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod par;
pub mod policy;
pub mod projection;
pub mod resolve;
pub mod simplex;
