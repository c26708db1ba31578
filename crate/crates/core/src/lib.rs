pub mod correlation;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod prior;
pub mod quadrature;
pub mod reproduce;
pub mod selection;
