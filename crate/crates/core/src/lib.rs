#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod baseline;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kernels;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod postprocess;
pub mod sampler;

pub use error::{Result, VmemError};
