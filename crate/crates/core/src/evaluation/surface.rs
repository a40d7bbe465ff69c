use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::networks::allocator_eta;
use crate::scalar::Scalar;
use crate::tensor::{ParameterSet, Tensor};
use crate::training::Method;

/// Inclusive grid bounds for the classification and domain losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceBounds {
    pub loss_c: (f64, f64),
    pub loss_d: (f64, f64),
}

impl SurfaceBounds {
    /// `[0, max l_c] × [0, max l_d]`.
    pub fn from_observed(max_loss_c: f64, max_loss_d: f64) -> Self {
        Self {
            loss_c: (0.0, max_loss_c),
            loss_d: (0.0, max_loss_d),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub l_c: f64,
    pub l_d: f64,
    pub eta: f64,
}

/// Allocator output over a `resolution × resolution` loss grid, before
/// normalization. Rows run over `l_c` in the outer loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSurfaceGrid {
    pub bounds: SurfaceBounds,
    pub resolution: usize,
    pub points: Vec<SurfacePoint>,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Allocator input row for a loss pair under `method`'s input columns.
pub fn allocator_row(method: Method, l_c: f64, l_d: f64) -> Vec<f64> {
    match method {
        Method::SwlD => vec![l_d],
        Method::SwlC => vec![l_c],
        _ => vec![l_c, l_d],
    }
}

/// Evaluates the allocator on every grid point in one batched forward.
pub fn export_weight_surface<T: Scalar>(
    theta_w: &ParameterSet<T>,
    method: Method,
    bounds: SurfaceBounds,
    resolution: usize,
) -> Result<WeightSurfaceGrid> {
    if resolution == 0 {
        return Err(EvalError::InvalidResolution(resolution));
    }
    let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
    if !ordered(bounds.loss_c) || !ordered(bounds.loss_d) {
        return Err(EvalError::InvalidBounds(format!("{bounds:?}")));
    }
    let cs = axis(bounds.loss_c.0, bounds.loss_c.1, resolution);
    let ds = axis(bounds.loss_d.0, bounds.loss_d.1, resolution);
    let pairs: Vec<(f64, f64)> = cs.iter().flat_map(|&c| ds.iter().map(move |&d| (c, d))).collect();
    let width = method.allocator_inputs();
    let data: Vec<T> = pairs
        .iter()
        .flat_map(|&(c, d)| allocator_row(method, c, d))
        .map(T::lit)
        .collect();
    let eta = allocator_eta(theta_w, &Tensor::new(vec![pairs.len(), width], data)?)?;
    let points = pairs
        .iter()
        .zip(eta.data())
        .map(|(&(l_c, l_d), e)| SurfacePoint {
            l_c,
            l_d,
            eta: e.to_f64_lossy(),
        })
        .collect();
    Ok(WeightSurfaceGrid {
        bounds,
        resolution,
        points,
    })
}

impl WeightSurfaceGrid {
    /// CSV with header `l_c,l_d,eta`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["l_c", "l_d", "eta"])?;
        for p in &self.points {
            w.write_record([p.l_c.to_string(), p.l_d.to_string(), p.eta.to_string()])?;
        }
        w.flush().map_err(|e| EvalError::Io(e.to_string()))?;
        Ok(())
    }
}
