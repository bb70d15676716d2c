//! Helpers shared by the integration tests.
#![allow(dead_code)]

use timegci::data::{generate_sines, Dataset, SinesConfig, Trajectory, BOUNDARY_EPS};
use timegci::nd::check::{numeric_gradient, relative_error};
use timegci::nd::{Module, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn flat<M: Module>(m: &M) -> Vec<f64> {
    m.params().iter().flat_map(|p| p.data().iter().copied()).collect()
}

pub fn set_flat<M: Module>(m: &mut M, v: &[f64]) {
    let mut off = 0;
    for p in m.params_mut() {
        let n = p.len();
        p.data_mut().copy_from_slice(&v[off..off + n]);
        off += n;
    }
}

/// Relative error between tape gradients and central differences of the
/// scalar built by `loss` over every parameter of `net`. `loss` receives the
/// network to bind and returns the loss node and the bound parameter handles
/// in `Module::params` order.
pub fn module_grad_error<M: Module + Clone>(net: &M, loss: impl Fn(&M, &mut Tape) -> (Var, Vec<Var>)) -> f64 {
    let mut tape = Tape::new();
    let (l, vars) = loss(net, &mut tape);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.wrt(v).into_data()).collect();
    let x0 = flat(net);
    let numeric = numeric_gradient(
        |x| {
            let mut probe = net.clone();
            set_flat(&mut probe, x);
            let mut t = Tape::new();
            let (l, _) = loss(&probe, &mut t);
            t.value(l).item()
        },
        &x0,
        FD_STEP,
    );
    relative_error(&analytic, &numeric)
}

/// Small normalized Sines sample, clipped away from the boundary.
pub fn sines(n: usize, horizon: usize, dim: usize, seed: u64) -> Dataset {
    let ds = generate_sines(&SinesConfig { n, horizon, dim, ..Default::default() }, seed).unwrap();
    ds.map(|t| Ok(t.clipped(BOUNDARY_EPS))).unwrap()
}

pub fn refs(ds: &[Trajectory]) -> Vec<&Trajectory> {
    ds.iter().collect()
}

pub fn tensor(rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
    Tensor::from_vec(vec![rows, cols], values).unwrap()
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_p(stat: f64, dof: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof).unwrap().sf(stat)
}
